#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

namespace mapre {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty means "no gradient assigned"
    bool requires_grad = false;
    std::string name;
};

// Value handle to a shared node. Copies alias the same storage; forward
// results are treated as immutable once created, parameters are mutated
// only by the optimizer.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape) {
        return from(std::move(shape), {});
    }

    static Tensor full(Shape shape, double value) {
        auto node = std::make_shared<TensorNode>();
        node->data.assign(shape_numel(shape), value);
        node->shape = std::move(shape);
        return Tensor(std::move(node));
    }

    static Tensor from(Shape shape, std::vector<double> data) {
        auto node = std::make_shared<TensorNode>();
        if (data.empty()) data.assign(shape_numel(shape), 0.0);
        if (shape_numel(shape) != data.size()) {
            throw std::invalid_argument("tensor: shape " + shape_str(shape) +
                                        " does not match data length " + std::to_string(data.size()));
        }
        for (std::size_t d : shape) {
            if (d == 0) throw std::invalid_argument("tensor: zero dimension in shape " + shape_str(shape));
        }
        node->shape = std::move(shape);
        node->data = std::move(data);
        return Tensor(std::move(node));
    }

    static Tensor scalar(double value) { return from({1}, {value}); }

    static Tensor param(std::string name, Shape shape, std::vector<double> data) {
        Tensor t = from(std::move(shape), std::move(data));
        t.node_->requires_grad = true;
        t.node_->name = std::move(name);
        return t;
    }

    bool defined() const { return static_cast<bool>(node_); }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->data.size(); }

    std::size_t rows() const {
        require_rank(2, "rows");
        return node_->shape[0];
    }
    std::size_t cols() const {
        require_rank(2, "cols");
        return node_->shape[1];
    }

    // Tensor is a shared handle: constness of the handle does not protect
    // the underlying storage, mirroring the usual tensor-handle semantics.
    std::vector<double>& data() const { return node_->data; }

    double item() const {
        if (size() != 1) throw std::runtime_error("item: tensor is not scalar, shape " + shape_str(shape()));
        return node_->data[0];
    }

    double& at(std::size_t i) const { return node_->data.at(i); }
    double& at(std::size_t r, std::size_t c) const { return node_->data.at(r * cols() + c); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) const { node_->requires_grad = v; }

    const std::string& name() const { return node_->name; }
    void set_name(std::string name) const { node_->name = std::move(name); }

    bool has_grad() const { return !node_->grad.empty(); }

    std::vector<double>& grad() const {
        if (node_->grad.empty()) throw std::runtime_error("grad: no gradient assigned to " + debug_name());
        return node_->grad;
    }

    std::vector<double>& ensure_grad() const {
        if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
        return node_->grad;
    }

    void clear_grad() const { node_->grad.clear(); }

    TensorNode* node() const { return node_.get(); }

    std::string debug_name() const {
        return node_->name.empty() ? ("tensor" + shape_str(node_->shape)) : node_->name;
    }

private:
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

    void require_rank(std::size_t r, const char* what) const {
        if (node_->shape.size() != r) {
            throw std::runtime_error(std::string(what) + ": expected rank " + std::to_string(r) +
                                     ", got shape " + shape_str(node_->shape));
        }
    }

    std::shared_ptr<TensorNode> node_;
};

struct NamedParam {
    std::string name;
    Tensor tensor;
    bool no_decay = false;
};

inline Tensor random_normal(Shape shape, std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = dist(rng);
    return Tensor::from(std::move(shape), std::move(data));
}

// Define-by-run tape. Every primitive records its operands, output, and a
// backward rule; entries are appended in execution order, so reverse
// iteration is a valid topological order of the DAG.
class Tape {
public:
    Tensor matmul(const Tensor& a, const Tensor& b) {
        auto [ar, ac] = as_matrix(a, "matmul lhs");
        auto [br, bc] = as_matrix(b, "matmul rhs");
        if (ac != br) {
            throw std::runtime_error("matmul: inner dimensions differ, " + shape_str(a.shape()) +
                                     " x " + shape_str(b.shape()));
        }
        Shape out_shape;
        if (a.rank() == 2) out_shape.push_back(ar);
        if (b.rank() == 2) out_shape.push_back(bc);
        if (out_shape.empty()) out_shape.push_back(1);  // 1D x 1D not reachable via as_matrix rules
        Tensor out = Tensor::zeros(out_shape);
        const auto& A = a.data();
        const auto& B = b.data();
        auto& C = out.data();
        for (std::size_t i = 0; i < ar; ++i) {
            for (std::size_t k = 0; k < ac; ++k) {
                const double aik = A[i * ac + k];
                if (aik == 0.0) continue;
                const std::size_t boff = k * bc;
                const std::size_t coff = i * bc;
                for (std::size_t j = 0; j < bc; ++j) C[coff + j] += aik * B[boff + j];
            }
        }
        return record("matmul", {a, b}, out, [a, b, out, ar, ac, bc]() mutable {
            const auto& G = out.grad();
            if (a.requires_grad()) {
                auto& dA = a.ensure_grad();
                const auto& B = b.data();
                for (std::size_t i = 0; i < ar; ++i)
                    for (std::size_t j = 0; j < bc; ++j) {
                        const double g = G[i * bc + j];
                        if (g == 0.0) continue;
                        for (std::size_t k = 0; k < ac; ++k) dA[i * ac + k] += g * B[k * bc + j];
                    }
            }
            if (b.requires_grad()) {
                auto& dB = b.ensure_grad();
                const auto& A = a.data();
                for (std::size_t i = 0; i < ar; ++i)
                    for (std::size_t k = 0; k < ac; ++k) {
                        const double aik = A[i * ac + k];
                        if (aik == 0.0) continue;
                        for (std::size_t j = 0; j < bc; ++j) dB[k * bc + j] += aik * G[i * bc + j];
                    }
            }
        });
    }

    // Elementwise add; a rank-1 rhs broadcasts across the rows of a rank-2 lhs.
    Tensor add(const Tensor& a, const Tensor& b) { return add_sub(a, b, +1.0, "add"); }
    Tensor sub(const Tensor& a, const Tensor& b) { return add_sub(a, b, -1.0, "sub"); }

    Tensor mul(const Tensor& a, const Tensor& b) {
        if (a.shape() != b.shape()) {
            throw std::runtime_error("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
        }
        Tensor out = Tensor::zeros(a.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
        return record("mul", {a, b}, out, [a, b, out]() mutable {
            const auto& G = out.grad();
            if (a.requires_grad()) {
                auto& dA = a.ensure_grad();
                for (std::size_t i = 0; i < G.size(); ++i) dA[i] += G[i] * b.data()[i];
            }
            if (b.requires_grad()) {
                auto& dB = b.ensure_grad();
                for (std::size_t i = 0; i < G.size(); ++i) dB[i] += G[i] * a.data()[i];
            }
        });
    }

    Tensor scale(const Tensor& a, double c) {
        Tensor out = Tensor::zeros(a.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = c * a.data()[i];
        return record("scale", {a}, out, [a, out, c]() mutable {
            if (!a.requires_grad()) return;
            const auto& G = out.grad();
            auto& dA = a.ensure_grad();
            for (std::size_t i = 0; i < G.size(); ++i) dA[i] += c * G[i];
        });
    }

    // Concatenation along the last axis; all parts share the other dimensions.
    Tensor concat(const std::vector<Tensor>& parts) {
        if (parts.empty()) throw std::runtime_error("concat: no inputs");
        const std::size_t rank = parts[0].rank();
        if (rank != 1 && rank != 2) throw std::runtime_error("concat: rank must be 1 or 2");
        std::size_t rows = rank == 2 ? parts[0].rows() : 1;
        std::size_t total_cols = 0;
        for (const Tensor& p : parts) {
            if (p.rank() != rank) throw std::runtime_error("concat: mixed ranks");
            if (rank == 2 && p.rows() != rows) throw std::runtime_error("concat: row count mismatch");
            total_cols += p.shape().back();
        }
        Shape out_shape = rank == 2 ? Shape{rows, total_cols} : Shape{total_cols};
        Tensor out = Tensor::zeros(out_shape);
        std::size_t col_off = 0;
        for (const Tensor& p : parts) {
            const std::size_t pc = p.shape().back();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < pc; ++c)
                    out.data()[r * total_cols + col_off + c] = p.data()[r * pc + c];
            col_off += pc;
        }
        std::vector<Tensor> inputs = parts;
        return record("concat", inputs, out, [inputs, out, rows, total_cols]() mutable {
            const auto& G = out.grad();
            std::size_t col_off = 0;
            for (Tensor& p : inputs) {
                const std::size_t pc = p.shape().back();
                if (p.requires_grad()) {
                    auto& dP = p.ensure_grad();
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < pc; ++c)
                            dP[r * pc + c] += G[r * total_cols + col_off + c];
                }
                col_off += pc;
            }
        });
    }

    Tensor concat(const Tensor& a, const Tensor& b) { return concat(std::vector<Tensor>{a, b}); }

    // Single row of a rank-2 tensor as a rank-1 slice.
    Tensor row(const Tensor& a, std::size_t index) {
        const std::size_t r = a.rows(), c = a.cols();
        if (index >= r) throw std::runtime_error("row: index " + std::to_string(index) + " out of range");
        Tensor out = Tensor::zeros({c});
        std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(index * c), c, out.data().begin());
        return record("row", {a}, out, [a, out, index, c]() mutable {
            if (!a.requires_grad()) return;
            const auto& G = out.grad();
            auto& dA = a.ensure_grad();
            for (std::size_t j = 0; j < c; ++j) dA[index * c + j] += G[j];
        });
    }

    Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& indices) {
        return gather_impl("gather_rows", a, indices);
    }

    // Embedding lookup: same mechanics as gather_rows, duplicated ids
    // accumulate gradient into the shared table row.
    Tensor embedding(const Tensor& table, const std::vector<std::size_t>& ids) {
        return gather_impl("embedding", table, ids);
    }

    Tensor mean_axis0(const Tensor& a) {
        if (a.rank() == 1) {
            const std::size_t n = a.size();
            Tensor out = Tensor::zeros({1});
            double s = 0;
            for (double v : a.data()) s += v;
            out.data()[0] = s / static_cast<double>(n);
            return record("mean_axis0", {a}, out, [a, out, n]() mutable {
                if (!a.requires_grad()) return;
                const double g = out.grad()[0] / static_cast<double>(n);
                auto& dA = a.ensure_grad();
                for (std::size_t i = 0; i < n; ++i) dA[i] += g;
            });
        }
        const std::size_t r = a.rows(), c = a.cols();
        Tensor out = Tensor::zeros({c});
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) out.data()[j] += a.data()[i * c + j];
        for (std::size_t j = 0; j < c; ++j) out.data()[j] /= static_cast<double>(r);
        return record("mean_axis0", {a}, out, [a, out, r, c]() mutable {
            if (!a.requires_grad()) return;
            const auto& G = out.grad();
            auto& dA = a.ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) dA[i * c + j] += G[j] / static_cast<double>(r);
        });
    }

    // Row-wise layer normalization with learnable gain and bias.
    Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
        const std::size_t c = x.shape().back();
        const std::size_t r = x.rank() == 2 ? x.rows() : 1;
        if (gain.shape() != Shape{c} || bias.shape() != Shape{c}) {
            throw std::runtime_error("layer_norm: gain/bias must have shape [" + std::to_string(c) + "]");
        }
        constexpr double eps = 1e-5;
        Tensor out = Tensor::zeros(x.shape());
        // keep per-row mean and inverse stddev for the backward rule
        auto stats = std::make_shared<std::vector<double>>(2 * r);
        for (std::size_t i = 0; i < r; ++i) {
            const double* xr = x.data().data() + i * c;
            double mean = 0;
            for (std::size_t j = 0; j < c; ++j) mean += xr[j];
            mean /= static_cast<double>(c);
            double var = 0;
            for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mean) * (xr[j] - mean);
            var /= static_cast<double>(c);
            const double inv_std = 1.0 / std::sqrt(var + eps);
            (*stats)[2 * i] = mean;
            (*stats)[2 * i + 1] = inv_std;
            for (std::size_t j = 0; j < c; ++j)
                out.data()[i * c + j] = (xr[j] - mean) * inv_std * gain.data()[j] + bias.data()[j];
        }
        return record("layer_norm", {x, gain, bias}, out, [x, gain, bias, out, stats, r, c]() mutable {
            const auto& G = out.grad();
            for (std::size_t i = 0; i < r; ++i) {
                const double mean = (*stats)[2 * i];
                const double inv_std = (*stats)[2 * i + 1];
                const double* xr = x.data().data() + i * c;
                const double* gr = G.data() + i * c;
                if (gain.requires_grad()) {
                    auto& dG = gain.ensure_grad();
                    for (std::size_t j = 0; j < c; ++j) dG[j] += gr[j] * (xr[j] - mean) * inv_std;
                }
                if (bias.requires_grad()) {
                    auto& dB = bias.ensure_grad();
                    for (std::size_t j = 0; j < c; ++j) dB[j] += gr[j];
                }
                if (x.requires_grad()) {
                    auto& dX = x.ensure_grad();
                    // dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
                    double sum_dxhat = 0, sum_dxhat_xhat = 0;
                    for (std::size_t j = 0; j < c; ++j) {
                        const double xhat = (xr[j] - mean) * inv_std;
                        const double dxhat = gr[j] * gain.data()[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                    }
                    const double n = static_cast<double>(c);
                    for (std::size_t j = 0; j < c; ++j) {
                        const double xhat = (xr[j] - mean) * inv_std;
                        const double dxhat = gr[j] * gain.data()[j];
                        dX[i * c + j] += inv_std * (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
                    }
                }
            }
        });
    }

    Tensor gelu(const Tensor& x) {
        Tensor out = Tensor::zeros(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double v = x.data()[i];
            out.data()[i] = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
        }
        return record("gelu", {x}, out, [x, out]() mutable {
            if (!x.requires_grad()) return;
            const auto& G = out.grad();
            auto& dX = x.ensure_grad();
            for (std::size_t i = 0; i < G.size(); ++i) {
                const double v = x.data()[i];
                const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
                const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
                dX[i] += G[i] * (cdf + v * pdf);
            }
        });
    }

    // Softmax over the last axis, max-subtracted per row.
    Tensor softmax(const Tensor& x) {
        const std::size_t c = x.shape().back();
        const std::size_t r = x.rank() == 2 ? x.rows() : 1;
        Tensor out = Tensor::zeros(x.shape());
        for (std::size_t i = 0; i < r; ++i) softmax_row(x.data().data() + i * c, out.data().data() + i * c, c);
        return record("softmax", {x}, out, [x, out, r, c]() mutable {
            if (!x.requires_grad()) return;
            const auto& G = out.grad();
            auto& dX = x.ensure_grad();
            for (std::size_t i = 0; i < r; ++i) {
                const double* y = out.data().data() + i * c;
                const double* g = G.data() + i * c;
                double dot = 0;
                for (std::size_t j = 0; j < c; ++j) dot += g[j] * y[j];
                for (std::size_t j = 0; j < c; ++j) dX[i * c + j] += y[j] * (g[j] - dot);
            }
        });
    }

    Tensor log_softmax(const Tensor& x) {
        const std::size_t c = x.shape().back();
        const std::size_t r = x.rank() == 2 ? x.rows() : 1;
        Tensor out = Tensor::zeros(x.shape());
        for (std::size_t i = 0; i < r; ++i) {
            const double* xr = x.data().data() + i * c;
            const double lse = log_sum_exp(xr, c);
            for (std::size_t j = 0; j < c; ++j) out.data()[i * c + j] = xr[j] - lse;
        }
        return record("log_softmax", {x}, out, [x, out, r, c]() mutable {
            if (!x.requires_grad()) return;
            const auto& G = out.grad();
            auto& dX = x.ensure_grad();
            for (std::size_t i = 0; i < r; ++i) {
                const double* y = out.data().data() + i * c;
                const double* g = G.data() + i * c;
                double gsum = 0;
                for (std::size_t j = 0; j < c; ++j) gsum += g[j];
                for (std::size_t j = 0; j < c; ++j) dX[i * c + j] += g[j] - std::exp(y[j]) * gsum;
            }
        });
    }

    // Mean cross-entropy from raw logits; rank-1 logits take a single target.
    Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& targets) {
        const std::size_t c = logits.shape().back();
        const std::size_t r = logits.rank() == 2 ? logits.rows() : 1;
        if (targets.size() != r) {
            throw std::runtime_error("cross_entropy: expected " + std::to_string(r) + " targets, got " +
                                     std::to_string(targets.size()));
        }
        for (std::size_t t : targets) {
            if (t >= c) throw std::runtime_error("cross_entropy: target " + std::to_string(t) + " out of range");
        }
        Tensor out = Tensor::zeros({1});
        double total = 0;
        for (std::size_t i = 0; i < r; ++i) {
            const double* xr = logits.data().data() + i * c;
            total += log_sum_exp(xr, c) - xr[targets[i]];
        }
        out.data()[0] = total / static_cast<double>(r);
        return record("cross_entropy", {logits}, out, [logits, out, targets, r, c]() mutable {
            if (!logits.requires_grad()) return;
            const double g = out.grad()[0] / static_cast<double>(r);
            auto& dX = logits.ensure_grad();
            std::vector<double> probs(c);
            for (std::size_t i = 0; i < r; ++i) {
                softmax_row(logits.data().data() + i * c, probs.data(), c);
                for (std::size_t j = 0; j < c; ++j) dX[i * c + j] += g * probs[j];
                dX[i * c + targets[i]] -= g;
            }
        });
    }

    Tensor cross_entropy(const Tensor& logits, std::size_t target) {
        return cross_entropy(logits, std::vector<std::size_t>{target});
    }

    Tensor dot(const Tensor& a, const Tensor& b) {
        if (a.rank() != 1 || b.rank() != 1 || a.size() != b.size()) {
            throw std::runtime_error("dot: need equal-length vectors, got " + shape_str(a.shape()) + " and " +
                                     shape_str(b.shape()));
        }
        Tensor out = Tensor::zeros({1});
        double s = 0;
        for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
        out.data()[0] = s;
        return record("dot", {a, b}, out, [a, b, out]() mutable {
            const double g = out.grad()[0];
            if (a.requires_grad()) {
                auto& dA = a.ensure_grad();
                for (std::size_t i = 0; i < dA.size(); ++i) dA[i] += g * b.data()[i];
            }
            if (b.requires_grad()) {
                auto& dB = b.ensure_grad();
                for (std::size_t i = 0; i < dB.size(); ++i) dB[i] += g * a.data()[i];
            }
        });
    }

    Tensor transpose(const Tensor& a) {
        const std::size_t r = a.rows(), c = a.cols();
        Tensor out = Tensor::zeros({c, r});
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) out.data()[j * r + i] = a.data()[i * c + j];
        return record("transpose", {a}, out, [a, out, r, c]() mutable {
            if (!a.requires_grad()) return;
            const auto& G = out.grad();
            auto& dA = a.ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) dA[i * c + j] += G[j * r + i];
        });
    }

    // Reverse replay from a scalar root. Gradients accumulate additively
    // across fan-out; entries whose output never received a gradient are
    // unreachable from the root and are skipped.
    void backward(const Tensor& root) {
        if (!root.defined() || root.size() != 1) {
            throw std::runtime_error("backward: root must be a scalar");
        }
        if (produced_.find(root.node()) == produced_.end()) {
            throw std::runtime_error("backward: root was not produced on this tape");
        }
        root.node()->grad.assign(1, 1.0);
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
            if (it->output.has_grad()) it->backprop();
        }
    }

    std::size_t num_entries() const { return entries_.size(); }

private:
    struct Entry {
        Tensor output;
        std::function<void()> backprop;
    };

    Tensor record(const char* /*op*/, const std::vector<Tensor>& inputs, Tensor out, std::function<void()> fn) {
        bool rg = false;
        for (const Tensor& t : inputs) rg = rg || t.requires_grad();
        out.set_requires_grad(rg);
        produced_.insert(out.node());
        entries_.push_back(Entry{out, std::move(fn)});
        return out;
    }

    Tensor add_sub(const Tensor& a, const Tensor& b, double sign, const char* op) {
        const bool broadcast = a.rank() == 2 && b.rank() == 1 && b.size() == a.cols();
        if (!broadcast && a.shape() != b.shape()) {
            throw std::runtime_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                     shape_str(b.shape()));
        }
        Tensor out = Tensor::zeros(a.shape());
        if (broadcast) {
            const std::size_t r = a.rows(), c = a.cols();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    out.data()[i * c + j] = a.data()[i * c + j] + sign * b.data()[j];
        } else {
            for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] + sign * b.data()[i];
        }
        return record(op, {a, b}, out, [a, b, out, sign, broadcast]() mutable {
            const auto& G = out.grad();
            if (a.requires_grad()) {
                auto& dA = a.ensure_grad();
                for (std::size_t i = 0; i < G.size(); ++i) dA[i] += G[i];
            }
            if (b.requires_grad()) {
                auto& dB = b.ensure_grad();
                if (broadcast) {
                    const std::size_t c = b.size();
                    for (std::size_t i = 0; i < G.size(); ++i) dB[i % c] += sign * G[i];
                } else {
                    for (std::size_t i = 0; i < G.size(); ++i) dB[i] += sign * G[i];
                }
            }
        });
    }

    Tensor gather_impl(const char* op, const Tensor& a, const std::vector<std::size_t>& indices) {
        const std::size_t r = a.rows(), c = a.cols();
        if (indices.empty()) throw std::runtime_error(std::string(op) + ": empty index list");
        for (std::size_t idx : indices) {
            if (idx >= r) throw std::runtime_error(std::string(op) + ": index " + std::to_string(idx) + " out of range");
        }
        Tensor out = Tensor::zeros({indices.size(), c});
        for (std::size_t i = 0; i < indices.size(); ++i)
            std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(indices[i] * c), c,
                        out.data().begin() + static_cast<std::ptrdiff_t>(i * c));
        return record(op, {a}, out, [a, out, indices, c]() mutable {
            if (!a.requires_grad()) return;
            const auto& G = out.grad();
            auto& dA = a.ensure_grad();
            for (std::size_t i = 0; i < indices.size(); ++i)
                for (std::size_t j = 0; j < c; ++j) dA[indices[i] * c + j] += G[i * c + j];
        });
    }

    // logits may be 1D (treated as one row); both helpers subtract the row max
    static double log_sum_exp(const double* x, std::size_t n) {
        double m = x[0];
        for (std::size_t i = 1; i < n; ++i) m = std::max(m, x[i]);
        double s = 0;
        for (std::size_t i = 0; i < n; ++i) s += std::exp(x[i] - m);
        return m + std::log(s);
    }

    static void softmax_row(const double* x, double* y, std::size_t n) {
        double m = x[0];
        for (std::size_t i = 1; i < n; ++i) m = std::max(m, x[i]);
        double s = 0;
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = std::exp(x[i] - m);
            s += y[i];
        }
        for (std::size_t i = 0; i < n; ++i) y[i] /= s;
    }

    // pair (rows, cols) treating rank-1 lhs as a row vector and rank-1 rhs as a column vector
    std::pair<std::size_t, std::size_t> as_matrix(const Tensor& t, const char* what) const {
        if (t.rank() == 2) return {t.rows(), t.cols()};
        if (t.rank() == 1) {
            if (std::string_view(what).find("lhs") != std::string_view::npos) return {1, t.size()};
            return {t.size(), 1};
        }
        throw std::runtime_error(std::string(what) + ": rank must be 1 or 2, got " + shape_str(t.shape()));
    }

    std::vector<Entry> entries_;
    std::unordered_set<const TensorNode*> produced_;
};

}  // namespace mapre
