#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mapre/tensor.hpp"
#include "mapre/tokens.hpp"
#include "mapre/vocab.hpp"

namespace mapre {

struct EncoderConfig {
    std::size_t num_layers = 2;
    std::size_t model_dim = 32;
    std::size_t num_heads = 4;
    std::size_t feedforward_dim = 64;
    std::size_t vocab_size = 0;
    std::size_t max_sequence_length = 40;
    double dropout_rate = 0.1;

    void validate() const {
        if (model_dim == 0 || num_heads == 0 || model_dim % num_heads != 0) {
            throw std::invalid_argument("encoder config: model_dim must be divisible by num_heads");
        }
        if (max_sequence_length < 8) throw std::invalid_argument("encoder config: max_sequence_length must be >= 8");
        if (vocab_size <= kNumReserved) throw std::invalid_argument("encoder config: vocab_size not set");
        if (num_layers == 0) throw std::invalid_argument("encoder config: need at least one layer");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
            throw std::invalid_argument("encoder config: dropout_rate must be in [0,1)");
        }
    }
};

// Active only during training; when null or rate 0, forward is a pure
// function of (parameters, input).
struct DropoutContext {
    std::mt19937_64* rng = nullptr;
    double rate = 0.0;

    bool active() const { return rng != nullptr && rate > 0.0; }
};

namespace detail {

struct AttentionHeadParams {
    // no key bias: a per-row constant shift of the scores that softmax
    // cancels, so it would be dead weight with an exactly zero gradient
    Tensor wq, bq, wk, wv, bv;  // [d, dk], [dk]
};

struct EncoderLayerParams {
    Tensor ln1_gain, ln1_bias;
    std::vector<AttentionHeadParams> heads;
    Tensor wo, bo;  // [d, d], [d]
    Tensor ln2_gain, ln2_bias;
    Tensor w1, b1;  // [d, ff], [ff]
    Tensor w2, b2;  // [ff, d], [d]
};

}  // namespace detail

// Pre-layer-norm transformer encoder over token ids; per-head projection
// matrices stand in for one fused QKV matrix.
class TransformerEncoder {
public:
    TransformerEncoder() = default;

    static TransformerEncoder init(const EncoderConfig& config, const std::string& prefix, std::mt19937_64& rng) {
        config.validate();
        // wide token embeddings keep content from relations outside the
        // training set distinguishable after the trained rows drift
        constexpr double kInitStd = 0.2;
        constexpr double kEmbedStd = 0.4;
        TransformerEncoder enc;
        enc.config_ = config;
        const std::size_t d = config.model_dim;
        const std::size_t dk = d / config.num_heads;
        const std::size_t ff = config.feedforward_dim;

        auto weight = [&](const std::string& name, Shape shape) {
            Tensor t = random_normal(std::move(shape), rng, kInitStd);
            t.set_requires_grad(true);
            t.set_name(prefix + "." + name);
            return t;
        };
        auto constant = [&](const std::string& name, Shape shape, double value) {
            Tensor t = Tensor::full(std::move(shape), value);
            t.set_requires_grad(true);
            t.set_name(prefix + "." + name);
            return t;
        };

        {
            Tensor t = random_normal({config.vocab_size, d}, rng, kEmbedStd);
            t.set_requires_grad(true);
            t.set_name(prefix + ".token_embedding");
            enc.token_embedding_ = t;
        }
        enc.position_embedding_ = weight("position_embedding", {config.max_sequence_length, d});
        for (std::size_t l = 0; l < config.num_layers; ++l) {
            const std::string lp = "layer" + std::to_string(l);
            detail::EncoderLayerParams layer;
            layer.ln1_gain = constant(lp + ".ln1.gain", {d}, 1.0);
            layer.ln1_bias = constant(lp + ".ln1.bias", {d}, 0.0);
            for (std::size_t h = 0; h < config.num_heads; ++h) {
                const std::string hp = lp + ".attn.h" + std::to_string(h);
                detail::AttentionHeadParams head;
                head.wq = weight(hp + ".wq", {d, dk});
                head.bq = constant(hp + ".bq", {dk}, 0.0);
                head.wk = weight(hp + ".wk", {d, dk});
                head.wv = weight(hp + ".wv", {d, dk});
                head.bv = constant(hp + ".bv", {dk}, 0.0);
                layer.heads.push_back(std::move(head));
            }
            layer.wo = weight(lp + ".attn.wo", {d, d});
            layer.bo = constant(lp + ".attn.bo", {d}, 0.0);
            layer.ln2_gain = constant(lp + ".ln2.gain", {d}, 1.0);
            layer.ln2_bias = constant(lp + ".ln2.bias", {d}, 0.0);
            layer.w1 = weight(lp + ".ff.w1", {d, ff});
            layer.b1 = constant(lp + ".ff.b1", {ff}, 0.0);
            layer.w2 = weight(lp + ".ff.w2", {ff, d});
            layer.b2 = constant(lp + ".ff.b2", {d}, 0.0);
            enc.layers_.push_back(std::move(layer));
        }
        enc.final_gain_ = constant("final_ln.gain", {d}, 1.0);
        // the final bias would only shift every pooled dot product by the
        // same constant, which softmax scoring cancels; keep it frozen zero
        enc.final_bias_ = Tensor::full({d}, 0.0);
        return enc;
    }

    // Hidden states, one model_dim vector per input token.
    Tensor forward(Tape& tape, const std::vector<std::size_t>& ids, DropoutContext* dropout = nullptr) const {
        const std::size_t len = ids.size();
        if (len == 0) throw std::runtime_error("encoder: empty input");
        if (len > config_.max_sequence_length) {
            throw std::runtime_error("encoder: sequence length " + std::to_string(len) + " exceeds maximum " +
                                     std::to_string(config_.max_sequence_length));
        }
        for (std::size_t id : ids) {
            if (id >= config_.vocab_size) {
                throw std::runtime_error("encoder: token id " + std::to_string(id) + " outside vocabulary");
            }
        }
        std::vector<std::size_t> positions(len);
        for (std::size_t i = 0; i < len; ++i) positions[i] = i;

        Tensor x = tape.add(tape.embedding(token_embedding_, ids), tape.gather_rows(position_embedding_, positions));
        const double inv_sqrt_dk =
            1.0 / std::sqrt(static_cast<double>(config_.model_dim / config_.num_heads));

        for (const detail::EncoderLayerParams& layer : layers_) {
            Tensor normed = tape.layer_norm(x, layer.ln1_gain, layer.ln1_bias);
            std::vector<Tensor> head_outputs;
            head_outputs.reserve(layer.heads.size());
            for (const detail::AttentionHeadParams& head : layer.heads) {
                Tensor q = tape.add(tape.matmul(normed, head.wq), head.bq);
                Tensor k = tape.matmul(normed, head.wk);
                Tensor v = tape.add(tape.matmul(normed, head.wv), head.bv);
                Tensor scores = tape.scale(tape.matmul(q, tape.transpose(k)), inv_sqrt_dk);
                Tensor attn = tape.softmax(scores);
                head_outputs.push_back(tape.matmul(attn, v));
            }
            Tensor ctx = tape.concat(head_outputs);
            Tensor attn_out = tape.add(tape.matmul(ctx, layer.wo), layer.bo);
            attn_out = apply_dropout(tape, attn_out, dropout);
            x = tape.add(x, attn_out);

            Tensor normed2 = tape.layer_norm(x, layer.ln2_gain, layer.ln2_bias);
            Tensor ff = tape.add(tape.matmul(tape.gelu(tape.add(tape.matmul(normed2, layer.w1), layer.b1)), layer.w2),
                                 layer.b2);
            ff = apply_dropout(tape, ff, dropout);
            x = tape.add(x, ff);
        }
        return tape.layer_norm(x, final_gain_, final_bias_);
    }

    void visit_params(const std::function<void(Tensor&, bool /*no_decay*/)>& fn) {
        fn(token_embedding_, false);
        fn(position_embedding_, false);
        for (detail::EncoderLayerParams& layer : layers_) {
            fn(layer.ln1_gain, true);
            fn(layer.ln1_bias, true);
            for (detail::AttentionHeadParams& head : layer.heads) {
                fn(head.wq, false);
                fn(head.bq, true);
                fn(head.wk, false);
                fn(head.wv, false);
                fn(head.bv, true);
            }
            fn(layer.wo, false);
            fn(layer.bo, true);
            fn(layer.ln2_gain, true);
            fn(layer.ln2_bias, true);
            fn(layer.w1, false);
            fn(layer.b1, true);
            fn(layer.w2, false);
            fn(layer.b2, true);
        }
        fn(final_gain_, true);
    }

    // Deep copy with renamed parameters; both encoders start from identical
    // weights the way two fine-tunes of one pretrained model would.
    TransformerEncoder clone_as(const std::string& prefix) const {
        TransformerEncoder out = *this;
        auto reclone = [&prefix](Tensor& t) {
            std::string name = t.name();
            name = prefix + name.substr(name.find('.'));
            Tensor copy = Tensor::param(std::move(name), t.shape(), t.data());
            t = copy;
        };
        auto visit_all = [&](TransformerEncoder& enc) {
            enc.visit_params([&](Tensor& t, bool) { reclone(t); });
        };
        visit_all(out);
        return out;
    }

    const EncoderConfig& config() const { return config_; }
    const Tensor& token_embedding() const { return token_embedding_; }

private:
    Tensor apply_dropout(Tape& tape, const Tensor& x, DropoutContext* dropout) const {
        if (dropout == nullptr || !dropout->active()) return x;
        std::bernoulli_distribution keep(1.0 - dropout->rate);
        Tensor mask = Tensor::zeros(x.shape());
        const double scale = 1.0 / (1.0 - dropout->rate);
        for (double& m : mask.data()) m = keep(*dropout->rng) ? scale : 0.0;
        return tape.mul(x, mask);
    }

    EncoderConfig config_;
    Tensor token_embedding_;
    Tensor position_embedding_;
    std::vector<detail::EncoderLayerParams> layers_;
    Tensor final_gain_, final_bias_;
};

// u: concatenated hidden states at the two marker positions (width 2d);
// w: hidden state at [CLS] (width d).
struct PooledContext {
    Tensor u;
    Tensor w;
    Tensor hidden;  // [len, d], feeds the MLM head
};

inline PooledContext forward_context(Tape& tape, const TransformerEncoder& encoder, const TokenSequence& seq,
                                     DropoutContext* dropout = nullptr) {
    if (seq.head_marker >= seq.ids.size() || seq.ids[seq.head_marker] != kHeadMarker) {
        throw std::runtime_error("forward_context: head marker position missing");
    }
    if (seq.tail_marker >= seq.ids.size() || seq.ids[seq.tail_marker] != kTailMarker) {
        throw std::runtime_error("forward_context: tail marker position missing");
    }
    PooledContext out;
    out.hidden = encoder.forward(tape, seq.ids, dropout);
    out.u = tape.concat(tape.row(out.hidden, seq.head_marker), tape.row(out.hidden, seq.tail_marker));
    out.w = tape.row(out.hidden, 0);
    return out;
}

// v: relation-encoder hidden state at [CLS] over [CLS] label_tokens [SEP].
inline Tensor forward_relation(Tape& tape, const TransformerEncoder& encoder,
                               const std::vector<std::string>& label_tokens, const Vocabulary& vocab,
                               DropoutContext* dropout = nullptr) {
    if (label_tokens.empty()) throw std::runtime_error("forward_relation: empty relation label");
    std::vector<std::size_t> ids;
    ids.reserve(label_tokens.size() + 2);
    ids.push_back(kCls);
    for (const std::string& t : label_tokens) ids.push_back(vocab.id(t));
    ids.push_back(kSep);
    Tensor hidden = encoder.forward(tape, ids, dropout);
    return tape.row(hidden, 0);
}

}  // namespace mapre
