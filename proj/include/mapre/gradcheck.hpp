#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mapre/tensor.hpp"

namespace mapre {

struct GradCheckEntry {
    std::string param;
    std::size_t index = 0;
    double analytic = 0;
    double numeric = 0;
    double rel_error = 0;
};

struct GradCheckReport {
    double max_rel_error = 0;
    std::size_t coordinates = 0;
    GradCheckEntry worst;
    std::vector<GradCheckEntry> failures;  // entries exceeding the tolerance

    bool passed() const { return failures.empty(); }
};

// Central-difference check of tape gradients. f must be a deterministic
// scalar function of the given parameters, rebuilt on the tape it is handed.
// Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-8).
inline GradCheckReport finite_difference_check(const std::function<Tensor(Tape&)>& f,
                                               std::vector<NamedParam>& params, double h,
                                               double tolerance) {
    if (!(h > 0)) throw std::invalid_argument("finite_difference_check: h must be positive");

    for (NamedParam& p : params) p.tensor.clear_grad();
    std::vector<std::vector<double>> analytic(params.size());
    {
        Tape tape;
        Tensor root = f(tape);
        tape.backward(root);
        for (std::size_t i = 0; i < params.size(); ++i) {
            analytic[i] = params[i].tensor.has_grad() ? params[i].tensor.grad()
                                                      : std::vector<double>(params[i].tensor.size(), 0.0);
        }
        for (NamedParam& p : params) p.tensor.clear_grad();
    }

    auto eval = [&]() {
        Tape tape;
        return f(tape).item();
    };

    GradCheckReport report;
    for (std::size_t i = 0; i < params.size(); ++i) {
        std::vector<double>& w = params[i].tensor.data();
        for (std::size_t k = 0; k < w.size(); ++k) {
            const double saved = w[k];
            w[k] = saved + h;
            const double f_plus = eval();
            w[k] = saved - h;
            const double f_minus = eval();
            w[k] = saved;
            const double numeric = (f_plus - f_minus) / (2.0 * h);
            const double a = analytic[i][k];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            GradCheckEntry entry{params[i].name, k, a, numeric, rel};
            ++report.coordinates;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst = entry;
            }
            if (rel > tolerance) report.failures.push_back(entry);
        }
    }
    return report;
}

}  // namespace mapre
