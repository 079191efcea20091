#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mapre/tensor.hpp"
#include "mapre/tokens.hpp"

namespace mapre {

struct LossBreakdown {
    double l_ccr = 0;
    double l_crr = 0;
    double l_mlm = 0;
    double total = 0;  // always l_ccr + l_crr + l_mlm in that order
};

// Contrastive context representation loss. For anchor u_A^i the candidates
// are every u_B^j plus u_A^j for j != i, with u_B^i the positive; anchors on
// the B side are scored symmetrically. The mean is taken over all 2N
// anchors, with log-sum-exp stabilization inside the cross-entropy.
inline Tensor ccr_loss(Tape& tape, const std::vector<Tensor>& u_a, const std::vector<Tensor>& u_b,
                       double temperature) {
    const std::size_t n = u_a.size();
    if (n < 2) throw std::runtime_error("ccr_loss: need at least 2 pairs, no negatives exist otherwise");
    if (u_b.size() != n) throw std::runtime_error("ccr_loss: side A and side B sizes differ");
    if (!(temperature > 0)) throw std::runtime_error("ccr_loss: temperature must be positive");
    const std::size_t width = u_a[0].size();
    for (const Tensor& t : u_a)
        if (t.size() != width) throw std::runtime_error("ccr_loss: inconsistent vector widths");
    for (const Tensor& t : u_b)
        if (t.size() != width) throw std::runtime_error("ccr_loss: inconsistent vector widths");

    std::vector<Tensor> anchor_losses;
    anchor_losses.reserve(2 * n);
    auto anchor_side = [&](const std::vector<Tensor>& anchors, const std::vector<Tensor>& opposite) {
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<Tensor> scores;
            scores.reserve(2 * n - 1);
            for (std::size_t j = 0; j < n; ++j) scores.push_back(tape.dot(anchors[i], opposite[j]));
            for (std::size_t j = 0; j < n; ++j) {
                if (j != i) scores.push_back(tape.dot(anchors[i], anchors[j]));
            }
            Tensor logits = tape.scale(tape.concat(scores), 1.0 / temperature);
            anchor_losses.push_back(tape.cross_entropy(logits, i));
        }
    };
    anchor_side(u_a, u_b);
    anchor_side(u_b, u_a);
    return tape.mean_axis0(tape.concat(anchor_losses));
}

// Contrastive relation representation loss over the 2N label-aware vectors
// and the N in-batch relation vectors: mean over sentences of
// -log softmax(w_i . v_j / tau) at j = pair_index[i].
inline Tensor crr_loss(Tape& tape, const std::vector<Tensor>& w, const std::vector<Tensor>& v,
                       const std::vector<std::size_t>& pair_index, double temperature) {
    if (w.empty() || v.empty()) throw std::runtime_error("crr_loss: empty inputs");
    if (pair_index.size() != w.size()) throw std::runtime_error("crr_loss: pair_index size mismatch");
    if (!(temperature > 0)) throw std::runtime_error("crr_loss: temperature must be positive");
    for (std::size_t idx : pair_index) {
        if (idx >= v.size()) {
            throw std::runtime_error("crr_loss: pair index " + std::to_string(idx) + " out of range");
        }
    }
    std::vector<Tensor> sentence_losses;
    sentence_losses.reserve(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        std::vector<Tensor> scores;
        scores.reserve(v.size());
        for (const Tensor& rel : v) scores.push_back(tape.dot(w[i], rel));
        Tensor logits = tape.scale(tape.concat(scores), 1.0 / temperature);
        sentence_losses.push_back(tape.cross_entropy(logits, pair_index[i]));
    }
    return tape.mean_axis0(tape.concat(sentence_losses));
}

// Masked-token prediction with weights tied to the token embedding table:
// logits = hidden[target] . E^T, mean cross-entropy over targets.
inline Tensor mlm_loss(Tape& tape, const Tensor& hidden, const std::vector<MlmTarget>& targets,
                       const Tensor& embedding_table) {
    if (targets.empty()) return Tensor::scalar(0.0);
    std::vector<std::size_t> positions;
    std::vector<std::size_t> originals;
    positions.reserve(targets.size());
    originals.reserve(targets.size());
    for (const MlmTarget& t : targets) {
        if (t.position >= hidden.rows()) {
            throw std::runtime_error("mlm_loss: target position " + std::to_string(t.position) + " out of range");
        }
        if (t.original_id >= embedding_table.rows()) {
            throw std::runtime_error("mlm_loss: target id " + std::to_string(t.original_id) + " out of range");
        }
        positions.push_back(t.position);
        originals.push_back(t.original_id);
    }
    Tensor logits = tape.matmul(tape.gather_rows(hidden, positions), tape.transpose(embedding_table));
    return tape.cross_entropy(logits, originals);
}

struct TotalLoss {
    Tensor total;
    LossBreakdown breakdown;
};

// Unweighted sum of the three pretraining terms.
inline TotalLoss total_loss(Tape& tape, const Tensor& ccr, const Tensor& crr, const Tensor& mlm) {
    LossBreakdown breakdown;
    breakdown.l_ccr = ccr.item();
    breakdown.l_crr = crr.item();
    breakdown.l_mlm = mlm.item();
    if (!std::isfinite(breakdown.l_ccr)) throw std::runtime_error("total_loss: non-finite l_ccr");
    if (!std::isfinite(breakdown.l_crr)) throw std::runtime_error("total_loss: non-finite l_crr");
    if (!std::isfinite(breakdown.l_mlm)) throw std::runtime_error("total_loss: non-finite l_mlm");
    breakdown.total = breakdown.l_ccr + breakdown.l_crr + breakdown.l_mlm;
    return {tape.add(tape.add(ccr, crr), mlm), breakdown};
}

}  // namespace mapre
