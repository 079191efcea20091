#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mapre/corpus.hpp"
#include "mapre/vocab.hpp"

namespace mapre {

// Encoder-ready token id sequence: [CLS] ... [SEP] with [head]/[tail]
// markers inserted immediately before the entity spans.
struct TokenSequence {
    std::vector<std::size_t> ids;
    std::pair<std::size_t, std::size_t> head_span;  // inclusive, indices into ids
    std::pair<std::size_t, std::size_t> tail_span;
    std::size_t head_marker = 0;
    std::size_t tail_marker = 0;

    std::size_t length() const { return ids.size(); }
};

// Inserts entity markers, optionally replaces an entity span with a single
// [BLANK], and wraps the sentence with [CLS]/[SEP]. When the result exceeds
// max_len, filler tokens are dropped from the end; entity or marker tokens
// are never dropped.
inline TokenSequence build_token_sequence(const Instance& instance, const Vocabulary& vocab, bool blank_head,
                                          bool blank_tail, std::size_t max_len) {
    instance.validate();

    enum class Role { filler, marker, entity };
    struct Slot {
        std::size_t id;
        Role role;
    };
    std::vector<Slot> middle;
    std::size_t head_marker_mid = 0, tail_marker_mid = 0;
    std::size_t head_start_mid = 0, head_end_mid = 0, tail_start_mid = 0, tail_end_mid = 0;

    auto emit_entity = [&](std::pair<std::size_t, std::size_t> span, bool blank, bool is_head) {
        (is_head ? head_marker_mid : tail_marker_mid) = middle.size();
        middle.push_back({is_head ? kHeadMarker : kTailMarker, Role::marker});
        (is_head ? head_start_mid : tail_start_mid) = middle.size();
        if (blank) {
            middle.push_back({kBlank, Role::entity});
        } else {
            for (std::size_t p = span.first; p <= span.second; ++p) {
                middle.push_back({vocab.id(instance.tokens[p]), Role::entity});
            }
        }
        (is_head ? head_end_mid : tail_end_mid) = middle.size() - 1;
    };

    for (std::size_t p = 0; p < instance.tokens.size(); ++p) {
        if (p == instance.head.first) {
            emit_entity(instance.head, blank_head, true);
            p = instance.head.second;
        } else if (p == instance.tail.first) {
            emit_entity(instance.tail, blank_tail, false);
            p = instance.tail.second;
        } else {
            middle.push_back({vocab.id(instance.tokens[p]), Role::filler});
        }
    }

    if (max_len < 4) throw std::invalid_argument("build_token_sequence: max_len too small");
    while (middle.size() + 2 > max_len) {
        if (middle.back().role != Role::filler) {
            throw std::runtime_error("build_token_sequence: entities cannot fit within max length " +
                                     std::to_string(max_len));
        }
        middle.pop_back();
    }

    TokenSequence seq;
    seq.ids.reserve(middle.size() + 2);
    seq.ids.push_back(kCls);
    for (const Slot& s : middle) seq.ids.push_back(s.id);
    seq.ids.push_back(kSep);

    seq.head_marker = head_marker_mid + 1;
    seq.tail_marker = tail_marker_mid + 1;
    seq.head_span = {head_start_mid + 1, head_end_mid + 1};
    seq.tail_span = {tail_start_mid + 1, tail_end_mid + 1};
    return seq;
}

struct MlmTarget {
    std::size_t position;
    std::size_t original_id;
};

struct MaskedSequence {
    TokenSequence seq;
    std::vector<MlmTarget> targets;
};

// BERT-style masking over non-reserved positions: each eligible token is
// selected with probability mask_rate; of the selected, 80% become [MASK],
// 10% a random non-reserved token, 10% stay unchanged.
inline MaskedSequence apply_mlm_mask(const TokenSequence& input, double mask_rate, std::size_t vocab_size,
                                     std::mt19937_64& rng) {
    if (!(mask_rate >= 0.0 && mask_rate < 1.0)) {
        throw std::invalid_argument("apply_mlm_mask: mask_rate must be in [0,1)");
    }
    if (vocab_size <= kNumReserved) throw std::invalid_argument("apply_mlm_mask: vocabulary has no maskable tokens");

    MaskedSequence out;
    out.seq = input;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> random_token(kNumReserved, vocab_size - 1);
    for (std::size_t p = 0; p < out.seq.ids.size(); ++p) {
        const std::size_t id = out.seq.ids[p];
        if (id < kNumReserved) continue;  // specials, markers, [BLANK]
        if (unit(rng) >= mask_rate) continue;
        out.targets.push_back({p, id});
        const double roll = unit(rng);
        if (roll < 0.8) {
            out.seq.ids[p] = kMask;
        } else if (roll < 0.9) {
            out.seq.ids[p] = random_token(rng);
        }  // else leave unchanged
    }
    return out;
}

}  // namespace mapre
