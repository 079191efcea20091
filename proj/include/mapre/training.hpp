#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mapre/checkpoint.hpp"
#include "mapre/corpus.hpp"
#include "mapre/encoder.hpp"
#include "mapre/model.hpp"
#include "mapre/objectives.hpp"
#include "mapre/optim.hpp"
#include "mapre/sampling.hpp"
#include "mapre/tokens.hpp"

namespace mapre {

class TrainingAbort : public std::runtime_error {
public:
    TrainingAbort(long step, const std::string& message)
        : std::runtime_error("training aborted at step " + std::to_string(step) + ": " + message), step_(step) {}
    long step() const { return step_; }

private:
    long step_;
};

// JSON-lines metrics sink. The header echoes the fully resolved config; rows
// carry step, loss components, accuracy when applicable, and the seed.
// Writes are serialized so parallel evaluators may share one logger.
class MetricsLogger {
public:
    MetricsLogger() = default;

    explicit MetricsLogger(const std::string& path) {
        out_.open(path, std::ios::binary | std::ios::trunc);
        if (!out_) throw std::runtime_error("metrics: cannot open " + path + " for writing");
    }

    void write_header(const json& resolved_config) {
        write(json{{"resolved_config", resolved_config}});
    }

    void write(const json& row) {
        if (!out_.is_open()) return;
        std::lock_guard<std::mutex> lock(mutex_);
        out_ << row.dump() << '\n';
        out_.flush();
    }

private:
    std::ofstream out_;
    std::mutex mutex_;
};

struct PretrainConfig {
    long steps = 500;
    long warmup_steps = 50;
    std::size_t batch_relations = 8;  // N pairs per step
    double learning_rate = 1e-3;
    double weight_decay = 1e-5;
    double grad_clip_norm = 1.0;
    double blank_prob = 0.7;
    double mlm_rate = 0.15;
    double temperature = 1.0;
    std::uint64_t seed = 7;

    void validate() const {
        if (warmup_steps < 0 || steps <= warmup_steps) {
            throw std::invalid_argument("pretrain config: need steps > warmup_steps >= 0");
        }
        if (batch_relations < 2) throw std::invalid_argument("pretrain config: batch_relations must be >= 2");
    }
};

// Reference full-scale regime, recorded for documentation; the desk-scale
// defaults above are scaled down from it keeping warmup at ~10% of steps.
namespace full_scale {
inline constexpr long kSteps = 11000;
inline constexpr long kWarmupSteps = 500;
inline constexpr long kBatchSize = 2040;
inline constexpr long kMaxSequenceLength = 60;
inline constexpr double kLearningRate = 3e-5;
inline constexpr double kWeightDecay = 1e-5;
inline constexpr double kMaxGradNorm = 1.0;
}  // namespace full_scale

namespace detail {

inline const std::vector<std::string>& relation_label(const RelationCatalog& catalog, const std::string& rel) {
    auto it = catalog.find(rel);
    if (it == catalog.end()) throw std::runtime_error("catalog: unknown relation " + rel);
    return it->second.label;
}

}  // namespace detail

// One pretraining step per sampled matching batch: encode the 2N blanked
// sentences and N labels for the contrastive terms, separately mask fresh
// copies of the same sentences for the MLM term, then sum per the combined
// objective. The MLM mean is over all masked targets in the batch.
inline std::vector<LossBreakdown> pretrain(MapREModel& model, const SamplingPool& pool,
                                           const RelationCatalog& catalog, const Vocabulary& vocab,
                                           const PretrainConfig& config, MetricsLogger* logger = nullptr) {
    config.validate();
    std::vector<NamedParam> params = model.parameters();
    AdamWOptions opt_options;
    opt_options.learning_rate = config.learning_rate;
    opt_options.weight_decay = config.weight_decay;
    AdamW optimizer(params, opt_options);

    std::mt19937_64 rng(config.seed);
    DropoutContext dropout{&rng, model.config().dropout_rate};
    const std::size_t max_len = model.config().max_sequence_length;
    std::vector<LossBreakdown> log;
    log.reserve(static_cast<std::size_t>(config.steps));

    for (long step = 0; step < config.steps; ++step) {
        try {
            MatchingBatch batch = pool.sample_matching_batch(config.batch_relations, config.blank_prob, rng);
            Tape tape;

            std::vector<Tensor> u_a, u_b, w_all, v_all;
            std::vector<std::size_t> pair_index;
            for (std::size_t i = 0; i < batch.entries.size(); ++i) {
                const MatchingEntry& entry = batch.entries[i];
                TokenSequence seq_a =
                    build_token_sequence(entry.a, vocab, entry.blank_head_a, entry.blank_tail_a, max_len);
                TokenSequence seq_b =
                    build_token_sequence(entry.b, vocab, entry.blank_head_b, entry.blank_tail_b, max_len);
                PooledContext pooled_a = forward_context(tape, model.context_encoder(), seq_a, &dropout);
                PooledContext pooled_b = forward_context(tape, model.context_encoder(), seq_b, &dropout);
                u_a.push_back(pooled_a.u);
                u_b.push_back(pooled_b.u);
                w_all.push_back(pooled_a.w);
                w_all.push_back(pooled_b.w);
                pair_index.push_back(i);
                pair_index.push_back(i);
                v_all.push_back(forward_relation(tape, model.relation_encoder(),
                                                 detail::relation_label(catalog, entry.relation), vocab,
                                                 &dropout));
            }

            Tensor ccr = ccr_loss(tape, u_a, u_b, config.temperature);
            Tensor crr = crr_loss(tape, w_all, v_all, pair_index, config.temperature);

            // MLM on separately masked, unblanked copies of the same sentences
            Tensor mlm = Tensor::scalar(0.0);
            std::size_t total_targets = 0;
            std::vector<std::pair<Tensor, std::size_t>> mlm_parts;
            for (const MatchingEntry& entry : batch.entries) {
                for (const Instance* inst : {&entry.a, &entry.b}) {
                    TokenSequence plain = build_token_sequence(*inst, vocab, false, false, max_len);
                    MaskedSequence masked = apply_mlm_mask(plain, config.mlm_rate, vocab.size(), rng);
                    if (masked.targets.empty()) continue;
                    Tensor hidden = model.context_encoder().forward(tape, masked.seq.ids, &dropout);
                    mlm_parts.emplace_back(mlm_loss(tape, hidden, masked.targets,
                                                    model.context_encoder().token_embedding()),
                                           masked.targets.size());
                    total_targets += masked.targets.size();
                }
            }
            if (total_targets > 0) {
                Tensor acc;
                for (const auto& [part, count] : mlm_parts) {
                    Tensor weighted =
                        tape.scale(part, static_cast<double>(count) / static_cast<double>(total_targets));
                    acc = acc.defined() ? tape.add(acc, weighted) : weighted;
                }
                mlm = acc;
            }

            TotalLoss loss = total_loss(tape, ccr, crr, mlm);
            tape.backward(loss.total);
            clip_global_norm(params, config.grad_clip_norm);
            optimizer.step(lr_schedule(step, config.warmup_steps, config.learning_rate));
            optimizer.zero_grad();

            log.push_back(loss.breakdown);
            if (logger != nullptr) {
                logger->write(json{{"step", step},
                                   {"l_ccr", loss.breakdown.l_ccr},
                                   {"l_crr", loss.breakdown.l_crr},
                                   {"l_mlm", loss.breakdown.l_mlm},
                                   {"total", loss.breakdown.total},
                                   {"seed", config.seed}});
            }
        } catch (const TrainingAbort&) {
            throw;
        } catch (const std::runtime_error& e) {
            throw TrainingAbort(step, e.what());
        }
    }
    return log;
}

enum class ScoringMode { both, label_agnostic, label_aware };

inline ScoringMode scoring_mode_from_string(const std::string& s) {
    if (s == "both") return ScoringMode::both;
    if (s == "label-agnostic") return ScoringMode::label_agnostic;
    if (s == "label-aware") return ScoringMode::label_aware;
    throw std::invalid_argument("unknown ablation mode: " + s);
}

struct EpisodeScore {
    std::vector<Tensor> logits;  // one score row of width N per query
    std::vector<Tensor> probs;   // softmax of the row
    std::vector<std::size_t> truth;
};

// Few-shot scoring: prototypes are the mean of the K support u-vectors,
// score(r) = alpha * u_q.u_r + beta * w_q.v_r, probabilities by softmax
// over the N ways. Ablations drop one term: label_agnostic keeps only the
// alpha term, label_aware scores with beta fixed at 1 (the zero-shot rule).
inline EpisodeScore score_episode(Tape& tape, MapREModel& model, const Episode& episode, const Vocabulary& vocab,
                                  const RelationCatalog& catalog, ScoringMode mode = ScoringMode::both,
                                  DropoutContext* dropout = nullptr) {
    const std::size_t ways = episode.relations.size();
    if (ways == 0) throw std::runtime_error("score_episode: empty episode");
    for (const auto& way : episode.support) {
        if (way.empty()) throw std::runtime_error("score_episode: zero-shot episode, use predict_zeroshot");
    }
    if (episode.support.size() != ways) throw std::runtime_error("score_episode: support/way mismatch");

    const std::size_t max_len = model.config().max_sequence_length;
    std::vector<Tensor> prototypes;
    std::vector<Tensor> relation_vecs;
    prototypes.reserve(ways);
    relation_vecs.reserve(ways);
    for (std::size_t way = 0; way < ways; ++way) {
        Tensor acc;
        for (const Instance& inst : episode.support[way]) {
            TokenSequence seq = build_token_sequence(inst, vocab, false, false, max_len);
            Tensor u = forward_context(tape, model.context_encoder(), seq, dropout).u;
            acc = acc.defined() ? tape.add(acc, u) : u;
        }
        prototypes.push_back(tape.scale(acc, 1.0 / static_cast<double>(episode.support[way].size())));
        relation_vecs.push_back(forward_relation(tape, model.relation_encoder(),
                                                 detail::relation_label(catalog, episode.relations[way]), vocab,
                                                 dropout));
    }

    EpisodeScore out;
    for (const auto& [query, truth] : episode.queries) {
        TokenSequence seq = build_token_sequence(query, vocab, false, false, max_len);
        PooledContext pooled = forward_context(tape, model.context_encoder(), seq, dropout);
        std::vector<Tensor> scores;
        scores.reserve(ways);
        for (std::size_t way = 0; way < ways; ++way) {
            Tensor agnostic = tape.dot(pooled.u, prototypes[way]);
            Tensor aware = tape.dot(pooled.w, relation_vecs[way]);
            switch (mode) {
                case ScoringMode::both:
                    scores.push_back(tape.add(tape.mul(model.fewshot().alpha, agnostic),
                                              tape.mul(model.fewshot().beta, aware)));
                    break;
                case ScoringMode::label_agnostic:
                    scores.push_back(tape.mul(model.fewshot().alpha, agnostic));
                    break;
                case ScoringMode::label_aware:
                    scores.push_back(aware);  // alpha = 0, beta = 1
                    break;
            }
        }
        Tensor row = tape.concat(scores);
        out.logits.push_back(row);
        out.probs.push_back(tape.softmax(row));
        out.truth.push_back(truth);
    }
    return out;
}

// Zero-shot rule: score(r) = w_q.v_r, the alpha=0, beta=1 case of the
// episode score, with no supports involved.
inline Tensor zeroshot_logits(Tape& tape, MapREModel& model, const Instance& query,
                              const std::vector<std::vector<std::string>>& candidate_labels,
                              const Vocabulary& vocab, DropoutContext* dropout = nullptr) {
    if (candidate_labels.empty()) throw std::runtime_error("predict_zeroshot: no candidate labels");
    const std::size_t max_len = model.config().max_sequence_length;
    TokenSequence seq = build_token_sequence(query, vocab, false, false, max_len);
    Tensor w_q = forward_context(tape, model.context_encoder(), seq, dropout).w;
    std::vector<Tensor> scores;
    scores.reserve(candidate_labels.size());
    for (const auto& label : candidate_labels) {
        scores.push_back(tape.dot(w_q, forward_relation(tape, model.relation_encoder(), label, vocab, dropout)));
    }
    return tape.concat(scores);
}

inline std::vector<double> predict_zeroshot(MapREModel& model, const Instance& query,
                                            const std::vector<std::vector<std::string>>& candidate_labels,
                                            const Vocabulary& vocab) {
    Tape tape;
    Tensor probs = tape.softmax(zeroshot_logits(tape, model, query, candidate_labels, vocab));
    return probs.data();
}

struct FewshotFtConfig {
    long iterations = 300;
    std::size_t episodes_per_batch = 4;
    EpisodeSpec train_spec{5, 1, 1};
    double learning_rate = 2e-4;
    double weight_decay = 1e-5;
    double grad_clip_norm = 1.0;
    ScoringMode mode = ScoringMode::both;
    std::uint64_t seed = 7;
};

// Episodic fine-tuning: cross-entropy on the query's true way, gradients
// through both encoders and the alpha/beta coefficients.
inline void finetune_fewshot(MapREModel& model, const SamplingPool& train_pool, const Vocabulary& vocab,
                             const RelationCatalog& catalog, const FewshotFtConfig& config,
                             MetricsLogger* logger = nullptr) {
    std::vector<NamedParam> params = model.parameters();
    AdamWOptions opt_options;
    opt_options.learning_rate = config.learning_rate;
    opt_options.weight_decay = config.weight_decay;
    AdamW optimizer(params, opt_options);

    std::mt19937_64 rng(config.seed);
    DropoutContext dropout{&rng, model.config().dropout_rate};
    for (long step = 0; step < config.iterations; ++step) {
        try {
            Tape tape;
            std::vector<Tensor> query_losses;
            for (std::size_t e = 0; e < config.episodes_per_batch; ++e) {
                Episode episode = train_pool.sample_episode(config.train_spec, rng);
                if (config.train_spec.shots == 0 || config.mode == ScoringMode::label_aware) {
                    // zero-shot style: supports unused, beta fixed at 1
                    std::vector<std::vector<std::string>> labels;
                    for (const std::string& rel : episode.relations) {
                        labels.push_back(detail::relation_label(catalog, rel));
                    }
                    for (const auto& [query, truth] : episode.queries) {
                        Tensor logits = zeroshot_logits(tape, model, query, labels, vocab, &dropout);
                        query_losses.push_back(tape.cross_entropy(logits, truth));
                    }
                } else {
                    EpisodeScore score =
                        score_episode(tape, model, episode, vocab, catalog, config.mode, &dropout);
                    for (std::size_t q = 0; q < score.logits.size(); ++q) {
                        query_losses.push_back(tape.cross_entropy(score.logits[q], score.truth[q]));
                    }
                }
            }
            Tensor loss = tape.mean_axis0(tape.concat(query_losses));
            const double loss_value = loss.item();
            if (!std::isfinite(loss_value)) throw std::runtime_error("non-finite loss");
            tape.backward(loss);
            clip_global_norm(params, config.grad_clip_norm);
            optimizer.step();
            optimizer.zero_grad();
            if (logger != nullptr) {
                logger->write(json{{"step", step}, {"total", loss_value}, {"seed", config.seed}});
            }
        } catch (const std::runtime_error& e) {
            throw TrainingAbort(step, e.what());
        }
    }
}

// Mean query accuracy over `episodes` sampled episodes.
inline double evaluate_fewshot(MapREModel& model, const SamplingPool& pool, const Vocabulary& vocab,
                               const RelationCatalog& catalog, const EpisodeSpec& spec, std::size_t episodes,
                               std::uint64_t seed, ScoringMode mode = ScoringMode::both) {
    std::mt19937_64 rng(seed);
    std::size_t correct = 0, total = 0;
    for (std::size_t e = 0; e < episodes; ++e) {
        Episode episode = pool.sample_episode(spec, rng);
        Tape tape;
        EpisodeScore score = score_episode(tape, model, episode, vocab, catalog, mode);
        for (std::size_t q = 0; q < score.probs.size(); ++q) {
            const std::vector<double>& row = score.probs[q].data();
            const std::size_t argmax = static_cast<std::size_t>(
                std::distance(row.begin(), std::max_element(row.begin(), row.end())));
            correct += argmax == score.truth[q];
            ++total;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

inline double evaluate_zeroshot(MapREModel& model, const SamplingPool& pool, const Vocabulary& vocab,
                                const RelationCatalog& catalog, std::size_t ways, std::size_t queries,
                                std::size_t episodes, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    EpisodeSpec spec{ways, 0, queries};
    std::size_t correct = 0, total = 0;
    for (std::size_t e = 0; e < episodes; ++e) {
        Episode episode = pool.sample_episode(spec, rng);
        std::vector<std::vector<std::string>> labels;
        for (const std::string& rel : episode.relations) labels.push_back(detail::relation_label(catalog, rel));
        for (const auto& [query, truth] : episode.queries) {
            const std::vector<double> probs = predict_zeroshot(model, query, labels, vocab);
            const std::size_t argmax = static_cast<std::size_t>(
                std::distance(probs.begin(), std::max_element(probs.begin(), probs.end())));
            correct += argmax == truth;
            ++total;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

enum class SupervisedVariant { L, R };

struct SupervisedFtConfig {
    long steps = 400;
    std::size_t batch_size = 8;
    double learning_rate = 3e-4;
    double weight_decay = 1e-5;
    double grad_clip_norm = 1.0;
    SupervisedVariant variant = SupervisedVariant::R;
    std::uint64_t seed = 7;
};

// Supervised fine-tuning over the full relation catalog. Variant L scores
// with an affine head over u and leaves the relation encoder untouched;
// variant R projects u to width d and scores against every catalog
// relation's v, updating the relation encoder as well.
inline double finetune_supervised(MapREModel& model, const std::vector<Instance>& train,
                                  const std::vector<Instance>& eval_set, const RelationCatalog& catalog,
                                  const Vocabulary& vocab, const SupervisedFtConfig& config,
                                  MetricsLogger* logger = nullptr) {
    if (catalog.empty()) throw std::runtime_error("finetune_supervised: empty relation catalog");
    if (train.empty()) throw std::runtime_error("finetune_supervised: empty training split");

    std::vector<std::string> relations;
    std::map<std::string, std::size_t> relation_index;
    for (const auto& [rel, info] : catalog) {
        relation_index[rel] = relations.size();
        relations.push_back(rel);
    }
    std::set<std::string> seen;
    for (const Instance& inst : train) seen.insert(inst.relation);
    if (seen.size() != relations.size()) {
        throw std::runtime_error("finetune_supervised: training split covers " + std::to_string(seen.size()) +
                                 " of " + std::to_string(relations.size()) + " catalog relations");
    }

    if (config.variant == SupervisedVariant::L) {
        model.ensure_head_l(relations.size());
    } else {
        model.ensure_head_r();
    }
    std::vector<NamedParam> params = model.parameters();
    AdamWOptions opt_options;
    opt_options.learning_rate = config.learning_rate;
    opt_options.weight_decay = config.weight_decay;
    AdamW optimizer(params, opt_options);

    const std::size_t max_len = model.config().max_sequence_length;
    std::mt19937_64 rng(config.seed);
    DropoutContext dropout{&rng, model.config().dropout_rate};
    std::vector<std::size_t> deck(train.size());
    for (std::size_t i = 0; i < deck.size(); ++i) deck[i] = i;
    std::size_t deck_pos = deck.size();

    auto instance_logits = [&](Tape& tape, const Instance& inst, const std::vector<Tensor>* relation_vecs,
                               DropoutContext* drop) {
        TokenSequence seq = build_token_sequence(inst, vocab, false, false, max_len);
        Tensor u = forward_context(tape, model.context_encoder(), seq, drop).u;
        if (config.variant == SupervisedVariant::L) {
            return tape.add(tape.matmul(u, model.head_l().weight), model.head_l().bias);
        }
        Tensor z = tape.add(tape.matmul(u, model.head_r().weight), model.head_r().bias);
        std::vector<Tensor> scores;
        scores.reserve(relation_vecs->size());
        for (const Tensor& v : *relation_vecs) scores.push_back(tape.dot(z, v));
        return tape.concat(scores);
    };

    for (long step = 0; step < config.steps; ++step) {
        try {
            Tape tape;
            std::vector<Tensor> relation_vecs;
            if (config.variant == SupervisedVariant::R) {
                for (const std::string& rel : relations) {
                    relation_vecs.push_back(forward_relation(tape, model.relation_encoder(),
                                                             detail::relation_label(catalog, rel), vocab,
                                                             &dropout));
                }
            }
            std::vector<Tensor> losses;
            for (std::size_t b = 0; b < config.batch_size; ++b) {
                if (deck_pos == deck.size()) {
                    std::shuffle(deck.begin(), deck.end(), rng);
                    deck_pos = 0;
                }
                const Instance& inst = train[deck[deck_pos++]];
                Tensor logits = instance_logits(tape, inst, &relation_vecs, &dropout);
                losses.push_back(tape.cross_entropy(logits, relation_index.at(inst.relation)));
            }
            Tensor loss = tape.mean_axis0(tape.concat(losses));
            const double loss_value = loss.item();
            if (!std::isfinite(loss_value)) throw std::runtime_error("non-finite loss");
            tape.backward(loss);
            clip_global_norm(params, config.grad_clip_norm);
            optimizer.step();
            optimizer.zero_grad();
            if (logger != nullptr) {
                logger->write(json{{"step", step}, {"total", loss_value}, {"seed", config.seed}});
            }
        } catch (const std::runtime_error& e) {
            throw TrainingAbort(step, e.what());
        }
    }

    std::size_t correct = 0;
    for (const Instance& inst : eval_set) {
        Tape tape;
        std::vector<Tensor> relation_vecs;
        if (config.variant == SupervisedVariant::R) {
            for (const std::string& rel : relations) {
                relation_vecs.push_back(forward_relation(tape, model.relation_encoder(),
                                                         detail::relation_label(catalog, rel), vocab));
            }
        }
        Tensor logits = instance_logits(tape, inst, &relation_vecs, nullptr);
        const std::vector<double>& row = logits.data();
        const std::size_t argmax =
            static_cast<std::size_t>(std::distance(row.begin(), std::max_element(row.begin(), row.end())));
        correct += relations[argmax] == inst.relation;
    }
    const double accuracy =
        eval_set.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(eval_set.size());
    if (logger != nullptr) {
        logger->write(json{{"step", config.steps}, {"accuracy", accuracy}, {"seed", config.seed}});
    }
    return accuracy;
}

}  // namespace mapre
