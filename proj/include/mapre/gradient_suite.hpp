#pragma once

// Gradient verification harness: finite-difference checks for every tape
// primitive and for the three pretraining losses plus the episode score
// loss, over multiple random draws each.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mapre/corpus.hpp"
#include "mapre/gradcheck.hpp"
#include "mapre/model.hpp"
#include "mapre/objectives.hpp"
#include "mapre/tensor.hpp"
#include "mapre/training.hpp"

namespace mapre {

struct SuiteResult {
    std::string name;
    double max_rel_error = 0;
    bool passed = false;
};

namespace detail_suite {

inline std::vector<double> randvec(std::mt19937_64& rng, std::size_t n) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> out(n);
    for (double& v : out) v = dist(rng);
    return out;
}

inline NamedParam make_param(const std::string& name, Shape shape, std::mt19937_64& rng) {
    const std::size_t n = shape_numel(shape);
    return {name, Tensor::param(name, std::move(shape), randvec(rng, n)), false};
}

// fixed random projection so every output coordinate affects the scalar
inline Tensor project(Tape& tape, const Tensor& y, unsigned seed) {
    std::mt19937_64 rng(seed);
    Tensor w = Tensor::from(y.shape(), randvec(rng, y.size()));
    Tensor prod = tape.mul(y, w);
    return prod.rank() == 2 ? tape.mean_axis0(tape.mean_axis0(prod)) : tape.mean_axis0(prod);
}

inline SuiteResult check(const std::string& name, int seeds, double tolerance,
                         const std::function<std::vector<NamedParam>(std::mt19937_64&)>& make_inputs,
                         const std::function<Tensor(Tape&, std::vector<NamedParam>&)>& build) {
    SuiteResult result{name, 0.0, true};
    for (int s = 0; s < seeds; ++s) {
        std::mt19937_64 rng(7000 + 13 * s);
        std::vector<NamedParam> params = make_inputs(rng);
        auto f = [&](Tape& tape) { return build(tape, params); };
        GradCheckReport report = finite_difference_check(f, params, 1e-5, tolerance);
        result.max_rel_error = std::max(result.max_rel_error, report.max_rel_error);
        result.passed = result.passed && report.passed();
    }
    return result;
}

}  // namespace detail_suite

inline std::vector<SuiteResult> run_primitive_gradient_suite(int seeds = 10, double tolerance = 1e-4) {
    using detail_suite::check;
    using detail_suite::make_param;
    using detail_suite::project;
    std::vector<SuiteResult> results;

    auto one = [&](const std::string& name, std::vector<std::pair<std::string, Shape>> inputs,
                   std::function<Tensor(Tape&, std::vector<NamedParam>&)> build) {
        results.push_back(check(
            name, seeds, tolerance,
            [inputs](std::mt19937_64& rng) {
                std::vector<NamedParam> params;
                for (const auto& [pname, shape] : inputs) params.push_back(make_param(pname, shape, rng));
                return params;
            },
            std::move(build)));
    };

    one("matmul", {{"a", {3, 4}}, {"b", {4, 2}}},
        [](Tape& t, std::vector<NamedParam>& p) { return project(t, t.matmul(p[0].tensor, p[1].tensor), 1); });
    one("matmul_vec", {{"a", {4}}, {"b", {4, 3}}},
        [](Tape& t, std::vector<NamedParam>& p) { return project(t, t.matmul(p[0].tensor, p[1].tensor), 2); });
    one("add", {{"a", {2, 3}}, {"b", {2, 3}}},
        [](Tape& t, std::vector<NamedParam>& p) { return project(t, t.add(p[0].tensor, p[1].tensor), 3); });
    one("add_broadcast", {{"a", {3, 4}}, {"b", {4}}},
        [](Tape& t, std::vector<NamedParam>& p) { return project(t, t.add(p[0].tensor, p[1].tensor), 4); });
    one("sub", {{"a", {6}}, {"b", {6}}},
        [](Tape& t, std::vector<NamedParam>& p) { return project(t, t.sub(p[0].tensor, p[1].tensor), 5); });
    one("mul", {{"a", {2, 3}}, {"b", {2, 3}}},
        [](Tape& t, std::vector<NamedParam>& p) { return project(t, t.mul(p[0].tensor, p[1].tensor), 6); });
    one("scale", {{"a", {5}}},
        [](Tape& t, std::vector<NamedParam>& p) { return project(t, t.scale(p[0].tensor, -1.7), 7); });
    one("concat", {{"a", {3}}, {"b", {2}}, {"c", {4}}}, [](Tape& t, std::vector<NamedParam>& p) {
        return project(t, t.concat({p[0].tensor, p[1].tensor, p[2].tensor}), 8);
    });
    one("concat_2d", {{"a", {2, 3}}, {"b", {2, 2}}},
        [](Tape& t, std::vector<NamedParam>& p) { return project(t, t.concat(p[0].tensor, p[1].tensor), 9); });
    one("row", {{"a", {4, 3}}},
        [](Tape& t, std::vector<NamedParam>& p) { return project(t, t.row(p[0].tensor, 2), 10); });
    one("gather_rows", {{"a", {4, 3}}},
        [](Tape& t, std::vector<NamedParam>& p) { return project(t, t.gather_rows(p[0].tensor, {1, 3, 1}), 11); });
    one("embedding", {{"table", {6, 4}}},
        [](Tape& t, std::vector<NamedParam>& p) { return project(t, t.embedding(p[0].tensor, {0, 5, 2, 0}), 12); });
    one("mean_axis0", {{"a", {5, 3}}},
        [](Tape& t, std::vector<NamedParam>& p) { return project(t, t.mean_axis0(p[0].tensor), 13); });
    one("layer_norm", {{"x", {3, 6}}, {"g", {6}}, {"b", {6}}}, [](Tape& t, std::vector<NamedParam>& p) {
        return project(t, t.layer_norm(p[0].tensor, p[1].tensor, p[2].tensor), 14);
    });
    one("gelu", {{"x", {8}}},
        [](Tape& t, std::vector<NamedParam>& p) { return project(t, t.gelu(p[0].tensor), 15); });
    one("softmax", {{"x", {3, 5}}},
        [](Tape& t, std::vector<NamedParam>& p) { return project(t, t.softmax(p[0].tensor), 16); });
    one("log_softmax", {{"x", {3, 5}}},
        [](Tape& t, std::vector<NamedParam>& p) { return project(t, t.log_softmax(p[0].tensor), 17); });
    one("cross_entropy", {{"x", {4, 5}}}, [](Tape& t, std::vector<NamedParam>& p) {
        return t.cross_entropy(p[0].tensor, std::vector<std::size_t>{1, 0, 4, 2});
    });
    one("dot", {{"a", {7}}, {"b", {7}}},
        [](Tape& t, std::vector<NamedParam>& p) { return t.dot(p[0].tensor, p[1].tensor); });
    one("transpose", {{"a", {3, 4}}},
        [](Tape& t, std::vector<NamedParam>& p) { return project(t, t.transpose(p[0].tensor), 18); });
    return results;
}

// Losses on a miniature model so the checks stay well under the runtime
// budget while touching every parameter.
inline std::vector<SuiteResult> run_objective_gradient_suite(int seeds = 10, double tolerance = 1e-4) {
    using detail_suite::check;
    std::vector<SuiteResult> results;

    results.push_back(check(
        "ccr_loss", seeds, tolerance,
        [](std::mt19937_64& rng) {
            std::vector<NamedParam> params;
            for (int i = 0; i < 6; ++i) {
                params.push_back(detail_suite::make_param("u" + std::to_string(i), {4}, rng));
            }
            return params;
        },
        [](Tape& tape, std::vector<NamedParam>& p) {
            std::vector<Tensor> u_a{p[0].tensor, p[1].tensor, p[2].tensor};
            std::vector<Tensor> u_b{p[3].tensor, p[4].tensor, p[5].tensor};
            return ccr_loss(tape, u_a, u_b, 0.8);
        }));

    results.push_back(check(
        "crr_loss", seeds, tolerance,
        [](std::mt19937_64& rng) {
            std::vector<NamedParam> params;
            for (int i = 0; i < 4; ++i) {
                params.push_back(detail_suite::make_param("w" + std::to_string(i), {3}, rng));
            }
            for (int i = 0; i < 2; ++i) {
                params.push_back(detail_suite::make_param("v" + std::to_string(i), {3}, rng));
            }
            return params;
        },
        [](Tape& tape, std::vector<NamedParam>& p) {
            std::vector<Tensor> w{p[0].tensor, p[1].tensor, p[2].tensor, p[3].tensor};
            std::vector<Tensor> v{p[4].tensor, p[5].tensor};
            return crr_loss(tape, w, v, {0, 0, 1, 1}, 1.0);
        }));

    // MLM and the episode loss run through the full encoder stack
    CorpusGenParams gen;
    gen.num_relations = 4;
    gen.entities_per_relation = 2;
    gen.sentences_per_triple = 2;
    gen.vocab_size = 40;
    gen.seed = 3;
    GeneratedCorpus corpus = generate_corpus(gen);
    EncoderConfig cfg;
    cfg.num_layers = 1;
    cfg.model_dim = 8;
    cfg.num_heads = 2;
    cfg.feedforward_dim = 16;
    cfg.vocab_size = corpus.vocab.size();
    cfg.max_sequence_length = 16;
    cfg.dropout_rate = 0.0;
    SamplingPool pool(corpus.instances);

    {
        SuiteResult result{"mlm_loss", 0.0, true};
        for (int s = 0; s < seeds; ++s) {
            MapREModel model = MapREModel::init(cfg, false, 100 + s);
            std::vector<NamedParam> params;
            for (NamedParam& p : model.parameters()) {
                if (p.name.rfind("con.", 0) == 0) params.push_back(p);
            }
            std::mt19937_64 rng(200 + s);
            TokenSequence seq =
                build_token_sequence(corpus.instances[s % corpus.instances.size()], corpus.vocab, false, false, 16);
            MaskedSequence masked = apply_mlm_mask(seq, 0.4, corpus.vocab.size(), rng);
            if (masked.targets.empty()) masked.targets.push_back({2, seq.ids[2]});
            auto f = [&](Tape& tape) {
                Tensor hidden = model.context_encoder().forward(tape, masked.seq.ids);
                return mlm_loss(tape, hidden, masked.targets, model.context_encoder().token_embedding());
            };
            // wider step: roundoff through the deep stack dominates at 1e-5
            GradCheckReport report = finite_difference_check(f, params, 1e-4, tolerance);
            result.max_rel_error = std::max(result.max_rel_error, report.max_rel_error);
            result.passed = result.passed && report.passed();
        }
        results.push_back(result);
    }

    {
        SuiteResult result{"episode_loss", 0.0, true};
        for (int s = 0; s < seeds; ++s) {
            MapREModel model = MapREModel::init(cfg, false, 300 + s);
            std::vector<NamedParam> params = model.parameters();
            std::mt19937_64 rng(400 + s);
            Episode episode = pool.sample_episode({2, 1, 1}, rng);
            auto f = [&](Tape& tape) {
                EpisodeScore score = score_episode(tape, model, episode, corpus.vocab, corpus.kg.catalog);
                return tape.cross_entropy(score.logits[0], score.truth[0]);
            };
            GradCheckReport report = finite_difference_check(f, params, 1e-4, tolerance);
            result.max_rel_error = std::max(result.max_rel_error, report.max_rel_error);
            result.passed = result.passed && report.passed();
        }
        results.push_back(result);
    }
    return results;
}

inline std::vector<SuiteResult> run_gradient_suite(int seeds = 10, double tolerance = 1e-4) {
    std::vector<SuiteResult> results = run_primitive_gradient_suite(seeds, tolerance);
    std::vector<SuiteResult> objectives = run_objective_gradient_suite(seeds, tolerance);
    results.insert(results.end(), objectives.begin(), objectives.end());
    return results;
}

}  // namespace mapre
