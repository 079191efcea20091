#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mapre/encoder.hpp"
#include "mapre/sampling.hpp"
#include "mapre/training.hpp"

namespace mapre {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RunPaths {
    std::string corpus_dir = "corpus";
    std::string checkpoint_in;
    std::string checkpoint_out;  // empty: <run_dir>/checkpoint.bin
    std::string metrics_out;     // empty: <run_dir>/metrics.jsonl
    std::string episodes_out;    // optional episode dump during evaluation
};

struct CorpusConfig {
    std::size_t pretrain_relations = 12;
    std::size_t train_relations = 8;
    std::size_t val_relations = 2;
    std::size_t test_relations = 4;
    std::size_t entities_per_relation = 8;
    std::size_t sentences_per_triple = 12;
    std::size_t vocab_size = 160;
    double supervised_test_fraction = 0.2;

    std::size_t total_relations() const {
        return pretrain_relations + train_relations + val_relations + test_relations;
    }
};

struct FinetuneConfig {
    std::string variant = "R";      // supervised head: L | R
    std::string ablation = "both";  // both | label-agnostic | label-aware
    long iterations = 300;
    std::size_t episodes_per_batch = 4;
    long supervised_steps = 400;
    std::size_t supervised_batch = 8;
    double train_fraction = 1.0;
    double learning_rate = 2e-4;
    double supervised_learning_rate = 3e-4;
    double weight_decay = 1e-5;
    double grad_clip_norm = 1.0;
};

struct EpisodeConfig {
    std::size_t ways = 5;
    std::size_t shots = 1;
    std::size_t queries = 1;  // per training episode; evaluation uses eval.queries
};

struct EvalConfig {
    std::size_t episodes = 500;
    std::size_t queries = 5;
    std::string split = "heldout";  // train | val | test | heldout (val + test)
};

struct RunConfig {
    std::uint64_t seed = 7;
    std::string output_dir = "runs";
    bool share_encoders = false;
    RunPaths paths;
    CorpusConfig corpus;
    EncoderConfig encoder;  // vocab_size is filled from the vocabulary file
    PretrainConfig pretrain;
    FinetuneConfig finetune;
    EpisodeConfig episode;
    EvalConfig eval;
};

namespace detail_config {

inline void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& section) {
    for (const auto& [key, value] : j.items()) {
        if (known.find(key) == known.end()) {
            throw ConfigError("config: unknown key '" + key + "' in " + section);
        }
    }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const std::exception& e) {
        throw ConfigError("config: bad value for '" + std::string(key) + "': " + e.what());
    }
}

}  // namespace detail_config

inline RunConfig run_config_from_json(const json& j) {
    using detail_config::read;
    using detail_config::reject_unknown;

    RunConfig config;
    reject_unknown(j, {"seed", "output_dir", "share_encoders", "paths", "corpus", "encoder", "pretrain",
                       "finetune", "episode", "eval"},
                   "the top level");
    read(j, "seed", config.seed);
    read(j, "output_dir", config.output_dir);
    read(j, "share_encoders", config.share_encoders);

    if (j.contains("paths")) {
        const json& p = j.at("paths");
        reject_unknown(p, {"corpus_dir", "checkpoint_in", "checkpoint_out", "metrics_out", "episodes_out"},
                       "paths");
        read(p, "corpus_dir", config.paths.corpus_dir);
        read(p, "checkpoint_in", config.paths.checkpoint_in);
        read(p, "checkpoint_out", config.paths.checkpoint_out);
        read(p, "metrics_out", config.paths.metrics_out);
        read(p, "episodes_out", config.paths.episodes_out);
    }
    if (j.contains("corpus")) {
        const json& c = j.at("corpus");
        reject_unknown(c,
                       {"pretrain_relations", "train_relations", "val_relations", "test_relations",
                        "entities_per_relation", "sentences_per_triple", "vocab_size",
                        "supervised_test_fraction"},
                       "corpus");
        read(c, "pretrain_relations", config.corpus.pretrain_relations);
        read(c, "train_relations", config.corpus.train_relations);
        read(c, "val_relations", config.corpus.val_relations);
        read(c, "test_relations", config.corpus.test_relations);
        read(c, "entities_per_relation", config.corpus.entities_per_relation);
        read(c, "sentences_per_triple", config.corpus.sentences_per_triple);
        read(c, "vocab_size", config.corpus.vocab_size);
        read(c, "supervised_test_fraction", config.corpus.supervised_test_fraction);
    }
    if (j.contains("encoder")) {
        const json& e = j.at("encoder");
        reject_unknown(
            e, {"num_layers", "model_dim", "num_heads", "feedforward_dim", "max_sequence_length", "dropout_rate"},
            "encoder");
        read(e, "num_layers", config.encoder.num_layers);
        read(e, "model_dim", config.encoder.model_dim);
        read(e, "num_heads", config.encoder.num_heads);
        read(e, "feedforward_dim", config.encoder.feedforward_dim);
        read(e, "max_sequence_length", config.encoder.max_sequence_length);
        read(e, "dropout_rate", config.encoder.dropout_rate);
    }
    if (j.contains("pretrain")) {
        const json& p = j.at("pretrain");
        reject_unknown(p,
                       {"steps", "warmup_steps", "batch_relations", "learning_rate", "weight_decay",
                        "grad_clip_norm", "blank_prob", "mlm_rate", "temperature"},
                       "pretrain");
        read(p, "steps", config.pretrain.steps);
        read(p, "warmup_steps", config.pretrain.warmup_steps);
        read(p, "batch_relations", config.pretrain.batch_relations);
        read(p, "learning_rate", config.pretrain.learning_rate);
        read(p, "weight_decay", config.pretrain.weight_decay);
        read(p, "grad_clip_norm", config.pretrain.grad_clip_norm);
        read(p, "blank_prob", config.pretrain.blank_prob);
        read(p, "mlm_rate", config.pretrain.mlm_rate);
        read(p, "temperature", config.pretrain.temperature);
    }
    if (j.contains("finetune")) {
        const json& f = j.at("finetune");
        reject_unknown(f,
                       {"variant", "ablation", "iterations", "episodes_per_batch", "supervised_steps",
                        "supervised_batch", "train_fraction", "learning_rate", "supervised_learning_rate",
                        "weight_decay", "grad_clip_norm"},
                       "finetune");
        read(f, "variant", config.finetune.variant);
        read(f, "ablation", config.finetune.ablation);
        read(f, "iterations", config.finetune.iterations);
        read(f, "episodes_per_batch", config.finetune.episodes_per_batch);
        read(f, "supervised_steps", config.finetune.supervised_steps);
        read(f, "supervised_batch", config.finetune.supervised_batch);
        read(f, "train_fraction", config.finetune.train_fraction);
        read(f, "learning_rate", config.finetune.learning_rate);
        read(f, "supervised_learning_rate", config.finetune.supervised_learning_rate);
        read(f, "weight_decay", config.finetune.weight_decay);
        read(f, "grad_clip_norm", config.finetune.grad_clip_norm);
    }
    if (j.contains("episode")) {
        const json& e = j.at("episode");
        reject_unknown(e, {"ways", "shots", "queries"}, "episode");
        read(e, "ways", config.episode.ways);
        read(e, "shots", config.episode.shots);
        read(e, "queries", config.episode.queries);
    }
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        reject_unknown(e, {"episodes", "queries", "split"}, "eval");
        read(e, "episodes", config.eval.episodes);
        read(e, "queries", config.eval.queries);
        read(e, "split", config.eval.split);
    }

    if (config.finetune.variant != "L" && config.finetune.variant != "R") {
        throw ConfigError("config: finetune.variant must be L or R");
    }
    if (config.finetune.ablation != "both" && config.finetune.ablation != "label-agnostic" &&
        config.finetune.ablation != "label-aware") {
        throw ConfigError("config: finetune.ablation must be both, label-agnostic, or label-aware");
    }
    if (config.eval.split != "train" && config.eval.split != "val" && config.eval.split != "test" &&
        config.eval.split != "heldout") {
        throw ConfigError("config: eval.split must be train, val, test, or heldout");
    }
    if (!(config.finetune.train_fraction > 0.0 && config.finetune.train_fraction <= 1.0)) {
        throw ConfigError("config: finetune.train_fraction must be in (0,1]");
    }
    return config;
}

inline json run_config_to_json(const RunConfig& c) {
    return json{
        {"seed", c.seed},
        {"output_dir", c.output_dir},
        {"share_encoders", c.share_encoders},
        {"paths",
         {{"corpus_dir", c.paths.corpus_dir},
          {"checkpoint_in", c.paths.checkpoint_in},
          {"checkpoint_out", c.paths.checkpoint_out},
          {"metrics_out", c.paths.metrics_out},
          {"episodes_out", c.paths.episodes_out}}},
        {"corpus",
         {{"pretrain_relations", c.corpus.pretrain_relations},
          {"train_relations", c.corpus.train_relations},
          {"val_relations", c.corpus.val_relations},
          {"test_relations", c.corpus.test_relations},
          {"entities_per_relation", c.corpus.entities_per_relation},
          {"sentences_per_triple", c.corpus.sentences_per_triple},
          {"vocab_size", c.corpus.vocab_size},
          {"supervised_test_fraction", c.corpus.supervised_test_fraction}}},
        {"encoder",
         {{"num_layers", c.encoder.num_layers},
          {"model_dim", c.encoder.model_dim},
          {"num_heads", c.encoder.num_heads},
          {"feedforward_dim", c.encoder.feedforward_dim},
          {"max_sequence_length", c.encoder.max_sequence_length},
          {"dropout_rate", c.encoder.dropout_rate}}},
        {"pretrain",
         {{"steps", c.pretrain.steps},
          {"warmup_steps", c.pretrain.warmup_steps},
          {"batch_relations", c.pretrain.batch_relations},
          {"learning_rate", c.pretrain.learning_rate},
          {"weight_decay", c.pretrain.weight_decay},
          {"grad_clip_norm", c.pretrain.grad_clip_norm},
          {"blank_prob", c.pretrain.blank_prob},
          {"mlm_rate", c.pretrain.mlm_rate},
          {"temperature", c.pretrain.temperature}}},
        {"finetune",
         {{"variant", c.finetune.variant},
          {"ablation", c.finetune.ablation},
          {"iterations", c.finetune.iterations},
          {"episodes_per_batch", c.finetune.episodes_per_batch},
          {"supervised_steps", c.finetune.supervised_steps},
          {"supervised_batch", c.finetune.supervised_batch},
          {"train_fraction", c.finetune.train_fraction},
          {"learning_rate", c.finetune.learning_rate},
          {"supervised_learning_rate", c.finetune.supervised_learning_rate},
          {"weight_decay", c.finetune.weight_decay},
          {"grad_clip_norm", c.finetune.grad_clip_norm}}},
        {"episode", {{"ways", c.episode.ways}, {"shots", c.episode.shots}, {"queries", c.episode.queries}}},
        {"eval", {{"episodes", c.eval.episodes}, {"queries", c.eval.queries}, {"split", c.eval.split}}}};
}

// `--override key.path=value` entries; values parse as JSON scalars and
// fall back to strings.
inline void apply_override(json& j, const std::string& spec) {
    const std::size_t eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override: expected key.path=value, got '" + spec + "'");
    }
    const std::string path = spec.substr(0, eq);
    const std::string raw = spec.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const std::exception&) {
        value = raw;  // plain string
    }
    json* node = &j;
    std::size_t start = 0;
    while (true) {
        const std::size_t dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw ConfigError("override: empty key segment in '" + spec + "'");
        if (dot == std::string::npos) {
            (*node)[key] = value;
            break;
        }
        node = &(*node)[key];
        start = dot + 1;
    }
}

// Resolution order: defaults < config file < --override; the seed falls
// back to MAPRE_SEED when no file or override sets it.
inline RunConfig resolve_run_config(const std::string& config_path, const std::vector<std::string>& overrides) {
    json j = json::object();
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw ConfigError("config: cannot open " + config_path);
        try {
            in >> j;
        } catch (const std::exception& e) {
            throw ConfigError("config: parse failure in " + config_path + ": " + e.what());
        }
        if (!j.is_object()) throw ConfigError("config: top level must be an object");
    }
    for (const std::string& o : overrides) apply_override(j, o);
    if (!j.contains("seed")) {
        if (const char* env = std::getenv("MAPRE_SEED")) {
            try {
                j["seed"] = std::stoull(env);
            } catch (const std::exception&) {
                throw ConfigError("config: MAPRE_SEED is not an integer");
            }
        }
    }
    return run_config_from_json(j);
}

inline std::string config_hash(const json& resolved) {
    // FNV-1a over the canonical dump, rendered as 8 hex digits
    const std::string s = resolved.dump();
    std::uint32_t h = 2166136261u;
    for (unsigned char c : s) {
        h ^= c;
        h *= 16777619u;
    }
    char buf[9];
    std::snprintf(buf, sizeof(buf), "%08x", h);
    return buf;
}

}  // namespace mapre
