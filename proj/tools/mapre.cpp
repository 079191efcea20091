// mapre command-line driver: corpus generation, pretraining, fine-tuning,
// evaluation, and the gradient-check harness, wired through one JSON config.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mapre/checkpoint.hpp"
#include "mapre/config.hpp"
#include "mapre/gradient_suite.hpp"
#include "mapre/training.hpp"
#include "mapre/workspace.hpp"

namespace {

using namespace mapre;

// distinct exit codes, one per error category
enum ExitCode : int {
    kOk = 0,
    kCheckFailed = 1,
    kUsage = 2,
    kConfigParse = 3,
    kPath = 4,
    kTrainingAbort = 5,
    kData = 6,
    kInternal = 10,
};

std::string single_line(std::string s) {
    for (char& c : s) {
        if (c == '\n' || c == '\r') c = ' ';
    }
    return s;
}

std::string timestamp_utc() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
    return buf;
}

struct RunContext {
    RunConfig config;
    json resolved;
    std::string run_dir;
    std::string metrics_path;
    std::string checkpoint_path;
};

// Outputs default into a fresh run directory named by config hash and
// timestamp; explicit paths in the config win.
RunContext make_context(const std::string& subcommand, const std::string& config_path,
                        const std::vector<std::string>& overrides) {
    RunContext ctx;
    ctx.config = resolve_run_config(config_path, overrides);
    ctx.resolved = run_config_to_json(ctx.config);
    ctx.run_dir = ctx.config.output_dir + "/" + subcommand + "-" + config_hash(ctx.resolved) + "-" +
                  timestamp_utc();
    ctx.metrics_path = ctx.config.paths.metrics_out.empty() ? ctx.run_dir + "/metrics.jsonl"
                                                            : ctx.config.paths.metrics_out;
    ctx.checkpoint_path = ctx.config.paths.checkpoint_out.empty() ? ctx.run_dir + "/checkpoint.bin"
                                                                  : ctx.config.paths.checkpoint_out;
    std::error_code ec;
    std::filesystem::create_directories(std::filesystem::path(ctx.metrics_path).parent_path(), ec);
    std::filesystem::create_directories(std::filesystem::path(ctx.checkpoint_path).parent_path(), ec);
    return ctx;
}

struct LoadedData {
    Vocabulary vocab;
    RelationCatalog catalog;
};

LoadedData load_common(const CorpusLayout& layout) {
    require_file(layout.vocab());
    require_file(layout.catalog());
    return {Vocabulary::load(layout.vocab()), load_catalog(layout.catalog())};
}

MapREModel load_or_init_model(const RunContext& ctx, std::size_t vocab_size) {
    if (!ctx.config.paths.checkpoint_in.empty()) {
        require_file(ctx.config.paths.checkpoint_in);
        return model_from_checkpoint(load_checkpoint(ctx.config.paths.checkpoint_in));
    }
    EncoderConfig cfg = ctx.config.encoder;
    cfg.vocab_size = vocab_size;
    return MapREModel::init(cfg, ctx.config.share_encoders, ctx.config.seed);
}

std::vector<Instance> pick_split(const EvalConfig& eval, const std::vector<Instance>& train,
                                 const std::vector<Instance>& val, const std::vector<Instance>& test) {
    if (eval.split == "train") return train;
    if (eval.split == "val") return val;
    if (eval.split == "test") return test;
    std::vector<Instance> heldout = val;  // val and test relations are both unseen by fine-tuning
    heldout.insert(heldout.end(), test.begin(), test.end());
    return heldout;
}

int cmd_gen_corpus(const RunContext& ctx) {
    CorpusLayout layout{ctx.config.paths.corpus_dir};
    generate_corpus_dir(ctx.config, layout);
    MetricsLogger logger(ctx.metrics_path);
    logger.write_header(ctx.resolved);
    std::cout << "corpus written to " << layout.dir << "\n";
    return kOk;
}

int cmd_pretrain(const RunContext& ctx) {
    CorpusLayout layout{ctx.config.paths.corpus_dir};
    require_file(layout.pretrain());
    LoadedData data = load_common(layout);
    std::vector<Instance> instances = load_jsonl(layout.pretrain());

    MapREModel model = load_or_init_model(ctx, data.vocab.size());
    SamplingPool pool(instances);
    PretrainConfig pc = ctx.config.pretrain;
    pc.seed = ctx.config.seed;

    MetricsLogger logger(ctx.metrics_path);
    logger.write_header(ctx.resolved);
    std::vector<LossBreakdown> log = pretrain(model, pool, data.catalog, data.vocab, pc, &logger);
    save_checkpoint(make_checkpoint(model, ctx.resolved, pc.steps), ctx.checkpoint_path);
    std::cout << "pretrained " << pc.steps << " steps, final total loss " << log.back().total << "\n"
              << "checkpoint: " << ctx.checkpoint_path << "\nmetrics: " << ctx.metrics_path << "\n";
    return kOk;
}

int cmd_finetune_fewshot(const RunContext& ctx) {
    CorpusLayout layout{ctx.config.paths.corpus_dir};
    require_file(layout.fewshot_train());
    LoadedData data = load_common(layout);
    std::vector<Instance> train = load_jsonl(layout.fewshot_train());

    MapREModel model = load_or_init_model(ctx, data.vocab.size());
    SamplingPool pool(train);
    FewshotFtConfig fc;
    fc.iterations = ctx.config.finetune.iterations;
    fc.episodes_per_batch = ctx.config.finetune.episodes_per_batch;
    fc.train_spec = {ctx.config.episode.ways, ctx.config.episode.shots, ctx.config.episode.queries};
    fc.learning_rate = ctx.config.finetune.learning_rate;
    fc.weight_decay = ctx.config.finetune.weight_decay;
    fc.grad_clip_norm = ctx.config.finetune.grad_clip_norm;
    fc.mode = scoring_mode_from_string(ctx.config.finetune.ablation);
    fc.seed = ctx.config.seed;

    MetricsLogger logger(ctx.metrics_path);
    logger.write_header(ctx.resolved);
    finetune_fewshot(model, pool, data.vocab, data.catalog, fc, &logger);

    if (std::filesystem::exists(layout.fewshot_val())) {
        std::vector<Instance> val = load_jsonl(layout.fewshot_val());
        std::set<std::string> rels;
        for (const Instance& inst : val) rels.insert(inst.relation);
        if (rels.size() >= ctx.config.episode.ways) {
            SamplingPool val_pool(val);
            const EpisodeSpec spec{ctx.config.episode.ways, ctx.config.episode.shots, ctx.config.eval.queries};
            const double acc = evaluate_fewshot(model, val_pool, data.vocab, data.catalog, spec, 100,
                                                ctx.config.seed + 1, fc.mode);
            logger.write(json{{"step", fc.iterations}, {"accuracy", acc}, {"seed", ctx.config.seed}});
            std::cout << "validation accuracy " << acc << "\n";
        }
    }
    save_checkpoint(make_checkpoint(model, ctx.resolved, fc.iterations), ctx.checkpoint_path);
    std::cout << "checkpoint: " << ctx.checkpoint_path << "\nmetrics: " << ctx.metrics_path << "\n";
    return kOk;
}

int cmd_finetune_supervised(const RunContext& ctx) {
    CorpusLayout layout{ctx.config.paths.corpus_dir};
    require_file(layout.sup_train());
    require_file(layout.sup_test());
    LoadedData data = load_common(layout);
    std::vector<Instance> train = load_jsonl(layout.sup_train());
    std::vector<Instance> test = load_jsonl(layout.sup_test());

    if (ctx.config.finetune.train_fraction < 1.0) {
        train = take_fraction_stratified(train, ctx.config.finetune.train_fraction, ctx.config.seed + 3);
    }
    MapREModel model = load_or_init_model(ctx, data.vocab.size());
    SupervisedFtConfig sc;
    sc.steps = ctx.config.finetune.supervised_steps;
    sc.batch_size = ctx.config.finetune.supervised_batch;
    sc.learning_rate = ctx.config.finetune.supervised_learning_rate;
    sc.weight_decay = ctx.config.finetune.weight_decay;
    sc.grad_clip_norm = ctx.config.finetune.grad_clip_norm;
    sc.variant = ctx.config.finetune.variant == "L" ? SupervisedVariant::L : SupervisedVariant::R;
    sc.seed = ctx.config.seed;

    MetricsLogger logger(ctx.metrics_path);
    logger.write_header(ctx.resolved);
    const double acc =
        finetune_supervised(model, train, test, catalog_for(data.catalog, train), data.vocab, sc, &logger);
    save_checkpoint(make_checkpoint(model, ctx.resolved, sc.steps), ctx.checkpoint_path);
    std::cout << "supervised variant " << ctx.config.finetune.variant << " accuracy " << acc << "\n"
              << "checkpoint: " << ctx.checkpoint_path << "\nmetrics: " << ctx.metrics_path << "\n";
    return kOk;
}

int cmd_eval_fewshot(const RunContext& ctx) {
    CorpusLayout layout{ctx.config.paths.corpus_dir};
    require_file(layout.fewshot_train());
    require_file(layout.fewshot_val());
    require_file(layout.fewshot_test());
    if (ctx.config.paths.checkpoint_in.empty()) throw PathError("eval-fewshot: checkpoint_in is required");
    LoadedData data = load_common(layout);
    std::vector<Instance> train = load_jsonl(layout.fewshot_train());
    std::vector<Instance> val = load_jsonl(layout.fewshot_val());
    std::vector<Instance> test = load_jsonl(layout.fewshot_test());
    const std::vector<Instance> eval_set = pick_split(ctx.config.eval, train, val, test);

    MapREModel model = load_or_init_model(ctx, data.vocab.size());
    SamplingPool pool(eval_set);
    const EpisodeSpec spec{ctx.config.episode.ways, ctx.config.episode.shots, ctx.config.eval.queries};
    const ScoringMode mode = scoring_mode_from_string(ctx.config.finetune.ablation);
    const double acc = evaluate_fewshot(model, pool, data.vocab, data.catalog, spec, ctx.config.eval.episodes,
                                        ctx.config.seed, mode);

    MetricsLogger logger(ctx.metrics_path);
    logger.write_header(ctx.resolved);
    logger.write(json{{"accuracy", acc}, {"seed", ctx.config.seed}});

    if (!ctx.config.paths.episodes_out.empty()) {
        // re-sample with the evaluation seed to reproduce the episode stream
        std::mt19937_64 rng(ctx.config.seed);
        std::vector<Episode> episodes;
        episodes.reserve(ctx.config.eval.episodes);
        for (std::size_t e = 0; e < ctx.config.eval.episodes; ++e) episodes.push_back(pool.sample_episode(spec, rng));
        save_episodes_jsonl(ctx.config.paths.episodes_out, episodes);
    }
    std::cout << ctx.config.episode.ways << "-way " << ctx.config.episode.shots << "-shot accuracy on "
              << ctx.config.eval.split << ": " << acc << "\n";
    return kOk;
}

int cmd_eval_zeroshot(const RunContext& ctx) {
    CorpusLayout layout{ctx.config.paths.corpus_dir};
    require_file(layout.fewshot_train());
    require_file(layout.fewshot_val());
    require_file(layout.fewshot_test());
    if (ctx.config.paths.checkpoint_in.empty()) throw PathError("eval-zeroshot: checkpoint_in is required");
    LoadedData data = load_common(layout);
    std::vector<Instance> train = load_jsonl(layout.fewshot_train());
    std::vector<Instance> val = load_jsonl(layout.fewshot_val());
    std::vector<Instance> test = load_jsonl(layout.fewshot_test());
    const std::vector<Instance> eval_set = pick_split(ctx.config.eval, train, val, test);

    MapREModel model = load_or_init_model(ctx, data.vocab.size());
    SamplingPool pool(eval_set);
    const double acc = evaluate_zeroshot(model, pool, data.vocab, data.catalog, ctx.config.episode.ways,
                                         ctx.config.eval.queries, ctx.config.eval.episodes, ctx.config.seed);
    MetricsLogger logger(ctx.metrics_path);
    logger.write_header(ctx.resolved);
    logger.write(json{{"accuracy", acc}, {"seed", ctx.config.seed}});
    std::cout << ctx.config.episode.ways << "-way zero-shot accuracy on " << ctx.config.eval.split << ": " << acc
              << "\n";
    return kOk;
}

int cmd_gradcheck(const RunContext& ctx) {
    MetricsLogger logger(ctx.metrics_path);
    logger.write_header(ctx.resolved);
    bool all_passed = true;
    for (const SuiteResult& r : run_gradient_suite(10, 1e-4)) {
        std::cout << (r.passed ? "[PASS] " : "[FAIL] ") << r.name << " max_rel_error=" << r.max_rel_error << "\n";
        all_passed = all_passed && r.passed;
    }
    std::cout << (all_passed ? "gradient suite passed" : "gradient suite FAILED") << "\n";
    return all_passed ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MapRE: low-resource relation extraction with label-agnostic and label-aware semantic mapping"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;

    struct Sub {
        const char* name;
        const char* help;
        int (*fn)(const RunContext&);
    };
    const Sub subs[] = {
        {"gen-corpus", "generate the synthetic corpus directory", cmd_gen_corpus},
        {"pretrain", "contrastive + MLM pretraining of both encoders", cmd_pretrain},
        {"finetune-supervised", "supervised fine-tuning (variant L or R)", cmd_finetune_supervised},
        {"finetune-fewshot", "episodic N-way K-shot fine-tuning", cmd_finetune_fewshot},
        {"eval-fewshot", "episodic evaluation of a checkpoint", cmd_eval_fewshot},
        {"eval-zeroshot", "zero-shot evaluation of a checkpoint", cmd_eval_zeroshot},
        {"gradcheck", "finite-difference gradient verification suite", cmd_gradcheck},
    };
    for (const Sub& sub : subs) {
        CLI::App* s = app.add_subcommand(sub.name, sub.help);
        s->add_option("-c,--config", config_path, "JSON config file");
        s->add_option("--override", overrides, "key.path=value override, repeatable")->take_all();
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << "error: usage: " << single_line(e.what()) << "\n";
        return kUsage;
    }

    const Sub* selected = nullptr;
    for (const Sub& sub : subs) {
        if (app.get_subcommand(sub.name)->parsed()) selected = &sub;
    }
    if (selected == nullptr) {
        std::cerr << "error: usage: no subcommand\n";
        return kUsage;
    }

    try {
        RunContext ctx = make_context(selected->name, config_path, overrides);
        return selected->fn(ctx);
    } catch (const ConfigError& e) {
        std::cerr << "error: config_parse: " << single_line(e.what()) << "\n";
        return kConfigParse;
    } catch (const PathError& e) {
        std::cerr << "error: path: " << single_line(e.what()) << "\n";
        return kPath;
    } catch (const TrainingAbort& e) {
        std::cerr << "error: training_abort: " << single_line(e.what()) << "\n";
        return kTrainingAbort;
    } catch (const CheckpointError& e) {
        if (e.kind() == CheckpointError::Kind::io) {
            std::cerr << "error: path: " << single_line(e.what()) << "\n";
            return kPath;
        }
        std::cerr << "error: data: " << single_line(e.what()) << "\n";
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "error: data: " << single_line(e.what()) << "\n";
        return kData;
    }
}
