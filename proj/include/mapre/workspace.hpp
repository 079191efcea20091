#pragma once

// Corpus directory layout shared by the CLI and the test harnesses.

#include <filesystem>
#include <string>
#include <vector>

#include "mapre/config.hpp"
#include "mapre/corpus.hpp"

namespace mapre {

class PathError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CorpusLayout {
    std::string dir;

    std::string vocab() const { return dir + "/vocab.txt"; }
    std::string catalog() const { return dir + "/catalog.json"; }
    std::string pretrain() const { return dir + "/pretrain.jsonl"; }
    std::string fewshot_train() const { return dir + "/fewshot_train.jsonl"; }
    std::string fewshot_val() const { return dir + "/fewshot_val.jsonl"; }
    std::string fewshot_test() const { return dir + "/fewshot_test.jsonl"; }
    std::string sup_train() const { return dir + "/sup_train.jsonl"; }
    std::string sup_test() const { return dir + "/sup_test.jsonl"; }
    std::string gen_meta() const { return dir + "/gen_meta.json"; }
};

// Generates the full corpus directory: pretraining relations come from a
// disjoint id range, the remaining relations are split relation-disjoint
// for the few-shot task, and the supervised task gets an instance-level
// split over the same downstream relations.
inline void generate_corpus_dir(const RunConfig& config, const CorpusLayout& layout) {
    const CorpusConfig& cc = config.corpus;
    if (cc.pretrain_relations < 4 || cc.train_relations < 1 || cc.val_relations < 1 || cc.test_relations < 1) {
        throw ConfigError("gen-corpus: need >= 4 pretrain relations and >= 1 relation per downstream split");
    }
    CorpusGenParams gen;
    gen.num_relations = cc.total_relations();
    gen.entities_per_relation = cc.entities_per_relation;
    gen.sentences_per_triple = cc.sentences_per_triple;
    gen.vocab_size = cc.vocab_size;
    gen.seed = config.seed;
    GeneratedCorpus corpus = generate_corpus(gen);

    std::vector<Instance> pretrain_set, downstream;
    for (const Instance& inst : corpus.instances) {
        const std::size_t rid = std::stoul(inst.relation.substr(3));
        (rid < cc.pretrain_relations ? pretrain_set : downstream).push_back(inst);
    }
    const double n_down = static_cast<double>(cc.train_relations + cc.val_relations + cc.test_relations);
    DatasetSplit split = split_relations_disjoint(
        downstream,
        SplitFractions{cc.train_relations / n_down, cc.val_relations / n_down, cc.test_relations / n_down},
        config.seed + 1);
    auto [sup_train, sup_test] = split_instances_stratified(downstream, cc.supervised_test_fraction,
                                                            config.seed + 2);

    std::filesystem::create_directories(layout.dir);
    corpus.vocab.save(layout.vocab());
    save_catalog(layout.catalog(), corpus.kg.catalog);
    save_jsonl(layout.pretrain(), pretrain_set);
    save_jsonl(layout.fewshot_train(), split.train);
    save_jsonl(layout.fewshot_val(), split.val);
    save_jsonl(layout.fewshot_test(), split.test);
    save_jsonl(layout.sup_train(), sup_train);
    save_jsonl(layout.sup_test(), sup_test);

    json meta = {{"relations", gen.num_relations},
                 {"pretrain_relations", cc.pretrain_relations},
                 {"train_relations", split.train_relations},
                 {"val_relations", split.val_relations},
                 {"test_relations", split.test_relations},
                 {"instances", corpus.instances.size()},
                 {"vocab_size", corpus.vocab.size()},
                 {"seed", config.seed}};
    std::ofstream out(layout.gen_meta());
    out << meta.dump(2) << '\n';
}

inline void require_file(const std::string& path) {
    if (!std::filesystem::exists(path)) throw PathError("missing file: " + path);
}

}  // namespace mapre
