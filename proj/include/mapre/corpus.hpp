#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mapre/vocab.hpp"

namespace mapre {

using json = nlohmann::json;

// One sentence with head/tail entity spans (inclusive, token indices) and a
// relation id.
struct Instance {
    std::vector<std::string> tokens;
    std::pair<std::size_t, std::size_t> head;
    std::pair<std::size_t, std::size_t> tail;
    std::string relation;

    void validate() const {
        const std::size_t n = tokens.size();
        auto check_span = [&](const std::pair<std::size_t, std::size_t>& s, const char* which) {
            if (s.first > s.second || s.second >= n) {
                throw std::runtime_error(std::string("instance: invalid ") + which + " span [" +
                                         std::to_string(s.first) + "," + std::to_string(s.second) + "] for " +
                                         std::to_string(n) + " tokens");
            }
        };
        check_span(head, "head");
        check_span(tail, "tail");
        if (head.first <= tail.second && tail.first <= head.second) {
            throw std::runtime_error("instance: head and tail spans overlap");
        }
        if (relation.empty()) throw std::runtime_error("instance: empty relation id");
    }
};

struct RelationInfo {
    std::vector<std::string> label;      // tokens naming the relation
    std::vector<std::string> signature;  // tokens that identify it in text
};

// Ordered map keeps every traversal deterministic.
using RelationCatalog = std::map<std::string, RelationInfo>;

struct Triple {
    std::string head;
    std::string relation;
    std::string tail;
};

struct SyntheticKG {
    std::vector<std::string> entities;
    RelationCatalog catalog;
    std::vector<Triple> triples;
};

struct DatasetSplit {
    std::vector<Instance> train, val, test;
    std::set<std::string> train_relations, val_relations, test_relations;
};

struct CorpusGenParams {
    std::size_t num_relations = 12;
    std::size_t entities_per_relation = 8;  // triples formed per relation
    std::size_t sentences_per_triple = 4;
    std::size_t vocab_size = 160;
    std::uint64_t seed = 7;
};

struct GeneratedCorpus {
    SyntheticKG kg;
    std::vector<Instance> instances;
    Vocabulary vocab;
};

namespace detail {

inline std::string padded_name(const std::string& prefix, std::size_t i, std::size_t width = 2) {
    std::string num = std::to_string(i);
    while (num.size() < width) num.insert(num.begin(), '0');
    return prefix + num;
}

}  // namespace detail

// Synthetic knowledge-graph corpus. Every relation owns three unique
// signature tokens and its label equals those tokens; each sentence carries
// two of the three, so the relation is recoverable from the signature alone.
// Entities are drawn from one shared pool and reused across relations,
// which blocks entity-identity shortcuts.
inline GeneratedCorpus generate_corpus(const CorpusGenParams& params) {
    if (params.num_relations < 4) throw std::invalid_argument("generate_corpus: need at least 4 relations");
    if (params.entities_per_relation < 2) {
        throw std::invalid_argument("generate_corpus: need at least 2 triples per relation");
    }
    if (params.sentences_per_triple < 2) {
        throw std::invalid_argument("generate_corpus: need at least 2 sentences per triple");
    }

    const std::size_t num_entities = std::max<std::size_t>(4, params.num_relations);
    const std::size_t reserved = kNumReserved + num_entities + 3 * params.num_relations;
    if (params.vocab_size < reserved + 4) {
        throw std::invalid_argument("generate_corpus: vocab_size " + std::to_string(params.vocab_size) +
                                    " too small for " + std::to_string(params.num_relations) +
                                    " relations (need at least " + std::to_string(reserved + 4) + ")");
    }
    const std::size_t num_fillers = params.vocab_size - reserved;

    std::mt19937_64 rng(params.seed);
    GeneratedCorpus out;

    std::vector<std::string> fillers;
    for (std::size_t e = 0; e < num_entities; ++e) {
        out.kg.entities.push_back(detail::padded_name("ent", e));
        out.vocab.add(out.kg.entities.back());
    }
    for (std::size_t r = 0; r < params.num_relations; ++r) {
        const std::string rel = detail::padded_name("rel", r);
        RelationInfo info;
        for (char suffix : {'a', 'b', 'c'}) {
            info.signature.push_back(detail::padded_name("sig", r) + suffix);
            out.vocab.add(info.signature.back());
        }
        info.label = info.signature;
        out.kg.catalog.emplace(rel, std::move(info));
    }
    for (std::size_t f = 0; f < num_fillers; ++f) {
        fillers.push_back(detail::padded_name("filler", f));
        out.vocab.add(fillers.back());
    }

    std::uniform_int_distribution<std::size_t> pick_entity(0, num_entities - 1);
    std::uniform_int_distribution<std::size_t> pick_filler(0, fillers.size() - 1);
    std::uniform_int_distribution<int> coin(0, 1);

    for (const auto& [rel, info] : out.kg.catalog) {
        std::set<std::pair<std::size_t, std::size_t>> used_pairs;
        for (std::size_t t = 0; t < params.entities_per_relation; ++t) {
            std::size_t h = 0, tl = 0;
            for (int attempt = 0;; ++attempt) {
                h = pick_entity(rng);
                tl = pick_entity(rng);
                if (h != tl && used_pairs.emplace(h, tl).second) break;
                if (attempt > 1000) throw std::runtime_error("generate_corpus: entity pool too small for triples");
            }
            out.kg.triples.push_back({out.kg.entities[h], rel, out.kg.entities[tl]});

            for (std::size_t s = 0; s < params.sentences_per_triple; ++s) {
                // entityX sig sig filler+ entityY, entity order randomized; the
                // near-fixed positions let position-keyed attention find the
                // signature tokens for relations never seen in training
                Instance inst;
                inst.relation = rel;
                const bool head_first = coin(rng) == 0;
                std::uniform_int_distribution<std::size_t> lead_count(0, 0);
                std::uniform_int_distribution<std::size_t> mid_count(1, 1);

                // two or all three of the signature tokens, shuffled
                std::vector<std::string> sig_pair = info.signature;
                std::shuffle(sig_pair.begin(), sig_pair.end(), rng);
                if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.2) sig_pair.pop_back();

                const std::size_t lead = lead_count(rng);
                for (std::size_t i = 0; i < lead; ++i) inst.tokens.push_back(fillers[pick_filler(rng)]);

                const std::size_t first_pos = inst.tokens.size();
                inst.tokens.push_back(head_first ? out.kg.entities[h] : out.kg.entities[tl]);

                for (const std::string& sig : sig_pair) inst.tokens.push_back(sig);

                const std::size_t mid = mid_count(rng);
                for (std::size_t i = 0; i < mid; ++i) inst.tokens.push_back(fillers[pick_filler(rng)]);

                const std::size_t second_pos = inst.tokens.size();
                inst.tokens.push_back(head_first ? out.kg.entities[tl] : out.kg.entities[h]);

                inst.head = head_first ? std::make_pair(first_pos, first_pos) : std::make_pair(second_pos, second_pos);
                inst.tail = head_first ? std::make_pair(second_pos, second_pos) : std::make_pair(first_pos, first_pos);
                inst.validate();
                out.instances.push_back(std::move(inst));
            }
        }
    }
    return out;
}

inline json instance_to_json(const Instance& inst) {
    return json{{"tokens", inst.tokens},
                {"h", {inst.head.first, inst.head.second}},
                {"t", {inst.tail.first, inst.tail.second}},
                {"relation", inst.relation}};
}

inline Instance instance_from_json(const json& j) {
    Instance inst;
    inst.tokens = j.at("tokens").get<std::vector<std::string>>();
    const auto& h = j.at("h");
    const auto& t = j.at("t");
    if (!h.is_array() || h.size() != 2 || !t.is_array() || t.size() != 2) {
        throw std::runtime_error("span fields must be [start, end] pairs");
    }
    inst.head = {h[0].get<std::size_t>(), h[1].get<std::size_t>()};
    inst.tail = {t[0].get<std::size_t>(), t[1].get<std::size_t>()};
    inst.relation = j.at("relation").get<std::string>();
    inst.validate();
    return inst;
}

inline void save_jsonl(const std::string& path, const std::vector<Instance>& instances) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_jsonl: cannot open " + path + " for writing");
    for (const Instance& inst : instances) out << instance_to_json(inst).dump() << '\n';
    if (!out) throw std::runtime_error("save_jsonl: write failed for " + path);
}

// One JSON object per line with fields "tokens", "h", "t", "relation".
inline std::vector<Instance> load_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_jsonl: cannot open " + path);
    std::vector<Instance> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(instance_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw std::runtime_error("load_jsonl: " + path + " line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

// Catalog file: {"relation_id": {"label": [...], "signature": [...]}}
inline void save_catalog(const std::string& path, const RelationCatalog& catalog) {
    json j = json::object();
    for (const auto& [rel, info] : catalog) {
        j[rel] = json{{"label", info.label}, {"signature", info.signature}};
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_catalog: cannot open " + path + " for writing");
    out << j.dump(2) << '\n';
}

inline RelationCatalog load_catalog(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_catalog: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error("load_catalog: " + path + ": " + e.what());
    }
    RelationCatalog catalog;
    for (const auto& [rel, info] : j.items()) {
        RelationInfo r;
        r.label = info.at("label").get<std::vector<std::string>>();
        if (r.label.empty()) throw std::runtime_error("load_catalog: empty label for relation " + rel);
        if (info.contains("signature")) r.signature = info.at("signature").get<std::vector<std::string>>();
        catalog.emplace(rel, std::move(r));
    }
    return catalog;
}

struct SplitFractions {
    double train = 2.0 / 3.0;
    double val = 1.0 / 6.0;
    double test = 1.0 / 6.0;
};

// Partitions relations (not instances) into disjoint train/val/test sets by
// shuffled id, then routes every instance to its relation's split.
inline DatasetSplit split_relations_disjoint(const std::vector<Instance>& instances, const SplitFractions& fractions,
                                             std::uint64_t seed) {
    if (std::abs(fractions.train + fractions.val + fractions.test - 1.0) > 1e-9) {
        throw std::invalid_argument("split_relations_disjoint: fractions must sum to 1");
    }
    std::set<std::string> unique;
    for (const Instance& inst : instances) unique.insert(inst.relation);
    std::vector<std::string> relations(unique.begin(), unique.end());
    const std::size_t total = relations.size();

    std::mt19937_64 rng(seed);
    std::shuffle(relations.begin(), relations.end(), rng);

    const double fracs[3] = {fractions.train, fractions.val, fractions.test};
    std::size_t counts[3];
    double remainders[3];
    std::size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        const double want = fracs[i] * static_cast<double>(total);
        counts[i] = static_cast<std::size_t>(want);
        remainders[i] = want - static_cast<double>(counts[i]);
        assigned += counts[i];
    }
    while (assigned < total) {  // hand leftovers to the largest remainder, ties in train/val/test order
        int best = 0;
        for (int i = 1; i < 3; ++i)
            if (remainders[i] > remainders[best]) best = i;
        ++counts[best];
        remainders[best] = -1;
        ++assigned;
    }
    for (int i = 0; i < 3; ++i) {
        if (counts[i] == 0) {
            throw std::runtime_error("split_relations_disjoint: split " + std::to_string(i) +
                                     " would receive zero relations (have " + std::to_string(total) + ")");
        }
    }

    DatasetSplit split;
    std::size_t idx = 0;
    for (std::size_t i = 0; i < counts[0]; ++i) split.train_relations.insert(relations[idx++]);
    for (std::size_t i = 0; i < counts[1]; ++i) split.val_relations.insert(relations[idx++]);
    for (std::size_t i = 0; i < counts[2]; ++i) split.test_relations.insert(relations[idx++]);

    for (const Instance& inst : instances) {
        if (split.train_relations.count(inst.relation)) {
            split.train.push_back(inst);
        } else if (split.val_relations.count(inst.relation)) {
            split.val.push_back(inst);
        } else {
            split.test.push_back(inst);
        }
    }
    return split;
}

// Catalog restricted to the relations that occur in the given instances.
inline RelationCatalog catalog_for(const RelationCatalog& catalog, const std::vector<Instance>& instances) {
    RelationCatalog out;
    for (const Instance& inst : instances) {
        auto it = catalog.find(inst.relation);
        if (it == catalog.end()) throw std::runtime_error("catalog_for: unknown relation " + inst.relation);
        out.emplace(it->first, it->second);
    }
    return out;
}

// Instance-level split that keeps every relation present on both sides;
// used by the supervised task where train and test share the label set.
inline std::pair<std::vector<Instance>, std::vector<Instance>> split_instances_stratified(
    const std::vector<Instance>& instances, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
        throw std::invalid_argument("split_instances_stratified: test_fraction must be in (0,1)");
    }
    std::map<std::string, std::vector<std::size_t>> by_relation;
    for (std::size_t i = 0; i < instances.size(); ++i) by_relation[instances[i].relation].push_back(i);

    std::mt19937_64 rng(seed);
    std::vector<Instance> train, test;
    for (auto& [rel, idx] : by_relation) {
        std::shuffle(idx.begin(), idx.end(), rng);
        std::size_t n_test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(idx.size())));
        n_test = std::min(n_test, idx.size() - 1);  // keep at least one training instance per relation
        n_test = std::max<std::size_t>(n_test, 1);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            (i < n_test ? test : train).push_back(instances[idx[i]]);
        }
    }
    return {std::move(train), std::move(test)};
}

// Keeps ceil(fraction * n) instances per relation, at least one each.
inline std::vector<Instance> take_fraction_stratified(const std::vector<Instance>& instances, double fraction,
                                                      std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw std::invalid_argument("take_fraction_stratified: fraction must be in (0,1]");
    }
    std::map<std::string, std::vector<std::size_t>> by_relation;
    for (std::size_t i = 0; i < instances.size(); ++i) by_relation[instances[i].relation].push_back(i);
    std::mt19937_64 rng(seed);
    std::vector<Instance> out;
    for (auto& [rel, idx] : by_relation) {
        std::shuffle(idx.begin(), idx.end(), rng);
        const std::size_t keep =
            std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(idx.size()))));
        for (std::size_t i = 0; i < std::min(keep, idx.size()); ++i) out.push_back(instances[idx[i]]);
    }
    return out;
}

}  // namespace mapre
