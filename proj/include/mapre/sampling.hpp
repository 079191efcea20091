#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mapre/corpus.hpp"

namespace mapre {

// One pretraining pair: two sentences from the same (head, relation, tail)
// triple plus per-mention blanking decisions.
struct MatchingEntry {
    std::string relation;
    Instance a, b;
    bool blank_head_a = false, blank_tail_a = false;
    bool blank_head_b = false, blank_tail_b = false;
};

struct MatchingBatch {
    std::vector<MatchingEntry> entries;  // N entries with pairwise-distinct relations
};

struct EpisodeSpec {
    std::size_t ways = 5;
    std::size_t shots = 1;  // 0 denotes zero-shot
    std::size_t queries = 1;

    void validate() const {
        if (ways < 2) throw std::invalid_argument("episode spec: need at least 2 ways");
        if (queries < 1) throw std::invalid_argument("episode spec: need at least 1 query");
    }
};

struct Episode {
    std::vector<std::string> relations;            // length N
    std::vector<std::vector<Instance>> support;    // N x K
    std::vector<std::pair<Instance, std::size_t>> queries;  // (instance, true way index)
};

// Index over instances grouped by relation and by triple. Built once and
// shared by all sampling calls; sampling itself is pure given an rng.
class SamplingPool {
public:
    explicit SamplingPool(const std::vector<Instance>& instances) {
        for (const Instance& inst : instances) {
            by_relation_[inst.relation].push_back(inst);
            by_triple_[inst.relation][triple_key(inst)].push_back(inst);
        }
        for (const auto& [rel, groups] : by_triple_) {
            for (const auto& [key, sentences] : groups) {
                if (sentences.size() >= 2) {
                    pairable_relations_.push_back(rel);
                    break;
                }
            }
        }
        for (const auto& [rel, insts] : by_relation_) relations_.push_back(rel);
    }

    const std::vector<std::string>& relations() const { return relations_; }
    const std::vector<Instance>& instances_of(const std::string& rel) const {
        auto it = by_relation_.find(rel);
        if (it == by_relation_.end()) throw std::runtime_error("sampling: unknown relation " + rel);
        return it->second;
    }

    MatchingBatch sample_matching_batch(std::size_t n, double blank_prob, std::mt19937_64& rng) const {
        if (pairable_relations_.size() < n) {
            throw std::runtime_error("sample_matching_batch: need " + std::to_string(n) +
                                     " relations with a pairable triple, have " +
                                     std::to_string(pairable_relations_.size()));
        }
        std::vector<std::string> picked = pairable_relations_;
        std::shuffle(picked.begin(), picked.end(), rng);
        picked.resize(n);

        std::bernoulli_distribution blank(blank_prob);
        MatchingBatch batch;
        for (const std::string& rel : picked) {
            std::vector<const std::vector<Instance>*> groups;
            for (const auto& [key, sentences] : by_triple_.at(rel)) {
                if (sentences.size() >= 2) groups.push_back(&sentences);
            }
            const auto& sentences = *groups[std::uniform_int_distribution<std::size_t>(0, groups.size() - 1)(rng)];
            std::size_t i = std::uniform_int_distribution<std::size_t>(0, sentences.size() - 1)(rng);
            std::size_t j = std::uniform_int_distribution<std::size_t>(0, sentences.size() - 2)(rng);
            if (j >= i) ++j;

            MatchingEntry entry;
            entry.relation = rel;
            entry.a = sentences[i];
            entry.b = sentences[j];
            entry.blank_head_a = blank(rng);
            entry.blank_tail_a = blank(rng);
            entry.blank_head_b = blank(rng);
            entry.blank_tail_b = blank(rng);
            batch.entries.push_back(std::move(entry));
        }
        return batch;
    }

    Episode sample_episode(const EpisodeSpec& spec, std::mt19937_64& rng) const {
        spec.validate();
        if (relations_.size() < spec.ways) {
            throw std::runtime_error("sample_episode: need " + std::to_string(spec.ways) + " relations, have " +
                                     std::to_string(relations_.size()));
        }
        std::vector<std::string> picked = relations_;
        std::shuffle(picked.begin(), picked.end(), rng);
        picked.resize(spec.ways);

        Episode episode;
        episode.relations = picked;
        std::vector<std::vector<Instance>> remaining(spec.ways);
        for (std::size_t way = 0; way < spec.ways; ++way) {
            std::vector<Instance> pool = by_relation_.at(picked[way]);
            if (pool.size() < spec.shots + 1) {
                throw std::runtime_error("sample_episode: relation " + picked[way] + " has only " +
                                         std::to_string(pool.size()) + " instances for " +
                                         std::to_string(spec.shots) + "-shot sampling");
            }
            std::shuffle(pool.begin(), pool.end(), rng);
            episode.support.emplace_back(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(spec.shots));
            remaining[way].assign(pool.begin() + static_cast<std::ptrdiff_t>(spec.shots), pool.end());
        }
        std::uniform_int_distribution<std::size_t> pick_way(0, spec.ways - 1);
        for (std::size_t q = 0; q < spec.queries; ++q) {
            const std::size_t way = pick_way(rng);
            if (remaining[way].empty()) {
                throw std::runtime_error("sample_episode: relation " + picked[way] +
                                         " exhausted while sampling queries");
            }
            episode.queries.emplace_back(remaining[way].back(), way);
            remaining[way].pop_back();
        }
        return episode;
    }

private:
    static std::string triple_key(const Instance& inst) {
        auto span_text = [&](const std::pair<std::size_t, std::size_t>& span) {
            std::string s;
            for (std::size_t p = span.first; p <= span.second; ++p) {
                if (!s.empty()) s += ' ';
                s += inst.tokens[p];
            }
            return s;
        };
        return span_text(inst.head) + "\x1f" + span_text(inst.tail);
    }

    std::map<std::string, std::vector<Instance>> by_relation_;
    std::map<std::string, std::map<std::string, std::vector<Instance>>> by_triple_;
    std::vector<std::string> pairable_relations_;
    std::vector<std::string> relations_;
};

inline json episode_to_json(const Episode& episode) {
    json supports = json::array();
    for (const auto& way : episode.support) {
        json items = json::array();
        for (const Instance& inst : way) items.push_back(instance_to_json(inst));
        supports.push_back(std::move(items));
    }
    json queries = json::array();
    for (const auto& [inst, way] : episode.queries) {
        queries.push_back(json{{"instance", instance_to_json(inst)}, {"label", way}});
    }
    return json{{"relations", episode.relations}, {"support", supports}, {"queries", queries}};
}

inline Episode episode_from_json(const json& j) {
    Episode episode;
    episode.relations = j.at("relations").get<std::vector<std::string>>();
    for (const auto& way : j.at("support")) {
        std::vector<Instance> items;
        for (const auto& inst : way) items.push_back(instance_from_json(inst));
        episode.support.push_back(std::move(items));
    }
    for (const auto& q : j.at("queries")) {
        episode.queries.emplace_back(instance_from_json(q.at("instance")), q.at("label").get<std::size_t>());
    }
    return episode;
}

// One episode per line.
inline void save_episodes_jsonl(const std::string& path, const std::vector<Episode>& episodes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_episodes_jsonl: cannot open " + path + " for writing");
    for (const Episode& ep : episodes) out << episode_to_json(ep).dump() << '\n';
}

inline std::vector<Episode> load_episodes_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_episodes_jsonl: cannot open " + path);
    std::vector<Episode> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(episode_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw std::runtime_error("load_episodes_jsonl: " + path + " line " + std::to_string(line_no) + ": " +
                                     e.what());
        }
    }
    return out;
}

}  // namespace mapre
