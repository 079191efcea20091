#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <set>

#include "mapre/corpus.hpp"
#include "mapre/sampling.hpp"
#include "mapre/tokens.hpp"

using namespace mapre;

namespace {

GeneratedCorpus make_corpus() {
    CorpusGenParams p;
    p.num_relations = 12;
    p.entities_per_relation = 4;
    p.sentences_per_triple = 3;
    p.vocab_size = 80;
    p.seed = 17;
    return generate_corpus(p);
}

std::string instance_key(const Instance& inst) {
    std::string key = inst.relation + "|";
    for (const std::string& t : inst.tokens) key += t + " ";
    key += std::to_string(inst.head.first) + "," + std::to_string(inst.tail.first);
    return key;
}

}  // namespace

TEST_CASE("sample_matching_batch: N pairs with distinct relations sharing triples") {
    GeneratedCorpus corpus = make_corpus();
    SamplingPool pool(corpus.instances);
    std::mt19937_64 rng(5);
    MatchingBatch batch = pool.sample_matching_batch(4, 0.7, rng);
    REQUIRE(batch.entries.size() == 4);  // 8 sentences

    std::set<std::string> relations;
    for (const MatchingEntry& e : batch.entries) {
        relations.insert(e.relation);
        REQUIRE(e.a.relation == e.relation);
        REQUIRE(e.b.relation == e.relation);
        // both sentences share head and tail entity
        auto head_of = [](const Instance& i) { return i.tokens[i.head.first]; };
        auto tail_of = [](const Instance& i) { return i.tokens[i.tail.first]; };
        REQUIRE(head_of(e.a) == head_of(e.b));
        REQUIRE(tail_of(e.a) == tail_of(e.b));
        REQUIRE(instance_key(e.a) != instance_key(e.b));  // two distinct sentences
    }
    REQUIRE(relations.size() == 4);
}

TEST_CASE("sample_matching_batch: blank_prob 0 produces no [BLANK] downstream") {
    GeneratedCorpus corpus = make_corpus();
    SamplingPool pool(corpus.instances);
    std::mt19937_64 rng(6);
    MatchingBatch batch = pool.sample_matching_batch(6, 0.0, rng);
    for (const MatchingEntry& e : batch.entries) {
        REQUIRE_FALSE(e.blank_head_a);
        REQUIRE_FALSE(e.blank_tail_a);
        TokenSequence seq = build_token_sequence(e.a, corpus.vocab, e.blank_head_a, e.blank_tail_a, 40);
        for (std::size_t id : seq.ids) REQUIRE(id != kBlank);
    }
}

TEST_CASE("sample_matching_batch: empirical blank rate near 0.7") {
    GeneratedCorpus corpus = make_corpus();
    SamplingPool pool(corpus.instances);
    std::mt19937_64 rng(7);
    std::size_t blanked = 0, mentions = 0;
    while (mentions < 10000) {
        MatchingBatch batch = pool.sample_matching_batch(4, 0.7, rng);
        for (const MatchingEntry& e : batch.entries) {
            blanked += e.blank_head_a + e.blank_tail_a + e.blank_head_b + e.blank_tail_b;
            mentions += 4;
        }
    }
    const double rate = static_cast<double>(blanked) / static_cast<double>(mentions);
    REQUIRE(rate >= 0.68);
    REQUIRE(rate <= 0.72);
}

TEST_CASE("sample_matching_batch: distinct relations hold for every sampled batch") {
    GeneratedCorpus corpus = make_corpus();
    SamplingPool pool(corpus.instances);
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        MatchingBatch batch = pool.sample_matching_batch(8, 0.7, rng);
        std::set<std::string> rels;
        for (const MatchingEntry& e : batch.entries) rels.insert(e.relation);
        REQUIRE(rels.size() == 8);
    }
}

TEST_CASE("sample_matching_batch: same seed gives the same batch, too few relations error") {
    GeneratedCorpus corpus = make_corpus();
    SamplingPool pool(corpus.instances);
    std::mt19937_64 r1(9), r2(9);
    MatchingBatch a = pool.sample_matching_batch(4, 0.7, r1);
    MatchingBatch b = pool.sample_matching_batch(4, 0.7, r2);
    for (std::size_t i = 0; i < 4; ++i) {
        REQUIRE(a.entries[i].relation == b.entries[i].relation);
        REQUIRE(instance_key(a.entries[i].a) == instance_key(b.entries[i].a));
        REQUIRE(a.entries[i].blank_head_a == b.entries[i].blank_head_a);
    }
    std::mt19937_64 r3(1);
    REQUIRE_THROWS_WITH(pool.sample_matching_batch(100, 0.7, r3), Catch::Matchers::ContainsSubstring("relations"));
}

TEST_CASE("sample_episode: 5-way 1-shot with one query, and the 2-way 2-shot shape") {
    GeneratedCorpus corpus = make_corpus();
    SamplingPool pool(corpus.instances);
    std::mt19937_64 rng(10);
    Episode ep = pool.sample_episode({5, 1, 1}, rng);
    REQUIRE(ep.relations.size() == 5);
    REQUIRE(ep.support.size() == 5);
    for (const auto& way : ep.support) REQUIRE(way.size() == 1);
    REQUIRE(ep.queries.size() == 1);
    REQUIRE(ep.queries[0].second < 5);

    Episode two_two = pool.sample_episode({2, 2, 1}, rng);
    REQUIRE(two_two.relations.size() == 2);
    for (const auto& way : two_two.support) REQUIRE(way.size() == 2);
}

TEST_CASE("sample_episode: support and queries are disjoint and correctly labeled") {
    GeneratedCorpus corpus = make_corpus();
    SamplingPool pool(corpus.instances);
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 300; ++trial) {
        Episode ep = pool.sample_episode({5, 1, 3}, rng);
        std::set<std::string> support_keys;
        for (std::size_t way = 0; way < ep.support.size(); ++way) {
            for (const Instance& inst : ep.support[way]) {
                REQUIRE(inst.relation == ep.relations[way]);
                support_keys.insert(instance_key(inst));
            }
        }
        for (const auto& [inst, way] : ep.queries) {
            REQUIRE(inst.relation == ep.relations[way]);
            REQUIRE(support_keys.count(instance_key(inst)) == 0);
        }
    }
}

TEST_CASE("sample_episode: test-split episodes contain only test-split relations") {
    GeneratedCorpus corpus = make_corpus();
    DatasetSplit split = split_relations_disjoint(corpus.instances, SplitFractions{2.0 / 3, 1.0 / 6, 1.0 / 6}, 2);
    SamplingPool pool(split.test);
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        Episode ep = pool.sample_episode({2, 1, 2}, rng);
        for (const std::string& rel : ep.relations) REQUIRE(split.test_relations.count(rel) == 1);
    }
}

TEST_CASE("sample_episode: reproducible, validates spec, names the thin relation") {
    GeneratedCorpus corpus = make_corpus();
    SamplingPool pool(corpus.instances);
    std::mt19937_64 r1(13), r2(13);
    Episode a = pool.sample_episode({5, 1, 2}, r1);
    Episode b = pool.sample_episode({5, 1, 2}, r2);
    REQUIRE(a.relations == b.relations);
    REQUIRE(instance_key(a.queries[0].first) == instance_key(b.queries[0].first));

    std::mt19937_64 r3(14);
    REQUIRE_THROWS(pool.sample_episode({1, 1, 1}, r3));   // ways < 2
    REQUIRE_THROWS(pool.sample_episode({5, 1, 0}, r3));   // queries < 1

    // one relation with a single instance: K+1 unreachable, error names it
    std::vector<Instance> thin;
    Instance a1;
    a1.tokens = {"e1", "x", "e2"};
    a1.head = {0, 0};
    a1.tail = {2, 2};
    a1.relation = "rich";
    thin.push_back(a1);
    Instance a2 = a1;
    a2.tokens = {"e1", "y", "e2"};
    thin.push_back(a2);
    Instance b1 = a1;
    b1.relation = "thin";
    thin.push_back(b1);
    SamplingPool thin_pool(thin);
    std::mt19937_64 r4(15);
    REQUIRE_THROWS_WITH(thin_pool.sample_episode({2, 1, 1}, r4), Catch::Matchers::ContainsSubstring("thin"));
}

TEST_CASE("episodes serialize to jsonl and back") {
    GeneratedCorpus corpus = make_corpus();
    SamplingPool pool(corpus.instances);
    std::mt19937_64 rng(16);
    std::vector<Episode> episodes;
    for (int i = 0; i < 3; ++i) episodes.push_back(pool.sample_episode({3, 2, 2}, rng));
    const std::string path = "/tmp/mapre_test_episodes.jsonl";
    save_episodes_jsonl(path, episodes);
    std::vector<Episode> loaded = load_episodes_jsonl(path);
    REQUIRE(loaded.size() == episodes.size());
    for (std::size_t i = 0; i < episodes.size(); ++i) {
        REQUIRE(loaded[i].relations == episodes[i].relations);
        REQUIRE(loaded[i].queries.size() == episodes[i].queries.size());
        for (std::size_t q = 0; q < episodes[i].queries.size(); ++q) {
            REQUIRE(loaded[i].queries[q].second == episodes[i].queries[q].second);
            REQUIRE(instance_key(loaded[i].queries[q].first) == instance_key(episodes[i].queries[q].first));
        }
    }
    std::remove(path.c_str());
}
