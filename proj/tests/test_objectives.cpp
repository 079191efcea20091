#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "mapre/gradcheck.hpp"
#include "mapre/objectives.hpp"
#include "support/oracles.hpp"

using namespace mapre;

namespace {

std::vector<double> randvec(std::mt19937_64& rng, std::size_t n, double sd = 1.0) {
    std::normal_distribution<double> dist(0.0, sd);
    std::vector<double> out(n);
    for (double& v : out) v = dist(rng);
    return out;
}

std::vector<Tensor> as_tensors(const std::vector<std::vector<double>>& rows) {
    std::vector<Tensor> out;
    for (const auto& r : rows) out.push_back(Tensor::from({r.size()}, r));
    return out;
}

}  // namespace

TEST_CASE("ccr_loss: frozen orthonormal N=2 case") {
    // anchor A1: positive e^1 against two e^0 negatives -> -log(e/(e+2)) = 0.5514
    std::vector<std::vector<double>> u_a = {{1, 0}, {0, 1}};
    std::vector<std::vector<double>> u_b = {{1, 0}, {0, 1}};
    Tape tape;
    Tensor loss = ccr_loss(tape, as_tensors(u_a), as_tensors(u_b), 1.0);
    REQUIRE(loss.item() == Catch::Approx(0.5514).margin(5e-5));
    REQUIRE(loss.item() == Catch::Approx(oracles::ccr(u_a, u_b, 1.0)).margin(1e-12));
}

TEST_CASE("ccr_loss: identical vectors give log(3) for N=2") {
    std::vector<std::vector<double>> same = {{0.3, -0.7}, {0.3, -0.7}};
    Tape tape;
    Tensor loss = ccr_loss(tape, as_tensors(same), as_tensors(same), 1.0);
    REQUIRE(loss.item() == Catch::Approx(std::log(3.0)).margin(1e-12));
}

TEST_CASE("ccr_loss: strictly decreases as the positive dot grows") {
    double previous = std::numeric_limits<double>::infinity();
    for (double a : {0.5, 1.0, 2.0, 4.0}) {
        std::vector<std::vector<double>> u_a = {{a, 0, 0}, {0, 0, 1}};
        std::vector<std::vector<double>> u_b = {{1, 0, 0}, {0, 0, 1}};
        Tape tape;
        const double loss = ccr_loss(tape, as_tensors(u_a), as_tensors(u_b), 1.0).item();
        REQUIRE(loss < previous);
        previous = loss;
    }
}

TEST_CASE("ccr_loss: invariant to jointly permuting the pairs") {
    std::mt19937_64 rng(21);
    std::vector<std::vector<double>> u_a, u_b;
    for (int i = 0; i < 5; ++i) {
        u_a.push_back(randvec(rng, 6));
        u_b.push_back(randvec(rng, 6));
    }
    Tape t1;
    const double base = ccr_loss(t1, as_tensors(u_a), as_tensors(u_b), 0.7).item();
    std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
    std::vector<std::vector<double>> pa, pb;
    for (std::size_t i : perm) {
        pa.push_back(u_a[i]);
        pb.push_back(u_b[i]);
    }
    Tape t2;
    REQUIRE(ccr_loss(t2, as_tensors(pa), as_tensors(pb), 0.7).item() == Catch::Approx(base).margin(1e-12));
}

TEST_CASE("ccr_loss: rejects N < 2") {
    std::vector<std::vector<double>> one = {{1, 0}};
    Tape tape;
    REQUIRE_THROWS_WITH(ccr_loss(tape, as_tensors(one), as_tensors(one), 1.0),
                        Catch::Matchers::ContainsSubstring("negatives"));
}

TEST_CASE("crr_loss: single relation denominator has one term, loss is zero") {
    std::vector<std::vector<double>> w = {{0.5, 0.5}, {1.0, -1.0}};
    std::vector<std::vector<double>> v = {{0.2, 0.9}};
    Tape tape;
    REQUIRE(crr_loss(tape, as_tensors(w), as_tensors(v), {0, 0}, 1.0).item() == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("crr_loss: frozen hand-computed term") {
    // -log(e / (e + 1)) = 0.3133
    std::vector<std::vector<double>> w = {{1, 0}};
    std::vector<std::vector<double>> v = {{1, 0}, {0, 1}};
    Tape tape;
    Tensor loss = crr_loss(tape, as_tensors(w), as_tensors(v), {0}, 1.0);
    REQUIRE(loss.item() == Catch::Approx(0.3133).margin(5e-5));
}

TEST_CASE("crr_loss: invariant under joint relabeling of relations") {
    std::mt19937_64 rng(31);
    std::vector<std::vector<double>> w, v;
    for (int i = 0; i < 6; ++i) w.push_back(randvec(rng, 4));
    for (int i = 0; i < 3; ++i) v.push_back(randvec(rng, 4));
    std::vector<std::size_t> pair_index = {0, 0, 1, 1, 2, 2};
    Tape t1;
    const double base = crr_loss(t1, as_tensors(w), as_tensors(v), pair_index, 1.0).item();

    std::vector<std::size_t> perm = {2, 0, 1};  // new position of old relation j
    std::vector<std::vector<double>> pv(3);
    for (std::size_t j = 0; j < 3; ++j) pv[perm[j]] = v[j];
    std::vector<std::size_t> pid;
    for (std::size_t idx : pair_index) pid.push_back(perm[idx]);
    Tape t2;
    REQUIRE(crr_loss(t2, as_tensors(w), as_tensors(pv), pid, 1.0).item() == Catch::Approx(base).margin(1e-12));
}

TEST_CASE("crr_loss: decreases when the matched dot product increases") {
    double previous = std::numeric_limits<double>::infinity();
    for (double a : {0.1, 0.5, 1.5}) {
        std::vector<std::vector<double>> w = {{a, 0}};
        std::vector<std::vector<double>> v = {{1, 0}, {0, 1}};
        Tape tape;
        const double loss = crr_loss(tape, as_tensors(w), as_tensors(v), {0}, 1.0).item();
        REQUIRE(loss < previous);
        previous = loss;
    }
}

TEST_CASE("crr_loss: pair index out of range") {
    std::vector<std::vector<double>> w = {{1, 0}};
    std::vector<std::vector<double>> v = {{1, 0}};
    Tape tape;
    REQUIRE_THROWS_WITH(crr_loss(tape, as_tensors(w), as_tensors(v), {1}, 1.0),
                        Catch::Matchers::ContainsSubstring("out of range"));
}

TEST_CASE("contrastive losses match brute-force recomputation for N up to 8") {
    std::mt19937_64 rng(101);
    for (std::size_t n = 2; n <= 8; ++n) {
        for (int draw = 0; draw < 20; ++draw) {
            std::vector<std::vector<double>> u_a, u_b, w, v;
            std::vector<std::size_t> pair_index;
            for (std::size_t i = 0; i < n; ++i) {
                u_a.push_back(randvec(rng, 8));
                u_b.push_back(randvec(rng, 8));
                v.push_back(randvec(rng, 4));
            }
            for (std::size_t i = 0; i < 2 * n; ++i) {
                w.push_back(randvec(rng, 4));
                pair_index.push_back(i % n);
            }
            const double temperature = 0.5 + 0.1 * static_cast<double>(draw % 5);
            Tape tape;
            const double got_ccr = ccr_loss(tape, as_tensors(u_a), as_tensors(u_b), temperature).item();
            const double got_crr = crr_loss(tape, as_tensors(w), as_tensors(v), pair_index, temperature).item();
            REQUIRE(got_ccr >= 0.0);
            REQUIRE(got_crr >= 0.0);
            REQUIRE(got_ccr == Catch::Approx(oracles::ccr(u_a, u_b, temperature)).margin(1e-10));
            REQUIRE(got_crr == Catch::Approx(oracles::crr(w, v, pair_index, temperature)).margin(1e-10));
        }
    }
}

TEST_CASE("mlm_loss: empty targets give zero") {
    Tensor hidden = Tensor::zeros({3, 4});
    Tensor table = Tensor::zeros({8, 4});
    Tape tape;
    REQUIRE(mlm_loss(tape, hidden, {}, table).item() == 0.0);
}

TEST_CASE("mlm_loss: uniform logits give log of vocabulary size") {
    std::mt19937_64 rng(4);
    Tensor hidden = Tensor::zeros({2, 4});  // zero hidden states -> all logits zero
    Tensor table = Tensor::from({8, 4}, randvec(rng, 32));
    Tape tape;
    Tensor loss = mlm_loss(tape, hidden, {{0, 3}, {1, 5}}, table);
    REQUIRE(loss.item() == Catch::Approx(std::log(8.0)).margin(1e-12));
}

TEST_CASE("mlm_loss: target position out of range") {
    Tensor hidden = Tensor::zeros({2, 4});
    Tensor table = Tensor::zeros({8, 4});
    Tape tape;
    REQUIRE_THROWS_WITH(mlm_loss(tape, hidden, {{5, 0}}, table), Catch::Matchers::ContainsSubstring("out of range"));
}

TEST_CASE("mlm_loss: gradient w.r.t. the embedding table passes finite differences") {
    std::mt19937_64 rng(17);
    Tensor hidden = Tensor::param("hidden", {3, 4}, randvec(rng, 12));
    Tensor table = Tensor::param("table", {6, 4}, randvec(rng, 24));
    std::vector<NamedParam> params{{"hidden", hidden, false}, {"table", table, false}};
    auto f = [&](Tape& tape) { return mlm_loss(tape, hidden, {{0, 2}, {2, 5}, {1, 0}}, table); };
    GradCheckReport report = finite_difference_check(f, params, 1e-5, 1e-4);
    REQUIRE(report.max_rel_error < 1e-4);
}

TEST_CASE("contrastive losses pass finite-difference gradient checks") {
    for (int seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(500 + seed);
        std::vector<NamedParam> params;
        std::vector<Tensor> u_a, u_b;
        for (int i = 0; i < 3; ++i) {
            Tensor a = Tensor::param("u_a" + std::to_string(i), {4}, randvec(rng, 4));
            Tensor b = Tensor::param("u_b" + std::to_string(i), {4}, randvec(rng, 4));
            u_a.push_back(a);
            u_b.push_back(b);
            params.push_back({a.name(), a, false});
            params.push_back({b.name(), b, false});
        }
        auto f = [&](Tape& tape) { return ccr_loss(tape, u_a, u_b, 0.8); };
        REQUIRE(finite_difference_check(f, params, 1e-5, 1e-4).max_rel_error < 1e-4);
    }

    // full L_CRR on random 2x2 embeddings
    for (int seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(600 + seed);
        std::vector<NamedParam> params;
        std::vector<Tensor> w, v;
        for (int i = 0; i < 4; ++i) {
            Tensor wi = Tensor::param("w" + std::to_string(i), {2}, randvec(rng, 2));
            w.push_back(wi);
            params.push_back({wi.name(), wi, false});
        }
        for (int i = 0; i < 2; ++i) {
            Tensor vi = Tensor::param("v" + std::to_string(i), {2}, randvec(rng, 2));
            v.push_back(vi);
            params.push_back({vi.name(), vi, false});
        }
        auto f = [&](Tape& tape) { return crr_loss(tape, w, v, {0, 0, 1, 1}, 1.0); };
        REQUIRE(finite_difference_check(f, params, 1e-5, 1e-4).max_rel_error < 1e-4);
    }
}

TEST_CASE("total_loss: fixed-order sum and frozen combined value") {
    Tape tape;
    TotalLoss zero = total_loss(tape, Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(0));
    REQUIRE(zero.breakdown.total == 0.0);

    std::vector<std::vector<double>> u = {{1, 0}, {0, 1}};
    Tensor ccr = ccr_loss(tape, as_tensors(u), as_tensors(u), 1.0);
    std::vector<std::vector<double>> w = {{1, 0}};
    std::vector<std::vector<double>> v = {{1, 0}, {0, 1}};
    Tensor crr = crr_loss(tape, as_tensors(w), as_tensors(v), {0}, 1.0);
    Tensor hidden = Tensor::zeros({1, 4});
    Tensor table = Tensor::zeros({8, 4});
    Tensor mlm = mlm_loss(tape, hidden, {{0, 1}}, table);

    TotalLoss combined = total_loss(tape, ccr, crr, mlm);
    REQUIRE(combined.breakdown.total == Catch::Approx(2.9441).margin(5e-5));
    REQUIRE(combined.breakdown.total ==
            combined.breakdown.l_ccr + combined.breakdown.l_crr + combined.breakdown.l_mlm);
    REQUIRE(combined.total.item() == Catch::Approx(combined.breakdown.total).margin(1e-12));
}

TEST_CASE("total_loss: names the non-finite component") {
    Tape tape;
    Tensor bad = Tensor::scalar(std::numeric_limits<double>::quiet_NaN());
    REQUIRE_THROWS_WITH(total_loss(tape, bad, Tensor::scalar(0), Tensor::scalar(0)),
                        Catch::Matchers::ContainsSubstring("l_ccr"));
    REQUIRE_THROWS_WITH(total_loss(tape, Tensor::scalar(0), bad, Tensor::scalar(0)),
                        Catch::Matchers::ContainsSubstring("l_crr"));
    REQUIRE_THROWS_WITH(total_loss(tape, Tensor::scalar(0), Tensor::scalar(0), bad),
                        Catch::Matchers::ContainsSubstring("l_mlm"));
}
