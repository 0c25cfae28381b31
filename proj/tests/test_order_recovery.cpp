#include <algorithm>
#include <cmath>

#include "direcformer/order_recovery.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace df;

namespace {

ModelConfig trace_config(std::size_t depth, std::size_t frames, std::size_t heads,
                         std::size_t n_patches) {
    ModelConfig cfg;
    cfg.depth = depth;
    cfg.frames = frames;
    cfg.heads = heads;
    cfg.patch = 8;
    cfg.height = 8;
    cfg.width = 8 * n_patches;
    return cfg;
}

AttentionTrace make_trace(const ModelConfig& cfg,
                          const std::function<double(std::size_t, std::size_t, std::size_t,
                                                     std::size_t, std::size_t)>& value) {
    AttentionTrace trace;
    const std::size_t T = cfg.frames;
    trace.temporal.resize(cfg.depth);
    for (std::size_t l = 0; l < cfg.depth; ++l) {
        trace.temporal[l].resize(cfg.heads);
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            for (std::size_t s = 0; s < cfg.n_patches(); ++s) {
                std::vector<double> a(T * (T + 1));
                for (std::size_t t = 0; t < T; ++t)
                    for (std::size_t c = 0; c <= T; ++c)
                        a[t * (T + 1) + c] = value(l, h, s, t, c);
                trace.temporal[l][h].push_back(Tensor::from_data({T, T + 1}, std::move(a)));
            }
        }
    }
    return trace;
}

// exhaustive maximum over all node sequences, lexicographically smallest on ties
RecoveredOrder brute_force_path(const TemporalAdjacency& adj) {
    const std::size_t T = adj.frames;
    std::vector<std::size_t> p(T);
    for (std::size_t i = 0; i < T; ++i) p[i] = i;
    RecoveredOrder best;
    best.path_weight = -1e300;
    do {
        double w = 0.0;
        for (std::size_t j = 0; j + 1 < T; ++j) w += adj.at(p[j], p[j + 1]);
        if (w > best.path_weight) {
            best.path_weight = w;
            best.path = p;
        }
    } while (std::next_permutation(p.begin(), p.end()));
    best.order.assign(T, 0);
    for (std::size_t j = 0; j < T; ++j) best.order[best.path[j]] = j + 1;
    return best;
}

}  // namespace

TEST_CASE("adjacency from a constant trace is constant") {
    ModelConfig cfg = trace_config(2, 4, 3, 2);
    AttentionTrace trace = make_trace(cfg, [](auto...) { return 0.25; });
    TemporalAdjacency adj = temporal_adjacency(trace, cfg);
    REQUIRE(adj.frames == 4);
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t u = 0; u < 4; ++u) CHECK(adj.at(t, u) == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("single head and site passes through exactly") {
    ModelConfig cfg = trace_config(1, 5, 1, 1);
    auto value = [](std::size_t, std::size_t, std::size_t, std::size_t t, std::size_t c) {
        return std::sin(static_cast<double>(7 * t + c));
    };
    AttentionTrace trace = make_trace(cfg, value);
    TemporalAdjacency adj = temporal_adjacency(trace, cfg);
    for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t u = 0; u < 5; ++u) CHECK(adj.at(t, u) == value(0, 0, 0, t, u + 1));
}

TEST_CASE("adjacency equals the elementwise mean over heads and sites") {
    ModelConfig cfg = trace_config(3, 4, 2, 3);
    testutil::Rng rng(31);
    std::vector<double> vals(cfg.depth * cfg.heads * cfg.n_patches() * 4 * 5);
    for (double& v : vals) v = rng.uniform(-1.0, 1.0);
    auto at = [&](std::size_t l, std::size_t h, std::size_t s, std::size_t t, std::size_t c) {
        return vals[(((l * cfg.heads + h) * cfg.n_patches() + s) * 4 + t) * 5 + c];
    };
    AttentionTrace trace = make_trace(cfg, at);
    TemporalAdjacency adj = temporal_adjacency(trace, cfg);
    // only the last block contributes; mean over its heads and sites
    for (std::size_t t = 0; t < 4; ++t) {
        for (std::size_t u = 0; u < 4; ++u) {
            double mean = 0.0;
            for (std::size_t h = 0; h < cfg.heads; ++h)
                for (std::size_t s = 0; s < cfg.n_patches(); ++s)
                    mean += at(cfg.depth - 1, h, s, t, u + 1);
            mean /= static_cast<double>(cfg.heads * cfg.n_patches());
            CHECK(adj.at(t, u) == doctest::Approx(mean).epsilon(1e-12));
        }
    }

    AttentionTrace shallow = trace;
    shallow.temporal.pop_back();
    CHECK_THROWS_AS(temporal_adjacency(shallow, cfg), std::invalid_argument);
}

TEST_CASE("hamiltonian path follows the only positive chain") {
    TemporalAdjacency adj;
    adj.frames = 8;
    adj.weights.assign(64, -1.0);
    for (std::size_t t = 0; t + 1 < 8; ++t) adj.weights[t * 8 + t + 1] = 1.0;
    RecoveredOrder rec = max_weight_hamiltonian_path(adj);
    CHECK(rec.path == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7});
    CHECK(rec.path_weight == 7.0);
    CHECK(rec.order == Permutation{1, 2, 3, 4, 5, 6, 7, 8});
}

TEST_CASE("two frames pick the heavier orientation") {
    TemporalAdjacency adj;
    adj.frames = 2;
    adj.weights = {0.0, 0.2, 0.9, 0.0};  // 1->0 outweighs 0->1
    RecoveredOrder rec = max_weight_hamiltonian_path(adj);
    CHECK(rec.path == std::vector<std::size_t>{1, 0});
    CHECK(rec.path_weight == 0.9);
}

TEST_CASE("hamiltonian DP matches exhaustive enumeration") {
    testutil::Rng rng(47);
    for (int trial = 0; trial < 50; ++trial) {
        TemporalAdjacency adj;
        adj.frames = 4 + trial % 5;
        adj.weights.resize(adj.frames * adj.frames);
        // quarter-integer weights so ties actually occur and exercise the tie-break
        for (double& w : adj.weights) w = 0.25 * static_cast<double>(rng.below(9)) - 1.0;
        RecoveredOrder dp = max_weight_hamiltonian_path(adj);
        RecoveredOrder brute = brute_force_path(adj);
        CHECK(dp.path_weight == brute.path_weight);
        CHECK(dp.path == brute.path);
        CHECK(dp.order == brute.order);
        CHECK(is_permutation_valid(dp.order));
    }
}

TEST_CASE("relabeling the graph relabels the optimal path") {
    testutil::Rng rng(53);
    const std::size_t T = 6;
    TemporalAdjacency adj;
    adj.frames = T;
    adj.weights.resize(T * T);
    for (double& w : adj.weights) w = rng.uniform(-1.0, 1.0);
    std::vector<std::size_t> pi{3, 0, 5, 1, 4, 2};
    TemporalAdjacency relabeled;
    relabeled.frames = T;
    relabeled.weights.resize(T * T);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t u = 0; u < T; ++u)
            relabeled.weights[pi[t] * T + pi[u]] = adj.at(t, u);
    RecoveredOrder base = max_weight_hamiltonian_path(adj);
    RecoveredOrder moved = max_weight_hamiltonian_path(relabeled);
    std::vector<std::size_t> expected(T);
    for (std::size_t j = 0; j < T; ++j) expected[j] = pi[base.path[j]];
    CHECK(moved.path_weight == doctest::Approx(base.path_weight).epsilon(1e-12));
    CHECK(moved.path == expected);
}

TEST_CASE("hamiltonian frame-count guard") {
    TemporalAdjacency adj;
    adj.frames = 1;
    adj.weights = {0.0};
    CHECK_THROWS_AS(max_weight_hamiltonian_path(adj), std::invalid_argument);
    adj.frames = 21;
    CHECK_THROWS_AS(max_weight_hamiltonian_path(adj), std::invalid_argument);
}

TEST_CASE("longest common subsequence") {
    std::vector<std::size_t> inc{1, 2, 3, 4, 5, 6, 7, 8};
    std::vector<std::size_t> dec{8, 7, 6, 5, 4, 3, 2, 1};
    CHECK(lcs(inc, inc) == 8);
    CHECK(lcs(inc, dec) == 1);
    CHECK(lcs({1, 2, 4, 3, 5, 6, 7, 8}, inc) == 7);
    CHECK(lcs({}, inc) == 0);
}

TEST_CASE("order accuracy") {
    Permutation o{1, 2, 3, 4, 5, 6, 7, 8};
    Permutation rev{8, 7, 6, 5, 4, 3, 2, 1};
    Permutation swapped{1, 2, 3, 5, 4, 6, 7, 8};
    CHECK(order_accuracy(o, o) == 100.0);
    CHECK(order_accuracy(rev, o) == 12.5);
    CHECK(order_accuracy(swapped, o) == 87.5);
    CHECK(order_accuracy(swapped, o) == order_accuracy(o, swapped));
    CHECK_THROWS_AS(order_accuracy(Permutation{1, 2}, o), std::invalid_argument);
}

TEST_CASE("random order accuracy baseline") {
    CHECK(random_orderacc_baseline(1, 1000, 3) == 100.0);
    double two = random_orderacc_baseline(2, 20000, 3);
    CHECK(two > 73.0);
    CHECK(two < 77.0);
    CHECK(random_orderacc_baseline(8, 5000, 3) == random_orderacc_baseline(8, 5000, 3));
    CHECK_THROWS_AS(random_orderacc_baseline(0, 1000, 3), std::invalid_argument);
}
