#include "direcformer/order_recovery.hpp"

#include <algorithm>
#include <limits>
#include <random>
#include <stdexcept>

namespace df {

TemporalAdjacency temporal_adjacency(const AttentionTrace& trace, const ModelConfig& cfg) {
    if (trace.temporal.size() != cfg.depth || trace.temporal.empty())
        throw std::invalid_argument("temporal_adjacency: trace depth mismatch");
    const std::size_t T = cfg.frames, N = cfg.n_patches(), H = cfg.heads;
    const auto& last = trace.temporal.back();
    TemporalAdjacency adj;
    adj.frames = T;
    adj.weights.assign(T * T, 0.0);
    const double inv = 1.0 / static_cast<double>(H * N);
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t s = 0; s < N; ++s) {
            const Tensor& a = last[h][s];  // T x (T+1), column 0 = class key
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t u = 0; u < T; ++u)
                    adj.weights[t * T + u] += a(t, u + 1) * inv;
        }
    }
    return adj;
}

RecoveredOrder max_weight_hamiltonian_path(const TemporalAdjacency& adj) {
    const std::size_t T = adj.frames;
    if (T < 2 || T > 20)
        throw std::invalid_argument("hamiltonian path: frames must be in [2,20], got " +
                                    std::to_string(T));
    const std::size_t full = (std::size_t{1} << T) - 1;
    // best[v][mask] = max weight of a path starting at v over exactly `mask`
    std::vector<std::vector<double>> best(T, std::vector<double>(full + 1, 0.0));
    for (std::size_t mask = 1; mask <= full; ++mask) {
        for (std::size_t v = 0; v < T; ++v) {
            if (!(mask >> v & 1)) continue;
            const std::size_t rest = mask ^ (std::size_t{1} << v);
            if (rest == 0) continue;  // single node: weight 0
            double b = -std::numeric_limits<double>::infinity();
            for (std::size_t u = 0; u < T; ++u)
                if (rest >> u & 1) b = std::max(b, adj.at(v, u) + best[u][rest]);
            best[v][mask] = b;
        }
    }
    RecoveredOrder result;
    std::size_t v = 0;
    for (std::size_t c = 1; c < T; ++c)
        if (best[c][full] > best[v][full]) v = c;  // smallest index on ties
    result.path_weight = best[v][full];
    result.path.push_back(v);
    std::size_t mask = full;
    while (result.path.size() < T) {
        const std::size_t rest = mask ^ (std::size_t{1} << v);
        std::size_t next = T;
        for (std::size_t u = 0; u < T && next == T; ++u)
            if ((rest >> u & 1) && adj.at(v, u) + best[u][rest] == best[v][mask]) next = u;
        result.path.push_back(next);
        mask = rest;
        v = next;
    }
    result.order.assign(T, 0);
    for (std::size_t j = 0; j < T; ++j) result.order[result.path[j]] = j + 1;
    return result;
}

std::size_t lcs(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double order_accuracy(const Permutation& recovered, const Permutation& truth) {
    if (recovered.size() != truth.size())
        throw std::invalid_argument("order_accuracy: length mismatch: " +
                                    std::to_string(recovered.size()) + " vs " +
                                    std::to_string(truth.size()));
    return 100.0 * static_cast<double>(lcs(recovered, truth)) /
           static_cast<double>(truth.size());
}

double random_orderacc_baseline(std::size_t frames, std::size_t trials, std::uint64_t seed) {
    if (frames == 0) throw std::invalid_argument("baseline: frames must be positive");
    std::mt19937_64 rng(seed);
    auto shuffle = [&](Permutation& p) {
        for (std::size_t i = p.size(); i > 1; --i) std::swap(p[i - 1], p[rng() % i]);
    };
    Permutation a(frames), b(frames);
    for (std::size_t i = 0; i < frames; ++i) a[i] = b[i] = i + 1;
    double total = 0.0;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        shuffle(a);
        shuffle(b);
        total += order_accuracy(a, b);
    }
    return total / static_cast<double>(trials);
}

}  // namespace df
