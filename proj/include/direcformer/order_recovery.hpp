// Frame-order correction: maximum-weight Hamiltonian path over the averaged
// last-block temporal attention graph, plus the LCS-based OrderAcc metric.

#pragma once

#include <cstdint>
#include <vector>

#include "direcformer/model.hpp"
#include "direcformer/permutations.hpp"

namespace df {

struct TemporalAdjacency {
    std::size_t frames = 0;
    std::vector<double> weights;  // row-major T x T; [t][t'] = attention query t -> key t'

    double at(std::size_t t, std::size_t u) const { return weights[t * frames + u]; }
};

struct RecoveredOrder {
    std::vector<std::size_t> path;  // 0-based input slots in predicted chronological order
    Permutation order;              // 1-based ranks: order[path[j]] = j+1
    double path_weight = 0.0;
};

// Mean over heads and spatial sites of the last block's frame-to-frame
// attention; the class-token key column is dropped.
TemporalAdjacency temporal_adjacency(const AttentionTrace& trace, const ModelConfig& cfg);

// Exact maximum over all node sequences of the summed directed edge weights,
// via subset DP over (visited set, first node). Ties break to the
// lexicographically smallest path. Requires 2 <= T <= 20.
RecoveredOrder max_weight_hamiltonian_path(const TemporalAdjacency& adj);

std::size_t lcs(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b);

// 100 * LCS(recovered, truth) / T
double order_accuracy(const Permutation& recovered, const Permutation& truth);

// Monte-Carlo mean OrderAcc of uniformly random permutation pairs.
double random_orderacc_baseline(std::size_t frames, std::size_t trials, std::uint64_t seed);

}  // namespace df
