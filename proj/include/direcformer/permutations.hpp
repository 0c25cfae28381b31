// Frame-permutation catalogue: greedy Hamming-distance driven generation,
// permutation application, and set indexing for the order-prediction task.
//
// A permutation is stored as 1-based ranks: order[t] is the original position
// of the frame now sitting at slot t.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "direcformer/tensor.hpp"

namespace df {

using Permutation = std::vector<std::size_t>;

enum class HammingObjective { MinHamming, MaxHamming };

std::string to_string(HammingObjective o);
HammingObjective hamming_objective_from_string(const std::string& s);

struct PermutationSpec {
    Permutation order;      // 1-based ranks, a bijection of {1..T}
    std::size_t set_index;  // position in the owning PermutationSet
};

struct PermutationSet {
    std::vector<Permutation> perms;
    std::size_t frames = 0;
    std::uint64_t seed = 0;
    HammingObjective objective = HammingObjective::MinHamming;
    std::size_t pool_size = 1000;

    PermutationSpec spec_at(std::size_t index) const;
    // returns the set index of an exact match; throws if absent
    std::size_t index_of(const Permutation& p) const;
};

std::size_t hamming(const Permutation& a, const Permutation& b);

bool is_permutation_valid(const Permutation& p);

// Greedy construction: a seeded random start, then repeatedly admit the
// candidate (from a random pool) whose total Hamming distance to the chosen
// set is smallest (MinHamming) or largest (MaxHamming); duplicates rejected.
PermutationSet generate_permutation_set(std::size_t frames, std::size_t count,
                                        HammingObjective objective, std::uint64_t seed,
                                        std::size_t pool_size = 1000);

// One greedy step: the best non-duplicate candidate by aggregate Hamming
// distance to `chosen` (ties broken by candidate order).
Permutation pick_next(const std::vector<Permutation>& chosen,
                      const std::vector<Permutation>& candidates,
                      HammingObjective objective);

// Output frame at slot t is input frame order[t]; clip shape {T,...}.
Tensor apply_permutation(const Tensor& clip, const Permutation& order);

Permutation inverse_permutation(const Permutation& order);
Permutation compose(const Permutation& first, const Permutation& second);

std::size_t order_target(const PermutationSet& set, const PermutationSpec& spec);

// Text catalogue: header "T=<T> count=<n> seed=<s> objective=<o> pool=<p>",
// then one space-separated permutation per line.
void save_permutation_set(const std::string& path, const PermutationSet& set);
PermutationSet load_permutation_set(const std::string& path);

}  // namespace df
