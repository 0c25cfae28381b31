#include "direcformer/permutations.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace df {

std::string to_string(HammingObjective o) {
    return o == HammingObjective::MinHamming ? "min-hamming" : "max-hamming";
}

HammingObjective hamming_objective_from_string(const std::string& s) {
    if (s == "min-hamming" || s == "min") return HammingObjective::MinHamming;
    if (s == "max-hamming" || s == "max") return HammingObjective::MaxHamming;
    throw std::invalid_argument("unknown objective: " + s);
}

std::size_t hamming(const Permutation& a, const Permutation& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("hamming: length mismatch: " + std::to_string(a.size()) +
                                    " vs " + std::to_string(b.size()));
    std::size_t d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
    return d;
}

bool is_permutation_valid(const Permutation& p) {
    std::vector<bool> seen(p.size(), false);
    for (std::size_t v : p) {
        if (v < 1 || v > p.size() || seen[v - 1]) return false;
        seen[v - 1] = true;
    }
    return true;
}

PermutationSpec PermutationSet::spec_at(std::size_t index) const {
    if (index >= perms.size())
        throw std::out_of_range("permutation set index " + std::to_string(index) + " out of " +
                                std::to_string(perms.size()));
    return PermutationSpec{perms[index], index};
}

std::size_t PermutationSet::index_of(const Permutation& p) const {
    for (std::size_t i = 0; i < perms.size(); ++i)
        if (perms[i] == p) return i;
    throw std::invalid_argument("permutation is not a member of the set");
}

Permutation pick_next(const std::vector<Permutation>& chosen,
                      const std::vector<Permutation>& candidates,
                      HammingObjective objective) {
    const Permutation* best = nullptr;
    long long best_score = 0;
    for (const Permutation& cand : candidates) {
        if (std::find(chosen.begin(), chosen.end(), cand) != chosen.end()) continue;
        long long score = 0;
        for (const Permutation& c : chosen) score += static_cast<long long>(hamming(cand, c));
        if (objective == HammingObjective::MinHamming) score = -score;
        if (!best || score > best_score) {
            best = &cand;
            best_score = score;
        }
    }
    if (!best) throw std::invalid_argument("pick_next: every candidate is a duplicate");
    return *best;
}

namespace {

double factorial(std::size_t n) {
    double f = 1.0;
    for (std::size_t i = 2; i <= n; ++i) f *= static_cast<double>(i);
    return f;
}

Permutation random_permutation(std::size_t frames, std::mt19937_64& rng) {
    Permutation p(frames);
    for (std::size_t i = 0; i < frames; ++i) p[i] = i + 1;
    for (std::size_t i = frames; i > 1; --i)
        std::swap(p[i - 1], p[rng() % i]);
    return p;
}

// ranks fit in a nibble for T <= 12, so a permutation packs into one u64
std::uint64_t pack(const Permutation& p) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
        v |= static_cast<std::uint64_t>(p[i]) << (4 * i);
    return v;
}

std::size_t packed_hamming(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a ^ b;
    std::uint64_t y = (x | (x >> 1) | (x >> 2) | (x >> 3)) & 0x1111111111111111ULL;
    return static_cast<std::size_t>(__builtin_popcountll(y));
}

}  // namespace

PermutationSet generate_permutation_set(std::size_t frames, std::size_t count,
                                        HammingObjective objective, std::uint64_t seed,
                                        std::size_t pool_size) {
    if (frames == 0 || frames > 12)
        throw std::invalid_argument("permutation set: frames must be in [1,12], got " +
                                    std::to_string(frames));
    if (static_cast<double>(count) > factorial(frames))
        throw std::invalid_argument("permutation set: count " + std::to_string(count) +
                                    " exceeds " + std::to_string(frames) + "!");
    if (count == 0 || pool_size == 0)
        throw std::invalid_argument("permutation set: count and pool size must be positive");

    std::mt19937_64 rng(seed);
    PermutationSet set;
    set.frames = frames;
    set.seed = seed;
    set.objective = objective;
    set.pool_size = pool_size;
    set.perms.push_back(random_permutation(frames, rng));
    std::vector<std::uint64_t> chosen{pack(set.perms[0])};
    std::set<std::uint64_t> members(chosen.begin(), chosen.end());
    while (set.perms.size() < count) {
        // same greedy rule as pick_next, on nibble-packed permutations
        std::vector<Permutation> pool;
        pool.reserve(pool_size);
        for (std::size_t i = 0; i < pool_size; ++i)
            pool.push_back(random_permutation(frames, rng));
        const Permutation* best = nullptr;
        std::uint64_t best_packed = 0;
        long long best_score = 0;
        for (const Permutation& cand : pool) {
            const std::uint64_t cp = pack(cand);
            if (members.count(cp)) continue;
            long long score = 0;
            for (std::uint64_t c : chosen) score += static_cast<long long>(packed_hamming(cp, c));
            if (objective == HammingObjective::MinHamming) score = -score;
            if (!best || score > best_score) {
                best = &cand;
                best_packed = cp;
                best_score = score;
            }
        }
        if (!best) continue;  // all duplicates; resample (count <= T! guarantees progress)
        set.perms.push_back(*best);
        chosen.push_back(best_packed);
        members.insert(best_packed);
    }
    return set;
}

Tensor apply_permutation(const Tensor& clip, const Permutation& order) {
    if (clip.rank() < 1 || clip.shape()[0] != order.size())
        throw std::invalid_argument("apply_permutation: clip has " +
                                    shape_str(clip.shape()) + " but permutation length is " +
                                    std::to_string(order.size()));
    if (!is_permutation_valid(order))
        throw std::invalid_argument("apply_permutation: invalid permutation");
    const std::size_t T = order.size();
    const std::size_t frame_size = clip.size() / T;
    std::vector<double> out(clip.size());
    const auto& in = clip.data();
    for (std::size_t t = 0; t < T; ++t) {
        const std::size_t src = order[t] - 1;
        std::copy(in.begin() + src * frame_size, in.begin() + (src + 1) * frame_size,
                  out.begin() + t * frame_size);
    }
    return Tensor::from_data(clip.shape(), std::move(out));
}

Permutation inverse_permutation(const Permutation& order) {
    Permutation inv(order.size());
    for (std::size_t t = 0; t < order.size(); ++t) inv[order[t] - 1] = t + 1;
    return inv;
}

Permutation compose(const Permutation& first, const Permutation& second) {
    if (first.size() != second.size())
        throw std::invalid_argument("compose: length mismatch");
    Permutation out(first.size());
    for (std::size_t t = 0; t < first.size(); ++t) out[t] = first[second[t] - 1];
    return out;
}

std::size_t order_target(const PermutationSet& set, const PermutationSpec& spec) {
    if (spec.set_index >= set.perms.size() || set.perms[spec.set_index] != spec.order)
        throw std::invalid_argument("order_target: spec is not a member of the set");
    return spec.set_index;
}

void save_permutation_set(const std::string& path, const PermutationSet& set) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "T=" << set.frames << " count=" << set.perms.size() << " seed=" << set.seed
        << " objective=" << to_string(set.objective) << " pool=" << set.pool_size << "\n";
    for (const auto& p : set.perms) {
        for (std::size_t i = 0; i < p.size(); ++i) out << (i ? " " : "") << p[i];
        out << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

PermutationSet load_permutation_set(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string header;
    if (!std::getline(in, header)) throw std::runtime_error("empty catalogue: " + path);
    PermutationSet set;
    std::size_t count = 0;
    {
        std::istringstream hs(header);
        std::string field;
        while (hs >> field) {
            auto eq = field.find('=');
            if (eq == std::string::npos)
                throw std::runtime_error("bad catalogue header: " + header);
            std::string key = field.substr(0, eq), value = field.substr(eq + 1);
            if (key == "T") set.frames = std::stoull(value);
            else if (key == "count") count = std::stoull(value);
            else if (key == "seed") set.seed = std::stoull(value);
            else if (key == "objective") set.objective = hamming_objective_from_string(value);
            else if (key == "pool") set.pool_size = std::stoull(value);
            else throw std::runtime_error("unknown catalogue header field: " + key);
        }
    }
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        Permutation p;
        std::size_t v;
        while (ls >> v) p.push_back(v);
        if (!is_permutation_valid(p) || p.size() != set.frames)
            throw std::runtime_error("bad catalogue line: " + line);
        set.perms.push_back(std::move(p));
    }
    if (set.perms.size() != count)
        throw std::runtime_error("catalogue count mismatch in " + path);
    return set;
}

}  // namespace df
