#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ising/fk.hpp"
#include "ising/lattice.hpp"
#include "ising/stats.hpp"

namespace ising {

enum class BlockState : std::uint8_t { Bad = 0, Good = 1 };

// Crossing-only mode keeps condition (a) alone, which is an increasing event.
enum class GoodMode { Full, CrossingOnly };

struct BlockVerdict {
    bool crossing = false;        // (a): some cluster of w restricted to B meets all 2d faces
    bool paths_contained = false; // (b): every open simple path with k edges lies in that cluster
    int crossing_clusters = 0;
    BlockState state() const { return crossing && paths_contained ? BlockState::Good : BlockState::Bad; }
};

// Only bundles with both endpoints in B are used; k is the path length of condition (b).
BlockVerdict inspect_block(const BoxLattice& lat, const BondConfig& w, const Box& b, int k);
BlockState classify_block(const BoxLattice& lat, const BondConfig& w, const Box& b, int k,
                          GoodMode mode = GoodMode::Full);

// Simple open path with exactly k edges inside the listed vertex set, by bounded search.
bool has_open_path(const BoxLattice& lat, const BondConfig& w, const Box& b, const std::vector<int>& cluster, int k);

struct BlockField {
    BlockFamily family;
    std::vector<BlockState> state;
    std::vector<char> very_good;  // filled by block_field_pair only

    int count_good() const;
};

BlockField block_field(const BoxLattice& lat, const BondConfig& w, const BlockFamily& fam,
                       GoodMode mode = GoodMode::Full);
// Very good: good in w_xi and w_xi = w_1 on the block.
BlockField block_field_pair(const BoxLattice& lat, const BondConfig& w_xi, const BondConfig& w_1,
                            const BlockFamily& fam);
bool very_good(const BoxLattice& lat, const BondConfig& w_xi, const BondConfig& w_1, const Box& b, int k);

enum class BoundaryKind { Free, Wired };
const char* to_string(BoundaryKind k);

struct SamplingPlan {
    int burn_in = 40;  // cluster sweeps before the first sample of a chain
    int thin = 3;
    int per_chain = 25;
    std::uint64_t seed = 1;
};

struct SuperconnectEstimate {
    int d = 3, k = 1;
    double p = 0.0;
    BoundaryKind xi = BoundaryKind::Free;
    Proportion good;
    bool worst = false;
};

// Probability that the centred block Λ_k is good under φ^ξ on Λ_2k.
SuperconnectEstimate estimate_superconnect(int d, int k, double p, BoundaryKind xi, long replicas,
                                           const SamplingPlan& plan = {}, GoodMode mode = GoodMode::Full);
// Both boundary conditions; the smaller estimate is flagged as the worst case.
std::vector<SuperconnectEstimate> estimate_superconnect_worst(int d, int k, double p, long replicas,
                                                              const SamplingPlan& plan = {},
                                                              GoodMode mode = GoodMode::Full);

struct BoxConnectionEstimate {
    int d = 3, n = 0, N = 0;
    double p = 0.0;
    Point x{}, y{};
    Proportion connected;
};

// φ^0 on Λ_N of {Λ_n(x) <-> Λ_n(y)}; default centres are opposite corners.
BoxConnectionEstimate estimate_box_connection(int d, int n, int N, double p, long replicas,
                                              const SamplingPlan& plan = {});
BoxConnectionEstimate estimate_box_connection(int d, int n, int N, double p, const Point& x, const Point& y,
                                              long replicas, const SamplingPlan& plan = {});

void write_superconnect_csv(std::ostream& os, const std::vector<SuperconnectEstimate>& rows);

}  // namespace ising
