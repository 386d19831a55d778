#pragma once

#include <cstdint>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "ising/fk.hpp"
#include "ising/lattice.hpp"
#include "ising/stats.hpp"

namespace ising {

// Named boundary partitions of ∂Λ_n: free, wired, halves (two classes split by the sign of the
// first coordinate), alternating (classes by parity of the coordinate sum).
BoundaryPartition boundary_by_name(const Graph& g, const std::string& name);

struct CouplingOptions {
    int d = 2;
    int burn_in = 200;     // pair sweeps before the first run of a chain
    int thin = 2;          // pair sweeps between runs
    int refresh = 0;       // pair sweeps over unsampled bundles before each reveal
    int final_sweeps = 3;  // sweeps of the lower chain over the remainder before it is copied
    double epsilon = 0.1;  // G_t threshold as a fraction of n^(d-1)
};

// Two FK chains on one graph driven by the same uniforms, lo <= hi throughout.
class PairChain {
public:
    PairChain(const Graph& g, double p, BoundaryPartition xi_lo, BoundaryPartition xi_hi, std::uint64_t seed,
              std::uint64_t chain, std::vector<char> hi_pinned = {});

    // One sweep over the bundles with frozen[e] == 0 (all bundles when frozen is null).
    void sweep(const std::vector<char>* frozen = nullptr);
    // Resample `edges` in the lower chain given the rest, then copy them to the upper one.
    void resample_identically(const std::vector<int>& edges, int sweeps);

    const Graph& graph() const { return *g_; }
    FkSampler& lo_ctx() { return lo_ctx_; }
    FkSampler& hi_ctx() { return hi_ctx_; }

    BondConfig lo, hi;

private:
    const Graph* g_;
    FkSampler lo_ctx_, hi_ctx_;
    std::vector<char> pinned_;
    std::uint64_t seed_, chain_;
    std::uint64_t sweeps_ = 0;
};

// ---------------------------------------------------------------- block-by-block coupling

struct CouplingStep {
    int block = -1;             // index into the block family
    std::vector<int> sampled;   // D_t, lexicographic
    bool very_good = false;
    std::vector<int> frontier;  // B_{t+1}, ascending
    int sampled_blocks = 0;     // |A_{t+1}|
    int sampled_edges = 0;      // |C_{t+1}|
};

struct CouplingTrace {
    int d = 2, n = 0, k = 1;
    double p = 0.0;
    std::string xi;
    int covered = 0;                   // blocks cover Λ_covered
    std::vector<int> shell;            // bundles outside every block, sampled first
    std::vector<int> initial_frontier; // B_0
    std::vector<CouplingStep> steps;
    std::vector<char> in_c;            // C_T membership per bundle

    int T() const { return static_cast<int>(steps.size()); }
    int c_size() const;
};

struct CouplingResult {
    std::shared_ptr<const Graph> graph;
    std::shared_ptr<const BoxLattice> lattice;
    std::shared_ptr<const BlockFamily> family;
    BoundaryPartition xi;
    BondConfig lo;  // ω^ξ
    BondConfig hi;  // ω^1
    CouplingTrace trace;
};

class MixingCoupler {
public:
    MixingCoupler(int n, int k, double p, const std::string& xi, std::uint64_t seed, std::uint64_t chain = 0,
                  const CouplingOptions& opt = {});
    CouplingResult next();

    const Graph& graph() const { return *graph_; }
    const BlockFamily& family() const { return *family_; }

private:
    CouplingOptions opt_;
    int n_, k_;
    double p_;
    std::string xi_name_;
    std::shared_ptr<const Graph> graph_;
    std::shared_ptr<const BoxLattice> lat_;
    std::shared_ptr<const BlockFamily> family_;
    BoundaryPartition xi_;
    std::vector<std::vector<int>> block_edges_, nbrs_;
    std::vector<int> shell_, initial_;
    int covered_ = 0;
    std::unique_ptr<PairChain> chain_;
};

CouplingResult run_mixing_coupling(int n, int k, double p, const std::string& xi, std::uint64_t seed,
                                   const CouplingOptions& opt = {});

struct CouplingReport {
    long order_checks = 0, order_failures = 0;
    long off_checks = 0, off_failures = 0;
    long boundary_checks = 0, boundary_failures = 0;
    bool trace_ok = true;
    std::string detail;

    bool ordered() const { return order_failures == 0; }
    bool equal_off_c() const { return off_failures == 0; }
    bool boundary_agrees() const { return boundary_failures == 0; }
    bool ok() const { return ordered() && equal_off_c() && boundary_agrees() && trace_ok; }
};

// Exact checks of one run: order, agreement off C_T, and that ω^ξ and ω^1 restricted to C_T
// induce the same connections among the boundary vertices of the remainder.
CouplingReport verify_coupling_props(const CouplingResult& r);

// Longest run of not-very-good steps with consecutive blocks disjoint and within 3k of each other.
int bad_chain_length(const CouplingResult& r);
// C_T meets E_{n/2}.
bool reaches_half(const CouplingResult& r);

struct ReachEstimate {
    int n = 0, k = 1;
    double p = 0.0;
    std::string xi;
    Proportion reach;
    MeanSe chain_length;
    MeanSe steps;
};

ReachEstimate estimate_reach(int n, int k, double p, const std::string& xi, long replicas, std::uint64_t seed = 1,
                             const CouplingOptions& opt = {}, int per_chain = 2000);

void write_coupling_csv(std::ostream& os, const std::vector<CouplingResult>& runs);

// ---------------------------------------------------------------- annulus coupling

struct AnnulusShell {
    int inner = 0, outer = 0;   // C_t = E_inner, C_{t+1} = E_outer
    std::vector<int> d;         // D_t
    std::vector<int> d_rest;    // D'_t
    int bad_blocks = 0;         // bad blocks inside Λ_inner within 2k of the shell
    bool g = false;             // |D_t| < ε n^(d-1)
    bool h = false;             // every bundle of D_t open
    bool agree = false;         // induced boundary conditions on E_n \ (C_t ∪ D_t) coincide
};

struct AnnulusTrace {
    int d = 3, n = 0, k = 1;
    double p = 0.0, epsilon = 0.1;
    std::vector<AnnulusShell> shells;
    int merged_at = -1;  // first shell after which the remainder was sampled identically
};

struct AnnulusResult {
    std::shared_ptr<const Graph> graph;
    std::shared_ptr<const BoxLattice> lattice;
    std::shared_ptr<const BlockFamily> family;
    BoundaryPartition core;  // Λ_{n/2} as one class: φ^0 on the collapsed box
    BondConfig lo;           // ω ~ φ^0_{Λ_n}
    BondConfig hi;           // ω^•, open on E_{n/2}
    AnnulusTrace trace;
};

// Shell radii n/2 = r_0 < r_1 < ... = n, steps of 2k; the last step is cut at n.
std::vector<int> annulus_radii(int n, int k);

// D_t from the pair restricted to E_inner only.
std::vector<int> annulus_region(const BoxLattice& lat, const BlockFamily& fam, const BondConfig& lo,
                                const BondConfig& hi, int inner, int outer);

class AnnulusCoupler {
public:
    AnnulusCoupler(int d, int n, int k, double p, std::uint64_t seed, std::uint64_t chain = 0,
                   const CouplingOptions& opt = {});
    AnnulusResult next();

private:
    CouplingOptions opt_;
    int d_, n_, k_;
    double p_;
    std::shared_ptr<const Graph> graph_;
    std::shared_ptr<const BoxLattice> lat_;
    std::shared_ptr<const BlockFamily> family_;
    BoundaryPartition core_;
    std::vector<int> radii_;
    std::vector<int> edge_radius_;  // smallest r with the bundle in E_r
    std::unique_ptr<PairChain> chain_;
};

AnnulusResult run_annulus_coupling(int n, int k, double p, std::uint64_t seed, const CouplingOptions& opt = {});

struct AnnulusCheck {
    long gh_shells = 0, gh_failures = 0;
    long measurable_checks = 0, measurable_failures = 0;
    bool ordered = true;
    bool ok() const { return gh_failures == 0 && measurable_failures == 0 && ordered; }
};

// On G_t ∧ H_t the two configurations agree off C_t ∪ D_t; D_t recomputed from the pair on C_t.
AnnulusCheck check_annulus_run(const AnnulusResult& r);

struct ClaimsReport {
    int n = 0;
    long runs = 0;
    long gh_shells = 0, gh_failures = 0;
    Proportion h_given_g;
    Proportion no_g;      // ∩_t G_t^c
    Proportion some_g;
    bool measurable = true;
};

ClaimsReport measure_claims(const std::vector<AnnulusResult>& runs);
// Streams runs from one coupler chain per `per_chain` replicas without keeping them.
ClaimsReport annulus_claims(int d, int n, int k, double p, long replicas, std::uint64_t seed = 1,
                            const CouplingOptions& opt = {}, int per_chain = 1000);

void write_annulus_csv(std::ostream& os, const std::vector<AnnulusResult>& runs);

}  // namespace ising
