#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ising/lattice.hpp"
#include "ising/model.hpp"

namespace ising {

struct EnumCaps {
    int max_bundles = 24;
    int max_vertices = 20;
    // Brute-force state budget (spin histograms, trace lists) and frontier-table budget.
    std::uint64_t max_states = 1ull << 28;
    std::uint64_t max_frontier_states = 6'000'000;
};

class SizeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class EmptySupportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Neumaier compensated accumulator.
struct KahanSum {
    double sum = 0.0;
    double comp = 0.0;
    void add(double x) {
        double t = sum + x;
        if (std::abs(sum) >= std::abs(x))
            comp += (sum - t) + x;
        else
            comp += (x - t) + sum;
        sum = t;
    }
    double value() const { return sum + comp; }
};

std::uint64_t vertex_mask(const std::vector<int>& vs);

// ---------------------------------------------------------------- spins

enum class SpinBoundary { Free, Plus };

// Bit v of a state set means sigma_v = -1. Lattice vertices only; a ghost spin is fixed to +1.
struct SpinDistribution {
    int n = 0;
    std::vector<double> weight;
    double Z = 0.0;

    double prob(std::uint64_t s) const { return weight[s] / Z; }
    double expect_mask(std::uint64_t mask) const;
    double expect(const std::vector<int>& a) const { return expect_mask(vertex_mask(a)); }
    double total_probability() const;
};

// Free: g must have no ghost. Plus: ghost attached if absent, ghost spin fixed to +1.
SpinDistribution enumerate_ising(const Graph& g, const ModelParams& params, SpinBoundary bc,
                                 const EnumCaps& caps = {});
double truncated_two_point(const SpinDistribution& dist, int x, int y);

// Exact spin moments for uniform couplings and zero field, valid for every beta at once:
// one Gray-code pass over all spin states accumulates integer energy-level histograms of
// each observable sigma_A. Bundles listed in `scaled` carry coupling `scale` instead of 1.
class SpinMoments {
public:
    SpinMoments(const Graph& g, std::vector<std::uint64_t> masks, std::vector<int> scaled = {},
                const EnumCaps& caps = {});
    int num_observables() const { return static_cast<int>(masks_.size()); }
    std::uint64_t mask(int i) const { return masks_[i]; }
    int find(std::uint64_t mask) const;
    double expect(int obs, double beta, double scale = 1.0) const;

private:
    std::vector<std::uint64_t> masks_;
    int levels1_ = 0, levels2_ = 0, off1_ = 0, off2_ = 0;
    std::vector<std::int64_t> hist_;  // [(l1 * levels2 + l2) * K + k]; observable 0 is the constant
    std::vector<char> vanishing_;     // observable forced to zero by global spin flip
};

// ---------------------------------------------------------------- FK

struct FkDistribution {
    int nb = 0;
    std::vector<double> weight;
    double Z = 0.0;

    double prob(std::uint64_t s) const { return weight[s] / Z; }
    double edge_marginal(int b) const;
    double event(const std::function<bool(std::uint64_t)>& pred) const;
    double total_probability() const;
};

FkDistribution enumerate_fk(const Graph& g, double p, const BoundaryPartition& xi,
                            const EnumCaps& caps = {});
// Cluster representative per vertex for configuration bits `state` with xi pre-merged.
std::vector<int> fk_cluster_roots(const Graph& g, std::uint64_t state, const BoundaryPartition& xi);
int fk_cluster_count(const Graph& g, std::uint64_t state, const BoundaryPartition& xi);

// Event language for the frontier FK summation: conjunction of forced-open bundles,
// up to two set-to-set connections, and optionally "every cluster meets parity_set an even
// number of times" where clusters containing a ghost or wired class are exempt.
struct FkQuery {
    std::vector<int> forced_open;
    std::vector<std::pair<std::vector<int>, std::vector<int>>> connect;
    bool use_parity = false;
    std::vector<int> parity_set;
};

// Unnormalised sums over configurations (weights p_e^w (1-p_e)^(1-w) 2^k) for each p in ps.
std::vector<double> fk_frontier_sum(const Graph& g, const std::vector<double>& ps,
                                    const BoundaryPartition& xi, const FkQuery& q,
                                    const EnumCaps& caps = {});

// ---------------------------------------------------------------- currents

enum class Trace : std::uint8_t { Zero = 0, EvenPositive = 1, Odd = 2 };

// Trace states packed two bits per bundle.
struct TraceDistribution {
    int nb = 0;
    std::vector<std::uint64_t> states;
    std::vector<double> weight;
    double Z = 0.0;

    static Trace at(std::uint64_t s, int b) { return static_cast<Trace>((s >> (2 * b)) & 3u); }
    double prob(std::size_t i) const { return weight[i] / Z; }
    double event(const std::function<bool(std::uint64_t)>& pred) const;
    double total_probability() const;
};

double trace_weight(Trace t, double beta_e);

// On a graph with ghost the constraint is (sources of n) minus ghost = A; otherwise sources = A.
TraceDistribution enumerate_traces(const Graph& g, double beta, const std::vector<int>& sources,
                                   const EnumCaps& caps = {});

// Vertices joined to S by bundles of positive trace, ghost bundles never used.
std::vector<int> trace_cluster(const Graph& g, std::uint64_t state, const std::vector<int>& s);

// Probability under P^{A,empty}_{G+,G} (pair=true) or P^A_{G+} (pair=false) that some vertex
// of X is joined to some vertex of Y by positive (n1 + n2)-edges of G.
// Brute force over positivity patterns of G (ghost bundles summed in closed form).
double trace_connection_bruteforce(const Graph& g_plus, double beta, const std::vector<int>& a,
                                   const std::vector<int>& x, const std::vector<int>& y, bool pair,
                                   const EnumCaps& caps = {});

struct TraceQuery {
    std::vector<int> sources;
    bool pair = true;
    std::vector<int> x, y;
};

// Only event / total is meaningful; in pair mode both carry a common factor.
struct TraceSums {
    std::vector<double> total;
    std::vector<double> event;
};

// Frontier summation for the same quantity, for several beta at once.
TraceSums trace_frontier_sum(const Graph& g, const std::vector<double>& betas, const TraceQuery& q,
                             const EnumCaps& caps = {});

// Truncated enumeration of integer currents (each bundle value in [0, cap]) with the given
// source constraint, aggregated by trace. Returns trace codes and summed weights.
struct TruncatedCurrents {
    std::vector<std::uint64_t> states;
    std::vector<double> weight;
    double Z = 0.0;
    // Probability-level error bound implied by the per-bundle tail sums.
    double bound = 0.0;
};

// Product: every value vector in [0, cap]^E one at a time (at most 2e8 of them).
// ByBundle: the same sum accumulated bundle by bundle over (trace code, vertex parities).
enum class TruncationRoute { Auto, Product, ByBundle };

TruncatedCurrents enumerate_currents_truncated(const Graph& g, double beta,
                                               const std::vector<int>& sources, int cap,
                                               TruncationRoute route = TruncationRoute::Auto);
double current_tail(double beta_e, int cap);

}  // namespace ising
