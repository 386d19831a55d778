#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ising/lattice.hpp"
#include "ising/model.hpp"
#include "ising/rng.hpp"
#include "ising/union_find.hpp"

namespace ising {

// One bit per bundle; a bundle is open when at least one of its parallel edges is.
class BondConfig {
public:
    BondConfig() = default;
    explicit BondConfig(int nb, bool open = false) : bits_(nb, open ? 1 : 0) {}

    int size() const { return static_cast<int>(bits_.size()); }
    bool open(int b) const { return bits_[b] != 0; }
    void set(int b, bool v) {
        if (open(b) != v) {
            bits_[b] = v ? 1 : 0;
            ++generation_;
        }
    }
    void fill(bool v);
    int num_open() const;
    // Bumped on every change, so cached cluster maps can detect staleness.
    std::uint64_t generation() const { return generation_; }
    const std::vector<std::uint8_t>& bits() const { return bits_; }

    bool operator==(const BondConfig& o) const { return bits_ == o.bits_; }
    // Pointwise order.
    bool leq(const BondConfig& o) const;

private:
    std::vector<std::uint8_t> bits_;
    std::uint64_t generation_ = 0;
};

struct ClusterMap {
    std::vector<int> root;  // per vertex
    int count = 0;          // k_xi: clusters containing a vertex of the graph
    std::uint64_t generation = 0;

    bool connected(int u, int v) const { return root[u] == root[v]; }
    bool stale(const BondConfig& w) const { return w.generation() != generation; }
    std::vector<int> cluster_of(int v) const;
};

// Rebuilt from scratch; xi classes are merged before any edge.
ClusterMap clusters(const Graph& g, const BondConfig& w, const BoundaryPartition& xi);

// Independent breadth-first cluster labelling, for cross-checks.
std::vector<int> clusters_bfs(const Graph& g, const BondConfig& w, const BoundaryPartition& xi);

using SpinConfig = std::vector<std::int8_t>;

// Open probability of a bundle given everything else: p_e if its endpoints are joined
// without it, p_e / (2 - p_e) otherwise, with p_e the bundle probability.
inline double conditional_open(double pe, bool connected_off) { return connected_off ? pe : pe / (2.0 - pe); }

// Heat-bath context for one (graph, p, xi); owns the search buffers.
class FkSampler {
public:
    FkSampler(const Graph& g, double p, BoundaryPartition xi);

    const Graph& graph() const { return *g_; }
    double p() const { return p_; }
    const BoundaryPartition& xi() const { return xi_; }
    double bundle_prob(int b) const { return pe_[b]; }

    // Endpoints of bundle e joined by open bundles other than e (xi classes merged).
    bool connected_off(const BondConfig& w, int e);
    double open_probability(const BondConfig& w, int e) { return conditional_open(pe_[e], connected_off(w, e)); }
    bool heat_bath_step(BondConfig& w, int e, double u);
    // Every bundle once; uniforms keyed by (seed, chain, sweep, bundle).
    void sweep(BondConfig& w, std::uint64_t seed, std::uint64_t chain, std::uint64_t sweep_index,
               bool random_order = false);
    void sweep_edges(BondConfig& w, const std::vector<int>& edges, std::uint64_t seed, std::uint64_t chain,
                     std::uint64_t sweep_index);

private:
    int node_of_class(int c) const { return nv_ + c; }
    template <class F>
    void for_each_nbr(const BondConfig& w, int node, int skip, F&& f) const;

    const Graph* g_;
    double p_;
    BoundaryPartition xi_;
    int nv_ = 0;
    std::vector<double> pe_;
    std::vector<std::vector<int>> members_;
    std::vector<std::uint32_t> mark_;
    std::uint32_t stamp_ = 0;
    std::vector<int> qa_, qb_;
};

BondConfig heat_bath_step(const Graph& g, const BondConfig& w, double p, const BoundaryPartition& xi, int e,
                          double u);

// Supported boundaries: free on a ghost-free graph, free on G+ (ghost spin +1), and a single
// wired class (spin +1). Other partitions have no spin counterpart here.
bool es_supported(const Graph& g, const BoundaryPartition& xi);
void es_sweep(const Graph& g, SpinConfig& sigma, BondConfig& w, double p, const BoundaryPartition& xi,
              Stream& rng);

class OrderViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Both bundles resampled with the same uniform. Requires lo <= hi and xi_lo refining xi_hi.
void monotone_pair_step(FkSampler& lo_ctx, FkSampler& hi_ctx, BondConfig& lo, BondConfig& hi, int e, double u);
std::pair<BondConfig, BondConfig> monotone_pair_step(const Graph& g, const BondConfig& lo, const BondConfig& hi,
                                                     double p, const BoundaryPartition& xi_lo,
                                                     const BoundaryPartition& xi_hi, int e, double u);

// ---------------------------------------------------------------- chains

struct ChainOptions {
    int burn_in = 1000;
    int thin = 10;
    int samples = 1000;
    std::uint64_t seed = 1;
    std::uint64_t chain = 0;
    bool random_order = false;
    int batches = 20;
};

// Mean with a batch-means standard error.
struct Estimate {
    double mean = 0.0;
    double se = 0.0;
    long n = 0;
};

struct ChainRecord {
    std::uint64_t chain;
    long sweep;
    std::string observable;
    double value;
};

struct ChainResult {
    std::vector<Estimate> edge;                  // per bundle
    std::vector<Estimate> pair;                  // per requested bundle pair, P[both open]
    std::vector<Estimate> spin;                  // per vertex (es chains only)
    std::vector<ChainRecord> trace;              // densities per recorded sweep
};

enum class ChainKind { HeatBath, EdwardsSokal };

ChainResult run_chain(const Graph& g, double p, const BoundaryPartition& xi, ChainKind kind,
                      const ChainOptions& opt, const std::vector<std::pair<int, int>>& pairs = {});

// Batch-means estimate over a series of observations.
Estimate batch_means(const std::vector<double>& xs, int batches);

void write_chain_csv(std::ostream& os, const std::vector<ChainRecord>& rows);

// Replicas run on worker threads; results are stored by replica index.
void parallel_replicas(int n, const std::function<void(int)>& body, int threads = 0);

}  // namespace ising
