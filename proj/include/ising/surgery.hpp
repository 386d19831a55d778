#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ising/lattice.hpp"
#include "ising/rng.hpp"

namespace ising {

class PreconditionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A search or certificate failure that the construction rules out; carries an instance dump.
class SurgeryDefect : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Nonnegative integer per bundle. Ghost bundles carry the bundle total.
class Current {
public:
    Current() = default;
    explicit Current(const Graph& g);
    Current(const Graph& g, std::vector<int> values);

    const Graph& graph() const { return *g_; }
    int size() const { return static_cast<int>(n_.size()); }
    int operator[](int b) const { return n_[b]; }
    const std::vector<int>& values() const { return n_; }
    void set(int b, int value);
    void add(int b, int delta) { set(b, n_[b] + delta); }

    // Δ_v(n), sum over the bundles at v.
    int degree(int v) const;
    // Lattice vertices of odd degree, ascending; the ghost is reported separately.
    const std::vector<int>& sources() const;
    bool ghost_odd() const;
    bool zero() const;

    Current operator+(const Current& o) const;
    bool operator==(const Current& o) const { return n_ == o.n_; }
    bool operator!=(const Current& o) const { return n_ != o.n_; }

private:
    void refresh() const;

    const Graph* g_ = nullptr;
    std::vector<int> n_;
    mutable bool valid_ = false;
    mutable std::vector<int> sources_;
    mutable bool ghost_odd_ = false;
};

std::vector<int> sources(const Current& n);
// Lattice vertices joined to S by bundles with positive current; the ghost is never traversed.
std::vector<int> cluster_of(const Current& n, const std::vector<int>& s);
std::vector<char> cluster_mask(const Current& n, const std::vector<int>& s);

// ---------------------------------------------------------------- events

struct EventCounts {
    int c_xy = 0, c_yx = 0, b_xy = 0, b_yx = 0;
    double threshold = 0.0;  // N / (4n)

    bool C_xy() const { return c_xy >= threshold; }
    bool C_yx() const { return c_yx >= threshold; }
    bool B_xy() const { return b_xy >= threshold; }
    bool B_yx() const { return b_yx >= threshold; }
};

// Some vertex of `mask` inside b has at least two lattice neighbours in `mask`.
bool has_branch_vertex(const BoxLattice& lat, const std::vector<char>& mask, const Box& b);

// Block counts over `grid` (blocks of radius grid.k in Λ_N). C counts blocks missing the
// (n1+n2)-cluster of the first point, B counts blocks meeting it; both require a branch vertex
// of the n1-cluster of the second point.
EventCounts detect_events(const Current& n1, const Current& n2, int x, int y, const BlockFamily& grid);

// ---------------------------------------------------------------- gluing paths

struct GluingInstance {
    std::shared_ptr<const Graph> graph;  // Λ_N with ghost
    std::shared_ptr<const BoxLattice> lattice;
    int n = 1;                           // block radius
    double beta = 0.0;
    int x = -1, y = -1;
    std::vector<int> S;
    Current n1, n2;                      // n2 vanishes on ghost bundles
    std::vector<Box> Z;

    int dim() const { return graph->dim(); }
    int N() const { return lattice->radius(); }
};

GluingInstance make_instance(int d, int N, int n, double beta, const Point& x, const Point& y);

// C_{n1+n2}(S) and C_{n1}(y) for one instance, with the block tests of the gluing step.
class GluingContext {
public:
    explicit GluingContext(const GluingInstance& inst);

    const GluingInstance& instance() const { return *inst_; }
    const BoxLattice& lattice() const { return *inst_->lattice; }
    bool in_s(int v) const { return in_s_[v] != 0; }
    bool in_y(int v) const { return in_y_[v] != 0; }
    const std::vector<char>& s_mask() const { return in_s_; }
    const std::vector<char>& y_mask() const { return in_y_; }

    // Meets C_{n1+n2}(S) and holds a vertex of C_{n1}(y) with two neighbours in C_{n1}(y).
    bool admissible(const Box& b) const;
    std::vector<int> branch_vertices(const Box& b) const;

private:
    const GluingInstance* inst_;
    std::vector<char> in_s_, in_y_;
};

struct PathPi {
    Box block;
    std::vector<int> v;          // v_0 .. v_k
    std::vector<int> t_set;      // T_B
    std::vector<int> s_set;      // S_B
    std::string strategy;
    int k() const { return static_cast<int>(v.size()) - 1; }
    int end() const { return v.back(); }
};

struct PiCheck {
    bool start = false;      // v_0 in C(S), within 3dn of the centre
    bool end = false;        // v_k in C_{n1}(y), within 3dn of the centre
    bool shortest = false;   // nearest-neighbour path of length |v_0 - v_k|_1
    bool interior = false;   // interior off both clusters
    bool connected = false;  // T_B connected inside S_B
    std::string detail;
    bool ok() const { return start && end && shortest && interior && connected; }
};

// Fills t_set and s_set of `pi` from its vertex list and checks the five conditions.
PiCheck check_pi(const GluingContext& ctx, PathPi& pi);

// Certified path for block b: candidates in proof order, then exhaustive over endpoint pairs.
PathPi find_pi(const GluingContext& ctx, const Box& b);

// ---------------------------------------------------------------- surgery

struct SurgeryCertificate {
    Current n1, n2;            // input
    Current n1_0, n2_0;        // after closing the edges next to the path interiors
    Current n2_1;              // after opening the paths (n1 is unchanged by this step)
    Current m1, m2;            // pairing currents
    Current n1p, n2p;          // output
    std::vector<PathPi> paths;
    std::vector<int> modified;  // bundles where the pair changed
    bool a = false, b = false, c = false, d = false;
    bool paths_ok = false;      // every stored path passes check_pi
    bool sources_in_t = false;  // new sources of the intermediate stages lie in ∪T_B
    bool size_ok = false;       // |E| within |Z| times the E_2 volume of a 6d^2 n path
    std::string detail;

    bool ok() const { return a && b && c && d && paths_ok && sources_in_t && size_ok; }
};

// Recomputes every flag of `cert` from its stored currents and paths.
void verify_certificate(const GluingContext& ctx, SurgeryCertificate& cert);

// Applies the three steps for every block of inst.Z. Throws PreconditionError on inadmissible
// input and SurgeryDefect when the certificate fails.
SurgeryCertificate surgery(const GluingInstance& inst);

// Upper bound on |E_2(Π)| over nearest-neighbour paths Π with `len` edges in Z^d, ghost bundles included.
long e2_volume_bound(int d, int len);

// w(n1)w(n2) / (w(m1)w(m2)) with w(n) = Π (μβ)^{n_e} / n_e!, the pairs differing only on E.
double weight_ratio(const Current& n1, const Current& n2, const Current& m1, const Current& m2,
                    const std::vector<int>& E, double beta);
double log_weight_ratio(const Current& n1, const Current& n2, const Current& m1, const Current& m2,
                        const std::vector<int>& E, double beta);
// Per edge and current Σ_{l≥m} b^{l-m} m!/l! + [m≤2] Σ_{l≤m} b^{l-m} m!/l!, multiplied over E.
double ratio_bound(const Current& m1, const Current& m2, const std::vector<int>& E, double beta);
double log_ratio_bound(const Current& m1, const Current& m2, const std::vector<int>& E, double beta);
double edge_ratio_bound(int m, double b);

// ---------------------------------------------------------------- many-to-many counting

struct MvmpInstance {
    std::vector<double> mu;                 // weights on {0, .., |S|-1}
    std::vector<int> A, B;
    std::vector<std::pair<int, int>> R;     // pairs (s, s') with s in A and s' in B
};

struct MvmpResult {
    int K = 0;                 // min over A of |R(s)|
    double k = 0.0;            // max over B of μ(R^{-1}(s')) / μ(s')
    double mu_a = 0.0, mu_b = 0.0;
    double bound = 0.0;        // (k / K) μ(B)
    bool vacuous = false;      // K = 0
    bool holds = false;
};

MvmpResult mvmp_check(const MvmpInstance& inst);
MvmpInstance random_relation(int states, std::uint64_t seed, std::uint64_t index);

// ---------------------------------------------------------------- relation harness

// Greedy maximal family of pairwise strongly disjoint admissible blocks, lexicographic by centre.
std::vector<Box> maximal_disjoint_blocks(const GluingContext& ctx, const BlockFamily& grid);

struct InjectivityReport {
    long subsets = 0;
    long collisions = 0;
    bool ok() const { return collisions == 0; }
};

// Enumerates subsets Z of V with |Z| = m and checks that Z -> {v_k of Π_B : B in Z} is one-to-one.
InjectivityReport check_endpoint_injectivity(const GluingContext& ctx, const std::vector<Box>& V, int m);

// ---------------------------------------------------------------- random instances

// Metropolis chain on currents with fixed sources: ±1 around plaquettes and ghost triangles, ±2 on bundles.
class CurrentChain {
public:
    CurrentChain(const Graph& g, double beta, Current start, bool use_ghost, std::uint64_t seed, std::uint64_t chain);
    void sweep();
    const Current& current() const { return n_; }
    long accepted() const { return accepted_; }

private:
    bool propose(const int* bundles, const int* signs, int len);

    const Graph* g_;
    double beta_;
    Current n_;
    std::vector<std::array<int, 4>> cycles_;
    std::vector<int> cycle_len_;
    std::vector<int> singles_;
    std::vector<double> be_;
    Stream rng_;
    std::uint64_t sweeps_ = 0;
    long accepted_ = 0;
};

struct InstanceOptions {
    int d = 3;
    int min_N = 4;
    int max_N = 8;
    int burn_in = 20;
    int thin = 2;
    int per_chain = 10;
    int max_tries = 20;    // samples inspected per instance before a chain is restarted
};

struct InstanceStats {
    long samples = 0;       // current pairs inspected
    long connected = 0;     // rejected: x and y joined in Λ_N
    long no_block = 0;      // rejected: no admissible block
};

// Deterministic stream of admissible instances in d = opt.d, boxes Λ_min_N .. Λ_max_N.
class InstanceGenerator {
public:
    InstanceGenerator(std::uint64_t seed, const InstanceOptions& opt = {});
    GluingInstance next();
    const InstanceStats& stats() const { return stats_; }

private:
    void start_chain();

    InstanceOptions opt_;
    std::uint64_t seed_;
    std::uint64_t chain_id_ = 0;
    int produced_in_chain_ = 0;
    GluingInstance base_;
    std::unique_ptr<CurrentChain> c1_, c2_;
    Stream rng_;
    InstanceStats stats_;
};

// ---------------------------------------------------------------- fixtures and reports

void write_instance(std::ostream& os, const GluingInstance& inst);
GluingInstance read_instance(std::istream& is);
std::string dump_instance(const GluingInstance& inst);

struct SurgeryRow {
    long id = 0;
    int d = 3, N = 0, n = 1;
    double beta = 0.0;
    int blocks = 0;
    std::string strategies;
    int path_length = 0;      // sum over blocks
    int modified = 0;
    bool a = false, b = false, c = false, d_ok = false;
    double log_ratio = 0.0, log_bound = 0.0;
    bool ratio_ok() const { return log_ratio <= log_bound + 1e-9; }
};

SurgeryRow surgery_row(long id, const GluingInstance& inst, const SurgeryCertificate& cert);
void write_surgery_csv(std::ostream& os, const std::vector<SurgeryRow>& rows);

}  // namespace ising
