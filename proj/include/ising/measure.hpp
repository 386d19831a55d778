#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ising/fk.hpp"
#include "ising/lattice.hpp"

namespace ising {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct ExperimentConfig {
    int d = 3;
    int L = 24;
    double beta = -1.0;  // negative: unset
    double p = -1.0;     // negative: unset
    std::string boundary = "wired";
    int replicas = 1;
    std::uint64_t seed = 1;
    int burn_in = 100;
    int thin = 1;
    int samples = 1000;  // per replica
    std::string out_dir;

    // p = 1 - exp(-2 beta) when both are given; one of them is required.
    void validate() const;
    double resolved_beta() const;
    double resolved_p() const;
};

// ---------------------------------------------------------------- decay

struct DecayOptions {
    int r_min = 2, r_max = 10;
    int center_radius = 4;   // pairs (u, u + r e_a) for u in Λ_center_radius
    std::vector<int> axes;   // empty: all
    int batches = 20;
    double noise_z = 2.0;    // points with estimate <= noise_z * se are left out of the fit
    double r2_gate = 0.98;
};

struct DecayFit {
    double beta = 0.0;
    int d = 3, L = 0;
    std::vector<int> distances;
    std::vector<double> estimates, se;
    std::vector<double> two_point, magnetization;  // φ[u<->v] and mean φ[u<->∂] over the pair set
    std::vector<int> excluded;                     // below the noise floor
    double c = 0.0, intercept = 0.0, r2 = 0.0;
    bool degenerate = false;      // fewer than three usable points
    bool positive = false;        // every estimate > 0
    bool monotone = false;        // non-increasing within 1.96 combined standard errors
    bool negativity_defect = false;  // some estimate below -4 se

    bool fit_ok(double gate = 0.98) const { return !degenerate && c > 0.0 && r2 >= gate; }
};

// Log-linear fit of positive estimates above the noise floor.
DecayFit fit_decay(const std::vector<int>& distances, const std::vector<double>& estimates,
                   const std::vector<double>& se, const DecayOptions& opt = {});

// ⟨σ_u;σ_v⟩^+ on Λ_L with wired boundary as φ^1[u<->v] - φ^1[u<->∂]φ^1[v<->∂], averaged over the
// pair set. Edwards-Sokal sweeps; jackknife over batches for the product term.
DecayFit decay_scan(const ExperimentConfig& cfg, const DecayOptions& opt = {});
// Same averages by exact frontier summation.
DecayFit decay_exact(int d, int L, double beta, const DecayOptions& opt = {});

struct OnsetOptions {
    double beta_lo = 0.15, beta_hi = 0.40;
    double coarse = 0.025, fine = 0.0025;
    double threshold = 0.45;  // mean φ^1[u<->∂] over Λ_center_radius
    int center_radius = 4;
    int burn_in = 40, samples = 80;
};

struct OnsetScan {
    std::vector<double> betas, magnetization, se;
    double threshold = 0.0;
    double onset = std::numeric_limits<double>::quiet_NaN();  // first grid β reaching the threshold
    bool found() const { return onset == onset; }
};

// Coarse grid, then a fine grid inside the first coarse bracket.
OnsetScan onset_prescan(const ExperimentConfig& cfg, const OnsetOptions& opt = {});

void write_decay_csv(std::ostream& os, const DecayFit& fit);
void write_onset_csv(std::ostream& os, const OnsetScan& scan);
void write_decay_svg(const std::filesystem::path& path, const DecayFit& fit);

// ---------------------------------------------------------------- mixing

enum class EventKind { Sure, AllOpen, AnyOpen };

// Declarative edge-scoped event: kind over a list of nearest-neighbour edges.
struct EventSpec {
    EventKind kind = EventKind::Sure;
    std::vector<std::pair<Point, Point>> edges;
};

// "sure", or "all:" / "any:" followed by edges "x,y,z-x,y,z" separated by '/'.
EventSpec parse_event(const std::string& text, int d);
std::string to_string(const EventSpec& ev, int d);
// A = first edge along e_1 at the origin; B = the edge from (2n+1)e_1 to (2n+2)e_1.
std::pair<EventSpec, EventSpec> default_events(int d, int n);

// A inside E_n, B outside E_2n; throws ConfigError otherwise.
void check_event_scope(const EventSpec& a, const EventSpec& b, int d, int n);

struct MixingEstimate {
    int d = 3, n = 0, L = 0;
    double p = 0.0;
    double pa = 0.0, pb = 0.0, pab = 0.0;
    double gap = 0.0, se = 0.0;        // φ[A∩B] - φ[A]φ[B]
    double normalized = 0.0, normalized_se = 0.0;  // gap / (φ[A]φ[B])
    long samples = 0;
    double abs_gap() const { return gap < 0 ? -gap : gap; }
};

// Wired Λ_4n, Edwards-Sokal sweeps, jackknife over batches.
MixingEstimate mixing_scan(int n, double p, const EventSpec& a, const EventSpec& b, const ExperimentConfig& cfg,
                           int batches = 20);
// Exact value on enumerable boxes.
MixingEstimate mixing_exact(int d, int n, double p, const EventSpec& a, const EventSpec& b);

void write_mixing_csv(std::ostream& os, const std::vector<MixingEstimate>& rows);

// ---------------------------------------------------------------- boundary influence

struct InfluenceEstimate {
    int d = 2, N = 0;
    double p = 0.0;
    int edge = -1;
    double gap = 0.0, se = 0.0;  // φ^1[ω_e] - φ^0[ω_e] as P[ω^1_e = 1, ω^0_e = 0]
    double exact = std::numeric_limits<double>::quiet_NaN();
    long samples = 0;
    bool in_range = true;        // e in E_{N/4}
    std::string warning;
};

double influence_gap_exact(const Graph& g, double p, int e);
// Monotone pair of heat-bath chains (free below, wired above) on g.
InfluenceEstimate influence_gap(const Graph& g, double p, int e, const ExperimentConfig& cfg);
// Λ_N with the edge from the origin along e_1.
InfluenceEstimate influence_gap(int d, int N, double p, const ExperimentConfig& cfg, bool with_exact = false);

void write_influence_csv(std::ostream& os, const std::vector<InfluenceEstimate>& rows);

// ---------------------------------------------------------------- double-current connections

struct ProbeResult {
    double probability = 0.0;  // frontier summation
    double truncated = 0.0;    // truncated current enumeration
    double bound = 0.0;        // tail bound for |truncated - probability|
    int cap = 0;
    bool overlap = false;      // X ∩ Y nonempty
    bool agree() const { return overlap || std::abs(truncated - probability) <= bound + 1e-12; }
};

// P^{{w,z},∅}_{G+,G}[X <-> Y in n1 + n2], g_plus carrying a ghost; w, z outside X ∪ Y.
double connection_probe(const Graph& g_plus, double beta, int w, int z, const std::vector<int>& X,
                        const std::vector<int>& Y);
// The same probability by enumerating currents with every bundle value at most `cap`,
// summed by positivity pattern of the lattice bundles.
double connection_probe_truncated(const Graph& g_plus, double beta, int w, int z, const std::vector<int>& X,
                                  const std::vector<int>& Y, int cap, double* bound = nullptr);
ProbeResult probe_both(const Graph& g_plus, double beta, int w, int z, const std::vector<int>& X,
                       const std::vector<int>& Y, int cap = 16);

}  // namespace ising
