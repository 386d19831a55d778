#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ising/exact.hpp"
#include "ising/lattice.hpp"

namespace ising {

// One row per (instance, identity, beta): worst deviation over every sub-case checked.
// For inequalities the deviation is the largest violation (0 when the inequality holds).
struct CheckRow {
    std::string instance;
    std::string identity;
    double beta = 0.0;
    double deviation = 0.0;
    bool evaluated = true;
    bool pass = true;
    int cases = 0;
    std::string detail;
};

struct OracleReport {
    std::vector<CheckRow> rows;

    void merge(const OracleReport& other);
    double max_deviation() const;
    bool all_pass() const;
    std::size_t failures() const;
    static std::string csv_header();
    static std::string csv_row(const CheckRow& r);
};

struct OracleOptions {
    double tol = 1e-10;
    int set_budget = 8;       // vertex sets per family on graphs too large for all subsets
    int sampled_pairs = 4;    // increasing-event pairs when exhaustive enumeration is out of reach
    std::uint64_t seed = 20240601;
    EnumCaps caps;
};

// `g` is the instance graph (with or without ghost); sets range over every even subset of V
// for small graphs and over a deterministic budget otherwise.
OracleReport verify_edwards_sokal(const Graph& g, double beta, const OracleOptions& opt = {});

// `g` has no ghost. With plus = true the first current lives on G^+ and the right-hand side uses
// plus correlations; otherwise both currents live on G and free correlations are used.
OracleReport verify_switching(const Graph& g, double beta, const std::vector<int>& a, int x, int y,
                              bool plus = true, const OracleOptions& opt = {});

// `g` has no ghost; correlations are taken in the plus state on G^+.
OracleReport verify_two_set_bound(const Graph& g, double beta, const std::vector<int>& a, const std::vector<int>& b,
                            const OracleOptions& opt = {});

// FKG, comparison of boundary conditions, finite energy and both Griffiths inequalities on the
// instance graph, with p = 1 - exp(-2 beta).
OracleReport verify_monotonicity(const Graph& g, double beta, const OracleOptions& opt = {});

// `g` has no ghost; e is a bundle of g.
OracleReport verify_two_arms_identity(const Graph& g, double p, int e, const OracleOptions& opt = {});

struct BatteryGraph {
    std::string name;
    Graph g;  // no ghost; each entry is checked with and without the ghost
};

std::vector<BatteryGraph> standard_battery();

// Every identity family on every battery graph (both variants) for all betas at once.
// Graphs with more than max_bundles bundles (counted without the ghost) are skipped.
OracleReport run_battery(const std::vector<BatteryGraph>& graphs, const std::vector<double>& betas,
                         const OracleOptions& opt = {}, int max_bundles = 1 << 30);

// All up-sets of the Boolean lattice on n <= 5 elements, as bitmasks over the 2^n states.
std::vector<std::uint32_t> all_upsets(int n);

}  // namespace ising
