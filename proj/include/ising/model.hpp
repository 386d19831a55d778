#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "ising/lattice.hpp"

namespace ising {

inline double p_from_beta(double beta) { return -std::expm1(-2.0 * beta); }
inline double beta_from_p(double p) { return -0.5 * std::log1p(-p); }
// Probability that a bundle of `mult` parallel edges has at least one open edge.
inline double bundle_p(double p, int mult) { return -std::expm1(mult * std::log1p(-p)); }

struct ModelParams {
    double beta = 0.0;
    double h = 0.0;
    double p = -1.0;  // negative: derived from beta
    std::vector<double> J;  // per-bundle coupling constants; empty means all ones

    double bond_p() const { return p < 0 ? p_from_beta(beta) : p; }
    double coupling(const Graph& g, int b) const {
        double j = J.empty() ? 1.0 : J[b];
        return beta * j * g.bundle(b).mult;
    }
    void check_linked() const {
        if (p >= 0 && std::abs(p - p_from_beta(beta)) > 1e-12)
            throw std::invalid_argument("p and beta are not linked by p = 1 - exp(-2 beta)");
    }
};

// Partition of (some) vertices into wired classes; -1 means unwired.
struct BoundaryPartition {
    std::vector<int> cls;

    static BoundaryPartition free_bc(const Graph& g) { return {std::vector<int>(g.num_vertices(), -1)}; }
    static BoundaryPartition wired(const Graph& g) {
        BoundaryPartition b{std::vector<int>(g.num_vertices(), -1)};
        for (int v = 0; v < g.num_vertices(); ++v)
            if (g.is_boundary(v)) b.cls[v] = 0;
        return b;
    }
    int num_classes() const {
        int m = -1;
        for (int c : cls) m = c > m ? c : m;
        return m + 1;
    }
    bool is_free() const { return num_classes() == 0; }
    // Every class of this partition lies inside a class of `coarser`.
    bool refines(const BoundaryPartition& coarser) const;
};

}  // namespace ising
