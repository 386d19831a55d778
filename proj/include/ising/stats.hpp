#pragma once

#include <cmath>
#include <vector>

namespace ising {

struct Proportion {
    long hits = 0;
    long n = 0;

    void add(bool x) {
        hits += x ? 1 : 0;
        ++n;
    }
    void merge(const Proportion& o) {
        hits += o.hits;
        n += o.n;
    }
    double mean() const { return n ? static_cast<double>(hits) / n : 0.0; }
    double se() const { return n ? std::sqrt(mean() * (1.0 - mean()) / n) : 0.0; }
    // Wilson score interval.
    double lower(double z = 1.96) const;
    double upper(double z = 1.96) const;
};

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    double slope_se = 0.0;
};

// Weighted least squares y = a + b x; weights default to 1.
LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y, const std::vector<double>& w = {});

// Mean and standard error of independent replicate values.
struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
    long n = 0;
};
MeanSe mean_se(const std::vector<double>& xs);

// Two estimates differ when their z-intervals do not overlap.
inline bool intervals_disjoint(double m1, double s1, double m2, double s2, double z = 1.96) {
    return m1 + z * s1 < m2 - z * s2 || m2 + z * s2 < m1 - z * s1;
}

}  // namespace ising
