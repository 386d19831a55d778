#include "ising/stats.hpp"

#include <stdexcept>

namespace ising {

namespace {

double wilson(const Proportion& p, double z, int sign) {
    if (p.n == 0) return sign < 0 ? 0.0 : 1.0;
    double n = static_cast<double>(p.n), ph = p.mean(), z2 = z * z;
    double centre = (ph + z2 / (2 * n)) / (1 + z2 / n);
    double half = z * std::sqrt(ph * (1 - ph) / n + z2 / (4 * n * n)) / (1 + z2 / n);
    return centre + sign * half;
}

}  // namespace

double Proportion::lower(double z) const { return wilson(*this, z, -1); }
double Proportion::upper(double z) const { return wilson(*this, z, +1); }

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y, const std::vector<double>& w) {
    std::size_t n = x.size();
    if (n < 2 || y.size() != n || (!w.empty() && w.size() != n)) throw std::invalid_argument("fit_line needs matching series of length >= 2");
    double sw = 0, sx = 0, sy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double wi = w.empty() ? 1.0 : w[i];
        sw += wi;
        sx += wi * x[i];
        sy += wi * y[i];
    }
    double mx = sx / sw, my = sy / sw, sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double wi = w.empty() ? 1.0 : w[i];
        sxx += wi * (x[i] - mx) * (x[i] - mx);
        sxy += wi * (x[i] - mx) * (y[i] - my);
        syy += wi * (y[i] - my) * (y[i] - my);
    }
    LinearFit f;
    if (sxx == 0) throw std::invalid_argument("fit_line needs distinct x values");
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double sse = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double wi = w.empty() ? 1.0 : w[i];
        double r = y[i] - f.intercept - f.slope * x[i];
        sse += wi * r * r;
    }
    f.r2 = syy > 0 ? 1.0 - sse / syy : 1.0;
    if (n > 2) f.slope_se = std::sqrt(sse / (n - 2) / sxx);
    return f;
}

MeanSe mean_se(const std::vector<double>& xs) {
    MeanSe m;
    m.n = static_cast<long>(xs.size());
    if (xs.empty()) return m;
    for (double x : xs) m.mean += x;
    m.mean /= m.n;
    if (m.n < 2) return m;
    double v = 0;
    for (double x : xs) v += (x - m.mean) * (x - m.mean);
    m.se = std::sqrt(v / (m.n - 1) / m.n);
    return m;
}

}  // namespace ising
