#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include "ising/exact.hpp"

namespace ising {

std::uint64_t vertex_mask(const std::vector<int>& vs) {
    std::uint64_t m = 0;
    for (int v : vs) m ^= (1ull << v);
    return m;
}

namespace {

void check_ghost_last(const Graph& g) {
    if (g.has_ghost() && g.ghost() != g.num_vertices() - 1)
        throw std::invalid_argument("ghost vertex must be the last vertex");
}

}  // namespace

double SpinDistribution::expect_mask(std::uint64_t mask) const {
    KahanSum s;
    for (std::uint64_t st = 0; st < weight.size(); ++st) {
        double w = weight[st];
        s.add((std::popcount(st & mask) & 1) ? -w : w);
    }
    return s.value() / Z;
}

double SpinDistribution::total_probability() const {
    KahanSum s;
    for (double w : weight) s.add(w / Z);
    return s.value();
}

SpinDistribution enumerate_ising(const Graph& g0, const ModelParams& params, SpinBoundary bc,
                                 const EnumCaps& caps) {
    if (bc == SpinBoundary::Free && g0.has_ghost())
        throw std::invalid_argument("free boundary expects a graph without ghost");
    Graph g = (bc == SpinBoundary::Plus && !g0.has_ghost()) ? attach_ghost(g0) : g0;
    check_ghost_last(g);
    int n = g.num_lattice_vertices();
    if (n > caps.max_vertices || g.num_bundles() > caps.max_bundles)
        throw SizeError("spin enumeration exceeds size cap");
    if (!params.J.empty() && static_cast<int>(params.J.size()) != g.num_bundles())
        throw std::invalid_argument("coupling vector length mismatch");
    std::uint64_t ns = 1ull << n;
    std::vector<double> logw(ns);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::uint64_t s = 0; s < ns; ++s) {
        auto spin = [&](int v) { return (v == g.ghost()) ? 1 : (((s >> v) & 1) ? -1 : 1); };
        double e = 0.0;
        for (int b = 0; b < g.num_bundles(); ++b) {
            const auto& bd = g.bundle(b);
            e += params.coupling(g, b) * spin(bd.u) * spin(bd.v);
        }
        if (params.h != 0.0)
            for (int v = 0; v < n; ++v) e += params.beta * params.h * spin(v);
        logw[s] = e;
        mx = std::max(mx, e);
    }
    SpinDistribution d;
    d.n = n;
    d.weight.resize(ns);
    KahanSum z;
    for (std::uint64_t s = 0; s < ns; ++s) {
        d.weight[s] = std::exp(logw[s] - mx);
        z.add(d.weight[s]);
    }
    d.Z = z.value();
    return d;
}

double truncated_two_point(const SpinDistribution& dist, int x, int y) {
    std::uint64_t mx = 1ull << x, my = 1ull << y;
    double xy = (x == y) ? 1.0 : dist.expect_mask(mx | my);
    return xy - dist.expect_mask(mx) * dist.expect_mask(my);
}

SpinMoments::SpinMoments(const Graph& g, std::vector<std::uint64_t> masks, std::vector<int> scaled,
                         const EnumCaps& caps) {
    check_ghost_last(g);
    int n = g.num_lattice_vertices();
    if (n > 62) throw SizeError("spin moment enumeration supports at most 62 vertices");
    bool symmetric = !g.has_ghost() && n > 0;
    int free_bits = symmetric ? n - 1 : n;
    if ((1ull << free_bits) > caps.max_states) throw SizeError("spin moment enumeration exceeds state cap");

    masks_.push_back(0);
    masks_.insert(masks_.end(), masks.begin(), masks.end());
    int K = static_cast<int>(masks_.size());
    vanishing_.assign(K, 0);
    if (symmetric)
        for (int k = 0; k < K; ++k) vanishing_[k] = std::popcount(masks_[k]) & 1;

    std::vector<char> is_scaled(g.num_bundles(), 0);
    for (int b : scaled) is_scaled[b] = 1;
    int m1 = 0, m2 = 0;
    for (int b = 0; b < g.num_bundles(); ++b) (is_scaled[b] ? m2 : m1) += g.bundle(b).mult;
    off1_ = m1;
    off2_ = m2;
    levels1_ = 2 * m1 + 1;
    levels2_ = 2 * m2 + 1;
    hist_.assign(static_cast<std::size_t>(levels1_) * levels2_ * K, 0);

    struct Nb {
        int v;
        int mult;
        int cls;
    };
    std::vector<std::vector<Nb>> nbrs(n);
    for (int v = 0; v < n; ++v)
        for (const auto& inc : g.adj(v))
            nbrs[v].push_back({inc.nbr, g.bundle(inc.bundle).mult, is_scaled[inc.bundle] ? 1 : 0});
    std::vector<std::vector<int>> obs_of(n);
    for (int k = 0; k < K; ++k)
        for (int v = 0; v < n; ++v)
            if ((masks_[k] >> v) & 1) obs_of[v].push_back(k);

    std::vector<int> spin(g.num_vertices(), 1);
    std::vector<std::int64_t> sign(K, 1);
    int e1 = m1, e2 = m2;
    auto accumulate = [&]() {
        std::int64_t* row = &hist_[(static_cast<std::size_t>(e1 + off1_) * levels2_ + (e2 + off2_)) * K];
        for (int k = 0; k < K; ++k) row[k] += sign[k];
    };
    accumulate();
    std::uint64_t total = 1ull << free_bits;
    for (std::uint64_t i = 1; i < total; ++i) {
        int v = std::countr_zero(i);
        int sv = spin[v];
        int d1 = 0, d2 = 0;
        for (const Nb& nb : nbrs[v]) {
            int delta = -2 * sv * spin[nb.v] * nb.mult;
            (nb.cls ? d2 : d1) += delta;
        }
        e1 += d1;
        e2 += d2;
        spin[v] = -sv;
        for (int k : obs_of[v]) sign[k] = -sign[k];
        accumulate();
    }
}

int SpinMoments::find(std::uint64_t mask) const {
    for (int k = 0; k < num_observables(); ++k)
        if (masks_[k] == mask) return k;
    return -1;
}

double SpinMoments::expect(int obs, double beta, double scale) const {
    if (vanishing_[obs]) return 0.0;
    int K = num_observables();
    double mx = -std::numeric_limits<double>::infinity();
    for (int l1 = 0; l1 < levels1_; ++l1)
        for (int l2 = 0; l2 < levels2_; ++l2)
            if (hist_[(static_cast<std::size_t>(l1) * levels2_ + l2) * K] != 0)
                mx = std::max(mx, beta * ((l1 - off1_) + scale * (l2 - off2_)));
    long double num = 0, den = 0;
    for (int l1 = 0; l1 < levels1_; ++l1)
        for (int l2 = 0; l2 < levels2_; ++l2) {
            const std::int64_t* row = &hist_[(static_cast<std::size_t>(l1) * levels2_ + l2) * K];
            if (row[0] == 0) continue;
            long double w = std::exp(static_cast<long double>(beta * ((l1 - off1_) + scale * (l2 - off2_)) - mx));
            den += w * row[0];
            num += w * row[obs];
        }
    return static_cast<double>(num / den);
}

}  // namespace ising
