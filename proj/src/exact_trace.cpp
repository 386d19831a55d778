#include <algorithm>
#include <bit>
#include <cmath>
#include <deque>
#include <map>

#include "ising/exact.hpp"
#include "ising/union_find.hpp"

namespace ising {

namespace {

double cosh_m1(double x) {
    double s = std::sinh(0.5 * x);
    return 2.0 * s * s;
}

std::vector<int> membership(int n, const std::vector<int>& vs) {
    std::vector<int> m(n, 0);
    for (int v : vs) m[v] = 1;
    return m;
}

}  // namespace

double trace_weight(Trace t, double beta_e) {
    switch (t) {
        case Trace::Zero: return 1.0;
        case Trace::EvenPositive: return cosh_m1(beta_e);
        case Trace::Odd: return std::sinh(beta_e);
    }
    return 0.0;
}

double TraceDistribution::event(const std::function<bool(std::uint64_t)>& pred) const {
    KahanSum s;
    for (std::size_t i = 0; i < states.size(); ++i)
        if (pred(states[i])) s.add(weight[i]);
    return s.value() / Z;
}

double TraceDistribution::total_probability() const {
    KahanSum s;
    for (double w : weight) s.add(w / Z);
    return s.value();
}

TraceDistribution enumerate_traces(const Graph& g, double beta, const std::vector<int>& sources,
                                   const EnumCaps& caps) {
    int nb = g.num_bundles();
    if (nb > caps.max_bundles || g.num_vertices() > caps.max_vertices || nb > 16)
        throw SizeError("trace enumeration exceeds size cap");
    auto in_a = membership(g.num_vertices(), sources);
    for (int v : sources)
        if (v == g.ghost()) throw std::invalid_argument("ghost cannot be a prescribed source");
    // Parity pattern of each bundle over vertices, as a bitmask (ghost bit dropped).
    std::vector<std::uint64_t> ends(nb);
    std::uint64_t target = 0;
    for (int v = 0; v < g.num_vertices(); ++v)
        if (in_a[v]) target |= 1ull << v;
    std::uint64_t ghost_bit = g.has_ghost() ? (1ull << g.ghost()) : 0;
    for (int b = 0; b < nb; ++b) ends[b] = ((1ull << g.bundle(b).u) ^ (1ull << g.bundle(b).v)) & ~ghost_bit;
    std::vector<double> beta_e(nb), wc(nb), ws(nb);
    for (int b = 0; b < nb; ++b) {
        beta_e[b] = beta * g.bundle(b).mult;
        wc[b] = cosh_m1(beta_e[b]);
        ws[b] = std::sinh(beta_e[b]);
    }
    TraceDistribution d;
    d.nb = nb;
    KahanSum z;
    std::uint64_t nodd = 1ull << nb;
    for (std::uint64_t odd = 0; odd < nodd; ++odd) {
        std::uint64_t par = 0;
        for (int b = 0; b < nb; ++b)
            if ((odd >> b) & 1) par ^= ends[b];
        if (par != target) continue;
        std::vector<int> rest;
        double base = 1.0;
        std::uint64_t code = 0;
        for (int b = 0; b < nb; ++b) {
            if ((odd >> b) & 1) {
                base *= ws[b];
                code |= 2ull << (2 * b);
            } else {
                rest.push_back(b);
            }
        }
        std::uint64_t nr = 1ull << rest.size();
        for (std::uint64_t pos = 0; pos < nr; ++pos) {
            double w = base;
            std::uint64_t c = code;
            for (std::size_t i = 0; i < rest.size(); ++i)
                if ((pos >> i) & 1) {
                    w *= wc[rest[i]];
                    c |= 1ull << (2 * rest[i]);
                }
            d.states.push_back(c);
            d.weight.push_back(w);
            z.add(w);
        }
    }
    if (d.states.empty()) throw EmptySupportError("no current satisfies the source constraint");
    d.Z = z.value();
    return d;
}

std::vector<int> trace_cluster(const Graph& g, std::uint64_t state, const std::vector<int>& s) {
    std::vector<char> seen(g.num_vertices(), 0);
    std::deque<int> q;
    for (int v : s)
        if (v != g.ghost() && !seen[v]) {
            seen[v] = 1;
            q.push_back(v);
        }
    while (!q.empty()) {
        int v = q.front();
        q.pop_front();
        for (const auto& inc : g.adj(v)) {
            if (inc.nbr == g.ghost() || seen[inc.nbr]) continue;
            if (TraceDistribution::at(state, inc.bundle) == Trace::Zero) continue;
            seen[inc.nbr] = 1;
            q.push_back(inc.nbr);
        }
    }
    std::vector<int> out;
    for (int v = 0; v < g.num_vertices(); ++v)
        if (seen[v]) out.push_back(v);
    return out;
}

namespace {

// Weight of all currents whose positive G-bundles are exactly `mask`, per mask.
std::vector<double> positivity_weights(const Graph& g, const std::vector<int>& gb, double beta,
                                       const std::vector<int>& in_a, bool use_ghost) {
    int e = static_cast<int>(gb.size());
    int n = g.num_vertices();
    std::vector<std::uint64_t> ends(e);
    std::vector<double> wc(e), ws(e);
    for (int i = 0; i < e; ++i) {
        const auto& b = g.bundle(gb[i]);
        ends[i] = (1ull << b.u) ^ (1ull << b.v);
        double be = beta * b.mult;
        wc[i] = cosh_m1(be);
        ws[i] = std::sinh(be);
    }
    // Ghost bundle coupling per lattice vertex (0 when absent).
    std::vector<double> gbeta(n, -1.0);
    if (use_ghost && g.has_ghost())
        for (const auto& inc : g.adj(g.ghost())) gbeta[inc.nbr] = beta * g.bundle(inc.bundle).mult;
    std::uint64_t target = 0;
    for (int v = 0; v < n; ++v)
        if (in_a[v] && v != g.ghost()) target |= 1ull << v;
    std::vector<double> w(1ull << e, 0.0);
    for (std::uint64_t m = 0; m < w.size(); ++m) {
        KahanSum acc;
        std::uint64_t sub = m;
        while (true) {
            std::uint64_t par = 0;
            double x = 1.0;
            for (int i = 0; i < e; ++i) {
                if (!((m >> i) & 1)) continue;
                if ((sub >> i) & 1) {
                    par ^= ends[i];
                    x *= ws[i];
                } else {
                    x *= wc[i];
                }
            }
            std::uint64_t mismatch = par ^ target;
            for (int v = 0; v < n && x != 0.0; ++v) {
                if (v == g.ghost()) continue;
                bool odd = (mismatch >> v) & 1;
                if (gbeta[v] >= 0)
                    x *= odd ? std::sinh(gbeta[v]) : std::cosh(gbeta[v]);
                else if (odd)
                    x = 0.0;
            }
            acc.add(x);
            if (sub == 0) break;
            sub = (sub - 1) & m;
        }
        w[m] = acc.value();
    }
    return w;
}

}  // namespace

double trace_connection_bruteforce(const Graph& g, double beta, const std::vector<int>& a,
                                   const std::vector<int>& x, const std::vector<int>& y, bool pair,
                                   const EnumCaps& caps) {
    std::vector<int> gb;
    for (int b = 0; b < g.num_bundles(); ++b)
        if (!g.is_ghost_bundle(b)) gb.push_back(b);
    int e = static_cast<int>(gb.size());
    if (e > 13 || g.num_vertices() > 62 || (pair ? (1ull << (2 * e)) : (1ull << e)) > caps.max_states)
        throw SizeError("trace brute force exceeds size cap");
    auto in_a = membership(g.num_vertices(), a);
    std::vector<int> none(g.num_vertices(), 0);
    auto w1 = positivity_weights(g, gb, beta, in_a, true);
    std::vector<double> w2;
    if (pair) w2 = positivity_weights(g, gb, beta, none, false);
    std::vector<char> conn(1ull << e);
    for (std::uint64_t m = 0; m < conn.size(); ++m) {
        UnionFind uf(g.num_vertices());
        for (int i = 0; i < e; ++i)
            if ((m >> i) & 1) uf.unite(g.bundle(gb[i]).u, g.bundle(gb[i]).v);
        bool c = false;
        for (int u : x)
            for (int v : y)
                if (uf.same(u, v)) c = true;
        conn[m] = c;
    }
    KahanSum num, z1, z2;
    for (double v : w1) z1.add(v);
    if (!pair) {
        for (std::uint64_t m = 0; m < w1.size(); ++m)
            if (conn[m]) num.add(w1[m]);
        if (z1.value() <= 0) throw EmptySupportError("no current satisfies the source constraint");
        return num.value() / z1.value();
    }
    for (double v : w2) z2.add(v);
    for (std::uint64_t m1 = 0; m1 < w1.size(); ++m1) {
        if (w1[m1] == 0.0) continue;
        KahanSum inner;
        for (std::uint64_t m2 = 0; m2 < w2.size(); ++m2)
            if (conn[m1 | m2]) inner.add(w2[m2]);
        num.add(w1[m1] * inner.value());
    }
    if (z1.value() <= 0 || z2.value() <= 0) throw EmptySupportError("no current satisfies the source constraint");
    return num.value() / (z1.value() * z2.value());
}

double current_tail(double beta_e, int cap) {
    double term = 1.0;
    for (int t = 1; t <= cap; ++t) term *= beta_e / t;
    KahanSum s;
    for (int t = cap + 1; t < cap + 400; ++t) {
        term *= beta_e / t;
        s.add(term);
        if (term < 1e-300 || term < s.value() * 1e-18) break;
    }
    return s.value();
}

namespace {

std::map<std::uint64_t, KahanSum> truncated_product(const Graph& g, const std::vector<int>& in_a,
                                                    const std::vector<std::vector<double>>& term, int cap) {
    int nb = g.num_bundles();
    std::map<std::uint64_t, KahanSum> acc;
    std::vector<int> n(nb, 0);
    std::vector<int> deg(g.num_vertices());
    while (true) {
        std::fill(deg.begin(), deg.end(), 0);
        double w = 1.0;
        std::uint64_t code = 0;
        for (int b = 0; b < nb; ++b) {
            deg[g.bundle(b).u] += n[b];
            deg[g.bundle(b).v] += n[b];
            w *= term[b][n[b]];
            std::uint64_t t = n[b] == 0 ? 0 : (n[b] % 2 ? 2 : 1);
            code |= t << (2 * b);
        }
        bool ok = true;
        for (int v = 0; v < g.num_vertices() && ok; ++v) {
            if (v == g.ghost()) continue;
            if ((deg[v] & 1) != in_a[v]) ok = false;
        }
        if (ok) acc[code].add(w);
        int b = 0;
        while (b < nb && n[b] == cap) n[b++] = 0;
        if (b == nb) break;
        ++n[b];
    }
    return acc;
}

// Bundle by bundle over (trace code, vertex parities), each value 0..cap added explicitly.
std::map<std::uint64_t, KahanSum> truncated_by_bundle(const Graph& g, const std::vector<int>& in_a,
                                                      const std::vector<std::vector<double>>& term, int cap) {
    int nb = g.num_bundles(), nv = g.num_vertices();
    std::map<std::pair<std::uint64_t, std::uint64_t>, KahanSum> cur, next;
    cur[{0, 0}].add(1.0);
    for (int b = 0; b < nb; ++b) {
        next.clear();
        std::uint64_t flip = (1ull << g.bundle(b).u) ^ (1ull << g.bundle(b).v);
        for (const auto& [key, w] : cur) {
            for (int t = 0; t <= cap; ++t) {
                std::uint64_t tr = t == 0 ? 0 : (t % 2 ? 2 : 1);
                std::uint64_t par = t % 2 ? key.second ^ flip : key.second;
                next[{key.first | tr << (2 * b), par}].add(w.value() * term[b][t]);
            }
        }
        std::swap(cur, next);
        if (cur.size() > 20000000) throw SizeError("truncated current enumeration too large");
    }
    std::uint64_t want = 0, care = 0;
    for (int v = 0; v < nv; ++v) {
        if (v == g.ghost()) continue;
        care |= 1ull << v;
        if (in_a[v]) want |= 1ull << v;
    }
    std::map<std::uint64_t, KahanSum> acc;
    for (const auto& [key, w] : cur)
        if ((key.second & care) == want) acc[key.first].add(w.value());
    return acc;
}

}  // namespace

TruncatedCurrents enumerate_currents_truncated(const Graph& g, double beta, const std::vector<int>& sources,
                                               int cap, TruncationRoute route) {
    int nb = g.num_bundles();
    bool product_fits = std::pow(cap + 1.0, nb) <= 2e8;
    if (route == TruncationRoute::Auto) route = product_fits ? TruncationRoute::Product : TruncationRoute::ByBundle;
    if (route == TruncationRoute::Product && !product_fits)
        throw SizeError("truncated current enumeration too large");
    if (route == TruncationRoute::ByBundle && (g.num_vertices() > 64 || nb > 32))
        throw SizeError("truncated current enumeration too large");
    auto in_a = membership(g.num_vertices(), sources);
    std::vector<double> be(nb);
    for (int b = 0; b < nb; ++b) be[b] = beta * g.bundle(b).mult;
    // term[b][t] = beta_e^t / t!
    std::vector<std::vector<double>> term(nb, std::vector<double>(cap + 1));
    for (int b = 0; b < nb; ++b) {
        term[b][0] = 1.0;
        for (int t = 1; t <= cap; ++t) term[b][t] = term[b][t - 1] * be[b] / t;
    }
    auto acc = route == TruncationRoute::Product ? truncated_product(g, in_a, term, cap)
                                                 : truncated_by_bundle(g, in_a, term, cap);
    TruncatedCurrents out;
    KahanSum z;
    for (auto& [code, s] : acc) {
        out.states.push_back(code);
        out.weight.push_back(s.value());
        z.add(s.value());
    }
    out.Z = z.value();
    double keep = 1.0;
    for (int b = 0; b < nb; ++b) {
        double wmin = std::min(std::sinh(be[b]), cosh_m1(be[b]));
        keep *= 1.0 - std::min(1.0, current_tail(be[b], cap) / wmin);
    }
    double rho = 1.0 - keep;
    out.bound = rho / (1.0 - rho);
    return out;
}

}  // namespace ising
