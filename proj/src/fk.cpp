#include "ising/fk.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <deque>
#include <thread>

#include "ising/output.hpp"

namespace ising {

void BondConfig::fill(bool v) {
    std::fill(bits_.begin(), bits_.end(), v ? 1 : 0);
    ++generation_;
}

int BondConfig::num_open() const {
    int c = 0;
    for (auto b : bits_) c += b;
    return c;
}

bool BondConfig::leq(const BondConfig& o) const {
    if (o.size() != size()) return false;
    for (int b = 0; b < size(); ++b)
        if (bits_[b] > o.bits_[b]) return false;
    return true;
}

std::vector<int> ClusterMap::cluster_of(int v) const {
    std::vector<int> out;
    for (int u = 0; u < static_cast<int>(root.size()); ++u)
        if (root[u] == root[v]) out.push_back(u);
    return out;
}

namespace {

BoundaryPartition normalized(const Graph& g, BoundaryPartition xi) {
    if (xi.cls.empty()) xi.cls.assign(g.num_vertices(), -1);
    if (static_cast<int>(xi.cls.size()) != g.num_vertices())
        throw std::invalid_argument("boundary partition does not match the graph");
    return xi;
}

}  // namespace

ClusterMap clusters(const Graph& g, const BondConfig& w, const BoundaryPartition& xi_in) {
    BoundaryPartition xi = normalized(g, xi_in);
    int nv = g.num_vertices(), nc = xi.num_classes();
    UnionFind uf(nv + nc);
    for (int v = 0; v < nv; ++v)
        if (xi.cls[v] >= 0) uf.unite(v, nv + xi.cls[v]);
    for (int b = 0; b < g.num_bundles(); ++b)
        if (w.open(b)) uf.unite(g.bundle(b).u, g.bundle(b).v);
    ClusterMap m;
    m.root.resize(nv);
    m.generation = w.generation();
    std::vector<char> seen(nv + nc, 0);
    for (int v = 0; v < nv; ++v) {
        m.root[v] = uf.find(v);
        if (!seen[m.root[v]]) {
            seen[m.root[v]] = 1;
            ++m.count;
        }
    }
    return m;
}

std::vector<int> clusters_bfs(const Graph& g, const BondConfig& w, const BoundaryPartition& xi_in) {
    BoundaryPartition xi = normalized(g, xi_in);
    int nv = g.num_vertices();
    std::vector<std::vector<int>> members(xi.num_classes());
    for (int v = 0; v < nv; ++v)
        if (xi.cls[v] >= 0) members[xi.cls[v]].push_back(v);
    std::vector<int> label(nv, -1);
    for (int s = 0; s < nv; ++s) {
        if (label[s] >= 0) continue;
        std::deque<int> q{s};
        label[s] = s;
        while (!q.empty()) {
            int v = q.front();
            q.pop_front();
            auto visit = [&](int u) {
                if (label[u] < 0) {
                    label[u] = s;
                    q.push_back(u);
                }
            };
            for (const auto& inc : g.adj(v))
                if (w.open(inc.bundle)) visit(inc.nbr);
            if (xi.cls[v] >= 0)
                for (int u : members[xi.cls[v]]) visit(u);
        }
    }
    return label;
}

FkSampler::FkSampler(const Graph& g, double p, BoundaryPartition xi)
    : g_(&g), p_(p), xi_(normalized(g, std::move(xi))), nv_(g.num_vertices()) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("p must lie in [0, 1]");
    pe_.resize(g.num_bundles());
    for (int b = 0; b < g.num_bundles(); ++b) pe_[b] = bundle_p(p, g.bundle(b).mult);
    members_.resize(xi_.num_classes());
    for (int v = 0; v < nv_; ++v)
        if (xi_.cls[v] >= 0) members_[xi_.cls[v]].push_back(v);
    mark_.assign(nv_ + members_.size(), 0);
}

template <class F>
void FkSampler::for_each_nbr(const BondConfig& w, int node, int skip, F&& f) const {
    if (node >= nv_) {
        for (int u : members_[node - nv_])
            if (f(u)) return;
        return;
    }
    for (const auto& inc : g_->adj(node))
        if (inc.bundle != skip && w.open(inc.bundle) && f(inc.nbr)) return;
    if (xi_.cls[node] >= 0) f(node_of_class(xi_.cls[node]));
}

bool FkSampler::connected_off(const BondConfig& w, int e) {
    int a = g_->bundle(e).u, b = g_->bundle(e).v;
    if (a == b) return true;
    if (xi_.cls[a] >= 0 && xi_.cls[a] == xi_.cls[b]) return true;
    if (stamp_ >= 0xfffffff0u) {
        std::fill(mark_.begin(), mark_.end(), 0);
        stamp_ = 0;
    }
    stamp_ += 2;
    const std::uint32_t ma = stamp_, mb = stamp_ + 1;
    qa_.clear();
    qb_.clear();
    qa_.push_back(a);
    qb_.push_back(b);
    mark_[a] = ma;
    mark_[b] = mb;
    std::size_t ia = 0, ib = 0;
    // Grow the smaller search; an exhausted side is a whole cluster that misses the other end.
    while (ia < qa_.size() && ib < qb_.size()) {
        bool side_a = qa_.size() <= qb_.size();
        auto& q = side_a ? qa_ : qb_;
        std::size_t& i = side_a ? ia : ib;
        std::uint32_t own = side_a ? ma : mb, other = side_a ? mb : ma;
        int x = q[i++];
        bool met = false;
        for_each_nbr(w, x, e, [&](int y) {
            if (mark_[y] == other) {
                met = true;
                return true;
            }
            if (mark_[y] != own) {
                mark_[y] = own;
                q.push_back(y);
            }
            return false;
        });
        if (met) return true;
    }
    return false;
}

bool FkSampler::heat_bath_step(BondConfig& w, int e, double u) {
    bool open = u < open_probability(w, e);
    w.set(e, open);
    return open;
}

void FkSampler::sweep(BondConfig& w, std::uint64_t seed, std::uint64_t chain, std::uint64_t sweep_index,
                      bool random_order) {
    int nb = g_->num_bundles();
    if (!random_order) {
        for (int e = 0; e < nb; ++e) heat_bath_step(w, e, counter_uniform(seed, chain, sweep_index, e));
        return;
    }
    std::vector<int> order(nb);
    for (int e = 0; e < nb; ++e) order[e] = e;
    Stream perm(seed, chain ^ 0x6a09e667f3bcc909ull, sweep_index);
    for (int i = nb - 1; i > 0; --i) std::swap(order[i], order[perm.below(i + 1)]);
    for (int e : order) heat_bath_step(w, e, counter_uniform(seed, chain, sweep_index, e));
}

void FkSampler::sweep_edges(BondConfig& w, const std::vector<int>& edges, std::uint64_t seed, std::uint64_t chain,
                            std::uint64_t sweep_index) {
    for (int e : edges) heat_bath_step(w, e, counter_uniform(seed, chain, sweep_index, e));
}

BondConfig heat_bath_step(const Graph& g, const BondConfig& w, double p, const BoundaryPartition& xi, int e,
                          double u) {
    if (!(u >= 0.0 && u < 1.0)) throw std::invalid_argument("uniform sample must lie in [0, 1)");
    FkSampler s(g, p, xi);
    BondConfig out = w;
    s.heat_bath_step(out, e, u);
    return out;
}

bool es_supported(const Graph& g, const BoundaryPartition& xi_in) {
    BoundaryPartition xi = normalized(g, xi_in);
    int nc = xi.num_classes();
    return nc == 0 || (nc == 1 && !g.has_ghost());
}

void es_sweep(const Graph& g, SpinConfig& sigma, BondConfig& w, double p, const BoundaryPartition& xi_in,
              Stream& rng) {
    BoundaryPartition xi = normalized(g, xi_in);
    if (!es_supported(g, xi))
        throw std::invalid_argument("es_sweep supports free, plus (ghost) and single-class wired boundaries");
    int nv = g.num_vertices();
    if (static_cast<int>(sigma.size()) != nv) sigma.assign(nv, 1);
    if (w.size() != g.num_bundles()) throw std::invalid_argument("bond configuration does not match the graph");
    ClusterMap cm = clusters(g, w, xi);
    // Roots index into the union-find over vertices and classes.
    std::vector<std::int8_t> spin_of_root(nv + xi.num_classes() + 1, 0);
    for (int v = 0; v < nv; ++v)
        if (v == g.ghost() || xi.cls[v] >= 0) spin_of_root[cm.root[v]] = 1;
    for (int v = 0; v < nv; ++v) {
        std::int8_t& s = spin_of_root[cm.root[v]];
        if (s == 0) s = rng.coin() ? 1 : -1;
        sigma[v] = s;
    }
    for (int b = 0; b < g.num_bundles(); ++b) {
        const Bundle& bd = g.bundle(b);
        double u = rng.uniform();
        w.set(b, sigma[bd.u] == sigma[bd.v] && u < bundle_p(p, bd.mult));
    }
}

void monotone_pair_step(FkSampler& lo_ctx, FkSampler& hi_ctx, BondConfig& lo, BondConfig& hi, int e, double u) {
    double plo = lo_ctx.open_probability(lo, e), phi = hi_ctx.open_probability(hi, e);
    if (plo > phi) throw OrderViolation("conditional open probabilities are not ordered");
    lo.set(e, u < plo);
    hi.set(e, u < phi);
}

std::pair<BondConfig, BondConfig> monotone_pair_step(const Graph& g, const BondConfig& lo, const BondConfig& hi,
                                                     double p, const BoundaryPartition& xi_lo,
                                                     const BoundaryPartition& xi_hi, int e, double u) {
    if (!lo.leq(hi)) throw OrderViolation("lower configuration exceeds upper configuration");
    BoundaryPartition a = normalized(g, xi_lo), b = normalized(g, xi_hi);
    if (!a.refines(b)) throw OrderViolation("lower boundary partition does not refine the upper one");
    FkSampler sl(g, p, a), sh(g, p, b);
    std::pair<BondConfig, BondConfig> out{lo, hi};
    monotone_pair_step(sl, sh, out.first, out.second, e, u);
    return out;
}

// ---------------------------------------------------------------- chains

Estimate batch_means(const std::vector<double>& xs, int batches) {
    Estimate est;
    est.n = static_cast<long>(xs.size());
    if (xs.empty()) return est;
    double sum = 0.0;
    for (double x : xs) sum += x;
    est.mean = sum / xs.size();
    int nbatch = std::max(2, std::min<int>(batches, static_cast<int>(xs.size())));
    std::size_t per = xs.size() / nbatch;
    if (per == 0) return est;
    std::vector<double> means(nbatch, 0.0);
    for (int k = 0; k < nbatch; ++k) {
        for (std::size_t i = 0; i < per; ++i) means[k] += xs[k * per + i];
        means[k] /= per;
    }
    double m = 0.0;
    for (double v : means) m += v;
    m /= nbatch;
    double var = 0.0;
    for (double v : means) var += (v - m) * (v - m);
    var /= (nbatch - 1);
    est.se = std::sqrt(var / nbatch);
    return est;
}

ChainResult run_chain(const Graph& g, double p, const BoundaryPartition& xi, ChainKind kind, const ChainOptions& opt,
                      const std::vector<std::pair<int, int>>& pairs) {
    int nb = g.num_bundles(), nv = g.num_vertices();
    FkSampler hb(g, p, xi);
    BondConfig w(nb, false);
    SpinConfig sigma(nv, 1);
    Stream es_rng(opt.seed, opt.chain);
    long sweep = 0;
    auto step = [&] {
        if (kind == ChainKind::HeatBath) {
            hb.sweep(w, opt.seed, opt.chain, static_cast<std::uint64_t>(sweep), opt.random_order);
        } else {
            es_rng.set_sweep(static_cast<std::uint64_t>(sweep));
            es_sweep(g, sigma, w, p, hb.xi(), es_rng);
        }
        ++sweep;
    };
    for (int i = 0; i < opt.burn_in; ++i) step();

    std::vector<std::vector<double>> edge(nb), pair(pairs.size()), spin(kind == ChainKind::EdwardsSokal ? nv : 0);
    ChainResult res;
    for (int s = 0; s < opt.samples; ++s) {
        for (int t = 0; t < std::max(1, opt.thin); ++t) step();
        for (int b = 0; b < nb; ++b) edge[b].push_back(w.open(b) ? 1.0 : 0.0);
        for (std::size_t k = 0; k < pairs.size(); ++k)
            pair[k].push_back(w.open(pairs[k].first) && w.open(pairs[k].second) ? 1.0 : 0.0);
        for (int v = 0; v < static_cast<int>(spin.size()); ++v) spin[v].push_back(sigma[v]);
        res.trace.push_back({opt.chain, sweep, "open_density", nb ? static_cast<double>(w.num_open()) / nb : 0.0});
        if (kind == ChainKind::EdwardsSokal) {
            double m = 0.0;
            int cnt = 0;
            for (int v = 0; v < nv; ++v)
                if (v != g.ghost()) m += sigma[v], ++cnt;
            res.trace.push_back({opt.chain, sweep, "magnetization", cnt ? m / cnt : 0.0});
        }
    }
    for (auto& xs : edge) res.edge.push_back(batch_means(xs, opt.batches));
    for (auto& xs : pair) res.pair.push_back(batch_means(xs, opt.batches));
    for (auto& xs : spin) res.spin.push_back(batch_means(xs, opt.batches));
    return res;
}

void write_chain_csv(std::ostream& os, const std::vector<ChainRecord>& rows) {
    os << "chain,sweep,observable,value\n";
    for (const auto& r : rows) os << r.chain << ',' << r.sweep << ',' << r.observable << ',' << fmt_num(r.value) << '\n';
}

void parallel_replicas(int n, const std::function<void(int)>& body, int threads) {
    if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr err;
    std::atomic<bool> failed{false};
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (int i; (i = next.fetch_add(1)) < n && !failed.load();) {
                try {
                    body(i);
                } catch (...) {
                    if (!failed.exchange(true)) err = std::current_exception();
                }
            }
        });
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

}  // namespace ising
