#include "ising/oracle.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>

#include "ising/model.hpp"
#include "ising/rng.hpp"

namespace ising {

void OracleReport::merge(const OracleReport& other) { rows.insert(rows.end(), other.rows.begin(), other.rows.end()); }

double OracleReport::max_deviation() const {
    double m = 0.0;
    for (const auto& r : rows)
        if (r.evaluated) m = std::max(m, r.deviation);
    return m;
}

bool OracleReport::all_pass() const { return failures() == 0; }

std::size_t OracleReport::failures() const {
    std::size_t n = 0;
    for (const auto& r : rows)
        if (!r.pass) ++n;
    return n;
}

std::string OracleReport::csv_header() { return "instance,identity,beta,max_deviation,cases,evaluated,pass,detail"; }

std::string OracleReport::csv_row(const CheckRow& r) {
    std::ostringstream os;
    os.precision(17);
    std::string detail = r.detail;
    std::replace(detail.begin(), detail.end(), '"', '\'');
    os << r.instance << ',' << r.identity << ',' << r.beta << ',';
    if (r.evaluated)
        os << r.deviation;
    else
        os << "nan";
    os << ',' << r.cases << ',' << (r.evaluated ? 1 : 0) << ',' << (r.pass ? 1 : 0) << ",\"" << detail << '"';
    return os.str();
}

std::vector<std::uint32_t> all_upsets(int n) {
    if (n < 0 || n > 5) throw std::invalid_argument("up-set enumeration supports at most 5 elements");
    std::vector<std::uint32_t> cur{0u, 1u};
    for (int m = 1; m <= n; ++m) {
        int half = 1 << (m - 1);
        std::vector<std::uint32_t> next;
        for (std::uint32_t lo : cur)
            for (std::uint32_t hi : cur)
                if ((lo & ~hi) == 0) next.push_back(lo | (hi << half));
        cur = std::move(next);
    }
    return cur;
}

namespace {

using VSet = std::vector<int>;

std::string set_str(const VSet& a) {
    std::string s = "{";
    for (std::size_t i = 0; i < a.size(); ++i) s += (i ? " " : "") + std::to_string(a[i]);
    return s + "}";
}

std::uint64_t sym_diff(std::uint64_t a, std::uint64_t b) { return a ^ b; }

struct SwitchCase {
    VSet a;
    int x = 0, y = 0;
};

struct SetPair {
    VSet a, b;
};

struct Plan {
    bool es = false, switching = false, two_set = false, monotonicity = false, griffiths = false,
         two_arms = false;
    int only_variant = -1;             // 0 ghost-free, 1 ghost, -1 both
    std::vector<VSet> sets;            // Edwards-Sokal and Griffiths-2 observables
    std::vector<SwitchCase> switches;  // switching cases
    std::vector<SetPair> two_set_pairs;  // |A|, |B| >= 2
    std::vector<SetPair> corr_pairs;   // Griffiths-1 pairs
    std::vector<int> two_arm_edges;    // bundles of the ghost-free graph
};

VSet clean(VSet a, int n) {
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
    a.erase(std::remove_if(a.begin(), a.end(), [&](int v) { return v < 0 || v >= n; }), a.end());
    return a;
}

// Deterministic choice of vertex sets for a graph with n lattice vertices.
// Above this many lattice bundles the parity summation over large sets dominates the runtime.
constexpr int kLargeBundles = 40;
constexpr int kLargeSetBudget = 6;

Plan full_plan(int n, int nb_lattice, const OracleOptions& opt) {
    Plan p;
    p.es = p.switching = p.two_set = p.monotonicity = p.griffiths = p.two_arms = true;
    int last = n - 1, mid = n / 2;
    std::set<VSet> seen;
    auto push_set = [&](VSet a) {
        a = clean(std::move(a), n);
        if (seen.insert(a).second) p.sets.push_back(a);
    };
    if (n <= 5) {
        for (int m = 0; m < (1 << n); ++m) {
            VSet a;
            for (int v = 0; v < n; ++v)
                if ((m >> v) & 1) a.push_back(v);
            push_set(a);
        }
    } else {
        VSet all(n);
        for (int v = 0; v < n; ++v) all[v] = v;
        int budget = opt.set_budget;
        if (nb_lattice > kLargeBundles) {
            for (const VSet& a : {VSet{}, VSet{0, last}, VSet{mid}, VSet{0, mid, last}, VSet{0, 1}}) push_set(a);
            budget = std::min(budget, kLargeSetBudget);
        } else {
            for (const VSet& a : {VSet{}, VSet{0, last}, VSet{0, 1}, VSet{mid}, VSet{0, mid, last},
                                  VSet{0, 1, last - 1, last}, all})
                push_set(a);
        }
        Stream rng(opt.seed, static_cast<std::uint64_t>(n) * 1000 + nb_lattice, 1);
        while (static_cast<int>(p.sets.size()) < budget) {
            VSet a;
            int size = 1 + static_cast<int>(rng.below(4));
            for (int i = 0; i < size; ++i) a.push_back(static_cast<int>(rng.below(n)));
            push_set(a);
        }
    }
    std::set<VSet> seen_sw;
    auto push_switch = [&](VSet a) {
        a = clean(std::move(a), n);
        if (seen_sw.insert(a).second) p.switches.push_back({a, 0, last});
    };
    if (nb_lattice <= kLargeBundles) push_switch({});
    push_switch({0, last});
    if (n <= 9) {
        push_switch({mid});
        push_switch({1, last - 1});
        push_switch({0, 1, mid, last});
    }
    auto push_pair = [&](std::vector<SetPair>& out, VSet a, VSet b, std::size_t min_size) {
        a = clean(std::move(a), n);
        b = clean(std::move(b), n);
        if (a.size() < min_size || b.size() < min_size) return;
        for (const auto& q : out)
            if (q.a == a && q.b == b) return;
        out.push_back({a, b});
    };
    for (auto [a, b] : std::vector<std::pair<VSet, VSet>>{{{0, 1}, {last - 1, last}},
                                                          {{0, last}, {0, last}},
                                                          {{0, mid}, {mid, last}},
                                                          {{0, 1, mid}, {last - 1, last}},
                                                          {{0, 1}, {0, 1, mid, last}}}) {
        push_pair(p.two_set_pairs, a, b, 2);
    }
    for (auto [a, b] : std::vector<std::pair<VSet, VSet>>{{{0}, {last}},
                                                          {{0}, {mid}},
                                                          {{mid}, {mid}},
                                                          {{0, 1}, {mid}},
                                                          {{0, last}, {1, mid}},
                                                          {{0, 1, mid}, {last}}}) {
        push_pair(p.corr_pairs, a, b, 1);
    }
    if (nb_lattice <= 4) {
        for (int e = 0; e < nb_lattice; ++e) p.two_arm_edges.push_back(e);
    } else {
        p.two_arm_edges = {0, nb_lattice / 2, nb_lattice - 1};
    }
    return p;
}

// Accumulates the worst deviation per (instance, identity, beta) in first-seen order.
class Rows {
public:
    Rows(std::vector<double> betas, double tol) : betas_(std::move(betas)), tol_(tol) {}

    void add(const std::string& inst, const std::string& id, int k, double dev, const std::string& what) {
        Acc& a = slot(inst, id, k);
        ++a.cases;
        if (!(dev <= a.dev)) {
            a.dev = dev;
            a.worst = what;
        }
    }
    void unevaluated(const std::string& inst, const std::string& id, int k, const std::string& why) {
        Acc& a = slot(inst, id, k);
        a.evaluated = false;
        if (a.why.empty()) a.why = why;
    }
    OracleReport finish() const {
        OracleReport rep;
        for (const auto& key : order_) {
            const auto& accs = acc_.at(key);
            for (std::size_t k = 0; k < accs.size(); ++k) {
                const Acc& a = accs[k];
                if (a.cases == 0 && a.evaluated) continue;
                CheckRow r;
                r.instance = key.first;
                r.identity = key.second;
                r.beta = betas_[k];
                r.deviation = a.dev;
                r.cases = a.cases;
                r.evaluated = a.evaluated;
                r.pass = a.evaluated && std::isfinite(a.dev) && a.dev <= tol_;
                r.detail = a.evaluated ? "worst " + a.worst : "not evaluated: " + a.why;
                if (!a.evaluated && a.cases > 0) r.detail += "; " + std::to_string(a.cases) + " cases evaluated, worst " + a.worst;
                rep.rows.push_back(r);
            }
        }
        return rep;
    }

private:
    struct Acc {
        double dev = 0.0;
        int cases = 0;
        bool evaluated = true;
        std::string worst, why;
    };
    Acc& slot(const std::string& inst, const std::string& id, int k) {
        auto key = std::make_pair(inst, id);
        auto it = acc_.find(key);
        if (it == acc_.end()) {
            order_.push_back(key);
            it = acc_.emplace(key, std::vector<Acc>(betas_.size())).first;
        }
        return it->second[k];
    }

    std::vector<double> betas_;
    double tol_;
    std::vector<std::pair<std::string, std::string>> order_;
    std::map<std::pair<std::string, std::string>, std::vector<Acc>> acc_;
};

// Chain of boundary partitions free <= pair <= two classes <= wired on the lattice boundary.
std::vector<BoundaryPartition> partition_chain(const Graph& g) {
    std::vector<int> bd;
    for (int v = 0; v < g.num_vertices(); ++v)
        if (v != g.ghost() && g.is_boundary(v)) bd.push_back(v);
    std::vector<BoundaryPartition> chain;
    chain.push_back(BoundaryPartition::free_bc(g));
    BoundaryPartition a = BoundaryPartition::free_bc(g);
    if (bd.size() >= 2) a.cls[bd[0]] = a.cls[bd[1]] = 0;
    chain.push_back(a);
    BoundaryPartition b = a;
    for (std::size_t i = 2; i < bd.size(); ++i) b.cls[bd[i]] = bd.size() > 3 ? 1 : 0;
    chain.push_back(b);
    chain.push_back(BoundaryPartition::wired(g));
    for (std::size_t i = 0; i + 1 < chain.size(); ++i)
        if (!chain[i].refines(chain[i + 1])) throw std::logic_error("boundary partition chain is not ordered");
    return chain;
}

class Engine {
public:
    // From a ghost-free base graph: both variants available.
    Engine(const Graph& base, std::string name, std::vector<double> betas, const OracleOptions& opt, Rows& rows)
        : name_(std::move(name)), betas_(std::move(betas)), opt_(opt), rows_(rows) {
        inst_[0] = base;
        inst_[1] = attach_ghost(base);
        init();
    }
    // From a single instance graph (with or without ghost).
    Engine(const Graph& g, std::string name, std::vector<double> betas, const OracleOptions& opt, Rows& rows, bool)
        : name_(std::move(name)), betas_(std::move(betas)), opt_(opt), rows_(rows) {
        inst_[g.has_ghost() ? 1 : 0] = g;
        init();
    }

    bool has(int v) const { return inst_[v].has_value(); }
    const Graph& graph(int v) const { return *inst_[v]; }
    std::string inst_name(int v) const { return v ? name_ + "+ghost" : name_; }
    int n() const { return n_; }

    void set_plan(const Plan& p) {
        plan_ = p;
        masks_.clear();
        auto add = [&](std::uint64_t m) {
            if (m) masks_.insert(m);
        };
        auto add_pair_masks = [&](const VSet& a, const VSet& b) {
            std::uint64_t ma = vertex_mask(a), mb = vertex_mask(b);
            add(ma);
            add(mb);
            add(sym_diff(ma, mb));
            for (int x : a)
                for (int y : b) {
                    add(vertex_mask({x}));
                    add(vertex_mask({y}));
                    add(sym_diff(vertex_mask({x}), vertex_mask({y})));
                }
        };
        for (const auto& a : p.sets) add(vertex_mask(a));
        for (const auto& s : p.switches) {
            std::uint64_t ma = vertex_mask(s.a), xy = sym_diff(vertex_mask({s.x}), vertex_mask({s.y}));
            add(ma);
            add(xy);
            add(sym_diff(ma, xy));
        }
        for (const auto& q : p.two_set_pairs) add_pair_masks(q.a, q.b);
        for (const auto& q : p.corr_pairs) add_pair_masks(q.a, q.b);
        if (has(0)) {
            for (int e : p.two_arm_edges) {
                const auto& b = graph(0).bundle(e);
                add(sym_diff(vertex_mask({b.u}), vertex_mask({b.v})));
            }
        }
    }

    void run() {
        for (int v = 0; v < 2; ++v) {
            if (!has(v) || (plan_.only_variant >= 0 && plan_.only_variant != v)) continue;
            if (plan_.es) edwards_sokal(v);
            if (plan_.switching && (v == 0 || has(0))) switching(v);
            if (plan_.two_set && v == 1) two_set();
            if (plan_.griffiths) griffiths(v);
            if (plan_.monotonicity) monotonicity(v);
        }
        if (plan_.two_arms && has(0) && has(1)) two_arms();
    }

private:
    void init() {
        for (double b : betas_) ps_.push_back(p_from_beta(b));
        const Graph& g = has(0) ? graph(0) : graph(1);
        n_ = g.num_lattice_vertices();
    }

    // Spin correlation <sigma_mask> on variant v for beta index k.
    double corr(int v, std::uint64_t mask, int k) {
        if (mask == 0) return 1.0;
        SpinMoments& m = moments(v);
        int i = m.find(mask);
        if (i < 0) throw std::logic_error("observable missing from spin moment table");
        return m.expect(i, betas_[k]);
    }
    SpinMoments& moments(int v) {
        if (!mom_[v]) {
            std::vector<std::uint64_t> ms(masks_.begin(), masks_.end());
            mom_[v] = std::make_unique<SpinMoments>(graph(v), ms, std::vector<int>{}, opt_.caps);
        }
        return *mom_[v];
    }

    const std::vector<double>& fk_total(int v, int xi_index, const BoundaryPartition& xi) {
        auto key = std::make_pair(v, xi_index);
        auto it = z_.find(key);
        if (it == z_.end()) it = z_.emplace(key, fk_frontier_sum(graph(v), ps_, xi, {}, opt_.caps)).first;
        return it->second;
    }
    std::vector<double> fk_prob(int v, int xi_index, const BoundaryPartition& xi, const FkQuery& q) {
        const auto& z = fk_total(v, xi_index, xi);
        auto s = fk_frontier_sum(graph(v), ps_, xi, q, opt_.caps);
        for (std::size_t k = 0; k < s.size(); ++k) s[k] /= z[k];
        return s;
    }

    void edwards_sokal(int v) {
        const Graph& g = graph(v);
        const std::string inst = inst_name(v);
        BoundaryPartition free = BoundaryPartition::free_bc(g);
        for (const auto& a : plan_.sets) {
            try {
                FkQuery q;
                q.use_parity = true;
                q.parity_set = a;
                auto fa = fk_prob(v, 0, free, q);
                for (std::size_t k = 0; k < betas_.size(); ++k) {
                    double s = corr(v, vertex_mask(a), static_cast<int>(k));
                    rows_.add(inst, "edwards_sokal", static_cast<int>(k), std::abs(s - fa[k]), "A=" + set_str(a));
                }
            } catch (const SizeError& e) {
                for (std::size_t k = 0; k < betas_.size(); ++k)
                    rows_.unevaluated(inst, "edwards_sokal", static_cast<int>(k), e.what());
            }
        }
    }

    void switching(int v) {
        const std::string inst = inst_name(v);
        bool capped = false;
        std::string why;
        for (const auto& c : plan_.switches) {
            if (v == 0 && (c.a.size() % 2)) continue;
            std::uint64_t ma = vertex_mask(c.a), xy = sym_diff(vertex_mask({c.x}), vertex_mask({c.y}));
            bool special = ma == xy;
            std::string what = "A=" + set_str(c.a) + " x=" + std::to_string(c.x) + " y=" + std::to_string(c.y);
            TraceSums ts;
            if (!capped) {
                try {
                    ts = trace_frontier_sum(graph(v), betas_, TraceQuery{c.a, true, {c.x}, {c.y}}, opt_.caps);
                } catch (const SizeError& e) {
                    capped = true;
                    why = e.what();
                }
            }
            if (capped) {
                for (std::size_t k = 0; k < betas_.size(); ++k) {
                    rows_.unevaluated(inst, "switching_ratio", static_cast<int>(k), why);
                    if (special) rows_.unevaluated(inst, "switching_pair", static_cast<int>(k), why);
                }
                continue;
            }
            for (std::size_t k = 0; k < betas_.size(); ++k) {
                int kk = static_cast<int>(k);
                double lhs = ts.event[k] / ts.total[k];
                double den = corr(v, ma, kk);
                if (std::abs(den) < 1e-300) {
                    rows_.unevaluated(inst, "switching_ratio", kk, "vanishing <sigma_A>");
                    continue;
                }
                double rhs = corr(v, sym_diff(ma, xy), kk) * corr(0, xy, kk) / den;
                rows_.add(inst, "switching_ratio", kk, std::abs(lhs - rhs), what);
                if (special) {
                    double free_xy = corr(0, xy, kk);
                    rows_.add(inst, "switching_pair", kk, std::abs(free_xy - corr(v, xy, kk) * lhs), what);
                }
            }
        }
    }

    double truncated(int v, int a, int b, int k) {
        std::uint64_t ma = vertex_mask({a}), mb = vertex_mask({b});
        return corr(v, sym_diff(ma, mb), k) - corr(v, ma, k) * corr(v, mb, k);
    }

    void two_set() {
        const std::string inst = inst_name(1);
        for (const auto& q : plan_.two_set_pairs) {
            std::uint64_t ma = vertex_mask(q.a), mb = vertex_mask(q.b);
            std::string what = "A=" + set_str(q.a) + " B=" + set_str(q.b);
            for (std::size_t k = 0; k < betas_.size(); ++k) {
                int kk = static_cast<int>(k);
                double lhs = corr(1, sym_diff(ma, mb), kk) - corr(1, ma, kk) * corr(1, mb, kk);
                double sum = 0.0;
                for (int a : q.a)
                    for (int b : q.b) sum += truncated(1, a, b, kk);
                double rhs = std::ldexp(sum, static_cast<int>(q.a.size() + q.b.size()) - 4);
                rows_.add(inst, "two_set_lower", kk, std::max(0.0, -lhs), what);
                rows_.add(inst, "two_set_upper", kk, std::max(0.0, lhs - rhs), what);
            }
        }
    }

    void griffiths(int v) {
        const Graph& g = graph(v);
        const std::string inst = inst_name(v);
        for (const auto& q : plan_.corr_pairs) {
            std::uint64_t ma = vertex_mask(q.a), mb = vertex_mask(q.b);
            for (std::size_t k = 0; k < betas_.size(); ++k) {
                int kk = static_cast<int>(k);
                double gap = corr(v, sym_diff(ma, mb), kk) - corr(v, ma, kk) * corr(v, mb, kk);
                rows_.add(inst, "griffiths1", kk, std::max(0.0, -gap), "A=" + set_str(q.a) + " B=" + set_str(q.b));
            }
        }
        // Lowered couplings on every third bundle (ghost bundles included when present).
        std::vector<int> scaled;
        for (int b = 0; b < g.num_bundles(); b += 3) scaled.push_back(b);
        std::vector<VSet> obs;
        std::vector<std::uint64_t> ms;
        for (const auto& a : plan_.sets)
            if (!a.empty()) {
                obs.push_back(a);
                ms.push_back(vertex_mask(a));
            }
        SpinMoments m2(g, ms, scaled, opt_.caps);
        for (std::size_t i = 0; i < ms.size(); ++i)
            for (double s : {0.0, 0.5, 1.0})
                for (std::size_t k = 0; k < betas_.size(); ++k) {
                    double hi = m2.expect(static_cast<int>(i) + 1, betas_[k], 1.0);
                    double lo = m2.expect(static_cast<int>(i) + 1, betas_[k], s);
                    std::ostringstream what;
                    what << "A=" << set_str(obs[i]) << " J'=" << s;
                    rows_.add(inst, "griffiths2", static_cast<int>(k), std::max(0.0, lo - hi), what.str());
                }
    }

    void monotonicity(int v) {
        const Graph& g = graph(v);
        const std::string inst = inst_name(v);
        auto chain = partition_chain(g);
        int nb = g.num_bundles();
        // Finite energy on the single-edge graph with both boundary conditions.
        {
            Graph e = graph_from_points(2, {Point{}, Point{1, 0, 0, 0}});
            for (std::size_t k = 0; k < ps_.size(); ++k) {
                for (int mult : {1, 2, 3}) {
                    double pe = bundle_p(ps_[k], mult);
                    for (const auto& xi : {BoundaryPartition::free_bc(e), BoundaryPartition::wired(e)}) {
                        double m = enumerate_fk(e, pe, xi).edge_marginal(0);
                        double dev = std::max({0.0, pe / (2 - pe) - m, m - pe});
                        rows_.add(inst, "finite_energy", static_cast<int>(k), dev, "single edge");
                    }
                }
            }
        }
        if (nb <= 12) {
            monotonicity_enumerated(v, chain);
        } else {
            if (nb <= 20 && g.num_vertices() <= opt_.caps.max_vertices) finite_energy_enumerated(v, chain);
            monotonicity_sampled(v, chain);
        }
        (void)inst;
    }

    void finite_energy_enumerated(int v, const std::vector<BoundaryPartition>& chain) {
        const Graph& g = graph(v);
        const std::string inst = inst_name(v);
        int nb = g.num_bundles();
        EnumCaps caps = opt_.caps;
        caps.max_bundles = std::max(caps.max_bundles, nb);
        for (std::size_t k = 0; k < ps_.size(); ++k)
            for (std::size_t x = 0; x < chain.size(); ++x) {
                auto d = enumerate_fk(g, ps_[k], chain[x], caps);
                double worst = 0.0;
                for (int b = 0; b < nb; ++b) {
                    double pe = bundle_p(ps_[k], g.bundle(b).mult);
                    double lo = pe / (2 - pe);
                    std::uint64_t bit = 1ull << b;
                    for (std::uint64_t s = 0; s < d.weight.size(); ++s) {
                        if (s & bit) continue;
                        double w0 = d.weight[s], w1 = d.weight[s | bit];
                        double c = w1 / (w0 + w1);
                        worst = std::max({worst, lo - c, c - pe});
                    }
                }
                rows_.add(inst, "finite_energy", static_cast<int>(k), std::max(0.0, worst),
                          "conditional, boundary partition " + std::to_string(x));
            }
    }

    void monotonicity_enumerated(int v, const std::vector<BoundaryPartition>& chain) {
        const Graph& g = graph(v);
        const std::string inst = inst_name(v);
        int nb = g.num_bundles();
        std::size_t ns = std::size_t{1} << nb;
        finite_energy_enumerated(v, chain);
        if (nb <= 5) {
            auto ups = all_upsets(nb);
            for (std::size_t k = 0; k < ps_.size(); ++k) {
                std::vector<std::vector<double>> pu(chain.size());
                for (std::size_t x = 0; x < chain.size(); ++x) {
                    auto d = enumerate_fk(g, ps_[k], chain[x]);
                    // Byte tables: probability of each subset of every block of 8 states.
                    std::array<std::array<double, 256>, 4> tab{};
                    for (int blk = 0; blk < 4; ++blk)
                        for (int m = 0; m < 256; ++m) {
                            KahanSum s;
                            for (int j = 0; j < 8; ++j) {
                                std::size_t st = static_cast<std::size_t>(blk * 8 + j);
                                if (((m >> j) & 1) && st < ns) s.add(d.prob(st));
                            }
                            tab[blk][m] = s.value();
                        }
                    auto prob = [&](std::uint32_t u) {
                        return tab[0][u & 255] + tab[1][(u >> 8) & 255] + tab[2][(u >> 16) & 255] + tab[3][u >> 24];
                    };
                    pu[x].resize(ups.size());
                    for (std::size_t i = 0; i < ups.size(); ++i) pu[x][i] = prob(ups[i]);
                    double worst = 0.0;
                    for (std::size_t i = 0; i < ups.size(); ++i)
                        for (std::size_t j = i; j < ups.size(); ++j)
                            worst = std::max(worst, pu[x][i] * pu[x][j] - prob(ups[i] & ups[j]));
                    rows_.add(inst, "fkg", static_cast<int>(k), worst,
                              "all " + std::to_string(ups.size()) + " up-sets, boundary partition " + std::to_string(x));
                }
                cbc_rows(inst, static_cast<int>(k), pu, ups.size(), "all up-sets");
            }
            return;
        }
        // Random up-sets: up-closures of one to three random configurations.
        Stream rng(opt_.seed, 77 + static_cast<std::uint64_t>(nb), static_cast<std::uint64_t>(v));
        const int nup = 40;
        std::size_t words = (ns + 63) / 64;
        std::vector<std::vector<std::uint64_t>> bits(nup, std::vector<std::uint64_t>(words, 0));
        for (int u = 0; u < nup; ++u) {
            std::vector<std::uint64_t> gens;
            int ng = 1 + static_cast<int>(rng.below(3));
            for (int i = 0; i < ng; ++i) gens.push_back(rng.below(ns));
            for (std::uint64_t s = 0; s < ns; ++s)
                for (auto gm : gens)
                    if ((s & gm) == gm) {
                        bits[u][s / 64] |= 1ull << (s % 64);
                        break;
                    }
        }
        for (std::size_t k = 0; k < ps_.size(); ++k) {
            std::vector<std::vector<double>> pu(chain.size(), std::vector<double>(nup));
            for (std::size_t x = 0; x < chain.size(); ++x) {
                auto d = enumerate_fk(g, ps_[k], chain[x]);
                auto prob = [&](auto in) {
                    KahanSum s;
                    for (std::uint64_t st = 0; st < ns; ++st)
                        if (in(st)) s.add(d.prob(st));
                    return s.value();
                };
                for (int u = 0; u < nup; ++u)
                    pu[x][u] = prob([&](std::uint64_t st) { return (bits[u][st / 64] >> (st % 64)) & 1; });
                double worst = 0.0;
                for (int i = 0; i < nup; ++i)
                    for (int j = i; j < nup; ++j) {
                        double both = prob([&](std::uint64_t st) {
                            return ((bits[i][st / 64] & bits[j][st / 64]) >> (st % 64)) & 1;
                        });
                        worst = std::max(worst, pu[x][i] * pu[x][j] - both);
                    }
                rows_.add(inst, "fkg", static_cast<int>(k), worst,
                          std::to_string(nup) + " random up-sets, boundary partition " + std::to_string(x));
            }
            cbc_rows(inst, static_cast<int>(k), pu, nup, "random up-sets");
        }
    }

    void cbc_rows(const std::string& inst, int k, const std::vector<std::vector<double>>& pu, std::size_t nev,
                  const std::string& what) {
        double worst = 0.0;
        for (std::size_t x = 0; x < pu.size(); ++x)
            for (std::size_t y = x + 1; y < pu.size(); ++y)
                for (std::size_t i = 0; i < nev; ++i) worst = std::max(worst, pu[x][i] - pu[y][i]);
        rows_.add(inst, "cbc", k, worst, what + " over the boundary partition chain");
    }

    struct Event {
        int open = -1;
        int a = -1, b = -1;
        void apply(FkQuery& q) const {
            if (open >= 0) q.forced_open.push_back(open);
            if (a >= 0) q.connect.push_back({{a}, {b}});
        }
        std::string str() const {
            return open >= 0 ? "open(" + std::to_string(open) + ")"
                             : "conn(" + std::to_string(a) + "," + std::to_string(b) + ")";
        }
    };

    void monotonicity_sampled(int v, const std::vector<BoundaryPartition>& chain) {
        const Graph& g = graph(v);
        const std::string inst = inst_name(v);
        int nb = g.num_bundles();
        bool heavy = nb > 60;
        int npairs = heavy ? std::min(2, opt_.sampled_pairs) : opt_.sampled_pairs;
        Stream rng(opt_.seed, 991 + static_cast<std::uint64_t>(nb), static_cast<std::uint64_t>(v));
        auto random_event = [&](bool allow_conn) {
            Event e;
            if (allow_conn && rng.coin()) {
                e.a = static_cast<int>(rng.below(n_));
                do e.b = static_cast<int>(rng.below(n_));
                while (e.b == e.a);
            } else {
                e.open = static_cast<int>(rng.below(nb));
            }
            return e;
        };
        std::vector<std::pair<Event, Event>> pairs;
        for (int i = 0; i < npairs; ++i) pairs.push_back({random_event(!heavy), random_event(!heavy)});
        std::vector<std::size_t> used{0, chain.size() - 1};
        if (!heavy) used = {0, 1, 2, chain.size() - 1};
        try {
            // probs[x][event] for CBC; joint for FKG.
            std::vector<std::map<std::string, std::vector<double>>> marg(used.size());
            for (std::size_t ui = 0; ui < used.size(); ++ui) {
                std::size_t x = used[ui];
                for (const auto& [e1, e2] : pairs) {
                    for (const Event* e : {&e1, &e2}) {
                        if (marg[ui].count(e->str())) continue;
                        FkQuery q;
                        e->apply(q);
                        marg[ui][e->str()] = fk_prob(v, static_cast<int>(x), chain[x], q);
                    }
                    FkQuery q;
                    e1.apply(q);
                    e2.apply(q);
                    auto joint = fk_prob(v, static_cast<int>(x), chain[x], q);
                    for (std::size_t k = 0; k < ps_.size(); ++k) {
                        double dev = marg[ui][e1.str()][k] * marg[ui][e2.str()][k] - joint[k];
                        rows_.add(inst, "fkg", static_cast<int>(k), std::max(0.0, dev),
                                  e1.str() + " & " + e2.str() + ", boundary partition " + std::to_string(x));
                    }
                }
            }
            for (std::size_t i = 0; i < used.size(); ++i)
                for (std::size_t j = i + 1; j < used.size(); ++j)
                    for (const auto& [key, lo] : marg[i])
                        for (std::size_t k = 0; k < ps_.size(); ++k) {
                            double dev = lo[k] - marg[j].at(key)[k];
                            rows_.add(inst, "cbc", static_cast<int>(k), std::max(0.0, dev),
                                      key + ", partitions " + std::to_string(used[i]) + "<=" + std::to_string(used[j]));
                        }
            // Edge marginals lie between p/(2-p) and p.
            for (std::size_t ui = 0; ui < used.size(); ++ui)
                for (const auto& [key, val] : marg[ui]) {
                    if (key.rfind("open(", 0) != 0) continue;
                    int b = std::stoi(key.substr(5));
                    for (std::size_t k = 0; k < ps_.size(); ++k) {
                        double pe = bundle_p(ps_[k], g.bundle(b).mult);
                        double dev = std::max({0.0, pe / (2 - pe) - val[k], val[k] - pe});
                        rows_.add(inst, "finite_energy", static_cast<int>(k), dev, "marginal " + key);
                    }
                }
        } catch (const SizeError& e) {
            for (std::size_t k = 0; k < ps_.size(); ++k) {
                rows_.unevaluated(inst, "fkg", static_cast<int>(k), e.what());
                rows_.unevaluated(inst, "cbc", static_cast<int>(k), e.what());
            }
        }
    }

    void two_arms() {
        const Graph& g0 = graph(0);
        const Graph& g1 = graph(1);
        const std::string inst = name_;
        BoundaryPartition f0 = BoundaryPartition::free_bc(g0), f1 = BoundaryPartition::free_bc(g1);
        for (int e : plan_.two_arm_edges) {
            const auto& b = g0.bundle(e);
            int e1 = g1.find_bundle(b.u, b.v);
            std::string what = "edge " + std::to_string(b.u) + "-" + std::to_string(b.v);
            try {
                FkQuery q0, q1;
                q0.forced_open = {e};
                q1.forced_open = {e1};
                auto m0 = fk_prob(0, 0, f0, q0);
                auto m1 = fk_prob(1, 0, f1, q1);
                std::uint64_t xy = sym_diff(vertex_mask({b.u}), vertex_mask({b.v}));
                for (std::size_t k = 0; k < ps_.size(); ++k) {
                    int kk = static_cast<int>(k);
                    double rhs = 0.5 * ps_[k] * (corr(1, xy, kk) - corr(0, xy, kk));
                    rows_.add(inst, "two_arms", kk, std::abs((m1[k] - m0[k]) - rhs), what);
                }
            } catch (const SizeError& err) {
                for (std::size_t k = 0; k < ps_.size(); ++k) rows_.unevaluated(inst, "two_arms", static_cast<int>(k), err.what());
            }
        }
    }

    std::string name_;
    std::vector<double> betas_, ps_;
    OracleOptions opt_;
    Rows& rows_;
    std::array<std::optional<Graph>, 2> inst_;
    std::array<std::unique_ptr<SpinMoments>, 2> mom_;
    std::map<std::pair<int, int>, std::vector<double>> z_;
    std::set<std::uint64_t> masks_;
    Plan plan_;
    int n_ = 0;
};

std::string describe(const Graph& g) {
    return "graph(V=" + std::to_string(g.num_lattice_vertices()) + ",E=" + std::to_string(g.num_bundles()) + ")";
}

int lattice_bundles(const Graph& g) {
    int c = 0;
    for (int b = 0; b < g.num_bundles(); ++b)
        if (!g.is_ghost_bundle(b)) ++c;
    return c;
}

}  // namespace

OracleReport verify_edwards_sokal(const Graph& g, double beta, const OracleOptions& opt) {
    Rows rows({beta}, opt.tol);
    Engine eng(g, describe(g), {beta}, opt, rows, true);
    Plan full = full_plan(g.num_lattice_vertices(), lattice_bundles(g), opt);
    Plan p;
    p.es = true;
    p.sets = full.sets;
    eng.set_plan(p);
    eng.run();
    return rows.finish();
}

OracleReport verify_switching(const Graph& g, double beta, const std::vector<int>& a, int x, int y, bool plus,
                              const OracleOptions& opt) {
    if (g.has_ghost()) throw std::invalid_argument("switching check takes the ghost-free graph");
    Rows rows({beta}, opt.tol);
    Engine eng(g, describe(g), {beta}, opt, rows);
    Plan p;
    p.switching = true;
    p.switches.push_back({clean(a, g.num_vertices()), x, y});
    p.only_variant = plus ? 1 : 0;
    eng.set_plan(p);
    eng.run();
    return rows.finish();
}

OracleReport verify_two_set_bound(const Graph& g, double beta, const std::vector<int>& a, const std::vector<int>& b,
                            const OracleOptions& opt) {
    if (g.has_ghost()) throw std::invalid_argument("two-set bound takes the ghost-free graph");
    Rows rows({beta}, opt.tol);
    Engine eng(attach_ghost(g), describe(g), {beta}, opt, rows, true);
    Plan p;
    p.two_set = true;
    p.two_set_pairs.push_back({clean(a, g.num_vertices()), clean(b, g.num_vertices())});
    eng.set_plan(p);
    eng.run();
    return rows.finish();
}

OracleReport verify_monotonicity(const Graph& g, double beta, const OracleOptions& opt) {
    Rows rows({beta}, opt.tol);
    Engine eng(g, describe(g), {beta}, opt, rows, true);
    Plan full = full_plan(g.num_lattice_vertices(), lattice_bundles(g), opt);
    Plan p;
    p.monotonicity = p.griffiths = true;
    p.sets = full.sets;
    p.corr_pairs = full.corr_pairs;
    eng.set_plan(p);
    eng.run();
    return rows.finish();
}

OracleReport verify_two_arms_identity(const Graph& g, double p, int e, const OracleOptions& opt) {
    if (g.has_ghost()) throw std::invalid_argument("two-arms check takes the ghost-free graph");
    if (e < 0 || e >= g.num_bundles()) throw std::invalid_argument("edge index out of range");
    double beta = beta_from_p(p);
    Rows rows({beta}, opt.tol);
    Engine eng(g, describe(g), {beta}, opt, rows);
    Plan pl;
    pl.two_arms = true;
    pl.two_arm_edges = {e};
    eng.set_plan(pl);
    eng.run();
    return rows.finish();
}

std::vector<BatteryGraph> standard_battery() {
    auto pt = [](int a, int b) { return Point{a, b, 0, 0}; };
    std::vector<BatteryGraph> out;
    out.push_back({"single_edge", graph_from_points(2, {pt(0, 0), pt(1, 0)})});
    out.push_back({"path2", graph_from_points(2, {pt(0, 0), pt(1, 0), pt(2, 0)})});
    out.push_back({"cycle4", graph_from_points(2, {pt(0, 0), pt(1, 0), pt(0, 1), pt(1, 1)})});
    out.push_back({"box_d2_n1", build_box_graph(2, 1)});
    out.push_back({"box_d2_n2", build_box_graph(2, 2)});
    out.push_back({"box_d3_n1", build_box_graph(3, 1)});
    return out;
}

OracleReport run_battery(const std::vector<BatteryGraph>& graphs, const std::vector<double>& betas,
                         const OracleOptions& opt, int max_bundles) {
    OracleReport rep;
    for (const auto& bg : graphs) {
        if (bg.g.num_bundles() > max_bundles) continue;
        Rows rows(betas, opt.tol);
        Engine eng(bg.g, bg.name, betas, opt, rows);
        eng.set_plan(full_plan(bg.g.num_vertices(), bg.g.num_bundles(), opt));
        eng.run();
        rep.merge(rows.finish());
    }
    return rep;
}

}  // namespace ising
