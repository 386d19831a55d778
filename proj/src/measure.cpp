#include "ising/measure.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <map>
#include <numeric>
#include <sstream>

#include "ising/coupling.hpp"
#include "ising/exact.hpp"
#include "ising/model.hpp"
#include "ising/output.hpp"
#include "ising/stats.hpp"

namespace ising {

void ExperimentConfig::validate() const {
    if (d < 1 || d > 4) throw ConfigError("dimension must be between 1 and 4");
    if (L < 1) throw ConfigError("box size must be positive");
    if (beta < 0 && p < 0) throw ConfigError("one of beta or p is required");
    if (p > 1) throw ConfigError("p must lie in [0, 1]");
    if (beta >= 0 && p >= 0 && std::abs(p - p_from_beta(beta)) > 1e-9)
        throw ConfigError("p and beta are not linked by p = 1 - exp(-2 beta)");
    if (replicas < 1 || samples < 1 || burn_in < 0 || thin < 1) throw ConfigError("replicas, samples and thin must be positive");
    if (boundary != "wired" && boundary != "free") throw ConfigError("boundary must be wired or free");
}

double ExperimentConfig::resolved_beta() const {
    validate();
    if (beta >= 0) return beta;
    return p >= 1.0 ? std::numeric_limits<double>::infinity() : beta_from_p(p);
}

double ExperimentConfig::resolved_p() const {
    validate();
    return p >= 0 ? p : p_from_beta(beta);
}

namespace {

int boundary_vertex(const Graph& g) {
    for (int v = 0; v < g.num_vertices(); ++v)
        if (g.is_boundary(v)) return v;
    throw ConfigError("graph has no boundary vertex");
}

std::vector<int> boundary_vertices(const Graph& g) {
    std::vector<int> out;
    for (int v = 0; v < g.num_vertices(); ++v)
        if (g.is_boundary(v)) out.push_back(v);
    return out;
}

std::uint64_t beta_key(double beta) {
    std::uint64_t bits;
    std::memcpy(&bits, &beta, sizeof bits);
    return mix64(bits);
}

// Edwards-Sokal chain under the wired boundary; f(cluster map, root of the wired class) per sample.
template <class F>
void sample_wired(const Graph& g, double p, std::uint64_t seed, std::uint64_t chain, int burn_in, int thin,
                  int samples, F&& f) {
    auto xi = BoundaryPartition::wired(g);
    const int wv = boundary_vertex(g);
    SpinConfig s(g.num_vertices(), 1);
    BondConfig w(g.num_bundles(), true);
    Stream rng(seed, chain);
    std::uint64_t sweep = 0;
    auto step = [&] {
        rng.set_sweep(sweep++);
        es_sweep(g, s, w, p, xi, rng);
    };
    for (int i = 0; i < burn_in; ++i) step();
    for (int i = 0; i < samples; ++i) {
        for (int t = 0; t < thin; ++t) step();
        ClusterMap cm = clusters(g, w, xi);
        f(cm, cm.root[wv]);
    }
}

// Jackknife over batches of a statistic of pooled sums.
struct Jackknife {
    double value = 0.0, se = 0.0;
};

template <class Stat>
Jackknife jackknife(int batches, Stat&& stat) {
    double full = stat(-1);
    std::vector<double> loo(batches);
    for (int b = 0; b < batches; ++b) loo[b] = stat(b);
    double mean = std::accumulate(loo.begin(), loo.end(), 0.0) / batches;
    double ss = 0.0;
    for (double x : loo) ss += (x - mean) * (x - mean);
    return {batches * full - (batches - 1) * mean, std::sqrt((batches - 1.0) / batches * ss)};
}

struct PairSet {
    std::vector<int> distances;
    std::vector<int> sites;                               // vertex per site
    std::vector<std::vector<std::pair<int, int>>> pairs;  // per distance, site indices
    std::vector<int> centers;                             // site indices of Λ_R0
};

PairSet make_pairs(const BoxLattice& lat, const DecayOptions& opt) {
    const int d = lat.dim();
    if (opt.r_min < 1 || opt.r_max < opt.r_min) throw ConfigError("distances must satisfy 1 <= r_min <= r_max");
    std::vector<int> axes = opt.axes;
    if (axes.empty())
        for (int a = 0; a < d; ++a) axes.push_back(a);
    for (int a : axes)
        if (a < 0 || a >= d) throw ConfigError("axis out of range");
    PairSet ps;
    std::map<int, int> site_of;
    auto site = [&](int v) {
        auto [it, fresh] = site_of.emplace(v, static_cast<int>(ps.sites.size()));
        if (fresh) ps.sites.push_back(v);
        return it->second;
    };
    auto centre = lat.vertices_in(Box{lat.center(), std::min(opt.center_radius, lat.radius())});
    for (int u : centre) ps.centers.push_back(site(u));
    for (int r = opt.r_min; r <= opt.r_max; ++r) {
        ps.distances.push_back(r);
        auto& row = ps.pairs.emplace_back();
        for (int u : centre)
            for (int a : axes) {
                Point q = lat.point(u);
                q[a] += r;
                int v = lat.vertex(q);
                if (v >= 0) row.emplace_back(site(u), site(v));
            }
        if (row.empty()) throw ConfigError("no pair at distance " + std::to_string(r) + " fits in the box");
    }
    return ps;
}

}  // namespace

// ---------------------------------------------------------------- decay

DecayFit fit_decay(const std::vector<int>& distances, const std::vector<double>& estimates,
                   const std::vector<double>& se, const DecayOptions& opt) {
    if (distances.size() != estimates.size() || se.size() != estimates.size())
        throw std::invalid_argument("fit_decay needs matching series");
    DecayFit f;
    f.distances = distances;
    f.estimates = estimates;
    f.se = se;
    const std::size_t n = estimates.size();
    f.positive = n > 0;
    f.monotone = true;
    std::vector<double> x, y;
    for (std::size_t i = 0; i < n; ++i) {
        f.positive = f.positive && estimates[i] > 0;
        f.negativity_defect = f.negativity_defect || estimates[i] < -4.0 * se[i];
        if (i + 1 < n && estimates[i + 1] > estimates[i] + 1.96 * std::hypot(se[i], se[i + 1])) f.monotone = false;
        if (estimates[i] > 0 && estimates[i] > opt.noise_z * se[i]) {
            x.push_back(distances[i]);
            y.push_back(std::log(estimates[i]));
        } else {
            f.excluded.push_back(distances[i]);
        }
    }
    if (x.size() < 3) {
        f.degenerate = true;
        return f;
    }
    LinearFit lf = fit_line(x, y);
    f.c = -lf.slope;
    f.intercept = lf.intercept;
    f.r2 = lf.r2;
    return f;
}

DecayFit decay_scan(const ExperimentConfig& cfg, const DecayOptions& opt) {
    if (cfg.boundary != "wired") throw ConfigError("decay scans use the wired boundary");
    const double p = cfg.resolved_p();
    Graph g = build_box_graph(cfg.d, cfg.L);
    BoxLattice lat(g);
    PairSet ps = make_pairs(lat, opt);
    const int nr = static_cast<int>(ps.distances.size()), ns = static_cast<int>(ps.sites.size());
    const int B = std::max(2, opt.batches);
    const long total = static_cast<long>(cfg.samples) * cfg.replicas;
    if (total < B) throw ConfigError("fewer samples than batches");
    std::vector<std::vector<double>> two(B, std::vector<double>(nr, 0.0)), mag(B, std::vector<double>(ns, 0.0));
    std::vector<long> count(B, 0);
    long k = 0;
    std::vector<int> root(ns);
    for (int rep = 0; rep < cfg.replicas; ++rep)
        sample_wired(g, p, cfg.seed, rep, cfg.burn_in, cfg.thin, cfg.samples, [&](const ClusterMap& cm, int wired) {
            int b = static_cast<int>(k++ * B / total);
            ++count[b];
            for (int s = 0; s < ns; ++s) {
                root[s] = cm.root[ps.sites[s]];
                mag[b][s] += root[s] == wired;
            }
            for (int r = 0; r < nr; ++r) {
                long hits = 0;
                for (auto [u, v] : ps.pairs[r]) hits += root[u] == root[v];
                two[b][r] += static_cast<double>(hits) / ps.pairs[r].size();
            }
        });
    std::vector<double> two_all(nr, 0.0), mag_all(ns, 0.0);
    long n_all = 0;
    for (int b = 0; b < B; ++b) {
        n_all += count[b];
        for (int r = 0; r < nr; ++r) two_all[r] += two[b][r];
        for (int s = 0; s < ns; ++s) mag_all[s] += mag[b][s];
    }
    std::vector<double> m(ns);
    auto stat = [&](int r, int skip) {
        double n = static_cast<double>(n_all - (skip >= 0 ? count[skip] : 0));
        for (int s = 0; s < ns; ++s) m[s] = (mag_all[s] - (skip >= 0 ? mag[skip][s] : 0.0)) / n;
        double prod = 0.0;
        for (auto [u, v] : ps.pairs[r]) prod += m[u] * m[v];
        return (two_all[r] - (skip >= 0 ? two[skip][r] : 0.0)) / n - prod / ps.pairs[r].size();
    };
    std::vector<double> est(nr), se(nr), tp(nr), mg(nr);
    for (int r = 0; r < nr; ++r) {
        Jackknife j = jackknife(B, [&](int skip) { return stat(r, skip); });
        est[r] = j.value;
        se[r] = j.se;
        tp[r] = two_all[r] / n_all;
        double acc = 0.0;
        for (auto [u, v] : ps.pairs[r]) acc += 0.5 * (mag_all[u] + mag_all[v]) / n_all;
        mg[r] = acc / ps.pairs[r].size();
    }
    DecayFit f = fit_decay(ps.distances, est, se, opt);
    f.beta = cfg.resolved_beta();
    f.d = cfg.d;
    f.L = cfg.L;
    f.two_point = tp;
    f.magnetization = mg;
    return f;
}

DecayFit decay_exact(int d, int L, double beta, const DecayOptions& opt) {
    Graph g = build_box_graph(d, L);
    BoxLattice lat(g);
    PairSet ps = make_pairs(lat, opt);
    const double p = p_from_beta(beta);
    auto xi = BoundaryPartition::wired(g);
    const double Z = fk_frontier_sum(g, {p}, xi, {})[0];
    auto bd = boundary_vertices(g);
    std::vector<double> m(ps.sites.size());
    for (std::size_t s = 0; s < ps.sites.size(); ++s) {
        FkQuery q;
        q.connect = {{{ps.sites[s]}, bd}};
        m[s] = fk_frontier_sum(g, {p}, xi, q)[0] / Z;
    }
    std::map<std::pair<int, int>, double> conn;
    std::vector<double> est, tp, mg;
    for (const auto& row : ps.pairs) {
        double t = 0.0, prod = 0.0, mm = 0.0;
        for (auto [u, v] : row) {
            auto key = std::minmax(ps.sites[u], ps.sites[v]);
            auto it = conn.find(key);
            if (it == conn.end()) {
                FkQuery q;
                q.connect = {{{key.first}, {key.second}}};
                it = conn.emplace(key, fk_frontier_sum(g, {p}, xi, q)[0] / Z).first;
            }
            t += it->second;
            prod += m[u] * m[v];
            mm += 0.5 * (m[u] + m[v]);
        }
        est.push_back((t - prod) / row.size());
        tp.push_back(t / row.size());
        mg.push_back(mm / row.size());
    }
    DecayFit f = fit_decay(ps.distances, est, std::vector<double>(est.size(), 0.0), opt);
    f.beta = beta;
    f.d = d;
    f.L = L;
    f.two_point = tp;
    f.magnetization = mg;
    return f;
}

OnsetScan onset_prescan(const ExperimentConfig& cfg, const OnsetOptions& opt) {
    if (opt.coarse <= 0 || opt.fine <= 0 || opt.beta_hi <= opt.beta_lo) throw ConfigError("bad onset grid");
    Graph g = build_box_graph(cfg.d, cfg.L);
    BoxLattice lat(g);
    auto centre = lat.vertices_in(Box{lat.center(), std::min(opt.center_radius, lat.radius())});
    OnsetScan scan;
    scan.threshold = opt.threshold;
    auto measure = [&](double beta) {
        std::vector<double> series;
        sample_wired(g, p_from_beta(beta), cfg.seed, beta_key(beta), opt.burn_in, cfg.thin, opt.samples,
                     [&](const ClusterMap& cm, int wired) {
                         long hits = 0;
                         for (int v : centre) hits += cm.root[v] == wired;
                         series.push_back(static_cast<double>(hits) / centre.size());
                     });
        Estimate e = batch_means(series, std::min(10, opt.samples));
        scan.betas.push_back(beta);
        scan.magnetization.push_back(e.mean);
        scan.se.push_back(e.se);
        return e.mean;
    };
    auto grid = [](double lo, double step, int i) { return std::round((lo + step * i) * 1e6) / 1e6; };
    double prev = opt.beta_lo, hit = -1.0;
    for (int i = 0;; ++i) {
        double b = grid(opt.beta_lo, opt.coarse, i);
        if (b > opt.beta_hi + 1e-12) break;
        if (measure(b) >= opt.threshold) {
            hit = b;
            break;
        }
        prev = b;
    }
    if (hit < 0) return scan;
    if (hit == prev) {
        scan.onset = hit;
        return scan;
    }
    scan.onset = hit;
    for (int i = 1;; ++i) {
        double b = grid(prev, opt.fine, i);
        if (b >= hit - 1e-12) break;
        if (measure(b) >= opt.threshold) {
            scan.onset = b;
            break;
        }
    }
    return scan;
}

void write_decay_csv(std::ostream& os, const DecayFit& fit) {
    CsvTable t({"d", "L", "beta", "r", "estimate", "se", "two_point", "magnetization", "used"});
    for (std::size_t i = 0; i < fit.distances.size(); ++i) {
        bool used = std::find(fit.excluded.begin(), fit.excluded.end(), fit.distances[i]) == fit.excluded.end();
        t.row() << fit.d << fit.L << fit.beta << fit.distances[i] << fit.estimates[i] << fit.se[i]
                << (i < fit.two_point.size() ? fit.two_point[i] : 0.0)
                << (i < fit.magnetization.size() ? fit.magnetization[i] : 0.0) << used;
    }
    t.write(os);
}

void write_onset_csv(std::ostream& os, const OnsetScan& scan) {
    CsvTable t({"beta", "magnetization", "se", "threshold", "onset"});
    for (std::size_t i = 0; i < scan.betas.size(); ++i)
        t.row() << scan.betas[i] << scan.magnetization[i] << scan.se[i] << scan.threshold << (scan.betas[i] == scan.onset);
    t.write(os);
}

void write_decay_svg(const std::filesystem::path& path, const DecayFit& fit) {
    SvgSeries pts{"estimate", {}, {}, {}};
    for (std::size_t i = 0; i < fit.distances.size(); ++i) {
        if (fit.estimates[i] <= 0) continue;
        pts.x.push_back(fit.distances[i]);
        pts.y.push_back(fit.estimates[i]);
        pts.err.push_back(fit.se[i]);
    }
    std::vector<SvgSeries> series{pts};
    if (!fit.degenerate) {
        SvgSeries line{"fit c=" + fmt_num(fit.c), {}, {}, {}};
        for (int r : fit.distances) {
            line.x.push_back(r);
            line.y.push_back(std::exp(fit.intercept - fit.c * r));
        }
        series.push_back(line);
    }
    write_svg_plot(path, "truncated two-point function, beta=" + fmt_num(fit.beta), "distance", "estimate", series,
                   true);
}

// ---------------------------------------------------------------- mixing

namespace {

Point parse_point(const std::string& s, int d) {
    Point p{};
    std::stringstream ss(s);
    std::string tok;
    int i = 0;
    while (std::getline(ss, tok, ',')) {
        if (i >= d) throw ConfigError("too many coordinates in '" + s + "'");
        try {
            std::size_t used = 0;
            p[i++] = std::stoi(tok, &used);
            if (used != tok.size()) throw ConfigError("bad coordinate '" + tok + "'");
        } catch (const std::logic_error&) {
            throw ConfigError("bad coordinate '" + tok + "'");
        }
    }
    if (i != d) throw ConfigError("expected " + std::to_string(d) + " coordinates in '" + s + "'");
    return p;
}

std::string point_text(const Point& p, int d) {
    std::string s;
    for (int i = 0; i < d; ++i) s += (i ? "," : "") + std::to_string(p[i]);
    return s;
}

int linf_norm(const Point& p, int d) {
    int m = 0;
    for (int i = 0; i < d; ++i) m = std::max(m, std::abs(p[i]));
    return m;
}

std::vector<int> resolve(const EventSpec& ev, const BoxLattice& lat) {
    std::vector<int> out;
    for (auto& [a, b] : ev.edges) {
        int u = lat.vertex(a), v = lat.vertex(b);
        int e = u >= 0 && v >= 0 ? lat.graph().find_bundle(u, v) : -1;
        if (e < 0) throw ConfigError("event edge is not an edge of the box");
        out.push_back(e);
    }
    return out;
}

bool holds(EventKind kind, const std::vector<int>& edges, const BondConfig& w) {
    switch (kind) {
        case EventKind::Sure: return true;
        case EventKind::AllOpen: return std::all_of(edges.begin(), edges.end(), [&](int e) { return w.open(e); });
        case EventKind::AnyOpen: return std::any_of(edges.begin(), edges.end(), [&](int e) { return w.open(e); });
    }
    return false;
}

// Event as a signed sum of "all of T open" indicators.
std::vector<std::pair<int, std::vector<int>>> expand(EventKind kind, const std::vector<int>& edges) {
    if (kind == EventKind::Sure) return {{1, {}}};
    if (kind == EventKind::AllOpen) return {{1, edges}};
    if (edges.size() > 12) throw SizeError("too many edges for inclusion-exclusion");
    std::vector<std::pair<int, std::vector<int>>> out;
    for (unsigned mask = 1; mask < (1u << edges.size()); ++mask) {
        std::vector<int> t;
        for (std::size_t i = 0; i < edges.size(); ++i)
            if (mask >> i & 1) t.push_back(edges[i]);
        out.push_back({t.size() % 2 ? 1 : -1, t});
    }
    return out;
}

}  // namespace

EventSpec parse_event(const std::string& text, int d) {
    EventSpec ev;
    if (text == "sure") return ev;
    auto colon = text.find(':');
    std::string kind = text.substr(0, colon);
    if (colon == std::string::npos || (kind != "all" && kind != "any"))
        throw ConfigError("event must be 'sure', 'all:...' or 'any:...'");
    ev.kind = kind == "all" ? EventKind::AllOpen : EventKind::AnyOpen;
    std::stringstream ss(text.substr(colon + 1));
    std::string edge;
    while (std::getline(ss, edge, '/')) {
        auto dash = edge.find('-', 1);
        while (dash != std::string::npos && edge[dash - 1] == ',') dash = edge.find('-', dash + 1);
        if (dash == std::string::npos) throw ConfigError("edge '" + edge + "' needs two endpoints");
        Point a = parse_point(edge.substr(0, dash), d), b = parse_point(edge.substr(dash + 1), d);
        int dist = 0;
        for (int i = 0; i < d; ++i) dist += std::abs(a[i] - b[i]);
        if (dist != 1) throw ConfigError("edge '" + edge + "' does not join nearest neighbours");
        ev.edges.emplace_back(a, b);
    }
    if (ev.edges.empty()) throw ConfigError("event has no edges");
    return ev;
}

std::string to_string(const EventSpec& ev, int d) {
    if (ev.kind == EventKind::Sure) return "sure";
    std::string s = ev.kind == EventKind::AllOpen ? "all:" : "any:";
    for (std::size_t i = 0; i < ev.edges.size(); ++i)
        s += (i ? "/" : "") + point_text(ev.edges[i].first, d) + "-" + point_text(ev.edges[i].second, d);
    return s;
}

std::pair<EventSpec, EventSpec> default_events(int, int n) {
    EventSpec a{EventKind::AllOpen, {}}, b{EventKind::AllOpen, {}};
    Point o{}, e1{};
    e1[0] = 1;
    a.edges.push_back({o, e1});
    Point f{}, g{};
    f[0] = 2 * n + 1;
    g[0] = 2 * n + 2;
    b.edges.push_back({f, g});
    return {a, b};
}

void check_event_scope(const EventSpec& a, const EventSpec& b, int d, int n) {
    for (auto& [u, v] : a.edges)
        if (linf_norm(u, d) > n || linf_norm(v, d) > n) throw ConfigError("event A must depend on edges of E_n only");
    for (auto& [u, v] : b.edges)
        if (linf_norm(u, d) <= 2 * n && linf_norm(v, d) <= 2 * n)
            throw ConfigError("event B must depend on edges outside E_2n only");
}

MixingEstimate mixing_scan(int n, double p, const EventSpec& a, const EventSpec& b, const ExperimentConfig& cfg,
                           int batches) {
    if (n < 1) throw ConfigError("n must be positive");
    if (p < 0 || p > 1) throw ConfigError("p must lie in [0, 1]");
    check_event_scope(a, b, cfg.d, n);
    Graph g = build_box_graph(cfg.d, 4 * n);
    BoxLattice lat(g);
    auto ea = resolve(a, lat), eb = resolve(b, lat);
    const int B = std::max(2, batches);
    const long total = static_cast<long>(cfg.samples) * cfg.replicas;
    if (total < B) throw ConfigError("fewer samples than batches");
    std::vector<double> sa(B, 0.0), sb(B, 0.0), sab(B, 0.0), cnt(B, 0.0);
    long k = 0;
    for (int rep = 0; rep < cfg.replicas; ++rep) {
        // The configuration is read from the bonds, so the cluster map is not needed here.
        auto xi = BoundaryPartition::wired(g);
        SpinConfig s(g.num_vertices(), 1);
        BondConfig w(g.num_bundles(), true);
        Stream rng(cfg.seed, rep);
        std::uint64_t sweep = 0;
        auto step = [&] {
            rng.set_sweep(sweep++);
            es_sweep(g, s, w, p, xi, rng);
        };
        for (int i = 0; i < cfg.burn_in; ++i) step();
        for (int i = 0; i < cfg.samples; ++i) {
            for (int t = 0; t < cfg.thin; ++t) step();
            int bt = static_cast<int>(k++ * B / total);
            bool ha = holds(a.kind, ea, w), hb = holds(b.kind, eb, w);
            sa[bt] += ha;
            sb[bt] += hb;
            sab[bt] += ha && hb;
            cnt[bt] += 1;
        }
    }
    double A = std::accumulate(sa.begin(), sa.end(), 0.0), Bs = std::accumulate(sb.begin(), sb.end(), 0.0);
    double AB = std::accumulate(sab.begin(), sab.end(), 0.0), N = std::accumulate(cnt.begin(), cnt.end(), 0.0);
    auto parts = [&](int skip) {
        double m = N - (skip >= 0 ? cnt[skip] : 0.0);
        double pa = (A - (skip >= 0 ? sa[skip] : 0.0)) / m, pb = (Bs - (skip >= 0 ? sb[skip] : 0.0)) / m;
        double pab = (AB - (skip >= 0 ? sab[skip] : 0.0)) / m;
        return std::array<double, 3>{pa, pb, pab};
    };
    MixingEstimate r;
    r.d = cfg.d;
    r.n = n;
    r.L = 4 * n;
    r.p = p;
    r.samples = static_cast<long>(N);
    auto full = parts(-1);
    r.pa = full[0];
    r.pb = full[1];
    r.pab = full[2];
    Jackknife gap = jackknife(B, [&](int skip) {
        auto q = parts(skip);
        return q[2] - q[0] * q[1];
    });
    // Deterministic events give an exact zero; the jackknife would only add rounding.
    r.gap = full[2] - full[0] * full[1];
    r.se = gap.se;
    if (r.pa * r.pb > 0) {
        Jackknife nz = jackknife(B, [&](int skip) {
            auto q = parts(skip);
            return q[0] * q[1] > 0 ? (q[2] - q[0] * q[1]) / (q[0] * q[1]) : 0.0;
        });
        r.normalized = r.gap / (r.pa * r.pb);
        r.normalized_se = nz.se;
    }
    return r;
}

MixingEstimate mixing_exact(int d, int n, double p, const EventSpec& a, const EventSpec& b) {
    check_event_scope(a, b, d, n);
    Graph g = build_box_graph(d, 4 * n);
    BoxLattice lat(g);
    auto ea = expand(a.kind, resolve(a, lat)), eb = expand(b.kind, resolve(b, lat));
    auto xi = BoundaryPartition::wired(g);
    const double Z = fk_frontier_sum(g, {p}, xi, {})[0];
    std::map<std::vector<int>, double> memo;
    auto all_open = [&](std::vector<int> t) {
        std::sort(t.begin(), t.end());
        t.erase(std::unique(t.begin(), t.end()), t.end());
        auto it = memo.find(t);
        if (it != memo.end()) return it->second;
        FkQuery q;
        q.forced_open = t;
        double v = t.empty() ? 1.0 : fk_frontier_sum(g, {p}, xi, q)[0] / Z;
        return memo[t] = v;
    };
    auto prob = [&](const std::vector<std::pair<int, std::vector<int>>>& x,
                    const std::vector<std::pair<int, std::vector<int>>>& y) {
        double s = 0.0;
        for (auto& [sx, tx] : x)
            for (auto& [sy, ty] : y) {
                std::vector<int> t = tx;
                t.insert(t.end(), ty.begin(), ty.end());
                s += sx * sy * all_open(t);
            }
        return s;
    };
    const std::vector<std::pair<int, std::vector<int>>> sure{{1, {}}};
    MixingEstimate r;
    r.d = d;
    r.n = n;
    r.L = 4 * n;
    r.p = p;
    r.pa = prob(ea, sure);
    r.pb = prob(eb, sure);
    r.pab = prob(ea, eb);
    r.gap = r.pab - r.pa * r.pb;
    if (r.pa * r.pb > 0) r.normalized = r.gap / (r.pa * r.pb);
    return r;
}

void write_mixing_csv(std::ostream& os, const std::vector<MixingEstimate>& rows) {
    CsvTable t({"d", "n", "L", "p", "samples", "pa", "pb", "pab", "gap", "se", "abs_gap", "normalized", "normalized_se"});
    for (const auto& r : rows)
        t.row() << r.d << r.n << r.L << r.p << r.samples << r.pa << r.pb << r.pab << r.gap << r.se << r.abs_gap()
                << r.normalized << r.normalized_se;
    t.write(os);
}

// ---------------------------------------------------------------- boundary influence

double influence_gap_exact(const Graph& g, double p, int e) {
    auto w = BoundaryPartition::wired(g), f = BoundaryPartition::free_bc(g);
    FkQuery q;
    q.forced_open = {e};
    double hi = fk_frontier_sum(g, {p}, w, q)[0] / fk_frontier_sum(g, {p}, w, {})[0];
    double lo = fk_frontier_sum(g, {p}, f, q)[0] / fk_frontier_sum(g, {p}, f, {})[0];
    return hi - lo;
}

InfluenceEstimate influence_gap(const Graph& g, double p, int e, const ExperimentConfig& cfg) {
    if (e < 0 || e >= g.num_bundles()) throw ConfigError("edge index out of range");
    if (p < 0 || p > 1) throw ConfigError("p must lie in [0, 1]");
    InfluenceEstimate r;
    r.d = g.dim();
    r.p = p;
    r.edge = e;
    std::vector<double> xs;
    for (int rep = 0; rep < cfg.replicas; ++rep) {
        PairChain chain(g, p, BoundaryPartition::free_bc(g), BoundaryPartition::wired(g), cfg.seed, rep);
        for (int i = 0; i < cfg.burn_in; ++i) chain.sweep();
        for (int i = 0; i < cfg.samples; ++i) {
            for (int t = 0; t < cfg.thin; ++t) chain.sweep();
            if (chain.lo.open(e) && !chain.hi.open(e)) throw OrderViolation("lower chain open above a closed upper edge");
            xs.push_back(chain.hi.open(e) && !chain.lo.open(e) ? 1.0 : 0.0);
        }
    }
    Estimate est = batch_means(xs, std::min<int>(20, static_cast<int>(xs.size())));
    r.gap = est.mean;
    r.se = est.se;
    r.samples = est.n;
    return r;
}

InfluenceEstimate influence_gap(int d, int N, double p, const ExperimentConfig& cfg, bool with_exact) {
    Graph g = build_box_graph(d, N);
    BoxLattice lat(g);
    int e = lat.edge(lat.vertex(Point{}), 0);
    if (e < 0) throw ConfigError("box too small for the central edge");
    InfluenceEstimate r = influence_gap(g, p, e, cfg);
    r.N = N;
    r.in_range = 1 <= N / 4;
    if (!r.in_range) r.warning = "edge lies outside E_{N/4}";
    if (with_exact) {
        try {
            r.exact = influence_gap_exact(g, p, e);
        } catch (const SizeError&) {
        }
    }
    return r;
}

void write_influence_csv(std::ostream& os, const std::vector<InfluenceEstimate>& rows) {
    CsvTable t({"d", "N", "p", "edge", "samples", "gap", "se", "exact", "in_range", "warning"});
    for (const auto& r : rows) {
        t.row() << r.d << r.N << r.p << r.edge << r.samples << r.gap << r.se;
        if (r.exact == r.exact)
            t << r.exact;
        else
            t << "";
        t << r.in_range << r.warning;
    }
    t.write(os);
}

// ---------------------------------------------------------------- double-current connections

namespace {

void check_probe(const Graph& g, int w, int z, const std::vector<int>& X, const std::vector<int>& Y) {
    if (!g.has_ghost()) throw ConfigError("connection probes need a graph with ghost");
    auto bad = [&](int v) { return v < 0 || v >= g.num_vertices() || v == g.ghost(); };
    if (bad(w) || bad(z)) throw ConfigError("sources must be lattice vertices");
    for (const auto* s : {&X, &Y})
        for (int v : *s) {
            if (bad(v)) throw ConfigError("connection sets must hold lattice vertices");
            if (v == w || v == z) throw ConfigError("sources must lie outside X and Y");
        }
}

bool overlap(const std::vector<int>& X, const std::vector<int>& Y) {
    return std::any_of(X.begin(), X.end(), [&](int v) { return std::find(Y.begin(), Y.end(), v) != Y.end(); });
}

}  // namespace

double connection_probe(const Graph& g_plus, double beta, int w, int z, const std::vector<int>& X,
                        const std::vector<int>& Y) {
    check_probe(g_plus, w, z, X, Y);
    if (overlap(X, Y)) return 1.0;
    TraceQuery q;
    if (w != z) q.sources = {std::min(w, z), std::max(w, z)};
    q.pair = true;
    q.x = X;
    q.y = Y;
    TraceSums s = trace_frontier_sum(g_plus, {beta}, q);
    return s.event[0] / s.total[0];
}

double connection_probe_truncated(const Graph& g, double beta, int w, int z, const std::vector<int>& X,
                                  const std::vector<int>& Y, int cap, double* bound) {
    check_probe(g, w, z, X, Y);
    if (cap < 1) throw ConfigError("cap must be positive");
    if (overlap(X, Y)) {
        if (bound) *bound = 0.0;
        return 1.0;
    }
    const int nv = g.num_vertices(), ghost = g.ghost();
    std::vector<int> lat_b, ghost_b(nv, -1);
    for (int b = 0; b < g.num_bundles(); ++b) {
        const Bundle& bd = g.bundle(b);
        if (g.is_ghost_bundle(b))
            ghost_b[bd.u == ghost ? bd.v : bd.u] = b;
        else
            lat_b.push_back(b);
    }
    const int m = static_cast<int>(lat_b.size());
    if (m > 14) throw SizeError("truncated probe supports at most 14 lattice bundles");
    // Per bundle: summed weight of values 1..cap by parity, each value listed explicitly.
    std::vector<double> w_even(g.num_bundles()), w_odd(g.num_bundles());
    double keep = 1.0;
    for (int b = 0; b < g.num_bundles(); ++b) {
        double be = beta * g.bundle(b).mult, term = 1.0;
        for (int n = 1; n <= cap; ++n) {
            term *= be / n;
            (n % 2 ? w_odd[b] : w_even[b]) += term;
        }
        double wmin = std::min(std::sinh(be), std::cosh(be) - 1.0);
        double lost = wmin > 0 ? std::min(1.0, current_tail(be, cap) / wmin) : 0.0;
        keep *= 1.0 - lost;
        if (!g.is_ghost_bundle(b)) keep *= 1.0 - lost;  // the second current uses lattice bundles too
    }
    std::vector<char> src(nv, 0);
    src[w] ^= 1;
    src[z] ^= 1;
    // Weight by positivity pattern of the lattice bundles.
    auto by_mask = [&](bool first) {
        std::vector<double> out(std::size_t{1} << m, 0.0);
        std::vector<int> t(m, 0);  // 0 zero, 1 even positive, 2 odd
        std::vector<int> par(nv);
        while (true) {
            std::fill(par.begin(), par.end(), 0);
            double wt = 1.0;
            std::uint32_t mask = 0;
            for (int i = 0; i < m; ++i) {
                if (t[i] == 0) continue;
                const Bundle& bd = g.bundle(lat_b[i]);
                mask |= 1u << i;
                wt *= t[i] == 1 ? w_even[lat_b[i]] : w_odd[lat_b[i]];
                if (t[i] == 2) {
                    par[bd.u] ^= 1;
                    par[bd.v] ^= 1;
                }
            }
            for (int v = 0; v < nv && wt != 0.0; ++v) {
                if (v == ghost) continue;
                int need = first ? src[v] : 0;
                if (first && ghost_b[v] >= 0)
                    wt *= (par[v] ^ need) ? w_odd[ghost_b[v]] : 1.0 + w_even[ghost_b[v]];
                else if (par[v] != need)
                    wt = 0.0;
            }
            out[mask] += wt;
            int i = 0;
            while (i < m && t[i] == 2) t[i++] = 0;
            if (i == m) break;
            ++t[i];
        }
        return out;
    };
    auto w1 = by_mask(true), w2 = by_mask(false);
    const std::size_t full = std::size_t{1} << m;
    // Union of the two patterns: subset sums, product, inversion.
    for (int i = 0; i < m; ++i)
        for (std::size_t s = 0; s < full; ++s)
            if (s >> i & 1) {
                w1[s] += w1[s ^ (std::size_t{1} << i)];
                w2[s] += w2[s ^ (std::size_t{1} << i)];
            }
    std::vector<double> u(full);
    for (std::size_t s = 0; s < full; ++s) u[s] = w1[s] * w2[s];
    for (int i = 0; i < m; ++i)
        for (std::size_t s = 0; s < full; ++s)
            if (s >> i & 1) u[s] -= u[s ^ (std::size_t{1} << i)];
    double event = 0.0, total = 0.0;
    std::vector<int> parent(nv);
    for (std::size_t s = 0; s < full; ++s) {
        total += u[s];
        if (u[s] == 0.0) continue;
        std::iota(parent.begin(), parent.end(), 0);
        std::function<int(int)> find = [&](int v) { return parent[v] == v ? v : parent[v] = find(parent[v]); };
        for (int i = 0; i < m; ++i)
            if (s >> i & 1) parent[find(g.bundle(lat_b[i]).u)] = find(g.bundle(lat_b[i]).v);
        bool hit = false;
        for (int x : X)
            for (int y : Y) hit = hit || find(x) == find(y);
        if (hit) event += u[s];
    }
    if (bound) {
        double rho = 1.0 - keep;
        *bound = rho < 1.0 ? rho / (1.0 - rho) : std::numeric_limits<double>::infinity();
    }
    return event / total;
}

ProbeResult probe_both(const Graph& g_plus, double beta, int w, int z, const std::vector<int>& X,
                       const std::vector<int>& Y, int cap) {
    ProbeResult r;
    r.cap = cap;
    r.overlap = overlap(X, Y);
    r.probability = connection_probe(g_plus, beta, w, z, X, Y);
    r.truncated = connection_probe_truncated(g_plus, beta, w, z, X, Y, cap, &r.bound);
    return r;
}

}  // namespace ising
