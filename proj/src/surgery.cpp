#include "ising/surgery.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "ising/output.hpp"

namespace ising {

// ---------------------------------------------------------------- currents

Current::Current(const Graph& g) : g_(&g), n_(g.num_bundles(), 0) {}

Current::Current(const Graph& g, std::vector<int> values) : g_(&g), n_(std::move(values)) {
    if (static_cast<int>(n_.size()) != g.num_bundles()) throw std::invalid_argument("current size mismatch");
    for (int x : n_)
        if (x < 0) throw std::invalid_argument("currents are nonnegative");
}

void Current::set(int b, int value) {
    if (value < 0) throw std::invalid_argument("currents are nonnegative");
    if (n_[b] != value) {
        n_[b] = value;
        valid_ = false;
    }
}

int Current::degree(int v) const {
    int s = 0;
    for (const auto& inc : g_->adj(v)) s += n_[inc.bundle];
    return s;
}

void Current::refresh() const {
    if (valid_) return;
    std::vector<int> deg(g_->num_vertices(), 0);
    for (int b = 0; b < size(); ++b) {
        deg[g_->bundle(b).u] += n_[b];
        deg[g_->bundle(b).v] += n_[b];
    }
    sources_.clear();
    for (int v = 0; v < g_->num_vertices(); ++v)
        if (v != g_->ghost() && deg[v] % 2) sources_.push_back(v);
    ghost_odd_ = g_->has_ghost() && deg[g_->ghost()] % 2;
    valid_ = true;
}

const std::vector<int>& Current::sources() const {
    refresh();
    return sources_;
}

bool Current::ghost_odd() const {
    refresh();
    return ghost_odd_;
}

bool Current::zero() const {
    return std::all_of(n_.begin(), n_.end(), [](int x) { return x == 0; });
}

Current Current::operator+(const Current& o) const {
    if (g_ != o.g_) throw std::invalid_argument("currents live on different graphs");
    std::vector<int> s(n_);
    for (int b = 0; b < size(); ++b) s[b] += o.n_[b];
    return Current(*g_, std::move(s));
}

std::vector<int> sources(const Current& n) { return n.sources(); }

std::vector<char> cluster_mask(const Current& n, const std::vector<int>& s) {
    const Graph& g = n.graph();
    std::vector<char> in(g.num_vertices(), 0);
    std::vector<int> stack;
    for (int v : s)
        if (v != g.ghost() && !in[v]) {
            in[v] = 1;
            stack.push_back(v);
        }
    while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        for (const auto& inc : g.adj(v))
            if (inc.nbr != g.ghost() && n[inc.bundle] > 0 && !in[inc.nbr]) {
                in[inc.nbr] = 1;
                stack.push_back(inc.nbr);
            }
    }
    return in;
}

std::vector<int> cluster_of(const Current& n, const std::vector<int>& s) {
    auto in = cluster_mask(n, s);
    std::vector<int> out;
    for (int v = 0; v < static_cast<int>(in.size()); ++v)
        if (in[v]) out.push_back(v);
    return out;
}

namespace {

// Lattice neighbours of v, ascending (lexicographic in the points).
std::vector<int> lattice_nbrs(const BoxLattice& lat, int v) {
    std::vector<int> out;
    Point p = lat.point(v);
    for (int i = 0; i < lat.dim(); ++i)
        for (int s : {-1, 1}) {
            Point q = p;
            q[i] += s;
            int u = lat.vertex(q);
            if (u >= 0) out.push_back(u);
        }
    std::sort(out.begin(), out.end());
    return out;
}

int lattice_bundle(const BoxLattice& lat, int u, int v) {
    const Point &p = lat.point(u), &q = lat.point(v);
    for (int i = 0; i < lat.dim(); ++i) {
        if (q[i] == p[i] + 1) return lat.edge(u, i);
        if (p[i] == q[i] + 1) return lat.edge(v, i);
    }
    return -1;
}

bool meets(const BoxLattice& lat, const std::vector<char>& mask, const Box& b) {
    for (int v : lat.vertices_in(b))
        if (mask[v]) return true;
    return false;
}

int count_in(const BoxLattice& lat, const std::vector<char>& mask, int v) {
    int c = 0;
    for (int u : lattice_nbrs(lat, v)) c += mask[u] ? 1 : 0;
    return c;
}

// Multi-source BFS distances capped at `cap`; -1 beyond.
std::vector<int> capped_distances(const BoxLattice& lat, const std::vector<int>& src, int cap) {
    std::vector<int> dist(lat.graph().num_vertices(), -1);
    std::deque<int> q;
    for (int s : src)
        if (dist[s] < 0) {
            dist[s] = 0;
            q.push_back(s);
        }
    while (!q.empty()) {
        int v = q.front();
        q.pop_front();
        if (dist[v] == cap) continue;
        for (int u : lattice_nbrs(lat, v))
            if (dist[u] < 0) {
                dist[u] = dist[v] + 1;
                q.push_back(u);
            }
    }
    return dist;
}

std::string point_str(const Point& p, int d) {
    std::ostringstream os;
    os << '(';
    for (int i = 0; i < d; ++i) os << (i ? "," : "") << p[i];
    os << ')';
    return os.str();
}

}  // namespace

// ---------------------------------------------------------------- events

bool has_branch_vertex(const BoxLattice& lat, const std::vector<char>& mask, const Box& b) {
    for (int v : lat.vertices_in(b))
        if (mask[v] && count_in(lat, mask, v) >= 2) return true;
    return false;
}

EventCounts detect_events(const Current& n1, const Current& n2, int x, int y, const BlockFamily& grid) {
    BoxLattice lat(n1.graph());
    Current sum = n1 + n2;
    auto sx = cluster_mask(sum, {x}), sy = cluster_mask(sum, {y});
    auto yx1 = cluster_mask(n1, {y}), xy1 = cluster_mask(n1, {x});
    EventCounts ev;
    ev.threshold = static_cast<double>(grid.region.radius) / (4.0 * grid.k);
    for (const Box& b : grid.blocks) {
        if (has_branch_vertex(lat, yx1, b)) (meets(lat, sx, b) ? ev.b_xy : ev.c_xy) += 1;
        if (has_branch_vertex(lat, xy1, b)) (meets(lat, sy, b) ? ev.b_yx : ev.c_yx) += 1;
    }
    return ev;
}

// ---------------------------------------------------------------- context

GluingInstance make_instance(int d, int N, int n, double beta, const Point& x, const Point& y) {
    GluingInstance inst;
    inst.graph = std::make_shared<const Graph>(attach_ghost(build_box_graph(d, N)));
    inst.lattice = std::make_shared<const BoxLattice>(*inst.graph);
    inst.n = n;
    inst.beta = beta;
    inst.x = inst.lattice->vertex(x);
    inst.y = inst.lattice->vertex(y);
    if (inst.x < 0 || inst.y < 0) throw GeometryError("endpoints must lie in the box");
    inst.n1 = Current(*inst.graph);
    inst.n2 = Current(*inst.graph);
    return inst;
}

GluingContext::GluingContext(const GluingInstance& inst) : inst_(&inst) {
    in_s_ = cluster_mask(inst.n1 + inst.n2, inst.S);
    in_y_ = cluster_mask(inst.n1, {inst.y});
}

std::vector<int> GluingContext::branch_vertices(const Box& b) const {
    std::vector<int> out;
    for (int v : lattice().vertices_in(b))
        if (in_y_[v] && count_in(lattice(), in_y_, v) >= 2) out.push_back(v);
    return out;
}

bool GluingContext::admissible(const Box& b) const {
    return meets(lattice(), in_s_, b) && has_branch_vertex(lattice(), in_y_, b);
}

// ---------------------------------------------------------------- path certificate

PiCheck check_pi(const GluingContext& ctx, PathPi& pi) {
    const BoxLattice& lat = ctx.lattice();
    const int d = lat.dim(), n = ctx.instance().n, far = 3 * d * n;
    const int nv = lat.graph().num_lattice_vertices();
    PiCheck r;
    std::ostringstream why;
    pi.t_set.clear();
    pi.s_set.clear();
    if (pi.v.size() < 2 || std::any_of(pi.v.begin(), pi.v.end(), [&](int v) { return v < 0 || v >= nv; })) {
        r.detail = "path needs at least one edge inside the box";
        return r;
    }
    const Point& c = pi.block.center;
    int v0 = pi.v.front(), vk = pi.v.back(), k = pi.k();
    r.start = ctx.in_s(v0) && linf(lat.point(v0), c) <= far;
    r.end = ctx.in_y(vk) && linf(lat.point(vk), c) <= far;
    r.shortest = l1(lat.point(v0), lat.point(vk)) == k;
    for (int i = 0; i < k && r.shortest; ++i) r.shortest = l1(lat.point(pi.v[i]), lat.point(pi.v[i + 1])) == 1;
    r.interior = true;
    for (int i = 1; i < k; ++i) r.interior = r.interior && !ctx.in_s(pi.v[i]) && !ctx.in_y(pi.v[i]);
    if (!r.start) why << " start";
    if (!r.end) why << " end";
    if (!r.shortest) why << " shortest";
    if (!r.interior) why << " interior";

    auto all = capped_distances(lat, pi.v, 2);
    auto rest = capped_distances(lat, std::vector<int>(pi.v.begin() + 1, pi.v.end()), 1);
    std::vector<char> in_sb(nv, 0);
    for (int v = 0; v < nv; ++v) {
        if (ctx.in_s(v)) continue;
        if (v == vk || all[v] == 1 || all[v] == 2) {
            in_sb[v] = 1;
            pi.s_set.push_back(v);
        }
        if (rest[v] == 1) pi.t_set.push_back(v);
    }
    r.connected = true;
    for (int t : pi.t_set) r.connected = r.connected && in_sb[t];
    if (r.connected && !pi.t_set.empty()) {
        std::vector<char> seen(nv, 0);
        std::vector<int> stack{pi.t_set.front()};
        seen[pi.t_set.front()] = 1;
        while (!stack.empty()) {
            int v = stack.back();
            stack.pop_back();
            for (int u : lattice_nbrs(lat, v))
                if (in_sb[u] && !seen[u]) {
                    seen[u] = 1;
                    stack.push_back(u);
                }
        }
        for (int t : pi.t_set) r.connected = r.connected && seen[t];
    }
    if (!r.connected) why << " connected";
    r.detail = why.str();
    return r;
}

namespace {

class PiSearch {
public:
    PiSearch(const GluingContext& ctx, const Box& b)
        : ctx_(ctx), lat_(ctx.lattice()), b_(b), d_(lat_.dim()), far_(3 * d_ * ctx.instance().n),
          region_(4 * d_ * ctx.instance().n) {}

    bool run(PathPi& out) {
        out_ = &out;
        return stage_shortest() || stage_shifted() || stage_short_pairs() || stage_exhaustive();
    }

private:
    struct Pair {
        int v, u, d1;
    };

    const Point& pt(int v) const { return lat_.point(v); }

    // Shortest v-u paths, longest remaining displacement first; each path is cut at its first
    // vertex of C_{n1}(y) and dropped when it re-enters C(S).
    bool paths(int a, int u, int cap, const char* strategy) {
        int budget = cap;
        std::vector<int> path{a};
        std::function<bool(int)> go = [&](int v) -> bool {
            if (budget <= 0) return false;
            if (v == u) {
                --budget;
                return false;
            }
            Point p = pt(v), q = pt(u);
            std::vector<std::pair<int, int>> axes;
            for (int i = 0; i < d_; ++i)
                if (p[i] != q[i]) axes.push_back({-std::abs(q[i] - p[i]), i});
            std::sort(axes.begin(), axes.end());
            for (auto [neg, i] : axes) {
                Point r = p;
                r[i] += q[i] > p[i] ? 1 : -1;
                int w = lat_.vertex(r);
                if (w < 0 || ctx_.in_s(w)) continue;
                path.push_back(w);
                bool done = false;
                if (ctx_.in_y(w)) {
                    --budget;
                    done = attempt(path, strategy);
                } else {
                    done = go(w);
                }
                path.pop_back();
                if (done || budget <= 0) return done;
            }
            return false;
        };
        if (ctx_.in_y(a)) return false;
        return go(a);
    }

    bool attempt(const std::vector<int>& v, const char* strategy) {
        if (!tried_.insert(v).second) return false;
        PathPi pi;
        pi.block = b_;
        pi.v = v;
        pi.strategy = strategy;
        if (!check_pi(ctx_, pi).ok()) return false;
        *out_ = std::move(pi);
        return true;
    }

    bool within(int v, int r) const { return linf(pt(v), b_.center) <= r; }

    const std::vector<int>& s_points() {
        if (s_pts_.empty())
            for (int v = 0; v < lat_.graph().num_lattice_vertices(); ++v)
                if (ctx_.in_s(v) && within(v, region_)) s_pts_.push_back(v);
        return s_pts_;
    }

    // Pairs (v, u): u a branch vertex in the block, v realising its distance to C(S) in the region.
    const std::vector<Pair>& realising() {
        if (!pairs_.empty()) return pairs_;
        for (int u : ctx_.branch_vertices(b_)) {
            int best = std::numeric_limits<int>::max();
            for (int v : s_points()) best = std::min(best, l1(pt(v), pt(u)));
            for (int v : s_points())
                if (l1(pt(v), pt(u)) == best && within(v, far_)) pairs_.push_back({v, u, best});
        }
        return pairs_;
    }

    bool stage_shortest() {
        for (const Pair& p : realising())
            if (paths(p.v, p.u, 256, "shortest")) return true;
        return false;
    }

    // Start points of C(S) near the first steps of Π', as in the shifted and reduced cases.
    bool stage_shifted() {
        for (const Pair& p : realising())
            for (int a : s_points())
                if (a != p.v && within(a, far_) && l1(pt(a), pt(p.v)) <= 4 && l1(pt(a), pt(p.u)) <= p.d1 + 2)
                    if (paths(a, p.u, 256, "shifted")) return true;
        return false;
    }

    // Endpoints at graph distance one or two, the second within distance 1 of the block.
    bool stage_short_pairs() {
        for (int w : s_points()) {
            if (!within(w, far_)) continue;
            for (int w2 : neighbourhood(w, 2))
                if (ctx_.in_y(w2) && within(w2, b_.radius + 1) && paths(w, w2, 8, "short-pair")) return true;
        }
        return false;
    }

    bool stage_exhaustive() {
        std::vector<int> ys;
        for (int v = 0; v < lat_.graph().num_lattice_vertices(); ++v)
            if (ctx_.in_y(v) && within(v, far_)) ys.push_back(v);
        std::vector<std::tuple<int, int, int>> pairs;
        for (int a : s_points())
            if (within(a, far_))
                for (int u : ys) pairs.emplace_back(l1(pt(a), pt(u)), a, u);
        std::sort(pairs.begin(), pairs.end());
        for (auto [dist, a, u] : pairs)
            if (paths(a, u, 4096, "exhaustive")) return true;
        return false;
    }

    std::vector<int> neighbourhood(int v, int r) const {
        std::vector<int> out;
        Point p = pt(v);
        Box box{p, r};
        for (int w : lat_.vertices_in(box))
            if (w != v && l1(pt(w), p) <= r) out.push_back(w);
        return out;
    }

    const GluingContext& ctx_;
    const BoxLattice& lat_;
    Box b_;
    int d_, far_, region_;
    PathPi* out_ = nullptr;
    std::set<std::vector<int>> tried_;
    std::vector<int> s_pts_;
    std::vector<Pair> pairs_;
};

void require_disjoint(const GluingContext& ctx) {
    const auto& s = ctx.s_mask();
    const auto& y = ctx.y_mask();
    for (std::size_t v = 0; v < s.size(); ++v)
        if (s[v] && y[v]) throw PreconditionError("C_{n1}(y) meets C_{n1+n2}(S)");
}

}  // namespace

PathPi find_pi(const GluingContext& ctx, const Box& b) {
    if (ctx.lattice().dim() < 3) throw PreconditionError("gluing paths need d >= 3");
    if (!ctx.lattice().box().contains(b, ctx.lattice().dim())) throw PreconditionError("block outside the box");
    require_disjoint(ctx);
    if (!ctx.admissible(b)) throw PreconditionError("block misses C(S) or has no branch vertex of C_{n1}(y)");
    PathPi out;
    if (PiSearch(ctx, b).run(out)) return out;
    throw SurgeryDefect("no certified gluing path for block " + point_str(b.center, ctx.lattice().dim()) + "\n" +
                        dump_instance(ctx.instance()));
}

// ---------------------------------------------------------------- surgery

long e2_volume_bound(int d, int len) {
    return static_cast<long>(len + 1) * (1 + 2 * d + 2 * d * d) * (d + 1);
}

namespace {

std::vector<int> sym_diff(const std::vector<int>& a, const std::vector<int>& b) {
    std::vector<int> out;
    std::set_symmetric_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

// Pairs the parity defects inside S_B by BFS with ascending-index ties and toggles m along each
// path. With `ghost` an odd leftover is routed to the nearest S_B vertex carrying a ghost bundle.
bool pair_defects(const BoxLattice& lat, const PathPi& pi, std::vector<int> defects, std::vector<int>& m,
                  bool ghost) {
    const Graph& g = lat.graph();
    const int nv = g.num_lattice_vertices();
    std::vector<char> in_sb(nv, 0);
    for (int v : pi.s_set) in_sb[v] = 1;
    std::sort(defects.begin(), defects.end());
    std::vector<char> open(nv, 0);
    for (int v : defects) open[v] = 1;
    for (int s : defects) {
        if (!open[s]) continue;
        open[s] = 0;
        if (!in_sb[s]) return false;
        std::vector<int> parent(nv, -2);
        std::deque<int> q{s};
        parent[s] = -1;
        int hit = -1;
        bool to_ghost = false;
        bool last = std::none_of(defects.begin(), defects.end(), [&](int v) { return open[v] != 0; });
        while (!q.empty() && hit < 0) {
            int v = q.front();
            q.pop_front();
            for (int u : lattice_nbrs(lat, v)) {
                if (!in_sb[u] || parent[u] != -2) continue;
                parent[u] = v;
                if (open[u]) {
                    hit = u;
                    break;
                }
                q.push_back(u);
            }
            if (hit < 0 && last && ghost && g.find_bundle(v, g.ghost()) >= 0) {
                hit = v;
                to_ghost = true;
            }
        }
        if (hit < 0) return false;
        if (to_ghost) m[g.find_bundle(hit, g.ghost())] ^= 1;
        else open[hit] = 0;
        for (int v = hit; parent[v] >= 0; v = parent[v]) m[lattice_bundle(lat, v, parent[v])] ^= 1;
    }
    return true;
}

Current apply_pairing(const Current& n, const std::vector<int>& m) {
    Current out = n;
    for (int b = 0; b < n.size(); ++b)
        if (m[b]) out.set(b, n[b] >= 2 ? n[b] - 1 : n[b] + 1);
    return out;
}

}  // namespace

void verify_certificate(const GluingContext& ctx, SurgeryCertificate& cert) {
    const GluingInstance& inst = ctx.instance();
    const BoxLattice& lat = ctx.lattice();
    const Graph& g = lat.graph();
    const int d = lat.dim(), nv = g.num_lattice_vertices();
    std::ostringstream why;

    cert.paths_ok = true;
    for (auto& pi : cert.paths) {
        PiCheck pc = check_pi(ctx, pi);
        if (!pc.ok()) {
            cert.paths_ok = false;
            why << "path" << pc.detail << ";";
        }
    }

    cert.a = cert.n1p.sources() == cert.n1.sources() && cert.n1p.ghost_odd() == cert.n1.ghost_odd() &&
             cert.n2p.sources() == cert.n2.sources() && cert.n2p.ghost_odd() == cert.n2.ghost_odd();
    for (int b = 0; b < g.num_bundles(); ++b)
        if (g.is_ghost_bundle(b) && cert.n2p[b] != 0) cert.a = false;
    if (!cert.a) why << " (a) sources changed;";

    cert.modified.clear();
    for (int b = 0; b < g.num_bundles(); ++b)
        if (cert.n1[b] != cert.n1p[b] || cert.n2[b] != cert.n2p[b]) cert.modified.push_back(b);

    std::vector<std::vector<int>> dist;
    for (const auto& pi : cert.paths) dist.push_back(capped_distances(lat, pi.v, 2));
    cert.b = true;
    cert.c = true;
    for (int b : cert.modified) {
        const Bundle& e = g.bundle(b);
        bool in_e2 = false;
        for (const auto& dd : dist) {
            bool u_ok = e.u == g.ghost() || dd[e.u] >= 0;
            bool v_ok = e.v == g.ghost() || dd[e.v] >= 0;
            in_e2 = in_e2 || (u_ok && v_ok);
        }
        if (!in_e2) cert.b = false;
        for (auto [before, after] : {std::pair{cert.n1[b], cert.n1p[b]}, std::pair{cert.n2[b], cert.n2p[b]}})
            if (after > before && after > 2) cert.c = false;
    }
    if (!cert.b) why << " (b) change outside E_2(paths);";
    if (!cert.c) why << " (c) value increased above 2;";

    // (d): vertices of C_{n1'}(y) reached from S through the complement of C_{n1'}(y).
    auto cy = cluster_mask(cert.n1p, {inst.y});
    Current sum = cert.n1p + cert.n2p;
    std::vector<char> reach(nv, 0);
    std::set<int> ends;
    std::vector<int> stack;
    for (int s : inst.S) {
        if (cy[s]) ends.insert(s);
        else if (!reach[s]) {
            reach[s] = 1;
            stack.push_back(s);
        }
    }
    while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        for (const auto& inc : g.adj(v)) {
            if (inc.nbr == g.ghost() || sum[inc.bundle] == 0) continue;
            if (cy[inc.nbr]) ends.insert(inc.nbr);
            else if (!reach[inc.nbr]) {
                reach[inc.nbr] = 1;
                stack.push_back(inc.nbr);
            }
        }
    }
    std::set<int> expect;
    for (const auto& pi : cert.paths) expect.insert(pi.end());
    cert.d = ends == expect;
    if (!cert.d) why << " (d) endpoint set differs;";

    std::set<int> t_union;
    for (const auto& pi : cert.paths) t_union.insert(pi.t_set.begin(), pi.t_set.end());
    cert.sources_in_t = true;
    for (const auto* stage : {&cert.n1_0, &cert.n2_1}) {
        const Current& before = stage == &cert.n1_0 ? cert.n1 : cert.n2;
        for (int v : sym_diff(stage->sources(), before.sources()))
            if (!t_union.count(v)) cert.sources_in_t = false;
    }
    if (!cert.sources_in_t) why << " new sources outside T_B;";

    const int cap_len = 6 * d * d * inst.n;
    cert.size_ok = static_cast<long>(cert.modified.size()) <=
                   static_cast<long>(cert.paths.size()) * e2_volume_bound(d, cap_len);
    for (const auto& pi : cert.paths) cert.size_ok = cert.size_ok && pi.k() <= cap_len;
    if (!cert.size_ok) why << " modified set too large;";
    cert.detail = why.str();
}

SurgeryCertificate surgery(const GluingInstance& inst) {
    const Graph& g = *inst.graph;
    if (!g.has_ghost()) throw PreconditionError("n1 lives on the box with ghost");
    const BoxLattice& lat = *inst.lattice;
    const int d = lat.dim();
    for (int b = 0; b < g.num_bundles(); ++b)
        if (g.is_ghost_bundle(b) && inst.n2[b] != 0) throw PreconditionError("n2 must vanish on ghost bundles");
    std::vector<int> xy{std::min(inst.x, inst.y), std::max(inst.x, inst.y)};
    if (inst.x == inst.y || inst.n1.sources() != xy) throw PreconditionError("sources of n1 must be {x, y}");
    if (!inst.n2.sources().empty()) throw PreconditionError("n2 must be sourceless");
    Current sum = inst.n1 + inst.n2;
    auto cx = cluster_mask(sum, {inst.x}), cy = cluster_mask(sum, {inst.y});
    bool hit_x = false, hit_y = false;
    for (int s : inst.S) {
        hit_x = hit_x || cx[s];
        hit_y = hit_y || cy[s];
    }
    if (!hit_x || hit_y) throw PreconditionError("S must meet C(x) and miss C(y)");
    for (std::size_t i = 0; i < inst.Z.size(); ++i)
        for (std::size_t j = i + 1; j < inst.Z.size(); ++j)
            if (!strongly_disjoint(inst.Z[i], inst.Z[j], inst.n, d))
                throw PreconditionError("blocks of Z must be strongly disjoint");

    GluingContext ctx(inst);
    SurgeryCertificate cert;
    cert.n1 = inst.n1;
    cert.n2 = inst.n2;
    for (const Box& b : inst.Z) cert.paths.push_back(find_pi(ctx, b));

    // Step 1: close everything at the path interiors; n2 keeps the path edges themselves.
    cert.n1_0 = inst.n1;
    cert.n2_0 = inst.n2;
    for (const auto& pi : cert.paths) {
        std::set<int> on(pi.v.begin(), pi.v.end());
        for (int i = 1; i < pi.k(); ++i)
            for (const auto& inc : g.adj(pi.v[i])) {
                cert.n1_0.set(inc.bundle, 0);
                if (!on.count(inc.nbr)) cert.n2_0.set(inc.bundle, 0);
            }
    }
    // Step 2: value 2 along the path and at every lattice edge of its far endpoint.
    cert.n2_1 = cert.n2_0;
    for (const auto& pi : cert.paths) {
        for (int i = 0; i < pi.k(); ++i) cert.n2_1.set(lattice_bundle(lat, pi.v[i], pi.v[i + 1]), 2);
        for (const auto& inc : g.adj(pi.end()))
            if (inc.nbr != g.ghost()) cert.n2_1.set(inc.bundle, 2);
    }
    // Step 3: pair the new sources of each block inside its S_B.
    std::vector<int> m1(g.num_bundles(), 0), m2(g.num_bundles(), 0);
    auto defects1 = sym_diff(cert.n1_0.sources(), inst.n1.sources());
    auto defects2 = sym_diff(cert.n2_1.sources(), inst.n2.sources());
    bool paired = true;
    for (const auto& pi : cert.paths) {
        std::set<int> t(pi.t_set.begin(), pi.t_set.end());
        std::vector<int> own1, own2;
        for (int v : defects1)
            if (t.count(v)) own1.push_back(v);
        for (int v : defects2)
            if (t.count(v)) own2.push_back(v);
        paired = pair_defects(lat, pi, own1, m1, true) && paired;
        paired = pair_defects(lat, pi, own2, m2, false) && paired;
    }
    cert.m1 = Current(g, m1);
    cert.m2 = Current(g, m2);
    cert.n1p = apply_pairing(cert.n1_0, m1);
    cert.n2p = apply_pairing(cert.n2_1, m2);

    verify_certificate(ctx, cert);
    if (!paired) cert.detail += " pairing path missing;";
    if (!cert.ok() || !paired) throw SurgeryDefect("surgery certificate failed:" + cert.detail + "\n" + dump_instance(inst));
    return cert;
}

// ---------------------------------------------------------------- weights

double edge_ratio_bound(int m, double b) {
    // Σ_{j≥0} b^j m!/(m+j)!
    double s = 0.0, term = 1.0;
    for (int j = 0; j < 10000 && term > 1e-18 * s; ++j) {
        s += term;
        term *= b / (m + j + 1);
    }
    if (m <= 2) {
        // Σ_{l≤m} b^{l-m} m!/l!
        double t = 1.0;
        for (int l = m; l >= 0; --l) {
            s += t;
            t *= l / b;
        }
    }
    return s;
}

namespace {

void require_same_off(const Current& n, const Current& m, const std::vector<char>& in_e) {
    for (int b = 0; b < n.size(); ++b)
        if (!in_e[b] && n[b] != m[b]) throw PreconditionError("pairs differ outside E");
}

}  // namespace

double log_weight_ratio(const Current& n1, const Current& n2, const Current& m1, const Current& m2,
                        const std::vector<int>& E, double beta) {
    if (beta <= 0) throw std::invalid_argument("beta must be positive");
    std::vector<char> in_e(n1.size(), 0);
    for (int b : E) in_e[b] = 1;
    require_same_off(n1, m1, in_e);
    require_same_off(n2, m2, in_e);
    const Graph& g = n1.graph();
    double acc = 0.0;
    for (int b = 0; b < n1.size(); ++b) {
        if (!in_e[b]) continue;
        double lb = std::log(g.bundle(b).mult * beta);
        for (auto [n, m] : {std::pair{n1[b], m1[b]}, std::pair{n2[b], m2[b]}})
            acc += (n - m) * lb + std::lgamma(m + 1.0) - std::lgamma(n + 1.0);
    }
    return acc;
}

double weight_ratio(const Current& n1, const Current& n2, const Current& m1, const Current& m2,
                    const std::vector<int>& E, double beta) {
    return std::exp(log_weight_ratio(n1, n2, m1, m2, E, beta));
}

double log_ratio_bound(const Current& m1, const Current& m2, const std::vector<int>& E, double beta) {
    std::set<int> uniq(E.begin(), E.end());
    const Graph& g = m1.graph();
    double acc = 0.0;
    for (int b : uniq) {
        double be = g.bundle(b).mult * beta;
        acc += std::log(edge_ratio_bound(m1[b], be)) + std::log(edge_ratio_bound(m2[b], be));
    }
    return acc;
}

double ratio_bound(const Current& m1, const Current& m2, const std::vector<int>& E, double beta) {
    return std::exp(log_ratio_bound(m1, m2, E, beta));
}

// ---------------------------------------------------------------- many-to-many counting

MvmpResult mvmp_check(const MvmpInstance& inst) {
    const int ns = static_cast<int>(inst.mu.size());
    for (double w : inst.mu)
        if (!(w >= 0)) throw PreconditionError("weights must be nonnegative");
    std::vector<char> in_a(ns, 0), in_b(ns, 0);
    auto mark = [&](const std::vector<int>& xs, std::vector<char>& in) {
        for (int s : xs) {
            if (s < 0 || s >= ns) throw PreconditionError("state out of range");
            in[s] = 1;
        }
    };
    mark(inst.A, in_a);
    mark(inst.B, in_b);
    std::vector<std::pair<int, int>> rel(inst.R);
    std::sort(rel.begin(), rel.end());
    rel.erase(std::unique(rel.begin(), rel.end()), rel.end());
    std::vector<int> image(ns, 0);
    std::vector<double> pre(ns, 0.0);
    for (auto [s, t] : rel) {
        if (s < 0 || s >= ns || t < 0 || t >= ns || !in_a[s] || !in_b[t])
            throw PreconditionError("relation must lie in A x B");
        ++image[s];
        pre[t] += inst.mu[s];
    }
    MvmpResult r;
    r.K = std::numeric_limits<int>::max();
    for (int s = 0; s < ns; ++s)
        if (in_a[s]) {
            r.K = std::min(r.K, image[s]);
            r.mu_a += inst.mu[s];
        }
    if (r.K == std::numeric_limits<int>::max()) r.K = 0;
    for (int t = 0; t < ns; ++t) {
        if (!in_b[t]) continue;
        r.mu_b += inst.mu[t];
        if (pre[t] > 0) r.k = std::max(r.k, inst.mu[t] > 0 ? pre[t] / inst.mu[t] : HUGE_VAL);
    }
    r.vacuous = r.K == 0;
    if (r.vacuous) {
        r.bound = HUGE_VAL;
        r.holds = true;
    } else {
        r.bound = r.k / r.K * r.mu_b;
        r.holds = r.mu_a <= r.bound * (1 + 1e-12) + 1e-300;
    }
    return r;
}

MvmpInstance random_relation(int states, std::uint64_t seed, std::uint64_t index) {
    Stream rng(seed, index);
    MvmpInstance inst;
    inst.mu.resize(states);
    double tot = 0.0;
    for (double& w : inst.mu) {
        w = -std::log(1.0 - rng.uniform()) * (rng.uniform() < 0.1 ? 100.0 : 1.0);
        tot += w;
    }
    for (double& w : inst.mu) w /= tot;
    double pa = 0.1 + 0.8 * rng.uniform(), pb = 0.1 + 0.8 * rng.uniform();
    for (int s = 0; s < states; ++s) {
        if (rng.uniform() < pa) inst.A.push_back(s);
        if (rng.uniform() < pb) inst.B.push_back(s);
    }
    if (inst.A.empty()) inst.A.push_back(0);
    if (inst.B.empty()) inst.B.push_back(states - 1);
    int fan = 1 + static_cast<int>(rng.below(5));
    for (int s : inst.A) {
        int k = 1 + static_cast<int>(rng.below(fan));
        for (int j = 0; j < k; ++j) inst.R.push_back({s, inst.B[rng.below(inst.B.size())]});
    }
    return inst;
}

// ---------------------------------------------------------------- relation harness

std::vector<Box> maximal_disjoint_blocks(const GluingContext& ctx, const BlockFamily& grid) {
    std::vector<Box> out;
    const int d = ctx.lattice().dim(), n = ctx.instance().n;
    for (const Box& b : grid.blocks) {
        if (!ctx.admissible(b)) continue;
        bool ok = std::all_of(out.begin(), out.end(), [&](const Box& o) { return strongly_disjoint(o, b, n, d); });
        if (ok) out.push_back(b);
    }
    return out;
}

InjectivityReport check_endpoint_injectivity(const GluingContext& ctx, const std::vector<Box>& V, int m) {
    const int nv = static_cast<int>(V.size());
    if (nv > 20) throw std::invalid_argument("too many blocks to enumerate subsets");
    std::vector<int> end(nv);
    for (int i = 0; i < nv; ++i) end[i] = find_pi(ctx, V[i]).end();
    InjectivityReport rep;
    std::map<std::vector<int>, unsigned> seen;
    for (unsigned mask = 0; mask < (1u << nv); ++mask) {
        if (__builtin_popcount(mask) != m) continue;
        std::vector<int> img;
        for (int i = 0; i < nv; ++i)
            if (mask >> i & 1u) img.push_back(end[i]);
        std::sort(img.begin(), img.end());
        img.erase(std::unique(img.begin(), img.end()), img.end());
        if (static_cast<int>(img.size()) != m) ++rep.collisions;
        if (!seen.emplace(img, mask).second) ++rep.collisions;
        ++rep.subsets;
    }
    return rep;
}

// ---------------------------------------------------------------- current chains

CurrentChain::CurrentChain(const Graph& g, double beta, Current start, bool use_ghost, std::uint64_t seed,
                           std::uint64_t chain)
    : g_(&g), beta_(beta), n_(std::move(start)), rng_(seed, chain) {
    BoxLattice lat(g);
    const int d = lat.dim(), nv = g.num_lattice_vertices();
    for (int v = 0; v < nv; ++v)
        for (int i = 0; i < d; ++i)
            for (int j = i + 1; j < d; ++j) {
                int e1 = lat.edge(v, i), e4 = lat.edge(v, j);
                if (e1 < 0 || e4 < 0) continue;
                Point pi = lat.point(v), pj = lat.point(v);
                ++pi[i];
                ++pj[j];
                int e2 = lat.edge(lat.vertex(pi), j), e3 = lat.edge(lat.vertex(pj), i);
                if (e2 < 0 || e3 < 0) continue;
                cycles_.push_back({e1, e2, e3, e4});
                cycle_len_.push_back(4);
            }
    for (int b = 0; b < g.num_bundles(); ++b) {
        if (g.is_ghost_bundle(b)) {
            if (use_ghost) singles_.push_back(b);
            continue;
        }
        singles_.push_back(b);
        if (!use_ghost) continue;
        int gu = g.find_bundle(g.bundle(b).u, g.ghost()), gv = g.find_bundle(g.bundle(b).v, g.ghost());
        if (gu >= 0 && gv >= 0) {
            cycles_.push_back({b, gu, gv, -1});
            cycle_len_.push_back(3);
        }
    }
    be_.resize(g.num_bundles());
    for (int b = 0; b < g.num_bundles(); ++b) be_[b] = g.bundle(b).mult * beta;
    if (!use_ghost)
        for (int b = 0; b < g.num_bundles(); ++b)
            if (g.is_ghost_bundle(b) && n_[b] != 0) throw std::invalid_argument("ghost bundles are frozen at zero");
}

bool CurrentChain::propose(const int* bundles, const int* signs, int len) {
    double ratio = 1.0;
    for (int i = 0; i < len; ++i) {
        int b = bundles[i], old = n_[b], nw = old + signs[i];
        if (nw < 0) return false;
        double be = be_[b];
        if (signs[i] > 0)
            for (int x = old + 1; x <= nw; ++x) ratio *= be / x;
        else
            for (int x = old; x > nw; --x) ratio *= x / be;
    }
    if (ratio < 1.0 && rng_.uniform() >= ratio) return false;
    for (int i = 0; i < len; ++i) n_.add(bundles[i], signs[i]);
    ++accepted_;
    return true;
}

void CurrentChain::sweep() {
    rng_.set_sweep(sweeps_++);
    int signs[4];
    for (std::size_t c = 0; c < cycles_.size(); ++c) {
        std::uint64_t bits = rng_.next_u64();
        for (int i = 0; i < cycle_len_[c]; ++i) signs[i] = (bits >> i & 1u) ? 1 : -1;
        propose(cycles_[c].data(), signs, cycle_len_[c]);
    }
    for (int b : singles_) {
        int s = rng_.coin() ? 2 : -2;
        propose(&b, &s, 1);
    }
}

// ---------------------------------------------------------------- instance stream

namespace {

// Straight segment from p along `axis` in direction `dir` to the face, then one unit to the ghost.
void path_to_ghost(const BoxLattice& lat, Current& n, int v, int axis, int dir) {
    const Graph& g = lat.graph();
    while (true) {
        Point q = lat.point(v);
        q[axis] += dir;
        int u = lat.vertex(q);
        if (u < 0) break;
        n.add(lattice_bundle(lat, v, u), 1);
        v = u;
    }
    n.add(g.find_bundle(v, g.ghost()), 1);
}

}  // namespace

InstanceGenerator::InstanceGenerator(std::uint64_t seed, const InstanceOptions& opt)
    : opt_(opt), seed_(seed), rng_(seed, 0x5e7e47ull) {
    if (opt_.d < 3) throw PreconditionError("instances need d >= 3");
    if (opt_.min_N < 2 || opt_.max_N < opt_.min_N) throw GeometryError("box radii must satisfy 2 <= min_N <= max_N");
}

void InstanceGenerator::start_chain() {
    rng_.set_sweep(chain_id_);
    const int d = opt_.d;
    int N = opt_.min_N + static_cast<int>(rng_.below(opt_.max_N - opt_.min_N + 1));
    int n = rng_.uniform() < 0.7 || N < 4 ? 1 : 2;
    double beta = 0.12 + 0.12 * rng_.uniform();
    // Rods x -> -axis and y -> +axis, side by side over an axial overlap.
    int axis = static_cast<int>(rng_.below(d));
    int side = (axis + 1 + static_cast<int>(rng_.below(d - 1))) % d;
    int gap = 1 + static_cast<int>(rng_.below(2 * n));
    int overlap = static_cast<int>(rng_.below(N + 1));
    Point x{};
    for (int i = 0; i < d; ++i) x[i] = -N + static_cast<int>(rng_.below(2 * N + 1));
    x[axis] = -N + overlap + static_cast<int>(rng_.below(2 * N + 1 - overlap));
    Point y = x;
    y[axis] -= overlap;
    y[side] += x[side] + gap <= N ? gap : -gap;
    base_ = make_instance(d, N, n, beta, x, y);
    Current n1(*base_.graph);
    path_to_ghost(*base_.lattice, n1, base_.x, axis, -1);
    path_to_ghost(*base_.lattice, n1, base_.y, axis, +1);
    c1_ = std::make_unique<CurrentChain>(*base_.graph, beta, n1, true, seed_, 2 * chain_id_ + 1);
    c2_ = std::make_unique<CurrentChain>(*base_.graph, beta, Current(*base_.graph), false, seed_, 2 * chain_id_ + 2);
    for (int i = 0; i < opt_.burn_in; ++i) {
        c1_->sweep();
        c2_->sweep();
    }
    ++chain_id_;
    produced_in_chain_ = 0;
}

GluingInstance InstanceGenerator::next() {
    int tries = 0;
    while (true) {
        if (!c1_ || produced_in_chain_ >= opt_.per_chain || tries >= opt_.max_tries) {
            start_chain();
            tries = 0;
        }
        ++tries;
        for (int i = 0; i < opt_.thin; ++i) {
            c1_->sweep();
            c2_->sweep();
        }
        ++stats_.samples;
        GluingInstance inst = base_;
        inst.n1 = c1_->current();
        inst.n2 = c2_->current();
        Current sum = inst.n1 + inst.n2;
        auto cy = cluster_mask(sum, {inst.y});
        if (cy[inst.x]) {
            ++stats_.connected;
            continue;
        }
        inst.S = {inst.x};
        if (rng_.coin()) {
            std::vector<int> around = inst.lattice->vertices_in(Box{inst.lattice->point(inst.x), 1});
            if (std::none_of(around.begin(), around.end(), [&](int v) { return cy[v] != 0; })) inst.S = around;
        }
        GluingContext ctx(inst);
        auto V = maximal_disjoint_blocks(ctx, blocks(inst.dim(), inst.lattice->box(), inst.n));
        if (V.empty()) {
            ++stats_.no_block;
            continue;
        }
        for (const Box& b : V)
            if (rng_.coin()) inst.Z.push_back(b);
        if (inst.Z.empty()) inst.Z.push_back(V[rng_.below(V.size())]);
        ++produced_in_chain_;
        return inst;
    }
}

// ---------------------------------------------------------------- fixtures

namespace {

void write_point(std::ostream& os, const Point& p, int d) {
    for (int i = 0; i < d; ++i) os << (i ? " " : "") << p[i];
}

Point read_point(std::istream& is, int d) {
    Point p{};
    for (int i = 0; i < d; ++i)
        if (!(is >> p[i])) throw std::runtime_error("truncated instance file");
    return p;
}

void expect(std::istream& is, const std::string& word) {
    std::string w;
    if (!(is >> w) || w != word) throw std::runtime_error("instance file: expected '" + word + "'");
}

void write_current(std::ostream& os, const char* name, const GluingInstance& inst, const Current& n) {
    const Graph& g = *inst.graph;
    const int d = inst.dim();
    int nz = 0;
    for (int b = 0; b < n.size(); ++b) nz += n[b] != 0;
    os << name << ' ' << nz << '\n';
    for (int b = 0; b < n.size(); ++b) {
        if (n[b] == 0) continue;
        const Bundle& e = g.bundle(b);
        int u = e.u == g.ghost() ? e.v : e.u, v = e.u == g.ghost() ? e.u : e.v;
        write_point(os, g.coord(u), d);
        os << ' ';
        if (v == g.ghost()) os << 'g';
        else write_point(os, g.coord(v), d);
        os << ' ' << n[b] << '\n';
    }
}

Current read_current(std::istream& is, const char* name, const GluingInstance& inst) {
    const Graph& g = *inst.graph;
    const BoxLattice& lat = *inst.lattice;
    const int d = inst.dim();
    expect(is, name);
    int count = 0;
    is >> count;
    Current n(g);
    for (int i = 0; i < count; ++i) {
        int u = lat.vertex(read_point(is, d));
        std::string tok;
        is >> tok;
        int v;
        if (tok == "g") {
            v = g.ghost();
        } else {
            Point q{};
            q[0] = std::stoi(tok);
            for (int j = 1; j < d; ++j) is >> q[j];
            v = lat.vertex(q);
        }
        int val = 0;
        if (!(is >> val) || u < 0 || v < 0) throw std::runtime_error("instance file: bad bundle line");
        int b = g.find_bundle(u, v);
        if (b < 0) throw std::runtime_error("instance file: no such bundle");
        n.set(b, val);
    }
    return n;
}

}  // namespace

void write_instance(std::ostream& os, const GluingInstance& inst) {
    const int d = inst.dim();
    const auto& lat = *inst.lattice;
    os << "gluing " << d << ' ' << inst.N() << ' ' << inst.n << ' ' << fmt_num(inst.beta) << '\n';
    os << "x ";
    write_point(os, lat.point(inst.x), d);
    os << "\ny ";
    write_point(os, lat.point(inst.y), d);
    os << "\nS " << inst.S.size() << '\n';
    for (int v : inst.S) {
        write_point(os, lat.point(v), d);
        os << '\n';
    }
    os << "Z " << inst.Z.size() << '\n';
    for (const Box& b : inst.Z) {
        write_point(os, b.center, d);
        os << '\n';
    }
    write_current(os, "n1", inst, inst.n1);
    write_current(os, "n2", inst, inst.n2);
}

GluingInstance read_instance(std::istream& is) {
    expect(is, "gluing");
    int d = 0, N = 0, n = 0;
    std::string beta;
    if (!(is >> d >> N >> n >> beta)) throw std::runtime_error("instance file: bad header");
    expect(is, "x");
    Point x = read_point(is, d);
    expect(is, "y");
    Point y = read_point(is, d);
    GluingInstance inst = make_instance(d, N, n, std::stod(beta), x, y);
    expect(is, "S");
    int ns = 0;
    is >> ns;
    for (int i = 0; i < ns; ++i) {
        int v = inst.lattice->vertex(read_point(is, d));
        if (v < 0) throw std::runtime_error("instance file: S point outside the box");
        inst.S.push_back(v);
    }
    expect(is, "Z");
    int nz = 0;
    is >> nz;
    for (int i = 0; i < nz; ++i) inst.Z.push_back(Box{read_point(is, d), n});
    inst.n1 = read_current(is, "n1", inst);
    inst.n2 = read_current(is, "n2", inst);
    return inst;
}

std::string dump_instance(const GluingInstance& inst) {
    std::ostringstream os;
    write_instance(os, inst);
    return os.str();
}

SurgeryRow surgery_row(long id, const GluingInstance& inst, const SurgeryCertificate& cert) {
    SurgeryRow r;
    r.id = id;
    r.d = inst.dim();
    r.N = inst.N();
    r.n = inst.n;
    r.beta = inst.beta;
    r.blocks = static_cast<int>(cert.paths.size());
    for (const auto& pi : cert.paths) {
        r.strategies += (r.strategies.empty() ? "" : ";") + pi.strategy;
        r.path_length += pi.k();
    }
    r.modified = static_cast<int>(cert.modified.size());
    r.a = cert.a;
    r.b = cert.b;
    r.c = cert.c;
    r.d_ok = cert.d;
    r.log_ratio = log_weight_ratio(cert.n1, cert.n2, cert.n1p, cert.n2p, cert.modified, inst.beta);
    r.log_bound = log_ratio_bound(cert.n1p, cert.n2p, cert.modified, inst.beta);
    return r;
}

void write_surgery_csv(std::ostream& os, const std::vector<SurgeryRow>& rows) {
    CsvTable t({"id", "d", "N", "n", "beta", "blocks", "strategies", "path_length", "modified", "a", "b", "c", "d",
                "log_ratio", "log_bound", "ratio_ok", "c_per_edge"});
    for (const auto& r : rows)
        t.row() << r.id << r.d << r.N << r.n << r.beta << r.blocks << r.strategies << r.path_length << r.modified
                << r.a << r.b << r.c << r.d_ok << r.log_ratio << r.log_bound << r.ratio_ok()
                << (r.modified ? r.log_ratio / r.modified : 0.0);
    t.write(os);
}

}  // namespace ising
