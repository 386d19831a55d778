#include "ising/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <deque>
#include <limits>
#include <map>
#include <set>
#include <unordered_set>

namespace ising {

int linf(const Point& a, const Point& b) {
    int m = 0;
    for (int i = 0; i < kMaxDim; ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

int l1(const Point& a, const Point& b) {
    int s = 0;
    for (int i = 0; i < kMaxDim; ++i) s += std::abs(a[i] - b[i]);
    return s;
}

int Graph::index_of(const Point& p) const {
    auto it = index_.find(p);
    return it == index_.end() ? -1 : it->second;
}

int Graph::total_multiplicity() const {
    int s = 0;
    for (const auto& b : bundles_) s += b.mult;
    return s;
}

int Graph::outside_degree(int v) const {
    if (v == ghost_) return 0;
    int cnt = 0;
    for (const Point& p : members_[v]) {
        for (int i = 0; i < dim_; ++i) {
            for (int s : {-1, 1}) {
                Point q = p;
                q[i] += s;
                if (index_.find(q) == index_.end()) ++cnt;
            }
        }
    }
    return cnt;
}

int Graph::find_bundle(int u, int v) const {
    for (const auto& inc : adj_[u])
        if (inc.nbr == v) return inc.bundle;
    return -1;
}

Graph Graph::from_parts(int dim, std::vector<std::vector<Point>> members,
                        std::vector<Bundle> bundles, int ghost) {
    Graph g;
    g.dim_ = dim;
    g.members_ = std::move(members);
    g.bundles_ = std::move(bundles);
    g.ghost_ = ghost;
    g.finalize();
    return g;
}

void Graph::finalize() {
    int nv = num_vertices();
    index_.clear();
    for (int v = 0; v < nv; ++v) {
        if (v == ghost_) continue;
        for (const Point& p : members_[v]) index_[p] = v;
    }
    for (auto& b : bundles_) {
        if (b.mult < 1) throw GeometryError("bundle multiplicity must be positive");
        if (b.u == b.v) throw GeometryError("self-loop bundle");
        if (b.u > b.v) std::swap(b.u, b.v);
    }
    std::sort(bundles_.begin(), bundles_.end(),
              [](const Bundle& a, const Bundle& b) { return std::pair(a.u, a.v) < std::pair(b.u, b.v); });
    adj_.assign(nv, {});
    for (int i = 0; i < num_bundles(); ++i) {
        adj_[bundles_[i].u].push_back({bundles_[i].v, i});
        adj_[bundles_[i].v].push_back({bundles_[i].u, i});
    }
    boundary_.assign(nv, 0);
    for (int v = 0; v < nv; ++v)
        if (v != ghost_ && outside_degree(v) > 0) boundary_[v] = 1;
}

bool Box::contains(const Point& p, int d) const {
    for (int i = 0; i < d; ++i)
        if (std::abs(p[i] - center[i]) > radius) return false;
    return true;
}

bool Box::contains(const Box& b, int d) const {
    for (int i = 0; i < d; ++i)
        if (b.center[i] - b.radius < center[i] - radius || b.center[i] + b.radius > center[i] + radius)
            return false;
    return true;
}

bool Box::intersects(const Box& b, int d) const {
    for (int i = 0; i < d; ++i)
        if (std::abs(b.center[i] - center[i]) > b.radius + radius) return false;
    return true;
}

std::vector<Point> Box::points(int d) const {
    std::vector<Point> out;
    Point p = center;
    for (int i = 0; i < d; ++i) p[i] -= radius;
    while (true) {
        out.push_back(p);
        int i = d - 1;
        while (i >= 0 && p[i] == center[i] + radius) {
            p[i] = center[i] - radius;
            --i;
        }
        if (i < 0) break;
        ++p[i];
    }
    return out;
}

Graph graph_from_points(int d, std::vector<Point> pts) {
    if (d < 2) throw GeometryError("dimension must be at least 2");
    if (d > kMaxDim) throw GeometryError("dimension exceeds supported maximum");
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    std::unordered_map<Point, int, PointHash> idx;
    for (int i = 0; i < static_cast<int>(pts.size()); ++i) idx[pts[i]] = i;
    std::vector<Bundle> bundles;
    for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
        for (int c = 0; c < d; ++c) {
            Point q = pts[i];
            ++q[c];
            auto it = idx.find(q);
            if (it != idx.end()) bundles.push_back({i, it->second, 1});
        }
    }
    std::vector<std::vector<Point>> members;
    members.reserve(pts.size());
    for (const Point& p : pts) members.push_back({p});
    return Graph::from_parts(d, std::move(members), std::move(bundles), -1);
}

Graph build_box_graph(int d, int n, const Point& center) {
    if (d < 2) throw GeometryError("dimension must be at least 2");
    if (n < 0) throw GeometryError("radius must be nonnegative");
    Box b{center, n};
    return graph_from_points(d, b.points(d));
}

Graph attach_ghost(const Graph& g) {
    if (g.has_ghost()) throw GeometryError("graph already has a ghost vertex");
    std::vector<std::vector<Point>> members;
    for (int v = 0; v < g.num_vertices(); ++v) members.push_back(g.members(v));
    std::vector<Bundle> bundles = g.bundles();
    int ghost = g.num_vertices();
    for (int v = 0; v < g.num_vertices(); ++v) {
        int m = g.outside_degree(v);
        if (m > 0) bundles.push_back({v, ghost, m});
    }
    members.push_back({Point{}});
    return Graph::from_parts(g.dim(), std::move(members), std::move(bundles), ghost);
}

Graph collapse(const Graph& g, const std::vector<std::vector<int>>& cores) {
    int nv = g.num_vertices();
    std::vector<int> core_of(nv, -1);
    for (int c = 0; c < static_cast<int>(cores.size()); ++c) {
        if (cores[c].empty()) throw GeometryError("empty core");
        for (int v : cores[c]) {
            if (v < 0 || v >= nv) throw GeometryError("core vertex out of range");
            if (v == g.ghost()) throw GeometryError("ghost cannot belong to a core");
            if (core_of[v] >= 0) throw GeometryError("cores overlap");
            core_of[v] = c;
        }
    }
    // New vertex order follows the smallest original index of each class.
    std::vector<int> rep(nv);
    std::vector<int> core_min(cores.size(), std::numeric_limits<int>::max());
    for (int v = 0; v < nv; ++v)
        if (core_of[v] >= 0) core_min[core_of[v]] = std::min(core_min[core_of[v]], v);
    for (int v = 0; v < nv; ++v) rep[v] = core_of[v] >= 0 ? core_min[core_of[v]] : v;
    std::vector<int> new_index(nv, -1);
    int next = 0;
    for (int v = 0; v < nv; ++v)
        if (rep[v] == v) new_index[v] = next++;
    std::vector<std::vector<Point>> members(next);
    for (int v = 0; v < nv; ++v) {
        auto& m = members[new_index[rep[v]]];
        m.insert(m.end(), g.members(v).begin(), g.members(v).end());
    }
    for (auto& m : members) std::sort(m.begin(), m.end());
    std::map<std::pair<int, int>, int> mult;
    for (const auto& b : g.bundles()) {
        int u = new_index[rep[b.u]], v = new_index[rep[b.v]];
        if (u == v) continue;
        if (u > v) std::swap(u, v);
        mult[{u, v}] += b.mult;
    }
    std::vector<Bundle> bundles;
    for (const auto& [key, m] : mult) bundles.push_back({key.first, key.second, m});
    int ghost = g.has_ghost() ? new_index[g.ghost()] : -1;
    if (ghost >= 0) members[ghost] = {Point{}};
    return Graph::from_parts(g.dim(), std::move(members), std::move(bundles), ghost);
}

BlockFamily blocks(int d, const Box& region, int k) {
    if (k < 1) throw GeometryError("block radius must be positive");
    BlockFamily fam;
    fam.k = k;
    fam.d = d;
    fam.region = region;
    // Centres x in kZ^d with Λ_k(x) inside the region.
    Point lo{}, hi{};
    for (int i = 0; i < d; ++i) {
        int a = region.center[i] - region.radius + k;
        int b = region.center[i] + region.radius - k;
        auto ceil_div = [](int x, int m) { return x >= 0 ? (x + m - 1) / m : -((-x) / m); };
        auto floor_div = [](int x, int m) { return x >= 0 ? x / m : -((-x + m - 1) / m); };
        lo[i] = ceil_div(a, k);
        hi[i] = floor_div(b, k);
        if (lo[i] > hi[i]) return fam;
    }
    Point c = lo;
    while (true) {
        Point center{};
        for (int i = 0; i < d; ++i) center[i] = c[i] * k;
        fam.blocks.push_back({center, k});
        int i = d - 1;
        while (i >= 0 && c[i] == hi[i]) {
            c[i] = lo[i];
            --i;
        }
        if (i < 0) break;
        ++c[i];
    }
    return fam;
}

std::vector<int> BlockFamily::near(int i) const {
    std::vector<int> out;
    for (int j = 0; j < static_cast<int>(blocks.size()); ++j)
        if (linf(blocks[i].center, blocks[j].center) <= 3 * k) out.push_back(j);
    return out;
}

std::vector<int> BlockFamily::intersecting(int i) const {
    std::vector<int> out;
    for (int j = 0; j < static_cast<int>(blocks.size()); ++j)
        if (blocks[i].intersects(blocks[j], d)) out.push_back(j);
    return out;
}

int BlockFamily::index_of_center(const Point& c) const {
    for (int j = 0; j < static_cast<int>(blocks.size()); ++j)
        if (blocks[j].center == c) return j;
    return -1;
}

bool strongly_disjoint(const Box& a, const Box& b, int n, int d) {
    return linf(a.center, b.center) >= 7 * d * n;
}

std::vector<Point> neighborhood(int d, const std::vector<Point>& s, int r) {
    std::unordered_set<Point, PointHash> seen(s.begin(), s.end());
    std::vector<Point> frontier(seen.begin(), seen.end());
    for (int step = 0; step < r; ++step) {
        std::vector<Point> next;
        for (const Point& p : frontier) {
            for (int i = 0; i < d; ++i)
                for (int sg : {-1, 1}) {
                    Point q = p;
                    q[i] += sg;
                    if (seen.insert(q).second) next.push_back(q);
                }
        }
        frontier = std::move(next);
    }
    std::vector<Point> out(seen.begin(), seen.end());
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::pair<Point, Point>> edge_neighborhood(int d, const std::vector<Point>& s, int r) {
    auto pts = neighborhood(d, s, r);
    std::unordered_set<Point, PointHash> in(pts.begin(), pts.end());
    std::vector<std::pair<Point, Point>> out;
    for (const Point& p : pts)
        for (int i = 0; i < d; ++i) {
            Point q = p;
            ++q[i];
            if (in.count(q)) out.emplace_back(p, q);
        }
    return out;
}

std::vector<int> graph_distances(const Graph& g, const std::vector<int>& sources) {
    std::vector<int> dist(g.num_vertices(), -1);
    std::deque<int> q;
    for (int s : sources) {
        if (s == g.ghost() || dist[s] == 0) continue;
        dist[s] = 0;
        q.push_back(s);
    }
    while (!q.empty()) {
        int v = q.front();
        q.pop_front();
        for (const auto& inc : g.adj(v)) {
            if (inc.nbr == g.ghost() || dist[inc.nbr] >= 0) continue;
            dist[inc.nbr] = dist[v] + 1;
            q.push_back(inc.nbr);
        }
    }
    return dist;
}

std::vector<int> neighborhood(const Graph& g, const std::vector<int>& s, int r) {
    auto dist = graph_distances(g, s);
    std::vector<int> out;
    for (int v = 0; v < g.num_vertices(); ++v)
        if (dist[v] >= 0 && dist[v] <= r) out.push_back(v);
    return out;
}

std::vector<int> edge_neighborhood(const Graph& g, const std::vector<int>& s, int r) {
    auto dist = graph_distances(g, s);
    std::vector<int> out;
    for (int b = 0; b < g.num_bundles(); ++b) {
        const auto& e = g.bundle(b);
        if (dist[e.u] >= 0 && dist[e.u] <= r && dist[e.v] >= 0 && dist[e.v] <= r) out.push_back(b);
    }
    return out;
}

}  // namespace ising

namespace ising {

BoxLattice::BoxLattice(const Graph& g) : g_(&g), d_(g.dim()) {
    int nv = g.num_lattice_vertices();
    if (nv < 1) throw GeometryError("empty graph is not a box");
    side_ = static_cast<int>(std::lround(std::pow(nv, 1.0 / d_)));
    int total = 1;
    for (int i = 0; i < d_; ++i) total *= side_;
    if (total != nv || side_ % 2 == 0) throw GeometryError("graph is not a box graph");
    n_ = side_ / 2;
    const Point& first = g.coord(0);
    for (int i = 0; i < d_; ++i) center_[i] = first[i] + n_;
    for (int v = 0; v < nv; ++v)
        if (vertex(g.coord(v)) != v || g.members(v).size() != 1) throw GeometryError("graph is not a box graph");
    up_.assign(static_cast<std::size_t>(nv) * d_, -1);
    for (int b = 0; b < g.num_bundles(); ++b) {
        if (g.is_ghost_bundle(b)) continue;
        int u = g.bundle(b).u, w = g.bundle(b).v;
        if (u > w) std::swap(u, w);
        for (int i = 0; i < d_; ++i)
            if (g.coord(u)[i] != g.coord(w)[i]) up_[static_cast<std::size_t>(u) * d_ + i] = b;
    }
}

bool BoxLattice::contains(const Point& p) const {
    for (int i = 0; i < d_; ++i)
        if (std::abs(p[i] - center_[i]) > n_) return false;
    return true;
}

int BoxLattice::vertex(const Point& p) const {
    if (!contains(p)) return -1;
    int idx = 0;
    for (int i = 0; i < d_; ++i) idx = idx * side_ + (p[i] - center_[i] + n_);
    return idx;
}

std::vector<int> BoxLattice::vertices_in(const Box& b) const {
    std::vector<int> out;
    for (const Point& p : b.points(d_)) {
        int v = vertex(p);
        if (v >= 0) out.push_back(v);
    }
    return out;
}

std::vector<int> BoxLattice::edges_in(const Box& b) const {
    std::vector<int> out;
    for (const Point& p : b.points(d_)) {
        int v = vertex(p);
        if (v < 0) continue;
        for (int i = 0; i < d_; ++i) {
            if (p[i] + 1 > b.center[i] + b.radius) continue;
            int e = edge(v, i);
            if (e >= 0) out.push_back(e);
        }
    }
    return out;
}

}  // namespace ising
