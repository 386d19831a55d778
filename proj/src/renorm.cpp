#include "ising/renorm.hpp"

#include <algorithm>
#include <deque>
#include <ostream>
#include <unordered_set>

#include "ising/output.hpp"

namespace ising {

namespace {

void require_inside(const BoxLattice& lat, const Box& b) {
    if (!lat.box().contains(b, lat.dim())) throw GeometryError("block is not contained in the box graph");
}

// Open neighbours of v that stay inside b.
template <class F>
void block_nbrs(const BoxLattice& lat, const BondConfig& w, const Box& b, int v, F&& f) {
    const Point& p = lat.point(v);
    for (int i = 0; i < lat.dim(); ++i) {
        if (p[i] < b.center[i] + b.radius) {
            int e = lat.edge(v, i);
            if (e >= 0 && w.open(e)) {
                Point q = p;
                ++q[i];
                f(lat.vertex(q));
            }
        }
        if (p[i] > b.center[i] - b.radius) {
            Point q = p;
            --q[i];
            int u = lat.vertex(q);
            if (u >= 0) {
                int e = lat.edge(u, i);
                if (e >= 0 && w.open(e)) f(u);
            }
        }
    }
}

// Farthest vertex from s and its distance, within the open subgraph of b.
std::pair<int, int> farthest(const BoxLattice& lat, const BondConfig& w, const Box& b, int s) {
    std::unordered_set<int> seen{s};
    std::deque<std::pair<int, int>> q{{s, 0}};
    std::pair<int, int> best{s, 0};
    while (!q.empty()) {
        auto [v, dist] = q.front();
        q.pop_front();
        if (dist > best.second) best = {v, dist};
        block_nbrs(lat, w, b, v, [&](int u) {
            if (seen.insert(u).second) {
                q.push_back({u, dist + 1});
            }
        });
    }
    return best;
}

bool extend(const BoxLattice& lat, const BondConfig& w, const Box& b, std::vector<int>& path, int k) {
    if (static_cast<int>(path.size()) == k + 1) return true;
    bool found = false;
    int v = path.back();
    block_nbrs(lat, w, b, v, [&](int u) {
        if (found || std::find(path.begin(), path.end(), u) != path.end()) return;
        path.push_back(u);
        if (extend(lat, w, b, path, k)) found = true;
        path.pop_back();
    });
    return found;
}

}  // namespace

bool has_open_path(const BoxLattice& lat, const BondConfig& w, const Box& b, const std::vector<int>& cluster, int k) {
    if (k < 0) return false;
    if (static_cast<int>(cluster.size()) < k + 1) return false;
    // A geodesic of length >= k contains a path with k edges.
    auto [far, d1] = farthest(lat, w, b, cluster.front());
    if (d1 >= k || farthest(lat, w, b, far).second >= k) return true;
    std::vector<int> path;
    for (int s : cluster) {
        path.assign(1, s);
        if (extend(lat, w, b, path, k)) return true;
    }
    return false;
}

BlockVerdict inspect_block(const BoxLattice& lat, const BondConfig& w, const Box& b, int k) {
    require_inside(lat, b);
    const int d = lat.dim(), s = 2 * b.radius + 1;
    std::vector<int> verts = lat.vertices_in(b);
    const int m = static_cast<int>(verts.size());
    std::vector<int> stride(d, 1);
    for (int i = d - 2; i >= 0; --i) stride[i] = stride[i + 1] * s;
    UnionFind uf(m);
    std::vector<std::uint8_t> faces(m, 0);
    for (int l = 0; l < m; ++l) {
        const Point& p = lat.point(verts[l]);
        for (int i = 0; i < d; ++i) {
            if (p[i] == b.center[i] - b.radius) faces[l] |= 1u << (2 * i);
            if (p[i] == b.center[i] + b.radius) faces[l] |= 1u << (2 * i + 1);
            if (p[i] < b.center[i] + b.radius) {
                int e = lat.edge(verts[l], i);
                if (e >= 0 && w.open(e)) uf.unite(l, l + stride[i]);
            }
        }
    }
    const std::uint8_t all = static_cast<std::uint8_t>((1u << (2 * d)) - 1);
    std::vector<std::uint8_t> mask(m, 0);
    for (int l = 0; l < m; ++l) mask[uf.find(l)] |= faces[l];
    BlockVerdict v;
    int crossing_root = -1;
    for (int l = 0; l < m; ++l)
        if (uf.find(l) == l && mask[l] == all) {
            ++v.crossing_clusters;
            crossing_root = l;
        }
    v.crossing = v.crossing_clusters >= 1;
    if (v.crossing_clusters != 1) return v;
    std::vector<std::vector<int>> groups(m);
    for (int l = 0; l < m; ++l) {
        int r = uf.find(l);
        if (r != crossing_root) groups[r].push_back(verts[l]);
    }
    v.paths_contained = true;
    for (const auto& gr : groups)
        if (!gr.empty() && has_open_path(lat, w, b, gr, k)) {
            v.paths_contained = false;
            break;
        }
    return v;
}

BlockState classify_block(const BoxLattice& lat, const BondConfig& w, const Box& b, int k, GoodMode mode) {
    BlockVerdict v = inspect_block(lat, w, b, mode == GoodMode::CrossingOnly ? -1 : k);
    if (mode == GoodMode::CrossingOnly) return v.crossing ? BlockState::Good : BlockState::Bad;
    return v.state();
}

int BlockField::count_good() const {
    return static_cast<int>(std::count(state.begin(), state.end(), BlockState::Good));
}

BlockField block_field(const BoxLattice& lat, const BondConfig& w, const BlockFamily& fam, GoodMode mode) {
    BlockField f;
    f.family = fam;
    f.state.reserve(fam.blocks.size());
    for (const Box& b : fam.blocks) f.state.push_back(classify_block(lat, w, b, fam.k, mode));
    return f;
}

bool very_good(const BoxLattice& lat, const BondConfig& w_xi, const BondConfig& w_1, const Box& b, int k) {
    for (int e : lat.edges_in(b))
        if (w_xi.open(e) != w_1.open(e)) return false;
    return classify_block(lat, w_xi, b, k) == BlockState::Good;
}

BlockField block_field_pair(const BoxLattice& lat, const BondConfig& w_xi, const BondConfig& w_1,
                            const BlockFamily& fam) {
    BlockField f = block_field(lat, w_xi, fam);
    f.very_good.resize(fam.blocks.size());
    for (std::size_t i = 0; i < fam.blocks.size(); ++i) {
        bool same = true;
        for (int e : lat.edges_in(fam.blocks[i]))
            if (w_xi.open(e) != w_1.open(e)) {
                same = false;
                break;
            }
        f.very_good[i] = same && f.state[i] == BlockState::Good;
    }
    return f;
}

const char* to_string(BoundaryKind k) { return k == BoundaryKind::Free ? "free" : "wired"; }

namespace {

// Runs independent cluster-sweep chains and evaluates `probe` on thinned samples.
template <class Probe>
Proportion sample_events(const Graph& g, double p, const BoundaryPartition& xi, bool start_open, long replicas,
                         const SamplingPlan& plan, std::uint64_t stream, Probe probe) {
    if (replicas <= 0) return {};
    int per = std::max(1, plan.per_chain);
    int chains = static_cast<int>((replicas + per - 1) / per);
    std::vector<Proportion> parts(chains);
    parallel_replicas(chains, [&](int c) {
        BondConfig w(g.num_bundles(), start_open);
        SpinConfig sigma;
        Stream rng(plan.seed, stream * 1000003ull + c);
        long sweep = 0;
        auto step = [&] {
            rng.set_sweep(sweep++);
            es_sweep(g, sigma, w, p, xi, rng);
        };
        for (int i = 0; i < plan.burn_in; ++i) step();
        long todo = std::min<long>(per, replicas - static_cast<long>(c) * per);
        for (long s = 0; s < todo; ++s) {
            for (int t = 0; t < std::max(1, plan.thin); ++t) step();
            parts[c].add(probe(w));
        }
    });
    Proportion total;
    for (const auto& q : parts) total.merge(q);
    return total;
}

}  // namespace

SuperconnectEstimate estimate_superconnect(int d, int k, double p, BoundaryKind xi_kind, long replicas,
                                           const SamplingPlan& plan, GoodMode mode) {
    if (k < 1) throw GeometryError("block radius must be positive");
    Graph g = build_box_graph(d, 2 * k);
    BoxLattice lat(g);
    BoundaryPartition xi = xi_kind == BoundaryKind::Wired ? BoundaryPartition::wired(g) : BoundaryPartition::free_bc(g);
    Box centre{Point{}, k};
    SuperconnectEstimate est;
    est.d = d;
    est.k = k;
    est.p = p;
    est.xi = xi_kind;
    std::uint64_t stream = (static_cast<std::uint64_t>(d) << 40) ^ (static_cast<std::uint64_t>(k) << 20) ^
                           (xi_kind == BoundaryKind::Wired ? 1u : 0u);
    est.good = sample_events(g, p, xi, xi_kind == BoundaryKind::Wired, replicas, plan, stream, [&](const BondConfig& w) {
        return classify_block(lat, w, centre, k, mode) == BlockState::Good;
    });
    return est;
}

std::vector<SuperconnectEstimate> estimate_superconnect_worst(int d, int k, double p, long replicas,
                                                              const SamplingPlan& plan, GoodMode mode) {
    std::vector<SuperconnectEstimate> out{estimate_superconnect(d, k, p, BoundaryKind::Free, replicas, plan, mode),
                                          estimate_superconnect(d, k, p, BoundaryKind::Wired, replicas, plan, mode)};
    (out[0].good.mean() <= out[1].good.mean() ? out[0] : out[1]).worst = true;
    return out;
}

BoxConnectionEstimate estimate_box_connection(int d, int n, int N, double p, long replicas, const SamplingPlan& plan) {
    Point x{}, y{};
    for (int i = 0; i < d; ++i) {
        x[i] = -(N - n);
        y[i] = N - n;
    }
    return estimate_box_connection(d, n, N, p, x, y, replicas, plan);
}

BoxConnectionEstimate estimate_box_connection(int d, int n, int N, double p, const Point& x, const Point& y,
                                              long replicas, const SamplingPlan& plan) {
    if (n < 0 || n > N) throw GeometryError("box radius must satisfy 0 <= n <= N");
    Graph g = build_box_graph(d, N);
    BoxLattice lat(g);
    Box bx{x, n}, by{y, n};
    if (!lat.box().contains(bx, d) || !lat.box().contains(by, d)) throw GeometryError("boxes must lie inside the domain");
    std::vector<int> vx = lat.vertices_in(bx), vy = lat.vertices_in(by);
    BoxConnectionEstimate est;
    est.d = d;
    est.n = n;
    est.N = N;
    est.p = p;
    est.x = x;
    est.y = y;
    auto free = BoundaryPartition::free_bc(g);
    std::uint64_t stream = 0xb0c5ull ^ (static_cast<std::uint64_t>(N) << 16) ^ static_cast<std::uint64_t>(n);
    est.connected = sample_events(g, p, free, false, replicas, plan, stream, [&](const BondConfig& w) {
        ClusterMap cm = clusters(g, w, free);
        std::vector<char> mark(g.num_vertices(), 0);
        for (int v : vx) mark[cm.root[v]] = 1;
        for (int v : vy)
            if (mark[cm.root[v]]) return true;
        return false;
    });
    return est;
}

void write_superconnect_csv(std::ostream& os, const std::vector<SuperconnectEstimate>& rows) {
    CsvTable t({"k", "p", "xi", "estimate", "stderr", "replicas", "d", "ci_low", "ci_high", "worst"});
    for (const auto& r : rows)
        t.row() << r.k << r.p << to_string(r.xi) << r.good.mean() << r.good.se() << r.good.n << r.d << r.good.lower()
                << r.good.upper() << r.worst;
    t.write(os);
}

}  // namespace ising
