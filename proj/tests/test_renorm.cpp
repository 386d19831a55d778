#include <functional>
#include <sstream>

#include "doctest.h"
#include "ising/renorm.hpp"

using namespace ising;

namespace {

Point pt(int a, int b, int c = 0) { return Point{a, b, c, 0}; }

void open_segment(const BoxLattice& lat, BondConfig& w, Point from, int axis, int len) {
    for (int i = 0; i < len; ++i) {
        int v = lat.vertex(from);
        REQUIRE(v >= 0);
        int e = lat.edge(v, axis);
        REQUIRE(e >= 0);
        w.set(e, true);
        ++from[axis];
    }
}

// Independent oracle: longest simple open path inside b by exhaustive search over Graph adjacency.
int longest_simple_path(const Graph& g, const BondConfig& w, const Box& b, const std::vector<int>& cluster) {
    int best = 0;
    std::vector<char> on(g.num_vertices(), 0);
    std::function<void(int, int)> go = [&](int v, int len) {
        best = std::max(best, len);
        on[v] = 1;
        for (const auto& inc : g.adj(v))
            if (w.open(inc.bundle) && !on[inc.nbr] && b.contains(g.coord(inc.nbr), g.dim())) go(inc.nbr, len + 1);
        on[v] = 0;
    };
    for (int s : cluster) go(s, 0);
    return best;
}

}  // namespace

TEST_CASE("degenerate blocks") {
    for (int d : {2, 3})
        for (int k : {1, 2, 3}) {
            Graph g = build_box_graph(d, k);
            BoxLattice lat(g);
            Box b{Point{}, k};
            CHECK(classify_block(lat, BondConfig(g.num_bundles(), true), b, k) == BlockState::Good);
            CHECK(classify_block(lat, BondConfig(g.num_bundles(), false), b, k) == BlockState::Bad);
            CHECK_FALSE(inspect_block(lat, BondConfig(g.num_bundles(), false), b, k).crossing);
        }
}

TEST_CASE("a second long path makes the block bad") {
    const int k = 3;
    Graph g = build_box_graph(2, k);
    BoxLattice lat(g);
    Box b{Point{}, k};
    BondConfig w(g.num_bundles());
    open_segment(lat, w, pt(-k, 0), 0, 2 * k);  // horizontal spanning line
    open_segment(lat, w, pt(0, -k), 1, 2 * k);  // vertical spanning line
    auto v = inspect_block(lat, w, b, k);
    CHECK(v.crossing);
    CHECK(v.paths_contained);
    CHECK(classify_block(lat, w, b, k) == BlockState::Good);

    // Stray paths stay inside one quadrant so they miss both spanning lines.
    BondConfig shorter = w;
    open_segment(lat, shorter, pt(1, 2), 0, k - 1);
    CHECK(classify_block(lat, shorter, b, k) == BlockState::Good);

    BondConfig longer = shorter;
    open_segment(lat, longer, pt(3, 2), 1, 1);
    auto lv = inspect_block(lat, longer, b, k);
    CHECK(lv.crossing);
    CHECK_FALSE(lv.paths_contained);
    CHECK(classify_block(lat, longer, b, k) == BlockState::Bad);
    CHECK(classify_block(lat, longer, b, k, GoodMode::CrossingOnly) == BlockState::Good);
}

TEST_CASE("a short cycle carries long simple paths") {
    // An 8-cycle has eccentricity 4 but contains simple paths with 7 edges.
    const int k = 5;
    Graph g = build_box_graph(2, k);
    BoxLattice lat(g);
    Box b{Point{}, k};
    BondConfig w(g.num_bundles());
    open_segment(lat, w, pt(-k, 0), 0, 2 * k);
    open_segment(lat, w, pt(0, -k), 1, 2 * k);
    open_segment(lat, w, pt(2, 2), 0, 2);
    open_segment(lat, w, pt(2, 4), 0, 2);
    open_segment(lat, w, pt(2, 2), 1, 2);
    open_segment(lat, w, pt(4, 2), 1, 2);
    std::vector<int> ring;
    for (int x = 2; x <= 4; ++x)
        for (int y = 2; y <= 4; ++y)
            if (x != 3 || y != 3) ring.push_back(lat.vertex(pt(x, y)));
    CHECK(longest_simple_path(g, w, b, ring) == 7);
    CHECK(has_open_path(lat, w, b, ring, 5));
    CHECK(has_open_path(lat, w, b, ring, 7));
    CHECK_FALSE(has_open_path(lat, w, b, ring, 8));
    CHECK(classify_block(lat, w, b, k) == BlockState::Bad);
}

TEST_CASE("path search agrees with exhaustive enumeration") {
    Graph g = build_box_graph(2, 3);
    BoxLattice lat(g);
    Box b{pt(-1, 1), 2};
    Stream rng(4, 0);
    for (int it = 0; it < 300; ++it) {
        BondConfig w(g.num_bundles());
        double q = 0.25 + 0.3 * rng.uniform();
        for (int e = 0; e < g.num_bundles(); ++e) w.set(e, rng.uniform() < q);
        auto verts = lat.vertices_in(b);
        // One cluster at a time, restricted to b.
        std::vector<char> done(g.num_vertices(), 0);
        for (int s : verts) {
            if (done[s]) continue;
            std::vector<int> cl{s};
            done[s] = 1;
            for (std::size_t i = 0; i < cl.size(); ++i)
                for (const auto& inc : g.adj(cl[i]))
                    if (w.open(inc.bundle) && !done[inc.nbr] && b.contains(g.coord(inc.nbr), 2)) {
                        done[inc.nbr] = 1;
                        cl.push_back(inc.nbr);
                    }
            int longest = longest_simple_path(g, w, b, cl);
            for (int k = 0; k <= 6; ++k) REQUIRE(has_open_path(lat, w, b, cl, k) == (longest >= k));
        }
    }
}

TEST_CASE("classification depends only on edges inside the block") {
    Graph g = build_box_graph(3, 4);
    BoxLattice lat(g);
    Box b{pt(2, 2, 2), 2};
    auto inside = lat.edges_in(b);
    std::vector<char> in(g.num_bundles(), 0);
    for (int e : inside) in[e] = 1;
    Stream rng(8, 0);
    for (int it = 0; it < 100; ++it) {
        BondConfig w(g.num_bundles());
        for (int e = 0; e < g.num_bundles(); ++e) w.set(e, rng.uniform() < 0.6);
        BondConfig v = w;
        for (int e = 0; e < g.num_bundles(); ++e)
            if (!in[e]) v.set(e, rng.coin());
        REQUIRE(classify_block(lat, w, b, 2) == classify_block(lat, v, b, 2));
    }
    CHECK_THROWS_AS(classify_block(lat, BondConfig(g.num_bundles()), Box{pt(3, 3, 3), 2}, 2), GeometryError);
}

TEST_CASE("block field and very good blocks") {
    Graph g = build_box_graph(2, 8);
    BoxLattice lat(g);
    auto fam = blocks(2, Box{Point{}, 8}, 4);
    Stream rng(2, 0);
    BondConfig w(g.num_bundles());
    for (int e = 0; e < g.num_bundles(); ++e) w.set(e, rng.uniform() < 0.8);
    auto f = block_field(lat, w, fam);
    REQUIRE(f.state.size() == fam.blocks.size());
    for (std::size_t i = 0; i < fam.blocks.size(); ++i) CHECK(f.state[i] == classify_block(lat, w, fam.blocks[i], 4));
    auto pair = block_field_pair(lat, w, w, fam);
    for (std::size_t i = 0; i < fam.blocks.size(); ++i) CHECK((pair.very_good[i] != 0) == (f.state[i] == BlockState::Good));
    BondConfig w1 = w;
    int e = lat.edges_in(fam.blocks[0]).front();
    w1.set(e, !w.open(e));
    auto p2 = block_field_pair(lat, w, w1, fam);
    CHECK_FALSE(p2.very_good[0]);
    CHECK_FALSE(very_good(lat, w, w1, fam.blocks[0], 4));
}

TEST_CASE("superconnect estimates at degenerate p") {
    SamplingPlan plan;
    plan.burn_in = 2;
    plan.per_chain = 5;
    auto one = estimate_superconnect(3, 2, 1.0, BoundaryKind::Free, 10, plan);
    CHECK(one.good.mean() == 1.0);
    auto zero = estimate_superconnect(2, 2, 0.0, BoundaryKind::Wired, 10, plan);
    CHECK(zero.good.mean() == 0.0);
    CHECK(zero.good.n == 10);
    auto both = estimate_superconnect_worst(2, 2, 0.0, 10, plan);
    CHECK((both[0].worst != both[1].worst));
    std::ostringstream os;
    write_superconnect_csv(os, both);
    CHECK(os.str().rfind("k,p,xi,estimate,stderr,replicas", 0) == 0);
}

TEST_CASE("crossing probability grows with p") {
    SamplingPlan plan;
    plan.seed = 3;
    double prev = -1, prev_se = 0;
    for (double p : {0.4, 0.6, 0.8}) {
        auto e = estimate_superconnect(2, 3, p, BoundaryKind::Free, 400, plan, GoodMode::CrossingOnly);
        CHECK(e.good.mean() >= prev - 3 * std::sqrt(prev_se * prev_se + e.good.se() * e.good.se()));
        prev = e.good.mean();
        prev_se = e.good.se();
    }
}

TEST_CASE("box connection estimates") {
    SamplingPlan plan;
    plan.burn_in = 2;
    plan.per_chain = 5;
    auto same = estimate_box_connection(2, 3, 3, 0.3, 10, plan);
    CHECK(same.connected.mean() == 1.0);
    auto none = estimate_box_connection(2, 1, 5, 0.0, 10, plan);
    CHECK(none.connected.mean() == 0.0);
    CHECK_THROWS_AS(estimate_box_connection(2, 3, 5, 0.5, Point{}, pt(4, 0), 5, plan), GeometryError);
    CHECK_THROWS_AS(estimate_box_connection(2, 6, 5, 0.5, 5, plan), GeometryError);
}

TEST_CASE("estimates replay bit-exactly") {
    SamplingPlan plan;
    plan.seed = 17;
    auto a = estimate_superconnect(2, 2, 0.7, BoundaryKind::Free, 60, plan);
    auto b = estimate_superconnect(2, 2, 0.7, BoundaryKind::Free, 60, plan);
    CHECK(a.good.hits == b.good.hits);
}
