#include <algorithm>
#include <map>
#include <set>

#include "doctest.h"
#include "ising/lattice.hpp"
#include "ising/rng.hpp"

using namespace ising;

namespace {

Point pt(int a, int b, int c = 0) { return Point{a, b, c, 0}; }

int degree_with_mult(const Graph& g, int v) {
    int d = 0;
    for (const auto& inc : g.adj(v)) d += g.bundle(inc.bundle).mult;
    return d;
}

}  // namespace

TEST_CASE("box graph counts") {
    auto g2 = build_box_graph(2, 1);
    CHECK(g2.num_vertices() == 9);
    CHECK(g2.num_bundles() == 12);
    auto g3 = build_box_graph(3, 1);
    CHECK(g3.num_vertices() == 27);
    CHECK(g3.num_bundles() == 54);
    auto g0 = build_box_graph(2, 0);
    CHECK(g0.num_vertices() == 1);
    CHECK(g0.num_bundles() == 0);
    CHECK_THROWS_AS(build_box_graph(1, 3), GeometryError);
}

TEST_CASE("box boundary is the outer shell") {
    auto g = build_box_graph(3, 2, pt(1, -1, 4));
    for (int v = 0; v < g.num_vertices(); ++v) {
        Point c = g.coord(v);
        bool shell = linf(c, pt(1, -1, 4)) == 2;
        CHECK(g.is_boundary(v) == shell);
    }
}

TEST_CASE("ghost multiplicities") {
    auto g2 = attach_ghost(build_box_graph(2, 1));
    int tot = 0;
    for (const auto& inc : g2.adj(g2.ghost())) tot += g2.bundle(inc.bundle).mult;
    CHECK(tot == 12);
    auto g3 = attach_ghost(build_box_graph(3, 1));
    tot = 0;
    for (const auto& inc : g3.adj(g3.ghost())) tot += g3.bundle(inc.bundle).mult;
    CHECK(tot == 54);
    auto g0 = attach_ghost(build_box_graph(2, 0));
    REQUIRE(g0.adj(g0.ghost()).size() == 1);
    CHECK(g0.bundle(g0.adj(g0.ghost())[0].bundle).mult == 4);
    CHECK_THROWS_AS(attach_ghost(g0), GeometryError);
}

TEST_CASE("ghost degree audit: every box vertex has degree 2d in G+") {
    for (int d = 2; d <= 3; ++d)
        for (int n = 0; n <= 2; ++n) {
            auto g = attach_ghost(build_box_graph(d, n));
            for (int v = 0; v < g.num_vertices(); ++v)
                if (v != g.ghost()) CHECK(degree_with_mult(g, v) == 2 * d);
            for (int b = 0; b < g.num_bundles(); ++b)
                if (g.bundle(b).mult > 1) CHECK(g.is_ghost_bundle(b));
        }
}

TEST_CASE("collapse of a core") {
    auto g = build_box_graph(2, 2);
    std::vector<int> core;
    for (int v = 0; v < g.num_vertices(); ++v)
        if (linf(g.coord(v), Point{}) <= 1) core.push_back(v);
    auto c = collapse(g, {core});
    CHECK(c.num_vertices() == 17);
    int x = c.index_of(Point{});
    REQUIRE(x >= 0);
    CHECK(c.index_of(pt(1, 1)) == x);
    int tot = 0;
    for (const auto& inc : c.adj(x)) tot += c.bundle(inc.bundle).mult;
    CHECK(tot == 12);
    int to20 = c.find_bundle(x, c.index_of(pt(2, 0)));
    REQUIRE(to20 >= 0);
    CHECK(c.bundle(to20).mult == 1);
    CHECK(c.total_multiplicity() == g.total_multiplicity() - 12);

    auto same = collapse(g, {});
    CHECK(same.num_vertices() == g.num_vertices());
    CHECK(same.num_bundles() == g.num_bundles());
    CHECK_THROWS_AS(collapse(g, {{0, 1}, {1, 2}}), GeometryError);
}

TEST_CASE("collapse is idempotent and conserves multiplicity between classes") {
    Stream rng(11, 0);
    for (int trial = 0; trial < 50; ++trial) {
        auto g = build_box_graph(2, 3);
        std::vector<int> perm(g.num_vertices());
        for (int i = 0; i < g.num_vertices(); ++i) perm[i] = i;
        for (int i = g.num_vertices() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
        std::vector<std::vector<int>> cores(2);
        int sz0 = 1 + static_cast<int>(rng.below(6)), sz1 = 1 + static_cast<int>(rng.below(6));
        cores[0].assign(perm.begin(), perm.begin() + sz0);
        cores[1].assign(perm.begin() + sz0, perm.begin() + sz0 + sz1);
        auto c = collapse(g, cores);
        CHECK(c.num_vertices() == g.num_vertices() - sz0 - sz1 + 2);
        // Multiplicity between the images of any two original vertices in different classes.
        auto cls = [&](int v) { return c.index_of(g.coord(v)); };
        std::map<std::pair<int, int>, int> expect;
        for (const auto& b : g.bundles()) {
            int u = cls(b.u), v = cls(b.v);
            if (u == v) continue;
            expect[{std::min(u, v), std::max(u, v)}] += b.mult;
        }
        std::map<std::pair<int, int>, int> got;
        for (const auto& b : c.bundles()) got[{b.u, b.v}] = b.mult;
        CHECK(expect == got);
        int x0 = c.index_of(g.coord(cores[0][0]));
        auto again = collapse(c, {{x0}});
        CHECK(again.num_vertices() == c.num_vertices());
        CHECK(again.total_multiplicity() == c.total_multiplicity());
    }
}

TEST_CASE("blocks and neighbourhoods") {
    auto fam = blocks(2, Box{Point{}, 4}, 2);
    CHECK(fam.blocks.size() == 9);
    std::set<Point> centers;
    for (const auto& b : fam.blocks) centers.insert(b.center);
    for (int a : {-2, 0, 2})
        for (int b : {-2, 0, 2}) CHECK(centers.count(pt(a, b)));
    CHECK(strongly_disjoint(Box{Point{}, 1}, Box{pt(7 * 3 * 1, 0, 0), 1}, 1, 3));
    CHECK_FALSE(strongly_disjoint(Box{Point{}, 1}, Box{pt(20, 0, 0), 1}, 1, 3));
}

TEST_CASE("block families match the closed-form grid count and stay inside the region") {
    for (int d = 2; d <= 3; ++d)
        for (int n = 1; n <= 9; ++n)
            for (int k = 1; k <= n; ++k) {
                Box region{Point{}, n};
                auto fam = blocks(d, region, k);
                int per_axis = 2 * ((n - k) / k) + 1;
                int expected = 1;
                for (int i = 0; i < d; ++i) expected *= per_axis;
                CHECK(static_cast<int>(fam.blocks.size()) == expected);
                for (const auto& b : fam.blocks) {
                    CHECK(region.contains(b, d));
                    for (int i = 0; i < d; ++i) CHECK(b.center[i] % k == 0);
                }
            }
}

TEST_CASE("near blocks of an interior block form the 7x7 centre grid") {
    auto fam = blocks(2, Box{Point{}, 10}, 1);
    int i = fam.index_of_center(Point{});
    auto m = fam.near(i);
    CHECK(m.size() == 49);
    for (int j : m) CHECK(linf(fam.blocks[j].center, Point{}) <= 3);
    auto nb = fam.intersecting(i);
    CHECK(nb.size() == 25);
    // Brute-force cross-check near a corner.
    int c = fam.index_of_center(pt(9, 9));
    auto mc = fam.near(c);
    int count = 0;
    for (const auto& b : fam.blocks)
        if (linf(b.center, pt(9, 9)) <= 3) ++count;
    CHECK(static_cast<int>(mc.size()) == count);
    CHECK(count == 16);
}

TEST_CASE("lattice neighbourhoods") {
    CHECK(neighborhood(3, {Point{}}, 0).size() == 1);
    CHECK(neighborhood(3, {Point{}}, 1).size() == 7);
    CHECK(edge_neighborhood(2, {Point{}}, 1).size() == 4);
    CHECK(neighborhood(2, {Point{}}, 2).size() == 13);
    auto g = build_box_graph(3, 2);
    int o = g.index_of(Point{});
    CHECK(neighborhood(g, {o}, 1).size() == 7);
    CHECK(edge_neighborhood(g, {o}, 1).size() == 6);
}
