#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "ising/exact.hpp"
#include "ising/surgery.hpp"

using namespace ising;

namespace {

Point pt(int a, int b, int c = 0) { return Point{a, b, c, 0}; }

// Unit current from v straight along `axis` in direction `dir` to the face, then into the ghost.
void to_ghost(GluingInstance& inst, Current& n, Point p, int axis, int dir) {
    const BoxLattice& lat = *inst.lattice;
    const Graph& g = *inst.graph;
    while (true) {
        Point q = p;
        q[axis] += dir;
        int u = lat.vertex(p), w = lat.vertex(q);
        if (w < 0) {
            n.add(g.find_bundle(u, g.ghost()), 1);
            return;
        }
        n.add(g.find_bundle(u, w), 1);
        p = q;
    }
}

// Two vertical rods: C(S) from x downwards, C_{n1}(y) from y upwards.
GluingInstance rods(Point x, Point y, int N = 6, int n = 1) {
    GluingInstance inst = make_instance(3, N, n, 0.2, x, y);
    to_ghost(inst, inst.n1, x, 2, -1);
    to_ghost(inst, inst.n1, y, 2, +1);
    inst.S = {inst.x};
    return inst;
}

}  // namespace

TEST_CASE("sources and clusters") {
    GluingInstance inst = make_instance(3, 2, 1, 0.3, pt(0, 0, 0), pt(1, 0, 0));
    const Graph& g = *inst.graph;
    Current zero(g);
    CHECK(sources(zero).empty());
    std::vector<int> s{inst.x, g.ghost(), inst.y};
    CHECK(cluster_of(zero, s) == std::vector<int>{std::min(inst.x, inst.y), std::max(inst.x, inst.y)});

    Current three(g);
    three.set(g.find_bundle(inst.x, inst.y), 3);
    CHECK(three.sources() == std::vector<int>{std::min(inst.x, inst.y), std::max(inst.x, inst.y)});
    CHECK(three.degree(inst.x) == 3);
    three.add(g.find_bundle(inst.x, inst.y), 1);
    CHECK(three.sources().empty());
    CHECK_THROWS(three.set(0, -1));

    // The ghost is never used to join clusters.
    GluingInstance ends = rods(pt(0, 0, 0), pt(1, 0, 0), 2);
    auto cx = cluster_of(ends.n1, {ends.x});
    CHECK(std::find(cx.begin(), cx.end(), ends.y) == cx.end());
    CHECK(ends.n1.sources().size() == 2);
    CHECK_FALSE(ends.n1.ghost_odd());
}

TEST_CASE("multiplicity-two ghost bundle carrying one unit") {
    Graph g = attach_ghost(graph_from_points(2, {Point{0, 0, 0, 0}, Point{1, 0, 0, 0}, Point{0, 1, 0, 0}}));
    int corner = g.index_of(Point{0, 0, 0, 0});
    int b = g.find_bundle(corner, g.ghost());
    REQUIRE(g.bundle(b).mult == 2);
    Current n(g);
    n.set(b, 1);
    CHECK(n.sources() == std::vector<int>{corner});
    CHECK(n.ghost_odd());
    // The trace enumeration with lattice sources {corner} contains this odd ghost trace.
    auto dist = enumerate_traces(g, 0.4, {corner});
    std::uint64_t code = static_cast<std::uint64_t>(Trace::Odd) << (2 * b);
    auto it = std::find(dist.states.begin(), dist.states.end(), code);
    REQUIRE(it != dist.states.end());
    CHECK(dist.weight[it - dist.states.begin()] == doctest::Approx(std::sinh(0.8)));
    auto none = enumerate_traces(g, 0.4, {});
    CHECK(std::find(none.states.begin(), none.states.end(), code) == none.states.end());
}

TEST_CASE("event counts") {
    GluingInstance inst = make_instance(3, 8, 1, 0.2, pt(-8, 5, 5), pt(0, 0, 0));
    auto grid = blocks(3, inst.lattice->box(), 1);
    auto none = detect_events(inst.n1, inst.n2, inst.x, inst.y, grid);
    CHECK(none.c_xy + none.c_yx + none.b_xy + none.b_yx == 0);
    CHECK_FALSE((none.C_xy() || none.C_yx() || none.B_xy() || none.B_yx()));

    // n1: x straight into the ghost, y along +e_1 to the face and into the ghost.
    const Graph& g = *inst.graph;
    inst.n1.set(g.find_bundle(inst.x, g.ghost()), 1);
    to_ghost(inst, inst.n1, pt(0, 0, 0), 0, +1);
    auto ev = detect_events(inst.n1, inst.n2, inst.x, inst.y, grid);
    // Hand count: blocks holding one of (1..7, 0, 0), the path vertices with two path neighbours.
    int expect = 0;
    for (const Box& b : grid.blocks) {
        bool hit = false;
        for (int t = 1; t <= 7; ++t) hit = hit || b.contains(pt(t, 0, 0), 3);
        expect += hit && !b.contains(pt(-8, 5, 5), 3);
    }
    CHECK(expect == 72);
    CHECK(ev.c_xy == expect);
    CHECK(ev.b_xy == 0);
    CHECK(ev.c_yx == 0);
    CHECK(ev.b_yx == 0);
    CHECK(ev.threshold == 2.0);
    CHECK(ev.C_xy());

    EventCounts t;
    t.threshold = 10.0 / 4.0;
    t.c_xy = 2;
    CHECK_FALSE(t.C_xy());
    t.c_xy = 3;
    CHECK(t.C_xy());
    t.c_xy = 4;
    CHECK(t.C_xy());
}

TEST_CASE("gluing path between adjacent clusters") {
    GluingInstance inst = rods(pt(0, 0, 0), pt(1, 0, 0));
    GluingContext ctx(inst);
    Box b{pt(1, 0, 1), 1};
    REQUIRE(ctx.admissible(b));
    PathPi pi = find_pi(ctx, b);
    CHECK(pi.k() == 1);
    CHECK(pi.v == std::vector<int>{inst.x, inst.y});
    CHECK(check_pi(ctx, pi).ok());
    CHECK(std::find(pi.s_set.begin(), pi.s_set.end(), inst.y) != pi.s_set.end());
    for (int t : pi.t_set) CHECK_FALSE(ctx.in_s(t));
}

TEST_CASE("straight gluing path when the clusters are far apart") {
    GluingInstance inst = rods(pt(-2, 0, 0), pt(2, 0, 0), 6, 2);
    GluingContext ctx(inst);
    Box b{pt(0, 0, 0), 2};
    PathPi pi = find_pi(ctx, b);
    CHECK(pi.strategy == "shortest");
    REQUIRE(pi.k() == 4);
    for (int i = 0; i <= 4; ++i) CHECK(inst.lattice->point(pi.v[i]) == pt(-2 + i, 0, 0));
    PiCheck c = check_pi(ctx, pi);
    CHECK(c.ok());

    // Each bullet fails on its own when the path is spoiled.
    PathPi bent = pi;
    bent.v[2] = inst.lattice->vertex(pt(0, 1, 0));
    CHECK_FALSE(check_pi(ctx, bent).shortest);
    PathPi longer = pi;
    longer.v.insert(longer.v.begin(), inst.lattice->vertex(pt(-3, 0, 0)));
    PiCheck lc = check_pi(ctx, longer);
    CHECK_FALSE(lc.start);
    PathPi early = pi;
    early.v.pop_back();
    CHECK_FALSE(check_pi(ctx, early).end);
}

TEST_CASE("gluing path preconditions") {
    GluingInstance inst = rods(pt(0, 0, 0), pt(1, 0, 0));
    inst.S = {inst.x, inst.y};
    GluingContext ctx(inst);
    CHECK_THROWS_AS(find_pi(ctx, Box{pt(1, 0, 1), 1}), PreconditionError);

    GluingInstance ok = rods(pt(0, 0, 0), pt(1, 0, 0));
    GluingContext okc(ok);
    CHECK_THROWS_AS(find_pi(okc, Box{pt(-3, -3, -3), 1}), PreconditionError);

    GluingInstance flat = make_instance(2, 4, 1, 0.2, Point{0, 0, 0, 0}, Point{1, 0, 0, 0});
    flat.S = {flat.x};
    GluingContext fc(flat);
    CHECK_THROWS_AS(find_pi(fc, Box{Point{}, 1}), PreconditionError);
}

TEST_CASE("surgery with an empty family is the identity") {
    GluingInstance inst = rods(pt(-2, 0, 0), pt(2, 0, 0));
    auto cert = surgery(inst);
    CHECK(cert.ok());
    CHECK(cert.n1p == inst.n1);
    CHECK(cert.n2p == inst.n2);
    CHECK(cert.modified.empty());
    CHECK(weight_ratio(cert.n1, cert.n2, cert.n1p, cert.n2p, cert.modified, 0.2) == 1.0);
    CHECK(ratio_bound(cert.n1p, cert.n2p, cert.modified, 0.2) == 1.0);
}

TEST_CASE("surgery along a single edge") {
    GluingInstance inst = rods(pt(0, 0, 0), pt(1, 0, 0));
    inst.Z = {Box{pt(1, 0, 1), 1}};
    auto cert = surgery(inst);
    REQUIRE(cert.ok());
    const Graph& g = *inst.graph;
    CHECK(cert.n2p[g.find_bundle(inst.x, inst.y)] == 2);
    for (const auto& inc : g.adj(inst.y))
        if (inc.nbr != g.ghost()) CHECK(cert.n2p[inc.bundle] == 2);
    CHECK(cert.n1p == inst.n1);
    CHECK(cert.paths.front().end() == inst.y);
    CHECK(cert.d);
}

TEST_CASE("surgery along a straight path") {
    GluingInstance inst = rods(pt(-2, 0, 0), pt(2, 0, 0), 6, 2);
    // A loop of n2 through the path interior and a stray n1 loop next to it.
    const Graph& g = *inst.graph;
    const BoxLattice& lat = *inst.lattice;
    auto e = [&](Point a, Point b) { return g.find_bundle(lat.vertex(a), lat.vertex(b)); };
    for (auto [a, b] : {std::pair{pt(0, 0, 0), pt(0, 1, 0)}, {pt(0, 1, 0), pt(1, 1, 0)}, {pt(1, 1, 0), pt(1, 0, 0)},
                        {pt(1, 0, 0), pt(0, 0, 0)}})
        inst.n2.add(e(a, b), 1);
    for (auto [a, b] : {std::pair{pt(0, 0, 0), pt(0, -1, 0)}, {pt(0, -1, 0), pt(0, -1, 1)},
                        {pt(0, -1, 1), pt(0, 0, 1)}, {pt(0, 0, 1), pt(0, 0, 0)}})
        inst.n1.add(e(a, b), 3);
    inst.Z = {Box{pt(0, 0, 0), 2}};
    auto cert = surgery(inst);
    REQUIRE(cert.ok());
    const auto& pi = cert.paths.front();
    CHECK(pi.k() == 4);
    for (int i = 1; i < pi.k(); ++i)
        for (const auto& inc : g.adj(pi.v[i])) {
            CHECK(cert.n1p[inc.bundle] == 0);
            bool along = std::find(pi.v.begin(), pi.v.end(), inc.nbr) != pi.v.end();
            if (!along) CHECK(cert.n2p[inc.bundle] == 0);
        }
    CHECK_FALSE(cert.m1.zero());
    CHECK_FALSE(cert.m2.zero());
    double r = weight_ratio(cert.n1, cert.n2, cert.n1p, cert.n2p, cert.modified, inst.beta);
    CHECK(r <= ratio_bound(cert.n1p, cert.n2p, cert.modified, inst.beta));
}

TEST_CASE("surgery rejects inadmissible input") {
    GluingInstance base = rods(pt(0, 0, 0), pt(1, 0, 0));
    base.Z = {Box{pt(1, 0, 1), 1}};
    const Graph& g = *base.graph;

    auto ghosted = base;
    ghosted.n2.set(g.find_bundle(ghosted.lattice->vertex(pt(0, 0, -6)), g.ghost()), 2);
    CHECK_THROWS_AS(surgery(ghosted), PreconditionError);

    auto sourced = base;
    sourced.n2.set(g.find_bundle(base.x, base.y), 1);
    CHECK_THROWS_AS(surgery(sourced), PreconditionError);

    auto touching = base;
    touching.S = {base.x, base.lattice->vertex(pt(1, 0, 2))};
    CHECK_THROWS_AS(surgery(touching), PreconditionError);

    auto crowded = base;
    crowded.Z.push_back(Box{pt(1, 0, 2), 1});
    CHECK_THROWS_AS(surgery(crowded), PreconditionError);
}

TEST_CASE("forged certificates are caught") {
    GluingInstance inst = rods(pt(-2, 0, 0), pt(2, 0, 0), 6, 2);
    inst.Z = {Box{pt(0, 0, 0), 2}};
    GluingContext ctx(inst);
    auto cert = surgery(inst);
    REQUIRE(cert.ok());

    auto far = cert;
    int corner = inst.lattice->vertex(pt(5, 5, 5));
    far.n2p.add(inst.graph->find_bundle(corner, inst.lattice->vertex(pt(5, 5, 4))), 3);
    verify_certificate(ctx, far);
    CHECK_FALSE(far.a);
    CHECK_FALSE(far.b);
    CHECK_FALSE(far.c);

    auto wrong_end = cert;
    wrong_end.paths.front().v.push_back(inst.lattice->vertex(pt(2, 0, 1)));
    verify_certificate(ctx, wrong_end);
    CHECK_FALSE(wrong_end.d);
    CHECK_FALSE(wrong_end.paths_ok);

    auto cut = cert;
    const auto& pi = cert.paths.front();
    cut.n2p.set(inst.graph->find_bundle(pi.v[1], pi.v[2]), 0);
    verify_certificate(ctx, cut);
    CHECK_FALSE(cut.d);
}

TEST_CASE("weight ratios and their bounds") {
    Graph g = build_box_graph(2, 1);
    Current zero(g), two(g);
    two.set(0, 2);
    CHECK(weight_ratio(zero, zero, zero, zero, {}, 1.0) == 1.0);
    CHECK(ratio_bound(zero, zero, {}, 1.0) == 1.0);
    CHECK(weight_ratio(zero, zero, two, zero, {0}, 1.0) == doctest::Approx(2.0));
    const double e = std::exp(1.0);
    // m = 2: 2(e - 2) + (2 + 2 + 1); m = 0: e + 1.
    CHECK(edge_ratio_bound(2, 1.0) == doctest::Approx(2 * (e - 2) + 5));
    CHECK(edge_ratio_bound(0, 1.0) == doctest::Approx(e + 1));
    CHECK(ratio_bound(two, zero, {0}, 1.0) == doctest::Approx((2 * (e - 2) + 5) * (e + 1)));
    CHECK(ratio_bound(two, zero, {0}, 1.0) >= 2.0);
    // m = 5 > 2 only allows larger originals.
    CHECK(edge_ratio_bound(5, 0.5) == doctest::Approx(1 + 0.5 / 6 + 0.25 / 42 + 0.125 / 336).epsilon(1e-4));
    CHECK_THROWS_AS(weight_ratio(zero, zero, two, zero, {}, 1.0), PreconditionError);
}

TEST_CASE("many-to-many counting bound") {
    MvmpInstance id;
    id.mu = {0.1, 0.2, 0.3, 0.4};
    id.A = id.B = {0, 1, 3};
    id.R = {{0, 0}, {1, 1}, {3, 3}};
    auto r = mvmp_check(id);
    CHECK(r.K == 1);
    CHECK(r.k == doctest::Approx(1.0));
    CHECK(r.mu_a == doctest::Approx(r.bound));
    CHECK(r.holds);

    MvmpInstance all;
    all.mu = {0.05, 0.15, 0.3, 0.2, 0.3};
    all.A = {0, 1};
    all.B = {2, 3, 4};
    for (int s : all.A)
        for (int t : all.B) all.R.push_back({s, t});
    auto c = mvmp_check(all);
    CHECK(c.K == 3);
    CHECK(c.k == doctest::Approx(0.2 / 0.2));
    CHECK(c.bound == doctest::Approx(1.0 / 3 * 0.8));
    CHECK(c.holds);

    MvmpInstance empty = all;
    empty.A.push_back(2);
    auto v = mvmp_check(empty);
    CHECK(v.vacuous);
    CHECK(v.K == 0);

    MvmpInstance bad = all;
    bad.R.push_back({3, 2});
    CHECK_THROWS_AS(mvmp_check(bad), PreconditionError);

    for (int i = 0; i < 300; ++i) {
        auto inst = random_relation(10 + (i * 37) % 3000, 11, i);
        auto res = mvmp_check(inst);
        REQUIRE_FALSE(res.vacuous);
        REQUIRE(res.holds);
    }
}

TEST_CASE("random admissible instances pass the certificate") {
    InstanceGenerator gen(7);
    std::vector<SurgeryRow> rows;
    std::set<std::string> strategies;
    for (int i = 0; i < 150; ++i) {
        GluingInstance inst = gen.next();
        auto cert = surgery(inst);
        REQUIRE(cert.ok());
        for (const auto& pi : cert.paths) {
            strategies.insert(pi.strategy);
            CHECK(pi.k() <= 6 * 9 * inst.n);
        }
        // Sources after each stage.
        CHECK(cert.n1p.sources() == inst.n1.sources());
        CHECK(cert.n2p.sources().empty());
        rows.push_back(surgery_row(i, inst, cert));
        REQUIRE(rows.back().ratio_ok());
    }
    CHECK(strategies.count("shortest"));
    CHECK(gen.stats().samples >= 150);
    std::ostringstream os;
    write_surgery_csv(os, rows);
    CHECK(os.str().rfind("id,d,N,n,beta,blocks,strategies", 0) == 0);
}

TEST_CASE("several strongly disjoint blocks") {
    // C(S): an n2 ring through the row (t, 0, 0). C_{n1}(y): the row (t, 2, 0) and a rod into the ghost.
    GluingInstance inst = make_instance(3, 12, 1, 0.2, pt(-11, 0, 0), pt(11, 2, 0));
    const Graph& g = *inst.graph;
    const BoxLattice& lat = *inst.lattice;
    auto e = [&](Point a, Point b) { return g.find_bundle(lat.vertex(a), lat.vertex(b)); };
    for (int t = -11; t < 11; ++t) {
        inst.n2.add(e(pt(t, 0, 0), pt(t + 1, 0, 0)), 1);
        inst.n2.add(e(pt(t, 0, 1), pt(t + 1, 0, 1)), 1);
        inst.n1.add(e(pt(t, 2, 0), pt(t + 1, 2, 0)), 1);
    }
    inst.n2.add(e(pt(-11, 0, 0), pt(-11, 0, 1)), 1);
    inst.n2.add(e(pt(11, 0, 0), pt(11, 0, 1)), 1);
    to_ghost(inst, inst.n1, pt(-11, 0, 0), 2, -1);
    to_ghost(inst, inst.n1, pt(-11, 2, 0), 2, +1);
    inst.S = {inst.x};
    GluingContext ctx(inst);
    auto V = maximal_disjoint_blocks(ctx, blocks(3, lat.box(), 1));
    REQUIRE(V.size() >= 2);
    for (std::size_t i = 0; i < V.size(); ++i) {
        CHECK(ctx.admissible(V[i]));
        for (std::size_t j = i + 1; j < V.size(); ++j) CHECK(strongly_disjoint(V[i], V[j], 1, 3));
    }
    for (int m = 1; m <= static_cast<int>(V.size()); ++m) CHECK(check_endpoint_injectivity(ctx, V, m).ok());
    inst.Z = V;
    auto cert = surgery(inst);
    REQUIRE(cert.ok());
    CHECK(cert.paths.size() == V.size());
    std::set<int> ends;
    for (const auto& pi : cert.paths) ends.insert(pi.end());
    CHECK(ends.size() == V.size());
    double r = log_weight_ratio(cert.n1, cert.n2, cert.n1p, cert.n2p, cert.modified, inst.beta);
    CHECK(r <= log_ratio_bound(cert.n1p, cert.n2p, cert.modified, inst.beta));

    // Sampled instances on larger boxes.
    InstanceOptions opt;
    opt.min_N = opt.max_N = 12;
    opt.per_chain = 5;
    InstanceGenerator gen(3, opt);
    for (int i = 0; i < 10; ++i) {
        GluingInstance s = gen.next();
        REQUIRE(surgery(s).ok());
        GluingContext sc(s);
        auto W = maximal_disjoint_blocks(sc, blocks(3, s.lattice->box(), s.n));
        CHECK(check_endpoint_injectivity(sc, W, 1).ok());
    }
}

TEST_CASE("instance fixtures round-trip") {
    InstanceGenerator gen(19);
    GluingInstance inst = gen.next();
    std::stringstream ss;
    write_instance(ss, inst);
    GluingInstance back = read_instance(ss);
    CHECK(back.n1 == inst.n1);
    CHECK(back.n2 == inst.n2);
    CHECK(back.S == inst.S);
    CHECK(back.x == inst.x);
    CHECK(back.beta == inst.beta);
    REQUIRE(back.Z.size() == inst.Z.size());
    CHECK(surgery(back).n2p == surgery(inst).n2p);

    InstanceGenerator again(19);
    CHECK(dump_instance(again.next()) == dump_instance(inst));
    std::istringstream junk("gluing 3 4 1 0.2\nx 0 0\n");
    CHECK_THROWS(read_instance(junk));
}
