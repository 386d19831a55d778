#include <cmath>
#include <sstream>

#include "doctest.h"
#include "ising/exact.hpp"
#include "ising/fk.hpp"

using namespace ising;

namespace {

Point pt(int a, int b) { return Point{a, b, 0, 0}; }
Graph single_edge() { return graph_from_points(2, {pt(0, 0), pt(1, 0)}); }
Graph four_cycle() { return graph_from_points(2, {pt(0, 0), pt(1, 0), pt(0, 1), pt(1, 1)}); }

BondConfig from_mask(int nb, std::uint64_t m) {
    BondConfig w(nb);
    for (int b = 0; b < nb; ++b) w.set(b, (m >> b) & 1);
    return w;
}

void check_within(const Estimate& e, double truth, double k = 4.0) {
    INFO("mean " << e.mean << " truth " << truth << " se " << e.se);
    CHECK(e.se > 0);
    CHECK(std::abs(e.mean - truth) <= k * e.se + 1e-12);
}

}  // namespace

TEST_CASE("cluster counts on degenerate configurations") {
    auto g = build_box_graph(2, 2);
    auto xi = BoundaryPartition::free_bc(g);
    CHECK(clusters(g, BondConfig(g.num_bundles(), false), xi).count == g.num_vertices());
    CHECK(clusters(g, BondConfig(g.num_bundles(), true), xi).count == 1);
    auto e = single_edge();
    auto cm = clusters(e, BondConfig(1, false), BoundaryPartition::wired(e));
    CHECK(cm.count == 1);
    CHECK(cm.connected(0, 1));
}

TEST_CASE("cluster map agrees with breadth-first labelling") {
    auto g = attach_ghost(build_box_graph(2, 3));
    Stream rng(7, 0);
    std::vector<BoundaryPartition> xis{BoundaryPartition::free_bc(g), BoundaryPartition::wired(g)};
    BoundaryPartition two = BoundaryPartition::free_bc(g);
    for (int v = 0; v < g.num_vertices(); ++v)
        if (g.is_boundary(v) && v != g.ghost()) two.cls[v] = g.coord(v)[0] < 0 ? 0 : 1;
    xis.push_back(two);
    for (int it = 0; it < 1000; ++it) {
        BondConfig w(g.num_bundles());
        double q = rng.uniform();
        for (int b = 0; b < g.num_bundles(); ++b) w.set(b, rng.uniform() < q);
        const auto& xi = xis[it % xis.size()];
        auto cm = clusters(g, w, xi);
        auto lab = clusters_bfs(g, w, xi);
        int distinct = 0;
        for (int u = 0; u < g.num_vertices(); ++u) {
            distinct += lab[u] == u;
            for (int v = u + 1; v < g.num_vertices(); v += 7) REQUIRE(cm.connected(u, v) == (lab[u] == lab[v]));
        }
        REQUIRE(cm.count == distinct);
        REQUIRE_FALSE(cm.stale(w));
    }
}

TEST_CASE("heat-bath conditionals equal enumerated conditionals") {
    const double p = 0.55;
    std::vector<Graph> gs{four_cycle(), attach_ghost(four_cycle()), attach_ghost(graph_from_points(2, {pt(0, 0), pt(1, 0), pt(2, 0)}))};
    for (const auto& g : gs) {
        for (auto xi : {BoundaryPartition::free_bc(g), BoundaryPartition::wired(g)}) {
            auto dist = enumerate_fk(g, p, xi);
            FkSampler s(g, p, xi);
            int nb = g.num_bundles();
            for (std::uint64_t m = 0; m < (1ull << nb); ++m)
                for (int e = 0; e < nb; ++e) {
                    std::uint64_t on = m | (1ull << e), off = m & ~(1ull << e);
                    double truth = dist.weight[on] / (dist.weight[on] + dist.weight[off]);
                    REQUIRE(s.open_probability(from_mask(nb, m), e) == doctest::Approx(truth).epsilon(1e-12));
                }
        }
    }
}

TEST_CASE("heat-bath step examples") {
    auto c = four_cycle();
    auto xi = BoundaryPartition::free_bc(c);
    BondConfig w(c.num_bundles(), true);
    w.set(0, false);
    FkSampler s(c, 0.5, xi);
    REQUIRE(s.connected_off(w, 0));
    CHECK(heat_bath_step(c, w, 0.5, xi, 0, 0.49).open(0));
    CHECK_FALSE(heat_bath_step(c, w, 0.5, xi, 0, 0.51).open(0));

    auto e = single_edge();
    auto fx = BoundaryPartition::free_bc(e);
    FkSampler se(e, 0.5, fx);
    CHECK(se.open_probability(BondConfig(1), 0) == doctest::Approx(1.0 / 3));
    CHECK(enumerate_fk(e, 0.5, fx).edge_marginal(0) == doctest::Approx(1.0 / 3));

    auto box = build_box_graph(2, 1);
    BondConfig all(box.num_bundles(), true);
    auto fbox = BoundaryPartition::free_bc(box);
    for (int b = 0; b < box.num_bundles(); ++b)
        for (double u : {0.0, 0.3, 0.999}) CHECK_FALSE(heat_bath_step(box, all, 0.0, fbox, b, u).open(b));
    CHECK_THROWS_AS(heat_bath_step(e, BondConfig(1), 0.5, fx, 0, 1.0), std::invalid_argument);
}

TEST_CASE("generation counter tracks changes") {
    BondConfig w(3);
    auto g0 = w.generation();
    w.set(1, false);
    CHECK(w.generation() == g0);
    w.set(1, true);
    CHECK(w.generation() == g0 + 1);
}

TEST_CASE("heat-bath chain is stationary for the FK measure") {
    auto g = attach_ghost(four_cycle());
    const double p = 0.6;
    std::vector<std::pair<int, int>> pairs{{0, 1}, {0, g.num_bundles() - 1}};
    for (auto xi : {BoundaryPartition::free_bc(g), BoundaryPartition::wired(g)}) {
        auto dist = enumerate_fk(g, p, xi);
        ChainOptions opt;
        opt.burn_in = 200;
        opt.thin = 2;
        opt.samples = 40000;
        opt.seed = 11;
        auto r = run_chain(g, p, xi, ChainKind::HeatBath, opt, pairs);
        for (int b = 0; b < g.num_bundles(); ++b) check_within(r.edge[b], dist.edge_marginal(b));
        for (std::size_t k = 0; k < pairs.size(); ++k) {
            auto [a, b] = pairs[k];
            double truth = dist.event([&](std::uint64_t s) { return ((s >> a) & 1) && ((s >> b) & 1); });
            check_within(r.pair[k], truth);
        }
    }
}

TEST_CASE("random-order sweeps keep the same law") {
    auto g = four_cycle();
    auto xi = BoundaryPartition::free_bc(g);
    auto dist = enumerate_fk(g, 0.5, xi);
    ChainOptions opt;
    opt.burn_in = 100;
    opt.thin = 2;
    opt.samples = 30000;
    opt.random_order = true;
    auto r = run_chain(g, 0.5, xi, ChainKind::HeatBath, opt);
    for (int b = 0; b < g.num_bundles(); ++b) check_within(r.edge[b], dist.edge_marginal(b));
}

TEST_CASE("Edwards-Sokal sweeps") {
    auto box = build_box_graph(2, 1);
    SUBCASE("p = 0 gives closed bonds and unbiased spins") {
        SpinConfig s;
        BondConfig w(box.num_bundles(), true);
        Stream rng(3, 0);
        double m = 0;
        int n = 0;
        for (int t = 0; t < 2000; ++t) {
            rng.set_sweep(t);
            es_sweep(box, s, w, 0.0, BoundaryPartition::free_bc(box), rng);
            CHECK(w.num_open() == 0);
            for (auto x : s) m += x, ++n;
        }
        CHECK(std::abs(m / n) < 4.0 / std::sqrt(n));
    }
    SUBCASE("p = 1 wired gives one plus cluster") {
        SpinConfig s;
        BondConfig w(box.num_bundles(), false);
        Stream rng(3, 0);
        es_sweep(box, s, w, 1.0, BoundaryPartition::wired(box), rng);
        es_sweep(box, s, w, 1.0, BoundaryPartition::wired(box), rng);
        CHECK(w.num_open() == box.num_bundles());
        for (auto x : s) CHECK(x == 1);
        CHECK(clusters(box, w, BoundaryPartition::wired(box)).count == 1);
    }
    SUBCASE("unsupported partitions are rejected") {
        auto xi = BoundaryPartition::free_bc(box);
        xi.cls[0] = 0;
        xi.cls[8] = 1;
        SpinConfig s;
        BondConfig w(box.num_bundles());
        Stream rng(1, 0);
        CHECK_THROWS_AS(es_sweep(box, s, w, 0.5, xi, rng), std::invalid_argument);
        CHECK_FALSE(es_supported(attach_ghost(box), BoundaryPartition::wired(attach_ghost(box))));
    }
}

TEST_CASE("Edwards-Sokal chain matches bond and spin marginals") {
    auto box = build_box_graph(2, 1);
    const double p = 0.6;
    ChainOptions opt;
    opt.burn_in = 100;
    opt.thin = 1;
    opt.samples = 30000;
    opt.seed = 5;
    auto wired = BoundaryPartition::wired(box);
    auto r = run_chain(box, p, wired, ChainKind::EdwardsSokal, opt);
    auto dist = enumerate_fk(box, p, wired);
    for (int b = 0; b < box.num_bundles(); ++b) check_within(r.edge[b], dist.edge_marginal(b));

    auto gp = attach_ghost(build_box_graph(2, 1));
    ModelParams mp;
    mp.beta = beta_from_p(0.4);
    auto r2 = run_chain(gp, 0.4, BoundaryPartition::free_bc(gp), ChainKind::EdwardsSokal, opt);
    auto plus = enumerate_ising(gp, mp, SpinBoundary::Plus);
    for (int v = 0; v < gp.num_lattice_vertices(); ++v) check_within(r2.spin[v], plus.expect({v}));
}

TEST_CASE("monotone pair step") {
    auto e = single_edge();
    auto f = BoundaryPartition::free_bc(e), w = BoundaryPartition::wired(e);
    auto [lo, hi] = monotone_pair_step(e, BondConfig(1), BondConfig(1), 0.5, f, w, 0, 0.4);
    CHECK_FALSE(lo.open(0));
    CHECK(hi.open(0));

    auto box = build_box_graph(2, 2);
    auto fb = BoundaryPartition::free_bc(box), wb = BoundaryPartition::wired(box);
    BondConfig a(box.num_bundles(), true);
    a.set(3, false);
    for (double u : {0.1, 0.5, 0.9}) {
        auto [x, y] = monotone_pair_step(box, a, a, 0.7, fb, fb, 3, u);
        CHECK(x == y);
    }
    BondConfig closed(box.num_bundles()), open(box.num_bundles(), true);
    CHECK_THROWS_AS(monotone_pair_step(box, open, closed, 0.5, fb, wb, 0, 0.5), OrderViolation);
    CHECK_THROWS_AS(monotone_pair_step(box, closed, open, 0.5, wb, fb, 0, 0.5), OrderViolation);
}

TEST_CASE("monotone pair trajectories never cross") {
    auto box = build_box_graph(2, 2);
    FkSampler lo_s(box, 0.5, BoundaryPartition::free_bc(box)), hi_s(box, 0.5, BoundaryPartition::wired(box));
    long violations = 0;
    for (int traj = 0; traj < 1000; ++traj) {
        BondConfig lo(box.num_bundles(), false), hi(box.num_bundles(), true);
        for (int sweep = 0; sweep < 3; ++sweep)
            for (int e = 0; e < box.num_bundles(); ++e) {
                monotone_pair_step(lo_s, hi_s, lo, hi, e, counter_uniform(9, traj, sweep, e));
                violations += lo.open(e) && !hi.open(e);
            }
        REQUIRE(lo.leq(hi));
    }
    CHECK(violations == 0);
}

TEST_CASE("chains replay bit-exactly") {
    auto g = build_box_graph(2, 2);
    ChainOptions opt;
    opt.burn_in = 5;
    opt.thin = 1;
    opt.samples = 50;
    opt.seed = 99;
    auto a = run_chain(g, 0.5, BoundaryPartition::free_bc(g), ChainKind::HeatBath, opt);
    auto b = run_chain(g, 0.5, BoundaryPartition::free_bc(g), ChainKind::HeatBath, opt);
    std::ostringstream sa, sb;
    write_chain_csv(sa, a.trace);
    write_chain_csv(sb, b.trace);
    CHECK(sa.str() == sb.str());
    CHECK(sa.str().rfind("chain,sweep,observable,value\n", 0) == 0);
    opt.seed = 100;
    auto c = run_chain(g, 0.5, BoundaryPartition::free_bc(g), ChainKind::HeatBath, opt);
    std::ostringstream sc;
    write_chain_csv(sc, c.trace);
    CHECK(sa.str() != sc.str());
}

TEST_CASE("parallel replicas fill every slot") {
    std::vector<int> out(37, -1);
    parallel_replicas(37, [&](int i) { out[i] = i * i; }, 4);
    for (int i = 0; i < 37; ++i) CHECK(out[i] == i * i);
    CHECK_THROWS(parallel_replicas(5, [](int i) { if (i == 3) throw std::runtime_error("x"); }, 2));
}
