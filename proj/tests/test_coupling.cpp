#include <set>
#include <sstream>

#include "doctest.h"
#include "ising/coupling.hpp"
#include "ising/exact.hpp"
#include "ising/renorm.hpp"

using namespace ising;

namespace {

CouplingOptions quick(int d = 2) {
    CouplingOptions o;
    o.d = d;
    o.burn_in = 50;
    return o;
}

std::set<int> union_of_blocks(const CouplingResult& r, const std::vector<int>& ids) {
    std::set<int> out;
    for (int b : ids)
        for (int e : r.lattice->edges_in(r.family->blocks[b])) out.insert(e);
    return out;
}

}  // namespace

TEST_CASE("named boundary partitions") {
    Graph g = build_box_graph(2, 3);
    CHECK(boundary_by_name(g, "free").is_free());
    CHECK(boundary_by_name(g, "wired").num_classes() == 1);
    CHECK(boundary_by_name(g, "halves").num_classes() == 2);
    auto alt = boundary_by_name(g, "alternating");
    CHECK(alt.num_classes() == 2);
    CHECK(alt.refines(BoundaryPartition::wired(g)));
    CHECK_THROWS_AS(boundary_by_name(g, "striped"), std::invalid_argument);
}

TEST_CASE("all-open configurations stop after the first frontier pass") {
    for (int n : {8, 16}) {
        auto r = run_mixing_coupling(n, 4, 1.0, "free", 3, quick());
        CHECK(r.lo.num_open() == r.lo.size());
        CHECK(r.trace.T() == static_cast<int>(r.trace.initial_frontier.size()));
        for (const auto& st : r.trace.steps) CHECK(st.very_good);
        auto expect = union_of_blocks(r, r.trace.initial_frontier);
        CHECK(r.trace.c_size() == static_cast<int>(expect.size()));
        CHECK(verify_coupling_props(r).ok());
    }
    // Boundary blocks reach Λ_{n/2} only when n <= 4k.
    CHECK(reaches_half(run_mixing_coupling(16, 4, 1.0, "free", 3, quick())));
    CHECK_FALSE(reaches_half(run_mixing_coupling(32, 4, 1.0, "free", 3, quick())));
    auto est = estimate_reach(32, 4, 1.0, "halves", 20, 5, quick(), 10);
    CHECK(est.reach.mean() == 0.0);
    CHECK(est.reach.n == 20);
}

TEST_CASE("initial frontier is the blocks touching the boundary") {
    auto r = run_mixing_coupling(12, 4, 0.6, "free", 1, quick());
    for (int b = 0; b < static_cast<int>(r.family->blocks.size()); ++b) {
        const Box& bx = r.family->blocks[b];
        bool touches = false;
        for (const Point& q : bx.points(2))
            touches = touches || std::max(std::abs(q[0]), std::abs(q[1])) == 12;
        bool listed = std::find(r.trace.initial_frontier.begin(), r.trace.initial_frontier.end(), b) !=
                      r.trace.initial_frontier.end();
        CHECK(touches == listed);
    }
    CHECK(r.trace.shell.empty());
}

TEST_CASE("wired boundary gives identical coordinates") {
    MixingCoupler c(8, 2, 0.6, "wired", 9, 0, quick());
    for (int i = 0; i < 50; ++i) {
        auto r = c.next();
        REQUIRE(r.lo == r.hi);
        auto rep = verify_coupling_props(r);
        REQUIRE(rep.ok());
        for (const auto& st : r.trace.steps) {
            bool good = classify_block(*r.lattice, r.lo, r.family->blocks[st.block], 2) == BlockState::Good;
            CHECK(st.very_good == good);
        }
    }
}

TEST_CASE("every run satisfies the three coupling properties") {
    int with_remainder = 0;
    for (std::string xi : {"free", "halves", "alternating"})
        for (double p : {0.5, 0.7, 0.9}) {
            MixingCoupler c(8, 2, p, xi, 21, 0, quick());
            for (int i = 0; i < 150; ++i) {
                auto r = c.next();
                auto rep = verify_coupling_props(r);
                INFO(xi << " p=" << p << " run " << i << ": " << rep.detail);
                REQUIRE(rep.ok());
                with_remainder += rep.boundary_checks > 0 ? 1 : 0;
            }
        }
    CHECK(with_remainder > 100);
}

TEST_CASE("blocks that do not divide the box leave a presampled shell") {
    MixingCoupler c(7, 2, 0.7, "free", 4, 0, quick());
    for (int i = 0; i < 40; ++i) {
        auto r = c.next();
        CHECK(r.trace.covered == 6);
        CHECK_FALSE(r.trace.shell.empty());
        REQUIRE(verify_coupling_props(r).ok());
    }
    CHECK_THROWS_AS(MixingCoupler(3, 4, 0.5, "free", 1), GeometryError);
}

TEST_CASE("forged sampled set is caught") {
    MixingCoupler c(8, 2, 0.6, "free", 5, 0, quick());
    for (int i = 0; i < 200; ++i) {
        auto r = c.next();
        if (r.lo == r.hi) continue;
        CHECK(verify_coupling_props(r).ok());
        auto forged = r;
        std::fill(forged.trace.in_c.begin(), forged.trace.in_c.end(), 0);
        auto rep = verify_coupling_props(forged);
        CHECK_FALSE(rep.equal_off_c());
        CHECK_FALSE(rep.trace_ok);
        auto swapped = r;
        std::swap(swapped.lo, swapped.hi);
        CHECK_FALSE(verify_coupling_props(swapped).ordered());
        return;
    }
    FAIL("no run with distinct coordinates");
}

TEST_CASE("edge marginals on Λ_2 match the exact measures") {
    const double p = 0.6;
    const long runs = 100000;
    CouplingOptions opt = quick();
    MixingCoupler c(2, 1, p, "free", 13, 0, opt);
    const Graph& g = c.graph();
    const int nb = g.num_bundles();
    std::vector<std::vector<double>> lo(nb), hi(nb);
    for (long i = 0; i < runs; ++i) {
        auto r = c.next();
        for (int e = 0; e < nb; ++e) {
            lo[e].push_back(r.lo.open(e));
            hi[e].push_back(r.hi.open(e));
        }
    }
    auto free = BoundaryPartition::free_bc(g), wired = BoundaryPartition::wired(g);
    double zf = fk_frontier_sum(g, {p}, free, {})[0], zw = fk_frontier_sum(g, {p}, wired, {})[0];
    for (int e = 0; e < nb; ++e) {
        FkQuery q;
        q.forced_open = {e};
        double ef = fk_frontier_sum(g, {p}, free, q)[0] / zf;
        double ew = fk_frontier_sum(g, {p}, wired, q)[0] / zw;
        Estimate a = batch_means(lo[e], 50), b = batch_means(hi[e], 50);
        INFO("bundle " << e);
        CHECK(std::abs(a.mean - ef) <= 4 * a.se);
        CHECK(std::abs(b.mean - ew) <= 4 * b.se);
    }
}

TEST_CASE("upper coordinate density matches a direct wired sampler") {
    const double p = 0.8;
    CouplingOptions opt = quick();
    opt.burn_in = 200;
    MixingCoupler c(16, 4, p, "free", 31, 0, opt);
    std::vector<double> dens;
    for (int i = 0; i < 10000; ++i) {
        auto r = c.next();
        dens.push_back(static_cast<double>(r.hi.num_open()) / r.hi.size());
    }
    Estimate coupled = batch_means(dens, 50);
    Graph g = build_box_graph(2, 16);
    ChainOptions co;
    co.burn_in = 200;
    co.thin = 2;
    co.samples = 10000;
    co.seed = 77;
    auto direct = run_chain(g, p, BoundaryPartition::wired(g), ChainKind::EdwardsSokal, co);
    std::vector<double> ddens;
    for (const auto& rec : direct.trace)
        if (rec.observable == "open_density") ddens.push_back(rec.value);
    Estimate d = batch_means(ddens, 50);
    CHECK(std::abs(coupled.mean - d.mean) <= 4 * std::hypot(coupled.se, d.se));
}

TEST_CASE("bad-block chains") {
    MixingCoupler c(16, 2, 0.55, "free", 8, 0, quick());
    for (int i = 0; i < 20; ++i) {
        auto r = c.next();
        int bad = 0;
        for (const auto& st : r.trace.steps) bad += st.very_good ? 0 : 1;
        int s = bad_chain_length(r);
        CHECK(s <= bad);
        CHECK((bad == 0) == (s == 0));
    }
}

TEST_CASE("coupling runs replay bit-exactly") {
    auto a = run_mixing_coupling(8, 2, 0.7, "halves", 42, quick());
    auto b = run_mixing_coupling(8, 2, 0.7, "halves", 42, quick());
    CHECK(a.lo == b.lo);
    CHECK(a.hi == b.hi);
    CHECK(a.trace.in_c == b.trace.in_c);
    REQUIRE(a.trace.T() == b.trace.T());
    for (int t = 0; t < a.trace.T(); ++t) CHECK(a.trace.steps[t].sampled == b.trace.steps[t].sampled);
    std::ostringstream os;
    write_coupling_csv(os, {a, b});
    CHECK(os.str().rfind("n,k,p,xi,T,c_size,reach", 0) == 0);
}

// ---------------------------------------------------------------- annulus

TEST_CASE("annulus shell radii") {
    CHECK(annulus_radii(16, 2) == std::vector<int>{8, 12, 16});
    CHECK(annulus_radii(8, 2) == std::vector<int>{4, 8});
    CHECK(annulus_radii(24, 2) == std::vector<int>{12, 16, 20, 24});
    CHECK(annulus_radii(10, 2) == std::vector<int>{5, 8, 10});
    CHECK_THROWS_AS(annulus_radii(1, 2), GeometryError);
}

TEST_CASE("annulus coupling at degenerate p") {
    auto one = run_annulus_coupling(8, 1, 1.0, 2, quick(2));
    CHECK(one.lo == one.hi);
    for (const auto& sh : one.trace.shells) {
        CHECK(sh.g);
        CHECK(sh.h);
        CHECK(sh.d.empty());
    }
    CHECK(check_annulus_run(one).ok());

    auto zero = run_annulus_coupling(8, 1, 0.0, 2, quick(2));
    CHECK(zero.lo.num_open() == 0);
    REQUIRE_FALSE(zero.trace.shells.empty());
    CHECK(zero.trace.shells.front().bad_blocks > 0);
    CHECK_FALSE(zero.trace.shells.front().d.empty());
    CHECK(check_annulus_run(zero).ok());
}

TEST_CASE("annulus mechanism and measurability") {
    for (int d : {2, 3}) {
        CouplingOptions opt = quick(d);
        AnnulusCoupler c(d, 8, 1, d == 2 ? 0.65 : 0.45, 3, 0, opt);
        std::vector<AnnulusResult> runs;
        for (int i = 0; i < 60; ++i) {
            runs.push_back(c.next());
            auto chk = check_annulus_run(runs.back());
            REQUIRE(chk.ordered);
            REQUIRE(chk.gh_failures == 0);
            REQUIRE(chk.measurable_failures == 0);
            for (const auto& sh : runs.back().trace.shells) {
                std::set<int> both(sh.d.begin(), sh.d.end());
                for (int e : sh.d_rest) CHECK(both.insert(e).second);
            }
        }
        auto rep = measure_claims(runs);
        CHECK(rep.runs == 60);
        CHECK(rep.gh_failures == 0);
        CHECK(rep.measurable);
        CHECK(rep.no_g.n == 60);
        std::ostringstream os;
        write_annulus_csv(os, runs);
        CHECK(os.str().rfind("n,k,p,shells,merged_at,g_flags,h_flags", 0) == 0);
    }
}

TEST_CASE("annulus runs replay bit-exactly") {
    auto a = run_annulus_coupling(8, 1, 0.6, 11, quick(2));
    auto b = run_annulus_coupling(8, 1, 0.6, 11, quick(2));
    CHECK(a.lo == b.lo);
    CHECK(a.hi == b.hi);
    CHECK(a.trace.merged_at == b.trace.merged_at);
}
