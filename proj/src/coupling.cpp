#include "ising/coupling.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "ising/output.hpp"
#include "ising/renorm.hpp"

namespace ising {

BoundaryPartition boundary_by_name(const Graph& g, const std::string& name) {
    if (name == "free") return BoundaryPartition::free_bc(g);
    if (name == "wired") return BoundaryPartition::wired(g);
    BoundaryPartition xi = BoundaryPartition::free_bc(g);
    for (int v = 0; v < g.num_vertices(); ++v) {
        if (!g.is_boundary(v) || v == g.ghost()) continue;
        const Point& p = g.coord(v);
        if (name == "halves") {
            xi.cls[v] = p[0] < 0 ? 0 : 1;
        } else if (name == "alternating") {
            int s = 0;
            for (int i = 0; i < g.dim(); ++i) s += p[i];
            xi.cls[v] = (s % 2 + 2) % 2;
        } else {
            throw std::invalid_argument("unknown boundary condition '" + name + "'");
        }
    }
    return xi;
}

// ---------------------------------------------------------------- pair chain

PairChain::PairChain(const Graph& g, double p, BoundaryPartition xi_lo, BoundaryPartition xi_hi, std::uint64_t seed,
                     std::uint64_t chain, std::vector<char> hi_pinned)
    : lo(g.num_bundles(), false),
      hi(g.num_bundles(), true),
      g_(&g),
      lo_ctx_(g, p, std::move(xi_lo)),
      hi_ctx_(g, p, std::move(xi_hi)),
      pinned_(std::move(hi_pinned)),
      seed_(seed),
      chain_(chain) {
    if (!lo_ctx_.xi().refines(hi_ctx_.xi())) throw OrderViolation("lower boundary partition does not refine the upper one");
    if (pinned_.empty()) pinned_.assign(g.num_bundles(), 0);
}

void PairChain::sweep(const std::vector<char>* frozen) {
    const std::uint64_t s = sweeps_++;
    for (int e = 0; e < g_->num_bundles(); ++e) {
        if (frozen && (*frozen)[e]) continue;
        double u = counter_uniform(seed_, chain_, s, e);
        if (pinned_[e])
            lo_ctx_.heat_bath_step(lo, e, u);
        else
            monotone_pair_step(lo_ctx_, hi_ctx_, lo, hi, e, u);
    }
    assert(lo.leq(hi));
}

void PairChain::resample_identically(const std::vector<int>& edges, int sweeps) {
    for (int i = 0; i < sweeps; ++i) {
        const std::uint64_t s = sweeps_++;
        for (int e : edges) lo_ctx_.heat_bath_step(lo, e, counter_uniform(seed_, chain_ ^ 0x1f83d9abfb41bd6bull, s, e));
    }
    for (int e : edges) hi.set(e, lo.open(e));
    assert(lo.leq(hi));
}

namespace {

BondConfig masked(const BondConfig& w, const std::vector<char>& keep) {
    BondConfig out(w.size(), false);
    for (int e = 0; e < w.size(); ++e)
        if (keep[e] && w.open(e)) out.set(e, true);
    return out;
}

// Connections among endpoints of bundles outside `revealed` induced by the revealed parts of
// lo and hi (boundary classes included) coincide. Returns the number of vertices compared, or
// -1 on disagreement.
long induced_agreement(const Graph& g, const BondConfig& lo, const BoundaryPartition& xi_lo, const BondConfig& hi,
                       const BoundaryPartition& xi_hi, const std::vector<char>& revealed) {
    ClusterMap clo = clusters(g, masked(lo, revealed), xi_lo);
    ClusterMap chi = clusters(g, masked(hi, revealed), xi_hi);
    std::unordered_map<int, int> hi_to_lo, lo_to_hi;
    std::vector<char> seen(g.num_vertices(), 0);
    long checked = 0;
    for (int e = 0; e < g.num_bundles(); ++e) {
        if (revealed[e]) continue;
        for (int v : {g.bundle(e).u, g.bundle(e).v}) {
            if (seen[v]) continue;
            seen[v] = 1;
            ++checked;
            int a = clo.root[v], b = chi.root[v];
            auto [i, fresh_i] = hi_to_lo.try_emplace(b, a);
            auto [j, fresh_j] = lo_to_hi.try_emplace(a, b);
            if (i->second != a || j->second != b) return -1;
        }
    }
    return checked;
}

int linf_norm(const Point& p, int d) {
    int m = 0;
    for (int i = 0; i < d; ++i) m = std::max(m, std::abs(p[i]));
    return m;
}

// Smallest r with both endpoints of the bundle in Λ_r.
int bundle_radius(const Graph& g, int e) {
    return std::max(linf_norm(g.coord(g.bundle(e).u), g.dim()), linf_norm(g.coord(g.bundle(e).v), g.dim()));
}

}  // namespace

// ---------------------------------------------------------------- block-by-block coupling

int CouplingTrace::c_size() const { return static_cast<int>(std::count(in_c.begin(), in_c.end(), 1)); }

MixingCoupler::MixingCoupler(int n, int k, double p, const std::string& xi, std::uint64_t seed, std::uint64_t chain,
                             const CouplingOptions& opt)
    : opt_(opt), n_(n), k_(k), p_(p), xi_name_(xi) {
    if (k < 1 || k > n) throw GeometryError("block radius must satisfy 1 <= k <= n");
    graph_ = std::make_shared<Graph>(build_box_graph(opt.d, n));
    lat_ = std::make_shared<BoxLattice>(*graph_);
    family_ = std::make_shared<BlockFamily>(blocks(opt.d, lat_->box(), k));
    xi_ = boundary_by_name(*graph_, xi);
    covered_ = k * (n / k);
    const int nb = graph_->num_bundles(), nblk = static_cast<int>(family_->blocks.size());
    block_edges_.resize(nblk);
    nbrs_.resize(nblk);
    std::vector<char> in_block(nb, 0);
    for (int i = 0; i < nblk; ++i) {
        block_edges_[i] = lat_->edges_in(family_->blocks[i]);
        std::sort(block_edges_[i].begin(), block_edges_[i].end());
        for (int e : block_edges_[i]) in_block[e] = 1;
        nbrs_[i] = family_->intersecting(i);
        if (linf_norm(family_->blocks[i].center, opt.d) + k == covered_) initial_.push_back(i);
    }
    for (int e = 0; e < nb; ++e)
        if (!in_block[e]) shell_.push_back(e);
    chain_ = std::make_unique<PairChain>(*graph_, p, xi_, BoundaryPartition::wired(*graph_), seed, chain);
    for (int i = 0; i < opt.burn_in; ++i) chain_->sweep();
}

CouplingResult MixingCoupler::next() {
    PairChain& pc = *chain_;
    for (int i = 0; i < std::max(1, opt_.thin); ++i) pc.sweep();

    const int nb = graph_->num_bundles();
    CouplingTrace tr;
    tr.d = opt_.d;
    tr.n = n_;
    tr.k = k_;
    tr.p = p_;
    tr.xi = xi_name_;
    tr.covered = covered_;
    tr.shell = shell_;
    tr.initial_frontier = initial_;
    tr.in_c.assign(nb, 0);
    int c_count = 0;
    auto reveal = [&](const std::vector<int>& edges) {
        if (opt_.refresh > 0) {
            for (int i = 0; i < opt_.refresh; ++i) pc.sweep(&tr.in_c);
        }
        for (int e : edges) tr.in_c[e] = 1;
        c_count += static_cast<int>(edges.size());
    };
    if (!shell_.empty()) reveal(shell_);

    std::set<int> frontier(initial_.begin(), initial_.end());
    std::vector<char> sampled(family_->blocks.size(), 0);
    int sampled_blocks = 0;
    while (!frontier.empty()) {
        int b = *frontier.begin();
        CouplingStep st;
        st.block = b;
        for (int e : block_edges_[b])
            if (!tr.in_c[e]) st.sampled.push_back(e);
        reveal(st.sampled);
        sampled[b] = 1;
        ++sampled_blocks;
        st.very_good = very_good(*lat_, pc.lo, pc.hi, family_->blocks[b], k_);
        frontier.erase(b);
        if (!st.very_good)
            for (int j : nbrs_[b])
                if (!sampled[j]) frontier.insert(j);
        st.frontier.assign(frontier.begin(), frontier.end());
        st.sampled_blocks = sampled_blocks;
        st.sampled_edges = c_count;
        tr.steps.push_back(std::move(st));
    }

    std::vector<int> rest;
    for (int e = 0; e < nb; ++e)
        if (!tr.in_c[e]) rest.push_back(e);
    if (!rest.empty()) pc.resample_identically(rest, opt_.final_sweeps);

    CouplingResult r;
    r.graph = graph_;
    r.lattice = lat_;
    r.family = family_;
    r.xi = xi_;
    r.lo = pc.lo;
    r.hi = pc.hi;
    r.trace = std::move(tr);
    return r;
}

CouplingResult run_mixing_coupling(int n, int k, double p, const std::string& xi, std::uint64_t seed,
                                   const CouplingOptions& opt) {
    MixingCoupler c(n, k, p, xi, seed, 0, opt);
    return c.next();
}

CouplingReport verify_coupling_props(const CouplingResult& r) {
    CouplingReport rep;
    const Graph& g = *r.graph;
    const int nb = g.num_bundles();
    const CouplingTrace& tr = r.trace;
    for (int e = 0; e < nb; ++e) {
        ++rep.order_checks;
        if (r.lo.open(e) && !r.hi.open(e)) ++rep.order_failures;
        if (!tr.in_c[e]) {
            ++rep.off_checks;
            if (r.lo.open(e) != r.hi.open(e)) ++rep.off_failures;
        }
    }
    long checked = induced_agreement(g, r.lo, r.xi, r.hi, BoundaryPartition::wired(g), tr.in_c);
    rep.boundary_checks = checked < 0 ? 1 : checked;
    if (checked < 0) rep.boundary_failures = 1;

    // Trace bookkeeping: C grows by D_t, A grows by one block, B ends empty.
    std::vector<char> c(nb, 0);
    int count = 0;
    for (int e : tr.shell) c[e] = 1, ++count;
    for (std::size_t t = 0; t < tr.steps.size(); ++t) {
        const CouplingStep& st = tr.steps[t];
        for (int e : st.sampled) {
            if (c[e]) {
                rep.trace_ok = false;
                rep.detail = "D_t overlaps C_t at step " + std::to_string(t);
            }
            c[e] = 1;
            ++count;
        }
        if (st.sampled_edges != count || st.sampled_blocks != static_cast<int>(t) + 1) {
            rep.trace_ok = false;
            rep.detail = "set sizes inconsistent at step " + std::to_string(t);
        }
    }
    if (!tr.steps.empty() && !tr.steps.back().frontier.empty()) {
        rep.trace_ok = false;
        rep.detail = "terminated with a nonempty frontier";
    }
    if (c != tr.in_c) {
        rep.trace_ok = false;
        if (rep.detail.empty()) rep.detail = "C_T differs from the union of the sampled regions";
    }
    if (rep.detail.empty() && !rep.ok()) {
        rep.detail = rep.order_failures ? "order violated" : rep.off_failures ? "configurations differ off C_T"
                                                                              : "induced boundary conditions differ";
    }
    return rep;
}

int bad_chain_length(const CouplingResult& r) {
    const BlockFamily& fam = *r.family;
    std::vector<int> bad;
    for (const auto& st : r.trace.steps)
        if (!st.very_good) bad.push_back(st.block);
    std::vector<int> len(bad.size(), 1);
    int best = 0;
    for (std::size_t j = 0; j < bad.size(); ++j) {
        const Box& bj = fam.blocks[bad[j]];
        for (std::size_t i = 0; i < j; ++i) {
            const Box& bi = fam.blocks[bad[i]];
            if (!bi.intersects(bj, fam.d) && linf(bi.center, bj.center) <= 3 * fam.k)
                len[j] = std::max(len[j], len[i] + 1);
        }
        best = std::max(best, len[j]);
    }
    return best;
}

bool reaches_half(const CouplingResult& r) {
    const Graph& g = *r.graph;
    const int half = r.trace.n / 2;
    for (int e = 0; e < g.num_bundles(); ++e)
        if (r.trace.in_c[e] && bundle_radius(g, e) <= half) return true;
    return false;
}

ReachEstimate estimate_reach(int n, int k, double p, const std::string& xi, long replicas, std::uint64_t seed,
                             const CouplingOptions& opt, int per_chain) {
    ReachEstimate est;
    est.n = n;
    est.k = k;
    est.p = p;
    est.xi = xi;
    if (replicas <= 0) return est;
    per_chain = std::max(1, per_chain);
    int chains = static_cast<int>((replicas + per_chain - 1) / per_chain);
    std::vector<Proportion> hits(chains);
    std::vector<std::vector<double>> lens(chains), steps(chains);
    parallel_replicas(chains, [&](int c) {
        MixingCoupler cp(n, k, p, xi, seed, static_cast<std::uint64_t>(c), opt);
        long todo = std::min<long>(per_chain, replicas - static_cast<long>(c) * per_chain);
        for (long i = 0; i < todo; ++i) {
            CouplingResult r = cp.next();
            hits[c].add(reaches_half(r));
            lens[c].push_back(bad_chain_length(r));
            steps[c].push_back(r.trace.T());
        }
    });
    std::vector<double> all_len, all_steps;
    for (int c = 0; c < chains; ++c) {
        est.reach.merge(hits[c]);
        all_len.insert(all_len.end(), lens[c].begin(), lens[c].end());
        all_steps.insert(all_steps.end(), steps[c].begin(), steps[c].end());
    }
    est.chain_length = mean_se(all_len);
    est.steps = mean_se(all_steps);
    return est;
}

void write_coupling_csv(std::ostream& os, const std::vector<CouplingResult>& runs) {
    CsvTable t({"n", "k", "p", "xi", "T", "c_size", "reach", "bad_chain", "very_good_steps"});
    for (const auto& r : runs) {
        int vg = 0;
        for (const auto& st : r.trace.steps) vg += st.very_good ? 1 : 0;
        t.row() << r.trace.n << r.trace.k << r.trace.p << r.trace.xi << r.trace.T() << r.trace.c_size()
                << reaches_half(r) << bad_chain_length(r) << vg;
    }
    t.write(os);
}

// ---------------------------------------------------------------- annulus coupling

std::vector<int> annulus_radii(int n, int k) {
    if (k < 1 || n < 2) throw GeometryError("annulus coupling needs n >= 2 and k >= 1");
    std::vector<int> r{n / 2};
    // Shell boundaries sit on multiples of 2k; a partial first or last shell is kept.
    int next = (n / 2 / (2 * k) + 1) * 2 * k;
    while (r.back() < n) {
        r.push_back(std::min(n, next));
        next += 2 * k;
    }
    return r;
}

namespace {

bool block_bad(const BoxLattice& lat, const BondConfig& lo, const BondConfig& hi, const Box& b, int k) {
    return !very_good(lat, lo, hi, b, k);
}

}  // namespace

std::vector<int> annulus_region(const BoxLattice& lat, const BlockFamily& fam, const BondConfig& lo,
                                const BondConfig& hi, int inner, int outer) {
    const Graph& g = lat.graph();
    const int d = lat.dim(), k = fam.k;
    std::vector<char> mark(g.num_bundles(), 0);
    for (const Box& b : fam.blocks) {
        int r = linf_norm(b.center, d);
        // Inside C_t and close enough for Λ_3k(x) to reach the shell.
        if (r + k > inner || r + 3 * k <= inner) continue;
        if (!block_bad(lat, lo, hi, b, k)) continue;
        Box reach{b.center, 3 * k};
        for (const Point& q : reach.points(d)) {
            int v = lat.vertex(q);
            if (v < 0) continue;
            for (int i = 0; i < d; ++i) {
                int e = lat.edge(v, i);
                if (e < 0) continue;
                Point q2 = q;
                ++q2[i];
                if (!reach.contains(q2, d)) continue;
                int rad = std::max(linf_norm(q, d), linf_norm(q2, d));
                if (rad > inner && rad <= outer) mark[e] = 1;
            }
        }
    }
    std::vector<int> out;
    for (int e = 0; e < g.num_bundles(); ++e)
        if (mark[e]) out.push_back(e);
    return out;
}

AnnulusCoupler::AnnulusCoupler(int d, int n, int k, double p, std::uint64_t seed, std::uint64_t chain,
                               const CouplingOptions& opt)
    : opt_(opt), d_(d), n_(n), k_(k), p_(p) {
    radii_ = annulus_radii(n, k);
    graph_ = std::make_shared<Graph>(build_box_graph(d, n));
    lat_ = std::make_shared<BoxLattice>(*graph_);
    family_ = std::make_shared<BlockFamily>(blocks(d, lat_->box(), k));
    const Graph& g = *graph_;
    core_ = BoundaryPartition::free_bc(g);
    for (int v = 0; v < g.num_vertices(); ++v)
        if (linf_norm(g.coord(v), d) <= n / 2) core_.cls[v] = 0;
    std::vector<char> pinned(g.num_bundles(), 0);
    edge_radius_.resize(g.num_bundles());
    for (int e = 0; e < g.num_bundles(); ++e) {
        edge_radius_[e] = bundle_radius(g, e);
        pinned[e] = edge_radius_[e] <= n / 2;
    }
    chain_ = std::make_unique<PairChain>(g, p, BoundaryPartition::free_bc(g), core_, seed, chain, pinned);
    for (int i = 0; i < opt.burn_in; ++i) chain_->sweep();
}

AnnulusResult AnnulusCoupler::next() {
    PairChain& pc = *chain_;
    for (int i = 0; i < std::max(1, opt_.thin); ++i) pc.sweep();
    const Graph& g = *graph_;
    const int nb = g.num_bundles();
    AnnulusTrace tr;
    tr.d = d_;
    tr.n = n_;
    tr.k = k_;
    tr.p = p_;
    tr.epsilon = opt_.epsilon;
    const double threshold = opt_.epsilon * std::pow(static_cast<double>(n_), d_ - 1);

    std::vector<char> revealed(nb, 0);
    for (int e = 0; e < nb; ++e) revealed[e] = edge_radius_[e] <= radii_.front();
    auto refresh = [&] {
        for (int i = 0; i < opt_.refresh; ++i) pc.sweep(&revealed);
    };
    BoundaryPartition free = BoundaryPartition::free_bc(g);
    for (std::size_t t = 0; t + 1 < radii_.size(); ++t) {
        AnnulusShell sh;
        sh.inner = radii_[t];
        sh.outer = radii_[t + 1];
        if (tr.merged_at < 0) refresh();
        sh.d = annulus_region(*lat_, *family_, pc.lo, pc.hi, sh.inner, sh.outer);
        for (int e : sh.d) revealed[e] = 1;
        for (int e = 0; e < nb; ++e)
            if (edge_radius_[e] > sh.inner && edge_radius_[e] <= sh.outer && !revealed[e]) sh.d_rest.push_back(e);
        for (const Box& b : family_->blocks) {
            int r = linf_norm(b.center, d_);
            if (r + k_ <= sh.inner && r + 3 * k_ > sh.inner && block_bad(*lat_, pc.lo, pc.hi, b, k_)) ++sh.bad_blocks;
        }
        sh.g = static_cast<double>(sh.d.size()) < threshold;
        sh.h = std::all_of(sh.d.begin(), sh.d.end(), [&](int e) { return pc.lo.open(e); });
        sh.agree = induced_agreement(g, pc.lo, free, pc.hi, core_, revealed) >= 0;
        if (sh.agree && tr.merged_at < 0) {
            std::vector<int> rest;
            for (int e = 0; e < nb; ++e)
                if (!revealed[e]) rest.push_back(e);
            pc.resample_identically(rest, opt_.final_sweeps);
            tr.merged_at = static_cast<int>(t);
        }
        if (tr.merged_at < 0) refresh();
        for (int e : sh.d_rest) revealed[e] = 1;
        tr.shells.push_back(std::move(sh));
    }

    AnnulusResult r;
    r.graph = graph_;
    r.lattice = lat_;
    r.family = family_;
    r.core = core_;
    r.lo = pc.lo;
    r.hi = pc.hi;
    r.trace = std::move(tr);
    return r;
}

AnnulusResult run_annulus_coupling(int n, int k, double p, std::uint64_t seed, const CouplingOptions& opt) {
    AnnulusCoupler c(opt.d, n, k, p, seed, 0, opt);
    return c.next();
}

AnnulusCheck check_annulus_run(const AnnulusResult& r) {
    AnnulusCheck chk;
    const Graph& g = *r.graph;
    const int nb = g.num_bundles();
    chk.ordered = r.lo.leq(r.hi);
    std::vector<int> rad(nb);
    for (int e = 0; e < nb; ++e) rad[e] = bundle_radius(g, e);
    for (const AnnulusShell& sh : r.trace.shells) {
        std::vector<char> in_d(nb, 0);
        for (int e : sh.d) in_d[e] = 1;
        if (sh.g && sh.h) {
            ++chk.gh_shells;
            for (int e = 0; e < nb; ++e)
                if (rad[e] > sh.inner && !in_d[e] && r.lo.open(e) != r.hi.open(e)) {
                    ++chk.gh_failures;
                    break;
                }
        }
        // Scramble everything outside C_t and recompute D_t.
        BondConfig lo(nb, false), hi(nb, true);
        for (int e = 0; e < nb; ++e)
            if (rad[e] <= sh.inner) {
                lo.set(e, r.lo.open(e));
                hi.set(e, r.hi.open(e));
            }
        ++chk.measurable_checks;
        if (annulus_region(*r.lattice, *r.family, lo, hi, sh.inner, sh.outer) != sh.d) ++chk.measurable_failures;
    }
    return chk;
}

namespace {

void add_run(ClaimsReport& rep, const AnnulusResult& r) {
    AnnulusCheck chk = check_annulus_run(r);
    ++rep.runs;
    rep.gh_shells += chk.gh_shells;
    rep.gh_failures += chk.gh_failures;
    rep.measurable = rep.measurable && chk.measurable_failures == 0 && chk.ordered;
    bool any_g = false;
    for (const auto& sh : r.trace.shells) {
        if (sh.g) rep.h_given_g.add(sh.h);
        any_g = any_g || sh.g;
    }
    rep.no_g.add(!any_g);
    rep.some_g.add(any_g);
}

}  // namespace

ClaimsReport measure_claims(const std::vector<AnnulusResult>& runs) {
    ClaimsReport rep;
    for (const auto& r : runs) {
        rep.n = r.trace.n;
        add_run(rep, r);
    }
    return rep;
}

ClaimsReport annulus_claims(int d, int n, int k, double p, long replicas, std::uint64_t seed,
                            const CouplingOptions& opt, int per_chain) {
    ClaimsReport total;
    total.n = n;
    if (replicas <= 0) return total;
    per_chain = std::max(1, per_chain);
    int chains = static_cast<int>((replicas + per_chain - 1) / per_chain);
    std::vector<ClaimsReport> parts(chains);
    parallel_replicas(chains, [&](int c) {
        AnnulusCoupler cp(d, n, k, p, seed, static_cast<std::uint64_t>(c), opt);
        long todo = std::min<long>(per_chain, replicas - static_cast<long>(c) * per_chain);
        for (long i = 0; i < todo; ++i) add_run(parts[c], cp.next());
    });
    for (const auto& q : parts) {
        total.runs += q.runs;
        total.gh_shells += q.gh_shells;
        total.gh_failures += q.gh_failures;
        total.measurable = total.measurable && q.measurable;
        total.h_given_g.merge(q.h_given_g);
        total.no_g.merge(q.no_g);
        total.some_g.merge(q.some_g);
    }
    return total;
}

void write_annulus_csv(std::ostream& os, const std::vector<AnnulusResult>& runs) {
    CsvTable t({"n", "k", "p", "shells", "merged_at", "g_flags", "h_flags", "d_sizes"});
    for (const auto& r : runs) {
        std::string gf, hf, ds;
        for (const auto& sh : r.trace.shells) {
            gf += sh.g ? '1' : '0';
            hf += sh.h ? '1' : '0';
            if (!ds.empty()) ds += ';';
            ds += std::to_string(sh.d.size());
        }
        t.row() << r.trace.n << r.trace.k << r.trace.p << static_cast<int>(r.trace.shells.size()) << r.trace.merged_at
                << gf << hf << ds;
    }
    t.write(os);
}

}  // namespace ising
