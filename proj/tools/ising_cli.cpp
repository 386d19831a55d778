#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ising/coupling.hpp"
#include "ising/exact.hpp"
#include "ising/fk.hpp"
#include "ising/lattice.hpp"
#include "ising/measure.hpp"
#include "ising/oracle.hpp"
#include "ising/output.hpp"
#include "ising/renorm.hpp"
#include "ising/surgery.hpp"

#ifndef ISING_VERSION
#define ISING_VERSION "0.0.0"
#endif

using namespace ising;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kConfig = 2, kDefect = 3, kCap = 4 };

class Defect : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Run {
    std::string command;
    fs::path dir;
    json params = json::object();
    json results = json::object();
    std::vector<std::string> outputs;

    fs::path file(const std::string& name) {
        outputs.push_back(name);
        return dir / name;
    }
    template <class F>
    void save(const std::string& name, F&& write) {
        std::ofstream os(file(name), std::ios::binary);
        if (!os) throw ConfigError("cannot write " + (dir / name).string());
        write(os);
    }
};

std::string g_out;

Run open_run(const std::string& command, std::uint64_t seed) {
    Run r;
    r.command = command;
    r.dir = output_root(g_out) / command;
    std::error_code ec;
    fs::create_directories(r.dir, ec);
    if (ec) throw ConfigError("cannot create " + r.dir.string() + ": " + ec.message());
    r.params["seed"] = seed;
    return r;
}

void close_run(const Run& r) {
    json line;
    line["command"] = r.command;
    line["version"] = ISING_VERSION;
    line["params"] = r.params;
    line["results"] = r.results;
    line["outputs"] = r.outputs;
    std::ofstream os(output_root(g_out) / "runs.jsonl", std::ios::app | std::ios::binary);
    os << line.dump() << "\n";
    std::cout << "wrote " << r.dir.string() << "\n";
}

Point parse_point(const std::string& text, int d) {
    Point p{};
    std::stringstream ss(text);
    std::string tok;
    int i = 0;
    while (std::getline(ss, tok, ',')) {
        if (i >= d) throw ConfigError("too many coordinates in '" + text + "'");
        try {
            p[i++] = std::stoi(tok);
        } catch (const std::exception&) {
            throw ConfigError("bad coordinate in '" + text + "'");
        }
    }
    if (i != d) throw ConfigError("expected " + std::to_string(d) + " coordinates in '" + text + "'");
    return p;
}

int vertex_at(const Graph& g, const std::string& text) {
    if (text == "ghost") {
        if (!g.has_ghost()) throw ConfigError("graph has no ghost");
        return g.ghost();
    }
    int v = g.index_of(parse_point(text, g.dim()));
    if (v < 0) throw ConfigError("point " + text + " is not in the box");
    return v;
}

// Shared experiment flags.
void add_experiment(CLI::App* sub, ExperimentConfig& cfg) {
    sub->add_option("-d,--dim", cfg.d, "dimension")->capture_default_str();
    sub->add_option("-L,--size", cfg.L, "box radius")->capture_default_str();
    sub->add_option("--beta", cfg.beta, "inverse temperature");
    sub->add_option("-p,--p", cfg.p, "edge weight p = 1 - exp(-2 beta)");
    sub->add_option("--boundary", cfg.boundary, "free, wired, halves or alternating")->capture_default_str();
    sub->add_option("--replicas", cfg.replicas, "independent chains")->capture_default_str();
    sub->add_option("--seed", cfg.seed, "64-bit seed")->capture_default_str();
    sub->add_option("--burn-in", cfg.burn_in, "sweeps before sampling")->capture_default_str();
    sub->add_option("--thin", cfg.thin, "sweeps between samples")->capture_default_str();
    sub->add_option("--samples", cfg.samples, "samples per replica")->capture_default_str();
}

ExperimentConfig config_for(int d, int L) {
    ExperimentConfig c;
    c.d = d;
    c.L = L;
    return c;
}

json config_json(const ExperimentConfig& c) {
    json j;
    j["d"] = c.d;
    j["L"] = c.L;
    j["beta"] = c.resolved_beta();
    j["p"] = c.resolved_p();
    j["boundary"] = c.boundary;
    j["replicas"] = c.replicas;
    j["burn_in"] = c.burn_in;
    j["thin"] = c.thin;
    j["samples"] = c.samples;
    return j;
}

// ---------------------------------------------------------------- verify

struct VerifyArgs {
    bool all = false;
    std::vector<std::string> graphs;
    int max_edges = 1 << 30;
    std::vector<double> betas{0.1, 0.4, 0.9};
    double tol = 1e-10;
};

int cmd_verify(const VerifyArgs& a) {
    if (!a.all && a.graphs.empty()) throw ConfigError("verify needs --all or --graph");
    std::vector<BatteryGraph> battery;
    for (auto& bg : standard_battery())
        if (a.all || std::find(a.graphs.begin(), a.graphs.end(), bg.name) != a.graphs.end())
            battery.push_back(std::move(bg));
    if (battery.empty()) throw ConfigError("no battery graph matches --graph");
    Run run = open_run("verify", 0);
    run.params["max_edges"] = a.max_edges;
    run.params["betas"] = a.betas;
    run.params["tol"] = a.tol;
    OracleOptions opt;
    opt.tol = a.tol;
    OracleReport rep = run_battery(battery, a.betas, opt, a.max_edges);
    run.save("verify.csv", [&](std::ostream& os) {
        os << OracleReport::csv_header() << "\n";
        for (const auto& r : rep.rows) os << OracleReport::csv_row(r) << "\n";
    });
    run.results["checks"] = rep.rows.size();
    run.results["failures"] = rep.failures();
    close_run(run);
    std::cout << rep.rows.size() << " checks, " << rep.failures() << " failures\n";
    if (!rep.all_pass()) throw Defect("oracle identities failed");
    return kOk;
}

// ---------------------------------------------------------------- sample

struct SampleArgs {
    ExperimentConfig cfg = config_for(2, 4);
    std::string kind = "es";
};

int cmd_sample(SampleArgs& a) {
    a.cfg.validate();
    ChainKind kind;
    if (a.kind == "es") kind = ChainKind::EdwardsSokal;
    else if (a.kind == "heat-bath") kind = ChainKind::HeatBath;
    else throw ConfigError("unknown chain kind " + a.kind);
    Graph g = build_box_graph(a.cfg.d, a.cfg.L);
    BoundaryPartition xi = boundary_by_name(g, a.cfg.boundary);
    Run run = open_run("sample", a.cfg.seed);
    run.params["config"] = config_json(a.cfg);
    run.params["kind"] = a.kind;

    std::vector<ChainResult> res(a.cfg.replicas);
    parallel_replicas(a.cfg.replicas, [&](int i) {
        ChainOptions opt;
        opt.burn_in = a.cfg.burn_in;
        opt.thin = a.cfg.thin;
        opt.samples = a.cfg.samples;
        opt.seed = a.cfg.seed;
        opt.chain = static_cast<std::uint64_t>(i);
        res[i] = run_chain(g, a.cfg.resolved_p(), xi, kind, opt);
    });
    CsvTable edges({"replica", "bundle", "u", "v", "mean", "se", "n"});
    std::vector<ChainRecord> trace;
    double density = 0.0;
    for (int i = 0; i < a.cfg.replicas; ++i) {
        for (int b = 0; b < g.num_bundles(); ++b) {
            const Estimate& e = res[i].edge[b];
            edges.row() << i << b << g.bundle(b).u << g.bundle(b).v << e.mean << e.se << e.n;
            density += e.mean;
        }
        trace.insert(trace.end(), res[i].trace.begin(), res[i].trace.end());
    }
    density /= std::max(1, a.cfg.replicas * g.num_bundles());
    edges.save(run.file("edges.csv"));
    run.save("trace.csv", [&](std::ostream& os) { write_chain_csv(os, trace); });
    run.results["edge_density"] = density;
    close_run(run);
    std::cout << "edge density " << fmt_num(density) << "\n";
    return kOk;
}

// ---------------------------------------------------------------- couple

struct CoupleArgs {
    std::string kind = "mixing";
    int d = 2, n = 16, k = 1;
    double p = 0.9;
    std::string xi = "free";
    long runs = 100;
    std::uint64_t seed = 1;
    int per_chain = 100;
};

int cmd_couple(const CoupleArgs& a) {
    if (a.runs < 1 || a.per_chain < 1) throw ConfigError("runs and per-chain must be positive");
    Run run = open_run("couple", a.seed);
    run.params["kind"] = a.kind;
    run.params["d"] = a.d;
    run.params["n"] = a.n;
    run.params["k"] = a.k;
    run.params["p"] = a.p;
    run.params["runs"] = a.runs;
    run.params["per_chain"] = a.per_chain;
    CouplingOptions opt;
    opt.d = a.d;
    long bad = 0;
    if (a.kind == "mixing") {
        run.params["xi"] = a.xi;
        std::vector<CouplingResult> rs;
        Proportion reach;
        for (long i = 0; i < a.runs;) {
            MixingCoupler mc(a.n, a.k, a.p, a.xi, a.seed, static_cast<std::uint64_t>(i / a.per_chain), opt);
            for (int j = 0; j < a.per_chain && i < a.runs; ++j, ++i) {
                rs.push_back(mc.next());
                if (!verify_coupling_props(rs.back()).ok()) ++bad;
                reach.add(reaches_half(rs.back()));
            }
        }
        run.save("mixing.csv", [&](std::ostream& os) { write_coupling_csv(os, rs); });
        run.results["reach"] = reach.mean();
        run.results["reach_lower"] = reach.lower();
        run.results["reach_upper"] = reach.upper();
    } else if (a.kind == "annulus") {
        std::vector<AnnulusResult> rs;
        for (long i = 0; i < a.runs;) {
            AnnulusCoupler ac(a.d, a.n, a.k, a.p, a.seed, static_cast<std::uint64_t>(i / a.per_chain), opt);
            for (int j = 0; j < a.per_chain && i < a.runs; ++j, ++i) {
                rs.push_back(ac.next());
                if (!check_annulus_run(rs.back()).ordered) ++bad;
            }
        }
        ClaimsReport cr = measure_claims(rs);
        run.save("annulus.csv", [&](std::ostream& os) { write_annulus_csv(os, rs); });
        run.results["gh_shells"] = cr.gh_shells;
        run.results["gh_failures"] = cr.gh_failures;
        run.results["h_given_g"] = cr.h_given_g.mean();
        run.results["no_g"] = cr.no_g.mean();
        run.results["some_g"] = cr.some_g.mean();
        std::cout << "H given G " << fmt_num(cr.h_given_g.mean()) << " over " << cr.h_given_g.n << " shells\n";
    } else {
        throw ConfigError("unknown coupling kind " + a.kind);
    }
    run.results["defects"] = bad;
    close_run(run);
    if (bad) throw Defect(std::to_string(bad) + " coupling runs broke an invariant");
    return kOk;
}

// ---------------------------------------------------------------- surgery

struct SurgeryArgs {
    long instances = 100;
    std::uint64_t seed = 1;
    InstanceOptions gen;
    std::string fixture;
};

int cmd_surgery(SurgeryArgs& a) {
    Run run = open_run("surgery", a.seed);
    std::vector<SurgeryRow> rows;
    long failures = 0;
    std::string first_failure;
    auto one = [&](long id, const GluingInstance& inst) {
        try {
            SurgeryCertificate cert = surgery(inst);
            rows.push_back(surgery_row(id, inst, cert));
            const SurgeryRow& r = rows.back();
            if (!(r.a && r.b && r.c && r.d_ok && r.ratio_ok())) throw SurgeryDefect("certificate check failed");
        } catch (const SurgeryDefect& e) {
            if (!failures++) {
                first_failure = "failure_" + std::to_string(id) + ".txt";
                run.save(first_failure, [&](std::ostream& os) { write_instance(os, inst); });
            }
            std::cerr << "instance " << id << ": " << e.what() << "\n";
        }
    };
    if (!a.fixture.empty()) {
        std::ifstream is(a.fixture);
        if (!is) throw ConfigError("cannot read " + a.fixture);
        run.params["fixture"] = a.fixture;
        one(0, read_instance(is));
    } else {
        if (a.instances < 1) throw ConfigError("instances must be positive");
        run.params["instances"] = a.instances;
        run.params["d"] = a.gen.d;
        run.params["min_N"] = a.gen.min_N;
        run.params["max_N"] = a.gen.max_N;
        InstanceGenerator gen(a.seed, a.gen);
        for (long i = 0; i < a.instances; ++i) one(i, gen.next());
        run.results["samples_inspected"] = gen.stats().samples;
    }
    run.save("surgery.csv", [&](std::ostream& os) { write_surgery_csv(os, rows); });
    run.results["instances"] = rows.size();
    run.results["failures"] = failures;
    close_run(run);
    std::cout << rows.size() << " instances, " << failures << " failures\n";
    if (failures) throw Defect("surgery failed; first failing instance in " + first_failure);
    return kOk;
}

// ---------------------------------------------------------------- scan

struct DecayArgs {
    ExperimentConfig cfg;
    DecayOptions opt;
    OnsetOptions onset;
    bool svg = true;
};

int cmd_decay(DecayArgs& a) {
    Run run = open_run("scan_decay", a.cfg.seed);
    json pre;
    if (a.cfg.beta < 0 && a.cfg.p < 0) {
        a.onset.center_radius = a.opt.center_radius;
        ExperimentConfig probe = a.cfg;
        probe.beta = a.onset.beta_lo;
        OnsetScan scan = onset_prescan(probe, a.onset);
        run.save("onset.csv", [&](std::ostream& os) { write_onset_csv(os, scan); });
        pre["threshold"] = scan.threshold;
        pre["grid"] = scan.betas;
        if (!scan.found()) throw ConfigError("no onset found below beta " + fmt_num(a.onset.beta_hi));
        a.cfg.beta = scan.onset;
        pre["onset"] = scan.onset;
        std::cout << "onset beta " << fmt_num(scan.onset) << "\n";
    }
    a.cfg.validate();
    run.params["config"] = config_json(a.cfg);
    run.params["r_min"] = a.opt.r_min;
    run.params["r_max"] = a.opt.r_max;
    run.params["center_radius"] = a.opt.center_radius;
    run.params["chosen_beta"] = a.cfg.resolved_beta();
    if (!pre.empty()) run.params["prescan"] = pre;
    DecayFit fit = decay_scan(a.cfg, a.opt);
    run.save("decay.csv", [&](std::ostream& os) { write_decay_csv(os, fit); });
    if (a.svg) write_decay_svg(run.file("decay.svg"), fit);
    run.results["c"] = fit.c;
    run.results["intercept"] = fit.intercept;
    run.results["r2"] = fit.r2;
    run.results["fit_ok"] = fit.fit_ok(a.opt.r2_gate);
    run.results["degenerate"] = fit.degenerate;
    run.results["monotone"] = fit.monotone;
    run.results["excluded"] = fit.excluded;
    run.results["negativity_defect"] = fit.negativity_defect;
    close_run(run);
    std::cout << "c " << fmt_num(fit.c) << " r2 " << fmt_num(fit.r2)
              << (fit.fit_ok(a.opt.r2_gate) ? "" : " (fit flagged: below R2 gate or degenerate)") << "\n";
    if (fit.negativity_defect) throw Defect("truncated correlation below -4 se");
    return kOk;
}

struct MixingArgs {
    ExperimentConfig cfg = config_for(3, 0);
    std::vector<int> ns{2, 4, 8};
    std::string a_spec, b_spec;
    int batches = 20;
    bool exact = false;
};

int cmd_mixing(MixingArgs& a) {
    if (a.ns.empty()) throw ConfigError("no radius given");
    a.cfg.L = 4 * *std::max_element(a.ns.begin(), a.ns.end());
    a.cfg.validate();
    Run run = open_run("scan_mixing", a.cfg.seed);
    run.params["config"] = config_json(a.cfg);
    run.params["n"] = a.ns;
    std::vector<MixingEstimate> rows;
    for (int n : a.ns) {
        auto [da, db] = default_events(a.cfg.d, n);
        EventSpec ea = a.a_spec.empty() ? da : parse_event(a.a_spec, a.cfg.d);
        EventSpec eb = a.b_spec.empty() ? db : parse_event(a.b_spec, a.cfg.d);
        check_event_scope(ea, eb, a.cfg.d, n);
        rows.push_back(a.exact ? mixing_exact(a.cfg.d, n, a.cfg.resolved_p(), ea, eb)
                               : mixing_scan(n, a.cfg.resolved_p(), ea, eb, a.cfg, a.batches));
        run.params["events"].push_back({to_string(ea, a.cfg.d), to_string(eb, a.cfg.d)});
    }
    run.save("mixing.csv", [&](std::ostream& os) { write_mixing_csv(os, rows); });
    for (const auto& r : rows) run.results["abs_gap"].push_back(r.abs_gap());
    close_run(run);
    return kOk;
}

struct InfluenceArgs {
    ExperimentConfig cfg = config_for(2, 0);
    std::vector<int> Ns{8, 16, 32};
    bool exact = false;
};

int cmd_influence(InfluenceArgs& a) {
    if (a.Ns.empty()) throw ConfigError("no box radius given");
    a.cfg.L = *std::max_element(a.Ns.begin(), a.Ns.end());
    a.cfg.validate();
    Run run = open_run("scan_influence", a.cfg.seed);
    run.params["config"] = config_json(a.cfg);
    run.params["N"] = a.Ns;
    std::vector<InfluenceEstimate> rows;
    for (int N : a.Ns) {
        rows.push_back(influence_gap(a.cfg.d, N, a.cfg.resolved_p(), a.cfg, a.exact));
        if (!rows.back().warning.empty()) std::cerr << "N=" << N << ": " << rows.back().warning << "\n";
    }
    run.save("influence.csv", [&](std::ostream& os) { write_influence_csv(os, rows); });
    for (const auto& r : rows) run.results["gap"].push_back(r.gap);
    close_run(run);
    return kOk;
}

// ---------------------------------------------------------------- probe

struct ProbeArgs {
    int d = 2, n = 1;
    double beta = 0.6;
    std::string w = "-1,1", z = "1,-1";
    std::vector<std::string> X{"-1,-1"}, Y{"1,1"};
    int cap = 16;
};

int cmd_probe(const ProbeArgs& a) {
    Graph gp = attach_ghost(build_box_graph(a.d, a.n));
    int w = vertex_at(gp, a.w), z = vertex_at(gp, a.z);
    std::vector<int> X, Y;
    for (const auto& s : a.X) X.push_back(vertex_at(gp, s));
    for (const auto& s : a.Y) Y.push_back(vertex_at(gp, s));
    Run run = open_run("probe", 0);
    run.params["d"] = a.d;
    run.params["n"] = a.n;
    run.params["beta"] = a.beta;
    run.params["w"] = a.w;
    run.params["z"] = a.z;
    run.params["X"] = a.X;
    run.params["Y"] = a.Y;
    run.params["cap"] = a.cap;
    ProbeResult r = probe_both(gp, a.beta, w, z, X, Y, a.cap);
    CsvTable t({"d", "n", "beta", "cap", "probability", "truncated", "bound", "overlap", "agree"});
    t.row() << a.d << a.n << a.beta << a.cap << r.probability << r.truncated << r.bound << r.overlap << r.agree();
    t.save(run.file("probe.csv"));
    run.results["probability"] = r.probability;
    run.results["truncated"] = r.truncated;
    run.results["bound"] = r.bound;
    close_run(run);
    std::cout << "probability " << fmt_num(r.probability) << " truncated " << fmt_num(r.truncated) << " bound "
              << fmt_num(r.bound) << "\n";
    if (!r.agree()) throw Defect("truncated enumeration outside its tail bound");
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Ising and random-cluster experiments", "ising"};
    app.set_version_flag("--version", ISING_VERSION);
    app.set_config("--config", "", "INI file; [section] per subcommand, e.g. [scan.decay]");
    app.add_option("--out", g_out, "output root (default $ISING_OUT_DIR or ./out)");
    app.require_subcommand(1, 1);
    app.fallthrough();

    std::function<int()> action;

    VerifyArgs va;
    auto* verify = app.add_subcommand("verify", "exact oracle identities on the small-graph battery");
    verify->add_flag("--all", va.all, "every battery graph");
    verify->add_option("--graph", va.graphs, "battery graph by name");
    verify->add_option("--max-edges", va.max_edges, "skip graphs with more bundles");
    verify->add_option("--beta", va.betas, "inverse temperatures")->capture_default_str();
    verify->add_option("--tol", va.tol, "absolute tolerance")->capture_default_str();
    verify->callback([&] { action = [&] { return cmd_verify(va); }; });

    SampleArgs sa;
    auto* sample = app.add_subcommand("sample", "FK chain on a box: edge densities and traces");
    add_experiment(sample, sa.cfg);
    sample->add_option("--kind", sa.kind, "es or heat-bath")->capture_default_str();
    sample->callback([&] { action = [&] { return cmd_sample(sa); }; });

    CoupleArgs ca;
    auto* couple = app.add_subcommand("couple", "exploration couplings (mixing or annulus)");
    couple->add_option("kind", ca.kind, "mixing or annulus")->capture_default_str();
    couple->add_option("-d,--dim", ca.d)->capture_default_str();
    couple->add_option("-n", ca.n, "box radius")->capture_default_str();
    couple->add_option("-k", ca.k, "block radius")->capture_default_str();
    couple->add_option("-p,--p", ca.p)->capture_default_str();
    couple->add_option("--xi", ca.xi, "lower boundary condition (mixing)")->capture_default_str();
    couple->add_option("--runs", ca.runs)->capture_default_str();
    couple->add_option("--per-chain", ca.per_chain, "runs drawn from one pair chain")->capture_default_str();
    couple->add_option("--seed", ca.seed)->capture_default_str();
    couple->callback([&] { action = [&] { return cmd_couple(ca); }; });

    SurgeryArgs ga;
    auto* surg = app.add_subcommand("surgery", "current surgery on random or stored instances");
    surg->add_option("--instances", ga.instances)->capture_default_str();
    surg->add_option("--seed", ga.seed)->capture_default_str();
    surg->add_option("-d,--dim", ga.gen.d)->capture_default_str();
    surg->add_option("--min-N", ga.gen.min_N)->capture_default_str();
    surg->add_option("--max-N", ga.gen.max_N)->capture_default_str();
    surg->add_option("--fixture", ga.fixture, "run one stored instance")->check(CLI::ExistingFile);
    surg->callback([&] { action = [&] { return cmd_surgery(ga); }; });

    auto* scan = app.add_subcommand("scan", "estimator scans");
    scan->require_subcommand(1, 1);

    DecayArgs da;
    auto* decay = scan->add_subcommand("decay", "truncated two-point decay; no beta/p runs the onset pre-scan");
    add_experiment(decay, da.cfg);
    decay->add_option("--r-min", da.opt.r_min)->capture_default_str();
    decay->add_option("--r-max", da.opt.r_max)->capture_default_str();
    decay->add_option("--center-radius", da.opt.center_radius)->capture_default_str();
    decay->add_option("--batches", da.opt.batches)->capture_default_str();
    decay->add_option("--r2-gate", da.opt.r2_gate)->capture_default_str();
    decay->add_option("--onset-threshold", da.onset.threshold)->capture_default_str();
    decay->add_option("--onset-lo", da.onset.beta_lo)->capture_default_str();
    decay->add_option("--onset-hi", da.onset.beta_hi)->capture_default_str();
    decay->add_flag("!--no-svg", da.svg, "skip the plot");
    decay->callback([&] { action = [&] { return cmd_decay(da); }; });

    MixingArgs ma;
    auto* mixing = scan->add_subcommand("mixing", "|phi[A and B] - phi[A]phi[B]| on wired boxes");
    add_experiment(mixing, ma.cfg);
    mixing->add_option("-n", ma.ns, "inner radii")->capture_default_str();
    mixing->add_option("--A", ma.a_spec, "event inside E_n (sure | all:e/e | any:e/e)");
    mixing->add_option("--B", ma.b_spec, "event outside E_2n");
    mixing->add_option("--batches", ma.batches)->capture_default_str();
    mixing->add_flag("--exact", ma.exact, "exact summation instead of sampling");
    mixing->callback([&] { action = [&] { return cmd_mixing(ma); }; });

    InfluenceArgs ia;
    auto* infl = scan->add_subcommand("influence", "wired minus free density of the edge at the origin");
    add_experiment(infl, ia.cfg);
    infl->add_option("-N", ia.Ns, "box radii")->capture_default_str();
    infl->add_flag("--exact", ia.exact, "also compute the exact gap");
    infl->callback([&] { action = [&] { return cmd_influence(ia); }; });

    ProbeArgs pa;
    auto* probe = app.add_subcommand("probe", "double-current connection probability on a box with ghost");
    probe->add_option("-d,--dim", pa.d)->capture_default_str();
    probe->add_option("-n", pa.n, "box radius")->capture_default_str();
    probe->add_option("--beta", pa.beta)->capture_default_str();
    probe->add_option("--w", pa.w, "source, comma coordinates or 'ghost'")->capture_default_str();
    probe->add_option("--z", pa.z)->capture_default_str();
    probe->add_option("--X", pa.X)->capture_default_str();
    probe->add_option("--Y", pa.Y)->capture_default_str();
    probe->add_option("--cap", pa.cap, "bundle value cap of the truncated route")->capture_default_str();
    probe->callback([&] { action = [&] { return cmd_probe(pa); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::FileError& e) {
        std::cerr << e.what() << "\n";
        return kConfig;
    } catch (const CLI::ConfigError& e) {
        std::cerr << e.what() << "\n";
        return kConfig;
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        if (rc == 0) return kOk;
        std::cerr << app.help();
        return kUsage;
    }

    try {
        return action();
    } catch (const SizeError& e) {
        std::cerr << "resource cap: " << e.what() << "\n";
        return kCap;
    } catch (const SurgeryDefect& e) {
        std::cerr << "defect: " << e.what() << "\n";
        return kDefect;
    } catch (const OrderViolation& e) {
        std::cerr << "defect: " << e.what() << "\n";
        return kDefect;
    } catch (const Defect& e) {
        std::cerr << "defect: " << e.what() << "\n";
        return kDefect;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config: " << e.what() << "\n";
        return kConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDefect;
    }
}
