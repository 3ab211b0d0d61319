#include "extremal/commands.hpp"

#include <cmath>
#include <filesystem>

#include <json.hpp>

#include "extremal/bounds.hpp"
#include "extremal/csv.hpp"
#include "extremal/perturbation.hpp"
#include "extremal/worker_pool.hpp"

namespace extremal {

namespace {

namespace fs = std::filesystem;

std::string out_path(const RunConfig& cfg, const std::string& name) {
    fs::create_directories(cfg.out_dir);
    return (fs::path(cfg.out_dir) / name).string();
}

Vector point_from(const std::vector<double>& flat, int n, const std::string& what) {
    if (static_cast<int>(flat.size()) != n)
        throw ConfigError("config: '" + what + "' needs exactly " + std::to_string(n) +
                          " entries for this problem");
    Vector v(n);
    for (int i = 0; i < n; ++i) v[i] = flat[static_cast<size_t>(i)];
    return v;
}

nlohmann::json vector_json(const Vector& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (int i = 0; i < v.size(); ++i) arr.push_back(fmt_double(v[i]));
    return arr;
}

ReachOptions reach_options(const RunConfig& cfg) {
    ReachOptions ropts = cfg.reach;
    ropts.seed = cfg.seed;
    return ropts;
}

constexpr const char* kToolVersion = "1.0.0";

/// Uniform machine-readable header for every command: what ran, under which
/// tolerances, producing which artifact hash.  Worker count is deliberately
/// absent so reruns across thread counts stay byte-identical.
void write_run_summary(const RunConfig& cfg, const std::string& command) {
    nlohmann::json doc;
    doc["command"] = command;
    doc["tool_version"] = kToolVersion;
    doc["config_hash"] = config_hash(cfg);
    doc["seed"] = cfg.seed;
    nlohmann::json tol;
    tol["rank_tol"] = fmt_double(cfg.conjugate.rank_tol);
    tol["det_tol"] = fmt_double(cfg.conjugate.det_tol);
    tol["omega_tol"] = fmt_double(cfg.conjugate.omega_tol);
    tol["dedup_tol"] = fmt_double(cfg.conjugate.dedup_tol);
    tol["null_gap"] = fmt_double(cfg.conjugate.null_gap);
    tol["tie_tol"] = fmt_double(cfg.reach.tie_tol);
    tol["reach_tol"] = fmt_double(cfg.reach.reach_tol);
    doc["tolerances"] = std::move(tol);
    doc["flow"]["rtol"] = fmt_double(cfg.flow.rtol);
    doc["flow"]["atol"] = fmt_double(cfg.flow.atol);
    doc["flow"]["escape_radius"] = fmt_double(cfg.flow.escape_radius);
    open_output(out_path(cfg, "run_summary.json")) << doc.dump(2) << "\n";
}

} // namespace

int cmd_solve(const RunConfig& cfg) {
    const CatalogProblem cp = instantiate(cfg);
    const int n = cp.problem.state_dim();
    if (cfg.solve_z.empty())
        throw ConfigError("config: solve needs a z (set [solve] z or pass --z)");
    const Vector z = point_from(cfg.solve_z, n, "solve.z");
    const std::string hash = config_hash(cfg);
    write_run_summary(cfg, "solve");

    const ExtremalArc arc = integrate_backward(cp.problem, cp.terminal, z, cfg.flow);
    write_arc_csv(out_path(cfg, "arc.csv"), arc, hash);
    write_arc_sidecar(out_path(cfg, "arc.json"), arc, hash);
    return arc.status == ArcStatus::Escaped ? 3 : 0;
}

int cmd_figure1(const RunConfig& cfg) {
    const CatalogProblem cp = instantiate(cfg);
    if (cp.problem.state_dim() != 1)
        throw ConfigError("figure1 sweeps a scalar z; this problem is not 1-d");
    const std::string hash = config_hash(cfg);
    write_run_summary(cfg, "figure1");

    std::vector<double> zs;
    for (double z = cfg.fig_lo; z <= cfg.fig_hi + 1e-12 * (1.0 + std::abs(cfg.fig_hi));
         z += cfg.fig_step)
        zs.push_back(z);

    std::vector<ExtremalArc> arcs(zs.size());
    parallel_for(static_cast<long>(zs.size()), cfg.threads, [&](long k) {
        Vector z(1);
        z << zs[static_cast<size_t>(k)];
        arcs[static_cast<size_t>(k)] = integrate_backward(cp.problem, cp.terminal, z, cfg.flow);
    });

    fs::create_directories(fs::path(cfg.out_dir) / "figure1");
    std::ofstream index = open_output(
        (fs::path(cfg.out_dir) / "figure1" / "index.csv").string());
    index << "# config_hash=" << hash << "\n";
    index << "file,z,status,t_min\n";
    for (size_t k = 0; k < arcs.size(); ++k) {
        const std::string name = "trajectory_" + std::to_string(k) + ".csv";
        write_arc_csv((fs::path(cfg.out_dir) / "figure1" / name).string(), arcs[k], hash);
        index << join_csv({name, fmt_double(zs[k]),
                           arcs[k].status == ArcStatus::Escaped ? "escaped" : "complete",
                           fmt_double(arcs[k].t_min())})
              << "\n";
    }
    return 0;
}

int cmd_conjugate(const RunConfig& cfg) {
    const CatalogProblem cp = instantiate(cfg);
    const int n = cp.problem.state_dim();
    const std::string hash = config_hash(cfg);
    write_run_summary(cfg, "conjugate");

    const SweepResult sweep = sweep_locus(cp.problem, cp.terminal, z_box(cfg, n),
                                          cfg.conjugate, cfg.flow, cfg.threads);
    write_locus_csv(out_path(cfg, "locus.csv"), sweep, n, hash);

    nlohmann::json doc;
    doc["config_hash"] = hash;
    doc["grid_shape"] = sweep.grid_shape;
    doc["escaped_cells"] = sweep.escaped_cells;
    doc["tolerances"]["rank_tol"] = fmt_double(cfg.conjugate.rank_tol);
    doc["tolerances"]["det_tol"] = fmt_double(cfg.conjugate.det_tol);
    doc["tolerances"]["omega_tol"] = fmt_double(cfg.conjugate.omega_tol);
    doc["candidates"] = nlohmann::json::array();
    for (const ConjugateCandidate& c : sweep.candidates) {
        nlohmann::json jc;
        jc["z"] = vector_json(c.z);
        jc["v"] = vector_json(c.v);
        jc["y"] = vector_json(c.y);
        jc["sigma_min"] = fmt_double(c.sigma_min);
        jc["det"] = fmt_double(c.det);
        jc["omega_residual"] = fmt_double(c.omega_residual);
        jc["refined"] = c.refined;
        jc["interior_rank_ok"] = c.interior_rank_ok;
        jc["in_omega"] = c.in_omega;
        doc["candidates"].push_back(std::move(jc));
    }
    open_output(out_path(cfg, "conjugate_summary.json")) << doc.dump(2) << "\n";
    return 0;
}

int cmd_reach(const RunConfig& cfg) {
    const CatalogProblem cp = instantiate(cfg);
    const int n = cp.problem.state_dim();
    const Vector y = point_from(cfg.reach_y, n, "reach.y");
    const std::string hash = config_hash(cfg);
    write_run_summary(cfg, "reach");

    const ReachSolution sol =
        reach(cp.problem, cp.terminal, y, z_box(cfg, n), reach_options(cfg), cfg.flow,
              cfg.threads);

    nlohmann::json doc;
    doc["config_hash"] = hash;
    doc["y"] = vector_json(y);
    doc["found"] = sol.found;
    doc["multiplicity"] = sol.multiplicity;
    doc["V"] = fmt_double(sol.V);
    doc["roots"] = nlohmann::json::array();
    for (const Vector& r : sol.roots) doc["roots"].push_back(vector_json(r));
    doc["costs"] = nlohmann::json::array();
    for (const double w : sol.costs) doc["costs"].push_back(fmt_double(w));
    doc["minimizers"] = sol.minimizers;
    doc["tolerances"]["tie_tol"] = fmt_double(cfg.reach.tie_tol);
    doc["tolerances"]["reach_tol"] = fmt_double(cfg.reach.reach_tol);
    open_output(out_path(cfg, "reach.json")) << doc.dump(2) << "\n";
    return 0;
}

int cmd_value(const RunConfig& cfg) {
    const CatalogProblem cp = instantiate(cfg);
    const int n = cp.problem.state_dim();
    const std::string hash = config_hash(cfg);
    write_run_summary(cfg, "value");

    const ValueTable table = value_function(cp.problem, cp.terminal, y_grid(cfg, n),
                                            z_box(cfg, n), reach_options(cfg), cfg.flow,
                                            cfg.threads);
    write_value_csv(out_path(cfg, "value.csv"), table, hash);
    write_vpsi_csv(out_path(cfg, "vpsi.csv"), table, hash);
    write_value_summary(out_path(cfg, "value_summary.json"), table, hash);
    return 0;
}

int cmd_bounds(const RunConfig& cfg) {
    const CatalogProblem cp = instantiate(cfg);
    const int n = cp.problem.state_dim();
    const std::string hash = config_hash(cfg);
    write_run_summary(cfg, "bounds");

    std::vector<BoundReport> reports;
    for (const double r : cfg.bound_radii)
        reports.push_back(compute_bounds(cp.problem, cp.terminal, r, cfg.samples_per_dim));

    std::vector<VerifyOutcome> verifications;
    if (!cfg.verify_z.empty()) {
        if (cfg.verify_z.size() % static_cast<size_t>(n) != 0)
            throw ConfigError("config: 'bounds.verify_z' length must be a multiple of " +
                              std::to_string(n));
        for (size_t k = 0; k + static_cast<size_t>(n) <= cfg.verify_z.size();
             k += static_cast<size_t>(n)) {
            Vector z(n);
            for (int i = 0; i < n; ++i) z[i] = cfg.verify_z[k + static_cast<size_t>(i)];
            verifications.push_back(
                verify_bounds(cp.problem, cp.terminal, z, reports.back(), cfg.flow));
        }
    }
    write_bounds_json(out_path(cfg, "bounds.json"), reports, verifications, hash);
    return 0;
}

int cmd_perturb(const RunConfig& cfg) {
    const CatalogProblem cp = instantiate(cfg);
    const int n = cp.problem.state_dim();
    const std::string hash = config_hash(cfg);
    write_run_summary(cfg, "perturb");

    PerturbOptions popts;
    popts.max_draws = cfg.max_draws;
    popts.scale = cfg.perturb_scale;
    popts.seed = cfg.seed;
    popts.r_in = cfg.r_in;
    popts.r_out = cfg.r_out;
    popts.tols = cfg.conjugate;
    popts.flow = cfg.flow;
    popts.threads = cfg.threads;

    const PerturbResult res = perturb_until_generic(cp.problem, cp.terminal, z_box(cfg, n),
                                                    popts);

    std::vector<TransversalityEntry> entries;
    for (const ConjugateCandidate& c : res.sweep.candidates) {
        TransversalityEntry e;
        e.z = c.z;
        e.v = c.v;
        try {
            e.result = transversality_rank(cp.problem, cp.terminal, res.bumps, c.z, c.v,
                                           cfg.flow, 0.0, cfg.threads);
        } catch (const EscapedNeighborhood&) {
            continue; // probe left the complete region; no rank to report
        }
        entries.push_back(std::move(e));
    }
    write_transversality_json(out_path(cfg, "transversality.json"), entries, &res, hash);
    return res.success ? 0 : 4;
}

} // namespace extremal
