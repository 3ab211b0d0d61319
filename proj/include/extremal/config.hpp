#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "extremal/catalog.hpp"
#include "extremal/conjugate.hpp"
#include "extremal/optimality.hpp"

namespace extremal {

// ---------------------------------------------------------------------------
// Run configuration: flat sectioned text, one file per run.
//
//   [problem]    label, horizon, plus the catalog's per-problem parameters
//   [terminal]   family plus its coefficients (omit to keep the catalog default)
//   [flow]       rtol, atol, escape_radius, samples, max_step
//   [grids]      z_lo, z_hi, z_nodes, y_lo, y_hi, y_nodes (scalars broadcast)
//   [tolerances] rank_tol, det_tol, omega_tol, dedup_tol, null_gap, max_bisect,
//                tie_tol, reach_tol, dedup_radius, random_starts, max_newton,
//                jacobian_refresh, seed_cells
//   [solve]      z (comma list, one entry per state dimension)
//   [figure1]    z_lo, z_hi, z_step
//   [reach]      y (comma list)
//   [bounds]     radii, samples_per_dim, verify_z (flat list, n entries per point)
//   [perturb]    max_draws, scale, r_in, r_out
//   [run]        seed, threads, out
//
// '#' starts a comment.  Unknown sections and keys are rejected with their
// line number; problem/terminal parameter names are validated by the catalog.
// ---------------------------------------------------------------------------

struct RunConfig {
    std::string label = "single_integrator_cos";
    ParamMap problem_params;
    double horizon = 0.0; // 0 keeps the catalog default
    std::string terminal_family;
    ParamMap terminal_params;

    FlowOptions flow;

    std::vector<double> z_lo{-2.0}, z_hi{2.0};
    std::vector<int> z_nodes{161};
    std::vector<double> y_lo{-3.0}, y_hi{3.0};
    std::vector<int> y_nodes{241};

    ConjugateTolerances conjugate;
    ReachOptions reach; // seed is overridden by run.seed

    std::vector<double> solve_z;
    double fig_lo = -2.0, fig_hi = 2.0, fig_step = 0.25;
    std::vector<double> reach_y{0.0};

    std::vector<double> bound_radii{0.5, 1.0, 2.0, 4.0};
    long samples_per_dim = 4096;
    std::vector<double> verify_z;

    int max_draws = 10;
    double perturb_scale = 0.05;
    double r_in = 1.0, r_out = 2.0;

    std::uint64_t seed = 0;
    int threads = 1;
    std::string out_dir = "out";
};

/// Parses the sectioned text; throws ConfigError naming the offending line.
RunConfig parse_config_text(const std::string& text);

/// Reads the file, parses it, applies EXTREMAL_* environment overrides for
/// the [tolerances] keys, and validates ranges.
RunConfig load_config(const std::string& path);

/// Applies EXTREMAL_<KEY> (upper-cased tolerance key) overrides in place.
void apply_env_overrides(RunConfig& cfg);

/// Range validation shared by load_config and hand-built configs.
void validate_config(const RunConfig& cfg);

/// Deterministic serialization of every semantic field.  Worker count and
/// output directory are excluded so reruns across machines and thread counts
/// hash identically.
std::string canonical_config(const RunConfig& cfg);

/// FNV-1a 64 of canonical_config, 16 hex digits.
std::string config_hash(const RunConfig& cfg);

/// Instantiates the catalog problem, applying the terminal-family and
/// horizon overrides.
CatalogProblem instantiate(const RunConfig& cfg);

/// z-box / y-grid for an n-dimensional problem; length-1 entries broadcast.
GridBox z_box(const RunConfig& cfg, int n);
GridBox y_grid(const RunConfig& cfg, int n);

} // namespace extremal
