#pragma once

#include <functional>
#include <string>
#include <vector>

#include "extremal/flow.hpp"
#include "extremal/grid.hpp"

namespace extremal {

// ---------------------------------------------------------------------------
// Conjugate point detection: rank deficiency of x_z(0,z) along extremals
// ---------------------------------------------------------------------------

struct ConjugateTolerances {
    double rank_tol = 1e-8;   // scaled by (1 + ||X(0)||)
    double det_tol = 1e-10;   // |det X(0)| target for refinement
    double omega_tol = 1e-6;  // second-component membership threshold
    double dedup_tol = 1e-6;  // scaled by (1 + |z|)
    double null_gap = 1e-6;   // near-multiple window, scaled by (1 + sigma_max)
    int max_bisect = 200;
};

struct RankTest {
    double sigma_min = 0.0;
    double norm = 0.0;              // operator norm of X(0)
    Vector v;                       // right-singular direction, sign-normalized
    bool conjugate = false;         // sigma_min <= rank_tol (1 + ||X(0)||)
    std::vector<Vector> null_basis; // right directions whose singular value sits
                                    // within null_gap (1 + sigma_max) of sigma_min;
                                    // null_basis[0] == v
    std::vector<double> sigmas;     // singular values for null_basis
};

/// Full SVD of X(0).  Every returned direction has its largest-magnitude
/// entry positive so downstream cubic residuals have a deterministic sign.
RankTest rank_test(const Matrix& X0, const ConjugateTolerances& tols = {});

/// Convenience wrapper: integrates the variational bundle at z first.
RankTest rank_test(const ProblemSpec& prob, const TerminalCost& psi, const Vector& z,
                   const ConjugateTolerances& tols = {}, const FlowOptions& opts = {});

struct OmegaResidual {
    Vector first;        // X(0) v
    double second = 0.0; // (Y(0) v) . x_zz(0,z)(v,v)
    bool first_zero = false;
    bool second_zero = false;
    bool in_omega = false;
};

/// Evaluates the candidate-membership residual (X(0)v, (Y(0)v) . Xi(0)).
OmegaResidual omega_psi_residual(const ProblemSpec& prob, const TerminalCost& psi,
                                 const Vector& z, const Vector& v,
                                 const ConjugateTolerances& tols = {},
                                 const FlowOptions& opts = {},
                                 SecondVariationMethod method =
                                     SecondVariationMethod::CentralFD);

struct ConjugateCandidate {
    Vector z;
    double sigma_min = 0.0;
    Vector v;
    double omega_residual = 0.0; // second membership component for v
    Vector y;                    // x(0, z)
    bool refined = false;
    double det = 0.0;
    bool interior_rank_ok = false; // sigma_min(X(t)) stays positive on (0, T]
    std::vector<Vector> null_basis;      // near-null directions, [0] == v
    std::vector<double> basis_residuals; // second component per basis vector
    bool in_omega = false; // some basis direction meets both membership tests
};

struct SweepNode {
    Vector z;
    bool escaped = false;
    double sigma_min = 0.0;
    double det = 0.0;
    Vector y;
};

struct SweepResult {
    std::vector<SweepNode> nodes; // grid order, last axis fastest
    std::vector<ConjugateCandidate> candidates; // sorted by z lexicographic
    std::vector<int> grid_shape;
    long escaped_cells = 0; // grid edges skipped because an endpoint escaped
};

using SweepBox = GridBox;

/// Scans the grid for sign changes of det X(0) across adjacent nodes and for
/// sigma_min below threshold; each sign-change edge is refined by bisection
/// on the connecting segment down to |det| <= det_tol (refinement re-solves
/// with tightened integrator tolerances so the target is resolvable).  Nodes
/// whose arcs escape are reported and skipped.  Deterministic: per-node and
/// per-edge work is index-addressed and the merge is sorted.
SweepResult sweep_locus(const ProblemSpec& prob, const TerminalCost& psi,
                        const SweepBox& box, const ConjugateTolerances& tols = {},
                        const FlowOptions& opts = {}, int threads = 1);

/// Filters candidates to those whose own arc cost attains the global minimum
/// among the extremals reaching y = x(0,z), within tie_tol.  min_cost_at
/// reports the best cost over discovered extremals reaching a point;
/// arc_cost_at reports the candidate arc's own cost.
std::vector<ConjugateCandidate> gamma_psi_points(
    const std::vector<ConjugateCandidate>& candidates,
    const std::function<double(const Vector&)>& min_cost_at,
    const std::function<double(const Vector&)>& arc_cost_at, double tie_tol = 1e-8);

/// CSV columns z1..zn,sigma_min,v1..vn,omega_residual,y1..yn.
void write_locus_csv(const std::string& path, const SweepResult& sweep, int state_dim,
                     const std::string& config_hash);

} // namespace extremal
