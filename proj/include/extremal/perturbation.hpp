#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "extremal/conjugate.hpp"

namespace extremal {

// ---------------------------------------------------------------------------
// Localized polynomial perturbations of the terminal cost, the transversality
// rank of the candidate-membership map under them, and a randomized search
// for a perturbation that empties the membership set on a grid.
// ---------------------------------------------------------------------------

/// One bump: a cubic polynomial in (z - center) cut off by a smooth radial
/// plateau function.  theta stacks the n^2 quadratic coefficients (row-major)
/// followed by the n cubic coefficients.
struct BumpPerturbation {
    Vector center;
    Vector theta;
    double r_in = 1.0;  // cutoff is identically 1 inside this radius
    double r_out = 2.0; // and identically 0 outside this one
};

// --- cubic polynomial phi(theta, y) = sum th_ij y_i y_j + sum th_k y_k^3 ----

double phi_value(const Vector& theta, const Vector& y);
/// Component i: sum_j (th_ij + th_ji) y_j + 3 th_i y_i^2.
Vector phi_grad(const Vector& theta, const Vector& y);
/// Off-diagonal th_ij + th_ji, diagonal 2 th_ii + 6 th_i y_i.
Matrix phi_hess(const Vector& theta, const Vector& y);
/// D^3 phi (v, v, .): component k is 6 th_k v_k^2, independent of y.
Vector phi_third_dir(const Vector& theta, const Vector& v);

// --- smooth radial cutoff: 1 on |y| <= r_in, 0 on |y| >= r_out -------------

double eta_value(const Vector& y, double r_in = 1.0, double r_out = 2.0);
Vector eta_grad(const Vector& y, double r_in = 1.0, double r_out = 2.0);
Matrix eta_hess(const Vector& y, double r_in = 1.0, double r_out = 2.0);
Vector eta_third_dir(const Vector& y, const Vector& v, double r_in = 1.0,
                     double r_out = 2.0);
/// Derivatives up to order 4 of t -> eta(y + t dir) at t = 0.
std::array<double, 5> eta_directional_jet(const Vector& y, const Vector& dir,
                                          double r_in = 1.0, double r_out = 2.0);

/// Derivatives up to order 4 of t -> eta * phi evaluated along z + t dir.
std::array<double, 5> bump_directional_jet(const BumpPerturbation& bump, const Vector& z,
                                           const Vector& dir);

/// psi + sum of cut-off bumps, with gradient and Hessian assembled by the
/// product rule.  Third-order directional data is provided exactly when the
/// base cost provides it.  Outside every bump's outer radius the base cost is
/// returned untouched, so values and all derivatives agree there exactly.
TerminalCost perturbed_terminal(const TerminalCost& base,
                                const std::vector<BumpPerturbation>& bumps);

/// Sampled directional C^4 seminorm of the bump sum (report metadata: the
/// declared perturbation-size budget convention).
double bump_c4_estimate(const std::vector<BumpPerturbation>& bumps);

// --- transversality rank of the membership map ------------------------------

struct TransversalityResult {
    Matrix jacobian; // (n+1) x ((n^2+n) * #bumps), columns in theta order
    std::vector<double> sigmas;
    int rank = 0;
    double fd_step = 0.0;
};

/// Central finite differences in theta of Phi(z, v) = (X(0) v, (Y(0) v) . Xi(0))
/// at the bumps' current theta.  Numeric rank via SVD at 1e-6 sigma_max.
/// Escaping probe arcs raise EscapedNeighborhood.  Columns are evaluated in
/// parallel into fixed slots, so the result is worker-count independent.
TransversalityResult transversality_rank(const ProblemSpec& prob, const TerminalCost& base,
                                         const std::vector<BumpPerturbation>& bumps,
                                         const Vector& z, const Vector& v,
                                         const FlowOptions& opts = {},
                                         double fd_step = 0.0, int threads = 1);

// --- randomized search for a generic perturbation ---------------------------

struct PerturbOptions {
    int max_draws = 10;    // draw 0 is theta = 0
    double scale = 0.05;   // radius of the uniform theta ball, per bump
    std::uint64_t seed = 0;
    double r_in = 1.0;
    double r_out = 2.0;
    ConjugateTolerances tols;
    FlowOptions flow;
    int threads = 1;
};

struct PerturbResult {
    bool success = false;
    int draws_used = 0;                  // accepted draw index; max_draws on failure
    std::vector<BumpPerturbation> bumps; // accepted (or last tried) family
    SweepResult sweep;                   // conjugate sweep under those bumps
    std::vector<ConjugateCandidate> violating; // candidates still in the set
    double c4_estimate = 0.0;
    std::uint64_t seed = 0;
    double scale = 0.0;
};

/// Covers the box with bump centers on an axis grid of spacing <= r_in (so
/// every box point lies in some plateau), then tries theta = 0 followed by
/// random draws until the conjugate sweep reports no candidate meeting both
/// membership conditions.  Runs out of draws reporting success = false with
/// the violating candidates attached; the caller decides severity.
PerturbResult perturb_until_generic(const ProblemSpec& prob, const TerminalCost& base,
                                    const GridBox& z_box, const PerturbOptions& opts = {});

// --- artifact ----------------------------------------------------------------

struct TransversalityEntry {
    Vector z, v;
    TransversalityResult result;
};

void write_transversality_json(const std::string& path,
                               const std::vector<TransversalityEntry>& entries,
                               const PerturbResult* perturb,
                               const std::string& config_hash);

} // namespace extremal
