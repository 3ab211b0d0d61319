#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "extremal/flow.hpp"
#include "extremal/grid.hpp"

namespace extremal {

// ---------------------------------------------------------------------------
// Extremal costs, reachability, value function, and the pair map
// ---------------------------------------------------------------------------

struct ExtremalRecord {
    Vector z;
    Vector y; // x at the arc's earliest time (x(0,z) when Complete)
    ArcStatus status = ArcStatus::Complete;
    double W = 0.0; // +inf sentinel for Escaped arcs
};

/// W(z) = integral of L(x,u) over the arc plus psi(z), by composite
/// Gauss-Legendre quadrature over the dense-output pieces.
ExtremalRecord trajectory_cost(const ProblemSpec& prob, const TerminalCost& psi,
                               const Vector& z, const FlowOptions& opts = {});

/// grad W(z) = X(0)^T p(0), the adjoint-gradient identity.
Vector cost_gradient(const ProblemSpec& prob, const TerminalCost& psi, const Vector& z,
                     const FlowOptions& opts = {});

struct ReachOptions {
    int random_starts = 8;
    uint64_t seed = 0;
    double tie_tol = 1e-8;      // absolute on W
    double reach_tol = 1e-9;    // |x(0,z) - y|
    double dedup_radius = 1e-6; // scaled by (1 + |z|)
    int max_newton = 50;
    int jacobian_refresh = 3;   // Newton reuses X(0) this many steps
    double seed_cells = 2.0;    // image-distance window, in local cell sizes
};

/// Precomputed scan of a z-box: arcs at every grid node, kept so repeated
/// reach calls share one seeding pass.
struct ReachContext {
    GridBox box;
    std::vector<Vector> z_nodes;
    std::vector<Vector> images; // x(0,z); empty when the node escaped
    std::vector<char> escaped;
    std::vector<double> cell_size; // local image spacing per node
};

ReachContext make_reach_context(const ProblemSpec& prob, const TerminalCost& psi,
                                const GridBox& box, const FlowOptions& opts = {},
                                int threads = 1);

struct ReachSolution {
    Vector y;
    std::vector<Vector> roots;  // ranked by cost, then z lexicographic
    std::vector<double> costs;
    double V = 0.0;             // min cost; +inf when nothing was found
    std::vector<int> minimizers; // indices with W <= V + tie_tol
    bool multiplicity = false;
    bool found = false;
};

/// Multi-start damped Newton on F(z) = x(0,z) - y with X(0) as the Jacobian.
/// Seeds: context nodes whose image lies within seed_cells local cells of y,
/// the image-nearest node, and random_starts box draws from a stream indexed
/// by (seed, task_index) so grids of calls stay deterministic.
ReachSolution reach(const ProblemSpec& prob, const TerminalCost& psi, const Vector& y,
                    const ReachContext& ctx, const ReachOptions& ropts = {},
                    const FlowOptions& fopts = {}, uint64_t task_index = 0);

/// Convenience overload building a one-shot context.
ReachSolution reach(const ProblemSpec& prob, const TerminalCost& psi, const Vector& y,
                    const GridBox& z_box, const ReachOptions& ropts = {},
                    const FlowOptions& fopts = {}, int threads = 1);

struct ValueNode {
    Vector y;
    double V = 0.0;
    bool multiplicity = false;
    int count_roots = 0;
    bool found = false;
    std::vector<Vector> minimizing_z;
};

struct ValueTable {
    GridBox y_grid;
    std::vector<ValueNode> nodes; // grid order, last axis fastest
};

/// reach on every y-grid node, in parallel, with a shared z-scan.
ValueTable value_function(const ProblemSpec& prob, const TerminalCost& psi,
                          const GridBox& y_grid, const GridBox& z_box,
                          const ReachOptions& ropts = {}, const FlowOptions& fopts = {},
                          int threads = 1);

struct PairResidual {
    Vector phi;      // (x(0,z1) - x(0,z2), W(z1) - W(z2)), in R^{n+1}
    Matrix jacobian; // rows [X(0,z1), -X(0,z2)] and [grad W(z1), -grad W(z2)]
    int rank = 0;    // SVD rank at threshold 1e-8 sigma_max
    double sigma_max = 0.0;
    double sigma_min = 0.0;
};

PairResidual pair_residual(const ProblemSpec& prob, const TerminalCost& psi,
                           const Vector& z1, const Vector& z2,
                           const FlowOptions& opts = {});

/// value.csv columns y1..yn,V,mult,count_roots (V is "inf" where no extremal
/// was found).
void write_value_csv(const std::string& path, const ValueTable& table,
                     const std::string& config_hash);
/// vpsi.csv: the multiplicity rows of value.csv, same columns.
void write_vpsi_csv(const std::string& path, const ValueTable& table,
                    const std::string& config_hash);
/// JSON summary: V extrema, multiplicity node count and cluster statistics.
void write_value_summary(const std::string& path, const ValueTable& table,
                         const std::string& config_hash);

} // namespace extremal
