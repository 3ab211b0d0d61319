#include "extremal/optimality.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "extremal/csv.hpp"
#include "extremal/worker_pool.hpp"

namespace extremal {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 7-point Gauss-Legendre rule on [-1, 1].
constexpr int kQuadOrder = 7;
constexpr double kQuadNode[kQuadOrder] = {
    -0.9491079123427585, -0.7415311855993945, -0.4058451513773972, 0.0,
    0.4058451513773972,  0.7415311855993945,  0.9491079123427585};
constexpr double kQuadWeight[kQuadOrder] = {
    0.1294849661688697, 0.2797053914892766, 0.3818300505051189, 0.4179591836734694,
    0.3818300505051189, 0.2797053914892766, 0.1294849661688697};

double running_cost_integral(const ProblemSpec& prob, const ExtremalArc& arc) {
    const int n = arc.state_dim;
    double total = 0.0;
    for (const DensePiece& piece : arc.dense.inner.pieces) {
        // A piece [s0, s0+h] covers t in [T - s0 - h, T - s0].
        const double t_hi = arc.dense.T - piece.s0;
        const double t_lo = t_hi - piece.h;
        const double half = 0.5 * (t_hi - t_lo);
        const double mid = 0.5 * (t_hi + t_lo);
        double piece_sum = 0.0;
        for (int k = 0; k < kQuadOrder; ++k) {
            const double t = mid + half * kQuadNode[k];
            const Vector state = arc.dense.eval(t);
            const Vector x = state.head(n);
            const Vector p = state.segment(n, n);
            const Vector u = pointwise_minimizer(prob, x, p);
            piece_sum += kQuadWeight[k] * prob.cost.value(x, u);
        }
        total += half * piece_sum;
    }
    return total;
}

bool lex_less(const Vector& a, const Vector& b) {
    for (int i = 0; i < a.size(); ++i) {
        if (a[i] < b[i]) return true;
        if (a[i] > b[i]) return false;
    }
    return false;
}

struct NewtonOutcome {
    bool ok = false;
    Vector z;
    double resid = kInf;
};

/// Damped Newton on F(z) = x(0,z) - y with the variational Jacobian X(0),
/// refreshed every jacobian_refresh accepted steps.
NewtonOutcome newton_to_target(const ProblemSpec& prob, const TerminalCost& psi,
                               const Vector& y, const Vector& z0,
                               const ReachOptions& ropts, const FlowOptions& fopts) {
    NewtonOutcome out;
    auto eval_F = [&](const Vector& zz, Vector& F) -> bool {
        ExtremalArc arc = integrate_backward(prob, psi, zz, fopts);
        if (arc.status == ArcStatus::Escaped) return false;
        F = arc.x_at(0.0) - y;
        return true;
    };

    Vector z = z0, F;
    if (!eval_F(z, F)) return out;

    Matrix X;
    int since_refresh = ropts.jacobian_refresh; // force a refresh immediately
    for (int iter = 0; iter < ropts.max_newton && F.norm() > ropts.reach_tol; ++iter) {
        if (since_refresh >= ropts.jacobian_refresh) {
            try {
                X = integrate_variational(prob, psi, z, fopts).X0;
            } catch (const ArcEscaped&) {
                return out;
            }
            since_refresh = 0;
        }
        Eigen::ColPivHouseholderQR<Matrix> qr(X);
        Vector d = qr.solve(-F);
        if (!d.allFinite()) return out;

        bool accepted = false;
        for (double lambda = 1.0; lambda >= 1.0 / 1024.0; lambda *= 0.5) {
            Vector F_new;
            const Vector z_new = z + lambda * d;
            if (!eval_F(z_new, F_new)) continue;
            if (F_new.norm() <= (1.0 - 0.25 * lambda) * F.norm()) {
                z = z_new;
                F = F_new;
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            if (since_refresh > 0) {
                since_refresh = ropts.jacobian_refresh; // retry with a fresh Jacobian
                continue;
            }
            return out;
        }
        ++since_refresh;
    }

    // Re-verify with a fresh integration before reporting the root.
    if (!eval_F(z, F) || F.norm() > ropts.reach_tol) return out;
    out.ok = true;
    out.z = z;
    out.resid = F.norm();
    return out;
}

} // namespace

ExtremalRecord trajectory_cost(const ProblemSpec& prob, const TerminalCost& psi,
                               const Vector& z, const FlowOptions& opts) {
    ExtremalArc arc = integrate_backward(prob, psi, z, opts);
    ExtremalRecord rec;
    rec.z = z;
    rec.status = arc.status;
    rec.y = arc.x_at(arc.t_min());
    if (arc.status == ArcStatus::Escaped) {
        rec.W = kInf;
        return rec;
    }
    rec.W = running_cost_integral(prob, arc) + psi.value(z);
    return rec;
}

Vector cost_gradient(const ProblemSpec& prob, const TerminalCost& psi, const Vector& z,
                     const FlowOptions& opts) {
    VariationalBundle bundle = integrate_variational(prob, psi, z, opts);
    return bundle.X0.transpose() * bundle.arc.p_at(0.0);
}

ReachContext make_reach_context(const ProblemSpec& prob, const TerminalCost& psi,
                                const GridBox& box, const FlowOptions& opts,
                                int threads) {
    validate_grid(box);
    const std::vector<long> strides = grid_strides(box.nodes_per_axis);
    const long count = grid_count(box);
    const int dim = static_cast<int>(box.nodes_per_axis.size());

    ReachContext ctx;
    ctx.box = box;
    ctx.z_nodes.resize(static_cast<size_t>(count));
    ctx.images.resize(static_cast<size_t>(count));
    ctx.escaped.assign(static_cast<size_t>(count), 0);
    ctx.cell_size.assign(static_cast<size_t>(count), 0.0);

    parallel_for(count, threads, [&](long i) {
        const Vector z = grid_node(box, strides, i);
        ctx.z_nodes[static_cast<size_t>(i)] = z;
        ExtremalArc arc = integrate_backward(prob, psi, z, opts);
        if (arc.status == ArcStatus::Escaped)
            ctx.escaped[static_cast<size_t>(i)] = 1;
        else
            ctx.images[static_cast<size_t>(i)] = arc.x_at(0.0);
    });

    // Local image spacing: the largest image jump to a complete axis neighbor.
    for (long i = 0; i < count; ++i) {
        if (ctx.escaped[static_cast<size_t>(i)]) continue;
        double spacing = 0.0;
        for (int a = 0; a < dim; ++a) {
            const long ia = (i / strides[a]) % box.nodes_per_axis[a];
            for (long j : {i - strides[a], i + strides[a]}) {
                if (j < 0 || j >= count) continue;
                const long ja = (j / strides[a]) % box.nodes_per_axis[a];
                if (std::abs(ja - ia) != 1) continue;
                if (ctx.escaped[static_cast<size_t>(j)]) continue;
                spacing = std::max(
                    spacing, (ctx.images[static_cast<size_t>(j)] -
                              ctx.images[static_cast<size_t>(i)])
                                 .norm());
            }
        }
        ctx.cell_size[static_cast<size_t>(i)] = spacing;
    }
    return ctx;
}

ReachSolution reach(const ProblemSpec& prob, const TerminalCost& psi, const Vector& y,
                    const ReachContext& ctx, const ReachOptions& ropts,
                    const FlowOptions& fopts, uint64_t task_index) {
    ReachSolution sol;
    sol.y = y;

    // Seeds in a deterministic order: image-window nodes, the nearest node,
    // then seeded random draws from the box.
    std::vector<Vector> seeds;
    long nearest = -1;
    double nearest_dist = kInf;
    for (size_t i = 0; i < ctx.z_nodes.size(); ++i) {
        if (ctx.escaped[i]) continue;
        const double dist = (ctx.images[i] - y).norm();
        if (dist < nearest_dist) {
            nearest_dist = dist;
            nearest = static_cast<long>(i);
        }
        if (dist <= ropts.seed_cells * ctx.cell_size[i]) seeds.push_back(ctx.z_nodes[i]);
    }
    if (nearest >= 0) seeds.push_back(ctx.z_nodes[static_cast<size_t>(nearest)]);
    const int dim = static_cast<int>(ctx.box.nodes_per_axis.size());
    for (int k = 0; k < ropts.random_starts; ++k) {
        SplitMix64 rng(ropts.seed, task_index * 1000003ULL + static_cast<uint64_t>(k));
        Vector z(dim);
        for (int a = 0; a < dim; ++a) z[a] = rng.uniform(ctx.box.lo[a], ctx.box.hi[a]);
        seeds.push_back(z);
    }

    std::vector<NewtonOutcome> outcomes(seeds.size());
    for (size_t s = 0; s < seeds.size(); ++s)
        outcomes[s] = newton_to_target(prob, psi, y, seeds[s], ropts, fopts);

    // Deduplicate in seed order.
    std::vector<Vector> roots;
    for (const NewtonOutcome& out : outcomes) {
        if (!out.ok) continue;
        bool dup = false;
        for (const Vector& kept : roots)
            if ((out.z - kept).norm() <= ropts.dedup_radius * (1.0 + kept.norm())) {
                dup = true;
                break;
            }
        if (!dup) roots.push_back(out.z);
    }
    if (roots.empty()) {
        sol.V = kInf;
        return sol;
    }

    std::vector<double> costs(roots.size());
    for (size_t i = 0; i < roots.size(); ++i)
        costs[i] = trajectory_cost(prob, psi, roots[i], fopts).W;

    std::vector<size_t> order(roots.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (costs[a] != costs[b]) return costs[a] < costs[b];
        return lex_less(roots[a], roots[b]);
    });
    for (size_t i : order) {
        sol.roots.push_back(roots[i]);
        sol.costs.push_back(costs[i]);
    }
    sol.found = true;
    sol.V = sol.costs.front();
    for (int i = 0; i < static_cast<int>(sol.costs.size()); ++i)
        if (sol.costs[i] <= sol.V + ropts.tie_tol) sol.minimizers.push_back(i);
    sol.multiplicity = sol.minimizers.size() >= 2;
    return sol;
}

ReachSolution reach(const ProblemSpec& prob, const TerminalCost& psi, const Vector& y,
                    const GridBox& z_box, const ReachOptions& ropts,
                    const FlowOptions& fopts, int threads) {
    return reach(prob, psi, y, make_reach_context(prob, psi, z_box, fopts, threads),
                 ropts, fopts, 0);
}

ValueTable value_function(const ProblemSpec& prob, const TerminalCost& psi,
                          const GridBox& y_grid, const GridBox& z_box,
                          const ReachOptions& ropts, const FlowOptions& fopts,
                          int threads) {
    validate_grid(y_grid);
    const ReachContext ctx = make_reach_context(prob, psi, z_box, fopts, threads);
    const std::vector<long> strides = grid_strides(y_grid.nodes_per_axis);
    const long count = grid_count(y_grid);

    ValueTable table;
    table.y_grid = y_grid;
    table.nodes.resize(static_cast<size_t>(count));
    parallel_for(count, threads, [&](long k) {
        const Vector y = grid_node(y_grid, strides, k);
        ReachSolution sol =
            reach(prob, psi, y, ctx, ropts, fopts, static_cast<uint64_t>(k));
        ValueNode node;
        node.y = y;
        node.V = sol.V;
        node.multiplicity = sol.multiplicity;
        node.count_roots = static_cast<int>(sol.roots.size());
        node.found = sol.found;
        for (int i : sol.minimizers) node.minimizing_z.push_back(sol.roots[i]);
        table.nodes[static_cast<size_t>(k)] = std::move(node);
    });
    return table;
}

PairResidual pair_residual(const ProblemSpec& prob, const TerminalCost& psi,
                           const Vector& z1, const Vector& z2, const FlowOptions& opts) {
    if ((z1 - z2).norm() == 0.0)
        throw ConfigError("pair_residual: the two terminal points coincide");

    VariationalBundle b1 = integrate_variational(prob, psi, z1, opts);
    VariationalBundle b2 = integrate_variational(prob, psi, z2, opts);
    const double W1 = trajectory_cost(prob, psi, z1, opts).W;
    const double W2 = trajectory_cost(prob, psi, z2, opts).W;
    const int n = prob.state_dim();

    PairResidual out;
    out.phi.resize(n + 1);
    out.phi.head(n) = b1.arc.x_at(0.0) - b2.arc.x_at(0.0);
    out.phi[n] = W1 - W2;

    out.jacobian.resize(n + 1, 2 * n);
    out.jacobian.topLeftCorner(n, n) = b1.X0;
    out.jacobian.topRightCorner(n, n) = -b2.X0;
    out.jacobian.row(n).head(n) = (b1.X0.transpose() * b1.arc.p_at(0.0)).transpose();
    out.jacobian.row(n).tail(n) = -(b2.X0.transpose() * b2.arc.p_at(0.0)).transpose();

    Eigen::JacobiSVD<Matrix> svd(out.jacobian);
    const Vector& sig = svd.singularValues();
    out.sigma_max = sig[0];
    out.sigma_min = sig[sig.size() - 1];
    out.rank = 0;
    for (int i = 0; i < sig.size(); ++i)
        if (sig[i] > 1e-8 * out.sigma_max) ++out.rank;
    return out;
}

namespace {

std::vector<std::string> value_header(int y_dim) {
    std::vector<std::string> header = indexed_names("y", y_dim);
    header.push_back("V");
    header.push_back("mult");
    header.push_back("count_roots");
    return header;
}

std::vector<std::string> value_row(const ValueNode& node) {
    std::vector<std::string> row;
    for (int i = 0; i < node.y.size(); ++i) row.push_back(fmt_double(node.y[i]));
    row.push_back(fmt_double(node.V));
    row.push_back(node.multiplicity ? "1" : "0");
    row.push_back(std::to_string(node.count_roots));
    return row;
}

/// Connected components of multiplicity nodes under grid adjacency.
std::vector<int> multiplicity_cluster_sizes(const ValueTable& table) {
    const std::vector<long> strides = grid_strides(table.y_grid.nodes_per_axis);
    const long count = static_cast<long>(table.nodes.size());
    const int dim = static_cast<int>(table.y_grid.nodes_per_axis.size());
    std::vector<char> seen(table.nodes.size(), 0);
    std::vector<int> sizes;
    for (long i = 0; i < count; ++i) {
        if (seen[static_cast<size_t>(i)] || !table.nodes[static_cast<size_t>(i)].multiplicity)
            continue;
        int size = 0;
        std::vector<long> stack{i};
        seen[static_cast<size_t>(i)] = 1;
        while (!stack.empty()) {
            const long u = stack.back();
            stack.pop_back();
            ++size;
            for (int a = 0; a < dim; ++a) {
                const long ua = (u / strides[a]) % table.y_grid.nodes_per_axis[a];
                for (long v : {u - strides[a], u + strides[a]}) {
                    if (v < 0 || v >= count) continue;
                    const long va = (v / strides[a]) % table.y_grid.nodes_per_axis[a];
                    if (std::abs(va - ua) != 1) continue;
                    if (seen[static_cast<size_t>(v)] ||
                        !table.nodes[static_cast<size_t>(v)].multiplicity)
                        continue;
                    seen[static_cast<size_t>(v)] = 1;
                    stack.push_back(v);
                }
            }
        }
        sizes.push_back(size);
    }
    return sizes;
}

} // namespace

void write_value_csv(const std::string& path, const ValueTable& table,
                     const std::string& config_hash) {
    std::ofstream f = open_output(path);
    f << "# config_hash=" << config_hash << "\n";
    const int dim = static_cast<int>(table.y_grid.nodes_per_axis.size());
    f << join_csv(value_header(dim)) << "\n";
    for (const ValueNode& node : table.nodes) f << join_csv(value_row(node)) << "\n";
}

void write_vpsi_csv(const std::string& path, const ValueTable& table,
                    const std::string& config_hash) {
    std::ofstream f = open_output(path);
    f << "# config_hash=" << config_hash << "\n";
    const int dim = static_cast<int>(table.y_grid.nodes_per_axis.size());
    f << join_csv(value_header(dim)) << "\n";
    for (const ValueNode& node : table.nodes)
        if (node.multiplicity) f << join_csv(value_row(node)) << "\n";
}

void write_value_summary(const std::string& path, const ValueTable& table,
                         const std::string& config_hash) {
    double v_min = kInf, v_max = -kInf;
    long found = 0, mult = 0;
    for (const ValueNode& node : table.nodes) {
        if (!node.found) continue;
        ++found;
        v_min = std::min(v_min, node.V);
        v_max = std::max(v_max, node.V);
        if (node.multiplicity) ++mult;
    }
    std::vector<int> clusters = multiplicity_cluster_sizes(table);

    nlohmann::json j;
    j["config_hash"] = config_hash;
    j["nodes"] = table.nodes.size();
    j["found_nodes"] = found;
    j["v_min"] = found ? fmt_double(v_min) : "inf";
    j["v_max"] = found ? fmt_double(v_max) : "-inf";
    j["multiplicity_nodes"] = mult;
    j["multiplicity_clusters"] = clusters.size();
    j["largest_cluster"] = clusters.empty() ? 0 : *std::max_element(clusters.begin(),
                                                                    clusters.end());
    j["scope"] = "relative to discovered extremal set";
    std::ofstream f = open_output(path);
    f << j.dump(2) << "\n";
}

} // namespace extremal
