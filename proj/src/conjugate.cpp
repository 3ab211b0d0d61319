#include "extremal/conjugate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "extremal/csv.hpp"
#include "extremal/worker_pool.hpp"

namespace extremal {

namespace {

Vector sign_normalized(const Vector& v) {
    int imax = 0;
    v.cwiseAbs().maxCoeff(&imax);
    return v[imax] < 0.0 ? Vector(-v) : v;
}

FlowOptions tightened(const FlowOptions& opts) {
    FlowOptions out = opts;
    out.rtol = std::min(opts.rtol, 1e-12);
    out.atol = std::min(opts.atol, 1e-14);
    return out;
}

SecondVariationMethod preferred_method(const TerminalCost& psi) {
    return psi.has_third() ? SecondVariationMethod::DirectionalODE
                           : SecondVariationMethod::CentralFD;
}

struct NodeEval {
    bool escaped = false;
    Matrix X0, Y0;
    Vector y;
    double det = 0.0;
};

NodeEval eval_node(const ProblemSpec& prob, const TerminalCost& psi, const Vector& z,
                   const FlowOptions& opts) {
    NodeEval out;
    try {
        VariationalBundle bundle = integrate_variational(prob, psi, z, opts);
        out.X0 = bundle.X0;
        out.Y0 = bundle.Y0;
        out.y = bundle.arc.x_at(0.0);
        out.det = bundle.X0.determinant();
    } catch (const ArcEscaped&) {
        out.escaped = true;
    }
    return out;
}

/// sigma_min(X(t)) > rank_tol (1 + ||X(t)||) at every sample time t > 0.
bool interior_rank_holds(const VariationalBundle& bundle, const ConjugateTolerances& tols) {
    const double T = bundle.arc.horizon;
    for (size_t k = 0; k < bundle.X.size(); ++k) {
        if (bundle.arc.samples[k].t <= 1e-12 * std::max(1.0, T)) continue;
        Eigen::JacobiSVD<Matrix> svd(bundle.X[k]);
        const Vector& s = svd.singularValues();
        if (s[s.size() - 1] <= tols.rank_tol * (1.0 + s[0])) return false;
    }
    return true;
}

/// Full candidate assembly at a locus point: rank data, membership residual
/// per near-null direction, interior-rank proxy.
ConjugateCandidate make_candidate(const ProblemSpec& prob, const TerminalCost& psi,
                                  const Vector& z, const ConjugateTolerances& tols,
                                  const FlowOptions& opts, bool refined) {
    VariationalBundle bundle = integrate_variational(prob, psi, z, opts);
    RankTest rt = rank_test(bundle.X0, tols);

    ConjugateCandidate cand;
    cand.z = z;
    cand.sigma_min = rt.sigma_min;
    cand.v = rt.v;
    cand.y = bundle.arc.x_at(0.0);
    cand.refined = refined;
    cand.det = bundle.X0.determinant();
    cand.interior_rank_ok = interior_rank_holds(bundle, tols);
    cand.null_basis = rt.null_basis;

    const SecondVariationMethod method = preferred_method(psi);
    const double first_tol = tols.rank_tol * (1.0 + rt.norm);
    cand.omega_residual = std::numeric_limits<double>::quiet_NaN();
    for (size_t i = 0; i < rt.null_basis.size(); ++i) {
        double s = std::numeric_limits<double>::quiet_NaN();
        try {
            SecondVariation sv =
                second_variation_along(prob, psi, z, rt.null_basis[i], method, opts);
            s = (bundle.Y0 * rt.null_basis[i]).dot(sv.xi0);
        } catch (const Error&) {
            // probe left the complete region; residual stays NaN for this direction
        }
        cand.basis_residuals.push_back(s);
        if (i == 0) cand.omega_residual = s;
        if (std::isfinite(s) && rt.sigmas[i] <= first_tol && std::abs(s) <= tols.omega_tol)
            cand.in_omega = true;
    }
    return cand;
}

struct Edge {
    long a, b; // node indices, a < b
};

/// Bisection for det X(0) = 0 on the segment between two grid nodes; the
/// bracket never leaves the cell.  Returns false when a probe arc escapes.
bool bisect_edge(const ProblemSpec& prob, const TerminalCost& psi, const Vector& z_lo,
                 const Vector& z_hi, double det_lo, double det_hi,
                 const ConjugateTolerances& tols, const FlowOptions& opts, Vector& z_out) {
    double lo = 0.0, hi = 1.0;
    auto point = [&](double lambda) { return Vector(z_lo + lambda * (z_hi - z_lo)); };
    double best_lambda = std::abs(det_lo) < std::abs(det_hi) ? 0.0 : 1.0;
    double best_det = std::min(std::abs(det_lo), std::abs(det_hi));
    for (int it = 0; it < tols.max_bisect; ++it) {
        const double mid = 0.5 * (lo + hi);
        NodeEval ev = eval_node(prob, psi, point(mid), opts);
        if (ev.escaped) return false;
        if (std::abs(ev.det) < best_det) {
            best_det = std::abs(ev.det);
            best_lambda = mid;
        }
        if (best_det <= tols.det_tol) break;
        if ((ev.det < 0.0) == (det_lo < 0.0))
            lo = mid;
        else
            hi = mid;
        if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon()) break;
    }
    z_out = point(best_lambda);
    return true;
}

} // namespace

RankTest rank_test(const Matrix& X0, const ConjugateTolerances& tols) {
    Eigen::JacobiSVD<Matrix> svd(X0, Eigen::ComputeFullV);
    const Vector& sig = svd.singularValues();
    const int n = static_cast<int>(sig.size());

    RankTest out;
    out.sigma_min = sig[n - 1];
    out.norm = sig[0];
    out.v = sign_normalized(svd.matrixV().col(n - 1));
    out.conjugate = out.sigma_min <= tols.rank_tol * (1.0 + out.norm);

    const double window = out.sigma_min + tols.null_gap * (1.0 + out.norm);
    out.null_basis.push_back(out.v);
    out.sigmas.push_back(out.sigma_min);
    for (int j = n - 2; j >= 0; --j) {
        if (sig[j] > window) break;
        out.null_basis.push_back(sign_normalized(svd.matrixV().col(j)));
        out.sigmas.push_back(sig[j]);
    }
    return out;
}

RankTest rank_test(const ProblemSpec& prob, const TerminalCost& psi, const Vector& z,
                   const ConjugateTolerances& tols, const FlowOptions& opts) {
    return rank_test(integrate_variational(prob, psi, z, opts).X0, tols);
}

OmegaResidual omega_psi_residual(const ProblemSpec& prob, const TerminalCost& psi,
                                 const Vector& z, const Vector& v,
                                 const ConjugateTolerances& tols, const FlowOptions& opts,
                                 SecondVariationMethod method) {
    VariationalBundle bundle = integrate_variational(prob, psi, z, opts);
    SecondVariation sv = second_variation_along(prob, psi, z, v, method, opts);

    OmegaResidual out;
    out.first = bundle.X0 * v;
    out.second = (bundle.Y0 * v).dot(sv.xi0);
    out.first_zero = out.first.norm() <= tols.rank_tol * (1.0 + bundle.X0.operatorNorm());
    out.second_zero = std::abs(out.second) <= tols.omega_tol;
    out.in_omega = out.first_zero && out.second_zero;
    return out;
}

SweepResult sweep_locus(const ProblemSpec& prob, const TerminalCost& psi,
                        const SweepBox& box, const ConjugateTolerances& tols,
                        const FlowOptions& opts, int threads) {
    validate_grid(box);
    const int dim = static_cast<int>(box.nodes_per_axis.size());
    const std::vector<long> strides = grid_strides(box.nodes_per_axis);
    const long count = grid_count(box);

    SweepResult result;
    result.grid_shape = box.nodes_per_axis;
    result.nodes.resize(static_cast<size_t>(count));
    std::vector<double> sigma_max(static_cast<size_t>(count), 0.0);

    parallel_for(count, threads, [&](long i) {
        const Vector z = grid_node(box, strides, i);
        NodeEval ev = eval_node(prob, psi, z, opts);
        SweepNode node;
        node.z = z;
        node.escaped = ev.escaped;
        if (!ev.escaped) {
            node.det = ev.det;
            node.y = ev.y;
            Eigen::JacobiSVD<Matrix> svd(ev.X0);
            const Vector& s = svd.singularValues();
            node.sigma_min = s[s.size() - 1];
            sigma_max[static_cast<size_t>(i)] = s[0];
        }
        result.nodes[static_cast<size_t>(i)] = std::move(node);
    });

    // Sign-change edges, enumerated node-major then axis-major so the
    // candidate list is schedule-independent.
    std::vector<Edge> edges;
    for (long i = 0; i < count; ++i) {
        for (int a = 0; a < dim; ++a) {
            const long ia = (i / strides[a]) % box.nodes_per_axis[a];
            if (ia + 1 >= box.nodes_per_axis[a]) continue;
            const long j = i + strides[a];
            if (result.nodes[i].escaped || result.nodes[j].escaped) {
                ++result.escaped_cells;
                continue;
            }
            if ((result.nodes[i].det < 0.0) != (result.nodes[j].det < 0.0) &&
                result.nodes[i].det != 0.0 && result.nodes[j].det != 0.0)
                edges.push_back({i, j});
        }
    }

    const FlowOptions fine = tightened(opts);
    std::vector<ConjugateCandidate> found(edges.size());
    std::vector<char> ok(edges.size(), 0);
    parallel_for(static_cast<long>(edges.size()), threads, [&](long e) {
        const Edge& edge = edges[static_cast<size_t>(e)];
        Vector z_ref;
        try {
            if (!bisect_edge(prob, psi, result.nodes[edge.a].z, result.nodes[edge.b].z,
                             result.nodes[edge.a].det, result.nodes[edge.b].det, tols, fine,
                             z_ref))
                return;
            found[static_cast<size_t>(e)] =
                make_candidate(prob, psi, z_ref, tols, fine, true);
            ok[static_cast<size_t>(e)] = 1;
        } catch (const Error&) {
            // refinement probe left the complete region; the edge is reported
        }
    });

    std::vector<ConjugateCandidate> candidates;
    for (size_t e = 0; e < edges.size(); ++e) {
        if (ok[e])
            candidates.push_back(std::move(found[e]));
        else
            ++result.escaped_cells;
    }

    // Threshold hits at grid nodes that no sign-change edge will refine
    // (even-multiplicity zeros, identically singular X(0)).
    std::vector<long> hit_nodes;
    for (long i = 0; i < count; ++i) {
        const SweepNode& node = result.nodes[static_cast<size_t>(i)];
        if (node.escaped) continue;
        if (node.sigma_min <= tols.rank_tol * (1.0 + sigma_max[static_cast<size_t>(i)]))
            hit_nodes.push_back(i);
    }
    std::vector<ConjugateCandidate> hits(hit_nodes.size());
    std::vector<char> hit_ok(hit_nodes.size(), 0);
    parallel_for(static_cast<long>(hit_nodes.size()), threads, [&](long k) {
        try {
            hits[static_cast<size_t>(k)] = make_candidate(
                prob, psi, result.nodes[static_cast<size_t>(hit_nodes[k])].z, tols, opts,
                false);
            hit_ok[static_cast<size_t>(k)] = 1;
        } catch (const Error&) {
            // node integrates at sweep tolerances but its membership probes do not
        }
    });
    for (size_t k = 0; k < hits.size(); ++k)
        if (hit_ok[k]) candidates.push_back(std::move(hits[k]));

    auto lex_less = [](const Vector& a, const Vector& b) {
        for (int i = 0; i < a.size(); ++i) {
            if (a[i] < b[i]) return true;
            if (a[i] > b[i]) return false;
        }
        return false;
    };
    // Refined candidates win dedup ties, so order them first.
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](const ConjugateCandidate& a, const ConjugateCandidate& b) {
                         if (a.refined != b.refined) return a.refined;
                         return lex_less(a.z, b.z);
                     });
    std::vector<ConjugateCandidate> unique;
    for (auto& cand : candidates) {
        bool dup = false;
        for (const auto& kept : unique)
            if ((cand.z - kept.z).norm() <= tols.dedup_tol * (1.0 + kept.z.norm())) {
                dup = true;
                break;
            }
        if (!dup) unique.push_back(std::move(cand));
    }
    std::sort(unique.begin(), unique.end(),
              [&](const ConjugateCandidate& a, const ConjugateCandidate& b) {
                  return lex_less(a.z, b.z);
              });
    result.candidates = std::move(unique);
    return result;
}

std::vector<ConjugateCandidate> gamma_psi_points(
    const std::vector<ConjugateCandidate>& candidates,
    const std::function<double(const Vector&)>& min_cost_at,
    const std::function<double(const Vector&)>& arc_cost_at, double tie_tol) {
    std::vector<ConjugateCandidate> out;
    for (const auto& cand : candidates) {
        const double own = arc_cost_at(cand.z);
        const double best = min_cost_at(cand.y);
        if (std::isfinite(own) && own <= best + tie_tol * (1.0 + std::abs(best)))
            out.push_back(cand);
    }
    return out;
}

void write_locus_csv(const std::string& path, const SweepResult& sweep, int state_dim,
                     const std::string& config_hash) {
    std::ofstream f = open_output(path);
    f << "# config_hash=" << config_hash << "\n";
    std::vector<std::string> header = indexed_names("z", state_dim);
    header.push_back("sigma_min");
    for (const auto& name : indexed_names("v", state_dim)) header.push_back(name);
    header.push_back("omega_residual");
    for (const auto& name : indexed_names("y", state_dim)) header.push_back(name);
    f << join_csv(header) << "\n";
    for (const ConjugateCandidate& cand : sweep.candidates) {
        std::vector<std::string> row;
        for (int i = 0; i < state_dim; ++i) row.push_back(fmt_double(cand.z[i]));
        row.push_back(fmt_double(cand.sigma_min));
        for (int i = 0; i < state_dim; ++i) row.push_back(fmt_double(cand.v[i]));
        row.push_back(fmt_double(cand.omega_residual));
        for (int i = 0; i < state_dim; ++i) row.push_back(fmt_double(cand.y[i]));
        f << join_csv(row) << "\n";
    }
}

} // namespace extremal
