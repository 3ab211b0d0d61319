#include "extremal/perturbation.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include <Eigen/SVD>
#include <json.hpp>

#include "extremal/csv.hpp"
#include "extremal/taylor_jet.hpp"
#include "extremal/worker_pool.hpp"

namespace extremal {

namespace {

int state_dim_of(const Vector& theta) {
    // theta holds n^2 + n coefficients
    const double n = 0.5 * (std::sqrt(4.0 * static_cast<double>(theta.size()) + 1.0) - 1.0);
    const int ni = static_cast<int>(std::lround(n));
    if (static_cast<long>(ni) * ni + ni != theta.size())
        throw DimensionMismatch("theta length is not of the form n^2 + n");
    return ni;
}

void check_theta(const Vector& theta, const Vector& y) {
    if (state_dim_of(theta) != y.size())
        throw DimensionMismatch("theta does not match the state dimension");
}

double th_mat(const Vector& theta, int n, int i, int j) { return theta[i * n + j]; }
double th_cub(const Vector& theta, int n, int k) { return theta[n * n + k]; }

// --- smooth plateau profile --------------------------------------------------

/// Profile of the cutoff as a function of rho = |y|^2, evaluated on jets:
/// identically 1 for rho <= r_in^2, identically 0 for rho >= r_out^2, and a
/// standard exp(-1/t) transition in between.  Branching on the jet's value is
/// exact because every derivative of the transition vanishes at both edges.
Jet4 eta_profile(const Jet4& rho, double r_in, double r_out) {
    const double a = r_in * r_in;
    const double b = r_out * r_out;
    const Jet4 t = (1.0 / (b - a)) * (Jet4::constant(b) - rho);
    if (t.d[0] <= 1e-8) return Jet4::constant(0.0);
    if (t.d[0] >= 1.0 - 1e-8) return Jet4::constant(1.0);
    const Jet4 lo = jexp(-recip(t));
    const Jet4 hi = jexp(-recip(Jet4::constant(1.0) - t));
    return lo / (lo + hi);
}

Jet4 rho_jet(const Vector& y, const Vector& dir) {
    Jet4 rho;
    rho.d[0] = y.squaredNorm();
    rho.d[1] = 2.0 * y.dot(dir);
    rho.d[2] = 2.0 * dir.squaredNorm();
    return rho;
}

/// phi along y + t dir via per-coordinate jets; exact (phi is cubic).
Jet4 phi_jet(const Vector& theta, const Vector& y, const Vector& dir) {
    const int n = static_cast<int>(y.size());
    Jet4 sum;
    for (int i = 0; i < n; ++i) {
        Jet4 ci;
        ci.d[0] = y[i];
        ci.d[1] = dir[i];
        for (int j = 0; j < n; ++j) {
            Jet4 cj;
            cj.d[0] = y[j];
            cj.d[1] = dir[j];
            sum = sum + th_mat(theta, n, i, j) * (ci * cj);
        }
        sum = sum + th_cub(theta, n, i) * (ci * ci * ci);
    }
    return sum;
}

} // namespace

// --- polynomial part ----------------------------------------------------------

double phi_value(const Vector& theta, const Vector& y) {
    check_theta(theta, y);
    const int n = static_cast<int>(y.size());
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) s += th_mat(theta, n, i, j) * y[i] * y[j];
        s += th_cub(theta, n, i) * y[i] * y[i] * y[i];
    }
    return s;
}

Vector phi_grad(const Vector& theta, const Vector& y) {
    check_theta(theta, y);
    const int n = static_cast<int>(y.size());
    Vector g = Vector::Zero(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j)
            g[i] += (th_mat(theta, n, i, j) + th_mat(theta, n, j, i)) * y[j];
        g[i] += 3.0 * th_cub(theta, n, i) * y[i] * y[i];
    }
    return g;
}

Matrix phi_hess(const Vector& theta, const Vector& y) {
    check_theta(theta, y);
    const int n = static_cast<int>(y.size());
    Matrix H(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            H(i, j) = th_mat(theta, n, i, j) + th_mat(theta, n, j, i) +
                      (i == j ? 6.0 * th_cub(theta, n, i) * y[i] : 0.0);
    return H;
}

Vector phi_third_dir(const Vector& theta, const Vector& v) {
    check_theta(theta, v);
    const int n = static_cast<int>(v.size());
    Vector t(n);
    for (int k = 0; k < n; ++k) t[k] = 6.0 * th_cub(theta, n, k) * v[k] * v[k];
    return t;
}

// --- cutoff -------------------------------------------------------------------

double eta_value(const Vector& y, double r_in, double r_out) {
    return eta_profile(Jet4::constant(y.squaredNorm()), r_in, r_out).d[0];
}

Vector eta_grad(const Vector& y, double r_in, double r_out) {
    const Jet4 h = eta_profile(Jet4::variable(y.squaredNorm()), r_in, r_out);
    return Vector(2.0 * h.d[1] * y);
}

Matrix eta_hess(const Vector& y, double r_in, double r_out) {
    const int n = static_cast<int>(y.size());
    const Jet4 h = eta_profile(Jet4::variable(y.squaredNorm()), r_in, r_out);
    return Matrix(4.0 * h.d[2] * y * y.transpose() +
                  2.0 * h.d[1] * Matrix::Identity(n, n));
}

Vector eta_third_dir(const Vector& y, const Vector& v, double r_in, double r_out) {
    const Jet4 h = eta_profile(Jet4::variable(y.squaredNorm()), r_in, r_out);
    const double yv = y.dot(v);
    return Vector(8.0 * h.d[3] * yv * yv * y +
                  4.0 * h.d[2] * (v.squaredNorm() * y + 2.0 * yv * v));
}

std::array<double, 5> eta_directional_jet(const Vector& y, const Vector& dir, double r_in,
                                          double r_out) {
    return eta_profile(rho_jet(y, dir), r_in, r_out).d;
}

std::array<double, 5> bump_directional_jet(const BumpPerturbation& bump, const Vector& z,
                                           const Vector& dir) {
    const Vector y = z - bump.center;
    check_theta(bump.theta, y);
    const Jet4 cut = eta_profile(rho_jet(y, dir), bump.r_in, bump.r_out);
    return (cut * phi_jet(bump.theta, y, dir)).d;
}

// --- assembled terminal cost ---------------------------------------------------

TerminalCost perturbed_terminal(const TerminalCost& base,
                                const std::vector<BumpPerturbation>& bumps) {
    TerminalCost t;
    t.family = base.family + "+bump";
    t.value = [base, bumps](const Vector& z) {
        double s = base.value(z);
        for (const BumpPerturbation& b : bumps) {
            const Vector y = z - b.center;
            if (y.squaredNorm() >= b.r_out * b.r_out) continue;
            s += eta_value(y, b.r_in, b.r_out) * phi_value(b.theta, y);
        }
        return s;
    };
    t.grad = [base, bumps](const Vector& z) {
        Vector g = base.grad(z);
        for (const BumpPerturbation& b : bumps) {
            const Vector y = z - b.center;
            if (y.squaredNorm() >= b.r_out * b.r_out) continue;
            g += eta_value(y, b.r_in, b.r_out) * phi_grad(b.theta, y) +
                 phi_value(b.theta, y) * eta_grad(y, b.r_in, b.r_out);
        }
        return g;
    };
    t.hess = [base, bumps](const Vector& z) {
        Matrix H = base.hess(z);
        for (const BumpPerturbation& b : bumps) {
            const Vector y = z - b.center;
            if (y.squaredNorm() >= b.r_out * b.r_out) continue;
            const Vector ge = eta_grad(y, b.r_in, b.r_out);
            const Vector gp = phi_grad(b.theta, y);
            H += eta_value(y, b.r_in, b.r_out) * phi_hess(b.theta, y) +
                 ge * gp.transpose() + gp * ge.transpose() +
                 phi_value(b.theta, y) * eta_hess(y, b.r_in, b.r_out);
        }
        return H;
    };
    if (base.has_third()) {
        t.third_dir = [base, bumps](const Vector& z, const Vector& v) {
            Vector third = base.third_dir(z, v);
            for (const BumpPerturbation& b : bumps) {
                const Vector y = z - b.center;
                if (y.squaredNorm() >= b.r_out * b.r_out) continue;
                const double ev = eta_value(y, b.r_in, b.r_out);
                const Vector ge = eta_grad(y, b.r_in, b.r_out);
                const Matrix He = eta_hess(y, b.r_in, b.r_out);
                const double pv = phi_value(b.theta, y);
                const Vector gp = phi_grad(b.theta, y);
                const Matrix Hp = phi_hess(b.theta, y);
                third += pv * eta_third_dir(y, v, b.r_in, b.r_out) +
                         v.dot(He * v) * gp + 2.0 * gp.dot(v) * (He * v) +
                         2.0 * ge.dot(v) * (Hp * v) + v.dot(Hp * v) * ge +
                         ev * phi_third_dir(b.theta, v);
            }
            return third;
        };
    }
    return t;
}

double bump_c4_estimate(const std::vector<BumpPerturbation>& bumps) {
    double worst = 0.0;
    for (const BumpPerturbation& b : bumps) {
        const int n = static_cast<int>(b.center.size());
        std::vector<Vector> dirs;
        for (int i = 0; i < n; ++i) dirs.push_back(Vector::Unit(n, i));
        dirs.push_back(Vector(Vector::Ones(n) / std::sqrt(static_cast<double>(n))));
        std::vector<Vector> offsets;
        offsets.push_back(Vector::Zero(n));
        for (int i = 0; i < n; ++i) {
            offsets.push_back(Vector(0.5 * (b.r_in + b.r_out) * Vector::Unit(n, i)));
            offsets.push_back(Vector(-0.9 * b.r_out * Vector::Unit(n, i)));
        }
        constexpr int kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37};
        for (int k = 0; k < 32 * n; ++k) {
            Vector y(n);
            for (int i = 0; i < n; ++i) {
                const double f = (k + 1.0) * std::sqrt(static_cast<double>(kPrimes[i % 12]));
                y[i] = b.r_out * (2.0 * (f - std::floor(f)) - 1.0);
            }
            offsets.push_back(y);
        }
        for (const Vector& y : offsets)
            for (const Vector& d : dirs) {
                const std::array<double, 5> jet =
                    bump_directional_jet(b, Vector(b.center + y), d);
                for (const double c : jet) worst = std::max(worst, std::abs(c));
            }
    }
    return worst;
}

// --- transversality -------------------------------------------------------------

namespace {

Vector membership_map(const ProblemSpec& prob, const TerminalCost& psi, const Vector& z,
                      const Vector& v, SecondVariationMethod method,
                      const FlowOptions& opts) {
    const VariationalBundle vb = integrate_variational(prob, psi, z, opts);
    const SecondVariation sv = second_variation_along(prob, psi, z, v, method, opts);
    const int n = static_cast<int>(z.size());
    Vector out(n + 1);
    out.head(n) = vb.X0 * v;
    out[n] = (vb.Y0 * v).dot(sv.xi0);
    return out;
}

} // namespace

TransversalityResult transversality_rank(const ProblemSpec& prob, const TerminalCost& base,
                                         const std::vector<BumpPerturbation>& bumps,
                                         const Vector& z, const Vector& v,
                                         const FlowOptions& opts, double fd_step,
                                         int threads) {
    const int n = prob.state_dim();
    if (bumps.empty()) throw ConfigError("transversality needs at least one bump");
    const long per = static_cast<long>(n) * n + n;
    const long total = per * static_cast<long>(bumps.size());
    for (const BumpPerturbation& b : bumps)
        if (b.theta.size() != per || b.center.size() != n)
            throw DimensionMismatch("bump does not match the state dimension");

    double theta_inf = 0.0;
    for (const BumpPerturbation& b : bumps)
        theta_inf = std::max(theta_inf, b.theta.lpNorm<Eigen::Infinity>());
    const double h = fd_step > 0.0 ? fd_step : 1e-5 * (1.0 + theta_inf);
    const SecondVariationMethod method = base.has_third()
                                             ? SecondVariationMethod::DirectionalODE
                                             : SecondVariationMethod::CentralFD;

    TransversalityResult res;
    res.fd_step = h;
    res.jacobian = Matrix::Zero(n + 1, total);
    Matrix& J = res.jacobian;
    parallel_for(total, threads, [&](long col) {
        const size_t bump_index = static_cast<size_t>(col / per);
        const long coeff = col % per;
        auto probe = [&](double sign) {
            std::vector<BumpPerturbation> shifted = bumps;
            shifted[bump_index].theta[coeff] += sign * h;
            const TerminalCost psi = perturbed_terminal(base, shifted);
            try {
                return membership_map(prob, psi, z, v, method, opts);
            } catch (const ArcEscaped&) {
                throw EscapedNeighborhood(
                    "transversality probe arc escaped near the requested point");
            }
        };
        J.col(col) = (probe(+1.0) - probe(-1.0)) / (2.0 * h);
    });

    Eigen::JacobiSVD<Matrix> svd(J);
    const Vector sig = svd.singularValues();
    res.sigmas.assign(sig.data(), sig.data() + sig.size());
    const double smax = res.sigmas.empty() ? 0.0 : res.sigmas.front();
    for (const double s : res.sigmas)
        if (s > 1e-6 * smax && smax > 0.0) ++res.rank;
    return res;
}

// --- randomized genericity search -------------------------------------------

namespace {

std::vector<Vector> bump_centers(const GridBox& box, double r_in) {
    const int n = static_cast<int>(box.lo.size());
    if (box.hi.size() != n) throw DimensionMismatch("grid box bounds disagree");
    std::vector<std::vector<double>> axes(n);
    for (int i = 0; i < n; ++i) {
        const double len = box.hi[i] - box.lo[i];
        if (len < 0.0) throw ConfigError("grid box has inverted bounds");
        const int k = len == 0.0 ? 1 : static_cast<int>(std::ceil(len / r_in)) + 1;
        if (k == 1) {
            axes[i].push_back(0.5 * (box.lo[i] + box.hi[i]));
        } else {
            for (int j = 0; j < k; ++j)
                axes[i].push_back(box.lo[i] + len * static_cast<double>(j) /
                                                   static_cast<double>(k - 1));
        }
    }
    std::vector<Vector> centers;
    std::vector<int> idx(n, 0);
    while (true) {
        Vector c(n);
        for (int i = 0; i < n; ++i) c[i] = axes[i][idx[i]];
        centers.push_back(std::move(c));
        int axis = n - 1;
        while (axis >= 0) {
            if (++idx[axis] < static_cast<int>(axes[axis].size())) break;
            idx[axis] = 0;
            --axis;
        }
        if (axis < 0) break;
    }
    return centers;
}

Vector draw_theta_ball(SplitMix64& rng, long dim, double scale) {
    Vector theta = Vector::Zero(dim);
    if (scale <= 0.0) return theta;
    for (int attempt = 0; attempt < 10000; ++attempt) {
        for (long i = 0; i < dim; ++i) theta[i] = rng.uniform(-scale, scale);
        if (theta.norm() <= scale) return theta;
    }
    theta *= scale / theta.norm(); // unreachable in practice
    return theta;
}

} // namespace

PerturbResult perturb_until_generic(const ProblemSpec& prob, const TerminalCost& base,
                                    const GridBox& z_box, const PerturbOptions& opts) {
    if (opts.max_draws < 1) throw ConfigError("max_draws must be at least 1");
    const int n = prob.state_dim();
    const long per = static_cast<long>(n) * n + n;
    const std::vector<Vector> centers = bump_centers(z_box, opts.r_in);

    PerturbResult out;
    out.seed = opts.seed;
    out.scale = opts.scale;
    for (int draw = 0; draw < opts.max_draws; ++draw) {
        std::vector<BumpPerturbation> bumps;
        bumps.reserve(centers.size());
        for (size_t l = 0; l < centers.size(); ++l) {
            BumpPerturbation b;
            b.center = centers[l];
            b.r_in = opts.r_in;
            b.r_out = opts.r_out;
            if (draw == 0) {
                b.theta = Vector::Zero(per);
            } else {
                SplitMix64 rng(opts.seed, static_cast<std::uint64_t>(draw) * 1000003ULL +
                                              static_cast<std::uint64_t>(l));
                b.theta = draw_theta_ball(rng, per, opts.scale);
            }
            bumps.push_back(std::move(b));
        }
        const TerminalCost psi = perturbed_terminal(base, bumps);
        SweepResult sweep = sweep_locus(prob, psi, z_box, opts.tols, opts.flow, opts.threads);
        std::vector<ConjugateCandidate> violating;
        for (const ConjugateCandidate& c : sweep.candidates)
            if (c.in_omega) violating.push_back(c);
        out.bumps = std::move(bumps);
        out.sweep = std::move(sweep);
        out.violating = std::move(violating);
        out.draws_used = draw;
        if (out.violating.empty()) {
            out.success = true;
            break;
        }
    }
    if (!out.success) out.draws_used = opts.max_draws;
    out.c4_estimate = bump_c4_estimate(out.bumps);
    return out;
}

// --- artifact -----------------------------------------------------------------

namespace {

nlohmann::json vector_json(const Vector& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (int i = 0; i < v.size(); ++i) arr.push_back(fmt_double(v[i]));
    return arr;
}

} // namespace

void write_transversality_json(const std::string& path,
                               const std::vector<TransversalityEntry>& entries,
                               const PerturbResult* perturb,
                               const std::string& config_hash) {
    nlohmann::json doc;
    doc["config_hash"] = config_hash;
    doc["candidates"] = nlohmann::json::array();
    for (const TransversalityEntry& e : entries) {
        nlohmann::json je;
        je["z"] = vector_json(e.z);
        je["v"] = vector_json(e.v);
        je["rank"] = e.result.rank;
        je["full_rank"] = e.result.rank == static_cast<int>(e.z.size()) + 1;
        je["fd_step"] = fmt_double(e.result.fd_step);
        nlohmann::json sig = nlohmann::json::array();
        for (const double s : e.result.sigmas) sig.push_back(fmt_double(s));
        je["sigmas"] = sig;
        doc["candidates"].push_back(std::move(je));
    }
    if (perturb != nullptr) {
        nlohmann::json jp;
        jp["success"] = perturb->success;
        jp["draws_used"] = perturb->draws_used;
        jp["seed"] = perturb->seed;
        jp["scale"] = fmt_double(perturb->scale);
        jp["c4_estimate"] = fmt_double(perturb->c4_estimate);
        jp["centers"] = nlohmann::json::array();
        jp["theta"] = nlohmann::json::array();
        for (const BumpPerturbation& b : perturb->bumps) {
            jp["centers"].push_back(vector_json(b.center));
            jp["theta"].push_back(vector_json(b.theta));
        }
        jp["violating"] = nlohmann::json::array();
        for (const ConjugateCandidate& c : perturb->violating) {
            nlohmann::json jc;
            jc["z"] = vector_json(c.z);
            jc["sigma_min"] = fmt_double(c.sigma_min);
            jc["omega_residual"] = fmt_double(c.omega_residual);
            jp["violating"].push_back(std::move(jc));
        }
        doc["perturb"] = std::move(jp);
    }
    open_output(path) << doc.dump(2) << "\n";
}

} // namespace extremal
