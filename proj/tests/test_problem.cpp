#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "extremal/catalog.hpp"
#include "extremal/problem.hpp"
#include "extremal/worker_pool.hpp"
#include "test_problems.hpp"

using namespace extremal;

namespace {

Vector vec1(double a) {
    Vector v(1);
    v[0] = a;
    return v;
}

/// Brute-force scan of w -> L(x,w) + p.f(x,w) over [-10,10], refined once.
double grid_min_hamiltonian(const ProblemSpec& prob, const Vector& x, const Vector& p) {
    auto objective = [&](double w) {
        Vector u = vec1(w);
        return prob.cost.value(x, u) + p.dot(prob.dynamics.eval(x, u));
    };
    double best_w = 0.0, best = objective(0.0);
    for (double w = -10.0; w <= 10.0; w += 1e-3) {
        const double val = objective(w);
        if (val < best) {
            best = val;
            best_w = w;
        }
    }
    for (double w = best_w - 2e-3; w <= best_w + 2e-3; w += 1e-6) {
        best = std::min(best, objective(w));
    }
    return best;
}

struct FirstFD {
    Vector hx, hp;
};

FirstFD fd_first(const ProblemSpec& prob, const Vector& x, const Vector& p, double h) {
    const int n = prob.state_dim();
    FirstFD out;
    out.hx.resize(n);
    out.hp.resize(n);
    for (int i = 0; i < n; ++i) {
        Vector e = Vector::Zero(n);
        e[i] = h;
        out.hx[i] = (hamiltonian(prob, x + e, p) - hamiltonian(prob, x - e, p)) / (2 * h);
        out.hp[i] = (hamiltonian(prob, x, p + e) - hamiltonian(prob, x, p - e)) / (2 * h);
    }
    return out;
}

} // namespace

TEST_CASE("pointwise minimizer closed forms and Newton path agree") {
    auto e21 = make_problem("example21");
    const Vector u_star = pointwise_minimizer(e21.problem, vec1(3.0), vec1(0.5));
    CHECK(u_star[0] == doctest::Approx(-1.5).epsilon(1e-12));

    MinimizerOptions newton;
    newton.force_newton = true;
    const Vector u_newton = pointwise_minimizer(e21.problem, vec1(3.0), vec1(0.5), newton);
    CHECK(std::abs(u_newton[0] - u_star[0]) < 2e-12);

    auto cosprob = make_problem("single_integrator_cos");
    const Vector u_cos = pointwise_minimizer(cosprob.problem, vec1(0.7), vec1(-1.3));
    CHECK(u_cos[0] == doctest::Approx(1.3).epsilon(1e-12));
}

TEST_CASE("hamiltonian values against brute-force scan") {
    auto e21 = make_problem("example21");
    CHECK(hamiltonian(e21.problem, vec1(1.0), vec1(2.0)) == doctest::Approx(0.0).epsilon(1e-12));

    auto cosprob = make_problem("single_integrator_cos");
    SplitMix64 rng(11);
    for (int k = 0; k < 8; ++k) {
        const double x = rng.uniform(-3.0, 3.0), p = rng.uniform(-3.0, 3.0);
        const double H = hamiltonian(cosprob.problem, vec1(x), vec1(p));
        CHECK(H == doctest::Approx(-0.5 * p * p).epsilon(1e-10));
        CHECK(H == doctest::Approx(grid_min_hamiltonian(cosprob.problem, vec1(x), vec1(p)))
                       .epsilon(1e-5));
    }

    const double Hb =
        grid_min_hamiltonian(e21.problem, vec1(1.3), vec1(0.8));
    CHECK(hamiltonian(e21.problem, vec1(1.3), vec1(0.8)) ==
          doctest::Approx(Hb).epsilon(1e-5));
}

TEST_CASE("envelope identity is exact and H is concave in p") {
    ProblemSpec trig = testprob::make_trig_nonlinear();
    auto e21 = make_problem("example21");
    SplitMix64 rng(23);
    for (const ProblemSpec* prob : {&trig, &e21.problem}) {
        for (int k = 0; k < 100; ++k) {
            const Vector x = vec1(rng.uniform(-5.0, 5.0));
            const Vector p = vec1(rng.uniform(-5.0, 5.0));
            HamiltonianFirst ev = hamiltonian_first(*prob, x, p);
            const double assembled =
                prob->cost.value(x, ev.u) + p.dot(prob->dynamics.eval(x, ev.u));
            CHECK(std::abs(ev.value - assembled) == 0.0);
            CHECK((ev.hp - prob->dynamics.eval(x, ev.u)).norm() < 1e-12);

            const Vector p2 = vec1(rng.uniform(-5.0, 5.0));
            const double mid = hamiltonian(*prob, x, 0.5 * (p + p2));
            const double avg =
                0.5 * (hamiltonian(*prob, x, p) + hamiltonian(*prob, x, p2));
            CHECK(mid >= avg - 1e-12);
        }
    }
}

TEST_CASE("trig problem derivatives match closed forms") {
    ProblemSpec trig = testprob::make_trig_nonlinear();
    SplitMix64 rng(37);
    for (int k = 0; k < 20; ++k) {
        const double x = rng.uniform(-4.0, 4.0), p = rng.uniform(-4.0, 4.0);
        const auto oracle = testprob::trig_oracle(x, p);
        HamiltonianEval ev = hamiltonian_derivatives(trig, vec1(x), vec1(p));
        CHECK(ev.u[0] == doctest::Approx(oracle.u).epsilon(1e-10));
        CHECK(ev.value == doctest::Approx(oracle.H).epsilon(1e-10));
        CHECK(ev.hx[0] == doctest::Approx(oracle.Hx).epsilon(1e-10));
        CHECK(ev.hp[0] == doctest::Approx(oracle.Hp).epsilon(1e-10));
        CHECK(ev.hxx(0, 0) == doctest::Approx(oracle.Hxx).epsilon(1e-9));
        CHECK(ev.hxp(0, 0) == doctest::Approx(oracle.Hxp).epsilon(1e-9));
        CHECK(ev.hpp(0, 0) == doctest::Approx(oracle.Hpp).epsilon(1e-9));
    }
}

TEST_CASE("first derivatives match central differences") {
    ProblemSpec trig = testprob::make_trig_nonlinear();
    auto e21 = make_problem("example21");
    SplitMix64 rng(41);
    for (const ProblemSpec* prob : {&trig, &e21.problem}) {
        for (int k = 0; k < 10; ++k) {
            const Vector x = vec1(rng.uniform(-3.0, 3.0));
            const Vector p = vec1(rng.uniform(-3.0, 3.0));
            HamiltonianFirst ev = hamiltonian_first(*prob, x, p);
            FirstFD fd = fd_first(*prob, x, p, 1e-5);
            const double scale = 1.0 + ev.hx.norm() + ev.hp.norm();
            CHECK((ev.hx - fd.hx).norm() < 1e-4 * scale);
            CHECK((ev.hp - fd.hp).norm() < 1e-4 * scale);
        }
    }
}

TEST_CASE("hessian blocks match finite differences of the gradients") {
    ProblemSpec trig = testprob::make_trig_nonlinear();
    auto e21 = make_problem("example21");
    auto lq = make_problem("planar_lq", {{"drift", 0.7}});
    SplitMix64 rng(53);
    for (const ProblemSpec* prob : {&trig, &e21.problem, &lq.problem}) {
        const int n = prob->state_dim();
        for (int k = 0; k < 6; ++k) {
            Vector x(n), p(n);
            for (int i = 0; i < n; ++i) {
                x[i] = rng.uniform(-2.0, 2.0);
                p[i] = rng.uniform(-2.0, 2.0);
            }
            HamiltonianEval ev = hamiltonian_derivatives(*prob, x, p);
            CHECK((ev.hxx - ev.hxx.transpose()).norm() < 1e-9);
            CHECK((ev.hpp - ev.hpp.transpose()).norm() < 1e-9);

            const double h = 1e-5;
            Matrix hxx_fd(n, n), hxp_fd(n, n), hpp_fd(n, n), hpx_fd(n, n);
            for (int i = 0; i < n; ++i) {
                Vector e = Vector::Zero(n);
                e[i] = h;
                HamiltonianFirst xp = hamiltonian_first(*prob, x + e, p);
                HamiltonianFirst xm = hamiltonian_first(*prob, x - e, p);
                HamiltonianFirst pp = hamiltonian_first(*prob, x, p + e);
                HamiltonianFirst pm = hamiltonian_first(*prob, x, p - e);
                hxx_fd.row(i) = ((xp.hx - xm.hx) / (2 * h)).transpose();
                hxp_fd.row(i) = ((xp.hp - xm.hp) / (2 * h)).transpose();
                hpp_fd.row(i) = ((pp.hp - pm.hp) / (2 * h)).transpose();
                hpx_fd.row(i) = ((pp.hx - pm.hx) / (2 * h)).transpose();
            }
            const double scale = 1.0 + ev.hxx.norm() + ev.hxp.norm() + ev.hpp.norm();
            CHECK((ev.hxx - hxx_fd).norm() < 1e-4 * scale);
            // row i of hxp_fd is d(hp)/dx_i, i.e. hxp(i, :).
            CHECK((ev.hxp - hxp_fd).norm() < 1e-4 * scale);
            CHECK((ev.hpp - hpp_fd).norm() < 1e-4 * scale);
            // Cross-block symmetry: d(hx)/dp_j stacked by rows is hxp^T... row j
            // of hpx_fd is d(hx)/dp_j = hxp(:, j)^T.
            CHECK((ev.hxp - hpx_fd.transpose()).norm() < 1e-4 * scale);

            Eigen::SelfAdjointEigenSolver<Matrix> es(ev.hpp);
            CHECK(es.eigenvalues().maxCoeff() < 1e-10);
        }
    }
}

TEST_CASE("directional hessian derivative oracle matches the FD fallback") {
    auto e21 = make_problem("example21");
    ProblemSpec no_oracle = e21.problem;
    no_oracle.hessian_directional = nullptr;
    SplitMix64 rng(67);
    for (int k = 0; k < 10; ++k) {
        const Vector x = vec1(rng.uniform(-2.0, 2.0));
        const Vector p = vec1(rng.uniform(-2.0, 2.0));
        const Vector dx = vec1(rng.uniform(-1.0, 1.0));
        const Vector dp = vec1(rng.uniform(-1.0, 1.0));
        auto exact = hessian_blocks_directional(e21.problem, x, p, dx, dp);
        auto fd = hessian_blocks_directional(no_oracle, x, p, dx, dp);
        CHECK(exact[0](0, 0) == doctest::Approx(-2.0 * p[0] * dp[0]).epsilon(1e-12));
        CHECK(exact[1](0, 0) ==
              doctest::Approx(-2.0 * (x[0] * dp[0] + p[0] * dx[0])).epsilon(1e-12));
        CHECK(exact[2](0, 0) == doctest::Approx(-2.0 * x[0] * dx[0]).epsilon(1e-12));
        for (int b = 0; b < 3; ++b)
            CHECK((exact[b] - fd[b]).norm() < 1e-5 * (1.0 + exact[b].norm()));
    }
}

TEST_CASE("error taxonomy: dimensions and lost convexity") {
    auto e21 = make_problem("example21");
    CHECK_THROWS_AS(pointwise_minimizer(e21.problem, Vector::Zero(2), vec1(0.0)),
                    DimensionMismatch);
    CHECK_THROWS_AS(hamiltonian(e21.problem, vec1(0.0), Vector::Zero(3)),
                    DimensionMismatch);

    ProblemSpec bad = testprob::make_trig_nonlinear();
    bad.cost.hess_uu = [](const Vector&, const Vector&) {
        return Matrix(-Matrix::Identity(1, 1));
    };
    MinimizerOptions newton;
    newton.force_newton = true;
    CHECK_THROWS_AS(pointwise_minimizer(bad, vec1(0.3), vec1(0.4), newton), SingularLuu);
}

TEST_CASE("growth and convexity constants hold on the sampled test box") {
    for (const std::string& label : catalog_labels()) {
        auto entry = make_problem(label);
        const ProblemSpec& prob = entry.problem;
        const int n = prob.state_dim(), m = prob.control_dim();
        SplitMix64 rng(97);
        for (int k = 0; k < 200; ++k) {
            Vector x(n), u(m);
            for (int i = 0; i < n; ++i) x[i] = rng.uniform(-5.0, 5.0);
            for (int i = 0; i < m; ++i) u[i] = rng.uniform(-5.0, 5.0);
            CHECK(prob.dynamics.drift.value(x).norm() <=
                  prob.growth_c1 * (x.norm() + 1.0) + 1e-12);
            for (const auto& field : prob.dynamics.fields)
                CHECK(field.value(x).norm() <= prob.growth_c1 * (x.norm() + 1.0) + 1e-12);
            CHECK(prob.cost.value(x, u) >=
                  prob.coercivity_c2 * (u.squaredNorm() - 1.0) - 1e-12);
            Eigen::SelfAdjointEigenSolver<Matrix> es(prob.cost.hess_uu(x, u));
            CHECK(es.eigenvalues().minCoeff() > prob.convexity_margin - 1e-12);
        }
    }
}

TEST_CASE("vector field jacobians and hessians match finite differences") {
    ProblemSpec trig = testprob::make_trig_nonlinear();
    auto e21 = make_problem("example21");
    for (const ProblemSpec* prob : {&trig, &e21.problem}) {
        const int n = prob->state_dim();
        std::vector<const VectorField*> fields{&prob->dynamics.drift};
        for (const auto& f : prob->dynamics.fields) fields.push_back(&f);
        SplitMix64 rng(131);
        for (const VectorField* f : fields) {
            for (int k = 0; k < 5; ++k) {
                Vector x(n);
                for (int i = 0; i < n; ++i) x[i] = rng.uniform(-3.0, 3.0);
                const double h = 1e-5;
                Matrix jac_fd(n, n);
                for (int j = 0; j < n; ++j) {
                    Vector e = Vector::Zero(n);
                    e[j] = h;
                    jac_fd.col(j) = (f->value(x + e) - f->value(x - e)) / (2 * h);
                }
                const Matrix jac = f->jacobian(x);
                CHECK((jac - jac_fd).norm() < 1e-4 * (1.0 + jac.norm()));
                if (f->hessian) {
                    auto hess = f->hessian(x);
                    for (int l = 0; l < n; ++l) {
                        Matrix hfd(n, n);
                        for (int j = 0; j < n; ++j) {
                            Vector e = Vector::Zero(n);
                            e[j] = h;
                            hfd.col(j) =
                                ((f->jacobian(x + e) - f->jacobian(x - e)) / (2 * h))
                                    .row(l)
                                    .transpose();
                        }
                        CHECK((hess[l] - hfd).norm() < 1e-4 * (1.0 + hess[l].norm()));
                    }
                }
            }
        }
    }
}

TEST_CASE("terminal cost families: derivative ladder is FD-consistent") {
    const Matrix Q = (Matrix(2, 2) << -0.5, 0.3, 0.3, 0.5).finished();
    const Vector g = (Vector(2) << 0.1, -0.2).finished();
    std::vector<TerminalCost> costs{
        terminal_cosine(2, 1.3, 0.4),
        terminal_exp(2, 2.0, 1.0),
        terminal_quadratic(Q, g, 0.7),
        terminal_zero(2),
    };
    SplitMix64 rng(139);
    for (const TerminalCost& psi : costs) {
        for (int k = 0; k < 6; ++k) {
            Vector z(2), v(2);
            for (int i = 0; i < 2; ++i) {
                z[i] = rng.uniform(-2.0, 2.0);
                v[i] = rng.uniform(-1.0, 1.0);
            }
            const double h = 1e-5;
            Vector grad_fd(2);
            Matrix hess_fd(2, 2);
            for (int i = 0; i < 2; ++i) {
                Vector e = Vector::Zero(2);
                e[i] = h;
                grad_fd[i] = (psi.value(z + e) - psi.value(z - e)) / (2 * h);
                hess_fd.col(i) = (psi.grad(z + e) - psi.grad(z - e)) / (2 * h);
            }
            CHECK((psi.grad(z) - grad_fd).norm() < 1e-4 * (1.0 + grad_fd.norm()));
            CHECK((psi.hess(z) - hess_fd).norm() < 1e-4 * (1.0 + hess_fd.norm()));
            CHECK((psi.hess(z) - psi.hess(z).transpose()).norm() < 1e-12);
            REQUIRE(psi.has_third());
            const Vector third_fd =
                (psi.hess(z + h * v) - psi.hess(z - h * v)) / (2 * h) * v;
            CHECK((psi.third_dir(z, v) - third_fd).norm() <
                  1e-4 * (1.0 + third_fd.norm()));
        }
    }
}

TEST_CASE("catalog labels construct and reject unknown parameters") {
    for (const std::string& label : catalog_labels()) {
        auto entry = make_problem(label);
        CHECK(entry.problem.horizon > 0.0);
        CHECK(entry.problem.state_dim() >= 1);
    }
    CHECK_THROWS_AS(make_problem("no_such_problem"), ConfigError);
    CHECK_THROWS_AS(make_problem("example21", {{"bogus", 1.0}}), ConfigError);
}
