#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "extremal/catalog.hpp"
#include "extremal/conjugate.hpp"
#include "extremal/flow.hpp"

using namespace extremal;

namespace {

const double kPi = 3.14159265358979323846;

Vector vec1(double a) {
    Vector v(1);
    v << a;
    return v;
}

Vector vec2(double a, double b) {
    Vector v(2);
    v << a, b;
    return v;
}

FlowOptions tight() {
    FlowOptions o;
    o.rtol = 1e-12;
    o.atol = 1e-14;
    return o;
}

bool same_vector(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) return false;
    for (int i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

} // namespace

TEST_CASE("rank_test: singular values, sign convention, near-null window") {
    ConjugateTolerances tols;

    Matrix A = Matrix::Zero(2, 2);
    A(0, 0) = 3.0;
    A(1, 1) = 0.5;
    RankTest rt = rank_test(A, tols);
    CHECK(rt.sigma_min == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(rt.norm == doctest::Approx(3.0).epsilon(1e-14));
    CHECK(std::abs(rt.v[1]) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(rt.v[1] > 0.0);
    CHECK(!rt.conjugate);
    CHECK(rt.null_basis.size() == 1);

    // Rotated frame: the right direction must match the known eigenvector and
    // reproduce sigma_min as |X v| to 1e-10.
    const double th = 0.73;
    Matrix R(2, 2);
    R << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
    Matrix D = Matrix::Zero(2, 2);
    D(0, 0) = 2.0;
    D(1, 1) = 1e-3;
    Matrix B = R * D * R.transpose();
    RankTest rb = rank_test(B, tols);
    CHECK(rb.sigma_min == doctest::Approx(1e-3).epsilon(1e-10));
    CHECK((B * rb.v).norm() == doctest::Approx(rb.sigma_min).epsilon(1e-10));
    int imax = 0;
    rb.v.cwiseAbs().maxCoeff(&imax);
    CHECK(rb.v[imax] > 0.0);
    CHECK(std::abs(rb.v.dot(vec2(-std::sin(th), std::cos(th)))) ==
          doctest::Approx(1.0).epsilon(1e-12));

    // Near-multiple smallest singular values populate the basis.
    Matrix C = Matrix::Zero(3, 3);
    C(0, 0) = 2.0;
    C(1, 1) = 3e-8;
    C(2, 2) = 1e-8;
    RankTest rc = rank_test(C, tols);
    CHECK(rc.conjugate);
    CHECK(rc.null_basis.size() == 2);
    CHECK(rc.sigmas.size() == 2);
    CHECK(rc.sigmas[0] <= rc.sigmas[1]);
    CHECK(std::abs(rc.null_basis[0][2]) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(std::abs(rc.null_basis[1][1]) == doctest::Approx(1.0).epsilon(1e-14));

    RankTest ri = rank_test(Matrix::Identity(4, 4), tols);
    CHECK(ri.sigma_min == doctest::Approx(1.0));
    CHECK(!ri.conjugate);
}

TEST_CASE("rank_test along arcs: cosine closed form, zero terminal, tuned planar") {
    auto cat = make_problem("single_integrator_cos");
    for (double z : {0.0, 0.5, 1.0, -1.4}) {
        RankTest rt = rank_test(cat.problem, cat.terminal, vec1(z));
        CHECK(rt.sigma_min ==
              doctest::Approx(std::abs(1.0 - 2.0 * std::cos(z))).epsilon(1e-7));
        CHECK(rt.v[0] == 1.0);
    }
    RankTest at_conj =
        rank_test(cat.problem, cat.terminal, vec1(kPi / 3.0), {}, tight());
    CHECK(at_conj.sigma_min <= 1e-10);
    CHECK(at_conj.conjugate);

    TerminalCost zero = terminal_zero(1);
    for (double z : {-1.0, 0.0, 2.0}) {
        RankTest rt = rank_test(cat.problem, zero, vec1(z));
        CHECK(rt.sigma_min == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(!rt.conjugate);
    }

    auto tuned = make_problem("planar_lq", {{"q11", -0.5}, {"q22", 0.5}});
    RankTest rp = rank_test(tuned.problem, tuned.terminal, vec2(0.3, -0.2));
    CHECK(rp.sigma_min <= 1e-8);
    CHECK(rp.conjugate);
    CHECK(rp.norm == doctest::Approx(2.0).epsilon(1e-8));
    CHECK(rp.v[0] == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(std::abs(rp.v[1]) <= 1e-7);
}

TEST_CASE("omega residual: cosine signs, quadratic vanishing, method agreement") {
    auto cat = make_problem("single_integrator_cos");
    const double root3_half = std::sqrt(3.0) / 2.0;

    OmegaResidual plus = omega_psi_residual(cat.problem, cat.terminal, vec1(kPi / 3.0),
                                            vec1(1.0), {}, tight(),
                                            SecondVariationMethod::DirectionalODE);
    CHECK(plus.first.norm() <= 1e-10);
    CHECK(plus.first_zero);
    CHECK(plus.second == doctest::Approx(-root3_half).epsilon(1e-6));
    CHECK(!plus.second_zero);
    CHECK(!plus.in_omega);

    OmegaResidual minus = omega_psi_residual(cat.problem, cat.terminal, vec1(-kPi / 3.0),
                                             vec1(1.0), {}, tight(),
                                             SecondVariationMethod::DirectionalODE);
    CHECK(minus.second == doctest::Approx(root3_half).epsilon(1e-6));

    // Away from the locus: second block follows -sin(2z) v^3, first is nonzero.
    OmegaResidual away = omega_psi_residual(cat.problem, cat.terminal, vec1(0.3),
                                            vec1(1.0), {}, tight(),
                                            SecondVariationMethod::DirectionalODE);
    CHECK(away.first.norm() ==
          doctest::Approx(std::abs(1.0 - 2.0 * std::cos(0.3))).epsilon(1e-9));
    CHECK(!away.first_zero);
    CHECK(away.second == doctest::Approx(-std::sin(0.6)).epsilon(1e-7));

    OmegaResidual away_fd = omega_psi_residual(cat.problem, cat.terminal, vec1(0.3),
                                               vec1(1.0), {}, tight(),
                                               SecondVariationMethod::CentralFD);
    CHECK(away_fd.second == doctest::Approx(away.second).epsilon(1e-4));

    // Quadratic terminal + linear dynamics: second component identically zero.
    auto quad = make_problem("single_integrator_quad", {{"q", 0.25}});
    OmegaResidual flat = omega_psi_residual(quad.problem, quad.terminal, vec1(0.7),
                                            vec1(1.0), {}, tight(),
                                            SecondVariationMethod::DirectionalODE);
    CHECK(std::abs(flat.second) <= 1e-10);
    CHECK(flat.second_zero);
    CHECK(flat.first.norm() == doctest::Approx(1.5).epsilon(1e-9));
    CHECK(!flat.in_omega);

    // Degenerate LQ: both membership conditions hold, by the affine flow algebra.
    auto tuned = make_problem("planar_lq", {{"q11", -0.5}, {"q22", 0.5}});
    OmegaResidual degen = omega_psi_residual(tuned.problem, tuned.terminal,
                                             vec2(0.2, -0.3), vec2(1.0, 0.0), {}, tight(),
                                             SecondVariationMethod::DirectionalODE);
    CHECK(degen.first.norm() <= 1e-9);
    CHECK(std::abs(degen.second) <= 1e-8);
    CHECK(degen.in_omega);

    auto e21 = make_problem("example21");
    CHECK_THROWS_AS(omega_psi_residual(e21.problem, e21.terminal, vec1(-1.0), vec1(1.0)),
                    ArcEscaped);
}

TEST_CASE("sweep: cosine locus over [-2,2] resolves both conjugate points") {
    auto cat = make_problem("single_integrator_cos");
    SweepBox box{vec1(-2.0), vec1(2.0), {401}};
    SweepResult sweep = sweep_locus(cat.problem, cat.terminal, box);

    CHECK(sweep.nodes.size() == 401);
    CHECK(sweep.grid_shape == std::vector<int>{401});
    CHECK(sweep.escaped_cells == 0);
    for (size_t i = 0; i < sweep.nodes.size(); i += 50) {
        const SweepNode& node = sweep.nodes[i];
        CHECK(!node.escaped);
        CHECK(node.sigma_min ==
              doctest::Approx(std::abs(1.0 - 2.0 * std::cos(node.z[0]))).epsilon(1e-7));
    }

    REQUIRE(sweep.candidates.size() == 2);
    const ConjugateCandidate& lo = sweep.candidates[0];
    const ConjugateCandidate& hi = sweep.candidates[1];
    const double root3_half = std::sqrt(3.0) / 2.0;

    CHECK(std::abs(lo.z[0] + kPi / 3.0) <= 1e-9);
    CHECK(std::abs(hi.z[0] - kPi / 3.0) <= 1e-9);
    for (const ConjugateCandidate* cand : {&lo, &hi}) {
        CHECK(cand->refined);
        CHECK(std::abs(cand->det) <= 1e-10);
        CHECK(cand->sigma_min <= 1e-9);
        CHECK(cand->v[0] == 1.0);
        CHECK(cand->interior_rank_ok);
        CHECK(!cand->in_omega);
        CHECK(cand->null_basis.size() == 1);
        const double z = cand->z[0];
        CHECK(cand->y[0] == doctest::Approx(z - 2.0 * std::sin(z)).epsilon(1e-8));
    }
    CHECK(hi.omega_residual == doctest::Approx(-root3_half).epsilon(1e-4));
    CHECK(lo.omega_residual == doctest::Approx(root3_half).epsilon(1e-4));
    CHECK(hi.y[0] == doctest::Approx(kPi / 3.0 - std::sqrt(3.0)).epsilon(1e-7));

    // Refinement stayed inside the bracketing cell.
    for (const ConjugateCandidate* cand : {&lo, &hi}) {
        bool inside_a_sign_change_cell = false;
        for (size_t i = 0; i + 1 < sweep.nodes.size(); ++i) {
            const double da = sweep.nodes[i].det, db = sweep.nodes[i + 1].det;
            if ((da < 0.0) == (db < 0.0)) continue;
            if (cand->z[0] >= sweep.nodes[i].z[0] && cand->z[0] <= sweep.nodes[i + 1].z[0])
                inside_a_sign_change_cell = true;
        }
        CHECK(inside_a_sign_change_cell);
    }
}

TEST_CASE("sweep: zero terminal yields no candidates; bad boxes are rejected") {
    auto cat = make_problem("single_integrator_cos");
    TerminalCost zero = terminal_zero(1);
    SweepResult sweep = sweep_locus(cat.problem, zero, {vec1(-1.0), vec1(1.0), {21}});
    CHECK(sweep.candidates.empty());
    CHECK(sweep.escaped_cells == 0);
    for (const SweepNode& node : sweep.nodes)
        CHECK(node.sigma_min == doctest::Approx(1.0).epsilon(1e-9));

    CHECK_THROWS_AS(sweep_locus(cat.problem, zero, {vec1(0.0), vec1(1.0), {1}}),
                    ConfigError);
    CHECK_THROWS_AS(sweep_locus(cat.problem, zero, {vec2(0.0, 0.0), vec2(1.0, 1.0), {5}}),
                    DimensionMismatch);
}

TEST_CASE("sweep: worker count never changes the result") {
    auto cat = make_problem("single_integrator_cos");
    SweepBox box{vec1(-2.0), vec1(2.0), {101}};
    SweepResult serial = sweep_locus(cat.problem, cat.terminal, box, {}, {}, 1);
    SweepResult pooled = sweep_locus(cat.problem, cat.terminal, box, {}, {}, 4);

    REQUIRE(serial.candidates.size() == pooled.candidates.size());
    for (size_t i = 0; i < serial.candidates.size(); ++i) {
        const ConjugateCandidate& a = serial.candidates[i];
        const ConjugateCandidate& b = pooled.candidates[i];
        CHECK(same_vector(a.z, b.z));
        CHECK(same_vector(a.v, b.v));
        CHECK(same_vector(a.y, b.y));
        CHECK(a.sigma_min == b.sigma_min);
        CHECK(a.omega_residual == b.omega_residual);
        CHECK(a.det == b.det);
    }
    REQUIRE(serial.nodes.size() == pooled.nodes.size());
    for (size_t i = 0; i < serial.nodes.size(); ++i) {
        CHECK(same_vector(serial.nodes[i].z, pooled.nodes[i].z));
        CHECK(serial.nodes[i].det == pooled.nodes[i].det);
        CHECK(serial.nodes[i].sigma_min == pooled.nodes[i].sigma_min);
    }
}

TEST_CASE("sweep: window self-consistency at 10x resolution") {
    auto e21 = make_problem("example21");
    SweepBox coarse_box{vec1(0.3), vec1(0.7), {41}};
    SweepBox fine_box{vec1(0.3), vec1(0.7), {401}};
    SweepResult coarse = sweep_locus(e21.problem, e21.terminal, coarse_box, {}, {}, 4);
    SweepResult fine = sweep_locus(e21.problem, e21.terminal, fine_box, {}, {}, 4);

    CHECK(coarse.escaped_cells > 0);
    CHECK(fine.escaped_cells > 0);
    REQUIRE(coarse.candidates.size() == 1);
    REQUIRE(fine.candidates.size() == coarse.candidates.size());
    CHECK(std::abs(coarse.candidates[0].z[0] - fine.candidates[0].z[0]) <= 1e-8);
    CHECK(coarse.candidates[0].z[0] > 0.42);
    CHECK(coarse.candidates[0].z[0] < 0.44);
    CHECK(coarse.candidates[0].refined);
    CHECK(std::abs(coarse.candidates[0].det) <= 1e-10);
    CHECK(std::isfinite(coarse.candidates[0].y[0]));

    // Weyl inequality between adjacent complete nodes: the singular value
    // moves no faster than the matrix.
    for (size_t i = 0; i + 1 < coarse.nodes.size(); ++i) {
        const SweepNode& a = coarse.nodes[i];
        const SweepNode& b = coarse.nodes[i + 1];
        if (a.escaped || b.escaped) continue;
        VariationalBundle va = integrate_variational(e21.problem, e21.terminal, a.z);
        VariationalBundle vb = integrate_variational(e21.problem, e21.terminal, b.z);
        const double gap = std::abs(a.sigma_min - b.sigma_min);
        CHECK(gap <= (va.X0 - vb.X0).operatorNorm() + 1e-6 * (1.0 + gap));
    }
}

TEST_CASE("sweep: identically singular grid reports unrefined membership hits") {
    auto tuned = make_problem("planar_lq", {{"q11", -0.5}, {"q22", 0.5}});
    SweepBox box{vec2(-0.4, -0.4), vec2(0.4, 0.4), {3, 3}};
    SweepResult sweep = sweep_locus(tuned.problem, tuned.terminal, box, {}, {}, 2);

    CHECK(sweep.nodes.size() == 9);
    CHECK(sweep.grid_shape == std::vector<int>{3, 3});
    REQUIRE(sweep.candidates.size() == 9);
    for (const ConjugateCandidate& cand : sweep.candidates) {
        CHECK(!cand.refined);
        CHECK(cand.sigma_min <= 1e-8);
        CHECK(cand.v[0] == doctest::Approx(1.0).epsilon(1e-7));
        CHECK(cand.in_omega);
        CHECK(std::abs(cand.omega_residual) <= 1e-6);
    }
    // Candidates come back sorted by z lexicographically.
    for (size_t i = 0; i + 1 < sweep.candidates.size(); ++i) {
        const Vector& a = sweep.candidates[i].z;
        const Vector& b = sweep.candidates[i + 1].z;
        CHECK((a[0] < b[0] || (a[0] == b[0] && a[1] < b[1])));
    }
}

TEST_CASE("gamma filter keeps only globally minimal candidates") {
    ConjugateCandidate c1, c2, c3;
    c1.z = vec1(1.0);
    c1.y = vec1(10.0);
    c2.z = vec1(2.0);
    c2.y = vec1(20.0);
    c3.z = vec1(3.0);
    c3.y = vec1(30.0);

    auto arc_cost = [](const Vector& z) {
        if (z[0] == 1.0) return 5.0;
        if (z[0] == 2.0) return 3.0;
        return std::numeric_limits<double>::infinity();
    };
    auto min_cost = [](const Vector&) { return 3.0; };

    auto kept = gamma_psi_points({c1, c2, c3}, min_cost, arc_cost);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].z[0] == 2.0);

    CHECK(gamma_psi_points({}, min_cost, arc_cost).empty());

    // Ties within tolerance survive the filter.
    auto near_cost = [](const Vector& z) { return z[0] == 1.0 ? 3.0 + 1e-9 : 3.0; };
    auto kept2 = gamma_psi_points({c1, c2}, min_cost, near_cost);
    CHECK(kept2.size() == 2);
}

TEST_CASE("locus CSV lists candidates under a config hash") {
    auto cat = make_problem("single_integrator_cos");
    SweepBox box{vec1(-2.0), vec1(2.0), {101}};
    SweepResult sweep = sweep_locus(cat.problem, cat.terminal, box);
    REQUIRE(sweep.candidates.size() == 2);

    const std::string path = "test_locus.csv";
    write_locus_csv(path, sweep, 1, "cafef00d12345678");

    std::ifstream f(path);
    REQUIRE(f.good());
    std::string line;
    std::getline(f, line);
    CHECK(line == "# config_hash=cafef00d12345678");
    std::getline(f, line);
    CHECK(line == "z1,sigma_min,v1,omega_residual,y1");
    int rows = 0;
    std::vector<std::string> first_row;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        if (rows == 0) {
            size_t pos = 0;
            while (true) {
                size_t comma = line.find(',', pos);
                first_row.push_back(line.substr(pos, comma - pos));
                if (comma == std::string::npos) break;
                pos = comma + 1;
            }
        }
        ++rows;
    }
    CHECK(rows == 2);
    REQUIRE(first_row.size() == 5);
    CHECK(std::stod(first_row[0]) == doctest::Approx(-kPi / 3.0).epsilon(1e-8));
    CHECK(std::stod(first_row[2]) == 1.0);
    CHECK(std::stod(first_row[3]) ==
          doctest::Approx(std::sqrt(3.0) / 2.0).epsilon(1e-4));
    CHECK(std::stod(first_row[4]) ==
          doctest::Approx(-kPi / 3.0 + std::sqrt(3.0)).epsilon(1e-7));
}
