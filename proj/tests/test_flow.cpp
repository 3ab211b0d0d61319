#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "extremal/catalog.hpp"
#include "extremal/csv.hpp"
#include "extremal/flow.hpp"
#include "test_problems.hpp"

using namespace extremal;

namespace {

Vector vec1(double a) {
    Vector v(1);
    v[0] = a;
    return v;
}

FlowOptions tight() {
    FlowOptions o;
    o.rtol = 1e-12;
    o.atol = 1e-14;
    return o;
}

} // namespace

TEST_CASE("dopri5 reproduces a harmonic oscillator and its dense output") {
    OdeRhs rhs = [](double, const Vector& y, Vector& dy) {
        dy.resize(2);
        dy[0] = y[1];
        dy[1] = -y[0];
    };
    Vector y0(2);
    y0 << 1.0, 0.0;
    OdeOptions opts;
    opts.rtol = 1e-10;
    opts.atol = 1e-12;
    const double s1 = 2.0 * M_PI;
    OdeResult res = dopri5_integrate(rhs, y0, 0.0, s1, opts);
    CHECK(!res.stopped);
    CHECK(res.s_end == doctest::Approx(s1));
    CHECK(std::abs(res.y_end[0] - 1.0) < 1e-8);
    CHECK(std::abs(res.y_end[1]) < 1e-8);

    for (int k = 0; k <= 200; ++k) {
        const double s = s1 * k / 200.0;
        const Vector y = res.dense.eval(s);
        CHECK(std::abs(y[0] - std::cos(s)) < 1e-8);
        CHECK(std::abs(y[1] + std::sin(s)) < 1e-8);
        const Vector dy = res.dense.deriv(s);
        CHECK(std::abs(dy[0] + std::sin(s)) < 1e-6);
        CHECK(std::abs(dy[1] + std::cos(s)) < 1e-6);
    }

    // The interpolant is continuous across piece boundaries.
    for (size_t i = 1; i < res.dense.pieces.size(); ++i) {
        const double s = res.dense.pieces[i].s0;
        const Vector left = res.dense.pieces[i - 1].eval(s);
        const Vector right = res.dense.pieces[i].eval(s);
        CHECK((left - right).norm() < 1e-12);
    }
    CHECK(res.step_points.front() == 0.0);
    CHECK(std::is_sorted(res.step_points.begin(), res.step_points.end()));
}

TEST_CASE("dopri5 stop condition and failure modes") {
    OdeRhs linear = [](double, const Vector&, Vector& dy) { dy.setConstant(1.0); };
    StopCondition stop = [](double, const Vector& y) { return y[0] >= 5.0; };
    OdeResult res = dopri5_integrate(linear, Vector::Zero(1), 0.0, 100.0, {}, stop);
    CHECK(res.stopped);
    CHECK(res.y_end[0] >= 5.0);
    CHECK(res.s_end < 100.0);

    OdeRhs poisoned = [](double s, const Vector&, Vector& dy) {
        dy.setConstant(s > 0.5 ? std::nan("") : 1.0);
    };
    OdeOptions opts;
    opts.initial_step = 0.01;
    CHECK_THROWS_AS(dopri5_integrate(poisoned, Vector::Zero(1), 0.0, 1.0, opts),
                    StepSizeUnderflow);
}

TEST_CASE("blow-up reproduction: x = 1 - t, p = 2/(1-t)^2") {
    auto e21 = make_problem("example21");
    ExtremalArc arc = integrate_backward(e21.problem, e21.terminal, vec1(-1.0), tight());
    CHECK(arc.status == ArcStatus::Escaped);
    CHECK(arc.escape_time > 0.9);
    CHECK(arc.escape_time < 1.1);
    CHECK(arc.terminal_H == doctest::Approx(0.0).epsilon(1e-14));

    for (double t = 1.05; t <= 2.0 + 1e-12; t += 0.05) {
        CHECK(std::abs(arc.x_at(t)[0] - (1.0 - t)) < 1e-6);
        CHECK(std::abs(arc.p_at(t)[0] - 2.0 / ((1.0 - t) * (1.0 - t))) < 1e-6);
    }

    double drift_after_105 = 0.0;
    for (const ArcSample& smp : arc.samples)
        if (smp.t >= 1.05)
            drift_after_105 = std::max(drift_after_105, std::abs(smp.H - arc.terminal_H));
    CHECK(drift_after_105 <= 1e-7);

    // The sample at the escape time sits on or outside the escape ball.
    const ArcSample& first = arc.samples.front();
    CHECK(first.t == doctest::Approx(arc.escape_time));
    CHECK(first.x.norm() + first.p.norm() >= 1e3);
}

TEST_CASE("constant-adjoint arc: terminal cosine cost") {
    auto cat = make_problem("single_integrator_cos");
    ExtremalArc arc = integrate_backward(cat.problem, cat.terminal, vec1(1.0));
    CHECK(arc.status == ArcStatus::Complete);
    CHECK(arc.t_min() == doctest::Approx(0.0));
    const double sin1 = std::sin(1.0);
    CHECK(std::abs(arc.x_at(0.0)[0] - (1.0 - 2.0 * sin1)) < 1e-9);
    CHECK(std::abs(arc.x_at(0.0)[0] - (-0.6829419696157930)) < 1e-9);
    for (double t : {0.0, 0.5, 1.3, 2.0})
        CHECK(std::abs(arc.p_at(t)[0] + sin1) < 1e-10);
    CHECK(hamiltonian_drift(cat.problem, arc) < 1e-9);
    CHECK(arc.terminal_H == doctest::Approx(-0.5 * sin1 * sin1).epsilon(1e-12));
    for (const ArcSample& smp : arc.samples) CHECK(std::abs(smp.u[0] - sin1) < 1e-9);
    CHECK(arc.samples.size() >= 512);
    CHECK(arc.samples.front().t == 0.0);
    CHECK(arc.samples.back().t == 2.0);
}

TEST_CASE("zero terminal gradient gives the frozen trajectory") {
    auto cat = make_problem("single_integrator_quad", {{"q", 0.0}});
    ExtremalArc arc = integrate_backward(cat.problem, cat.terminal, vec1(0.37));
    CHECK(arc.status == ArcStatus::Complete);
    for (const ArcSample& smp : arc.samples) {
        CHECK(smp.x[0] == doctest::Approx(0.37).epsilon(1e-13));
        CHECK(smp.p[0] == 0.0);
        CHECK(smp.u[0] == 0.0);
    }
    CHECK(hamiltonian_drift(cat.problem, arc) == 0.0);
}

TEST_CASE("ODE residual of the dense interpolant stays within 10x tolerance") {
    auto cosprob = make_problem("single_integrator_cos");
    auto e21 = make_problem("example21");
    FlowOptions opts;
    ExtremalArc a1 = integrate_backward(cosprob.problem, cosprob.terminal, vec1(1.0), opts);
    CHECK(ode_residual(cosprob.problem, a1, opts) <= 10.0);
    ExtremalArc a2 = integrate_backward(e21.problem, e21.terminal, vec1(0.5), opts);
    CHECK(a2.status == ArcStatus::Complete);
    CHECK(ode_residual(e21.problem, a2, opts) <= 10.0);

    ProblemSpec trig = testprob::make_trig_nonlinear();
    TerminalCost psi = terminal_cosine(1, 0.3, 0.0);
    ExtremalArc a3 = integrate_backward(trig, psi, vec1(0.4), opts);
    CHECK(a3.status == ArcStatus::Complete);
    CHECK(ode_residual(trig, a3, opts) <= 10.0);
}

TEST_CASE("escape radius monotonicity") {
    auto e21 = make_problem("example21");
    FlowOptions nu3;
    FlowOptions nu4;
    nu4.escape_radius = 1e4;
    ExtremalArc esc3 = integrate_backward(e21.problem, e21.terminal, vec1(-1.0), nu3);
    ExtremalArc esc4 = integrate_backward(e21.problem, e21.terminal, vec1(-1.0), nu4);
    CHECK(esc3.status == ArcStatus::Escaped);
    CHECK(esc4.status == ArcStatus::Escaped);
    CHECK(esc4.escape_time <= esc3.escape_time);

    ExtremalArc ok3 = integrate_backward(e21.problem, e21.terminal, vec1(0.5), nu3);
    ExtremalArc ok4 = integrate_backward(e21.problem, e21.terminal, vec1(0.5), nu4);
    CHECK(ok3.status == ArcStatus::Complete);
    CHECK(ok4.status == ArcStatus::Complete);
}

TEST_CASE("semigroup: restart at t = 1 matches the direct solution") {
    auto cosprob = make_problem("single_integrator_cos");
    ProblemSpec trig = testprob::make_trig_nonlinear();
    TerminalCost trig_psi = terminal_cosine(1, 0.3, 0.0);

    struct Case {
        const ProblemSpec* prob;
        const TerminalCost* psi;
        double z;
    };
    for (const Case& c : {Case{&cosprob.problem, &cosprob.terminal, 1.0},
                          Case{&trig, &trig_psi, 0.4}}) {
        FlowOptions opts;
        ExtremalArc direct = integrate_backward(*c.prob, *c.psi, vec1(c.z), opts);
        REQUIRE(direct.status == ArcStatus::Complete);
        const double t_mid = 0.5 * c.prob->horizon;
        const Vector x_mid = direct.x_at(t_mid);
        const Vector p_mid = direct.p_at(t_mid);
        ExtremalArc tail =
            integrate_backward_from(*c.prob, x_mid, p_mid, t_mid, 0.0, opts);
        CHECK(tail.status == ArcStatus::Complete);
        CHECK(tail.t_min() == doctest::Approx(0.0));
        const double scale =
            opts.atol + opts.rtol * (direct.x_at(0.0).norm() + direct.p_at(0.0).norm());
        CHECK((tail.x_at(0.0) - direct.x_at(0.0)).norm() <= 10.0 * scale);
        CHECK((tail.p_at(0.0) - direct.p_at(0.0)).norm() <= 10.0 * scale);
    }
}

TEST_CASE("sampled controls re-derive from the pointwise minimizer") {
    auto e21 = make_problem("example21");
    ExtremalArc arc = integrate_backward(e21.problem, e21.terminal, vec1(0.5));
    REQUIRE(arc.status == ArcStatus::Complete);
    MinimizerOptions newton;
    newton.force_newton = true;
    for (size_t k = 0; k < arc.samples.size(); k += 37) {
        const ArcSample& smp = arc.samples[k];
        const Vector u = pointwise_minimizer(e21.problem, smp.x, smp.p, newton);
        CHECK((u - smp.u).norm() < 1e-10 * (1.0 + smp.p.norm()));
    }
}

TEST_CASE("immediate escape at the terminal point") {
    auto cat = make_problem("single_integrator_quad", {{"q", 1.0}});
    ExtremalArc arc = integrate_backward(cat.problem, cat.terminal, vec1(600.0));
    CHECK(arc.status == ArcStatus::Escaped);
    CHECK(arc.escape_time == doctest::Approx(2.0));
    CHECK(arc.samples.size() == 1);
    CHECK(arc.samples.front().t == 2.0);
    CHECK(arc.t_min() == doctest::Approx(2.0));
}

TEST_CASE("arc export: CSV layout and JSON sidecar") {
    auto cat = make_problem("single_integrator_cos");
    ExtremalArc arc = integrate_backward(cat.problem, cat.terminal, vec1(1.0));
    const std::string csv_path = "test_arc_out.csv";
    const std::string json_path = "test_arc_out.json";
    write_arc_csv(csv_path, arc, "deadbeef01234567");
    write_arc_sidecar(json_path, arc, "deadbeef01234567");

    std::ifstream f(csv_path);
    REQUIRE(f.good());
    std::string line;
    std::getline(f, line);
    CHECK(line == "# config_hash=deadbeef01234567");
    std::getline(f, line);
    CHECK(line == "t,x1,p1,u1,H");
    size_t rows = 0;
    std::string first_row;
    while (std::getline(f, line)) {
        if (rows == 0) first_row = line;
        ++rows;
    }
    CHECK(rows == arc.samples.size());
    std::stringstream ss(first_row);
    std::string cell;
    std::getline(ss, cell, ',');
    CHECK(cell == "0");
    std::getline(ss, cell, ',');
    CHECK(std::stod(cell) == arc.samples.front().x[0]);

    std::ifstream jf(json_path);
    REQUIRE(jf.good());
    nlohmann::json j;
    jf >> j;
    CHECK(j["status"] == "complete");
    CHECK(j["config_hash"] == "deadbeef01234567");
    CHECK(j["samples"].get<size_t>() == arc.samples.size());
    CHECK(j["z"][0].get<double>() == 1.0);
    std::remove(csv_path.c_str());
    std::remove(json_path.c_str());
}

TEST_CASE("double formatting round-trips") {
    for (double v : {0.1, -1.0 / 3.0, 1e-300, -2.5e17, 0.0, 3.141592653589793}) {
        const std::string s = fmt_double(v);
        CHECK(std::stod(s) == v);
    }
    CHECK(fmt_double(std::numeric_limits<double>::infinity()) == "inf");
    CHECK(fmt_double(-std::numeric_limits<double>::infinity()) == "-inf");
    CHECK(fmt_double(std::nan("")) == "nan");
}
