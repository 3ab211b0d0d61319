#pragma once

#include <map>
#include <string>
#include <vector>

#include "extremal/problem.hpp"

namespace extremal {

using ParamMap = std::map<std::string, double>;

/// A catalog entry pairs a problem with its default terminal cost.
struct CatalogProblem {
    ProblemSpec problem;
    TerminalCost terminal;
};

// Terminal cost families -----------------------------------------------------

TerminalCost terminal_zero(int n);
/// psi(z) = 0.5 z^T Q z + g^T z + c.
TerminalCost terminal_quadratic(const Matrix& Q, const Vector& g, double c);
/// psi(z) = amp * cos(sum_i z_i + phase).
TerminalCost terminal_cosine(int n, double amp, double phase);
/// psi(z) = amp * exp(sum_i z_i + shift).
TerminalCost terminal_exp(int n, double amp, double shift);

/// Build a terminal cost from a family name and flat parameters
/// (q11, q12, ..., g1, ..., c, amp, phase, shift as applicable).
TerminalCost make_terminal(const std::string& family, const ParamMap& params, int n);

// Catalog ---------------------------------------------------------------------

/// Labels: example21, single_integrator_cos, single_integrator_quad, planar_lq.
std::vector<std::string> catalog_labels();

/// Construct a catalog problem.  Parameters override the entry's defaults:
///   example21:              amp (2), shift (1)
///   single_integrator_cos:  amp (1), phase (0)
///   single_integrator_quad: q (1), g (0), c (0)
///   planar_lq:              q11, q12, q22 (I/2), g1, g2 (0), drift (0)
CatalogProblem make_problem(const std::string& label, const ParamMap& params = {});

} // namespace extremal
