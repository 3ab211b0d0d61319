#pragma once

#include <string>
#include <vector>

#include "extremal/flow.hpp"

namespace extremal {

// ---------------------------------------------------------------------------
// Constructive a-priori bounds on globally optimal arcs, and their runtime
// verification.  All suprema are evaluated by deterministic low-discrepancy
// sampling over the stated balls, inflated by a 10% safety factor; exponents
// that leave double range saturate to +inf and set the overflow flag.
// ---------------------------------------------------------------------------

struct BoundReport {
    double r = 0.0;
    double ball1 = 0.0;  // (r+1) e^{c1 T}, the state ball behind beta1
    double beta1 = 0.0;  // (1/c2)(T sup L(x,0) + sup |psi|) + T over |x| <= ball1
    double beta = 0.0;   // (r+1) exp{(c1/2)[beta1 + (m+2)T]}
    double beta2 = 0.0;  // e^{c1 (1 + sqrt(beta1 T))}, Gronwall-style majorant
    double alpha1 = 0.0; // ((T+beta1) sup ell + sup |grad psi|) beta2 + sup|L(x,0)| + c2
    double alpha = 0.0;  // max(alpha1/c2, c2 + sup |L(x,0)|) over |x| <= beta
    double gamma = 0.0;  // (sup |grad psi| + T sup |L_x|) e^{T sup ||f_x||}
    bool overflow = false;
    long sup_samples = 0; // low-discrepancy points per supremum
};

BoundReport compute_bounds(const ProblemSpec& prob, const TerminalCost& psi, double r,
                           long samples_per_dim = 4096);

struct VerifyOutcome {
    Vector z;
    bool pass = false;
    double sup_x = 0.0; // observed over arc samples; +inf when the arc escaped
    double sup_p = 0.0;
    double sup_u = 0.0;
    std::vector<std::string> violations;
};

/// Checks sup |x| <= beta(r), sup |u| <= alpha(r), sup |p| <= gamma(r) on the
/// arc samples at z.  Escaped arcs fail structurally: the adjoint leaves
/// every compact set, so no essential-sup bound can hold.
VerifyOutcome verify_bounds(const ProblemSpec& prob, const TerminalCost& psi,
                            const Vector& z, const BoundReport& report,
                            const FlowOptions& opts = {});

/// bounds.json: the ladder of reports plus any verification outcomes.
void write_bounds_json(const std::string& path, const std::vector<BoundReport>& reports,
                       const std::vector<VerifyOutcome>& verifications,
                       const std::string& config_hash);

} // namespace extremal
