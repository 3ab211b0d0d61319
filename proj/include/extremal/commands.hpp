#pragma once

#include "extremal/config.hpp"

namespace extremal {

// ---------------------------------------------------------------------------
// Batch front-end: each command instantiates the configured problem, runs one
// analysis, and writes its artifacts under cfg.out_dir (created on demand).
// Every artifact embeds the config hash.  Return values are process exit
// codes: 0 success, 3 domain escape (solve only), 4 perturbation budget
// exhausted; configuration problems throw ConfigError and internal failures
// throw Error, mapped to 2 and 1 by the CLI shell.
// ---------------------------------------------------------------------------

/// arc.csv + arc.json for the configured z.  Exit 3 when the arc escapes.
int cmd_solve(const RunConfig& cfg);

/// One trajectory CSV per grid z (escaped arcs truncated at their escape
/// time) plus index.csv; 1-d problems only.
int cmd_figure1(const RunConfig& cfg);

/// locus.csv + conjugate_summary.json from the z-box sweep.
int cmd_conjugate(const RunConfig& cfg);

/// reach.json for the configured y.
int cmd_reach(const RunConfig& cfg);

/// value.csv + vpsi.csv + value_summary.json over the y-grid.
int cmd_value(const RunConfig& cfg);

/// bounds.json: the report ladder over the configured radii, plus
/// verifications of any configured arcs against the largest rung.
int cmd_bounds(const RunConfig& cfg);

/// transversality.json: rank data at the final sweep's candidates under the
/// accepted (or last attempted) perturbation.  Exit 4 when no draw works.
int cmd_perturb(const RunConfig& cfg);

} // namespace extremal
