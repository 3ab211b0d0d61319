#include "extremal/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "extremal/csv.hpp"

namespace extremal {

namespace {

[[noreturn]] void fail(int line, const std::string& msg) {
    throw ConfigError("config line " + std::to_string(line) + ": " + msg);
}

std::string trim(const std::string& s) {
    const size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    for (const char c : s) {
        if (c == sep) {
            parts.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    parts.push_back(trim(cur));
    return parts;
}

double to_double(const std::string& v, int line, const std::string& key) {
    try {
        size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) fail(line, "trailing characters after number in '" + key + "'");
        return x;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        fail(line, "'" + key + "' expects a number, got '" + v + "'");
    }
}

long to_long(const std::string& v, int line, const std::string& key) {
    const double x = to_double(v, line, key);
    const long i = static_cast<long>(x);
    if (static_cast<double>(i) != x) fail(line, "'" + key + "' expects an integer");
    return i;
}

int to_int(const std::string& v, int line, const std::string& key) {
    return static_cast<int>(to_long(v, line, key));
}

std::uint64_t to_u64(const std::string& v, int line, const std::string& key) {
    try {
        size_t used = 0;
        const unsigned long long x = std::stoull(v, &used);
        if (used != v.size()) fail(line, "trailing characters after number in '" + key + "'");
        return x;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        fail(line, "'" + key + "' expects a nonnegative integer, got '" + v + "'");
    }
}

std::vector<double> to_double_list(const std::string& v, int line, const std::string& key) {
    std::vector<double> out;
    for (const std::string& p : split(v, ','))
        if (!p.empty()) out.push_back(to_double(p, line, key));
    if (out.empty()) fail(line, "'" + key + "' expects at least one number");
    return out;
}

std::vector<int> to_int_list(const std::string& v, int line, const std::string& key) {
    std::vector<int> out;
    for (const std::string& p : split(v, ','))
        if (!p.empty()) out.push_back(to_int(p, line, key));
    if (out.empty()) fail(line, "'" + key + "' expects at least one integer");
    return out;
}

void apply_key(RunConfig& cfg, const std::string& sec, const std::string& key,
               const std::string& val, int line) {
    if (sec == "problem") {
        if (key == "label") cfg.label = val;
        else if (key == "horizon") cfg.horizon = to_double(val, line, key);
        else cfg.problem_params[key] = to_double(val, line, key); // names checked by the catalog
        return;
    }
    if (sec == "terminal") {
        if (key == "family") cfg.terminal_family = val;
        else cfg.terminal_params[key] = to_double(val, line, key);
        return;
    }
    if (sec == "flow") {
        if (key == "rtol") cfg.flow.rtol = to_double(val, line, key);
        else if (key == "atol") cfg.flow.atol = to_double(val, line, key);
        else if (key == "escape_radius") cfg.flow.escape_radius = to_double(val, line, key);
        else if (key == "samples") cfg.flow.samples = to_int(val, line, key);
        else if (key == "max_step") cfg.flow.max_step = to_double(val, line, key);
        else fail(line, "unknown key '" + key + "' in [flow]");
        return;
    }
    if (sec == "grids") {
        if (key == "z_lo") cfg.z_lo = to_double_list(val, line, key);
        else if (key == "z_hi") cfg.z_hi = to_double_list(val, line, key);
        else if (key == "z_nodes") cfg.z_nodes = to_int_list(val, line, key);
        else if (key == "y_lo") cfg.y_lo = to_double_list(val, line, key);
        else if (key == "y_hi") cfg.y_hi = to_double_list(val, line, key);
        else if (key == "y_nodes") cfg.y_nodes = to_int_list(val, line, key);
        else fail(line, "unknown key '" + key + "' in [grids]");
        return;
    }
    if (sec == "tolerances") {
        if (key == "rank_tol") cfg.conjugate.rank_tol = to_double(val, line, key);
        else if (key == "det_tol") cfg.conjugate.det_tol = to_double(val, line, key);
        else if (key == "omega_tol") cfg.conjugate.omega_tol = to_double(val, line, key);
        else if (key == "dedup_tol") cfg.conjugate.dedup_tol = to_double(val, line, key);
        else if (key == "null_gap") cfg.conjugate.null_gap = to_double(val, line, key);
        else if (key == "max_bisect") cfg.conjugate.max_bisect = to_int(val, line, key);
        else if (key == "tie_tol") cfg.reach.tie_tol = to_double(val, line, key);
        else if (key == "reach_tol") cfg.reach.reach_tol = to_double(val, line, key);
        else if (key == "dedup_radius") cfg.reach.dedup_radius = to_double(val, line, key);
        else if (key == "random_starts") cfg.reach.random_starts = to_int(val, line, key);
        else if (key == "max_newton") cfg.reach.max_newton = to_int(val, line, key);
        else if (key == "jacobian_refresh") cfg.reach.jacobian_refresh = to_int(val, line, key);
        else if (key == "seed_cells") cfg.reach.seed_cells = to_double(val, line, key);
        else fail(line, "unknown key '" + key + "' in [tolerances]");
        return;
    }
    if (sec == "solve") {
        if (key == "z") cfg.solve_z = to_double_list(val, line, key);
        else fail(line, "unknown key '" + key + "' in [solve]");
        return;
    }
    if (sec == "figure1") {
        if (key == "z_lo") cfg.fig_lo = to_double(val, line, key);
        else if (key == "z_hi") cfg.fig_hi = to_double(val, line, key);
        else if (key == "z_step") cfg.fig_step = to_double(val, line, key);
        else fail(line, "unknown key '" + key + "' in [figure1]");
        return;
    }
    if (sec == "reach") {
        if (key == "y") cfg.reach_y = to_double_list(val, line, key);
        else fail(line, "unknown key '" + key + "' in [reach]");
        return;
    }
    if (sec == "bounds") {
        if (key == "radii") cfg.bound_radii = to_double_list(val, line, key);
        else if (key == "samples_per_dim") cfg.samples_per_dim = to_long(val, line, key);
        else if (key == "verify_z") cfg.verify_z = to_double_list(val, line, key);
        else fail(line, "unknown key '" + key + "' in [bounds]");
        return;
    }
    if (sec == "perturb") {
        if (key == "max_draws") cfg.max_draws = to_int(val, line, key);
        else if (key == "scale") cfg.perturb_scale = to_double(val, line, key);
        else if (key == "r_in") cfg.r_in = to_double(val, line, key);
        else if (key == "r_out") cfg.r_out = to_double(val, line, key);
        else fail(line, "unknown key '" + key + "' in [perturb]");
        return;
    }
    if (sec == "run") {
        if (key == "seed") cfg.seed = to_u64(val, line, key);
        else if (key == "threads") cfg.threads = to_int(val, line, key);
        else if (key == "out") cfg.out_dir = val;
        else fail(line, "unknown key '" + key + "' in [run]");
        return;
    }
    fail(line, "unknown section [" + sec + "]");
}

const std::vector<std::string>& known_sections() {
    static const std::vector<std::string> kSections = {
        "problem", "terminal", "flow",   "grids",  "tolerances", "solve",
        "figure1", "reach",    "bounds", "perturb", "run"};
    return kSections;
}

void positive(double v, const std::string& name) {
    if (!(v > 0.0)) throw ConfigError("config: '" + name + "' must be positive");
}

GridBox make_box(const std::vector<double>& lo, const std::vector<double>& hi,
                 const std::vector<int>& nodes, int n, const std::string& name) {
    auto pick_d = [&](const std::vector<double>& v, int i) {
        return v.size() == 1 ? v[0] : v[static_cast<size_t>(i)];
    };
    if ((lo.size() != 1 && static_cast<int>(lo.size()) != n) ||
        (hi.size() != 1 && static_cast<int>(hi.size()) != n) ||
        (nodes.size() != 1 && static_cast<int>(nodes.size()) != n))
        throw ConfigError("config: " + name + " lists must have 1 or " + std::to_string(n) +
                          " entries");
    GridBox box;
    box.lo = Vector(n);
    box.hi = Vector(n);
    box.nodes_per_axis.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        box.lo[i] = pick_d(lo, i);
        box.hi[i] = pick_d(hi, i);
        box.nodes_per_axis[static_cast<size_t>(i)] =
            nodes.size() == 1 ? nodes[0] : nodes[static_cast<size_t>(i)];
        if (!(box.hi[i] > box.lo[i]))
            throw ConfigError("config: " + name + " needs hi > lo on every axis");
    }
    validate_grid(box);
    return box;
}

} // namespace

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        const size_t hash = raw.find('#');
        if (hash != std::string::npos) raw = raw.substr(0, hash);
        const std::string s = trim(raw);
        if (s.empty()) continue;
        if (s.front() == '[') {
            if (s.back() != ']') fail(line, "unterminated section header");
            section = trim(s.substr(1, s.size() - 2));
            bool known = false;
            for (const std::string& k : known_sections()) known |= (k == section);
            if (!known) fail(line, "unknown section [" + section + "]");
            continue;
        }
        const size_t eq = s.find('=');
        if (eq == std::string::npos) fail(line, "expected 'key = value'");
        if (section.empty()) fail(line, "key outside any section");
        const std::string key = trim(s.substr(0, eq));
        const std::string val = trim(s.substr(eq + 1));
        if (key.empty()) fail(line, "empty key");
        if (val.empty()) fail(line, "empty value for '" + key + "'");
        apply_key(cfg, section, key, val, line);
    }
    return cfg;
}

void apply_env_overrides(RunConfig& cfg) {
    struct Override {
        const char* name;
        double* target;
    };
    const Override doubles[] = {
        {"EXTREMAL_RANK_TOL", &cfg.conjugate.rank_tol},
        {"EXTREMAL_DET_TOL", &cfg.conjugate.det_tol},
        {"EXTREMAL_OMEGA_TOL", &cfg.conjugate.omega_tol},
        {"EXTREMAL_DEDUP_TOL", &cfg.conjugate.dedup_tol},
        {"EXTREMAL_NULL_GAP", &cfg.conjugate.null_gap},
        {"EXTREMAL_TIE_TOL", &cfg.reach.tie_tol},
        {"EXTREMAL_REACH_TOL", &cfg.reach.reach_tol},
        {"EXTREMAL_DEDUP_RADIUS", &cfg.reach.dedup_radius},
        {"EXTREMAL_SEED_CELLS", &cfg.reach.seed_cells},
    };
    for (const Override& o : doubles) {
        const char* raw = std::getenv(o.name);
        if (raw == nullptr) continue;
        const std::string v(raw);
        try {
            size_t used = 0;
            const double x = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument("trailing");
            *o.target = x;
        } catch (const std::exception&) {
            throw ConfigError(std::string("environment override ") + o.name +
                              ": not a number: '" + v + "'");
        }
    }
    struct IntOverride {
        const char* name;
        int* target;
    };
    const IntOverride ints[] = {
        {"EXTREMAL_MAX_BISECT", &cfg.conjugate.max_bisect},
        {"EXTREMAL_RANDOM_STARTS", &cfg.reach.random_starts},
        {"EXTREMAL_MAX_NEWTON", &cfg.reach.max_newton},
        {"EXTREMAL_JACOBIAN_REFRESH", &cfg.reach.jacobian_refresh},
    };
    for (const IntOverride& o : ints) {
        const char* raw = std::getenv(o.name);
        if (raw == nullptr) continue;
        const std::string v(raw);
        try {
            size_t used = 0;
            const int x = std::stoi(v, &used);
            if (used != v.size()) throw std::invalid_argument("trailing");
            *o.target = x;
        } catch (const std::exception&) {
            throw ConfigError(std::string("environment override ") + o.name +
                              ": not an integer: '" + v + "'");
        }
    }
}

void validate_config(const RunConfig& cfg) {
    positive(cfg.flow.rtol, "flow.rtol");
    positive(cfg.flow.atol, "flow.atol");
    positive(cfg.flow.escape_radius, "flow.escape_radius");
    if (cfg.flow.samples < 2) throw ConfigError("config: 'flow.samples' must be at least 2");
    if (cfg.flow.max_step < 0.0)
        throw ConfigError("config: 'flow.max_step' must be nonnegative");
    if (cfg.horizon < 0.0) throw ConfigError("config: 'problem.horizon' must be nonnegative");

    positive(cfg.conjugate.rank_tol, "tolerances.rank_tol");
    positive(cfg.conjugate.det_tol, "tolerances.det_tol");
    positive(cfg.conjugate.omega_tol, "tolerances.omega_tol");
    positive(cfg.conjugate.dedup_tol, "tolerances.dedup_tol");
    positive(cfg.conjugate.null_gap, "tolerances.null_gap");
    if (cfg.conjugate.max_bisect < 1)
        throw ConfigError("config: 'tolerances.max_bisect' must be at least 1");
    positive(cfg.reach.tie_tol, "tolerances.tie_tol");
    positive(cfg.reach.reach_tol, "tolerances.reach_tol");
    positive(cfg.reach.dedup_radius, "tolerances.dedup_radius");
    positive(cfg.reach.seed_cells, "tolerances.seed_cells");
    if (cfg.reach.random_starts < 0)
        throw ConfigError("config: 'tolerances.random_starts' must be nonnegative");
    if (cfg.reach.max_newton < 1)
        throw ConfigError("config: 'tolerances.max_newton' must be at least 1");
    if (cfg.reach.jacobian_refresh < 1)
        throw ConfigError("config: 'tolerances.jacobian_refresh' must be at least 1");

    for (const int n : cfg.z_nodes)
        if (n < 2) throw ConfigError("config: 'grids.z_nodes' entries must be at least 2");
    for (const int n : cfg.y_nodes)
        if (n < 2) throw ConfigError("config: 'grids.y_nodes' entries must be at least 2");

    positive(cfg.fig_step, "figure1.z_step");
    if (!(cfg.fig_hi >= cfg.fig_lo))
        throw ConfigError("config: 'figure1' needs z_hi >= z_lo");

    if (cfg.bound_radii.empty()) throw ConfigError("config: 'bounds.radii' must be nonempty");
    for (const double r : cfg.bound_radii) positive(r, "bounds.radii");
    if (cfg.samples_per_dim < 1)
        throw ConfigError("config: 'bounds.samples_per_dim' must be at least 1");

    if (cfg.max_draws < 1) throw ConfigError("config: 'perturb.max_draws' must be at least 1");
    if (cfg.perturb_scale < 0.0)
        throw ConfigError("config: 'perturb.scale' must be nonnegative");
    positive(cfg.r_in, "perturb.r_in");
    if (!(cfg.r_out > cfg.r_in))
        throw ConfigError("config: 'perturb.r_out' must exceed 'perturb.r_in'");

    if (cfg.threads < 0) throw ConfigError("config: 'run.threads' must be nonnegative");
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    RunConfig cfg = parse_config_text(buf.str());
    apply_env_overrides(cfg);
    validate_config(cfg);
    return cfg;
}

namespace {

std::string join_doubles(const std::vector<double>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += fmt_double(v[i]);
    }
    return out;
}

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    return out;
}

} // namespace

std::string canonical_config(const RunConfig& cfg) {
    std::string s;
    auto put = [&s](const std::string& key, const std::string& val) {
        s += key;
        s += '=';
        s += val;
        s += '\n';
    };
    put("problem.label", cfg.label);
    put("problem.horizon", fmt_double(cfg.horizon));
    for (const auto& [k, v] : cfg.problem_params) put("problem.param." + k, fmt_double(v));
    put("terminal.family", cfg.terminal_family);
    for (const auto& [k, v] : cfg.terminal_params) put("terminal.param." + k, fmt_double(v));
    put("flow.rtol", fmt_double(cfg.flow.rtol));
    put("flow.atol", fmt_double(cfg.flow.atol));
    put("flow.escape_radius", fmt_double(cfg.flow.escape_radius));
    put("flow.samples", std::to_string(cfg.flow.samples));
    put("flow.max_step", fmt_double(cfg.flow.max_step));
    put("grids.z_lo", join_doubles(cfg.z_lo));
    put("grids.z_hi", join_doubles(cfg.z_hi));
    put("grids.z_nodes", join_ints(cfg.z_nodes));
    put("grids.y_lo", join_doubles(cfg.y_lo));
    put("grids.y_hi", join_doubles(cfg.y_hi));
    put("grids.y_nodes", join_ints(cfg.y_nodes));
    put("tolerances.rank_tol", fmt_double(cfg.conjugate.rank_tol));
    put("tolerances.det_tol", fmt_double(cfg.conjugate.det_tol));
    put("tolerances.omega_tol", fmt_double(cfg.conjugate.omega_tol));
    put("tolerances.dedup_tol", fmt_double(cfg.conjugate.dedup_tol));
    put("tolerances.null_gap", fmt_double(cfg.conjugate.null_gap));
    put("tolerances.max_bisect", std::to_string(cfg.conjugate.max_bisect));
    put("tolerances.tie_tol", fmt_double(cfg.reach.tie_tol));
    put("tolerances.reach_tol", fmt_double(cfg.reach.reach_tol));
    put("tolerances.dedup_radius", fmt_double(cfg.reach.dedup_radius));
    put("tolerances.random_starts", std::to_string(cfg.reach.random_starts));
    put("tolerances.max_newton", std::to_string(cfg.reach.max_newton));
    put("tolerances.jacobian_refresh", std::to_string(cfg.reach.jacobian_refresh));
    put("tolerances.seed_cells", fmt_double(cfg.reach.seed_cells));
    put("solve.z", join_doubles(cfg.solve_z));
    put("figure1.z_lo", fmt_double(cfg.fig_lo));
    put("figure1.z_hi", fmt_double(cfg.fig_hi));
    put("figure1.z_step", fmt_double(cfg.fig_step));
    put("reach.y", join_doubles(cfg.reach_y));
    put("bounds.radii", join_doubles(cfg.bound_radii));
    put("bounds.samples_per_dim", std::to_string(cfg.samples_per_dim));
    put("bounds.verify_z", join_doubles(cfg.verify_z));
    put("perturb.max_draws", std::to_string(cfg.max_draws));
    put("perturb.scale", fmt_double(cfg.perturb_scale));
    put("perturb.r_in", fmt_double(cfg.r_in));
    put("perturb.r_out", fmt_double(cfg.r_out));
    put("run.seed", std::to_string(cfg.seed));
    return s;
}

std::string config_hash(const RunConfig& cfg) {
    const std::string text = canonical_config(cfg);
    std::uint64_t h = 14695981039346656037ULL;
    for (const unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

CatalogProblem instantiate(const RunConfig& cfg) {
    CatalogProblem cp = make_problem(cfg.label, cfg.problem_params);
    const int n = cp.problem.state_dim();
    if (!cfg.terminal_family.empty())
        cp.terminal = make_terminal(cfg.terminal_family, cfg.terminal_params, n);
    if (cfg.horizon > 0.0) cp.problem.horizon = cfg.horizon;
    return cp;
}

GridBox z_box(const RunConfig& cfg, int n) {
    return make_box(cfg.z_lo, cfg.z_hi, cfg.z_nodes, n, "grids.z");
}

GridBox y_grid(const RunConfig& cfg, int n) {
    return make_box(cfg.y_lo, cfg.y_hi, cfg.y_nodes, n, "grids.y");
}

} // namespace extremal
