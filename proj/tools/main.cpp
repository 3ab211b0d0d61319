#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "extremal/commands.hpp"

namespace {

struct Flags {
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    int threads = 1;
    std::vector<double> z;
    std::vector<double> y;
};

void add_common(CLI::App* sub, Flags& f) {
    sub->add_option("--config", f.config, "run configuration file");
    sub->add_option("--out", f.out, "output directory (overrides [run] out)");
    sub->add_option("--seed", f.seed, "RNG seed (overrides [run] seed)");
    sub->add_option("--threads", f.threads, "worker threads, 0 = hardware (overrides [run])");
}

int dispatch(const std::string& name, const extremal::RunConfig& cfg) {
    if (name == "solve") return extremal::cmd_solve(cfg);
    if (name == "figure1") return extremal::cmd_figure1(cfg);
    if (name == "conjugate") return extremal::cmd_conjugate(cfg);
    if (name == "reach") return extremal::cmd_reach(cfg);
    if (name == "value") return extremal::cmd_value(cfg);
    if (name == "bounds") return extremal::cmd_bounds(cfg);
    return extremal::cmd_perturb(cfg);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"backward Pontryagin extremal flow: conjugate points, optimality, bounds"};
    app.require_subcommand(1);
    Flags f;

    CLI::App* solve = app.add_subcommand("solve", "integrate one backward extremal");
    solve->add_option("--z", f.z, "terminal state (overrides [solve] z)")->expected(-1);
    CLI::App* figure1 =
        app.add_subcommand("figure1", "sweep a scalar z grid into trajectory CSVs");
    CLI::App* conjugate =
        app.add_subcommand("conjugate", "sweep the z-box for conjugate locus points");
    CLI::App* reach_cmd =
        app.add_subcommand("reach", "find every extremal reaching a given initial point");
    reach_cmd->add_option("--y", f.y, "initial point (overrides [reach] y)")->expected(-1);
    CLI::App* value =
        app.add_subcommand("value", "synthesize the value function on the y-grid");
    CLI::App* bounds =
        app.add_subcommand("bounds", "compute the a-priori bound ladder");
    CLI::App* perturb =
        app.add_subcommand("perturb", "search for a genericity-restoring perturbation");
    for (CLI::App* sub : {solve, figure1, conjugate, reach_cmd, value, bounds, perturb})
        add_common(sub, f);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2; // malformed invocations are configuration errors
    }

    CLI::App* sub = app.get_subcommands().front();
    const auto passed = [sub](const std::string& name) {
        const CLI::Option* o = sub->get_option_no_throw(name);
        return o != nullptr && o->count() > 0;
    };
    try {
        extremal::RunConfig cfg;
        if (passed("--config")) {
            cfg = extremal::load_config(f.config);
        } else {
            extremal::apply_env_overrides(cfg);
            extremal::validate_config(cfg);
        }
        if (passed("--out")) cfg.out_dir = f.out;
        if (passed("--seed")) cfg.seed = f.seed;
        if (passed("--threads")) cfg.threads = f.threads;
        if (passed("--z")) cfg.solve_z = f.z;
        if (passed("--y")) cfg.reach_y = f.y;
        extremal::validate_config(cfg);
        return dispatch(sub->get_name(), cfg);
    } catch (const extremal::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const extremal::DimensionMismatch& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const extremal::BudgetExhausted& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const extremal::ArcEscaped& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const extremal::EscapedNeighborhood& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
