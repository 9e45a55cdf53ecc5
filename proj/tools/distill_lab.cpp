// Command-line front end: parse/override an experiment config, run it,
// report where the artifacts landed.
//
// Exit codes: 0 success, 2 config error, 3 runtime/divergence error.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "distill/errors.hpp"
#include "distill/kernels.hpp"
#include "distill/xlab.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Invocation {
    std::string config_path;
    const char* forced_kind = nullptr;  // null: use the config's own kind
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::size_t> workers;
    std::vector<double> alphas;
    std::vector<double> probs;
};

int execute(const Invocation& inv) {
    std::ifstream in(inv.config_path);
    if (!in) {
        std::fprintf(stderr, "config error: cannot open %s\n",
                     inv.config_path.c_str());
        return kExitConfig;
    }
    std::ostringstream ss;
    ss << in.rdbuf();

    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::parse_error& e) {
        std::fprintf(stderr, "config error: %s is not valid JSON: %s\n",
                     inv.config_path.c_str(), e.what());
        return kExitConfig;
    }
    if (!j.is_object()) {
        std::fprintf(stderr, "config error: %s: top level must be an object\n",
                     inv.config_path.c_str());
        return kExitConfig;
    }
    // Command-line overrides are applied to the document before the strict
    // parse so they go through exactly the same validation as file values.
    if (inv.forced_kind) j["kind"] = inv.forced_kind;
    if (inv.seed) j["meta_seed"] = *inv.seed;
    if (inv.out) j["out_dir"] = *inv.out;
    if (inv.workers) j["workers"] = *inv.workers;
    if (!inv.alphas.empty()) j["alphas"] = inv.alphas;
    if (!inv.probs.empty()) j["probs"] = inv.probs;

    try {
        const distill::xlab::ExperimentConfig config =
            distill::xlab::parse_config(j.dump());
        const distill::xlab::RunResult r = distill::xlab::run(config);
        std::printf("kernels: %s\n",
                    distill::kernels::backend_name(
                        distill::kernels::active_backend()));
        std::printf("repeats: %zu written, %zu diverged\n",
                    r.repeat_csvs.size(), r.failed_repeats);
        std::printf("aggregate: %s\n", r.aggregate.string().c_str());
        return kExitOk;
    } catch (const distill::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const distill::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale knowledge-distillation experiment lab"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed = 0;
    std::string out;
    std::size_t workers = 0;
    std::vector<double> alphas;
    std::vector<double> probs;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("config", config_path, "experiment config (JSON)")
            ->required()
            ->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "override meta_seed");
        sub->add_option("--out", out, "override out_dir");
        sub->add_option("--workers", workers, "override worker count");
    };

    CLI::App* cmd_run =
        app.add_subcommand("run", "execute the config's own experiment kind");
    add_common(cmd_run);
    CLI::App* cmd_res = app.add_subcommand(
        "resemblance", "export the per-class gradient-difference matrix");
    add_common(cmd_res);
    CLI::App* cmd_sweep =
        app.add_subcommand("sweep-alpha", "sweep the distillation-loss weight");
    add_common(cmd_sweep);
    cmd_sweep
        ->add_option("--alphas", alphas, "comma-separated weight list")
        ->delimiter(',');
    CLI::App* cmd_inter = app.add_subcommand(
        "intermediate", "partial keep-probability study");
    add_common(cmd_inter);
    cmd_inter
        ->add_option("--probs", probs, "comma-separated keep probabilities")
        ->delimiter(',');
    CLI::App* cmd_biasvar = app.add_subcommand(
        "biasvar", "bias-variance decomposition over seeded ensembles");
    add_common(cmd_biasvar);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);  // prints help or the error message
        return code == 0 ? kExitOk : kExitConfig;
    }

    Invocation inv;
    inv.config_path = config_path;
    if (cmd_res->parsed()) inv.forced_kind = "resemblance";
    else if (cmd_sweep->parsed()) inv.forced_kind = "alpha-sweep";
    else if (cmd_inter->parsed()) inv.forced_kind = "intermediate";
    else if (cmd_biasvar->parsed()) inv.forced_kind = "biasvar";

    CLI::App* active = app.get_subcommands().front();
    if (active->count("--seed")) inv.seed = seed;
    if (active->count("--out")) inv.out = out;
    if (active->count("--workers")) inv.workers = workers;
    if (cmd_sweep->parsed() && cmd_sweep->count("--alphas"))
        inv.alphas = alphas;
    if (cmd_inter->parsed() && cmd_inter->count("--probs")) inv.probs = probs;

    return execute(inv);
}
