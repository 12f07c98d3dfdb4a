// Command-line front end: training runs, spectrum snapshots, interpolation
// sweeps, baseline comparisons, and the invariant suite.

#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "winq/errors.hpp"
#include "winq/experiment.hpp"

namespace {

std::vector<double> parse_alphas(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stod(item));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"winq: quantization-aware training laboratory"};
    app.require_subcommand(1);

    std::string config, config_winq, checkpoint, out_dir = "out";
    std::string alphas_csv, seed_override;
    double target_loss = std::numeric_limits<double>::quiet_NaN();
    double tau = std::numeric_limits<double>::quiet_NaN();
    bool refit_grids = false;

    auto add_common = [&](CLI::App* cmd, bool needs_config) {
        if (needs_config)
            cmd->add_option("--config", config, "experiment config file")->required();
        cmd->add_option("--out-dir", out_dir, "output directory");
    };

    CLI::App* train = app.add_subcommand("train", "run a training job");
    add_common(train, true);
    train->add_option("--seed-override", seed_override,
                      "replace seeds, e.g. init=5,data=6,noise=7");

    CLI::App* spectrum = app.add_subcommand("spectrum", "Hessian spectrum of a checkpoint");
    add_common(spectrum, true);
    spectrum->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    spectrum->add_option("--seed-override", seed_override, "probe seed, e.g. slq=11");
    spectrum->add_option("--tau", tau, "near-zero threshold");

    CLI::App* sweep = app.add_subcommand("sweep", "interpolation curvature sweep");
    add_common(sweep, true);
    sweep->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    sweep->add_option("--alphas", alphas_csv, "comma-separated alphas (default 0,0.2,...,1)");
    sweep->add_flag("--refit-grids", refit_grids, "re-fit grids at each interpolated point");

    CLI::App* compare = app.add_subcommand("compare", "baseline vs treatment step counts");
    compare->add_option("--config", config, "baseline config")->required();
    compare->add_option("--config-winq", config_winq, "treatment config")->required();
    compare->add_option("--out-dir", out_dir, "output directory");
    compare->add_option("--target-loss", target_loss, "smoothed-loss target "
                        "(default: baseline's final smoothed loss)");

    CLI::App* verify = app.add_subcommand("verify", "run the invariant suite");
    (void)verify;

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) {
            winq::SeedOverride seeds;
            std::stringstream ss(seed_override);
            std::string kvp;
            while (std::getline(ss, kvp, ',')) {
                if (kvp.empty()) continue;
                auto eq = kvp.find('=');
                if (eq == std::string::npos)
                    throw winq::ConfigError("bad --seed-override entry: " + kvp);
                std::string key = kvp.substr(0, eq);
                std::uint64_t val = std::stoull(kvp.substr(eq + 1));
                if (key == "init")
                    seeds.init = val;
                else if (key == "data")
                    seeds.data = val;
                else if (key == "noise")
                    seeds.noise = val;
                else
                    throw winq::ConfigError("unknown seed name: " + key);
            }
            return winq::cmd_train(config, out_dir, seeds);
        }
        if (spectrum->parsed()) {
            std::optional<std::uint64_t> slq_seed;
            if (!seed_override.empty()) {
                auto eq = seed_override.find('=');
                slq_seed = std::stoull(eq == std::string::npos ? seed_override
                                                               : seed_override.substr(eq + 1));
            }
            std::optional<double> tau_opt;
            if (!std::isnan(tau)) tau_opt = tau;
            return winq::cmd_spectrum(checkpoint, config, out_dir, slq_seed, tau_opt);
        }
        if (sweep->parsed())
            return winq::cmd_sweep(checkpoint, config, out_dir, parse_alphas(alphas_csv),
                                   refit_grids);
        if (compare->parsed()) {
            std::optional<double> target;
            if (!std::isnan(target_loss)) target = target_loss;
            return winq::cmd_compare(config, config_winq, out_dir, target);
        }
        if (verify->parsed()) return winq::cmd_verify();
    } catch (const winq::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return winq::kStatusError;
    } catch (const winq::ArgumentError& e) {
        std::fprintf(stderr, "argument error: %s\n", e.what());
        return winq::kStatusError;
    } catch (const winq::NumericalError& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return winq::kStatusDiverged;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return winq::kStatusError;
    }
    return winq::kStatusError;
}
