#pragma once

#include <optional>
#include <string>
#include <vector>

#include "winq/config.hpp"
#include "winq/train.hpp"

namespace winq {

inline constexpr const char* kVersionString = "winq 0.1.0";

// Exit statuses shared by the library entry points and the CLI.
inline constexpr int kStatusOk = 0;
inline constexpr int kStatusError = 1;       // bad config / arguments
inline constexpr int kStatusDiverged = 2;    // training aborted on divergence
inline constexpr int kStatusBadCheckpoint = 3;

struct SeedOverride {
    std::optional<std::uint64_t> init, data, noise;
    void apply(TrainConfig& cfg) const {
        if (init) cfg.seed_init = *init;
        if (data) cfg.seed_data = *data;
        if (noise) cfg.seed_noise = *noise;
    }
};

// Runs a training job: metrics JSONL (one record per step), final checkpoint,
// manifest. Returns kStatusDiverged when the run aborts.
int cmd_train(const std::string& config_path, const std::string& out_dir,
              const SeedOverride& seeds = {});

// Spectrum snapshot of a checkpoint: CSV of (theta, weight) plus a stats
// record, both listed in a manifest.
int cmd_spectrum(const std::string& checkpoint_path, const std::string& config_path,
                 const std::string& out_dir, std::optional<std::uint64_t> seed_override = {},
                 std::optional<double> tau_override = {});

// Interpolation curvature sweep over the given alphas (default Table-style
// grid 0, 0.2, ..., 1.0 when empty).
int cmd_sweep(const std::string& checkpoint_path, const std::string& config_path,
              const std::string& out_dir, std::vector<double> alphas = {},
              bool refit_grids = false);

// Baseline-vs-treatment comparison: both configs must share the model and the
// init/data seeds and may differ only in (sigma, alpha, reinit_interval).
// target_loss unset means "the baseline's final smoothed loss".
int cmd_compare(const std::string& config_baseline, const std::string& config_winq,
                const std::string& out_dir, std::optional<double> target_loss = {});

// Runs the full invariant suite, printing one PASS/FAIL line per invariant.
int cmd_verify();

// Helpers shared with tests.
void write_metrics_jsonl(const RunMetrics& metrics, const std::string& path);

}  // namespace winq
