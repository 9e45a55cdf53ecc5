#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "distill/dataset.hpp"
#include "distill/matrix.hpp"
#include "distill/trainer.hpp"

namespace distill {

// Probability floor applied before any logarithm in this module; finite
// ensembles produce near-zero probabilities and the decomposition needs
// finite logs.
inline constexpr double kProbFloor = 1e-12;

// Per-run evaluation outputs: log-probabilities on the eval set.
struct RunOutputs {
    Matrix log_probs;  // N_eval x K
    LossMode mode = LossMode::ce;
    std::uint64_t seed = 0;
    std::size_t teacher_id = 0;
};

// Normalized geometric mean across runs for one sample:
// exp(mean of log-probs), renormalized. Throws DegenerateOutputError on
// non-finite log-probabilities.
std::vector<double> geo_mean_log(const Matrix& run_log_probs);

// Convenience wrapper over probability vectors; entries are floored at
// p_min before the logarithm. p_min = 0 disables flooring, in which case
// a zero probability raises DegenerateOutputError.
std::vector<double> geo_mean(const std::vector<std::vector<double>>& runs,
                             double p_min = kProbFloor);

// Additive split of the expected log-loss on one sample:
//   noise    = -sum_k y_k log y_k        (0 for one-hot truth)
//   bias     = KL(y, ybar)
//   variance = mean over runs of KL(ybar, yhat)
// noise + bias + variance = mean over runs of -sum_k y_k log yhat_k
// exactly when ybar is the normalized geometric mean of the runs.
struct SampleDecomposition {
    double intrinsic_noise = 0.0;
    double bias = 0.0;
    double variance = 0.0;
    double mean_error = 0.0;
};

SampleDecomposition decompose(std::span<const double> truth,
                              std::span<const double> ybar,
                              const std::vector<std::vector<double>>& runs,
                              double p_min = kProbFloor);

struct Decomposition {
    std::vector<SampleDecomposition> per_sample;
    SampleDecomposition aggregate;  // mean over samples
};

// Monte-Carlo estimator settings: T teachers trained on bootstrap
// resamples, M students per mode (run m trains on resample D_m; the
// distillation modes pair it with teacher m mod T). The eval expectation
// is the empirical mean over a fixed held-out set shared by all modes.
struct EnsembleConfig {
    std::vector<LossMode> modes = {LossMode::ce, LossMode::kd};
    std::size_t num_runs = 8;      // M
    std::size_t num_teachers = 4;  // T
    TrainConfig student;           // mode field overridden per mode
    TrainConfig teacher;
    std::uint64_t meta_seed = 1;
    std::size_t workers = 1;

    void validate() const;
};

struct ModeReport {
    LossMode mode = LossMode::ce;
    Decomposition decomposition;
    std::size_t successful_runs = 0;
    std::size_t failed_runs = 0;
    std::vector<RunOutputs> runs;
};

struct EnsembleReport {
    std::vector<ModeReport> modes;
    // E_x[y log(ybar_ce / ybar_kd)]: how much farther the KD ensemble
    // center sits from the one-hot truth than the CE center.
    std::optional<double> bias_gap_ce_vs_kd;

    const ModeReport* find(LossMode mode) const;
};

EnsembleReport estimate(const EnsembleConfig& config,
                        const LabeledDataset& train,
                        const LabeledDataset& eval_set);

// Decomposition of already-collected run outputs against one-hot labels.
Decomposition decompose_runs(const std::vector<RunOutputs>& runs,
                             const LabeledDataset& eval_set);

// Versioned binary dump of per-run log-probabilities so decompositions
// can be recomputed without retraining.
void write_run_dump(const std::string& path,
                    const std::vector<RunOutputs>& runs);
std::vector<RunOutputs> read_run_dump(const std::string& path);

}  // namespace distill
