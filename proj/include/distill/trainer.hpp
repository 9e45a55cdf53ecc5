#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "distill/dataset.hpp"
#include "distill/losses.hpp"
#include "distill/mlp.hpp"
#include "distill/regsample.hpp"

namespace distill {

// Mini-batch SGD configuration. Defaults mirror the standard small-scale
// recipe: 100 epochs, batch 64, lr 0.05 decayed x0.1 at epochs 60 and 80,
// momentum 0.9.
struct TrainConfig {
    LossMode mode = LossMode::ce;
    double tau = 4.0;
    double alpha = 2.25;    // weight on the wsl/sigmoid term
    double kd_coeff = 1.0;  // weight on the plain kd / masked-kd term
    TrainingPolicy policy = TrainingPolicy::standard();
    std::size_t epochs = 100;
    std::size_t batch_size = 64;
    double learning_rate = 0.05;
    double momentum = 0.9;
    std::vector<std::size_t> lr_decay_epochs = {60, 80};
    double lr_decay_factor = 0.1;
    std::uint64_t seed = 1;
    double label_smoothing = 0.0;  // applied to the CE term (teacher runs)

    // Hidden layer sizes; input/output dims come from the dataset.
    std::vector<std::size_t> hidden = {32};
    Activation activation = Activation::relu;
    InitRule init = InitRule::he;

    // Temperature for regularization-sample counting; 0 means "use tau".
    double rs_count_tau = 0.0;
    // Count by a frozen end-of-epoch sweep instead of online during the
    // batch pass.
    bool rs_frozen_sweep = false;

    void validate() const;
};

struct EpochRow {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    std::size_t rs_count = 0;
};

struct TrainReport {
    std::vector<EpochRow> epochs;
    double final_test_accuracy = 0.0;
    std::size_t dataset_size = 0;
    TrainConfig config;
};

struct FitResult {
    MlpModel model;
    TrainReport report;
};

// Velocity-carrying momentum step: v = mu * v - lr * g; theta += v.
struct Velocity {
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;

    static Velocity zeros_like(const MlpModel& model);
};

void sgd_step(MlpModel& model, const Gradients& grads, double lr,
              double momentum, Velocity& velocity);

// Trains a student (or a teacher, with mode = ce). Distillation modes
// require a teacher whose parameters are never touched; its logits on the
// training set are computed once up front since the teacher is fixed.
// Deterministic given config.seed: init, batch order and policy draws all
// come from per-role streams of that seed.
FitResult fit(const TrainConfig& config, const LabeledDataset& train,
              const LabeledDataset& test,
              const MlpModel* teacher = nullptr);

double evaluate_accuracy(const MlpModel& model, const LabeledDataset& ds);

// One row per epoch: epoch,train_loss,train_acc,test_acc,rs_count.
void write_report_csv(const TrainReport& report, std::ostream& os);

// Regularization-sample trajectory in the fixed export schema:
// epoch,rs_count,dataset_size,tau,policy.
void write_rs_trajectory_csv(const TrainReport& report, std::ostream& os);

// Summary (final accuracy, config echo including every loss coefficient).
std::string report_summary_json(const TrainReport& report);

}  // namespace distill
