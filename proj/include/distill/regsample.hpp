#pragma once

#include <span>
#include <string>

#include "distill/dataset.hpp"
#include "distill/losses.hpp"
#include "distill/mlp.hpp"
#include "distill/rng.hpp"

namespace distill {

// The two competing gradients on the ground-truth logit:
//   a = dL_ce/dz_i          (bias reduction; always in (-1, 0])
//   b = d(L_kd - L_ce)/dz_i (variance reduction)
struct GradPair {
    double a = 0.0;
    double b = 0.0;
    double mag_a = 0.0;
    double mag_b = 0.0;
};

struct RsDecision {
    GradPair grads;
    // |b| > |a|: the variance term dominates the sample's optimization
    // direction. Ties are not regularization samples.
    bool is_regularization_sample = false;
};

// b = tau * (p^s_i(tau) - p^t_i(tau)) - (p^s_i(1) - y_i) at the label
// logit. At tau = 1 the student terms cancel and b = y_i - p^t_i(1).
double variance_grad_b(std::span<const double> student_logits,
                       std::span<const double> teacher_logits,
                       std::size_t label, Temperature tau);

RsDecision classify(std::span<const double> student_logits,
                    std::span<const double> teacher_logits, std::size_t label,
                    Temperature tau);

// Per-sample keep probabilities for the KD term. (1, 1) is standard
// distillation; (0, 1) excludes regularization samples; (1, 0) trains the
// KD term only on them. The CE term is always kept.
struct TrainingPolicy {
    double p_rs = 1.0;
    double p_nrs = 1.0;
    bool mask_label_logit = false;

    void validate() const;
    std::string describe() const;  // "p_rs=..;p_nrs=..;mask=0|1"

    static TrainingPolicy standard() { return {1.0, 1.0, false}; }
    static TrainingPolicy exclude_rs() { return {0.0, 1.0, false}; }
    static TrainingPolicy only_rs() { return {1.0, 0.0, false}; }
};

// Bernoulli keep/drop for the KD term. Probabilities 0 and 1 short-circuit
// without consuming a draw, so policy (1, 1) is bit-identical to standard
// KD including the RNG stream position.
int apply_policy(const TrainingPolicy& policy, bool is_regularization_sample,
                 SeededRng& rng);

struct RsEpochCount {
    std::size_t epoch = 0;
    std::size_t count = 0;
    std::size_t dataset_size = 0;
};

// One frozen sweep over the dataset at current parameters; each sample
// contributes 0 or 1. Order-independent.
RsEpochCount count_epoch(const MlpModel& student, const MlpModel& teacher,
                         const LabeledDataset& ds, Temperature tau);

}  // namespace distill
