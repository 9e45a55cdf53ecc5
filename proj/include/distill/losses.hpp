#pragma once

#include <span>
#include <string>
#include <vector>

namespace distill {

// Softmax temperature; must be positive.
struct Temperature {
    double tau;
    explicit Temperature(double t);
};

// Probability vector over K classes (entries >= 0, sum 1 within 1e-10).
struct SoftTarget {
    std::vector<double> probs;
    explicit SoftTarget(std::vector<double> p);
    std::size_t num_classes() const { return probs.size(); }
};

// Per-sample distillation weight w = 1 - exp(-L_ce^s / L_ce^t), in [0, 1).
struct WslWeight {
    double value;
    explicit WslWeight(double v);
};

enum class LossMode : std::uint8_t {
    ce = 0,
    kd = 1,
    masked_kd = 2,
    wsl = 3,
    sigmoid_wsl = 4,
};

const char* to_string(LossMode m);
LossMode loss_mode_from_string(const std::string& s);
bool needs_teacher(LossMode m);

// Scalar loss plus its gradient with respect to the student logits.
struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad;
};

// Floor on the teacher cross-entropy in the weight ratio; avoids the
// division singularity when the teacher is exactly right on a sample.
inline constexpr double kTeacherCeFloor = 1e-8;

// Cross-entropy against a one-hot label at tau = 1.
// grad = softmax(z) - onehot(label).
LossGrad ce_loss(std::span<const double> student_logits, std::size_t label);

// Cross-entropy against an arbitrary soft target (label smoothing path).
LossGrad ce_loss_soft(std::span<const double> student_logits,
                      const SoftTarget& target);

// Distillation loss in cross-entropy form:
//   loss = -tau^2 * sum_k p^t_k(tau) log p^s_k(tau)
//   grad = tau * (p^s(tau) - p^t(tau))
// The KL form differs only by the tau^2-scaled teacher entropy, which is
// constant in the student; kd_kl_value reports it for logging.
LossGrad kd_loss(std::span<const double> student_logits,
                 std::span<const double> teacher_logits, Temperature tau);
double kd_kl_value(std::span<const double> student_logits,
                   std::span<const double> teacher_logits, Temperature tau);

// kd_loss with the gradient component at the label logit forced to zero;
// transfers only the inter-class resemblance part of the signal.
LossGrad masked_kd(std::span<const double> student_logits,
                   std::span<const double> teacher_logits, std::size_t label,
                   Temperature tau);

// Loss-form variant dropping the k == label term from the sum. Not the
// same function as the gradient mask; kept behind its own entry point.
LossGrad masked_kd_loss_form(std::span<const double> student_logits,
                             std::span<const double> teacher_logits,
                             std::size_t label, Temperature tau);

// (1 - eps) * onehot + eps/K uniform.
SoftTarget smooth_labels(std::size_t label, double epsilon,
                         std::size_t num_classes);

// w = 1 - exp(-L_ce^s / L_ce^t), both cross-entropies taken at tau = 1
// from the given probability vectors; teacher CE floored at
// kTeacherCeFloor.
WslWeight wsl_weight(std::span<const double> student_probs_t1,
                     std::span<const double> teacher_probs_t1,
                     std::size_t label);

// Baseline weighting: 2 / (1 + exp(-L_s/L_t)) - 1.
double sigmoid_weight(std::span<const double> student_probs_t1,
                      std::span<const double> teacher_probs_t1,
                      std::size_t label);

// loss = w * L_kd with w from wsl_weight at tau = 1; w is a stop-gradient
// constant, so grad = w * (kd gradient).
LossGrad wsl_loss(std::span<const double> student_logits,
                  std::span<const double> teacher_logits, std::size_t label,
                  Temperature tau);

// L_total = L_ce + alpha * L_wsl.
double total_loss(double ce, double wsl, double alpha);

// Per-sample scalars plus the logit gradient for the selected mode.
// kd_multiplier in {0, 1} carries a training-policy decision; the CE term
// is always kept. alpha scales the weighted modes, kd_coeff the plain KD
// family. mask_label_logit swaps kd gradients for their masked form.
struct LossBundle {
    double ce = 0.0;
    double kd = 0.0;
    double weight = 1.0;  // wsl/sigmoid weight, 1 for unweighted modes
    double wsl = 0.0;     // weight * kd
    double total = 0.0;
    std::vector<double> grad;
};

LossBundle loss_bundle(LossMode mode, std::span<const double> student_logits,
                       std::span<const double> teacher_logits,
                       std::size_t label, Temperature tau, double alpha,
                       double kd_coeff = 1.0, double kd_multiplier = 1.0,
                       bool mask_label_logit = false,
                       double label_smoothing = 0.0);

}  // namespace distill
