#include "distill/losses.hpp"

#include <cmath>
#include <limits>

#include "distill/errors.hpp"
#include "distill/softmax.hpp"

namespace distill {

Temperature::Temperature(double t) : tau(t) {
    if (!(t > 0.0) || !std::isfinite(t))
        throw ArgumentError("temperature must be finite and positive, got " +
                            std::to_string(t));
}

SoftTarget::SoftTarget(std::vector<double> p) : probs(std::move(p)) {
    if (probs.size() < 2)
        throw ArgumentError("soft target needs at least 2 classes");
    double sum = 0.0;
    for (double v : probs) {
        if (!(v >= 0.0) || !std::isfinite(v))
            throw ArgumentError("soft target entries must be finite and >= 0");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-10)
        throw ArgumentError("soft target sums to " + std::to_string(sum) +
                            ", expected 1");
}

WslWeight::WslWeight(double v) : value(v) {
    if (!(v >= 0.0) || !(v < 1.0))
        throw ArgumentError("distillation weight must lie in [0, 1), got " +
                            std::to_string(v));
}

const char* to_string(LossMode m) {
    switch (m) {
        case LossMode::ce: return "ce";
        case LossMode::kd: return "kd";
        case LossMode::masked_kd: return "masked_kd";
        case LossMode::wsl: return "wsl";
        case LossMode::sigmoid_wsl: return "sigmoid_wsl";
    }
    throw ArgumentError("invalid loss mode tag");
}

LossMode loss_mode_from_string(const std::string& s) {
    if (s == "ce") return LossMode::ce;
    if (s == "kd") return LossMode::kd;
    if (s == "masked_kd") return LossMode::masked_kd;
    if (s == "wsl") return LossMode::wsl;
    if (s == "sigmoid_wsl") return LossMode::sigmoid_wsl;
    throw ArgumentError("unknown loss mode '" + s +
                        "' (expected ce|kd|masked_kd|wsl|sigmoid_wsl)");
}

bool needs_teacher(LossMode m) { return m != LossMode::ce; }

namespace {

void check_label(std::span<const double> logits, std::size_t label) {
    if (label >= logits.size())
        throw LabelError("label " + std::to_string(label) +
                         " out of range for " + std::to_string(logits.size()) +
                         " classes");
}

void check_pair(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw ShapeError("student and teacher vectors have different lengths (" +
                         std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
}

}  // namespace

LossGrad ce_loss(std::span<const double> student_logits, std::size_t label) {
    check_label(student_logits, label);
    const std::vector<double> logp = log_softmax_t(student_logits, 1.0);
    LossGrad out;
    out.loss = -logp[label];
    out.grad.resize(logp.size());
    for (std::size_t k = 0; k < logp.size(); ++k) out.grad[k] = std::exp(logp[k]);
    out.grad[label] -= 1.0;
    return out;
}

LossGrad ce_loss_soft(std::span<const double> student_logits,
                      const SoftTarget& target) {
    if (student_logits.size() != target.num_classes())
        throw ShapeError("soft target has " +
                         std::to_string(target.num_classes()) +
                         " classes, logits have " +
                         std::to_string(student_logits.size()));
    const std::vector<double> logp = log_softmax_t(student_logits, 1.0);
    LossGrad out;
    out.grad.resize(logp.size());
    for (std::size_t k = 0; k < logp.size(); ++k) {
        out.loss -= target.probs[k] * logp[k];
        out.grad[k] = std::exp(logp[k]) - target.probs[k];
    }
    return out;
}

LossGrad kd_loss(std::span<const double> student_logits,
                 std::span<const double> teacher_logits, Temperature tau) {
    check_pair(student_logits, teacher_logits);
    const std::vector<double> logps = log_softmax_t(student_logits, tau.tau);
    const std::vector<double> pt = softmax_t(teacher_logits, tau.tau);
    const double tau2 = tau.tau * tau.tau;
    LossGrad out;
    out.grad.resize(pt.size());
    for (std::size_t k = 0; k < pt.size(); ++k) {
        out.loss -= tau2 * pt[k] * logps[k];
        out.grad[k] = tau.tau * (std::exp(logps[k]) - pt[k]);
    }
    return out;
}

double kd_kl_value(std::span<const double> student_logits,
                   std::span<const double> teacher_logits, Temperature tau) {
    check_pair(student_logits, teacher_logits);
    const std::vector<double> logps = log_softmax_t(student_logits, tau.tau);
    const std::vector<double> logpt = log_softmax_t(teacher_logits, tau.tau);
    const double tau2 = tau.tau * tau.tau;
    double kl = 0.0;
    for (std::size_t k = 0; k < logps.size(); ++k) {
        const double pt = std::exp(logpt[k]);
        if (pt > 0.0) kl += tau2 * pt * (logpt[k] - logps[k]);
    }
    return kl;
}

LossGrad masked_kd(std::span<const double> student_logits,
                   std::span<const double> teacher_logits, std::size_t label,
                   Temperature tau) {
    check_label(student_logits, label);
    LossGrad out = kd_loss(student_logits, teacher_logits, tau);
    out.grad[label] = 0.0;
    return out;
}

LossGrad masked_kd_loss_form(std::span<const double> student_logits,
                             std::span<const double> teacher_logits,
                             std::size_t label, Temperature tau) {
    check_label(student_logits, label);
    check_pair(student_logits, teacher_logits);
    const std::vector<double> logps = log_softmax_t(student_logits, tau.tau);
    const std::vector<double> ps = softmax_t(student_logits, tau.tau);
    const std::vector<double> pt = softmax_t(teacher_logits, tau.tau);
    const double tau2 = tau.tau * tau.tau;
    LossGrad out;
    out.grad.resize(pt.size());
    // loss = -tau^2 * sum_{k != label} p^t_k log p^s_k. Differentiating
    // through the student softmax couples every logit, so the label entry
    // of this gradient is generally nonzero — that is what separates the
    // loss-form variant from the gradient mask.
    double pt_off = 0.0;  // teacher mass off the label
    for (std::size_t k = 0; k < pt.size(); ++k) {
        if (k == label) continue;
        out.loss -= tau2 * pt[k] * logps[k];
        pt_off += pt[k];
    }
    for (std::size_t k = 0; k < pt.size(); ++k) {
        const double direct = k == label ? 0.0 : pt[k];
        out.grad[k] = tau.tau * (pt_off * ps[k] - direct);
    }
    return out;
}

SoftTarget smooth_labels(std::size_t label, double epsilon,
                         std::size_t num_classes) {
    if (num_classes < 2)
        throw ArgumentError("label smoothing needs at least 2 classes");
    if (label >= num_classes)
        throw LabelError("label " + std::to_string(label) +
                         " out of range for " + std::to_string(num_classes) +
                         " classes");
    if (!(epsilon >= 0.0) || !(epsilon < 1.0))
        throw ArgumentError("smoothing epsilon must lie in [0, 1), got " +
                            std::to_string(epsilon));
    std::vector<double> p(num_classes, epsilon / double(num_classes));
    p[label] += 1.0 - epsilon;
    return SoftTarget(std::move(p));
}

namespace {

// -log p[label] with basic hygiene on the probability vector.
double ce_from_probs(std::span<const double> probs, std::size_t label,
                     const char* who) {
    if (label >= probs.size())
        throw LabelError(std::string(who) + ": label out of range");
    const double p = probs[label];
    if (!(p >= 0.0) || !(p <= 1.0) || !std::isfinite(p))
        throw ArgumentError(std::string(who) +
                            ": probability outside [0, 1]");
    if (p == 0.0) return std::numeric_limits<double>::infinity();
    return -std::log(p);
}

}  // namespace

WslWeight wsl_weight(std::span<const double> student_probs_t1,
                     std::span<const double> teacher_probs_t1,
                     std::size_t label) {
    check_pair(student_probs_t1, teacher_probs_t1);
    const double ls = ce_from_probs(student_probs_t1, label, "wsl_weight");
    double lt = ce_from_probs(teacher_probs_t1, label, "wsl_weight");
    if (lt < kTeacherCeFloor) lt = kTeacherCeFloor;
    // exp underflows to 0 once ls/lt exceeds ~745, which would yield w = 1
    // exactly; the contract is the half-open interval [0, 1).
    const double w = 1.0 - std::exp(-ls / lt);
    return WslWeight(w < 1.0 ? w : std::nextafter(1.0, 0.0));
}

double sigmoid_weight(std::span<const double> student_probs_t1,
                      std::span<const double> teacher_probs_t1,
                      std::size_t label) {
    check_pair(student_probs_t1, teacher_probs_t1);
    const double ls = ce_from_probs(student_probs_t1, label, "sigmoid_weight");
    double lt = ce_from_probs(teacher_probs_t1, label, "sigmoid_weight");
    if (lt < kTeacherCeFloor) lt = kTeacherCeFloor;
    const double w = 2.0 / (1.0 + std::exp(-ls / lt)) - 1.0;
    return w < 1.0 ? w : std::nextafter(1.0, 0.0);
}

LossGrad wsl_loss(std::span<const double> student_logits,
                  std::span<const double> teacher_logits, std::size_t label,
                  Temperature tau) {
    check_label(student_logits, label);
    const std::vector<double> ps1 = softmax_t(student_logits, 1.0);
    const std::vector<double> pt1 = softmax_t(teacher_logits, 1.0);
    const WslWeight w = wsl_weight(ps1, pt1, label);
    LossGrad out = kd_loss(student_logits, teacher_logits, tau);
    out.loss *= w.value;
    for (double& g : out.grad) g *= w.value;
    return out;
}

double total_loss(double ce, double wsl, double alpha) {
    if (!(alpha >= 0.0) || !std::isfinite(alpha))
        throw ArgumentError("alpha must be finite and >= 0, got " +
                            std::to_string(alpha));
    return ce + alpha * wsl;
}

LossBundle loss_bundle(LossMode mode, std::span<const double> student_logits,
                       std::span<const double> teacher_logits,
                       std::size_t label, Temperature tau, double alpha,
                       double kd_coeff, double kd_multiplier,
                       bool mask_label_logit, double label_smoothing) {
    check_label(student_logits, label);
    if (kd_multiplier != 0.0 && kd_multiplier != 1.0)
        throw ArgumentError("kd_multiplier must be 0 or 1, got " +
                            std::to_string(kd_multiplier));
    if (!(kd_coeff >= 0.0) || !std::isfinite(kd_coeff))
        throw ArgumentError("kd_coeff must be finite and >= 0");
    if (needs_teacher(mode)) check_pair(student_logits, teacher_logits);

    LossBundle out;
    LossGrad ce;
    if (label_smoothing > 0.0) {
        ce = ce_loss_soft(student_logits,
                          smooth_labels(label, label_smoothing,
                                        student_logits.size()));
    } else {
        ce = ce_loss(student_logits, label);
    }
    out.ce = ce.loss;
    out.grad = ce.grad;

    if (mode == LossMode::ce) {
        out.total = out.ce;
        return out;
    }

    LossGrad kd = mask_label_logit
                      ? masked_kd(student_logits, teacher_logits, label, tau)
                      : kd_loss(student_logits, teacher_logits, tau);
    out.kd = kd.loss;

    double scale;  // factor the kd gradient enters the total with
    switch (mode) {
        case LossMode::kd:
        case LossMode::masked_kd: {
            if (mode == LossMode::masked_kd && !mask_label_logit) {
                kd = masked_kd(student_logits, teacher_logits, label, tau);
                out.kd = kd.loss;
            }
            scale = kd_coeff * kd_multiplier;
            out.total = out.ce + scale * out.kd;
            break;
        }
        case LossMode::wsl:
        case LossMode::sigmoid_wsl: {
            const std::vector<double> ps1 = softmax_t(student_logits, 1.0);
            const std::vector<double> pt1 = softmax_t(teacher_logits, 1.0);
            out.weight = mode == LossMode::wsl
                             ? wsl_weight(ps1, pt1, label).value
                             : sigmoid_weight(ps1, pt1, label);
            out.wsl = out.weight * out.kd;
            scale = alpha * out.weight * kd_multiplier;
            out.total = total_loss(out.ce, out.wsl * kd_multiplier, alpha);
            break;
        }
        default:
            throw ArgumentError("invalid loss mode tag");
    }
    for (std::size_t k = 0; k < out.grad.size(); ++k)
        out.grad[k] += scale * kd.grad[k];
    return out;
}

}  // namespace distill
