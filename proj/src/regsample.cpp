#include "distill/regsample.hpp"

#include <cmath>
#include <cstdio>

#include "distill/errors.hpp"
#include "distill/softmax.hpp"

namespace distill {

double variance_grad_b(std::span<const double> student_logits,
                       std::span<const double> teacher_logits,
                       std::size_t label, Temperature tau) {
    if (student_logits.size() != teacher_logits.size())
        throw ShapeError("variance_grad_b: logit lengths differ");
    if (label >= student_logits.size())
        throw LabelError("variance_grad_b: label out of range");
    const std::vector<double> ps_tau = softmax_t(student_logits, tau.tau);
    const std::vector<double> pt_tau = softmax_t(teacher_logits, tau.tau);
    const std::vector<double> ps_1 = softmax_t(student_logits, 1.0);
    return tau.tau * (ps_tau[label] - pt_tau[label]) - (ps_1[label] - 1.0);
}

RsDecision classify(std::span<const double> student_logits,
                    std::span<const double> teacher_logits, std::size_t label,
                    Temperature tau) {
    if (label >= student_logits.size())
        throw LabelError("classify: label out of range");
    const std::vector<double> ps_1 = softmax_t(student_logits, 1.0);
    RsDecision d;
    d.grads.a = ps_1[label] - 1.0;
    d.grads.b = variance_grad_b(student_logits, teacher_logits, label, tau);
    d.grads.mag_a = std::abs(d.grads.a);
    d.grads.mag_b = std::abs(d.grads.b);
    d.is_regularization_sample = d.grads.mag_b > d.grads.mag_a;
    return d;
}

void TrainingPolicy::validate() const {
    if (!(p_rs >= 0.0) || !(p_rs <= 1.0))
        throw ArgumentError("policy p_rs must lie in [0, 1], got " +
                            std::to_string(p_rs));
    if (!(p_nrs >= 0.0) || !(p_nrs <= 1.0))
        throw ArgumentError("policy p_nrs must lie in [0, 1], got " +
                            std::to_string(p_nrs));
}

std::string TrainingPolicy::describe() const {
    char buf[64];
    std::snprintf(buf, sizeof buf, "p_rs=%g;p_nrs=%g;mask=%d", p_rs, p_nrs,
                  mask_label_logit ? 1 : 0);
    return buf;
}

int apply_policy(const TrainingPolicy& policy, bool is_regularization_sample,
                 SeededRng& rng) {
    policy.validate();
    const double p = is_regularization_sample ? policy.p_rs : policy.p_nrs;
    if (p == 1.0) return 1;
    if (p == 0.0) return 0;
    return rng.next_double() < p ? 1 : 0;
}

RsEpochCount count_epoch(const MlpModel& student, const MlpModel& teacher,
                         const LabeledDataset& ds, Temperature tau) {
    ds.validate();
    if (student.spec.output_dim() != ds.num_classes ||
        teacher.spec.output_dim() != ds.num_classes)
        throw ShapeError("count_epoch: model output width does not match "
                         "dataset classes");
    const Matrix zs = forward_logits(student, ds.features);
    const Matrix zt = forward_logits(teacher, ds.features);
    RsEpochCount out;
    out.dataset_size = ds.size();
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const RsDecision d =
            classify(zs.row(i), zt.row(i), ds.labels[i], tau);
        if (d.is_regularization_sample) ++out.count;
    }
    return out;
}

}  // namespace distill
