#pragma once

#include <span>
#include <vector>

namespace distill {

// Temperature-scaled softmax, softmax(z / tau), computed with
// max-subtraction so logits up to |700| do not overflow.
std::vector<double> softmax_t(std::span<const double> logits, double tau);

// log of softmax_t without forming intermediate exponentials of large
// magnitude; exp(log_softmax_t(z, tau)) == softmax_t(z, tau).
std::vector<double> log_softmax_t(std::span<const double> logits, double tau);

// In-place variants writing into a caller-provided buffer of equal length
// (hot path in the trainer; same arithmetic as the allocating versions).
void softmax_t_into(std::span<const double> logits, double tau,
                    std::span<double> out);
void log_softmax_t_into(std::span<const double> logits, double tau,
                        std::span<double> out);

}  // namespace distill
