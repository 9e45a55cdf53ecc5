#include "distill/softmax.hpp"

#include <algorithm>
#include <cmath>

#include "distill/errors.hpp"

namespace distill {

namespace {

void check_args(std::span<const double> logits, double tau) {
    if (logits.empty()) throw ArgumentError("softmax: empty logit vector");
    if (!(tau > 0.0))
        throw ArgumentError("softmax: temperature must be positive, got " +
                            std::to_string(tau));
    for (double z : logits)
        if (!std::isfinite(z))
            throw ArgumentError("softmax: non-finite logit");
}

}  // namespace

void softmax_t_into(std::span<const double> logits, double tau,
                    std::span<double> out) {
    check_args(logits, tau);
    if (out.size() != logits.size())
        throw ShapeError("softmax: output buffer size mismatch");
    const double zmax = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp((logits[i] - zmax) / tau);
        sum += out[i];
    }
    for (double& p : out) p /= sum;
}

void log_softmax_t_into(std::span<const double> logits, double tau,
                        std::span<double> out) {
    check_args(logits, tau);
    if (out.size() != logits.size())
        throw ShapeError("softmax: output buffer size mismatch");
    const double zmax = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = (logits[i] - zmax) / tau;
        sum += std::exp(out[i]);
    }
    const double log_sum = std::log(sum);
    for (double& v : out) v -= log_sum;
}

std::vector<double> softmax_t(std::span<const double> logits, double tau) {
    std::vector<double> out(logits.size());
    softmax_t_into(logits, tau, out);
    return out;
}

std::vector<double> log_softmax_t(std::span<const double> logits, double tau) {
    std::vector<double> out(logits.size());
    log_softmax_t_into(logits, tau, out);
    return out;
}

}  // namespace distill
