#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "distill/matrix.hpp"

namespace distill {

enum class Activation : std::uint8_t { relu = 0, tanh = 1 };
enum class InitRule : std::uint8_t { he = 0, xavier = 1 };

const char* to_string(Activation a);
const char* to_string(InitRule r);
Activation activation_from_string(const std::string& s);
InitRule init_rule_from_string(const std::string& s);

// Layer sizes run [D, h1, ..., K]; the last layer is linear (logits).
struct MlpSpec {
    std::vector<std::size_t> layer_sizes;
    Activation activation = Activation::relu;
    InitRule init = InitRule::he;
    std::uint64_t seed = 1;

    void validate() const;
    std::size_t input_dim() const { return layer_sizes.front(); }
    std::size_t output_dim() const { return layer_sizes.back(); }
    std::size_t num_layers() const { return layer_sizes.size() - 1; }
};

// Weights are stored (fan_in x fan_out) so the forward pass is plain
// row-major matmul; biases are dense vectors.
struct MlpModel {
    MlpSpec spec;
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;

    std::size_t num_params() const;
    bool all_finite() const;
};

// Cached pre-activations and activations for one mini-batch; consumed by
// backward() for exact gradients.
struct ForwardTrace {
    Matrix input;                     // batch x D
    std::vector<Matrix> pre_acts;     // per layer, batch x fan_out
    std::vector<Matrix> activations;  // per hidden layer, batch x fan_out
};

struct Gradients {
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
};

// Weights drawn per init rule (He: N(0, 2/fan_in); Xavier:
// N(0, 2/(fan_in+fan_out))), biases zero. Deterministic given spec.seed.
MlpModel init(const MlpSpec& spec);

// Returns (logits, trace); logits is batch x K.
std::pair<Matrix, ForwardTrace> forward(const MlpModel& model,
                                        const Matrix& batch);

// Logits only; no trace is built (evaluation path).
Matrix forward_logits(const MlpModel& model, const Matrix& batch);

// Exact gradients of sum_{s,k} grad_logits(s,k) * logits(s,k) with
// respect to every parameter, with grad_logits treated as a constant.
Gradients backward(const MlpModel& model, const ForwardTrace& trace,
                   const Matrix& grad_logits);

// Versioned little-endian binary checkpoint; round-trips bit-exactly.
void save_model(const MlpModel& model, const std::string& path);
MlpModel load_model(const std::string& path);

}  // namespace distill
