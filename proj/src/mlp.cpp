#include "distill/mlp.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "distill/errors.hpp"
#include "distill/kernels.hpp"
#include "distill/rng.hpp"

namespace distill {

const char* to_string(Activation a) {
    return a == Activation::relu ? "relu" : "tanh";
}

const char* to_string(InitRule r) {
    return r == InitRule::he ? "he" : "xavier";
}

Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    throw ArgumentError("unknown activation '" + s +
                        "' (expected 'relu' or 'tanh')");
}

InitRule init_rule_from_string(const std::string& s) {
    if (s == "he") return InitRule::he;
    if (s == "xavier") return InitRule::xavier;
    throw ArgumentError("unknown init rule '" + s +
                        "' (expected 'he' or 'xavier')");
}

void MlpSpec::validate() const {
    if (layer_sizes.size() < 2)
        throw ArgumentError("MLP needs at least input and output layers");
    for (std::size_t s : layer_sizes)
        if (s == 0) throw ArgumentError("MLP layer sizes must be >= 1");
    if (layer_sizes.back() < 2)
        throw ArgumentError("MLP output layer needs at least 2 classes");
}

std::size_t MlpModel::num_params() const {
    std::size_t n = 0;
    for (const Matrix& w : weights) n += w.size();
    for (const auto& b : biases) n += b.size();
    return n;
}

bool MlpModel::all_finite() const {
    for (const Matrix& w : weights)
        if (!w.all_finite()) return false;
    for (const auto& b : biases)
        for (double v : b)
            if (!std::isfinite(v)) return false;
    return true;
}

MlpModel init(const MlpSpec& spec) {
    spec.validate();
    MlpModel m;
    m.spec = spec;
    // One stream per layer so adding a layer does not reshuffle the draws
    // of the layers before it.
    for (std::size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l) {
        const std::size_t fan_in = spec.layer_sizes[l];
        const std::size_t fan_out = spec.layer_sizes[l + 1];
        const double var = spec.init == InitRule::he
                               ? 2.0 / double(fan_in)
                               : 2.0 / double(fan_in + fan_out);
        const double sd = std::sqrt(var);
        SeededRng rng(spec.seed, mix_stream(spec.seed, 0x10 + l));
        Matrix w(fan_in, fan_out);
        for (std::size_t r = 0; r < fan_in; ++r)
            for (std::size_t c = 0; c < fan_out; ++c) w(r, c) = rng.normal(0.0, sd);
        m.weights.push_back(std::move(w));
        m.biases.emplace_back(fan_out, 0.0);
    }
    return m;
}

namespace {

void check_batch(const MlpModel& model, const Matrix& batch) {
    if (batch.rows() == 0) throw ShapeError("forward: empty batch");
    if (batch.cols() != model.spec.input_dim())
        throw ShapeError("forward: batch has " + std::to_string(batch.cols()) +
                         " features, model expects " +
                         std::to_string(model.spec.input_dim()));
}

void add_bias_rows(Matrix& m, const std::vector<double>& bias) {
    for (std::size_t r = 0; r < m.rows(); ++r)
        kernels::table().axpy(1.0, bias.data(), m.row(r).data(), bias.size());
}

void apply_activation(const Matrix& pre, Matrix& out, Activation act) {
    if (act == Activation::relu) {
        kernels::table().relu(pre.data(), out.data(), pre.size());
    } else {
        const double* x = pre.data();
        double* y = out.data();
        for (std::size_t i = 0; i < pre.size(); ++i) y[i] = std::tanh(x[i]);
    }
}

// upstream * d(activation)/d(pre), elementwise into out.
void activation_grad(const Matrix& pre, const Matrix& upstream, Matrix& out,
                     Activation act) {
    if (act == Activation::relu) {
        kernels::table().relu_grad(pre.data(), upstream.data(), out.data(),
                                   pre.size());
    } else {
        const double* p = pre.data();
        const double* u = upstream.data();
        double* o = out.data();
        for (std::size_t i = 0; i < pre.size(); ++i) {
            const double t = std::tanh(p[i]);
            o[i] = u[i] * (1.0 - t * t);
        }
    }
}

}  // namespace

std::pair<Matrix, ForwardTrace> forward(const MlpModel& model,
                                        const Matrix& batch) {
    check_batch(model, batch);
    ForwardTrace trace;
    trace.input = batch;
    const Matrix* cur = &trace.input;
    const std::size_t L = model.spec.num_layers();
    for (std::size_t l = 0; l < L; ++l) {
        Matrix pre = matmul(*cur, model.weights[l]);
        add_bias_rows(pre, model.biases[l]);
        trace.pre_acts.push_back(std::move(pre));
        if (l + 1 < L) {
            Matrix act(trace.pre_acts[l].rows(), trace.pre_acts[l].cols());
            apply_activation(trace.pre_acts[l], act, model.spec.activation);
            trace.activations.push_back(std::move(act));
            cur = &trace.activations.back();
        }
    }
    Matrix logits = trace.pre_acts.back();
    return {std::move(logits), std::move(trace)};
}

Matrix forward_logits(const MlpModel& model, const Matrix& batch) {
    check_batch(model, batch);
    Matrix cur = batch;
    const std::size_t L = model.spec.num_layers();
    for (std::size_t l = 0; l < L; ++l) {
        Matrix pre = matmul(cur, model.weights[l]);
        add_bias_rows(pre, model.biases[l]);
        if (l + 1 < L) {
            Matrix act(pre.rows(), pre.cols());
            apply_activation(pre, act, model.spec.activation);
            cur = std::move(act);
        } else {
            cur = std::move(pre);
        }
    }
    return cur;
}

Gradients backward(const MlpModel& model, const ForwardTrace& trace,
                   const Matrix& grad_logits) {
    const std::size_t L = model.spec.num_layers();
    if (trace.pre_acts.size() != L)
        throw ShapeError("backward: trace does not match model depth");
    if (!grad_logits.same_shape(trace.pre_acts.back()))
        throw ShapeError("backward: grad_logits shape mismatch");

    Gradients g;
    g.weights.resize(L);
    g.biases.resize(L);

    Matrix delta = grad_logits;  // gradient wrt pre-activation of layer l
    for (std::size_t l = L; l-- > 0;) {
        const Matrix& below =
            l == 0 ? trace.input : trace.activations[l - 1];
        g.weights[l] = matmul_transpose_a(below, delta);
        auto& gb = g.biases[l];
        gb.assign(delta.cols(), 0.0);
        for (std::size_t r = 0; r < delta.rows(); ++r)
            kernels::table().axpy(1.0, delta.row(r).data(), gb.data(),
                                  delta.cols());
        if (l > 0) {
            Matrix upstream = matmul_transpose_b(delta, model.weights[l]);
            Matrix next(upstream.rows(), upstream.cols());
            activation_grad(trace.pre_acts[l - 1], upstream, next,
                            model.spec.activation);
            delta = std::move(next);
        }
    }
    return g;
}

namespace {

constexpr char kMagic[4] = {'D', 'M', 'L', 'P'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw FormatError("checkpoint " + path + " is truncated");
    return v;
}

}  // namespace

void save_model(const MlpModel& model, const std::string& path) {
    model.spec.validate();
    if (model.weights.size() != model.spec.num_layers() ||
        model.biases.size() != model.spec.num_layers())
        throw ConsistencyError("model parameter count does not match spec");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out.write(kMagic, 4);
    write_pod(out, kVersion);
    write_pod(out, static_cast<std::uint8_t>(model.spec.activation));
    write_pod(out, static_cast<std::uint8_t>(model.spec.init));
    write_pod(out, model.spec.seed);
    write_pod(out, static_cast<std::uint64_t>(model.spec.layer_sizes.size()));
    for (std::size_t s : model.spec.layer_sizes)
        write_pod(out, static_cast<std::uint64_t>(s));
    for (std::size_t l = 0; l < model.spec.num_layers(); ++l) {
        const Matrix& w = model.weights[l];
        out.write(reinterpret_cast<const char*>(w.data()),
                  static_cast<std::streamsize>(w.size() * sizeof(double)));
        const auto& b = model.biases[l];
        out.write(reinterpret_cast<const char*>(b.data()),
                  static_cast<std::streamsize>(b.size() * sizeof(double)));
    }
    if (!out) throw IoError("failed writing checkpoint " + path);
}

MlpModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("file " + path + " is not a model checkpoint");
    const auto version = read_pod<std::uint32_t>(in, path);
    if (version != kVersion)
        throw FormatError("checkpoint " + path + " has version " +
                          std::to_string(version) + ", expected " +
                          std::to_string(kVersion));
    MlpSpec spec;
    const auto act = read_pod<std::uint8_t>(in, path);
    if (act > 1) throw FormatError("checkpoint " + path + ": bad activation tag");
    spec.activation = static_cast<Activation>(act);
    const auto init_tag = read_pod<std::uint8_t>(in, path);
    if (init_tag > 1) throw FormatError("checkpoint " + path + ": bad init tag");
    spec.init = static_cast<InitRule>(init_tag);
    spec.seed = read_pod<std::uint64_t>(in, path);
    const auto n_layers = read_pod<std::uint64_t>(in, path);
    if (n_layers < 2 || n_layers > 64)
        throw FormatError("checkpoint " + path + ": implausible layer count " +
                          std::to_string(n_layers));
    spec.layer_sizes.resize(n_layers);
    for (auto& s : spec.layer_sizes) {
        s = read_pod<std::uint64_t>(in, path);
        if (s == 0 || s > (1u << 24))
            throw FormatError("checkpoint " + path + ": implausible layer size");
    }
    spec.validate();

    MlpModel m;
    m.spec = spec;
    for (std::size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l) {
        const std::size_t fan_in = spec.layer_sizes[l];
        const std::size_t fan_out = spec.layer_sizes[l + 1];
        Matrix w(fan_in, fan_out);
        in.read(reinterpret_cast<char*>(w.data()),
                static_cast<std::streamsize>(w.size() * sizeof(double)));
        std::vector<double> b(fan_out);
        in.read(reinterpret_cast<char*>(b.data()),
                static_cast<std::streamsize>(b.size() * sizeof(double)));
        if (!in) throw FormatError("checkpoint " + path + " is truncated");
        m.weights.push_back(std::move(w));
        m.biases.push_back(std::move(b));
    }
    char extra;
    if (in.read(&extra, 1))
        throw FormatError("checkpoint " + path + " has trailing bytes");
    return m;
}

}  // namespace distill
