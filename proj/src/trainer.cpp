#include "distill/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <ostream>

#include "json.hpp"

#include "distill/errors.hpp"
#include "distill/kernels.hpp"
#include "distill/rng.hpp"
#include "distill/softmax.hpp"

namespace distill {

namespace {

// Stream tags for the per-role generators hanging off config.seed.
constexpr std::uint64_t kStreamInit = 0x01;
constexpr std::uint64_t kStreamShuffle = 0x02;
constexpr std::uint64_t kStreamPolicy = 0x03;

}  // namespace

void TrainConfig::validate() const {
    if (epochs == 0) throw ArgumentError("epochs must be >= 1");
    if (batch_size == 0) throw ArgumentError("batch_size must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw ArgumentError("learning_rate must be finite and positive");
    if (!(momentum >= 0.0) || !(momentum < 1.0))
        throw ArgumentError("momentum must lie in [0, 1), got " +
                            std::to_string(momentum));
    if (!(lr_decay_factor > 0.0) || !(lr_decay_factor <= 1.0))
        throw ArgumentError("lr_decay_factor must lie in (0, 1]");
    if (!(tau > 0.0) || !std::isfinite(tau))
        throw ArgumentError("tau must be finite and positive");
    if (!(alpha >= 0.0) || !std::isfinite(alpha))
        throw ArgumentError("alpha must be finite and >= 0");
    if (!(kd_coeff >= 0.0) || !std::isfinite(kd_coeff))
        throw ArgumentError("kd_coeff must be finite and >= 0");
    if (!(label_smoothing >= 0.0) || !(label_smoothing < 1.0))
        throw ArgumentError("label_smoothing must lie in [0, 1)");
    if (!(rs_count_tau >= 0.0) || !std::isfinite(rs_count_tau))
        throw ArgumentError("rs_count_tau must be finite and >= 0");
    // An empty hidden list is a plain linear classifier.
    for (std::size_t h : hidden)
        if (h == 0) throw ArgumentError("hidden layer sizes must be >= 1");
    // Decay epochs past the horizon never fire; only epoch 0 is invalid
    // (epochs are 1-based).
    for (std::size_t e : lr_decay_epochs)
        if (e == 0)
            throw ArgumentError("lr decay epochs are 1-based; 0 is invalid");
    policy.validate();
}

Velocity Velocity::zeros_like(const MlpModel& model) {
    Velocity v;
    for (const Matrix& w : model.weights)
        v.weights.emplace_back(w.rows(), w.cols());
    for (const auto& b : model.biases) v.biases.emplace_back(b.size(), 0.0);
    return v;
}

void sgd_step(MlpModel& model, const Gradients& grads, double lr,
              double momentum, Velocity& velocity) {
    if (grads.weights.size() != model.weights.size())
        throw ShapeError("sgd_step: gradient layer count mismatch");
    const auto& K = kernels::table();
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
        if (!grads.weights[l].same_shape(model.weights[l]))
            throw ShapeError("sgd_step: gradient shape mismatch at layer " +
                             std::to_string(l));
        K.sgd_momentum(model.weights[l].data(), velocity.weights[l].data(),
                       grads.weights[l].data(), lr, momentum,
                       model.weights[l].size());
        K.sgd_momentum(model.biases[l].data(), velocity.biases[l].data(),
                       grads.biases[l].data(), lr, momentum,
                       model.biases[l].size());
    }
}

double evaluate_accuracy(const MlpModel& model, const LabeledDataset& ds) {
    ds.validate();
    const Matrix logits = forward_logits(model, ds.features);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto row = logits.row(i);
        const std::size_t pred =
            std::max_element(row.begin(), row.end()) - row.begin();
        if (pred == ds.labels[i]) ++correct;
    }
    return double(correct) / double(ds.size());
}

FitResult fit(const TrainConfig& config, const LabeledDataset& train,
              const LabeledDataset& test, const MlpModel* teacher) {
    config.validate();
    train.validate();
    test.validate();
    if (train.num_classes != test.num_classes || train.dim() != test.dim())
        throw ConsistencyError("train and test sets disagree on shape");
    if (needs_teacher(config.mode) && teacher == nullptr)
        throw ArgumentError(std::string("loss mode '") +
                            to_string(config.mode) + "' requires a teacher");
    if (teacher != nullptr) {
        if (teacher->spec.output_dim() != train.num_classes ||
            teacher->spec.input_dim() != train.dim())
            throw ShapeError("teacher shape does not match the dataset");
    }

    MlpSpec spec;
    spec.layer_sizes.push_back(train.dim());
    for (std::size_t h : config.hidden) spec.layer_sizes.push_back(h);
    spec.layer_sizes.push_back(train.num_classes);
    spec.activation = config.activation;
    spec.init = config.init;
    spec.seed = mix_stream(config.seed, kStreamInit);
    MlpModel model = init(spec);
    Velocity velocity = Velocity::zeros_like(model);

    // The teacher never moves during distillation, so its logits on the
    // training set are a constant of the run; materialize them once.
    Matrix teacher_logits;
    const bool use_teacher = teacher != nullptr && needs_teacher(config.mode);
    if (use_teacher) teacher_logits = forward_logits(*teacher, train.features);

    SeededRng shuffle_rng(config.seed, mix_stream(config.seed, kStreamShuffle));
    SeededRng policy_rng(config.seed, mix_stream(config.seed, kStreamPolicy));

    const std::size_t n = train.size();
    const std::size_t K = train.num_classes;
    const Temperature tau(config.tau);
    const Temperature rs_tau(config.rs_count_tau > 0.0 ? config.rs_count_tau
                                                       : config.tau);

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    TrainReport report;
    report.config = config;
    report.dataset_size = n;
    double lr = config.learning_rate;

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        if (std::find(config.lr_decay_epochs.begin(),
                      config.lr_decay_epochs.end(),
                      epoch) != config.lr_decay_epochs.end())
            lr *= config.lr_decay_factor;

        shuffle_indices(order, shuffle_rng);

        double loss_sum = 0.0;
        std::size_t correct = 0;
        std::size_t rs_count = 0;

        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const std::size_t bs = std::min(config.batch_size, n - start);
            Matrix batch(bs, train.dim());
            for (std::size_t r = 0; r < bs; ++r)
                std::memcpy(batch.row(r).data(),
                            train.features.row(order[start + r]).data(),
                            train.dim() * sizeof(double));

            auto [logits, trace] = forward(model, batch);
            // Catch a blow-up at the first non-finite activation; waiting
            // for the end-of-epoch parameter check would feed inf/NaN
            // logits into the loss first.
            if (!logits.all_finite())
                throw DivergenceError(
                    "training diverged (non-finite logits) at epoch " +
                        std::to_string(epoch),
                    epoch);
            Matrix grad_logits(bs, K);
            const double inv_bs = 1.0 / double(bs);

            for (std::size_t r = 0; r < bs; ++r) {
                const std::size_t idx = order[start + r];
                const std::size_t label = train.labels[idx];
                const auto zs = logits.row(r);

                double kd_multiplier = 1.0;
                if (use_teacher) {
                    const auto zt = teacher_logits.row(idx);
                    const RsDecision d = classify(zs, zt, label, rs_tau);
                    if (!config.rs_frozen_sweep &&
                        d.is_regularization_sample)
                        ++rs_count;
                    kd_multiplier = apply_policy(
                        config.policy, d.is_regularization_sample, policy_rng);
                }

                const LossBundle bundle = loss_bundle(
                    config.mode, zs,
                    use_teacher ? teacher_logits.row(idx)
                                : std::span<const double>{},
                    label, tau, config.alpha, config.kd_coeff,
                    double(kd_multiplier), config.policy.mask_label_logit,
                    config.label_smoothing);

                loss_sum += bundle.total;
                const std::size_t pred =
                    std::max_element(zs.begin(), zs.end()) - zs.begin();
                if (pred == label) ++correct;

                double* g = grad_logits.row(r).data();
                for (std::size_t k = 0; k < K; ++k)
                    g[k] = bundle.grad[k] * inv_bs;
            }

            const Gradients grads = backward(model, trace, grad_logits);
            sgd_step(model, grads, lr, config.momentum, velocity);
        }

        if (!std::isfinite(loss_sum) || !model.all_finite())
            throw DivergenceError("training diverged (non-finite loss or "
                                  "parameters) at epoch " +
                                      std::to_string(epoch),
                                  epoch);

        if (use_teacher && config.rs_frozen_sweep)
            rs_count = count_epoch(model, *teacher, train, rs_tau).count;

        EpochRow row;
        row.epoch = epoch;
        row.train_loss = loss_sum / double(n);
        row.train_accuracy = double(correct) / double(n);
        row.test_accuracy = evaluate_accuracy(model, test);
        row.rs_count = rs_count;
        report.epochs.push_back(row);
    }

    report.final_test_accuracy = report.epochs.back().test_accuracy;
    return {std::move(model), std::move(report)};
}

namespace {

// %.17g round-trips doubles exactly; all CSV/JSON output flows through
// here so reruns are byte-identical.
std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void write_report_csv(const TrainReport& report, std::ostream& os) {
    os << "epoch,train_loss,train_accuracy,test_accuracy,rs_count\n";
    for (const EpochRow& r : report.epochs)
        os << r.epoch << ',' << fmt_double(r.train_loss) << ','
           << fmt_double(r.train_accuracy) << ','
           << fmt_double(r.test_accuracy) << ',' << r.rs_count << '\n';
}

void write_rs_trajectory_csv(const TrainReport& report, std::ostream& os) {
    const double tau = report.config.rs_count_tau > 0.0
                           ? report.config.rs_count_tau
                           : report.config.tau;
    const std::string policy = report.config.policy.describe();
    os << "epoch,rs_count,dataset_size,tau,policy\n";
    for (const EpochRow& r : report.epochs)
        os << r.epoch << ',' << r.rs_count << ',' << report.dataset_size
           << ',' << fmt_double(tau) << ',' << policy << '\n';
}

std::string report_summary_json(const TrainReport& report) {
    const TrainConfig& c = report.config;
    nlohmann::ordered_json j;
    j["final_test_accuracy"] = report.final_test_accuracy;
    j["epochs_run"] = report.epochs.size();
    j["dataset_size"] = report.dataset_size;
    nlohmann::ordered_json jc;
    jc["mode"] = to_string(c.mode);
    jc["tau"] = c.tau;
    jc["alpha"] = c.alpha;
    jc["kd_coeff"] = c.kd_coeff;
    jc["policy"] = {{"p_rs", c.policy.p_rs},
                    {"p_nrs", c.policy.p_nrs},
                    {"mask_label_logit", c.policy.mask_label_logit}};
    jc["epochs"] = c.epochs;
    jc["batch_size"] = c.batch_size;
    jc["learning_rate"] = c.learning_rate;
    jc["momentum"] = c.momentum;
    jc["lr_decay_epochs"] = c.lr_decay_epochs;
    jc["lr_decay_factor"] = c.lr_decay_factor;
    jc["seed"] = c.seed;
    jc["label_smoothing"] = c.label_smoothing;
    jc["hidden"] = c.hidden;
    jc["activation"] = to_string(c.activation);
    jc["init"] = to_string(c.init);
    jc["rs_count_tau"] = c.rs_count_tau;
    jc["rs_frozen_sweep"] = c.rs_frozen_sweep;
    j["config"] = std::move(jc);
    return j.dump(2);
}

}  // namespace distill
