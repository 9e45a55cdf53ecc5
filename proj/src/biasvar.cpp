#include "distill/biasvar.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "distill/errors.hpp"
#include "distill/rng.hpp"
#include "distill/softmax.hpp"

namespace distill {

std::vector<double> geo_mean_log(const Matrix& run_log_probs) {
    if (run_log_probs.rows() == 0 || run_log_probs.cols() == 0)
        throw ArgumentError("geo_mean_log: empty run matrix");
    const std::size_t M = run_log_probs.rows();
    const std::size_t K = run_log_probs.cols();
    std::vector<double> mean_log(K, 0.0);
    for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t k = 0; k < K; ++k) {
            const double lp = run_log_probs(m, k);
            if (!std::isfinite(lp))
                throw DegenerateOutputError(
                    "geo_mean_log: non-finite log-probability in run " +
                    std::to_string(m));
            mean_log[k] += lp;
        }
    }
    for (double& v : mean_log) v /= double(M);
    // Renormalize in log space, then exponentiate.
    double mx = mean_log[0];
    for (double v : mean_log) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : mean_log) z += std::exp(v - mx);
    const double log_z = mx + std::log(z);
    std::vector<double> out(K);
    for (std::size_t k = 0; k < K; ++k) out[k] = std::exp(mean_log[k] - log_z);
    return out;
}

std::vector<double> geo_mean(const std::vector<std::vector<double>>& runs,
                             double p_min) {
    if (runs.empty()) throw ArgumentError("geo_mean: no runs");
    const std::size_t K = runs.front().size();
    Matrix logs(runs.size(), K);
    for (std::size_t m = 0; m < runs.size(); ++m) {
        if (runs[m].size() != K)
            throw ShapeError("geo_mean: runs have differing lengths");
        for (std::size_t k = 0; k < K; ++k) {
            double p = runs[m][k];
            if (!(p >= 0.0) || !std::isfinite(p))
                throw ArgumentError("geo_mean: probabilities must be finite "
                                    "and >= 0");
            if (p_min > 0.0) p = std::max(p, p_min);
            if (p == 0.0)
                throw DegenerateOutputError(
                    "geo_mean: zero probability with flooring disabled (run " +
                    std::to_string(m) + ")");
            logs(m, k) = std::log(p);
        }
    }
    return geo_mean_log(logs);
}

namespace {

double kl(std::span<const double> p, std::span<const double> q) {
    double out = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (p[k] == 0.0) continue;
        out += p[k] * (std::log(p[k]) - std::log(q[k]));
    }
    return out;
}

}  // namespace

SampleDecomposition decompose(std::span<const double> truth,
                              std::span<const double> ybar,
                              const std::vector<std::vector<double>>& runs,
                              double p_min) {
    if (truth.size() != ybar.size())
        throw ShapeError("decompose: truth/ybar length mismatch");
    if (runs.empty()) throw ArgumentError("decompose: no runs");

    SampleDecomposition d;
    double truth_sum = 0.0;
    for (std::size_t k = 0; k < truth.size(); ++k) {
        if (!(truth[k] >= 0.0) || !std::isfinite(truth[k]))
            throw ArgumentError("decompose: bad truth distribution");
        truth_sum += truth[k];
        if (truth[k] > 0.0) d.intrinsic_noise -= truth[k] * std::log(truth[k]);
    }
    // The additive split is only an identity when the truth is a
    // distribution.
    if (std::abs(truth_sum - 1.0) > 1e-10)
        throw ArgumentError("decompose: truth sums to " +
                            std::to_string(truth_sum) + ", expected 1");
    d.bias = kl(truth, ybar);

    for (const auto& run : runs) {
        if (run.size() != truth.size())
            throw ShapeError("decompose: run length mismatch");
        std::vector<double> yhat(run.begin(), run.end());
        for (double& p : yhat) {
            if (p_min > 0.0) p = std::max(p, p_min);
            if (p == 0.0)
                throw DegenerateOutputError(
                    "decompose: zero probability with flooring disabled");
        }
        d.variance += kl(ybar, yhat);
        double err = 0.0;
        for (std::size_t k = 0; k < truth.size(); ++k)
            if (truth[k] > 0.0) err -= truth[k] * std::log(yhat[k]);
        d.mean_error += err;
    }
    d.variance /= double(runs.size());
    d.mean_error /= double(runs.size());
    return d;
}

void EnsembleConfig::validate() const {
    if (modes.empty()) throw ArgumentError("ensemble needs at least one mode");
    if (num_runs == 0) throw ArgumentError("ensemble needs num_runs >= 1");
    if (num_teachers == 0)
        throw ArgumentError("ensemble needs num_teachers >= 1");
    if (workers == 0) throw ArgumentError("ensemble needs workers >= 1");
    for (std::size_t i = 0; i < modes.size(); ++i)
        for (std::size_t j = i + 1; j < modes.size(); ++j)
            if (modes[i] == modes[j])
                throw ArgumentError("duplicate mode in ensemble: " +
                                    std::string(to_string(modes[i])));
    student.validate();
    teacher.validate();
    if (teacher.mode != LossMode::ce)
        throw ArgumentError("ensemble teachers must train with mode 'ce'");
}

const ModeReport* EnsembleReport::find(LossMode mode) const {
    for (const ModeReport& m : modes)
        if (m.mode == mode) return &m;
    return nullptr;
}

namespace {

Matrix eval_log_probs(const MlpModel& model, const LabeledDataset& eval_set) {
    const Matrix logits = forward_logits(model, eval_set.features);
    Matrix out(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i)
        log_softmax_t_into(logits.row(i), 1.0, out.row(i));
    return out;
}

// Mean log-probability matrix of one mode's runs, renormalized per row —
// the ensemble center ybar as N x K probabilities.
Matrix ensemble_center(const std::vector<RunOutputs>& runs) {
    const std::size_t N = runs.front().log_probs.rows();
    const std::size_t K = runs.front().log_probs.cols();
    Matrix center(N, K);
    Matrix stacked(runs.size(), K);
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t m = 0; m < runs.size(); ++m)
            std::memcpy(stacked.row(m).data(), runs[m].log_probs.row(i).data(),
                        K * sizeof(double));
        const std::vector<double> ybar = geo_mean_log(stacked);
        std::memcpy(center.row(i).data(), ybar.data(), K * sizeof(double));
    }
    return center;
}

}  // namespace

Decomposition decompose_runs(const std::vector<RunOutputs>& runs,
                             const LabeledDataset& eval_set) {
    if (runs.empty()) throw ArgumentError("decompose_runs: no runs");
    const std::size_t N = eval_set.size();
    const std::size_t K = eval_set.num_classes;
    for (const RunOutputs& r : runs)
        if (r.log_probs.rows() != N || r.log_probs.cols() != K)
            throw ShapeError("decompose_runs: run output shape does not "
                             "match the eval set");

    Decomposition out;
    out.per_sample.resize(N);
    std::vector<std::vector<double>> sample_runs(
        runs.size(), std::vector<double>(K));
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t m = 0; m < runs.size(); ++m)
            for (std::size_t k = 0; k < K; ++k)
                sample_runs[m][k] = std::exp(runs[m].log_probs(i, k));
        std::vector<double> truth(K, 0.0);
        truth[eval_set.labels[i]] = 1.0;
        const std::vector<double> ybar = geo_mean(sample_runs, kProbFloor);
        out.per_sample[i] = decompose(truth, ybar, sample_runs, kProbFloor);
        out.aggregate.intrinsic_noise += out.per_sample[i].intrinsic_noise;
        out.aggregate.bias += out.per_sample[i].bias;
        out.aggregate.variance += out.per_sample[i].variance;
        out.aggregate.mean_error += out.per_sample[i].mean_error;
    }
    out.aggregate.intrinsic_noise /= double(N);
    out.aggregate.bias /= double(N);
    out.aggregate.variance /= double(N);
    out.aggregate.mean_error /= double(N);
    return out;
}

EnsembleReport estimate(const EnsembleConfig& config,
                        const LabeledDataset& train,
                        const LabeledDataset& eval_set) {
    config.validate();
    train.validate();
    eval_set.validate();
    if (train.num_classes != eval_set.num_classes ||
        train.dim() != eval_set.dim())
        throw ConsistencyError("train and eval sets disagree on shape");

    // Teachers: T models on T bootstrap resamples of the training set.
    // A mode needing a teacher pairs run m with teacher m mod T; every
    // mode's run m trains on the same resample D_m with the same student
    // seed, so mode contrasts are paired comparisons.
    const bool any_teacher = [&] {
        for (LossMode m : config.modes)
            if (needs_teacher(m)) return true;
        return false;
    }();

    std::vector<MlpModel> teachers;
    if (any_teacher) {
        for (std::size_t t = 0; t < config.num_teachers; ++t) {
            const std::uint64_t tseed =
                mix_stream(config.meta_seed, 0x7E000 + t);
            TrainConfig tc = config.teacher;
            tc.seed = tseed;
            const LabeledDataset boot = bootstrap(train, tseed);
            teachers.push_back(fit(tc, boot, eval_set).model);
        }
    }

    std::vector<LabeledDataset> resamples;
    std::vector<std::uint64_t> run_seeds;
    for (std::size_t m = 0; m < config.num_runs; ++m) {
        const std::uint64_t rseed = mix_stream(config.meta_seed, 0xD0000 + m);
        run_seeds.push_back(rseed);
        resamples.push_back(bootstrap(train, rseed));
    }

    EnsembleReport report;
    for (LossMode mode : config.modes) {
        ModeReport mr;
        mr.mode = mode;
        for (std::size_t m = 0; m < config.num_runs; ++m) {
            TrainConfig sc = config.student;
            sc.mode = mode;
            sc.seed = run_seeds[m];
            const std::size_t teacher_id =
                any_teacher ? m % config.num_teachers : 0;
            const MlpModel* teacher =
                needs_teacher(mode) ? &teachers[teacher_id] : nullptr;
            try {
                FitResult fr = fit(sc, resamples[m], eval_set, teacher);
                RunOutputs ro;
                ro.log_probs = eval_log_probs(fr.model, eval_set);
                ro.mode = mode;
                ro.seed = run_seeds[m];
                ro.teacher_id = needs_teacher(mode) ? teacher_id : 0;
                mr.runs.push_back(std::move(ro));
                ++mr.successful_runs;
            } catch (const DivergenceError&) {
                ++mr.failed_runs;
            }
        }
        // The estimator is meaningless from a half-empty ensemble.
        if (mr.successful_runs * 2 < config.num_runs)
            throw DivergenceError(
                "mode '" + std::string(to_string(mode)) + "' kept only " +
                    std::to_string(mr.successful_runs) + " of " +
                    std::to_string(config.num_runs) + " runs",
                0);
        mr.decomposition = decompose_runs(mr.runs, eval_set);
        report.modes.push_back(std::move(mr));
    }

    const ModeReport* ce = report.find(LossMode::ce);
    const ModeReport* kd = report.find(LossMode::kd);
    if (ce != nullptr && kd != nullptr) {
        const Matrix ce_center = ensemble_center(ce->runs);
        const Matrix kd_center = ensemble_center(kd->runs);
        double gap = 0.0;
        for (std::size_t i = 0; i < eval_set.size(); ++i) {
            const std::size_t y = eval_set.labels[i];
            gap += std::log(ce_center(i, y)) - std::log(kd_center(i, y));
        }
        report.bias_gap_ce_vs_kd = gap / double(eval_set.size());
    }
    return report;
}

namespace {

constexpr char kDumpMagic[4] = {'D', 'L', 'P', 'D'};
constexpr std::uint32_t kDumpVersion = 1;

template <typename T>
void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw FormatError("run dump " + path + " is truncated");
    return v;
}

}  // namespace

void write_run_dump(const std::string& path,
                    const std::vector<RunOutputs>& runs) {
    if (runs.empty()) throw ArgumentError("write_run_dump: no runs");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open run dump for writing: " + path);
    out.write(kDumpMagic, 4);
    write_pod(out, kDumpVersion);
    write_pod(out, static_cast<std::uint64_t>(runs.size()));
    write_pod(out, static_cast<std::uint64_t>(runs.front().log_probs.rows()));
    write_pod(out, static_cast<std::uint64_t>(runs.front().log_probs.cols()));
    for (const RunOutputs& r : runs) {
        if (!r.log_probs.same_shape(runs.front().log_probs))
            throw ShapeError("write_run_dump: runs have differing shapes");
        write_pod(out, static_cast<std::uint8_t>(r.mode));
        write_pod(out, r.seed);
        write_pod(out, static_cast<std::uint64_t>(r.teacher_id));
        out.write(reinterpret_cast<const char*>(r.log_probs.data()),
                  static_cast<std::streamsize>(r.log_probs.size() *
                                               sizeof(double)));
    }
    if (!out) throw IoError("failed writing run dump " + path);
}

std::vector<RunOutputs> read_run_dump(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open run dump " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kDumpMagic, 4) != 0)
        throw FormatError("file " + path + " is not a run dump");
    const auto version = read_pod<std::uint32_t>(in, path);
    if (version != kDumpVersion)
        throw FormatError("run dump " + path + " has version " +
                          std::to_string(version) + ", expected " +
                          std::to_string(kDumpVersion));
    const auto n_runs = read_pod<std::uint64_t>(in, path);
    const auto rows = read_pod<std::uint64_t>(in, path);
    const auto cols = read_pod<std::uint64_t>(in, path);
    if (n_runs == 0 || rows == 0 || cols < 2 || n_runs > (1u << 20) ||
        rows > (1u << 28) || cols > (1u << 20))
        throw FormatError("run dump " + path + " has implausible dimensions");
    std::vector<RunOutputs> runs;
    for (std::uint64_t r = 0; r < n_runs; ++r) {
        RunOutputs ro;
        const auto mode_tag = read_pod<std::uint8_t>(in, path);
        if (mode_tag > 4)
            throw FormatError("run dump " + path + ": bad mode tag");
        ro.mode = static_cast<LossMode>(mode_tag);
        ro.seed = read_pod<std::uint64_t>(in, path);
        ro.teacher_id = read_pod<std::uint64_t>(in, path);
        ro.log_probs = Matrix(rows, cols);
        in.read(reinterpret_cast<char*>(ro.log_probs.data()),
                static_cast<std::streamsize>(rows * cols * sizeof(double)));
        if (!in) throw FormatError("run dump " + path + " is truncated");
        runs.push_back(std::move(ro));
    }
    char extra;
    if (in.read(&extra, 1))
        throw FormatError("run dump " + path + " has trailing bytes");
    return runs;
}

}  // namespace distill
