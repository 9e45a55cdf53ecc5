#include "distill/xlab.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "distill/errors.hpp"
#include "distill/regsample.hpp"
#include "distill/rng.hpp"
#include "distill/softmax.hpp"

namespace distill::xlab {

using nlohmann::json;
using nlohmann::ordered_json;

const char* to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::train: return "train";
        case ExperimentKind::rs_count: return "rs-count";
        case ExperimentKind::subsets: return "subsets";
        case ExperimentKind::intermediate: return "intermediate";
        case ExperimentKind::biasvar: return "biasvar";
        case ExperimentKind::resemblance: return "resemblance";
        case ExperimentKind::alpha_sweep: return "alpha-sweep";
        case ExperimentKind::weight_variant: return "weight-variant";
    }
    throw ArgumentError("invalid experiment kind tag");
}

ExperimentKind kind_from_string(const std::string& s) {
    if (s == "train") return ExperimentKind::train;
    if (s == "rs-count") return ExperimentKind::rs_count;
    if (s == "subsets") return ExperimentKind::subsets;
    if (s == "intermediate") return ExperimentKind::intermediate;
    if (s == "biasvar") return ExperimentKind::biasvar;
    if (s == "resemblance") return ExperimentKind::resemblance;
    if (s == "alpha-sweep") return ExperimentKind::alpha_sweep;
    if (s == "weight-variant") return ExperimentKind::weight_variant;
    throw ConfigError("unknown experiment kind '" + s + "'");
}

LabeledDataset DatasetSource::load() const {
    switch (type) {
        case Type::blobs: return gen_blobs(blobs);
        case Type::idx: return load_idx(idx_images, idx_labels);
        case Type::csv: return load_csv(csv_path);
    }
    throw ArgumentError("invalid dataset source tag");
}

// ---------------------------------------------------------------------------
// Config parsing. Strict by design: every unknown key is an error carrying
// its JSON path, because silent typos in experiment configs are the main
// reproducibility hazard.

namespace {

[[noreturn]] void bad(const std::string& path, const std::string& what) {
    throw ConfigError("config error at " + path + ": " + what);
}

void check_keys(const json& j, const std::string& path,
                std::initializer_list<const char*> allowed) {
    if (!j.is_object()) bad(path, "expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* a : allowed)
            if (it.key() == a) {
                known = true;
                break;
            }
        if (!known) bad(path + "." + it.key(), "unknown field");
    }
}

double get_num(const json& j, const std::string& path, const char* key,
               double fallback) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_number()) bad(path + "." + key, "expected a number");
    return v.get<double>();
}

std::uint64_t get_u64(const json& j, const std::string& path, const char* key,
                      std::uint64_t fallback) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0)
        return static_cast<std::uint64_t>(v.get<std::int64_t>());
    bad(path + "." + key, "expected a non-negative integer");
}

std::size_t get_size(const json& j, const std::string& path, const char* key,
                     std::size_t fallback) {
    return static_cast<std::size_t>(get_u64(j, path, key, fallback));
}

bool get_bool(const json& j, const std::string& path, const char* key,
              bool fallback) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_boolean()) bad(path + "." + key, "expected a boolean");
    return v.get<bool>();
}

std::string get_str(const json& j, const std::string& path, const char* key,
                    const std::string& fallback) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_string()) bad(path + "." + key, "expected a string");
    return v.get<std::string>();
}

std::vector<double> get_num_list(const json& j, const std::string& path,
                                 const char* key,
                                 std::vector<double> fallback) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_array()) bad(path + "." + key, "expected an array of numbers");
    std::vector<double> out;
    for (const json& e : v) {
        if (!e.is_number()) bad(path + "." + key, "expected an array of numbers");
        out.push_back(e.get<double>());
    }
    if (out.empty()) bad(path + "." + key, "array must not be empty");
    return out;
}

std::vector<std::size_t> get_size_list(const json& j, const std::string& path,
                                       const char* key,
                                       std::vector<std::size_t> fallback) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_array()) bad(path + "." + key, "expected an array of integers");
    std::vector<std::size_t> out;
    for (const json& e : v) {
        if (!e.is_number_integer() && !e.is_number_unsigned())
            bad(path + "." + key, "expected an array of integers");
        if (e.is_number_integer() && e.get<std::int64_t>() < 0)
            bad(path + "." + key, "entries must be non-negative");
        out.push_back(e.get<std::size_t>());
    }
    return out;
}

TrainConfig parse_train_config(const json& j, const std::string& path,
                               bool is_teacher) {
    check_keys(j, path,
               {"mode", "tau", "alpha", "kd_coeff", "policy", "epochs",
                "batch_size", "learning_rate", "momentum", "lr_decay_epochs",
                "lr_decay_factor", "seed", "label_smoothing", "hidden",
                "activation", "init", "rs_count_tau", "rs_frozen_sweep"});
    TrainConfig c;
    if (is_teacher) {
        c.hidden = {128, 128};  // teachers default strictly larger
    }
    try {
        c.mode = loss_mode_from_string(
            get_str(j, path, "mode", to_string(c.mode)));
        c.tau = get_num(j, path, "tau", c.tau);
        c.alpha = get_num(j, path, "alpha", c.alpha);
        c.kd_coeff = get_num(j, path, "kd_coeff", c.kd_coeff);
        if (j.contains("policy")) {
            const json& p = j.at("policy");
            const std::string ppath = path + ".policy";
            check_keys(p, ppath, {"p_rs", "p_nrs", "mask_label_logit"});
            c.policy.p_rs = get_num(p, ppath, "p_rs", c.policy.p_rs);
            c.policy.p_nrs = get_num(p, ppath, "p_nrs", c.policy.p_nrs);
            c.policy.mask_label_logit =
                get_bool(p, ppath, "mask_label_logit",
                         c.policy.mask_label_logit);
        }
        c.epochs = get_size(j, path, "epochs", c.epochs);
        c.batch_size = get_size(j, path, "batch_size", c.batch_size);
        c.learning_rate = get_num(j, path, "learning_rate", c.learning_rate);
        c.momentum = get_num(j, path, "momentum", c.momentum);
        c.lr_decay_epochs =
            get_size_list(j, path, "lr_decay_epochs", c.lr_decay_epochs);
        c.lr_decay_factor =
            get_num(j, path, "lr_decay_factor", c.lr_decay_factor);
        c.seed = get_u64(j, path, "seed", c.seed);
        c.label_smoothing =
            get_num(j, path, "label_smoothing", c.label_smoothing);
        c.hidden = get_size_list(j, path, "hidden", c.hidden);
        c.activation = activation_from_string(
            get_str(j, path, "activation", to_string(c.activation)));
        c.init = init_rule_from_string(
            get_str(j, path, "init", to_string(c.init)));
        c.rs_count_tau = get_num(j, path, "rs_count_tau", c.rs_count_tau);
        c.rs_frozen_sweep =
            get_bool(j, path, "rs_frozen_sweep", c.rs_frozen_sweep);
        c.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        bad(path, e.what());
    }
    if (is_teacher && c.mode != LossMode::ce)
        bad(path + ".mode", "teachers train with mode 'ce'");
    return c;
}

DatasetSource parse_dataset(const json& j, const std::string& path) {
    DatasetSource src;
    const std::string type = get_str(j, path, "type", "blobs");
    if (type == "blobs") {
        src.type = DatasetSource::Type::blobs;
        check_keys(j, path,
                   {"type", "num_classes", "per_class", "dim", "sigma",
                    "center_scale", "seed"});
        BlobSpec def = BlobSpec::synthetic_default();
        src.blobs.num_classes =
            get_size(j, path, "num_classes", def.num_classes);
        src.blobs.per_class = get_size(j, path, "per_class", def.per_class);
        src.blobs.dim = get_size(j, path, "dim", def.dim);
        src.blobs.sigma = get_num(j, path, "sigma", def.sigma);
        src.blobs.center_scale =
            get_num(j, path, "center_scale", def.center_scale);
        src.blobs.seed = get_u64(j, path, "seed", def.seed);
        try {
            src.blobs.validate();
        } catch (const Error& e) {
            bad(path, e.what());
        }
    } else if (type == "idx") {
        src.type = DatasetSource::Type::idx;
        check_keys(j, path, {"type", "images", "labels"});
        src.idx_images = get_str(j, path, "images", "");
        src.idx_labels = get_str(j, path, "labels", "");
        if (src.idx_images.empty() || src.idx_labels.empty())
            bad(path, "idx source needs 'images' and 'labels' paths");
        if (!std::filesystem::exists(src.idx_images))
            bad(path + ".images", "file does not exist: " + src.idx_images);
        if (!std::filesystem::exists(src.idx_labels))
            bad(path + ".labels", "file does not exist: " + src.idx_labels);
    } else if (type == "csv") {
        src.type = DatasetSource::Type::csv;
        check_keys(j, path, {"type", "path"});
        src.csv_path = get_str(j, path, "path", "");
        if (src.csv_path.empty()) bad(path, "csv source needs 'path'");
        if (!std::filesystem::exists(src.csv_path))
            bad(path + ".path", "file does not exist: " + src.csv_path);
    } else {
        bad(path + ".type", "unknown dataset type '" + type +
                                "' (expected blobs|idx|csv)");
    }
    return src;
}

bool kind_needs_teacher_section(ExperimentKind k, const ExperimentConfig& c) {
    switch (k) {
        case ExperimentKind::train:
            return needs_teacher(c.train.mode);
        case ExperimentKind::rs_count:
        case ExperimentKind::subsets:
        case ExperimentKind::intermediate:
        case ExperimentKind::resemblance:
        case ExperimentKind::alpha_sweep:
        case ExperimentKind::weight_variant:
            return true;
        case ExperimentKind::biasvar:
            for (LossMode m : c.biasvar_modes)
                if (needs_teacher(m)) return true;
            return false;
    }
    return false;
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") +
                          e.what());
    }
    const std::string path = "$";
    check_keys(j, path,
               {"kind", "meta_seed", "repeats", "workers", "train_fraction",
                "out_dir", "dataset", "train", "teacher", "taus",
                "smoothing_values", "alphas", "probs", "num_runs",
                "num_teachers", "biasvar_modes", "resemblance_tau"});

    ExperimentConfig c;
    if (!j.contains("kind")) bad(path + ".kind", "missing required field");
    c.kind = kind_from_string(get_str(j, path, "kind", ""));
    c.meta_seed = get_u64(j, path, "meta_seed", c.meta_seed);
    c.repeats = get_size(j, path, "repeats", c.repeats);
    if (c.repeats == 0) bad(path + ".repeats", "must be >= 1");
    c.workers = get_size(j, path, "workers", c.workers);
    if (c.workers == 0) bad(path + ".workers", "must be >= 1");
    c.train_fraction =
        get_num(j, path, "train_fraction", c.train_fraction);
    if (!(c.train_fraction > 0.0) || !(c.train_fraction < 1.0))
        bad(path + ".train_fraction", "must lie in (0, 1)");
    c.out_dir = get_str(j, path, "out_dir", c.out_dir);
    if (c.out_dir.empty()) bad(path + ".out_dir", "must not be empty");

    if (j.contains("dataset"))
        c.dataset = parse_dataset(j.at("dataset"), path + ".dataset");

    if (j.contains("train"))
        c.train = parse_train_config(j.at("train"), path + ".train", false);
    if (j.contains("teacher")) {
        c.teacher =
            parse_train_config(j.at("teacher"), path + ".teacher", true);
        c.has_teacher = true;
    }

    c.taus = get_num_list(j, path, "taus", c.taus);
    for (double t : c.taus)
        if (!(t > 0.0)) bad(path + ".taus", "temperatures must be positive");
    c.smoothing_values =
        get_num_list(j, path, "smoothing_values", c.smoothing_values);
    for (double s : c.smoothing_values)
        if (!(s >= 0.0) || !(s < 1.0))
            bad(path + ".smoothing_values", "entries must lie in [0, 1)");
    c.alphas = get_num_list(j, path, "alphas", c.alphas);
    for (double a : c.alphas)
        if (!(a >= 0.0)) bad(path + ".alphas", "entries must be >= 0");
    c.probs = get_num_list(j, path, "probs", c.probs);
    for (double p : c.probs)
        if (!(p >= 0.0) || !(p <= 1.0))
            bad(path + ".probs", "entries must lie in [0, 1]");
    c.num_runs = get_size(j, path, "num_runs", c.num_runs);
    if (c.num_runs == 0) bad(path + ".num_runs", "must be >= 1");
    c.num_teachers = get_size(j, path, "num_teachers", c.num_teachers);
    if (c.num_teachers == 0) bad(path + ".num_teachers", "must be >= 1");
    if (j.contains("biasvar_modes")) {
        const json& v = j.at("biasvar_modes");
        if (!v.is_array() || v.empty())
            bad(path + ".biasvar_modes", "expected a non-empty array");
        c.biasvar_modes.clear();
        for (const json& e : v) {
            if (!e.is_string())
                bad(path + ".biasvar_modes", "expected mode names");
            try {
                c.biasvar_modes.push_back(
                    loss_mode_from_string(e.get<std::string>()));
            } catch (const Error& err) {
                bad(path + ".biasvar_modes", err.what());
            }
        }
    }
    c.resemblance_tau =
        get_num(j, path, "resemblance_tau", c.resemblance_tau);
    if (!(c.resemblance_tau > 0.0))
        bad(path + ".resemblance_tau", "must be positive");

    if (kind_needs_teacher_section(c.kind, c) && !c.has_teacher)
        bad(path + ".teacher",
            std::string("experiment kind '") + to_string(c.kind) +
                "' requires a teacher section");
    const bool train_mode_needs_teacher =
        c.kind == ExperimentKind::rs_count ||
        c.kind == ExperimentKind::intermediate ||
        c.kind == ExperimentKind::resemblance;
    if (train_mode_needs_teacher && !needs_teacher(c.train.mode))
        bad(path + ".train.mode",
            std::string("experiment kind '") + to_string(c.kind) +
                "' requires a distillation mode (kd/masked_kd/wsl/"
                "sigmoid_wsl)");
    if (c.kind == ExperimentKind::alpha_sweep &&
        c.train.mode != LossMode::wsl &&
        c.train.mode != LossMode::sigmoid_wsl)
        bad(path + ".train.mode",
            "alpha-sweep requires train.mode 'wsl' or 'sigmoid_wsl'");
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

// ---------------------------------------------------------------------------
// Resemblance matrix.

ResemblanceMatrix resemblance(const MlpModel& student, const MlpModel& teacher,
                              const LabeledDataset& ds, Temperature tau) {
    ds.validate();
    const std::size_t K = ds.num_classes;
    if (student.spec.output_dim() != K || teacher.spec.output_dim() != K)
        throw ShapeError("resemblance: model output width does not match "
                         "dataset classes");
    const Matrix zs = forward_logits(student, ds.features);
    const Matrix zt = forward_logits(teacher, ds.features);

    ResemblanceMatrix m;
    m.tau = tau.tau;
    m.values = Matrix(K, K);
    m.class_counts.assign(K, 0);

    std::vector<double> ps_tau(K), pt_tau(K), ps_1(K);
    for (std::size_t s = 0; s < ds.size(); ++s) {
        softmax_t_into(zs.row(s), tau.tau, ps_tau);
        softmax_t_into(zt.row(s), tau.tau, pt_tau);
        softmax_t_into(zs.row(s), 1.0, ps_1);
        const std::size_t y = ds.labels[s];
        ++m.class_counts[y];
        for (std::size_t i = 0; i < K; ++i) {
            const double onehot = i == y ? 1.0 : 0.0;
            m.values(i, y) += tau.tau * (ps_tau[i] - pt_tau[i]) -
                              (ps_1[i] - onehot);
        }
    }
    for (std::size_t j = 0; j < K; ++j) {
        if (m.class_counts[j] == 0) {
            for (std::size_t i = 0; i < K; ++i)
                m.values(i, j) = std::numeric_limits<double>::quiet_NaN();
        } else {
            for (std::size_t i = 0; i < K; ++i)
                m.values(i, j) /= double(m.class_counts[j]);
        }
    }
    return m;
}

bool ResemblanceMatrix::column_sums_are_zero(double tolerance) const {
    for (std::size_t j = 0; j < values.cols(); ++j) {
        if (j < class_counts.size() && class_counts[j] == 0) continue;
        double sum = 0.0;
        for (std::size_t i = 0; i < values.rows(); ++i) sum += values(i, j);
        if (!(std::abs(sum) <= tolerance)) return false;
    }
    return true;
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Short form for variant names and parameter columns.
std::string fmt_short(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

}  // namespace

void write_resemblance_csv(const ResemblanceMatrix& m, std::ostream& os) {
    const std::size_t K = m.values.rows();
    os << "logit";
    for (std::size_t j = 0; j < K; ++j) os << ",class_" << j;
    os << '\n';
    for (std::size_t i = 0; i < K; ++i) {
        os << i;
        for (std::size_t j = 0; j < K; ++j) os << ',' << fmt(m.values(i, j));
        os << '\n';
    }
}

// ---------------------------------------------------------------------------
// Experiment execution.

namespace {

void write_text_file(const std::filesystem::path& p, const std::string& body) {
    std::ofstream os(p, std::ios::binary);  // binary: no newline translation
    if (!os) throw IoError("cannot open for writing: " + p.string());
    os << body;
    if (!os) throw IoError("failed writing " + p.string());
}

ordered_json train_config_json(const TrainConfig& c) {
    ordered_json j;
    j["mode"] = to_string(c.mode);
    j["tau"] = c.tau;
    j["alpha"] = c.alpha;
    j["kd_coeff"] = c.kd_coeff;
    j["policy"] = {{"p_rs", c.policy.p_rs},
                   {"p_nrs", c.policy.p_nrs},
                   {"mask_label_logit", c.policy.mask_label_logit}};
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["learning_rate"] = c.learning_rate;
    j["momentum"] = c.momentum;
    j["lr_decay_epochs"] = c.lr_decay_epochs;
    j["lr_decay_factor"] = c.lr_decay_factor;
    j["label_smoothing"] = c.label_smoothing;
    j["hidden"] = c.hidden;
    j["activation"] = to_string(c.activation);
    j["init"] = to_string(c.init);
    j["rs_count_tau"] = c.rs_count_tau;
    j["rs_frozen_sweep"] = c.rs_frozen_sweep;
    return j;
}

// Per-repeat result: scalar metrics per variant, already-written files.
struct RepeatOutcome {
    // variant name -> metric name -> value
    std::map<std::string, std::map<std::string, double>> variants;
    std::filesystem::path csv_path;
};

struct RepeatContext {
    const ExperimentConfig& config;
    const LabeledDataset& train_ds;
    const LabeledDataset& test_ds;
    std::filesystem::path dir;
    std::size_t repeat = 0;
    std::uint64_t seed = 0;
};

TrainConfig teacher_config_for(const RepeatContext& ctx) {
    TrainConfig tc = ctx.config.teacher;
    tc.mode = LossMode::ce;
    tc.seed = mix_stream(ctx.seed, 0x7E);
    return tc;
}

TrainConfig student_config_for(const RepeatContext& ctx) {
    TrainConfig sc = ctx.config.train;
    sc.seed = mix_stream(ctx.seed, 0x57);
    return sc;
}

void add_final_metrics(std::map<std::string, double>& m,
                       const TrainReport& report) {
    const EpochRow& last = report.epochs.back();
    m["final_test_accuracy"] = report.final_test_accuracy;
    m["final_train_loss"] = last.train_loss;
    m["final_train_accuracy"] = last.train_accuracy;
    m["final_rs_count"] = double(last.rs_count);
}

RepeatOutcome repeat_train(const RepeatContext& ctx) {
    RepeatOutcome out;
    std::optional<MlpModel> teacher;
    if (ctx.config.has_teacher) {
        const FitResult tr =
            fit(teacher_config_for(ctx), ctx.train_ds, ctx.test_ds);
        out.variants["teacher"]["final_test_accuracy"] =
            tr.report.final_test_accuracy;
        teacher = std::move(tr.model);
    }
    const FitResult fr = fit(student_config_for(ctx), ctx.train_ds,
                             ctx.test_ds, teacher ? &*teacher : nullptr);
    add_final_metrics(out.variants["train"], fr.report);

    std::ostringstream csv;
    write_report_csv(fr.report, csv);
    out.csv_path = ctx.dir / ("repeat-" + std::to_string(ctx.repeat) + ".csv");
    write_text_file(out.csv_path, csv.str());
    return out;
}

RepeatOutcome repeat_rs_count(const RepeatContext& ctx) {
    RepeatOutcome out;
    std::ostringstream csv;
    csv << "variant,epoch,rs_count,dataset_size,tau,smoothing\n";
    for (double eps : ctx.config.smoothing_values) {
        TrainConfig tc = teacher_config_for(ctx);
        tc.label_smoothing = eps;  // same seed across variants: paired
        const MlpModel teacher = fit(tc, ctx.train_ds, ctx.test_ds).model;
        for (double tau : ctx.config.taus) {
            TrainConfig sc = student_config_for(ctx);
            sc.tau = tau;
            sc.rs_count_tau = 0.0;  // count at the distillation temperature
            const FitResult fr = fit(sc, ctx.train_ds, ctx.test_ds, &teacher);
            const std::string name =
                "eps" + fmt_short(eps) + "-tau" + fmt_short(tau);
            for (const EpochRow& row : fr.report.epochs)
                csv << name << ',' << row.epoch << ',' << row.rs_count << ','
                    << fr.report.dataset_size << ',' << fmt_short(tau) << ','
                    << fmt_short(eps) << '\n';
            add_final_metrics(out.variants[name], fr.report);

            // Fixed-schema trajectory export for downstream plotting.
            std::ostringstream traj;
            write_rs_trajectory_csv(fr.report, traj);
            write_text_file(ctx.dir / ("rs-" + name + "-repeat-" +
                                       std::to_string(ctx.repeat) + ".csv"),
                            traj.str());
        }
    }
    out.csv_path = ctx.dir / ("repeat-" + std::to_string(ctx.repeat) + ".csv");
    write_text_file(out.csv_path, csv.str());
    return out;
}

RepeatOutcome repeat_subsets(const RepeatContext& ctx) {
    const MlpModel teacher =
        fit(teacher_config_for(ctx), ctx.train_ds, ctx.test_ds).model;
    struct V {
        const char* name;
        LossMode mode;
        TrainingPolicy policy;
    };
    const V variants[] = {
        {"direct", LossMode::ce, TrainingPolicy::standard()},
        {"only_rs", LossMode::kd, TrainingPolicy::only_rs()},
        {"exclude_rs", LossMode::kd, TrainingPolicy::exclude_rs()},
        {"standard_kd", LossMode::kd, TrainingPolicy::standard()},
        {"wsl", LossMode::wsl, TrainingPolicy::standard()},
    };
    RepeatOutcome out;
    std::ostringstream csv;
    csv << "variant,final_train_loss,final_train_accuracy,"
           "final_test_accuracy,final_rs_count\n";
    for (const V& v : variants) {
        TrainConfig sc = student_config_for(ctx);
        sc.mode = v.mode;
        sc.policy = v.policy;
        const FitResult fr =
            fit(sc, ctx.train_ds, ctx.test_ds,
                needs_teacher(v.mode) ? &teacher : nullptr);
        add_final_metrics(out.variants[v.name], fr.report);
        const EpochRow& last = fr.report.epochs.back();
        csv << v.name << ',' << fmt(last.train_loss) << ','
            << fmt(last.train_accuracy) << ',' << fmt(last.test_accuracy)
            << ',' << last.rs_count << '\n';
    }
    out.csv_path = ctx.dir / ("repeat-" + std::to_string(ctx.repeat) + ".csv");
    write_text_file(out.csv_path, csv.str());
    return out;
}

RepeatOutcome repeat_intermediate(const RepeatContext& ctx) {
    const MlpModel teacher =
        fit(teacher_config_for(ctx), ctx.train_ds, ctx.test_ds).model;
    RepeatOutcome out;
    std::ostringstream csv;
    csv << "side,p,final_test_accuracy,final_rs_count\n";
    struct Side {
        const char* name;
        bool vary_rs;  // true: p applies to p_rs; false: to p_nrs
    };
    const Side sides[] = {{"rs_keep", true}, {"nrs_keep", false}};
    for (const Side& side : sides) {
        for (double p : ctx.config.probs) {
            TrainConfig sc = student_config_for(ctx);
            sc.policy = TrainingPolicy::standard();
            (side.vary_rs ? sc.policy.p_rs : sc.policy.p_nrs) = p;
            const FitResult fr =
                fit(sc, ctx.train_ds, ctx.test_ds, &teacher);
            const std::string name =
                std::string(side.name) + "-" + fmt_short(p);
            add_final_metrics(out.variants[name], fr.report);
            const EpochRow& last = fr.report.epochs.back();
            csv << side.name << ',' << fmt_short(p) << ','
                << fmt(last.test_accuracy) << ',' << last.rs_count << '\n';
        }
    }
    out.csv_path = ctx.dir / ("repeat-" + std::to_string(ctx.repeat) + ".csv");
    write_text_file(out.csv_path, csv.str());
    return out;
}

RepeatOutcome repeat_alpha_sweep(const RepeatContext& ctx) {
    const MlpModel teacher =
        fit(teacher_config_for(ctx), ctx.train_ds, ctx.test_ds).model;
    RepeatOutcome out;
    std::ostringstream csv;
    csv << "alpha,final_test_accuracy\n";
    for (double a : ctx.config.alphas) {
        TrainConfig sc = student_config_for(ctx);
        sc.alpha = a;
        const FitResult fr = fit(sc, ctx.train_ds, ctx.test_ds, &teacher);
        add_final_metrics(out.variants["alpha-" + fmt_short(a)], fr.report);
        csv << fmt_short(a) << ','
            << fmt(fr.report.final_test_accuracy) << '\n';
    }
    out.csv_path = ctx.dir / ("repeat-" + std::to_string(ctx.repeat) + ".csv");
    write_text_file(out.csv_path, csv.str());
    return out;
}

RepeatOutcome repeat_weight_variant(const RepeatContext& ctx) {
    const MlpModel teacher =
        fit(teacher_config_for(ctx), ctx.train_ds, ctx.test_ds).model;
    const LossMode modes[] = {LossMode::kd, LossMode::wsl,
                              LossMode::sigmoid_wsl};
    RepeatOutcome out;
    std::ostringstream csv;
    csv << "variant,final_test_accuracy\n";
    for (LossMode m : modes) {
        TrainConfig sc = student_config_for(ctx);
        sc.mode = m;
        const FitResult fr = fit(sc, ctx.train_ds, ctx.test_ds, &teacher);
        add_final_metrics(out.variants[to_string(m)], fr.report);
        csv << to_string(m) << ','
            << fmt(fr.report.final_test_accuracy) << '\n';
    }
    out.csv_path = ctx.dir / ("repeat-" + std::to_string(ctx.repeat) + ".csv");
    write_text_file(out.csv_path, csv.str());
    return out;
}

RepeatOutcome repeat_resemblance(const RepeatContext& ctx) {
    const FitResult tr =
        fit(teacher_config_for(ctx), ctx.train_ds, ctx.test_ds);
    const FitResult fr = fit(student_config_for(ctx), ctx.train_ds,
                             ctx.test_ds, &tr.model);
    const ResemblanceMatrix m =
        resemblance(fr.model, tr.model, ctx.train_ds,
                    Temperature(ctx.config.resemblance_tau));

    RepeatOutcome out;
    double max_col_sum = 0.0;
    std::size_t empty = 0;
    for (std::size_t j = 0; j < m.values.cols(); ++j) {
        if (m.class_counts[j] == 0) {
            ++empty;
            continue;
        }
        double sum = 0.0;
        for (std::size_t i = 0; i < m.values.rows(); ++i) sum += m.values(i, j);
        max_col_sum = std::max(max_col_sum, std::abs(sum));
    }
    auto& v = out.variants["resemblance"];
    v["max_abs_column_sum"] = max_col_sum;
    v["empty_classes"] = double(empty);
    v["student_final_test_accuracy"] = fr.report.final_test_accuracy;
    v["teacher_final_test_accuracy"] = tr.report.final_test_accuracy;

    std::ostringstream csv;
    write_resemblance_csv(m, csv);
    out.csv_path = ctx.dir / ("repeat-" + std::to_string(ctx.repeat) + ".csv");
    write_text_file(out.csv_path, csv.str());
    return out;
}

RepeatOutcome repeat_biasvar(const RepeatContext& ctx) {
    EnsembleConfig ec;
    ec.modes = ctx.config.biasvar_modes;
    ec.num_runs = ctx.config.num_runs;
    ec.num_teachers = ctx.config.num_teachers;
    ec.student = ctx.config.train;
    ec.teacher = ctx.config.teacher;
    ec.teacher.mode = LossMode::ce;
    ec.meta_seed = ctx.seed;
    ec.workers = 1;  // parallelism lives at the repeat level
    const EnsembleReport er = estimate(ec, ctx.train_ds, ctx.test_ds);

    RepeatOutcome out;
    std::ostringstream csv;
    csv << "mode,intrinsic_noise,bias,variance,mean_error,successful_runs,"
           "failed_runs\n";
    for (const ModeReport& mr : er.modes) {
        const SampleDecomposition& agg = mr.decomposition.aggregate;
        auto& v = out.variants[to_string(mr.mode)];
        v["intrinsic_noise"] = agg.intrinsic_noise;
        v["bias"] = agg.bias;
        v["variance"] = agg.variance;
        v["mean_error"] = agg.mean_error;
        v["successful_runs"] = double(mr.successful_runs);
        csv << to_string(mr.mode) << ',' << fmt(agg.intrinsic_noise) << ','
            << fmt(agg.bias) << ',' << fmt(agg.variance) << ','
            << fmt(agg.mean_error) << ',' << mr.successful_runs << ','
            << mr.failed_runs << '\n';
        write_run_dump((ctx.dir / ("runs-" +
                                   std::string(to_string(mr.mode)) +
                                   "-repeat-" + std::to_string(ctx.repeat) +
                                   ".bin"))
                           .string(),
                       mr.runs);
    }
    if (er.bias_gap_ce_vs_kd)
        out.variants["ce_vs_kd"]["bias_gap"] = *er.bias_gap_ce_vs_kd;
    out.csv_path = ctx.dir / ("repeat-" + std::to_string(ctx.repeat) + ".csv");
    write_text_file(out.csv_path, csv.str());
    return out;
}

RepeatOutcome run_repeat(const RepeatContext& ctx) {
    switch (ctx.config.kind) {
        case ExperimentKind::train: return repeat_train(ctx);
        case ExperimentKind::rs_count: return repeat_rs_count(ctx);
        case ExperimentKind::subsets: return repeat_subsets(ctx);
        case ExperimentKind::intermediate: return repeat_intermediate(ctx);
        case ExperimentKind::biasvar: return repeat_biasvar(ctx);
        case ExperimentKind::resemblance: return repeat_resemblance(ctx);
        case ExperimentKind::alpha_sweep: return repeat_alpha_sweep(ctx);
        case ExperimentKind::weight_variant:
            return repeat_weight_variant(ctx);
    }
    throw ArgumentError("invalid experiment kind tag");
}

ordered_json summary_stats(const std::vector<double>& vals) {
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= double(vals.size());
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    const double std_dev =
        vals.size() > 1 ? std::sqrt(var / double(vals.size() - 1)) : 0.0;
    ordered_json j;
    j["mean"] = mean;
    j["std"] = std_dev;
    j["per_seed"] = vals;
    return j;
}

// A directional claim over repeats: delta per seed, favorable when
// delta > 0 (strict) or delta >= 0.
ordered_json comparison_json(const std::string& claim,
                             const std::vector<double>& deltas, bool strict) {
    std::size_t favorable = 0;
    double mean = 0.0;
    for (double d : deltas) {
        if (strict ? d > 0.0 : d >= 0.0) ++favorable;
        mean += d;
    }
    mean /= double(deltas.size());
    ordered_json j;
    j["claim"] = claim;
    j["strict"] = strict;
    j["per_seed_delta"] = deltas;
    j["favorable_seeds"] = favorable;
    j["total_seeds"] = deltas.size();
    j["mean_delta"] = mean;
    return j;
}

}  // namespace

RunResult run(const ExperimentConfig& config) {
    LabeledDataset full = config.dataset.load();
    auto [train_ds, test_ds] =
        split(full, config.train_fraction, mix_stream(config.meta_seed, 0x5F));

    RunResult result;
    result.out_dir = std::filesystem::path(config.out_dir) /
                     (std::string(to_string(config.kind)) + "-" +
                      std::to_string(config.meta_seed));
    std::filesystem::create_directories(result.out_dir);

    std::vector<std::uint64_t> seeds(config.repeats);
    for (std::size_t r = 0; r < config.repeats; ++r)
        seeds[r] = mix_stream(config.meta_seed, 0xE0 + r);

    std::vector<std::optional<RepeatOutcome>> outcomes(config.repeats);
    std::vector<std::string> divergences(config.repeats);
    std::mutex fatal_mu;
    std::exception_ptr fatal;

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t r = next.fetch_add(1);
            if (r >= config.repeats) return;
            RepeatContext ctx{config,          train_ds, test_ds,
                              result.out_dir,  r,        seeds[r]};
            try {
                outcomes[r] = run_repeat(ctx);
            } catch (const DivergenceError& e) {
                divergences[r] = e.what();
            } catch (...) {
                std::lock_guard<std::mutex> lock(fatal_mu);
                if (!fatal) fatal = std::current_exception();
                return;
            }
        }
    };

    const std::size_t n_workers = std::min(config.workers, config.repeats);
    if (n_workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }
    if (fatal) std::rethrow_exception(fatal);

    std::vector<std::size_t> ok_repeats;
    for (std::size_t r = 0; r < config.repeats; ++r) {
        if (outcomes[r]) {
            ok_repeats.push_back(r);
            result.repeat_csvs.push_back(outcomes[r]->csv_path);
        } else {
            ++result.failed_repeats;
        }
    }
    if (ok_repeats.empty())
        throw DivergenceError("all " + std::to_string(config.repeats) +
                                  " repeats diverged",
                              0);

    // Collect variant -> metric -> per-seed values in repeat-index order.
    std::map<std::string, std::map<std::string, std::vector<double>>> table;
    for (std::size_t r : ok_repeats)
        for (const auto& [vname, metrics] : outcomes[r]->variants)
            for (const auto& [mname, value] : metrics)
                table[vname][mname].push_back(value);

    ordered_json agg;
    agg["kind"] = to_string(config.kind);
    agg["meta_seed"] = config.meta_seed;
    agg["repeats"] = config.repeats;
    agg["successful_repeats"] = ok_repeats.size();
    agg["failed_repeats"] = result.failed_repeats;
    {
        ordered_json fails = ordered_json::array();
        for (std::size_t r = 0; r < config.repeats; ++r)
            if (!outcomes[r])
                fails.push_back({{"repeat", r}, {"error", divergences[r]}});
        agg["failures"] = std::move(fails);
    }
    agg["repeat_indices"] = ok_repeats;
    {
        std::vector<std::uint64_t> ok_seeds;
        for (std::size_t r : ok_repeats) ok_seeds.push_back(seeds[r]);
        agg["repeat_seeds"] = ok_seeds;
    }
    agg["dataset"] = {{"train_size", train_ds.size()},
                      {"test_size", test_ds.size()},
                      {"num_classes", train_ds.num_classes},
                      {"dim", train_ds.dim()}};
    agg["train_config"] = train_config_json(config.train);
    if (config.has_teacher)
        agg["teacher_config"] = train_config_json(config.teacher);

    ordered_json variants;
    for (const auto& [vname, metrics] : table) {
        ordered_json vj;
        for (const auto& [mname, vals] : metrics)
            vj[mname] = summary_stats(vals);
        variants[vname] = std::move(vj);
    }
    agg["variants"] = std::move(variants);

    // Directional claims with per-seed sign counts.
    ordered_json comparisons = ordered_json::array();
    auto metric = [&](const std::string& v,
                      const std::string& m) -> const std::vector<double>* {
        auto vi = table.find(v);
        if (vi == table.end()) return nullptr;
        auto mi = vi->second.find(m);
        return mi == vi->second.end() ? nullptr : &mi->second;
    };
    auto deltas = [&](const std::vector<double>& a,
                      const std::vector<double>& b) {
        std::vector<double> d(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
        return d;
    };

    switch (config.kind) {
        case ExperimentKind::rs_count: {
            bool has_zero = false;
            for (double e : config.smoothing_values)
                if (e == 0.0) has_zero = true;
            if (!has_zero) break;
            for (double tau : config.taus) {
                const std::string base = "eps0-tau" + fmt_short(tau);
                for (double eps : config.smoothing_values) {
                    if (eps == 0.0) continue;
                    const std::string ls =
                        "eps" + fmt_short(eps) + "-tau" + fmt_short(tau);
                    const auto* rs_ls = metric(ls, "final_rs_count");
                    const auto* rs_0 = metric(base, "final_rs_count");
                    const auto* acc_ls = metric(ls, "final_test_accuracy");
                    const auto* acc_0 = metric(base, "final_test_accuracy");
                    if (!rs_ls || !rs_0) continue;
                    comparisons.push_back(comparison_json(
                        "final_rs_count[" + ls + "] > final_rs_count[" +
                            base + "]",
                        deltas(*rs_ls, *rs_0), true));
                    comparisons.push_back(comparison_json(
                        "final_test_accuracy[" + base +
                            "] >= final_test_accuracy[" + ls + "]",
                        deltas(*acc_0, *acc_ls), false));
                }
            }
            break;
        }
        case ExperimentKind::subsets: {
            struct Pair {
                const char* hi;
                const char* lo;
                bool strict;
            };
            const Pair pairs[] = {{"only_rs", "direct", true},
                                  {"standard_kd", "exclude_rs", true},
                                  {"wsl", "standard_kd", false}};
            for (const Pair& p : pairs) {
                const auto* hi = metric(p.hi, "final_test_accuracy");
                const auto* lo = metric(p.lo, "final_test_accuracy");
                if (!hi || !lo) continue;
                comparisons.push_back(comparison_json(
                    std::string("final_test_accuracy[") + p.hi + "] " +
                        (p.strict ? ">" : ">=") + " final_test_accuracy[" +
                        p.lo + "]",
                    deltas(*hi, *lo), p.strict));
            }
            break;
        }
        case ExperimentKind::biasvar: {
            const auto* vce = metric("ce", "variance");
            const auto* vkd = metric("kd", "variance");
            if (vce && vkd)
                comparisons.push_back(
                    comparison_json("variance[kd] <= variance[ce]",
                                    deltas(*vce, *vkd), false));
            const auto* gap = metric("ce_vs_kd", "bias_gap");
            if (gap)
                comparisons.push_back(
                    comparison_json("bias_gap_ce_vs_kd >= 0", *gap, false));
            break;
        }
        case ExperimentKind::weight_variant: {
            const auto* wsl = metric("wsl", "final_test_accuracy");
            const auto* sig = metric("sigmoid_wsl", "final_test_accuracy");
            if (wsl && sig)
                comparisons.push_back(comparison_json(
                    "final_test_accuracy[wsl] >= "
                    "final_test_accuracy[sigmoid_wsl]",
                    deltas(*wsl, *sig), false));
            break;
        }
        default:
            break;
    }
    agg["comparisons"] = std::move(comparisons);

    result.aggregate = result.out_dir / "aggregate.json";
    write_text_file(result.aggregate, agg.dump(2) + "\n");
    return result;
}

}  // namespace distill::xlab
