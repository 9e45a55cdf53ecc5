#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "distill/biasvar.hpp"
#include "distill/dataset.hpp"
#include "distill/trainer.hpp"

namespace distill::xlab {

enum class ExperimentKind : std::uint8_t {
    train,
    rs_count,
    subsets,
    intermediate,
    biasvar,
    resemblance,
    alpha_sweep,
    weight_variant,
};

const char* to_string(ExperimentKind k);
ExperimentKind kind_from_string(const std::string& s);

// Where the samples come from: a blob spec, an IDX pair, or a CSV file.
struct DatasetSource {
    enum class Type { blobs, idx, csv } type = Type::blobs;
    BlobSpec blobs;
    std::string idx_images;
    std::string idx_labels;
    std::string csv_path;

    LabeledDataset load() const;
};

// Parsed experiment configuration. JSON with a top-level `kind`
// discriminator; unknown fields anywhere are hard errors.
struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::train;
    std::uint64_t meta_seed = 1;
    std::size_t repeats = 1;
    std::size_t workers = 1;
    double train_fraction = 0.5;
    std::string out_dir = "out";
    DatasetSource dataset;

    TrainConfig train;    // student / distillation settings
    TrainConfig teacher;  // teacher settings (mode forced to ce)
    bool has_teacher = false;

    // kind-specific knobs
    std::vector<double> taus = {2.0, 4.0};                    // rs-count
    std::vector<double> smoothing_values = {0.0, 0.1};        // rs-count
    std::vector<double> alphas = {1.0, 2.0, 3.0, 4.0};        // sweeps
    std::vector<double> probs = {0.0, 0.25, 0.5, 0.75, 1.0};  // intermediate
    std::size_t num_runs = 8;                                 // biasvar M
    std::size_t num_teachers = 4;                             // biasvar T
    std::vector<LossMode> biasvar_modes = {LossMode::ce, LossMode::kd};
    double resemblance_tau = 4.0;
};

// Strict parser: every unknown key is reported with its JSON path.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

// Per-class average of the variance-reduction gradient vector. Entry
// (i, j) is d(L_kd - L_ce)/dz_i averaged over samples of class j; every
// column sums to zero. Classes with no samples yield NaN columns.
struct ResemblanceMatrix {
    Matrix values;  // K x K
    double tau = 4.0;
    std::vector<std::size_t> class_counts;

    bool column_sums_are_zero(double tolerance = 1e-8) const;
};

ResemblanceMatrix resemblance(const MlpModel& student,
                              const MlpModel& teacher,
                              const LabeledDataset& ds, Temperature tau);

void write_resemblance_csv(const ResemblanceMatrix& m, std::ostream& os);

struct RunResult {
    std::filesystem::path out_dir;      // <out>/<kind>-<meta_seed>
    std::filesystem::path aggregate;    // aggregate.json
    std::vector<std::filesystem::path> repeat_csvs;
    std::size_t failed_repeats = 0;
};

// Executes the experiment: R seeded repeats (parallel up to `workers`),
// one CSV per repeat plus aggregate.json with mean / std / per-seed
// values. Divergent repeats are recorded; the aggregate is still written
// if at least one repeat succeeded.
RunResult run(const ExperimentConfig& config);

}  // namespace distill::xlab
