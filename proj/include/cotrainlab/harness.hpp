#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cotrainlab/data.hpp"
#include "cotrainlab/engine.hpp"
#include "cotrainlab/ensembles.hpp"
#include "cotrainlab/imagefx.hpp"
#include "cotrainlab/learners.hpp"
#include "cotrainlab/priors.hpp"

// Experiment orchestration: JSON config -> datasets -> pre-training ->
// self/co-training -> distillation / ensembles -> metrics.csv.
namespace cotrainlab::harness {

enum class Mode { Pretrain, SelfTrain, CoTrain, Ensemble, Distill };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& name);

struct MemberConfig {
    priors::Prior prior = priors::Prior::Standard;
    learners::LearnerKind learner;
    learners::TrainConfig train;
};

enum class DatasetKind { SynthST, Skewed, Raw };

struct DatasetConfig {
    DatasetKind kind = DatasetKind::SynthST;

    // synthst: the training pool (split into labeled / validation /
    // unlabeled) and an independent test set. The labeled split can be
    // re-rendered with its own texture/tint rates to plant a spurious cue.
    data::SynthSpec synth;
    int test_per_class = 250;
    std::optional<double> test_texture_rho;
    std::optional<double> labeled_texture_rho;
    std::optional<double> labeled_tint_rho;

    // skewed: two classes (outline motifs) x two attributes (textures),
    // cell counts from the CelebA-style specs multiplied by `scale`.
    std::string skew_variant = "default";  // default | fullskew
    double scale = 1.0;

    // raw: directories in the load_raw format.
    std::filesystem::path train_dir;
    std::filesystem::path test_dir;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    Mode mode = Mode::Pretrain;
    DatasetConfig dataset;
    data::SplitSpec split;
    imagefx::EdgeParams edges;
    std::vector<MemberConfig> members;
    engine::EraSchedule schedule;
    bool disjoint = false;
    std::vector<ensembles::Method> ensemble_methods{ensembles::Method::TakeMax, ensembles::Method::Average,
                                                    ensembles::Method::Rank};
    learners::TrainConfig stacked_train;
    std::optional<MemberConfig> distill;     // standard model trained on X + final pool
    std::filesystem::path distill_pool;      // mode = distill: pool CSV to train on
    int bootstrap_resamples = 5000;
    double bootstrap_level = 0.95;
    std::filesystem::path output = "run";

    void validate() const;
};

// Parses and validates a config document. Unknown keys, wrong types and
// out-of-range values raise ConfigError naming the JSON pointer.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& cfg);

// COTRAINLAB_SEED, when set, replaces cfg.seed.
void apply_env_overrides(ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Datasets

struct PreparedData {
    data::Splits splits;
    data::Dataset test;
};

PreparedData prepare_data(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Metrics

inline constexpr const char* kMetricsHeader = "era,model_id,prior,split,accuracy,ci_lo,ci_hi,phi_pair,phi_value";

// One metrics.csv row. Model rows leave the phi columns empty; pair rows
// leave accuracy and CI empty and name the pair as "a-b".
struct MetricRow {
    int era = 0;
    std::string model_id;
    std::string prior;
    std::string split;
    std::optional<double> accuracy;
    std::optional<double> ci_lo;
    std::optional<double> ci_hi;
    std::string phi_pair;
    std::optional<double> phi_value;
};

std::string format_row(const MetricRow& row);
std::string format_metrics(const std::vector<MetricRow>& rows);
std::vector<MetricRow> parse_metrics(const std::string& csv);

// ---------------------------------------------------------------------------
// Running

struct RunOutputs {
    std::vector<MetricRow> rows;
    std::vector<learners::ModelParams> models;  // final member models
    std::optional<learners::ModelParams> distilled;
};

// Runs the experiment and writes manifest.json, metrics.csv, pool_era_<t>.csv
// and checkpoints into `out_dir` (created if needed).
RunOutputs run(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, int threads = 1);

// Pool CSV: header "example_id,label,source,confidence".
void save_pool(const data::PseudoLabelPool& pool, const std::filesystem::path& path);
data::PseudoLabelPool load_pool(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Grid search

struct Grid {
    std::vector<double> lr;
    std::vector<int> lr_drop_every;     // K
    std::vector<double> lr_drop_factor; // gamma
    std::size_t cells() const noexcept { return lr.size() * lr_drop_every.size() * lr_drop_factor.size(); }
};

Grid parse_grid(const nlohmann::json& doc);
Grid load_grid(const std::filesystem::path& path);

struct GridCell {
    double lr = 0;
    int lr_drop_every = 0;
    double lr_drop_factor = 1;
    double validation_accuracy = 0;
};

struct GridResult {
    std::vector<std::vector<GridCell>> table;  // per member, every cell
    std::vector<GridCell> best;                // per member
};

// Highest validation accuracy wins; ties go to the smaller lr, then the
// smaller K, then the larger gamma.
bool better_cell(const GridCell& a, const GridCell& b);

GridResult grid_search(const ExperimentConfig& cfg, const Grid& grid, int threads = 1);
void write_grid_result(const GridResult& result, const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Checkpoints: "CTLB", u16 version, u8 kind, u8 n_shapes, n_shapes x u32,
// f32 weights; little-endian. Shapes: height, width, channels, classes,
// hidden units, patch side, stride, inner kind, seed low word, seed high word.

inline constexpr std::uint16_t kCheckpointVersion = 1;

void save_checkpoint(const learners::ModelParams& params, const std::filesystem::path& path);
learners::ModelParams load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// CLI support

// 0 success, 2 config error, 3 data-format error, 4 numeric failure, 1 other.
int exit_code_for(const std::exception& e) noexcept;

// Final-era rows of a run directory, rendered as CSV or a JSON array.
std::string report(const std::filesystem::path& run_dir, const std::string& format);

}  // namespace cotrainlab::harness
