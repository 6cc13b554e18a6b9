#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ulab/attack.hpp"
#include "ulab/dataset.hpp"
#include "ulab/model.hpp"
#include "ulab/unlearn.hpp"

namespace ulab {

enum class DatasetKind { kToy3, kGaussianSpecFile, kMnistIdx };

DatasetKind dataset_kind_from_string(const std::string& name);
std::string dataset_kind_name(DatasetKind kind);

struct MnistOptions {
  std::filesystem::path images_train;
  std::filesystem::path labels_train;
  std::filesystem::path images_test;
  std::filesystem::path labels_test;
  int train_per_class = 0;  // 0 keeps every sample
  int test_per_class = 0;
};

// Where the TRW similarity scores come from. kAuto picks centroid distances
// for 2-D data (the toy experiments) and classifier-weight cosines otherwise.
struct ScoreOptions {
  enum class Source { kAuto, kWeights, kCentroids };
  Source source = Source::kAuto;
  int d_prime = -1;
  double temperature = 0.01;
};

struct ToyOptions {
  int grid_resolution = 61;
  double margin = 0.5;       // bounding box = data extent grown by this much
  int per_class_train = 150; // base count for the toy presets
};

struct ExperimentConfig {
  DatasetKind dataset = DatasetKind::kToy3;
  std::vector<int> architecture;
  std::set<int> forget_classes;
  std::vector<UnlearnConfig> methods;
  int n_retrain_models = 1;
  double beta = 10.0;
  std::vector<std::uint64_t> seeds;
  std::filesystem::path output_dir;

  std::uint64_t data_seed = 100;      // dataset generation stream
  TrainConfig train;                  // original/retrain training loop (seed ignored)
  std::filesystem::path gaussian_spec_file;
  MnistOptions mnist;
  ScoreOptions score;
  ToyOptions toy;
  bool record_timings = false;        // keep false for byte-identical reruns
  bool compute_ulira = false;
};

// Sensible toy-scale defaults: {2,24,3} network, 100-epoch original training
// at lr 0.3, 40-epoch unlearning at lr 0.3, beta 10, three retrain oracles.
ExperimentConfig default_toy_config();

// Strict parser: unknown keys anywhere are ConfigErrors, as are missing
// required fields or values that break the config invariants. The JSON field
// names mirror the struct fields in camelCase.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
void validate_config(const ExperimentConfig& cfg);

struct MetricsRow {
  std::string method;
  std::uint64_t seed = 0;
  double acc_r = std::numeric_limits<double>::quiet_NaN();
  double acc_f = std::numeric_limits<double>::quiet_NaN();
  double mia = std::numeric_limits<double>::quiet_NaN();
  double mia_nn = std::numeric_limits<double>::quiet_NaN();
  double mia_nn_gap = std::numeric_limits<double>::quiet_NaN();
  double ulira = std::numeric_limits<double>::quiet_NaN();  // NaN = not computed
  double runtime_s = 0.0;
  std::string error;  // nonempty marks a failed cell; numeric fields stay NaN
};

inline constexpr const char* kMetricsCsvHeader =
    "method,seed,acc_r,acc_f,mia,mia_nn,mia_nn_gap,ulira,runtime_s";

// Fixed-header CSV with shortest-round-trip doubles; NaN serializes as an
// empty field and parses back to NaN, so write/read round-trips the numeric
// table exactly. The error column lives only in the JSON mirror.
void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);
void write_metrics_json(const std::vector<MetricsRow>& rows, const std::filesystem::path& path);

struct LoadedData {
  LabeledDataset train;
  LabeledDataset test;
};

LoadedData load_experiment_data(const ExperimentConfig& cfg);

// Everything the per-cell workers share: data, the original model, and the
// retrain reference bank used by the attacks.
struct ExperimentContext {
  ExperimentConfig config;
  LabeledDataset train;
  LabeledDataset test;
  SplitDataset split;
  LabeledDataset retained_test;
  LabeledDataset forget_test;
  ClassifierModel original;
  std::vector<ClassifierModel> retrain_bank;
  // Attack calibration, one entry per forget class (ascending class id).
  std::vector<int> nn_class;
  std::vector<double> nn_reference;
  std::uint64_t attack_seed = 0;
};

ExperimentContext build_context(const ExperimentConfig& cfg);

// Similarity profile for one forget class, honoring ScoreOptions.
SimilarityProfile make_profile(const ExperimentContext& ctx, int forget_class);

// One (method, seed) cell: dispatches to the unlearning method, evaluates
// accuracy and attack metrics, and never throws — failures come back as an
// error row.
MetricsRow run_cell(const ExperimentContext& ctx, const UnlearnConfig& method_cfg,
                    std::uint64_t seed, UnlearnResult* result_out = nullptr);

struct ExperimentResult {
  std::vector<MetricsRow> rows;
  int total_cells = 0;
  int failed_cells = 0;
};

// Full sweep: every method in cfg.methods crossed with every seed. Cells run
// in parallel across `jobs` threads; the table is assembled in deterministic
// (method, seed) order and written atomically to outputDir/results.csv and
// results.json, with every trained model under outputDir/models/. Identical
// configs produce byte-identical output directories.
ExperimentResult run_experiment(const ExperimentConfig& cfg, int jobs = 1);

// Rows/columns in ascending class-id order; entry (i, j) counts true-class-i
// test samples predicted as class j.
Eigen::MatrixXi confusion_matrix(const ClassifierModel& model,
                                 const std::map<int, LabeledDataset>& test_by_class);

struct ReassignmentEntry {
  int class_id = -1;
  long count = 0;
  double fraction = 0.0;
};

// Predicted-class histogram over the forget-class test set, descending by
// fraction with ties broken by ascending class id; zero-count classes are
// omitted and the fractions sum to 1.
std::vector<ReassignmentEntry> reassignment_report(const ClassifierModel& model,
                                                   const LabeledDataset& forget_test);

struct AblationRow {
  double beta = 0.0;
  MetricsRow row;
};

// TRW only, one run per (beta, seed) on a shared context; writes
// outputDir/ablation.csv (beta column prepended to the standard header) and
// ablation.json.
std::vector<AblationRow> ablate_beta(const ExperimentConfig& cfg, const std::vector<double>& betas,
                                     int jobs = 1);

struct MulticlassResult {
  std::vector<MetricsRow> rows;
  // acc per forget class, averaged over seeds, ascending class id.
  std::vector<std::pair<int, double>> per_class_acc_f;
};

// TRW with one similarity profile per forget class and the forget losses
// summed. With a single forget class this reduces to the standard TRW cell.
MulticlassResult run_multiclass(const ExperimentConfig& cfg, int jobs = 1);

struct ToyBoundarySeedSummary {
  std::uint64_t seed = 0;
  double original_agreement = 0.0;
  double beta0_agreement = 0.0;
  double tilted_agreement = 0.0;
};

struct ToyBoundarySummary {
  std::vector<ToyBoundarySeedSummary> per_seed;
  double mean_original = 0.0;
  double mean_beta0 = 0.0;
  double mean_tilted = 0.0;
  int grid_resolution = 0;
  double x_min = 0.0, x_max = 0.0, y_min = 0.0, y_max = 0.0;
};

// Decision-region grids for the four models of the toy experiment. For each
// seed, outputDir/seed_<s>/ gets original.csv, retrain.csv, beta0.csv and
// tilted.csv (header x,y,predictedClass, exactly resolution^2 rows) plus
// agreement.json; outputDir/boundary_summary.json aggregates the agreement
// fractions against the retrain model. Requires 2-D features and exactly one
// forget class.
ToyBoundarySummary emit_toy_boundary(const ExperimentConfig& cfg, int jobs = 1);

// Atomic text-file write (temp + rename in the target directory).
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace ulab
