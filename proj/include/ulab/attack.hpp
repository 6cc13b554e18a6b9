#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ulab/dataset.hpp"
#include "ulab/model.hpp"

namespace ulab {

// 1-D binary classifier: a threshold plus a polarity. Stands in for the
// "binary classifier (e.g., SVM)" of the nearest-neighbor attack — on
// one-dimensional inputs a linear SVM is exactly a threshold, and an
// exhaustive balanced-accuracy search is deterministic and has no
// hyperparameters.
struct ThresholdClassifier {
  double threshold = 0.0;
  bool above_is_positive = true;
  double train_balanced_accuracy = 0.5;
  bool degenerate = false;  // every pooled training value was identical

  int predict(double v) const {
    return (above_is_positive ? v > threshold : v < threshold) ? 1 : 0;
  }
};

// Exhaustive fit over the midpoints of adjacent distinct pooled values and
// both polarities, maximizing balanced accuracy (mean of true-positive and
// true-negative rates). Ties break toward the lowest threshold, then toward
// above-polarity. All-identical input degenerates to balanced accuracy 0.5.
ThresholdClassifier fit_logit_classifier(const std::vector<double>& positives,
                                         const std::vector<double>& negatives);

// Model outputs in tabular form so attacks can also run on externally
// supplied logit dumps. Rows are samples; columns of `logits` are classes.
struct LogitTable {
  std::vector<std::int64_t> sample_ids;
  Eigen::VectorXi true_labels;
  Eigen::MatrixXd logits;

  int size() const { return static_cast<int>(logits.rows()); }
  int num_classes() const { return static_cast<int>(logits.cols()); }
};

// Runs the model over every test split of `split` in ascending class order;
// sample ids number the concatenated rows from zero.
LogitTable logit_table(const ClassifierModel& model, const SplitDataset& split);

// CSV with header sampleId,trueLabel,logit_0..logit_{K-1}; round-trips
// bit-exactly through shortest-representation formatting.
void write_logit_csv(const LogitTable& table, const std::filesystem::path& path);
LogitTable read_logit_csv(const std::filesystem::path& path);

// Outcome of the nearest-neighbor membership attack against one model.
struct AttackReport {
  std::map<int, double> per_class_mean_acc;  // mean calibration acc per retained class
  int nearest_neighbor = -1;                 // argmax class, ties toward lowest id
  double retrain_reference_acc = 0.0;        // mean acc of the neighbor on retrain models
  double target_acc = 0.0;                   // the target model's own neighbor acc
  double gap = 0.0;                          // reference minus target
  int n_retrain_models = 0;
  bool degenerate_classifier = false;  // some fitted classifier was degenerate
};

std::string attack_report_to_json(const AttackReport& report);

// Calibration phase: for every retained class and every retrain table, fit a
// threshold on that class's logit over its own test split (label 1) against a
// class-balanced seeded subsample of the other retained splits (label 0), and
// measure the fraction of forget-test samples the classifier claims. Returns
// the argmax class and the per-class means. Tables must cover the full test
// set (all classes, forget included).
std::pair<int, std::map<int, double>> nearest_neighbor_class(
    const std::vector<LogitTable>& retrain_tables, const SplitDataset& split, int f,
    std::uint64_t seed);

std::pair<int, std::map<int, double>> nearest_neighbor_class(
    const std::vector<ClassifierModel>& retrain_models, const SplitDataset& split, int f,
    std::uint64_t seed);

// Attack phase: fit the same style of classifier on the target's own logits
// for class `rn`, and return the fraction of forget-test samples classified
// as class-rn members.
double miann_score(const LogitTable& target_table, int rn, const SplitDataset& split, int f,
                   std::uint64_t seed);

double miann_score(const ClassifierModel& target, int rn, const SplitDataset& split, int f,
                   std::uint64_t seed);

// Calibration + attack + gap in one report.
AttackReport run_miann(const ClassifierModel& target,
                       const std::vector<ClassifierModel>& retrain_models,
                       const SplitDataset& split, int f, std::uint64_t seed);

// Confidence-threshold membership score in [0, 100]: fit member (retained
// train) vs non-member (retained test) on max-softmax confidence, then score
// 100 times the fraction of forget-class training samples classified as
// non-members. 100 means the forget set looks fully like unseen data (the
// retrain ideal); 0 means it still looks memorized.
double basic_mia_score(const ClassifierModel& target, const SplitDataset& split, int f);

// Shadow models for the likelihood-ratio attack, one arm per hypothesis.
struct ShadowSet {
  std::vector<ClassifierModel> unlearned_models;
  std::vector<ClassifierModel> retrain_models;
};

// Simplified per-sample likelihood-ratio attack. For each forget-test sample
// the scalar statistic (forget logit minus best retained logit) is modeled as
// a Gaussian per arm (variance floored at 1e-6) over the shadow models,
// excluding the target itself from its own arm (leave-target-out by parameter
// identity; the target must belong to exactly one arm). Returns the fraction
// of samples whose likelihood ratio identifies the target's true arm —
// 0.5 means the unlearned arm is indistinguishable from retraining.
double ulira_simplified(const ShadowSet& shadows, const ClassifierModel& target,
                        const SplitDataset& split, int f);

}  // namespace ulab
