#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace ulab {

// Immutable after construction; rows are samples.
struct LabeledDataset {
  Eigen::MatrixXd features;   // N x d
  Eigen::VectorXi labels;     // N entries in [0, K)
  std::vector<int> class_ids; // label vocabulary, ascending
  std::string name;

  int size() const { return static_cast<int>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }
  int num_classes() const { return static_cast<int>(class_ids.size()); }
};

struct SplitDataset {
  LabeledDataset forget_train;
  LabeledDataset retain_train;
  std::map<int, LabeledDataset> test_by_class;
  std::set<int> forget_classes;

  int num_classes() const { return static_cast<int>(test_by_class.size()); }
  std::vector<int> retained_classes() const;
  // All retained-class test samples except class `except_class` (pass -1 for none),
  // concatenated in ascending class order.
  LabeledDataset retained_test_except(int except_class) const;
};

struct GaussianClassSpec {
  Eigen::VectorXd mean;
  Eigen::VectorXd cov_diag;  // diagonal covariance, entries > 0
  int count = 0;
};

struct GaussianMixtureSpec {
  std::vector<GaussianClassSpec> per_class;  // class id = position
  std::uint64_t seed = 0;
};

// Samples exactly count_c points per class from N(mean_c, diag cov_c), one RNG
// stream consumed in class-major, sample-major, dimension-minor order.
LabeledDataset gen_gaussian_mixture(const GaussianMixtureSpec& spec);

// IDX image/label pair (big-endian headers, u8 payload). Pixels land in [0,1].
// Paths ending in .gz are decompressed transparently. Malformed headers,
// truncated or oversized payloads, and count mismatches raise FormatError with
// the offending byte offset.
LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path);

// Inverse of load_idx for test fixtures and synthetic corpora; values are
// clamped to [0,1] and quantized to u8.
void write_idx(const Eigen::MatrixXd& features, const Eigen::VectorXi& labels, int rows, int cols,
               const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

// Order-preserving partition of the training set plus a per-class view of the
// test set. Every class must appear in the test set; forgetting everything or
// a class absent from training is a usage error.
SplitDataset split_forget(const LabeledDataset& train, const LabeledDataset& test,
                          const std::set<int>& forget_classes);

Eigen::MatrixXd one_hot_targets(const Eigen::VectorXi& labels, int num_classes);

// First `per_class` samples of each class, original order preserved.
LabeledDataset subsample_per_class(const LabeledDataset& data, int per_class);

LabeledDataset filter_class(const LabeledDataset& data, int class_id);

LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b);

// Three-Gaussian 2-D geometry: forget class 1 sits between its neighbours,
// clearly closer to class 0. `per_class_train` scales the train split; test
// counts are fixed at 600 per class.
GaussianMixtureSpec toy3_train_spec(std::uint64_t seed, int per_class_train = 150);
GaussianMixtureSpec toy3_test_spec(std::uint64_t seed);

// Five-class 2-D layout for multi-class forgetting runs.
GaussianMixtureSpec toy5_train_spec(std::uint64_t seed, int per_class_train = 120);
GaussianMixtureSpec toy5_test_spec(std::uint64_t seed);

}  // namespace ulab
