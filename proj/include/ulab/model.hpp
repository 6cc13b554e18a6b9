#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "ulab/prob.hpp"

namespace ulab {

enum class Activation { kRelu, kIdentity };

struct Layer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd bias;     // out
};

// Feedforward softmax classifier. Hidden layers use `activation`, the final
// layer is linear and produces one logit per class.
struct ClassifierModel {
  std::vector<Layer> layers;
  Activation activation = Activation::kRelu;
  int num_classes = 0;
  std::uint64_t seed = 0;

  int input_dim() const {
    return layers.empty() ? 0 : static_cast<int>(layers.front().weights.cols());
  }
  int layer_count() const { return static_cast<int>(layers.size()); }
  std::size_t parameter_count() const;
};

struct TrainConfig {
  double learning_rate = 0.05;
  int epochs = 1;
  int batch_size = 32;
  std::uint64_t seed = 0;
  bool shuffle = true;
};

// Parameter-shaped gradients (same layout as ClassifierModel::layers).
struct Gradients {
  std::vector<Layer> layers;
};

struct TrainResult {
  ClassifierModel model;
  std::vector<double> epoch_losses;  // mean batch loss per epoch
};

// Deterministic init: weights uniform in [-a, a] with a = sqrt(6/(fan_in+fan_out)),
// biases zero, drawn from a single mt19937_64 stream seeded with `seed`.
// Identical (arch, seed) give bit-identical parameters.
ClassifierModel init_model(const std::vector<int>& arch, std::uint64_t seed,
                           Activation activation = Activation::kRelu);

Eigen::VectorXd forward(const ClassifierModel& m, const Eigen::VectorXd& x);

// Rows of x are samples; returns one row of logits per sample.
Eigen::MatrixXd forward_batch(const ClassifierModel& m, const Eigen::MatrixXd& x);

// Overflow-safe (max-subtracted) softmax; invariant under uniform logit shifts.
ProbVector softmax(const Eigen::VectorXd& logits);
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);

// Mean over the batch of -sum_y target(y) * log p(y|x), with p clamped to
// [1e-12, 1] before the log. Targets are row distributions (may place mass on
// several classes); gradients are exact for the unclamped loss. When
// `sample_weights` is given, the per-sample losses are combined as
// sum_i w_i * CE_i instead of the plain mean (weights need not normalize).
std::pair<double, Gradients> loss_and_grad(const ClassifierModel& m,
                                           const Eigen::MatrixXd& batch,
                                           const Eigen::MatrixXd& targets,
                                           const Eigen::VectorXd* sample_weights = nullptr);

// Plain mini-batch SGD. Deterministic given cfg.seed; per-epoch shuffles use
// seed streams mix(cfg.seed, epoch). Throws DivergenceError on non-finite loss.
TrainResult train_epochs(ClassifierModel model, const Eigen::MatrixXd& data,
                         const Eigen::MatrixXd& targets, const TrainConfig& cfg);

// Fraction of argmax-correct predictions; argmax ties resolve to the lowest
// class index.
double eval_accuracy(const ClassifierModel& m, const Eigen::MatrixXd& features,
                     const Eigen::VectorXi& labels);

int argmax_lowest(const Eigen::VectorXd& v);

Eigen::MatrixXd to_target_matrix(const std::vector<ProbVector>& targets);

// Flat binary model format: magic "ULAB0001", little-endian u32 layer count,
// then per layer rows/cols as u32 followed by row-major f64 weights and f64
// biases. Round trips bit-exactly.
void save_model(const ClassifierModel& m, const std::filesystem::path& path);
ClassifierModel load_model(const std::filesystem::path& path,
                           Activation activation = Activation::kRelu);

// Parameter-wise equality (shapes and bytes).
bool models_equal(const ClassifierModel& a, const ClassifierModel& b);

namespace detail {
// Shared SGD loop. `layer_mask`, when present, freezes layers whose entry is
// false. `ascend` flips the update direction (gradient ascent) and
// `clip_norm` > 0 rescales the global gradient norm down to that bound.
// `sample_weights` switches the loss to a weighted sum per batch; epoch losses
// then report the sum over batches (the full weighted objective) instead of
// the mean batch loss.
std::vector<double> run_sgd(ClassifierModel& model, const Eigen::MatrixXd& data,
                            const Eigen::MatrixXd& targets, double learning_rate,
                            int epochs, int batch_size, std::uint64_t seed, bool shuffle,
                            const std::vector<char>* layer_mask = nullptr,
                            bool ascend = false, double clip_norm = -1.0,
                            const Eigen::VectorXd* sample_weights = nullptr);
}  // namespace detail

}  // namespace ulab
