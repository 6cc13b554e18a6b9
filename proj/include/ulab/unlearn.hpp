#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ulab/dataset.hpp"
#include "ulab/model.hpp"
#include "ulab/trw.hpp"

namespace ulab {

enum class Method { kOriginal, kRetrain, kFt, kRl, kGa, kTrw, kTrw2r };

Method method_from_string(const std::string& name);
std::string method_name(Method m);

struct UnlearnConfig {
  Method method = Method::kTrw;
  int epochs = 5;
  double learning_rate = 0.05;
  double beta = 10.0;  // trw flavours only
  std::uint64_t seed = 0;
  int layer_subset_size = 2;  // trw2r only
  int batch_size = 32;
};

struct UnlearnResult {
  ClassifierModel model;
  double wall_clock_seconds = 0.0;
  std::vector<double> epoch_losses;
  Method method = Method::kOriginal;
};

// Gold standard: a fresh model trained on retained data only. The narrow
// signature (architecture + retain set) makes it impossible for this path to
// observe forget samples. Init and shuffle streams both derive from
// train_cfg.seed, so different seeds give genuinely different models.
ClassifierModel retrain_oracle(const std::vector<int>& arch, const LabeledDataset& retain,
                               const TrainConfig& train_cfg,
                               Activation activation = Activation::kRelu);

// Fine-tune on retained data with one-hot targets.
UnlearnResult unlearn_ft(const ClassifierModel& model, const SplitDataset& split,
                         const UnlearnConfig& cfg);

// Relabel forget samples once (seeded, uniform over retained classes, never
// the forgotten one) and fine-tune on the joined set.
UnlearnResult unlearn_rl(const ClassifierModel& model, const SplitDataset& split,
                         const UnlearnConfig& cfg);

// Gradient ascent on the forget samples with global-norm clipping at 1.0.
UnlearnResult unlearn_ga(const ClassifierModel& model, const SplitDataset& split,
                         const UnlearnConfig& cfg);

// Tilted-reweighting fine-tune: one-hot supervision on retained samples plus
// cross-entropy toward tilted targets on forget samples, both terms weighted
// equally. Targets are built once from `model` (the original model) and stay
// frozen for every epoch. `scores` must come from that same original model.
UnlearnResult unlearn_trw(const ClassifierModel& model, const SplitDataset& split,
                          const UnlearnConfig& cfg, const SimilarityProfile& scores);

// Multi-class variant: one profile per forget class, forget losses summed.
UnlearnResult unlearn_trw_multi(const ClassifierModel& model, const SplitDataset& split,
                                const UnlearnConfig& cfg,
                                const std::vector<SimilarityProfile>& profiles);

// Same objective as unlearn_trw but updates only cfg.layer_subset_size
// seeded-random layers; the subset is drawn once per run from a stream
// separate from the shuffle stream, so the full subset reproduces the
// unlearn_trw trajectory exactly.
UnlearnResult unlearn_trw2r(const ClassifierModel& model, const SplitDataset& split,
                            const UnlearnConfig& cfg, const SimilarityProfile& scores);

double eval_accuracy(const ClassifierModel& m, const LabeledDataset& data);

// Model binary next to a JSON sidecar (method, config, epochLosses,
// wallClockSeconds) at stem.model / stem.json.
void save_unlearn_result(const UnlearnResult& result, const UnlearnConfig& cfg,
                         const std::filesystem::path& stem);

}  // namespace ulab
