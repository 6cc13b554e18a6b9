#include "ulab/unlearn.hpp"

#include <chrono>
#include <fstream>

#include "json.hpp"
#include "ulab/errors.hpp"
#include "ulab/rng.hpp"

namespace ulab {

namespace {

// Substream tags so the relabel draw, the subset draw, and the shuffle stream
// never collide.
constexpr std::uint64_t kRetrainInitTag = 0x7265747261696e00ull;
constexpr std::uint64_t kRlTag = 0x726c6162656c0000ull;
constexpr std::uint64_t kSubsetTag = 0x7375627365740000ull;

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

int global_class_count(const SplitDataset& split) {
  return static_cast<int>(split.test_by_class.size());
}

// Retained one-hot rows stacked over forget rows with the tilted targets;
// weights make the two loss terms count equally regardless of set sizes.
struct TrwProblem {
  Eigen::MatrixXd data;
  Eigen::MatrixXd targets;
  Eigen::VectorXd weights;
};

TrwProblem build_trw_problem(const ClassifierModel& original, const SplitDataset& split,
                             const UnlearnConfig& cfg,
                             const std::vector<SimilarityProfile>& profiles) {
  if (profiles.empty()) throw UsageError("trw: no similarity profiles");
  const int k = global_class_count(split);
  const int nr = split.retain_train.size();

  std::vector<Eigen::MatrixXd> forget_feats;
  std::vector<Eigen::MatrixXd> forget_targets;
  int nf_total = 0;
  for (const auto& profile : profiles) {
    if (!split.forget_classes.count(profile.forget_class)) {
      throw UsageError("trw: profile for class " + std::to_string(profile.forget_class) +
                       " which is not being forgotten");
    }
    LabeledDataset part = filter_class(split.forget_train, profile.forget_class);
    TiltConfig tilt_cfg;
    tilt_cfg.beta = cfg.beta;
    auto targets = build_forget_targets(original, part.features, profile, tilt_cfg);
    forget_feats.push_back(part.features);
    forget_targets.push_back(to_target_matrix(targets));
    nf_total += part.size();
  }

  TrwProblem prob;
  prob.data.resize(nr + nf_total, split.retain_train.dim());
  prob.targets.resize(nr + nf_total, k);
  prob.weights.resize(nr + nf_total);
  prob.data.topRows(nr) = split.retain_train.features;
  prob.targets.topRows(nr) = one_hot_targets(split.retain_train.labels, k);
  prob.weights.head(nr).setConstant(1.0 / nr);
  int row = nr;
  for (std::size_t i = 0; i < forget_feats.size(); ++i) {
    const int nf = static_cast<int>(forget_feats[i].rows());
    prob.data.middleRows(row, nf) = forget_feats[i];
    prob.targets.middleRows(row, nf) = forget_targets[i];
    // each forget class contributes a full term of its own
    prob.weights.segment(row, nf).setConstant(1.0 / nf);
    row += nf;
  }
  return prob;
}

UnlearnResult run_trw_impl(const ClassifierModel& model, const SplitDataset& split,
                           const UnlearnConfig& cfg,
                           const std::vector<SimilarityProfile>& profiles,
                           const std::vector<char>* layer_mask, Method tag) {
  Stopwatch clock;
  TrwProblem prob = build_trw_problem(model, split, cfg, profiles);
  UnlearnResult result;
  result.model = model;
  result.epoch_losses =
      detail::run_sgd(result.model, prob.data, prob.targets, cfg.learning_rate, cfg.epochs,
                      cfg.batch_size, cfg.seed, true, layer_mask, false, -1.0, &prob.weights);
  result.method = tag;
  result.wall_clock_seconds = clock.seconds();
  return result;
}

}  // namespace

Method method_from_string(const std::string& name) {
  if (name == "original") return Method::kOriginal;
  if (name == "retrain") return Method::kRetrain;
  if (name == "ft") return Method::kFt;
  if (name == "rl") return Method::kRl;
  if (name == "ga") return Method::kGa;
  if (name == "trw") return Method::kTrw;
  if (name == "trw2r") return Method::kTrw2r;
  throw ConfigError("unknown method '" + name + "'");
}

std::string method_name(Method m) {
  switch (m) {
    case Method::kOriginal: return "original";
    case Method::kRetrain: return "retrain";
    case Method::kFt: return "ft";
    case Method::kRl: return "rl";
    case Method::kGa: return "ga";
    case Method::kTrw: return "trw";
    case Method::kTrw2r: return "trw2r";
  }
  throw UsageError("unknown method enum value");
}

ClassifierModel retrain_oracle(const std::vector<int>& arch, const LabeledDataset& retain,
                               const TrainConfig& train_cfg, Activation activation) {
  if (retain.size() == 0) throw UsageError("retrain_oracle: empty retain set");
  ClassifierModel model = init_model(arch, rng::mix(train_cfg.seed, kRetrainInitTag), activation);
  const auto targets = one_hot_targets(retain.labels, arch.back());
  return train_epochs(std::move(model), retain.features, targets, train_cfg).model;
}

UnlearnResult unlearn_ft(const ClassifierModel& model, const SplitDataset& split,
                         const UnlearnConfig& cfg) {
  Stopwatch clock;
  UnlearnResult result;
  result.model = model;
  const auto targets = one_hot_targets(split.retain_train.labels, global_class_count(split));
  result.epoch_losses =
      detail::run_sgd(result.model, split.retain_train.features, targets, cfg.learning_rate,
                      cfg.epochs, cfg.batch_size, cfg.seed, true);
  result.method = Method::kFt;
  result.wall_clock_seconds = clock.seconds();
  return result;
}

UnlearnResult unlearn_rl(const ClassifierModel& model, const SplitDataset& split,
                         const UnlearnConfig& cfg) {
  Stopwatch clock;
  const auto retained = split.retained_classes();
  rng::Prng prng(rng::mix(cfg.seed, kRlTag));
  LabeledDataset relabeled = split.forget_train;
  for (int i = 0; i < relabeled.size(); ++i) {
    relabeled.labels(i) =
        retained[static_cast<std::size_t>(prng.below(retained.size()))];
  }
  const auto joined = concat(split.retain_train, relabeled);
  const auto targets = one_hot_targets(joined.labels, global_class_count(split));

  UnlearnResult result;
  result.model = model;
  result.epoch_losses =
      detail::run_sgd(result.model, joined.features, targets, cfg.learning_rate, cfg.epochs,
                      cfg.batch_size, cfg.seed, true);
  result.method = Method::kRl;
  result.wall_clock_seconds = clock.seconds();
  return result;
}

UnlearnResult unlearn_ga(const ClassifierModel& model, const SplitDataset& split,
                         const UnlearnConfig& cfg) {
  Stopwatch clock;
  UnlearnResult result;
  result.model = model;
  const auto targets = one_hot_targets(split.forget_train.labels, global_class_count(split));
  result.epoch_losses =
      detail::run_sgd(result.model, split.forget_train.features, targets, cfg.learning_rate,
                      cfg.epochs, cfg.batch_size, cfg.seed, true, nullptr, /*ascend=*/true,
                      /*clip_norm=*/1.0);
  result.method = Method::kGa;
  result.wall_clock_seconds = clock.seconds();
  return result;
}

UnlearnResult unlearn_trw(const ClassifierModel& model, const SplitDataset& split,
                          const UnlearnConfig& cfg, const SimilarityProfile& scores) {
  return run_trw_impl(model, split, cfg, {scores}, nullptr, Method::kTrw);
}

UnlearnResult unlearn_trw_multi(const ClassifierModel& model, const SplitDataset& split,
                                const UnlearnConfig& cfg,
                                const std::vector<SimilarityProfile>& profiles) {
  return run_trw_impl(model, split, cfg, profiles, nullptr, Method::kTrw);
}

UnlearnResult unlearn_trw2r(const ClassifierModel& model, const SplitDataset& split,
                            const UnlearnConfig& cfg, const SimilarityProfile& scores) {
  const int layers = model.layer_count();
  if (cfg.layer_subset_size < 1 || cfg.layer_subset_size > layers) {
    throw ConfigError("trw2r: layer subset size " + std::to_string(cfg.layer_subset_size) +
                      " outside [1, " + std::to_string(layers) + "]");
  }
  rng::Prng prng(rng::mix(cfg.seed, kSubsetTag));
  const auto picks = prng.sample_without_replacement(static_cast<std::size_t>(layers),
                                                     static_cast<std::size_t>(cfg.layer_subset_size));
  std::vector<char> mask(static_cast<std::size_t>(layers), 0);
  for (auto i : picks) mask[i] = 1;
  auto result = run_trw_impl(model, split, cfg, {scores}, &mask, Method::kTrw2r);
  return result;
}

double eval_accuracy(const ClassifierModel& m, const LabeledDataset& data) {
  return eval_accuracy(m, data.features, data.labels);
}

void save_unlearn_result(const UnlearnResult& result, const UnlearnConfig& cfg,
                         const std::filesystem::path& stem) {
  save_model(result.model, stem.string() + ".model");
  nlohmann::json j;
  j["method"] = method_name(result.method);
  j["config"] = {{"epochs", cfg.epochs},
                 {"learningRate", cfg.learning_rate},
                 {"beta", cfg.beta},
                 {"seed", cfg.seed},
                 {"layerSubsetSize", cfg.layer_subset_size},
                 {"batchSize", cfg.batch_size}};
  j["epochLosses"] = result.epoch_losses;
  j["wallClockSeconds"] = result.wall_clock_seconds;
  std::ofstream f(stem.string() + ".json", std::ios::trunc);
  if (!f) throw FormatError("cannot write " + stem.string() + ".json");
  f << j.dump(2) << "\n";
}

}  // namespace ulab
