#include "ulab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "ulab/errors.hpp"
#include "ulab/rng.hpp"
#include "ulab/trw.hpp"

namespace ulab {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Substream tags: every seed used by the harness is derived through rng::mix
// so the data, model-init, shuffle and attack streams stay independent.
constexpr std::uint64_t kTrainDataTag = 0x747261696e646174ull;
constexpr std::uint64_t kTestDataTag = 0x7465737464617461ull;
constexpr std::uint64_t kOriginalInitTag = 0x6f726967696e6974ull;
constexpr std::uint64_t kOriginalShufTag = 0x6f72696773687566ull;
constexpr std::uint64_t kBankTag = 0x7262616e6b000000ull;
constexpr std::uint64_t kRetrainCellTag = 0x7263656c6c000000ull;
constexpr std::uint64_t kAttackTag = 0x61747461636b0000ull;
constexpr std::uint64_t kToyTrainTag = 0x746f79747261696eull;
constexpr std::uint64_t kToyTestTag = 0x746f797465737400ull;
constexpr std::uint64_t kToyInitTag = 0x746f79696e697400ull;
constexpr std::uint64_t kToyShufTag = 0x746f797368756600ull;
constexpr std::uint64_t kToyRetrainTag = 0x746f797265747200ull;
constexpr std::uint64_t kToyUnlearnTag = 0x746f79756e6c0000ull;

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

void append_double(std::string& out, double v) {
  if (std::isnan(v)) return;  // NaN serializes as an empty field
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

void append_u64(std::string& out, std::uint64_t v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

double parse_csv_double(const std::string& field, const fs::path& path, int line) {
  if (field.empty()) return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
    throw FormatError(path.string() + ": line " + std::to_string(line) + ": bad number '" +
                      field + "'");
  }
  return v;
}

std::uint64_t parse_csv_u64(const std::string& field, const fs::path& path, int line) {
  std::uint64_t v = 0;
  auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (field.empty() || res.ec != std::errc() || res.ptr != field.data() + field.size()) {
    throw FormatError(path.string() + ": line " + std::to_string(line) + ": bad seed '" +
                      field + "'");
  }
  return v;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

// Runs fn(0..n-1) across up to `jobs` threads; the first exception wins and is
// rethrown after everyone has joined.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  jobs = std::max(1, std::min(jobs, n));
  if (jobs <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(jobs);
  for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// --- config parsing -------------------------------------------------------

void expect_keys(const json& j, const std::string& where,
                 std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : allowed) {
      if (item.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError(where + ": unknown key '" + item.key() + "'");
  }
}

const json& require(const json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(where + ": missing required key '" + key + "'");
  return *it;
}

double get_double(const json& j, const std::string& where) {
  if (!j.is_number()) throw ConfigError(where + ": expected a number");
  return j.get<double>();
}

int get_int(const json& j, const std::string& where) {
  if (!j.is_number_integer()) throw ConfigError(where + ": expected an integer");
  return j.get<int>();
}

std::uint64_t get_u64(const json& j, const std::string& where) {
  if (!(j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0))) {
    throw ConfigError(where + ": expected a non-negative integer");
  }
  return j.get<std::uint64_t>();
}

bool get_bool(const json& j, const std::string& where) {
  if (!j.is_boolean()) throw ConfigError(where + ": expected a boolean");
  return j.get<bool>();
}

std::string get_string(const json& j, const std::string& where) {
  if (!j.is_string()) throw ConfigError(where + ": expected a string");
  return j.get<std::string>();
}

std::vector<int> get_int_array(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array");
  std::vector<int> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    out.push_back(get_int(j[i], where + "[" + std::to_string(i) + "]"));
  }
  return out;
}

UnlearnConfig parse_method(const json& j, const std::string& where, double default_beta) {
  expect_keys(j, where,
              {"method", "epochs", "learningRate", "beta", "seed", "layerSubsetSize",
               "batchSize"});
  UnlearnConfig cfg;
  cfg.method = method_from_string(get_string(require(j, "method", where), where + ".method"));
  cfg.beta = default_beta;
  if (j.contains("epochs")) cfg.epochs = get_int(j["epochs"], where + ".epochs");
  if (j.contains("learningRate")) {
    cfg.learning_rate = get_double(j["learningRate"], where + ".learningRate");
  }
  if (j.contains("beta")) cfg.beta = get_double(j["beta"], where + ".beta");
  if (j.contains("seed")) cfg.seed = get_u64(j["seed"], where + ".seed");
  if (j.contains("layerSubsetSize")) {
    cfg.layer_subset_size = get_int(j["layerSubsetSize"], where + ".layerSubsetSize");
  }
  if (j.contains("batchSize")) cfg.batch_size = get_int(j["batchSize"], where + ".batchSize");
  return cfg;
}

// Gaussian mixture description used by the gaussianSpecFile dataset; this is a
// data file, so structural problems are FormatErrors.
GaussianMixtureSpec parse_mixture(const json& j, const std::string& where) {
  if (!j.is_object()) throw FormatError(where + ": expected an object");
  for (const auto& item : j.items()) {
    if (item.key() != "seed" && item.key() != "classes") {
      throw FormatError(where + ": unknown key '" + item.key() + "'");
    }
  }
  GaussianMixtureSpec spec;
  auto seed_it = j.find("seed");
  if (seed_it == j.end()) throw FormatError(where + ": missing required key 'seed'");
  if (!(seed_it->is_number_unsigned() ||
        (seed_it->is_number_integer() && seed_it->get<std::int64_t>() >= 0))) {
    throw FormatError(where + ".seed: expected a non-negative integer");
  }
  spec.seed = seed_it->get<std::uint64_t>();
  auto cls_it = j.find("classes");
  if (cls_it == j.end() || !cls_it->is_array() || cls_it->empty()) {
    throw FormatError(where + ": 'classes' must be a nonempty array");
  }
  for (std::size_t i = 0; i < cls_it->size(); ++i) {
    const json& c = (*cls_it)[i];
    const std::string cw = where + ".classes[" + std::to_string(i) + "]";
    if (!c.is_object()) throw FormatError(cw + ": expected an object");
    for (const auto& item : c.items()) {
      if (item.key() != "mean" && item.key() != "covDiag" && item.key() != "count") {
        throw FormatError(cw + ": unknown key '" + item.key() + "'");
      }
    }
    GaussianClassSpec g;
    auto mean_it = c.find("mean");
    auto cov_it = c.find("covDiag");
    auto count_it = c.find("count");
    if (mean_it == c.end() || cov_it == c.end() || count_it == c.end()) {
      throw FormatError(cw + ": needs 'mean', 'covDiag' and 'count'");
    }
    if (!mean_it->is_array() || !cov_it->is_array() || mean_it->size() != cov_it->size() ||
        mean_it->empty()) {
      throw FormatError(cw + ": 'mean' and 'covDiag' must be arrays of equal nonzero length");
    }
    g.mean.resize(static_cast<int>(mean_it->size()));
    g.cov_diag.resize(static_cast<int>(cov_it->size()));
    for (std::size_t d = 0; d < mean_it->size(); ++d) {
      if (!(*mean_it)[d].is_number() || !(*cov_it)[d].is_number()) {
        throw FormatError(cw + ": mean/covDiag entries must be numbers");
      }
      g.mean[static_cast<int>(d)] = (*mean_it)[d].get<double>();
      g.cov_diag[static_cast<int>(d)] = (*cov_it)[d].get<double>();
      if (g.cov_diag[static_cast<int>(d)] <= 0.0) {
        throw FormatError(cw + ": covDiag entries must be positive");
      }
    }
    if (!count_it->is_number_integer() || count_it->get<int>() <= 0) {
      throw FormatError(cw + ": 'count' must be a positive integer");
    }
    g.count = count_it->get<int>();
    spec.per_class.push_back(std::move(g));
  }
  return spec;
}

struct GaussianFileSpecs {
  GaussianMixtureSpec train;
  GaussianMixtureSpec test;
};

GaussianFileSpecs load_gaussian_spec_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open gaussian spec file " + path.string());
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  const std::string where = path.filename().string();
  if (!root.is_object()) throw FormatError(where + ": expected an object");
  for (const auto& item : root.items()) {
    if (item.key() != "train" && item.key() != "test") {
      throw FormatError(where + ": unknown key '" + item.key() + "'");
    }
  }
  if (!root.contains("train") || !root.contains("test")) {
    throw FormatError(where + ": needs 'train' and 'test' mixtures");
  }
  GaussianFileSpecs specs;
  specs.train = parse_mixture(root["train"], where + ".train");
  specs.test = parse_mixture(root["test"], where + ".test");
  if (specs.train.per_class.size() != specs.test.per_class.size()) {
    throw FormatError(where + ": train and test must define the same class count");
  }
  return specs;
}

std::string score_source_name(ScoreOptions::Source s) {
  switch (s) {
    case ScoreOptions::Source::kAuto: return "auto";
    case ScoreOptions::Source::kWeights: return "weights";
    case ScoreOptions::Source::kCentroids: return "centroids";
  }
  throw UsageError("unknown score source");
}

ScoreOptions::Source score_source_from_string(const std::string& name, const std::string& where) {
  if (name == "auto") return ScoreOptions::Source::kAuto;
  if (name == "weights") return ScoreOptions::Source::kWeights;
  if (name == "centroids") return ScoreOptions::Source::kCentroids;
  throw ConfigError(where + ": unknown score source '" + name + "'");
}

ordered_json config_to_json(const ExperimentConfig& cfg) {
  ordered_json j;
  j["dataset"] = dataset_kind_name(cfg.dataset);
  j["architecture"] = cfg.architecture;
  j["forgetClasses"] = std::vector<int>(cfg.forget_classes.begin(), cfg.forget_classes.end());
  ordered_json methods = ordered_json::array();
  for (const UnlearnConfig& m : cfg.methods) {
    ordered_json mj;
    mj["method"] = method_name(m.method);
    mj["epochs"] = m.epochs;
    mj["learningRate"] = m.learning_rate;
    mj["beta"] = m.beta;
    mj["seed"] = m.seed;
    mj["layerSubsetSize"] = m.layer_subset_size;
    mj["batchSize"] = m.batch_size;
    methods.push_back(std::move(mj));
  }
  j["methods"] = std::move(methods);
  j["nRetrainModels"] = cfg.n_retrain_models;
  j["beta"] = cfg.beta;
  j["seeds"] = cfg.seeds;
  j["outputDir"] = cfg.output_dir.string();
  j["dataSeed"] = cfg.data_seed;
  j["train"] = {{"epochs", cfg.train.epochs},
                {"learningRate", cfg.train.learning_rate},
                {"batchSize", cfg.train.batch_size}};
  if (!cfg.gaussian_spec_file.empty()) j["gaussianSpecFile"] = cfg.gaussian_spec_file.string();
  if (cfg.dataset == DatasetKind::kMnistIdx) {
    j["mnist"] = {{"imagesTrain", cfg.mnist.images_train.string()},
                  {"labelsTrain", cfg.mnist.labels_train.string()},
                  {"imagesTest", cfg.mnist.images_test.string()},
                  {"labelsTest", cfg.mnist.labels_test.string()},
                  {"trainPerClass", cfg.mnist.train_per_class},
                  {"testPerClass", cfg.mnist.test_per_class}};
  }
  j["score"] = {{"source", score_source_name(cfg.score.source)},
                {"dPrime", cfg.score.d_prime},
                {"temperature", cfg.score.temperature}};
  j["toy"] = {{"gridResolution", cfg.toy.grid_resolution},
              {"margin", cfg.toy.margin},
              {"perClassTrain", cfg.toy.per_class_train}};
  j["recordTimings"] = cfg.record_timings;
  j["computeUlira"] = cfg.compute_ulira;
  return j;
}

ordered_json row_to_json(const MetricsRow& r) {
  ordered_json j;
  j["method"] = r.method;
  j["seed"] = r.seed;
  j["accR"] = r.acc_r;
  j["accF"] = r.acc_f;
  j["mia"] = r.mia;
  j["miaNN"] = r.mia_nn;
  j["miaNNGap"] = r.mia_nn_gap;
  j["ulira"] = r.ulira;
  j["runtimeSeconds"] = r.runtime_s;
  if (r.error.empty()) {
    j["error"] = nullptr;
  } else {
    j["error"] = r.error;
  }
  return j;
}

void append_row_fields(std::string& out, const MetricsRow& r) {
  out += r.method;
  out += ',';
  append_u64(out, r.seed);
  out += ',';
  append_double(out, r.acc_r);
  out += ',';
  append_double(out, r.acc_f);
  out += ',';
  append_double(out, r.mia);
  out += ',';
  append_double(out, r.mia_nn);
  out += ',';
  append_double(out, r.mia_nn_gap);
  out += ',';
  append_double(out, r.ulira);
  out += ',';
  append_double(out, r.runtime_s);
  out += '\n';
}

void save_model_atomic(const ClassifierModel& m, const fs::path& path) {
  fs::path tmp = path;
  tmp += ".tmp";
  save_model(m, tmp);
  fs::rename(tmp, path);
}

// The unweighted accuracy over a concatenation of per-class splits.
LabeledDataset concat_forget_tests(const SplitDataset& split) {
  LabeledDataset out;
  bool first = true;
  for (int f : split.forget_classes) {
    const LabeledDataset& part = split.test_by_class.at(f);
    out = first ? part : concat(out, part);
    first = false;
  }
  return out;
}

SimilarityProfile profile_for(const ScoreOptions& sc, const LabeledDataset& train,
                              const ClassifierModel& original, int f) {
  const bool centroids = sc.source == ScoreOptions::Source::kCentroids ||
                         (sc.source == ScoreOptions::Source::kAuto && train.dim() == 2);
  if (centroids) return centroid_similarity_profile(train, f, sc.temperature);
  return similarity_scores(original, f, sc.d_prime, sc.temperature);
}

UnlearnResult dispatch_method(const ExperimentContext& ctx, const UnlearnConfig& cfg) {
  switch (cfg.method) {
    case Method::kOriginal: {
      UnlearnResult r;
      r.model = ctx.original;
      r.method = Method::kOriginal;
      return r;
    }
    case Method::kRetrain: {
      TrainConfig tc = ctx.config.train;
      tc.seed = rng::mix(cfg.seed, kRetrainCellTag);
      UnlearnResult r;
      Stopwatch clock;
      r.model = retrain_oracle(ctx.config.architecture, ctx.split.retain_train, tc);
      r.wall_clock_seconds = clock.seconds();
      r.method = Method::kRetrain;
      return r;
    }
    case Method::kFt:
      return unlearn_ft(ctx.original, ctx.split, cfg);
    case Method::kRl:
      return unlearn_rl(ctx.original, ctx.split, cfg);
    case Method::kGa:
      return unlearn_ga(ctx.original, ctx.split, cfg);
    case Method::kTrw:
    case Method::kTrw2r: {
      if (ctx.split.forget_classes.size() == 1) {
        const int f = *ctx.split.forget_classes.begin();
        SimilarityProfile profile = make_profile(ctx, f);
        return cfg.method == Method::kTrw ? unlearn_trw(ctx.original, ctx.split, cfg, profile)
                                          : unlearn_trw2r(ctx.original, ctx.split, cfg, profile);
      }
      if (cfg.method == Method::kTrw2r) {
        throw ConfigError("trw2r supports a single forget class");
      }
      std::vector<SimilarityProfile> profiles;
      for (int f : ctx.split.forget_classes) profiles.push_back(make_profile(ctx, f));
      return unlearn_trw_multi(ctx.original, ctx.split, cfg, profiles);
    }
  }
  throw UsageError("unknown method enum value");
}

UnlearnConfig find_trw_template(const ExperimentConfig& cfg, const char* what) {
  for (const UnlearnConfig& m : cfg.methods) {
    if (m.method == Method::kTrw || m.method == Method::kTrw2r) return m;
  }
  throw ConfigError(std::string(what) + " needs a trw (or trw2r) entry in 'methods'");
}

}  // namespace

DatasetKind dataset_kind_from_string(const std::string& name) {
  if (name == "toy3") return DatasetKind::kToy3;
  if (name == "gaussianSpecFile") return DatasetKind::kGaussianSpecFile;
  if (name == "mnistIdx") return DatasetKind::kMnistIdx;
  throw ConfigError("unknown dataset '" + name + "'");
}

std::string dataset_kind_name(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::kToy3: return "toy3";
    case DatasetKind::kGaussianSpecFile: return "gaussianSpecFile";
    case DatasetKind::kMnistIdx: return "mnistIdx";
  }
  throw UsageError("unknown dataset enum value");
}

ExperimentConfig default_toy_config() {
  ExperimentConfig cfg;
  cfg.dataset = DatasetKind::kToy3;
  cfg.architecture = {2, 24, 3};
  cfg.forget_classes = {1};
  UnlearnConfig trw;
  trw.method = Method::kTrw;
  trw.epochs = 40;
  trw.learning_rate = 0.3;
  trw.beta = 10.0;
  trw.batch_size = 32;
  cfg.methods = {trw};
  cfg.n_retrain_models = 3;
  cfg.beta = 10.0;
  cfg.seeds = {1, 2, 3};
  cfg.output_dir = "out";
  cfg.train.epochs = 100;
  cfg.train.learning_rate = 0.3;
  cfg.train.batch_size = 32;
  return cfg;
}

ExperimentConfig parse_config_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  expect_keys(root, "config",
              {"dataset", "architecture", "forgetClasses", "methods", "nRetrainModels", "beta",
               "seeds", "outputDir", "dataSeed", "train", "gaussianSpecFile", "mnist", "score",
               "toy", "recordTimings", "computeUlira"});
  ExperimentConfig cfg;
  cfg.dataset =
      dataset_kind_from_string(get_string(require(root, "dataset", "config"), "config.dataset"));
  cfg.architecture = get_int_array(require(root, "architecture", "config"), "config.architecture");
  std::vector<int> forget =
      get_int_array(require(root, "forgetClasses", "config"), "config.forgetClasses");
  cfg.forget_classes = std::set<int>(forget.begin(), forget.end());
  if (cfg.forget_classes.size() != forget.size()) {
    throw ConfigError("config.forgetClasses: duplicate class id");
  }
  if (root.contains("beta")) cfg.beta = get_double(root["beta"], "config.beta");
  const json& methods = require(root, "methods", "config");
  if (!methods.is_array() || methods.empty()) {
    throw ConfigError("config.methods: expected a nonempty array");
  }
  for (std::size_t i = 0; i < methods.size(); ++i) {
    cfg.methods.push_back(
        parse_method(methods[i], "config.methods[" + std::to_string(i) + "]", cfg.beta));
  }
  if (root.contains("nRetrainModels")) {
    cfg.n_retrain_models = get_int(root["nRetrainModels"], "config.nRetrainModels");
  }
  const json& seeds = require(root, "seeds", "config");
  if (!seeds.is_array() || seeds.empty()) {
    throw ConfigError("config.seeds: expected a nonempty array");
  }
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    cfg.seeds.push_back(get_u64(seeds[i], "config.seeds[" + std::to_string(i) + "]"));
  }
  cfg.output_dir = get_string(require(root, "outputDir", "config"), "config.outputDir");
  if (root.contains("dataSeed")) cfg.data_seed = get_u64(root["dataSeed"], "config.dataSeed");
  if (root.contains("train")) {
    const json& t = root["train"];
    expect_keys(t, "config.train", {"epochs", "learningRate", "batchSize"});
    if (t.contains("epochs")) cfg.train.epochs = get_int(t["epochs"], "config.train.epochs");
    if (t.contains("learningRate")) {
      cfg.train.learning_rate = get_double(t["learningRate"], "config.train.learningRate");
    }
    if (t.contains("batchSize")) {
      cfg.train.batch_size = get_int(t["batchSize"], "config.train.batchSize");
    }
  }
  if (root.contains("gaussianSpecFile")) {
    cfg.gaussian_spec_file = get_string(root["gaussianSpecFile"], "config.gaussianSpecFile");
  }
  if (root.contains("mnist")) {
    const json& m = root["mnist"];
    expect_keys(m, "config.mnist",
                {"imagesTrain", "labelsTrain", "imagesTest", "labelsTest", "trainPerClass",
                 "testPerClass"});
    if (m.contains("imagesTrain")) {
      cfg.mnist.images_train = get_string(m["imagesTrain"], "config.mnist.imagesTrain");
    }
    if (m.contains("labelsTrain")) {
      cfg.mnist.labels_train = get_string(m["labelsTrain"], "config.mnist.labelsTrain");
    }
    if (m.contains("imagesTest")) {
      cfg.mnist.images_test = get_string(m["imagesTest"], "config.mnist.imagesTest");
    }
    if (m.contains("labelsTest")) {
      cfg.mnist.labels_test = get_string(m["labelsTest"], "config.mnist.labelsTest");
    }
    if (m.contains("trainPerClass")) {
      cfg.mnist.train_per_class = get_int(m["trainPerClass"], "config.mnist.trainPerClass");
    }
    if (m.contains("testPerClass")) {
      cfg.mnist.test_per_class = get_int(m["testPerClass"], "config.mnist.testPerClass");
    }
  }
  if (root.contains("score")) {
    const json& s = root["score"];
    expect_keys(s, "config.score", {"source", "dPrime", "temperature"});
    if (s.contains("source")) {
      cfg.score.source =
          score_source_from_string(get_string(s["source"], "config.score.source"),
                                   "config.score.source");
    }
    if (s.contains("dPrime")) cfg.score.d_prime = get_int(s["dPrime"], "config.score.dPrime");
    if (s.contains("temperature")) {
      cfg.score.temperature = get_double(s["temperature"], "config.score.temperature");
    }
  }
  if (root.contains("toy")) {
    const json& t = root["toy"];
    expect_keys(t, "config.toy", {"gridResolution", "margin", "perClassTrain"});
    if (t.contains("gridResolution")) {
      cfg.toy.grid_resolution = get_int(t["gridResolution"], "config.toy.gridResolution");
    }
    if (t.contains("margin")) cfg.toy.margin = get_double(t["margin"], "config.toy.margin");
    if (t.contains("perClassTrain")) {
      cfg.toy.per_class_train = get_int(t["perClassTrain"], "config.toy.perClassTrain");
    }
  }
  if (root.contains("recordTimings")) {
    cfg.record_timings = get_bool(root["recordTimings"], "config.recordTimings");
  }
  if (root.contains("computeUlira")) {
    cfg.compute_ulira = get_bool(root["computeUlira"], "config.computeUlira");
  }
  validate_config(cfg);
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

void validate_config(const ExperimentConfig& cfg) {
  if (cfg.methods.empty()) throw ConfigError("config: 'methods' must be nonempty");
  if (cfg.n_retrain_models < 1) throw ConfigError("config: nRetrainModels must be >= 1");
  if (cfg.seeds.empty()) throw ConfigError("config: 'seeds' must be nonempty");
  if (cfg.architecture.size() < 2) {
    throw ConfigError("config: architecture needs at least input and output widths");
  }
  for (int w : cfg.architecture) {
    if (w <= 0) throw ConfigError("config: architecture widths must be positive");
  }
  if (cfg.forget_classes.empty()) throw ConfigError("config: 'forgetClasses' must be nonempty");
  if (!std::isfinite(cfg.beta)) throw ConfigError("config: beta must be finite");
  for (const UnlearnConfig& m : cfg.methods) {
    if (m.epochs < 0) throw ConfigError("config: method epochs must be >= 0");
    if (m.learning_rate < 0 || !std::isfinite(m.learning_rate)) {
      throw ConfigError("config: method learning rate must be finite and >= 0");
    }
    if (m.batch_size <= 0) throw ConfigError("config: method batch size must be positive");
    if (!std::isfinite(m.beta)) throw ConfigError("config: method beta must be finite");
  }
  if (cfg.train.epochs <= 0) throw ConfigError("config: train.epochs must be positive");
  if (cfg.train.learning_rate < 0 || !std::isfinite(cfg.train.learning_rate)) {
    throw ConfigError("config: train.learningRate must be finite and >= 0");
  }
  if (cfg.train.batch_size <= 0) throw ConfigError("config: train.batchSize must be positive");
  if (cfg.dataset == DatasetKind::kGaussianSpecFile && cfg.gaussian_spec_file.empty()) {
    throw ConfigError("config: dataset gaussianSpecFile needs 'gaussianSpecFile'");
  }
  if (cfg.dataset == DatasetKind::kMnistIdx &&
      (cfg.mnist.images_train.empty() || cfg.mnist.labels_train.empty() ||
       cfg.mnist.images_test.empty() || cfg.mnist.labels_test.empty())) {
    throw ConfigError("config: dataset mnistIdx needs the four IDX paths under 'mnist'");
  }
  if (cfg.mnist.train_per_class < 0 || cfg.mnist.test_per_class < 0) {
    throw ConfigError("config: mnist per-class counts must be >= 0");
  }
  if (cfg.score.temperature <= 0) throw ConfigError("config: score.temperature must be positive");
  if (cfg.toy.grid_resolution < 2) {
    throw ConfigError("config: toy.gridResolution must be at least 2");
  }
  if (cfg.toy.margin < 0 || !std::isfinite(cfg.toy.margin)) {
    throw ConfigError("config: toy.margin must be finite and >= 0");
  }
  if (cfg.toy.per_class_train <= 0) {
    throw ConfigError("config: toy.perClassTrain must be positive");
  }
  if (cfg.compute_ulira) {
    if (cfg.seeds.size() < 3) {
      throw ConfigError("config: computeUlira needs at least 3 seeds for the shadow arm");
    }
    if (cfg.n_retrain_models < 2) {
      throw ConfigError("config: computeUlira needs at least 2 retrain models");
    }
  }
}

// --- metrics table --------------------------------------------------------

void write_text_atomic(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw UsageError("cannot open " + tmp.string() + " for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw UsageError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_metrics_csv(const std::vector<MetricsRow>& rows, const fs::path& path) {
  std::string out(kMetricsCsvHeader);
  out += '\n';
  for (const MetricsRow& r : rows) append_row_fields(out, r);
  write_text_atomic(path, out);
}

std::vector<MetricsRow> read_metrics_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open metrics csv " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty file");
  if (line != kMetricsCsvHeader) {
    throw FormatError(path.string() + ": bad header '" + line + "'");
  }
  std::vector<MetricsRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) throw FormatError(path.string() + ": blank line " + std::to_string(line_no));
    std::vector<std::string> f = split_fields(line);
    if (f.size() != 9) {
      throw FormatError(path.string() + ": line " + std::to_string(line_no) + ": expected 9 " +
                        "fields, got " + std::to_string(f.size()));
    }
    MetricsRow r;
    r.method = f[0];
    r.seed = parse_csv_u64(f[1], path, line_no);
    r.acc_r = parse_csv_double(f[2], path, line_no);
    r.acc_f = parse_csv_double(f[3], path, line_no);
    r.mia = parse_csv_double(f[4], path, line_no);
    r.mia_nn = parse_csv_double(f[5], path, line_no);
    r.mia_nn_gap = parse_csv_double(f[6], path, line_no);
    r.ulira = parse_csv_double(f[7], path, line_no);
    r.runtime_s = parse_csv_double(f[8], path, line_no);
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_metrics_json(const std::vector<MetricsRow>& rows, const fs::path& path) {
  ordered_json j;
  ordered_json arr = ordered_json::array();
  int failed = 0;
  for (const MetricsRow& r : rows) {
    arr.push_back(row_to_json(r));
    if (!r.error.empty()) ++failed;
  }
  j["rows"] = std::move(arr);
  j["totalCells"] = static_cast<int>(rows.size());
  j["failedCells"] = failed;
  write_text_atomic(path, j.dump(2) + "\n");
}

// --- data + context -------------------------------------------------------

LoadedData load_experiment_data(const ExperimentConfig& cfg) {
  LoadedData data;
  switch (cfg.dataset) {
    case DatasetKind::kToy3: {
      data.train = gen_gaussian_mixture(
          toy3_train_spec(rng::mix(cfg.data_seed, kTrainDataTag), cfg.toy.per_class_train));
      data.test = gen_gaussian_mixture(toy3_test_spec(rng::mix(cfg.data_seed, kTestDataTag)));
      break;
    }
    case DatasetKind::kGaussianSpecFile: {
      GaussianFileSpecs specs = load_gaussian_spec_file(cfg.gaussian_spec_file);
      data.train = gen_gaussian_mixture(specs.train);
      data.test = gen_gaussian_mixture(specs.test);
      break;
    }
    case DatasetKind::kMnistIdx: {
      data.train = load_idx(cfg.mnist.images_train, cfg.mnist.labels_train);
      data.test = load_idx(cfg.mnist.images_test, cfg.mnist.labels_test);
      if (cfg.mnist.train_per_class > 0) {
        data.train = subsample_per_class(data.train, cfg.mnist.train_per_class);
      }
      if (cfg.mnist.test_per_class > 0) {
        data.test = subsample_per_class(data.test, cfg.mnist.test_per_class);
      }
      break;
    }
  }
  return data;
}

ExperimentContext build_context(const ExperimentConfig& cfg) {
  validate_config(cfg);
  ExperimentContext ctx;
  ctx.config = cfg;
  LoadedData data = load_experiment_data(cfg);
  ctx.train = std::move(data.train);
  ctx.test = std::move(data.test);
  if (cfg.architecture.front() != ctx.train.dim()) {
    throw ConfigError("config: architecture input width " +
                      std::to_string(cfg.architecture.front()) + " does not match data dim " +
                      std::to_string(ctx.train.dim()));
  }
  if (cfg.architecture.back() != ctx.train.num_classes()) {
    throw ConfigError("config: architecture output width " +
                      std::to_string(cfg.architecture.back()) + " does not match class count " +
                      std::to_string(ctx.train.num_classes()));
  }
  ctx.split = split_forget(ctx.train, ctx.test, cfg.forget_classes);
  ctx.retained_test = ctx.split.retained_test_except(-1);
  ctx.forget_test = concat_forget_tests(ctx.split);

  const int k = ctx.train.num_classes();
  TrainConfig tc = cfg.train;
  tc.seed = rng::mix(cfg.data_seed, kOriginalShufTag);
  ClassifierModel init =
      init_model(cfg.architecture, rng::mix(cfg.data_seed, kOriginalInitTag));
  ctx.original =
      train_epochs(std::move(init), ctx.train.features, one_hot_targets(ctx.train.labels, k), tc)
          .model;

  const std::uint64_t bank_base = rng::mix(cfg.data_seed, kBankTag);
  for (int j = 0; j < cfg.n_retrain_models; ++j) {
    TrainConfig btc = cfg.train;
    btc.seed = rng::mix(bank_base, static_cast<std::uint64_t>(j));
    ctx.retrain_bank.push_back(retrain_oracle(cfg.architecture, ctx.split.retain_train, btc));
  }

  ctx.attack_seed = rng::mix(cfg.data_seed, kAttackTag);
  for (int f : ctx.split.forget_classes) {
    auto [rn, accs] = nearest_neighbor_class(ctx.retrain_bank, ctx.split, f, ctx.attack_seed);
    ctx.nn_class.push_back(rn);
    ctx.nn_reference.push_back(accs.at(rn));
  }
  return ctx;
}

SimilarityProfile make_profile(const ExperimentContext& ctx, int forget_class) {
  return profile_for(ctx.config.score, ctx.train, ctx.original, forget_class);
}

MetricsRow run_cell(const ExperimentContext& ctx, const UnlearnConfig& method_cfg,
                    std::uint64_t seed, UnlearnResult* result_out) {
  MetricsRow row;
  row.method = method_name(method_cfg.method);
  row.seed = seed;
  Stopwatch clock;
  try {
    UnlearnConfig cfg = method_cfg;
    cfg.seed = seed;
    UnlearnResult res = dispatch_method(ctx, cfg);
    row.acc_r = eval_accuracy(res.model, ctx.retained_test);
    row.acc_f = eval_accuracy(res.model, ctx.forget_test);
    double mia = 0.0, nn = 0.0, gap = 0.0;
    int i = 0;
    for (int f : ctx.split.forget_classes) {
      mia += basic_mia_score(res.model, ctx.split, f);
      const double score = miann_score(res.model, ctx.nn_class[i], ctx.split, f, ctx.attack_seed);
      nn += score;
      gap += ctx.nn_reference[i] - score;
      ++i;
    }
    const double k = static_cast<double>(ctx.split.forget_classes.size());
    row.mia = mia / k;
    row.mia_nn = nn / k;
    row.mia_nn_gap = gap / k;
    if (ctx.config.record_timings) row.runtime_s = clock.seconds();
    if (result_out) *result_out = std::move(res);
  } catch (const Error& e) {
    MetricsRow clean;
    clean.method = row.method;
    clean.seed = seed;
    clean.error = e.what();
    row = std::move(clean);
  }
  return row;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, int jobs) {
  ExperimentContext ctx = build_context(cfg);
  const int n_seeds = static_cast<int>(cfg.seeds.size());
  const int n_cells = static_cast<int>(cfg.methods.size()) * n_seeds;

  std::vector<MetricsRow> rows(n_cells);
  std::vector<UnlearnResult> results(n_cells);
  std::vector<char> ok(n_cells, 0);
  parallel_for(n_cells, jobs, [&](int i) {
    const int mi = i / n_seeds;
    const int si = i % n_seeds;
    UnlearnResult res;
    rows[i] = run_cell(ctx, cfg.methods[mi], cfg.seeds[si], &res);
    if (rows[i].error.empty()) {
      results[i] = std::move(res);
      ok[i] = 1;
    }
  });

  if (cfg.compute_ulira) {
    for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
      ShadowSet shadows;
      shadows.retrain_models = ctx.retrain_bank;
      for (int si = 0; si < n_seeds; ++si) {
        const int i = static_cast<int>(mi) * n_seeds + si;
        if (ok[i]) shadows.unlearned_models.push_back(results[i].model);
      }
      if (shadows.unlearned_models.size() < 3) continue;  // not enough for leave-target-out
      for (int si = 0; si < n_seeds; ++si) {
        const int i = static_cast<int>(mi) * n_seeds + si;
        if (!ok[i]) continue;
        try {
          double sum = 0.0;
          for (int f : ctx.split.forget_classes) {
            sum += ulira_simplified(shadows, results[i].model, ctx.split, f);
          }
          rows[i].ulira = sum / static_cast<double>(ctx.split.forget_classes.size());
        } catch (const Error&) {
          // identical models in the arm (e.g. the original passthrough) make
          // leave-target-out impossible; the column stays absent
        }
      }
    }
  }

  fs::create_directories(cfg.output_dir / "models");
  write_metrics_csv(rows, cfg.output_dir / "results.csv");
  write_metrics_json(rows, cfg.output_dir / "results.json");
  write_text_atomic(cfg.output_dir / "config.json", config_to_json(cfg).dump(2) + "\n");
  save_model_atomic(ctx.original, cfg.output_dir / "models" / "original.model");
  for (std::size_t j = 0; j < ctx.retrain_bank.size(); ++j) {
    save_model_atomic(ctx.retrain_bank[j],
                      cfg.output_dir / "models" / ("retrain_bank_" + std::to_string(j) + ".model"));
  }
  for (int i = 0; i < n_cells; ++i) {
    if (!ok[i]) continue;
    const int mi = i / n_seeds;
    const std::string stem = "m" + std::to_string(mi) + "_" + rows[i].method + "_seed" +
                             std::to_string(cfg.seeds[i % n_seeds]);
    save_model_atomic(results[i].model, cfg.output_dir / "models" / (stem + ".model"));
    ordered_json meta;
    meta["method"] = rows[i].method;
    meta["seed"] = rows[i].seed;
    meta["epochLosses"] = results[i].epoch_losses;
    meta["wallClockSeconds"] = cfg.record_timings ? results[i].wall_clock_seconds : 0.0;
    write_text_atomic(cfg.output_dir / "models" / (stem + ".json"), meta.dump(2) + "\n");
  }

  ExperimentResult out;
  out.rows = std::move(rows);
  out.total_cells = n_cells;
  for (const MetricsRow& r : out.rows) {
    if (!r.error.empty()) ++out.failed_cells;
  }
  return out;
}

// --- reports --------------------------------------------------------------

Eigen::MatrixXi confusion_matrix(const ClassifierModel& model,
                                 const std::map<int, LabeledDataset>& test_by_class) {
  if (test_by_class.empty()) throw UsageError("confusion_matrix: empty test split");
  const int k = static_cast<int>(test_by_class.size());
  std::map<int, int> col_of;
  int next = 0;
  for (const auto& [cls, part] : test_by_class) {
    if (part.size() == 0) {
      throw UsageError("confusion_matrix: empty split for class " + std::to_string(cls));
    }
    col_of[cls] = next++;
  }
  Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(k, k);
  for (const auto& [cls, part] : test_by_class) {
    const int row = col_of.at(cls);
    const Eigen::MatrixXd logits = forward_batch(model, part.features);
    for (int i = 0; i < logits.rows(); ++i) {
      const int pred = argmax_lowest(logits.row(i).transpose());
      // predictions index model outputs directly; class ids here are 0..K-1
      auto it = col_of.find(pred);
      if (it == col_of.end()) {
        throw UsageError("confusion_matrix: predicted class " + std::to_string(pred) +
                         " not present in the test split");
      }
      counts(row, it->second) += 1;
    }
  }
  return counts;
}

std::vector<ReassignmentEntry> reassignment_report(const ClassifierModel& model,
                                                   const LabeledDataset& forget_test) {
  if (forget_test.size() == 0) throw UsageError("reassignment_report: empty forget test set");
  std::map<int, long> counts;
  const Eigen::MatrixXd logits = forward_batch(model, forget_test.features);
  for (int i = 0; i < logits.rows(); ++i) {
    counts[argmax_lowest(logits.row(i).transpose())] += 1;
  }
  std::vector<ReassignmentEntry> entries;
  const double n = static_cast<double>(forget_test.size());
  for (const auto& [cls, count] : counts) {
    entries.push_back({cls, count, static_cast<double>(count) / n});
  }
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.count != b.count) return a.count > b.count;
    return a.class_id < b.class_id;
  });
  return entries;
}

std::vector<AblationRow> ablate_beta(const ExperimentConfig& cfg, const std::vector<double>& betas,
                                     int jobs) {
  if (betas.empty()) throw UsageError("ablate_beta: empty beta grid");
  for (double b : betas) {
    if (!std::isfinite(b)) throw UsageError("ablate_beta: betas must be finite");
  }
  UnlearnConfig tmpl = find_trw_template(cfg, "ablate_beta");
  ExperimentContext ctx = build_context(cfg);
  const int n_seeds = static_cast<int>(cfg.seeds.size());
  const int n_cells = static_cast<int>(betas.size()) * n_seeds;
  std::vector<AblationRow> out(n_cells);
  parallel_for(n_cells, jobs, [&](int i) {
    const int bi = i / n_seeds;
    const int si = i % n_seeds;
    UnlearnConfig c = tmpl;
    c.beta = betas[bi];
    out[i].beta = betas[bi];
    out[i].row = run_cell(ctx, c, cfg.seeds[si]);
  });

  fs::create_directories(cfg.output_dir);
  std::string csv = "beta,";
  csv += kMetricsCsvHeader;
  csv += '\n';
  ordered_json arr = ordered_json::array();
  for (const AblationRow& r : out) {
    append_double(csv, r.beta);
    csv += ',';
    append_row_fields(csv, r.row);
    ordered_json j = row_to_json(r.row);
    ordered_json with_beta;
    with_beta["beta"] = r.beta;
    for (auto& item : j.items()) with_beta[item.key()] = item.value();
    arr.push_back(std::move(with_beta));
  }
  write_text_atomic(cfg.output_dir / "ablation.csv", csv);
  ordered_json doc;
  doc["betas"] = betas;
  doc["rows"] = std::move(arr);
  write_text_atomic(cfg.output_dir / "ablation.json", doc.dump(2) + "\n");
  return out;
}

MulticlassResult run_multiclass(const ExperimentConfig& cfg, int jobs) {
  validate_config(cfg);
  UnlearnConfig tmpl = find_trw_template(cfg, "run_multiclass");
  {
    // reject impossible class splits before paying for any training
    LoadedData data = load_experiment_data(cfg);
    int retained = 0;
    for (int cls : data.train.class_ids) {
      if (!cfg.forget_classes.count(cls)) ++retained;
    }
    if (retained < 2) {
      throw ConfigError("run_multiclass: needs at least 2 retained classes, got " +
                        std::to_string(retained));
    }
  }
  ExperimentContext ctx = build_context(cfg);
  const int n_seeds = static_cast<int>(cfg.seeds.size());
  std::vector<MetricsRow> rows(n_seeds);
  std::vector<UnlearnResult> results(n_seeds);
  std::vector<char> ok(n_seeds, 0);
  parallel_for(n_seeds, jobs, [&](int si) {
    UnlearnResult res;
    rows[si] = run_cell(ctx, tmpl, cfg.seeds[si], &res);
    if (rows[si].error.empty()) {
      results[si] = std::move(res);
      ok[si] = 1;
    }
  });

  MulticlassResult out;
  out.rows = rows;
  for (int f : ctx.split.forget_classes) {
    double sum = 0.0;
    int n = 0;
    for (int si = 0; si < n_seeds; ++si) {
      if (!ok[si]) continue;
      sum += eval_accuracy(results[si].model, ctx.split.test_by_class.at(f));
      ++n;
    }
    out.per_class_acc_f.emplace_back(
        f, n > 0 ? sum / n : std::numeric_limits<double>::quiet_NaN());
  }

  fs::create_directories(cfg.output_dir);
  write_metrics_csv(rows, cfg.output_dir / "multiclass.csv");
  ordered_json doc;
  ordered_json arr = ordered_json::array();
  for (const MetricsRow& r : rows) arr.push_back(row_to_json(r));
  doc["rows"] = std::move(arr);
  ordered_json per_class;
  for (const auto& [cls, acc] : out.per_class_acc_f) {
    per_class[std::to_string(cls)] = acc;
  }
  doc["perClassAccF"] = std::move(per_class);
  write_text_atomic(cfg.output_dir / "multiclass.json", doc.dump(2) + "\n");
  return out;
}

// --- toy decision boundaries ----------------------------------------------

namespace {

struct ToyWorld {
  LabeledDataset train;
  LabeledDataset test;
};

ToyWorld make_toy_world(const ExperimentConfig& cfg, std::uint64_t seed) {
  ToyWorld w;
  if (cfg.dataset == DatasetKind::kToy3) {
    w.train = gen_gaussian_mixture(
        toy3_train_spec(rng::mix(seed, kToyTrainTag), cfg.toy.per_class_train));
    w.test = gen_gaussian_mixture(toy3_test_spec(rng::mix(seed, kToyTestTag)));
    return w;
  }
  GaussianFileSpecs specs = load_gaussian_spec_file(cfg.gaussian_spec_file);
  specs.train.seed = rng::mix(seed, kToyTrainTag);
  specs.test.seed = rng::mix(seed, kToyTestTag);
  w.train = gen_gaussian_mixture(specs.train);
  w.test = gen_gaussian_mixture(specs.test);
  return w;
}

Eigen::VectorXi grid_predictions(const ClassifierModel& m, const Eigen::MatrixXd& grid) {
  const Eigen::MatrixXd logits = forward_batch(m, grid);
  Eigen::VectorXi pred(grid.rows());
  for (int i = 0; i < logits.rows(); ++i) {
    pred[i] = argmax_lowest(logits.row(i).transpose());
  }
  return pred;
}

std::string grid_csv(const Eigen::MatrixXd& grid, const Eigen::VectorXi& pred) {
  std::string out = "x,y,predictedClass\n";
  for (int i = 0; i < grid.rows(); ++i) {
    append_double(out, grid(i, 0));
    out += ',';
    append_double(out, grid(i, 1));
    out += ',';
    out += std::to_string(pred[i]);
    out += '\n';
  }
  return out;
}

double agreement(const Eigen::VectorXi& a, const Eigen::VectorXi& b) {
  return static_cast<double>((a.array() == b.array()).count()) /
         static_cast<double>(a.size());
}

}  // namespace

ToyBoundarySummary emit_toy_boundary(const ExperimentConfig& cfg, int jobs) {
  validate_config(cfg);
  if (cfg.dataset == DatasetKind::kMnistIdx) {
    throw UsageError("emit_toy_boundary: needs a 2-D dataset");
  }
  if (cfg.forget_classes.size() != 1) {
    throw UsageError("emit_toy_boundary: needs exactly one forget class");
  }
  const int f = *cfg.forget_classes.begin();
  const UnlearnConfig tmpl = find_trw_template(cfg, "emit_toy_boundary");

  ToyWorld first = make_toy_world(cfg, cfg.seeds.front());
  if (first.train.dim() != 2) throw UsageError("emit_toy_boundary: needs 2-D features");
  const int r = cfg.toy.grid_resolution;
  ToyBoundarySummary summary;
  summary.grid_resolution = r;
  summary.x_min = first.train.features.col(0).minCoeff() - cfg.toy.margin;
  summary.x_max = first.train.features.col(0).maxCoeff() + cfg.toy.margin;
  summary.y_min = first.train.features.col(1).minCoeff() - cfg.toy.margin;
  summary.y_max = first.train.features.col(1).maxCoeff() + cfg.toy.margin;

  Eigen::MatrixXd grid(r * r, 2);
  for (int iy = 0; iy < r; ++iy) {
    const double y = summary.y_min + (summary.y_max - summary.y_min) * iy / (r - 1);
    for (int ix = 0; ix < r; ++ix) {
      const double x = summary.x_min + (summary.x_max - summary.x_min) * ix / (r - 1);
      grid(iy * r + ix, 0) = x;
      grid(iy * r + ix, 1) = y;
    }
  }

  struct SeedArtifacts {
    ToyBoundarySeedSummary agreement;
    std::string original_csv, retrain_csv, beta0_csv, tilted_csv, agreement_json;
  };
  const int n_seeds = static_cast<int>(cfg.seeds.size());
  std::vector<SeedArtifacts> artifacts(n_seeds);

  parallel_for(n_seeds, jobs, [&](int si) {
    const std::uint64_t s = cfg.seeds[si];
    ToyWorld w = make_toy_world(cfg, s);
    if (cfg.architecture.front() != w.train.dim() ||
        cfg.architecture.back() != w.train.num_classes()) {
      throw ConfigError("emit_toy_boundary: architecture does not match the toy data");
    }
    SplitDataset split = split_forget(w.train, w.test, cfg.forget_classes);

    const int k = w.train.num_classes();
    TrainConfig tc = cfg.train;
    tc.seed = rng::mix(s, kToyShufTag);
    ClassifierModel original =
        train_epochs(init_model(cfg.architecture, rng::mix(s, kToyInitTag)), w.train.features,
                     one_hot_targets(w.train.labels, k), tc)
            .model;
    TrainConfig rc = cfg.train;
    rc.seed = rng::mix(s, kToyRetrainTag);
    ClassifierModel retrain = retrain_oracle(cfg.architecture, split.retain_train, rc);

    SimilarityProfile profile = profile_for(cfg.score, w.train, original, f);
    UnlearnConfig uc = tmpl;
    uc.seed = rng::mix(s, kToyUnlearnTag);
    UnlearnConfig uc0 = uc;
    uc0.beta = 0.0;
    ClassifierModel tilted =
        (tmpl.method == Method::kTrw2r ? unlearn_trw2r(original, split, uc, profile)
                                       : unlearn_trw(original, split, uc, profile))
            .model;
    ClassifierModel beta0 =
        (tmpl.method == Method::kTrw2r ? unlearn_trw2r(original, split, uc0, profile)
                                       : unlearn_trw(original, split, uc0, profile))
            .model;

    const Eigen::VectorXi pred_orig = grid_predictions(original, grid);
    const Eigen::VectorXi pred_retrain = grid_predictions(retrain, grid);
    const Eigen::VectorXi pred_beta0 = grid_predictions(beta0, grid);
    const Eigen::VectorXi pred_tilted = grid_predictions(tilted, grid);

    SeedArtifacts art;
    art.agreement.seed = s;
    art.agreement.original_agreement = agreement(pred_orig, pred_retrain);
    art.agreement.beta0_agreement = agreement(pred_beta0, pred_retrain);
    art.agreement.tilted_agreement = agreement(pred_tilted, pred_retrain);
    art.original_csv = grid_csv(grid, pred_orig);
    art.retrain_csv = grid_csv(grid, pred_retrain);
    art.beta0_csv = grid_csv(grid, pred_beta0);
    art.tilted_csv = grid_csv(grid, pred_tilted);
    ordered_json aj;
    aj["seed"] = s;
    aj["original"] = art.agreement.original_agreement;
    aj["beta0"] = art.agreement.beta0_agreement;
    aj["tilted"] = art.agreement.tilted_agreement;
    art.agreement_json = aj.dump(2) + "\n";
    artifacts[si] = std::move(art);
  });

  for (int si = 0; si < n_seeds; ++si) {
    const SeedArtifacts& art = artifacts[si];
    const fs::path dir = cfg.output_dir / ("seed_" + std::to_string(cfg.seeds[si]));
    fs::create_directories(dir);
    write_text_atomic(dir / "original.csv", art.original_csv);
    write_text_atomic(dir / "retrain.csv", art.retrain_csv);
    write_text_atomic(dir / "beta0.csv", art.beta0_csv);
    write_text_atomic(dir / "tilted.csv", art.tilted_csv);
    write_text_atomic(dir / "agreement.json", art.agreement_json);
    summary.per_seed.push_back(art.agreement);
    summary.mean_original += art.agreement.original_agreement;
    summary.mean_beta0 += art.agreement.beta0_agreement;
    summary.mean_tilted += art.agreement.tilted_agreement;
  }
  summary.mean_original /= n_seeds;
  summary.mean_beta0 /= n_seeds;
  summary.mean_tilted /= n_seeds;

  ordered_json doc;
  doc["gridResolution"] = r;
  doc["boundingBox"] = {{"xMin", summary.x_min},
                        {"xMax", summary.x_max},
                        {"yMin", summary.y_min},
                        {"yMax", summary.y_max}};
  ordered_json per_seed = ordered_json::array();
  for (const ToyBoundarySeedSummary& a : summary.per_seed) {
    per_seed.push_back({{"seed", a.seed},
                        {"original", a.original_agreement},
                        {"beta0", a.beta0_agreement},
                        {"tilted", a.tilted_agreement}});
  }
  doc["perSeed"] = std::move(per_seed);
  doc["mean"] = {{"original", summary.mean_original},
                 {"beta0", summary.mean_beta0},
                 {"tilted", summary.mean_tilted}};
  fs::create_directories(cfg.output_dir);
  write_text_atomic(cfg.output_dir / "boundary_summary.json", doc.dump(2) + "\n");
  return summary;
}

}  // namespace ulab
