#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "ulab/attack.hpp"
#include "ulab/errors.hpp"
#include "ulab/harness.hpp"
#include "ulab/rng.hpp"

using namespace ulab;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

bool same_double(double a, double b) {
  if (std::isnan(a) && std::isnan(b)) return true;
  return std::memcmp(&a, &b, sizeof(double)) == 0;
}

bool same_numeric_fields(const MetricsRow& a, const MetricsRow& b) {
  return a.method == b.method && a.seed == b.seed && same_double(a.acc_r, b.acc_r) &&
         same_double(a.acc_f, b.acc_f) && same_double(a.mia, b.mia) &&
         same_double(a.mia_nn, b.mia_nn) && same_double(a.mia_nn_gap, b.mia_nn_gap) &&
         same_double(a.ulira, b.ulira) && same_double(a.runtime_s, b.runtime_s);
}

// Small but genuinely trained configuration; keeps the whole suite fast.
ExperimentConfig small_toy_config(const fs::path& out) {
  ExperimentConfig cfg = default_toy_config();
  cfg.toy.per_class_train = 90;
  cfg.train.epochs = 60;
  cfg.methods.clear();
  UnlearnConfig retrain;
  retrain.method = Method::kRetrain;
  UnlearnConfig original;
  original.method = Method::kOriginal;
  UnlearnConfig trw;
  trw.method = Method::kTrw;
  trw.epochs = 30;
  trw.learning_rate = 0.3;
  cfg.methods = {retrain, original, trw};
  cfg.n_retrain_models = 2;
  cfg.seeds = {1, 2};
  cfg.output_dir = out;
  cfg.data_seed = 70;
  return cfg;
}

std::string mixture_to_json(const GaussianMixtureSpec& spec) {
  json classes = json::array();
  for (const auto& c : spec.per_class) {
    json e;
    e["mean"] = std::vector<double>(c.mean.data(), c.mean.data() + c.mean.size());
    e["covDiag"] = std::vector<double>(c.cov_diag.data(), c.cov_diag.data() + c.cov_diag.size());
    e["count"] = c.count;
    classes.push_back(e);
  }
  json j;
  j["seed"] = spec.seed;
  j["classes"] = classes;
  return j.dump();
}

fs::path write_toy5_spec_file(const fs::path& dir) {
  const fs::path path = dir / "toy5.json";
  std::ofstream out(path);
  out << "{\"train\": " << mixture_to_json(toy5_train_spec(21))
      << ", \"test\": " << mixture_to_json(toy5_test_spec(22)) << "}";
  return path;
}

ClassifierModel linear_model(const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
  ClassifierModel m;
  m.layers.push_back({w, b});
  m.num_classes = static_cast<int>(w.rows());
  return m;
}

}  // namespace

TEST_CASE("config json parsing: full document, defaults and inheritance") {
  const std::string text = R"({
    "dataset": "toy3",
    "architecture": [2, 24, 3],
    "forgetClasses": [1],
    "methods": [
      {"method": "trw", "epochs": 12, "learningRate": 0.2, "batchSize": 16},
      {"method": "trw2r", "beta": 4.5, "layerSubsetSize": 1},
      {"method": "ga"}
    ],
    "nRetrainModels": 4,
    "beta": 7.5,
    "seeds": [3, 4, 5],
    "outputDir": "/tmp/somewhere",
    "dataSeed": 99,
    "train": {"epochs": 80, "learningRate": 0.25, "batchSize": 24},
    "score": {"source": "centroids", "dPrime": 2, "temperature": 0.05},
    "toy": {"gridResolution": 41, "margin": 0.25, "perClassTrain": 60},
    "recordTimings": true,
    "computeUlira": true
  })";
  ExperimentConfig cfg = parse_config_text(text);
  CHECK(cfg.dataset == DatasetKind::kToy3);
  CHECK(cfg.architecture == std::vector<int>{2, 24, 3});
  CHECK(cfg.forget_classes == std::set<int>{1});
  REQUIRE(cfg.methods.size() == 3);
  CHECK(cfg.methods[0].method == Method::kTrw);
  CHECK(cfg.methods[0].epochs == 12);
  CHECK(cfg.methods[0].learning_rate == 0.2);
  CHECK(cfg.methods[0].batch_size == 16);
  CHECK(cfg.methods[0].beta == 7.5);  // inherits the config-level beta
  CHECK(cfg.methods[1].beta == 4.5);  // explicit beta wins
  CHECK(cfg.methods[1].layer_subset_size == 1);
  CHECK(cfg.methods[2].method == Method::kGa);
  CHECK(cfg.n_retrain_models == 4);
  CHECK(cfg.beta == 7.5);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{3, 4, 5});
  CHECK(cfg.output_dir == fs::path("/tmp/somewhere"));
  CHECK(cfg.data_seed == 99);
  CHECK(cfg.train.epochs == 80);
  CHECK(cfg.train.learning_rate == 0.25);
  CHECK(cfg.train.batch_size == 24);
  CHECK(cfg.score.source == ScoreOptions::Source::kCentroids);
  CHECK(cfg.score.d_prime == 2);
  CHECK(cfg.score.temperature == 0.05);
  CHECK(cfg.toy.grid_resolution == 41);
  CHECK(cfg.toy.margin == 0.25);
  CHECK(cfg.toy.per_class_train == 60);
  CHECK(cfg.record_timings);
  CHECK(cfg.compute_ulira);

  // minimal document falls back to the struct defaults
  ExperimentConfig minimal = parse_config_text(R"({
    "dataset": "toy3", "architecture": [2, 8, 3], "forgetClasses": [1],
    "methods": [{"method": "retrain"}], "seeds": [1], "outputDir": "o"
  })");
  CHECK(minimal.n_retrain_models == 1);
  CHECK(minimal.beta == 10.0);
  CHECK(minimal.methods[0].beta == 10.0);
  CHECK(minimal.data_seed == 100);
  CHECK(minimal.score.source == ScoreOptions::Source::kAuto);
  CHECK_FALSE(minimal.record_timings);
  CHECK_FALSE(minimal.compute_ulira);
}

TEST_CASE("config json parsing: rejections") {
  auto base = [](const std::string& patch) {
    json j = json::parse(R"({
      "dataset": "toy3", "architecture": [2, 8, 3], "forgetClasses": [1],
      "methods": [{"method": "retrain"}], "seeds": [1], "outputDir": "o"
    })");
    json p = json::parse(patch);
    for (auto& item : p.items()) j[item.key()] = item.value();
    return j.dump();
  };
  CHECK_THROWS_AS(parse_config_text("{not json"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(base(R"({"surprise": 1})")), ConfigError);
  CHECK_THROWS_AS(parse_config_text(base(R"({"dataset": "cifar"})")), ConfigError);
  CHECK_THROWS_AS(parse_config_text(base(R"({"methods": []})")), ConfigError);
  CHECK_THROWS_AS(parse_config_text(base(R"({"methods": [{"method": "warp"}]})")), ConfigError);
  CHECK_THROWS_AS(parse_config_text(base(R"({"methods": [{"method": "ft", "warp": 1}]})")),
                  ConfigError);
  CHECK_THROWS_AS(parse_config_text(base(R"({"forgetClasses": [1, 1]})")), ConfigError);
  CHECK_THROWS_AS(parse_config_text(base(R"({"forgetClasses": []})")), ConfigError);
  CHECK_THROWS_AS(parse_config_text(base(R"({"seeds": []})")), ConfigError);
  CHECK_THROWS_AS(parse_config_text(base(R"({"seeds": [-1]})")), ConfigError);
  CHECK_THROWS_AS(parse_config_text(base(R"({"nRetrainModels": 0})")), ConfigError);
  CHECK_THROWS_AS(parse_config_text(base(R"({"architecture": [2]})")), ConfigError);
  CHECK_THROWS_AS(parse_config_text(base(R"({"architecture": [2, 0, 3]})")), ConfigError);
  CHECK_THROWS_AS(parse_config_text(base(R"({"beta": "high"})")), ConfigError);
  CHECK_THROWS_AS(parse_config_text(base(R"({"score": {"source": "vibes"}})")), ConfigError);
  CHECK_THROWS_AS(parse_config_text(base(R"({"score": {"temperature": 0}})")), ConfigError);
  CHECK_THROWS_AS(parse_config_text(base(R"({"toy": {"gridResolution": 1}})")), ConfigError);
  CHECK_THROWS_AS(parse_config_text(base(R"({"train": {"epochs": 0}})")), ConfigError);
  CHECK_THROWS_AS(parse_config_text(base(R"({"dataset": "gaussianSpecFile"})")), ConfigError);
  CHECK_THROWS_AS(parse_config_text(base(R"({"dataset": "mnistIdx"})")), ConfigError);
  CHECK_THROWS_AS(parse_config_text(base(R"({"computeUlira": true, "seeds": [1, 2]})")),
                  ConfigError);
  // missing required keys
  CHECK_THROWS_AS(parse_config_text(R"({"dataset": "toy3"})"), ConfigError);
  CHECK_THROWS_AS(load_config(fs::temp_directory_path() / "ulab_missing_config.json"),
                  ConfigError);
}

TEST_CASE("metrics csv: bit-exact round trip and malformed input") {
  const fs::path dir = fresh_dir("ulab_harness_csv");
  std::vector<MetricsRow> rows(4);
  rows[0] = {"retrain", 7, 0.998, 0.0, 99.5, 1.0, 0.0, 0.5, 1.25, ""};
  rows[1].method = "trw";
  rows[1].seed = 12345678901234567ull;
  rows[1].acc_r = 1.0 / 3.0;
  rows[1].acc_f = 1e-300;
  rows[1].mia = 0.1;
  rows[1].mia_nn = 0.30000000000000004;
  rows[1].mia_nn_gap = -0.25;
  rows[1].runtime_s = 123.456789012345678;
  rows[2].method = "ga";
  rows[2].seed = 2;
  rows[2].error = "training diverged";
  rows[3] = {"ft", 0, 0.875, 0.125, 50.0, 0.5, 0.5, 0.125, 0.0, ""};

  const fs::path path = dir / "results.csv";
  write_metrics_csv(rows, path);
  const std::string text = slurp(path);
  CHECK(text.substr(0, std::strlen(kMetricsCsvHeader)) == kMetricsCsvHeader);
  // the error row serializes with every numeric field empty
  CHECK(text.find("ga,2,,,,,,,0\n") != std::string::npos);

  std::vector<MetricsRow> back = read_metrics_csv(path);
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CAPTURE(i);
    CHECK(same_numeric_fields(back[i], rows[i]));
  }
  // a second write of the parsed table reproduces the file byte for byte
  const fs::path path2 = dir / "results2.csv";
  write_metrics_csv(back, path2);
  CHECK(slurp(path2) == text);

  auto write_file = [&](const std::string& name, const std::string& content) {
    fs::path p = dir / name;
    std::ofstream out(p, std::ios::binary);
    out << content;
    return p;
  };
  CHECK_THROWS_AS(read_metrics_csv(dir / "absent.csv"), FormatError);
  CHECK_THROWS_AS(read_metrics_csv(write_file("h.csv", "method,seed\nx,1\n")), FormatError);
  const std::string hdr = std::string(kMetricsCsvHeader) + "\n";
  CHECK_THROWS_AS(read_metrics_csv(write_file("short.csv", hdr + "trw,1,0.5\n")), FormatError);
  CHECK_THROWS_AS(read_metrics_csv(write_file("num.csv", hdr + "trw,1,zap,,,,,,\n")),
                  FormatError);
  CHECK_THROWS_AS(read_metrics_csv(write_file("seed.csv", hdr + "trw,-3,,,,,,,\n")), FormatError);
  CHECK_THROWS_AS(read_metrics_csv(write_file("blank.csv", hdr + "\n")), FormatError);
}

TEST_CASE("run_experiment: bookkeeping, calibration and byte determinism") {
  const fs::path out1 = fresh_dir("ulab_harness_run1");
  const fs::path out2 = fresh_dir("ulab_harness_run2");
  ExperimentConfig cfg = small_toy_config(out1);
  ExperimentResult res = run_experiment(cfg, 1);

  REQUIRE(res.total_cells == 6);
  CHECK(res.failed_cells == 0);
  REQUIRE(res.rows.size() == 6);
  // method-major, seed-minor ordering, two rows per method
  const std::vector<std::string> want{"retrain", "retrain", "original", "original", "trw", "trw"};
  for (int i = 0; i < 6; ++i) {
    CHECK(res.rows[i].method == want[i]);
    CHECK(res.rows[i].seed == cfg.seeds[i % 2]);
    CHECK(res.rows[i].error.empty());
  }
  for (const MetricsRow& r : res.rows) {
    CHECK(r.acc_r >= 0.9);
    CHECK(r.acc_f >= 0.0);
    CHECK(r.acc_f <= 1.0);
    CHECK(r.mia >= 0.0);
    CHECK(r.mia <= 100.0);
    CHECK(r.mia_nn >= 0.0);
    CHECK(r.mia_nn <= 1.0);
    CHECK(std::isnan(r.ulira));
    CHECK(r.runtime_s == 0.0);  // timings off by default
  }
  // the gold standard forgets; the untouched original does not
  CHECK(res.rows[0].acc_f <= 0.01);
  CHECK(res.rows[1].acc_f <= 0.01);
  CHECK(res.rows[2].acc_f > 0.5);
  // retrain cells sit close to the retrain reference, the original far below
  CHECK(std::abs(res.rows[0].mia_nn_gap) < 0.2);
  CHECK(res.rows[2].mia_nn_gap > 0.3);
  CHECK(res.rows[2].mia_nn < res.rows[0].mia_nn);

  for (const char* name :
       {"results.csv", "results.json", "config.json", "models/original.model",
        "models/retrain_bank_0.model", "models/retrain_bank_1.model",
        "models/m0_retrain_seed1.model", "models/m1_original_seed2.model",
        "models/m2_trw_seed1.model", "models/m2_trw_seed1.json"}) {
    CAPTURE(name);
    CHECK(fs::exists(out1 / name));
  }
  std::vector<MetricsRow> parsed = read_metrics_csv(out1 / "results.csv");
  REQUIRE(parsed.size() == res.rows.size());
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    CHECK(same_numeric_fields(parsed[i], res.rows[i]));
  }

  // a parallel rerun of the identical config produces identical bytes
  ExperimentConfig cfg2 = cfg;
  cfg2.output_dir = out2;
  ExperimentResult res2 = run_experiment(cfg2, 4);
  for (std::size_t i = 0; i < res.rows.size(); ++i) {
    CHECK(same_numeric_fields(res2.rows[i], res.rows[i]));
  }
  CHECK(slurp(out1 / "results.csv") == slurp(out2 / "results.csv"));
  CHECK(slurp(out1 / "results.json") == slurp(out2 / "results.json"));
  for (const auto& entry : fs::directory_iterator(out1 / "models")) {
    const fs::path twin = out2 / "models" / entry.path().filename();
    CAPTURE(entry.path().filename().string());
    REQUIRE(fs::exists(twin));
    CHECK(slurp(entry.path()) == slurp(twin));
  }
}

TEST_CASE("run_experiment: cell failures become error rows") {
  const fs::path out = fresh_dir("ulab_harness_err");
  ExperimentConfig cfg = small_toy_config(out);
  cfg.methods.clear();
  UnlearnConfig retrain;
  retrain.method = Method::kRetrain;
  UnlearnConfig bad;
  bad.method = Method::kTrw2r;
  bad.epochs = 3;
  bad.learning_rate = 0.3;
  bad.layer_subset_size = 99;  // rejected by the method itself
  cfg.methods = {retrain, bad};
  ExperimentResult res = run_experiment(cfg, 2);
  REQUIRE(res.total_cells == 4);
  CHECK(res.failed_cells == 2);
  CHECK(res.rows[0].error.empty());
  CHECK(res.rows[1].error.empty());
  CHECK_FALSE(res.rows[2].error.empty());
  CHECK_FALSE(res.rows[3].error.empty());
  CHECK(std::isnan(res.rows[2].acc_r));
  // error rows survive the round trip as NaNs
  std::vector<MetricsRow> parsed = read_metrics_csv(out / "results.csv");
  CHECK(std::isnan(parsed[2].acc_r));
  CHECK(std::isnan(parsed[3].mia_nn));
  // and the json mirror carries the message
  json j = json::parse(slurp(out / "results.json"));
  CHECK(j["failedCells"] == 2);
  CHECK(j["rows"][2]["error"].is_string());
  CHECK(j["rows"][0]["error"].is_null());
  CHECK_FALSE(fs::exists(out / "models" / "m1_trw2r_seed1.model"));
}

TEST_CASE("run_experiment: ulira column obeys the shadow-arm rules") {
  const fs::path out = fresh_dir("ulab_harness_ulira");
  ExperimentConfig cfg = small_toy_config(out);
  cfg.seeds = {1, 2, 3};
  cfg.compute_ulira = true;
  cfg.methods.clear();
  UnlearnConfig retrain;
  retrain.method = Method::kRetrain;
  UnlearnConfig original;
  original.method = Method::kOriginal;
  UnlearnConfig rl;
  rl.method = Method::kRl;
  rl.epochs = 20;
  rl.learning_rate = 0.3;
  cfg.methods = {retrain, original, rl};
  ExperimentResult res = run_experiment(cfg, 4);
  REQUIRE(res.failed_cells == 0);
  for (int i = 0; i < 3; ++i) {
    CHECK(res.rows[i].method == "retrain");
    CHECK(res.rows[i].ulira >= 0.0);
    CHECK(res.rows[i].ulira <= 1.0);
  }
  for (int i = 3; i < 6; ++i) {
    // three byte-identical copies of the original: leave-target-out removes
    // them all, so the statistic cannot be formed
    CHECK(res.rows[i].method == "original");
    CHECK(std::isnan(res.rows[i].ulira));
  }
  for (int i = 6; i < 9; ++i) {
    CHECK(res.rows[i].method == "rl");
    CHECK(res.rows[i].ulira >= 0.0);
    CHECK(res.rows[i].ulira <= 1.0);
  }
  ExperimentConfig bad = cfg;
  bad.seeds = {1, 2};
  CHECK_THROWS_AS(validate_config(bad), ConfigError);
}

TEST_CASE("confusion matrix: diagonal, constant column and toy retrain row") {
  std::map<int, LabeledDataset> split;
  LabeledDataset a;
  a.features.resize(3, 2);
  a.features << 1, 0, 2, 0, 3, 0;
  a.labels.resize(3);
  a.labels << 0, 0, 0;
  a.class_ids = {0, 1};
  LabeledDataset b;
  b.features.resize(2, 2);
  b.features << -1, 0, -2, 0;
  b.labels.resize(2);
  b.labels << 1, 1;
  b.class_ids = {0, 1};
  split[0] = a;
  split[1] = b;

  Eigen::MatrixXd w(2, 2);
  w << 1, 0, -1, 0;
  ClassifierModel perfect = linear_model(w, Eigen::VectorXd::Zero(2));
  Eigen::MatrixXi m = confusion_matrix(perfect, split);
  REQUIRE(m.rows() == 2);
  CHECK(m(0, 0) == 3);
  CHECK(m(0, 1) == 0);
  CHECK(m(1, 0) == 0);
  CHECK(m(1, 1) == 2);

  Eigen::VectorXd bias(2);
  bias << 10.0, 0.0;
  ClassifierModel constant = linear_model(Eigen::MatrixXd::Zero(2, 2), bias);
  Eigen::MatrixXi c = confusion_matrix(constant, split);
  CHECK(c(0, 0) == 3);
  CHECK(c(1, 0) == 2);
  CHECK(c.col(1).sum() == 0);

  split[1].features.resize(0, 2);
  split[1].labels.resize(0);
  CHECK_THROWS_AS(confusion_matrix(perfect, split), UsageError);

  // the toy retrain oracle hands the forgotten class to its near neighbour
  ExperimentConfig cfg = small_toy_config(fresh_dir("ulab_harness_conf"));
  ExperimentContext ctx = build_context(cfg);
  Eigen::MatrixXi toy = confusion_matrix(ctx.retrain_bank[0], ctx.split.test_by_class);
  CHECK(toy.row(1).sum() == ctx.split.test_by_class.at(1).size());
  CHECK(toy(1, 1) == 0);
  CHECK(toy(1, 0) > toy(1, 2));
}

TEST_CASE("reassignment report: ordering, normalization and errors") {
  LabeledDataset forget;
  forget.features.resize(4, 2);
  forget.features << 1, 0, 2, 0, -1, 0, -2, 0;
  forget.labels.resize(4);
  forget.labels << 1, 1, 1, 1;
  forget.class_ids = {0, 1, 2};

  Eigen::VectorXd bias(3);
  bias << 0.0, 0.0, 5.0;
  ClassifierModel constant = linear_model(Eigen::MatrixXd::Zero(3, 2), bias);
  auto entries = reassignment_report(constant, forget);
  REQUIRE(entries.size() == 1);
  CHECK(entries[0].class_id == 2);
  CHECK(entries[0].count == 4);
  CHECK(entries[0].fraction == 1.0);

  Eigen::MatrixXd w(3, 2);
  w << 1, 0, -1, 0, 0, 0;
  auto tied = reassignment_report(linear_model(w, Eigen::VectorXd::Zero(3)), forget);
  REQUIRE(tied.size() == 2);
  CHECK(tied[0].class_id == 0);  // equal counts fall back to ascending class id
  CHECK(tied[1].class_id == 1);
  CHECK(tied[0].fraction + tied[1].fraction == 1.0);

  LabeledDataset empty;
  empty.features.resize(0, 2);
  empty.class_ids = {0, 1, 2};
  CHECK_THROWS_AS(reassignment_report(constant, empty), UsageError);
}

TEST_CASE("ablate_beta: grid bookkeeping and the beta-zero identity") {
  const fs::path out = fresh_dir("ulab_harness_ablate");
  ExperimentConfig cfg = small_toy_config(out);
  cfg.seeds = {1, 2};
  const std::vector<double> betas{0.0, 10.0};
  std::vector<AblationRow> rows = ablate_beta(cfg, betas, 2);
  REQUIRE(rows.size() == 4);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].beta == betas[i / 2]);
    CHECK(rows[i].row.method == "trw");
    CHECK(rows[i].row.error.empty());
  }
  CHECK(fs::exists(out / "ablation.csv"));
  CHECK(fs::exists(out / "ablation.json"));
  const std::string csv = slurp(out / "ablation.csv");
  CHECK(csv.rfind("beta,method,seed,", 0) == 0);

  // the ablation cell is exactly the plain TRW cell at that beta
  ExperimentContext ctx = build_context(cfg);
  UnlearnConfig tmpl = cfg.methods[2];
  tmpl.beta = 0.0;
  MetricsRow direct = run_cell(ctx, tmpl, 1);
  CHECK(same_numeric_fields(direct, rows[0].row));

  CHECK_THROWS_AS(ablate_beta(cfg, {}, 1), UsageError);
  ExperimentConfig no_trw = cfg;
  no_trw.methods.resize(2);  // retrain + original only
  CHECK_THROWS_AS(ablate_beta(no_trw, betas, 1), ConfigError);
}

TEST_CASE("multiclass: reduction to one class, two-class toy5, and limits") {
  // single forget class: identical to the plain experiment rows
  const fs::path out_a = fresh_dir("ulab_harness_multi_a");
  const fs::path out_b = fresh_dir("ulab_harness_multi_b");
  ExperimentConfig cfg = small_toy_config(out_a);
  cfg.methods = {cfg.methods[2]};  // trw only
  ExperimentResult plain = run_experiment(cfg, 1);
  ExperimentConfig cfg_b = cfg;
  cfg_b.output_dir = out_b;
  MulticlassResult reduced = run_multiclass(cfg_b, 1);
  REQUIRE(reduced.rows.size() == plain.rows.size());
  for (std::size_t i = 0; i < plain.rows.size(); ++i) {
    CHECK(same_numeric_fields(reduced.rows[i], plain.rows[i]));
  }
  REQUIRE(reduced.per_class_acc_f.size() == 1);
  CHECK(reduced.per_class_acc_f[0].first == 1);

  // five-class toy via a gaussian spec file, forgetting two classes
  const fs::path out5 = fresh_dir("ulab_harness_multi5");
  ExperimentConfig five = default_toy_config();
  five.dataset = DatasetKind::kGaussianSpecFile;
  five.gaussian_spec_file = write_toy5_spec_file(out5);
  five.architecture = {2, 24, 5};
  five.forget_classes = {1, 3};
  five.seeds = {1, 2};
  five.n_retrain_models = 2;
  five.train.epochs = 60;
  five.methods[0].epochs = 30;
  five.output_dir = out5;
  MulticlassResult res = run_multiclass(five, 2);
  REQUIRE(res.rows.size() == 2);
  for (const MetricsRow& r : res.rows) {
    CHECK(r.error.empty());
    CHECK(r.acc_r >= 0.85);
    CHECK(r.acc_f <= 0.1);
  }
  REQUIRE(res.per_class_acc_f.size() == 2);
  CHECK(res.per_class_acc_f[0].first == 1);
  CHECK(res.per_class_acc_f[1].first == 3);
  CHECK(res.per_class_acc_f[0].second <= 0.1);
  CHECK(res.per_class_acc_f[1].second <= 0.1);
  CHECK(fs::exists(out5 / "multiclass.csv"));
  CHECK(fs::exists(out5 / "multiclass.json"));

  // forgetting down to a single survivor is rejected before any training
  ExperimentConfig starving = small_toy_config(fresh_dir("ulab_harness_multi_c"));
  starving.forget_classes = {0, 1};
  CHECK_THROWS_AS(run_multiclass(starving, 1), ConfigError);
}

TEST_CASE("toy boundary: grids, agreement summary and determinism") {
  const fs::path out1 = fresh_dir("ulab_harness_toy1");
  const fs::path out2 = fresh_dir("ulab_harness_toy2");
  ExperimentConfig cfg = small_toy_config(out1);
  cfg.methods = {cfg.methods[2]};  // trw template
  cfg.methods[0].epochs = 25;
  cfg.seeds = {1, 2};
  cfg.toy.grid_resolution = 21;
  ToyBoundarySummary sum = emit_toy_boundary(cfg, 2);
  REQUIRE(sum.per_seed.size() == 2);
  CHECK(sum.grid_resolution == 21);
  CHECK(sum.x_min < sum.x_max);
  CHECK(sum.y_min < sum.y_max);
  for (const auto& s : sum.per_seed) {
    CHECK(s.original_agreement > 0.0);
    CHECK(s.original_agreement <= 1.0);
    CHECK(s.beta0_agreement > 0.0);
    CHECK(s.tilted_agreement > 0.0);
  }
  CHECK(sum.mean_tilted ==
        doctest::Approx((sum.per_seed[0].tilted_agreement + sum.per_seed[1].tilted_agreement) /
                        2));
  for (const char* name : {"original.csv", "retrain.csv", "beta0.csv", "tilted.csv",
                           "agreement.json"}) {
    CAPTURE(name);
    CHECK(fs::exists(out1 / "seed_1" / name));
    CHECK(fs::exists(out1 / "seed_2" / name));
  }
  // exactly resolution^2 grid rows under the header
  const std::string grid = slurp(out1 / "seed_1" / "tilted.csv");
  CHECK(std::count(grid.begin(), grid.end(), '\n') == 21 * 21 + 1);
  CHECK(grid.rfind("x,y,predictedClass\n", 0) == 0);
  json summary = json::parse(slurp(out1 / "boundary_summary.json"));
  CHECK(summary["gridResolution"] == 21);
  CHECK(summary["perSeed"].size() == 2);

  ExperimentConfig cfg2 = cfg;
  cfg2.output_dir = out2;
  emit_toy_boundary(cfg2, 1);
  CHECK(slurp(out1 / "boundary_summary.json") == slurp(out2 / "boundary_summary.json"));
  CHECK(slurp(out1 / "seed_2" / "tilted.csv") == slurp(out2 / "seed_2" / "tilted.csv"));

  ExperimentConfig multi = cfg;
  multi.forget_classes = {0, 1};
  CHECK_THROWS_AS(emit_toy_boundary(multi, 1), UsageError);
  ExperimentConfig no_trw = cfg;
  no_trw.methods[0].method = Method::kFt;
  CHECK_THROWS_AS(emit_toy_boundary(no_trw, 1), ConfigError);
}

TEST_CASE("gaussian spec files: loading and malformed input") {
  const fs::path dir = fresh_dir("ulab_harness_gspec");
  ExperimentConfig cfg = default_toy_config();
  cfg.dataset = DatasetKind::kGaussianSpecFile;
  cfg.gaussian_spec_file = write_toy5_spec_file(dir);
  LoadedData data = load_experiment_data(cfg);
  CHECK(data.train.num_classes() == 5);
  CHECK(data.test.num_classes() == 5);
  CHECK(data.train.size() == 5 * 120);
  CHECK(data.test.size() == 5 * 400);
  LoadedData again = load_experiment_data(cfg);
  CHECK(data.train.features == again.train.features);

  auto write_file = [&](const std::string& content) {
    fs::path p = dir / "bad.json";
    std::ofstream out(p);
    out << content;
    ExperimentConfig c = cfg;
    c.gaussian_spec_file = p;
    return c;
  };
  const std::string mix = mixture_to_json(toy5_train_spec(1));
  CHECK_THROWS_AS(load_experiment_data(write_file("{oops")), FormatError);
  CHECK_THROWS_AS(load_experiment_data(write_file("{\"train\": " + mix + "}")), FormatError);
  CHECK_THROWS_AS(load_experiment_data(
                      write_file("{\"train\": " + mix + ", \"test\": " + mix +
                                 ", \"extra\": 1}")),
                  FormatError);
  CHECK_THROWS_AS(
      load_experiment_data(write_file(
          R"({"train": {"seed": 1, "classes": [{"mean": [0, 0], "covDiag": [1], "count": 5}]},
              "test": {"seed": 2, "classes": [{"mean": [0, 0], "covDiag": [1, 1], "count": 5}]}})")),
      FormatError);
  CHECK_THROWS_AS(
      load_experiment_data(write_file(
          R"({"train": {"seed": 1, "classes": [{"mean": [0, 0], "covDiag": [1, 1], "count": 0}]},
              "test": {"seed": 2, "classes": [{"mean": [0, 0], "covDiag": [1, 1], "count": 5}]}})")),
      FormatError);
  CHECK_THROWS_AS(
      load_experiment_data(write_file(
          R"({"train": {"seed": 1, "classes": [{"mean": [0, 0], "covDiag": [1, -1], "count": 5}]},
              "test": {"seed": 2, "classes": [{"mean": [0, 0], "covDiag": [1, 1], "count": 5}]}})")),
      FormatError);
  CHECK_THROWS_AS(
      load_experiment_data(write_file(
          R"({"train": {"seed": 1, "classes": [{"mean": [0, 0], "covDiag": [1, 1], "count": 5}]},
              "test": {"seed": 2, "classes": [{"mean": [0], "covDiag": [1], "count": 5},
                                              {"mean": [1], "covDiag": [1], "count": 5}]}})")),
      FormatError);
}

TEST_CASE("mnist idx datasets: loading, subsampling and a tiny sweep") {
  const fs::path dir = fresh_dir("ulab_harness_idx");
  // the idx loader fixes the vocabulary at 0..9, so the synthetic corpus
  // needs every digit class present
  const int train_n = 30, test_n = 20, dim = 16;
  Eigen::MatrixXd train_x(train_n, dim), test_x(test_n, dim);
  Eigen::VectorXi train_y(train_n), test_y(test_n);
  rng::Prng prng(5);
  auto fill = [&](Eigen::MatrixXd& x, Eigen::VectorXi& y) {
    for (int i = 0; i < x.rows(); ++i) {
      const int cls = i % 10;
      y[i] = cls;
      for (int d = 0; d < dim; ++d) {
        const double base = (d % 10 == cls) ? 0.9 : 0.1;
        x(i, d) = std::clamp(base + 0.05 * prng.normal(), 0.0, 1.0);
      }
    }
  };
  fill(train_x, train_y);
  fill(test_x, test_y);
  write_idx(train_x, train_y, 4, 4, dir / "train-images", dir / "train-labels");
  write_idx(test_x, test_y, 4, 4, dir / "test-images", dir / "test-labels");

  ExperimentConfig cfg = default_toy_config();
  cfg.dataset = DatasetKind::kMnistIdx;
  cfg.mnist.images_train = dir / "train-images";
  cfg.mnist.labels_train = dir / "train-labels";
  cfg.mnist.images_test = dir / "test-images";
  cfg.mnist.labels_test = dir / "test-labels";
  LoadedData data = load_experiment_data(cfg);
  CHECK(data.train.size() == train_n);
  CHECK(data.test.size() == test_n);
  CHECK(data.train.dim() == dim);

  cfg.mnist.train_per_class = 2;
  cfg.mnist.test_per_class = 1;
  LoadedData sub = load_experiment_data(cfg);
  CHECK(sub.train.size() == 20);
  CHECK(sub.test.size() == 10);

  cfg.mnist.train_per_class = 0;
  cfg.mnist.test_per_class = 0;
  cfg.architecture = {16, 8, 10};
  cfg.forget_classes = {1};
  cfg.seeds = {1};
  cfg.n_retrain_models = 1;
  cfg.train.epochs = 40;
  cfg.train.learning_rate = 0.5;
  cfg.methods.clear();
  UnlearnConfig retrain;
  retrain.method = Method::kRetrain;
  cfg.methods = {retrain};
  cfg.output_dir = dir / "out";
  ExperimentResult res = run_experiment(cfg, 1);
  REQUIRE(res.rows.size() == 1);
  CHECK(res.rows[0].error.empty());
  CHECK(res.rows[0].acc_f == 0.0);
}
