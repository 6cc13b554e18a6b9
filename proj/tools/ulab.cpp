// Command-line front end: config-driven experiment sweeps plus one-off
// train/eval/attack runs on saved models.

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ulab/attack.hpp"
#include "ulab/errors.hpp"
#include "ulab/harness.hpp"
#include "ulab/model.hpp"
#include "ulab/unlearn.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

struct GlobalArgs {
  std::string config_path;
  std::string out_override;
  std::uint64_t seed_override = 0;
  bool has_seed_override = false;
  int jobs = 1;
};

ulab::ExperimentConfig load_with_overrides(const GlobalArgs& args) {
  if (args.config_path.empty()) throw ulab::ConfigError("--config is required");
  ulab::ExperimentConfig cfg = ulab::load_config(args.config_path);
  if (args.has_seed_override) cfg.seeds = {args.seed_override};
  if (!args.out_override.empty()) cfg.output_dir = args.out_override;
  return cfg;
}

void print_rows(const std::vector<ulab::MetricsRow>& rows) {
  std::printf("%s\n", ulab::kMetricsCsvHeader);
  for (const ulab::MetricsRow& r : rows) {
    if (!r.error.empty()) {
      std::printf("%s,%llu,ERROR: %s\n", r.method.c_str(),
                  static_cast<unsigned long long>(r.seed), r.error.c_str());
      continue;
    }
    std::printf("%s,%llu,%.4f,%.4f,%.2f,%.4f,%.4f,%.4f,%.3f\n", r.method.c_str(),
                static_cast<unsigned long long>(r.seed), r.acc_r, r.acc_f, r.mia, r.mia_nn,
                r.mia_nn_gap, r.ulira, r.runtime_s);
  }
}

int cmd_train(const GlobalArgs& args) {
  ulab::ExperimentConfig cfg = load_with_overrides(args);
  ulab::ExperimentContext ctx = ulab::build_context(cfg);
  fs::create_directories(cfg.output_dir);
  ulab::save_model(ctx.original, cfg.output_dir / "original.model");
  for (std::size_t j = 0; j < ctx.retrain_bank.size(); ++j) {
    ulab::save_model(ctx.retrain_bank[j],
                     cfg.output_dir / ("retrain_bank_" + std::to_string(j) + ".model"));
  }
  std::printf("original: acc_r=%.4f acc_f=%.4f (saved to %s)\n",
              ulab::eval_accuracy(ctx.original, ctx.retained_test),
              ulab::eval_accuracy(ctx.original, ctx.forget_test),
              cfg.output_dir.string().c_str());
  return 0;
}

int cmd_unlearn(const GlobalArgs& args) {
  ulab::ExperimentConfig cfg = load_with_overrides(args);
  ulab::ExperimentResult res = ulab::run_experiment(cfg, args.jobs);
  print_rows(res.rows);
  std::printf("wrote %s (%d/%d cells ok)\n", (cfg.output_dir / "results.csv").string().c_str(),
              res.total_cells - res.failed_cells, res.total_cells);
  if (res.failed_cells == res.total_cells) return 4;
  return 0;
}

int cmd_attack(const GlobalArgs& args, const std::string& model_path) {
  ulab::ExperimentConfig cfg = load_with_overrides(args);
  ulab::ClassifierModel target = ulab::load_model(model_path);
  ulab::ExperimentContext ctx = ulab::build_context(cfg);
  fs::create_directories(cfg.output_dir);
  ordered_json doc = ordered_json::array();
  for (int f : ctx.split.forget_classes) {
    ulab::AttackReport report = ulab::run_miann(target, ctx.retrain_bank, ctx.split, f,
                                                ctx.attack_seed);
    ordered_json entry = ordered_json::parse(ulab::attack_report_to_json(report));
    entry["forgetClass"] = f;
    entry["basicMia"] = ulab::basic_mia_score(target, ctx.split, f);
    doc.push_back(std::move(entry));
    std::printf("class %d: mia_nn=%.4f gap=%.4f basic_mia=%.2f (nn=%d)\n", f, report.target_acc,
                report.gap, entry["basicMia"].get<double>(), report.nearest_neighbor);
  }
  ulab::write_text_atomic(cfg.output_dir / "attack.json", doc.dump(2) + "\n");
  return 0;
}

int cmd_eval(const GlobalArgs& args, const std::string& model_path) {
  ulab::ExperimentConfig cfg = load_with_overrides(args);
  ulab::ClassifierModel model = ulab::load_model(model_path);
  ulab::LoadedData data = ulab::load_experiment_data(cfg);
  ulab::SplitDataset split = ulab::split_forget(data.train, data.test, cfg.forget_classes);
  const double acc_r = ulab::eval_accuracy(model, split.retained_test_except(-1));
  Eigen::MatrixXi confusion = ulab::confusion_matrix(model, split.test_by_class);

  ordered_json doc;
  doc["accR"] = acc_r;
  ordered_json forget = ordered_json::object();
  for (int f : split.forget_classes) {
    const ulab::LabeledDataset& ftest = split.test_by_class.at(f);
    ordered_json entry;
    entry["accF"] = ulab::eval_accuracy(model, ftest);
    ordered_json reassigned = ordered_json::array();
    for (const ulab::ReassignmentEntry& e : ulab::reassignment_report(model, ftest)) {
      reassigned.push_back({{"class", e.class_id},
                            {"count", e.count},
                            {"percent", 100.0 * e.fraction}});
    }
    entry["reassignedTo"] = std::move(reassigned);
    forget[std::to_string(f)] = std::move(entry);
  }
  doc["forgetClasses"] = std::move(forget);
  ordered_json rows = ordered_json::array();
  for (int i = 0; i < confusion.rows(); ++i) {
    ordered_json row = ordered_json::array();
    for (int j = 0; j < confusion.cols(); ++j) row.push_back(confusion(i, j));
    rows.push_back(std::move(row));
  }
  doc["confusionMatrix"] = std::move(rows);
  fs::create_directories(cfg.output_dir);
  ulab::write_text_atomic(cfg.output_dir / "eval.json", doc.dump(2) + "\n");
  std::printf("%s\n", doc.dump(2).c_str());
  return 0;
}

int cmd_toy(const GlobalArgs& args) {
  ulab::ExperimentConfig cfg = load_with_overrides(args);
  ulab::ToyBoundarySummary summary = ulab::emit_toy_boundary(cfg, args.jobs);
  std::printf("agreement with retrain over %zu seeds: original=%.4f beta0=%.4f tilted=%.4f\n",
              summary.per_seed.size(), summary.mean_original, summary.mean_beta0,
              summary.mean_tilted);
  return 0;
}

int cmd_ablate(const GlobalArgs& args, const std::vector<double>& betas) {
  ulab::ExperimentConfig cfg = load_with_overrides(args);
  std::vector<ulab::AblationRow> rows = ulab::ablate_beta(cfg, betas, args.jobs);
  int failed = 0;
  std::printf("beta,%s\n", ulab::kMetricsCsvHeader);
  for (const ulab::AblationRow& r : rows) {
    if (!r.row.error.empty()) {
      ++failed;
      std::printf("%.3g,%s,%llu,ERROR: %s\n", r.beta, r.row.method.c_str(),
                  static_cast<unsigned long long>(r.row.seed), r.row.error.c_str());
      continue;
    }
    std::printf("%.3g,%s,%llu,%.4f,%.4f,%.2f,%.4f,%.4f,,%.3f\n", r.beta, r.row.method.c_str(),
                static_cast<unsigned long long>(r.row.seed), r.row.acc_r, r.row.acc_f, r.row.mia,
                r.row.mia_nn, r.row.mia_nn_gap, r.row.runtime_s);
  }
  if (failed == static_cast<int>(rows.size())) return 4;
  return 0;
}

int cmd_multiclass(const GlobalArgs& args) {
  ulab::ExperimentConfig cfg = load_with_overrides(args);
  ulab::MulticlassResult res = ulab::run_multiclass(cfg, args.jobs);
  print_rows(res.rows);
  for (const auto& [cls, acc] : res.per_class_acc_f) {
    std::printf("forget class %d: acc_f=%.4f\n", cls, acc);
  }
  int failed = 0;
  for (const ulab::MetricsRow& r : res.rows) {
    if (!r.error.empty()) ++failed;
  }
  if (failed == static_cast<int>(res.rows.size())) return 4;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class-unlearning laboratory: tilted reweighting, baselines and attacks"};
  app.require_subcommand(1);

  GlobalArgs args;
  app.add_option("--config", args.config_path, "JSON experiment config")->expected(1);
  auto* seed_opt =
      app.add_option("--seed", args.seed_override, "replace the config seed list with one seed");
  app.add_option("--out", args.out_override, "override the config outputDir");
  app.add_option("--jobs", args.jobs, "worker threads for independent cells")
      ->check(CLI::PositiveNumber);

  CLI::App* train = app.add_subcommand("train", "train the original model and retrain bank");
  CLI::App* unlearn = app.add_subcommand("unlearn", "full sweep: every method x every seed");
  CLI::App* attack = app.add_subcommand("attack", "run the attacks against a saved model");
  std::string attack_model;
  attack->add_option("--model", attack_model, "target model file")->required();
  CLI::App* eval = app.add_subcommand("eval", "accuracy, confusion and reassignment report");
  std::string eval_model;
  eval->add_option("--model", eval_model, "model file to evaluate")->required();
  CLI::App* toy = app.add_subcommand("toy", "emit decision-boundary grids for the toy data");
  CLI::App* ablate = app.add_subcommand("ablate", "sweep the tilt strength beta");
  std::vector<double> betas{0.0, 5.0, 10.0, 20.0};
  ablate->add_option("--betas", betas, "beta grid")->expected(-1);
  CLI::App* multiclass = app.add_subcommand("multiclass", "forget several classes at once");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  args.has_seed_override = seed_opt->count() > 0;

  try {
    if (train->parsed()) return cmd_train(args);
    if (unlearn->parsed()) return cmd_unlearn(args);
    if (attack->parsed()) return cmd_attack(args, attack_model);
    if (eval->parsed()) return cmd_eval(args, eval_model);
    if (toy->parsed()) return cmd_toy(args);
    if (ablate->parsed()) return cmd_ablate(args, betas);
    if (multiclass->parsed()) return cmd_multiclass(args);
  } catch (const ulab::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const ulab::UsageError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const ulab::FormatError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const ulab::DivergenceError& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return 4;
  } catch (const ulab::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
