#include "ulab/attack.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>

#include "json.hpp"
#include "ulab/errors.hpp"
#include "ulab/rng.hpp"

namespace ulab {

namespace {

// substream tag for the class-balanced negative subsampling
constexpr std::uint64_t kNnBalanceTag = 0x6e6e62616c616e63ull;
// pseudo model index for the attack-phase (target) classifier's subsample
constexpr std::uint64_t kTargetStream = 0xffffffffull;

std::uint64_t balance_seed(std::uint64_t seed, int class_id, std::uint64_t model_idx) {
  return rng::mix(rng::mix(seed, kNnBalanceTag),
                  (static_cast<std::uint64_t>(class_id) << 32) ^ model_idx);
}

}  // namespace

ThresholdClassifier fit_logit_classifier(const std::vector<double>& positives,
                                         const std::vector<double>& negatives) {
  if (positives.empty() || negatives.empty()) {
    throw UsageError("fit_logit_classifier: both classes need at least one value");
  }
  for (double v : positives) {
    if (!std::isfinite(v)) throw InvalidInputError("fit_logit_classifier: non-finite value");
  }
  for (double v : negatives) {
    if (!std::isfinite(v)) throw InvalidInputError("fit_logit_classifier: non-finite value");
  }

  std::vector<double> pos = positives;
  std::vector<double> neg = negatives;
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());

  std::vector<double> pooled;
  pooled.reserve(pos.size() + neg.size());
  pooled.insert(pooled.end(), pos.begin(), pos.end());
  pooled.insert(pooled.end(), neg.begin(), neg.end());
  std::sort(pooled.begin(), pooled.end());
  pooled.erase(std::unique(pooled.begin(), pooled.end()), pooled.end());

  ThresholdClassifier out;
  if (pooled.size() < 2) {
    out.threshold = pooled.front();
    out.above_is_positive = true;
    out.train_balanced_accuracy = 0.5;
    out.degenerate = true;
    return out;
  }

  const double np = static_cast<double>(pos.size());
  const double nn = static_cast<double>(neg.size());
  double best_acc = -1.0;
  for (std::size_t i = 0; i + 1 < pooled.size(); ++i) {
    const double t = std::midpoint(pooled[i], pooled[i + 1]);
    // strictly-greater counts on the sorted arrays
    const double pos_above =
        static_cast<double>(pos.end() - std::upper_bound(pos.begin(), pos.end(), t));
    const double neg_above =
        static_cast<double>(neg.end() - std::upper_bound(neg.begin(), neg.end(), t));
    const double acc_above = 0.5 * (pos_above / np + (nn - neg_above) / nn);
    const double acc_below = 0.5 * ((np - pos_above) / np + neg_above / nn);
    // candidates ascend, so earlier wins stand on ties; above beats below at
    // the same threshold and accuracy
    if (acc_above > best_acc) {
      best_acc = acc_above;
      out.threshold = t;
      out.above_is_positive = true;
    }
    if (acc_below > best_acc) {
      best_acc = acc_below;
      out.threshold = t;
      out.above_is_positive = false;
    }
  }
  out.train_balanced_accuracy = best_acc;
  out.degenerate = false;
  return out;
}

LogitTable logit_table(const ClassifierModel& model, const SplitDataset& split) {
  int total = 0;
  for (const auto& [cls, data] : split.test_by_class) total += data.size();
  if (total == 0) throw UsageError("logit_table: empty test set");

  LogitTable table;
  table.sample_ids.reserve(static_cast<std::size_t>(total));
  table.true_labels.resize(total);
  int row = 0;
  for (const auto& [cls, data] : split.test_by_class) {
    if (data.size() == 0) continue;
    const Eigen::MatrixXd block = forward_batch(model, data.features);
    if (table.logits.size() == 0) table.logits.resize(total, block.cols());
    table.logits.middleRows(row, block.rows()) = block;
    for (int i = 0; i < block.rows(); ++i) {
      table.sample_ids.push_back(row + i);
      table.true_labels(row + i) = cls;
    }
    row += static_cast<int>(block.rows());
  }
  return table;
}

namespace {

void append_double(std::string& out, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

double parse_double(const std::string& field, const std::filesystem::path& path) {
  double v = 0.0;
  auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc{} || res.ptr != field.data() + field.size()) {
    throw FormatError(path.string() + ": bad numeric field '" + field + "'");
  }
  return v;
}

long long parse_int(const std::string& field, const std::filesystem::path& path) {
  long long v = 0;
  auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc{} || res.ptr != field.data() + field.size()) {
    throw FormatError(path.string() + ": bad integer field '" + field + "'");
  }
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

void write_logit_csv(const LogitTable& table, const std::filesystem::path& path) {
  if (table.size() == 0) throw UsageError("write_logit_csv: empty table");
  std::string out = "sampleId,trueLabel";
  for (int k = 0; k < table.num_classes(); ++k) {
    out += ",logit_" + std::to_string(k);
  }
  out += "\n";
  for (int i = 0; i < table.size(); ++i) {
    out += std::to_string(table.sample_ids[static_cast<std::size_t>(i)]);
    out += ',';
    out += std::to_string(table.true_labels(i));
    for (int k = 0; k < table.num_classes(); ++k) {
      out += ',';
      append_double(out, table.logits(i, k));
    }
    out += '\n';
  }
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc | std::ios::binary);
    if (!f) throw FormatError("cannot write " + tmp.string());
    f << out;
  }
  std::filesystem::rename(tmp, path);
}

LogitTable read_logit_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw FormatError(path.string() + ": missing header");
  const auto header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "sampleId" || header[1] != "trueLabel") {
    throw FormatError(path.string() + ": bad header '" + line + "'");
  }
  const int k = static_cast<int>(header.size()) - 2;
  for (int i = 0; i < k; ++i) {
    if (header[static_cast<std::size_t>(i) + 2] != "logit_" + std::to_string(i)) {
      throw FormatError(path.string() + ": bad header '" + line + "'");
    }
  }

  std::vector<std::int64_t> ids;
  std::vector<int> labels;
  std::vector<double> values;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (static_cast<int>(fields.size()) != k + 2) {
      throw FormatError(path.string() + ": row " + std::to_string(ids.size() + 1) + " has " +
                        std::to_string(fields.size()) + " fields, expected " +
                        std::to_string(k + 2));
    }
    ids.push_back(parse_int(fields[0], path));
    labels.push_back(static_cast<int>(parse_int(fields[1], path)));
    for (int j = 0; j < k; ++j) {
      values.push_back(parse_double(fields[static_cast<std::size_t>(j) + 2], path));
    }
  }
  if (ids.empty()) throw FormatError(path.string() + ": no data rows");

  LogitTable table;
  table.sample_ids = std::move(ids);
  const int n = static_cast<int>(table.sample_ids.size());
  table.true_labels.resize(n);
  table.logits.resize(n, k);
  for (int i = 0; i < n; ++i) {
    table.true_labels(i) = labels[static_cast<std::size_t>(i)];
    for (int j = 0; j < k; ++j) {
      table.logits(i, j) = values[static_cast<std::size_t>(i) * k + static_cast<std::size_t>(j)];
    }
  }
  return table;
}

namespace {

std::vector<int> rows_with_label(const LogitTable& table, int label) {
  std::vector<int> rows;
  for (int i = 0; i < table.size(); ++i) {
    if (table.true_labels(i) == label) rows.push_back(i);
  }
  return rows;
}

// Positive examples: the class's own test logits. Negative examples: an
// equal-size draw spread as evenly as possible over the other retained
// classes (1-vs-rest is heavily imbalanced otherwise and the protocol leaves
// the handling open; balancing is the recorded choice).
std::vector<double> balanced_negatives(const LogitTable& table, int class_id,
                                       const std::vector<int>& retained, int want,
                                       std::uint64_t stream_seed) {
  std::vector<int> others;
  for (int c : retained) {
    if (c != class_id) others.push_back(c);
  }
  if (others.empty()) throw UsageError("balanced_negatives: no other retained class");

  rng::Prng prng(stream_seed);
  const int base = want / static_cast<int>(others.size());
  int extra = want % static_cast<int>(others.size());
  std::vector<double> negatives;
  for (int c : others) {
    const auto pool = rows_with_label(table, c);
    if (pool.empty()) {
      throw UsageError("balanced_negatives: no test rows for class " + std::to_string(c));
    }
    const int quota = base + (extra > 0 ? 1 : 0);
    if (extra > 0) --extra;
    const auto picks =
        prng.sample_without_replacement(pool.size(), static_cast<std::size_t>(quota));
    for (std::size_t p : picks) {
      negatives.push_back(table.logits(pool[p], class_id));
    }
  }
  return negatives;
}

struct FitOutcome {
  double forget_fraction = 0.0;
  bool degenerate = false;
};

// Fit class_id's threshold on one table, then measure the claimed fraction of
// forget-test rows.
FitOutcome class_accuracy_on_forget(const LogitTable& table, int class_id,
                                    const std::vector<int>& retained, int f,
                                    std::uint64_t stream_seed) {
  const auto own_rows = rows_with_label(table, class_id);
  if (own_rows.empty()) {
    throw UsageError("miann: no test rows for retained class " + std::to_string(class_id));
  }
  std::vector<double> positives;
  positives.reserve(own_rows.size());
  for (int r : own_rows) positives.push_back(table.logits(r, class_id));
  const auto negatives = balanced_negatives(table, class_id, retained,
                                            static_cast<int>(own_rows.size()), stream_seed);
  const ThresholdClassifier h = fit_logit_classifier(positives, negatives);

  const auto forget_rows = rows_with_label(table, f);
  if (forget_rows.empty()) throw UsageError("miann: empty forget test split");
  int claimed = 0;
  for (int r : forget_rows) claimed += h.predict(table.logits(r, class_id));
  return {static_cast<double>(claimed) / static_cast<double>(forget_rows.size()),
          h.degenerate};
}

struct NnOutcome {
  int nearest = -1;
  std::map<int, double> mean_acc;
  bool degenerate = false;
};

NnOutcome nearest_neighbor_impl(const std::vector<LogitTable>& retrain_tables,
                                const SplitDataset& split, int f, std::uint64_t seed) {
  if (retrain_tables.empty()) throw UsageError("nearest_neighbor_class: no retrain tables");
  if (split.forget_classes.count(f) == 0) {
    throw UsageError("nearest_neighbor_class: class " + std::to_string(f) +
                     " is not a forget class");
  }
  const auto retained = split.retained_classes();
  if (retained.size() < 2) {
    throw UsageError("nearest_neighbor_class: need at least two retained classes");
  }

  NnOutcome out;
  for (int ri : retained) {
    double total = 0.0;
    for (std::size_t j = 0; j < retrain_tables.size(); ++j) {
      const auto fit = class_accuracy_on_forget(retrain_tables[j], ri, retained, f,
                                                balance_seed(seed, ri, j));
      total += fit.forget_fraction;
      out.degenerate = out.degenerate || fit.degenerate;
    }
    out.mean_acc[ri] = total / static_cast<double>(retrain_tables.size());
  }
  // ascending map order makes the strict > a lowest-id tie-break
  double best = -1.0;
  for (const auto& [cls, acc] : out.mean_acc) {
    if (acc > best) {
      best = acc;
      out.nearest = cls;
    }
  }
  return out;
}

}  // namespace

std::pair<int, std::map<int, double>> nearest_neighbor_class(
    const std::vector<LogitTable>& retrain_tables, const SplitDataset& split, int f,
    std::uint64_t seed) {
  auto out = nearest_neighbor_impl(retrain_tables, split, f, seed);
  return {out.nearest, std::move(out.mean_acc)};
}

std::pair<int, std::map<int, double>> nearest_neighbor_class(
    const std::vector<ClassifierModel>& retrain_models, const SplitDataset& split, int f,
    std::uint64_t seed) {
  std::vector<LogitTable> tables;
  tables.reserve(retrain_models.size());
  for (const auto& m : retrain_models) tables.push_back(logit_table(m, split));
  return nearest_neighbor_class(tables, split, f, seed);
}

double miann_score(const LogitTable& target_table, int rn, const SplitDataset& split, int f,
                   std::uint64_t seed) {
  const auto retained = split.retained_classes();
  if (std::find(retained.begin(), retained.end(), rn) == retained.end()) {
    throw UsageError("miann_score: class " + std::to_string(rn) + " is not retained");
  }
  return class_accuracy_on_forget(target_table, rn, retained, f,
                                  balance_seed(seed, rn, kTargetStream))
      .forget_fraction;
}

double miann_score(const ClassifierModel& target, int rn, const SplitDataset& split, int f,
                   std::uint64_t seed) {
  return miann_score(logit_table(target, split), rn, split, f, seed);
}

AttackReport run_miann(const ClassifierModel& target,
                       const std::vector<ClassifierModel>& retrain_models,
                       const SplitDataset& split, int f, std::uint64_t seed) {
  std::vector<LogitTable> tables;
  tables.reserve(retrain_models.size());
  for (const auto& m : retrain_models) tables.push_back(logit_table(m, split));
  const auto nn = nearest_neighbor_impl(tables, split, f, seed);

  const LogitTable target_table = logit_table(target, split);
  const auto retained = split.retained_classes();
  const auto fit = class_accuracy_on_forget(target_table, nn.nearest, retained, f,
                                            balance_seed(seed, nn.nearest, kTargetStream));

  AttackReport report;
  report.per_class_mean_acc = nn.mean_acc;
  report.nearest_neighbor = nn.nearest;
  report.retrain_reference_acc = nn.mean_acc.at(nn.nearest);
  report.target_acc = fit.forget_fraction;
  report.gap = report.retrain_reference_acc - report.target_acc;
  report.n_retrain_models = static_cast<int>(retrain_models.size());
  report.degenerate_classifier = nn.degenerate || fit.degenerate;
  return report;
}

std::string attack_report_to_json(const AttackReport& report) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json acc;
  for (const auto& [cls, v] : report.per_class_mean_acc) {
    acc[std::to_string(cls)] = v;
  }
  j["perClassMeanAcc"] = acc;
  j["nearestNeighbor"] = report.nearest_neighbor;
  j["retrainReferenceAcc"] = report.retrain_reference_acc;
  j["targetAcc"] = report.target_acc;
  j["gap"] = report.gap;
  j["nRetrainModels"] = report.n_retrain_models;
  j["degenerateClassifier"] = report.degenerate_classifier;
  return j.dump(2) + "\n";
}

namespace {

std::vector<double> max_softmax_confidence(const ClassifierModel& m,
                                           const Eigen::MatrixXd& features) {
  const Eigen::MatrixXd p = softmax_rows(forward_batch(m, features));
  std::vector<double> conf(static_cast<std::size_t>(p.rows()));
  for (int i = 0; i < p.rows(); ++i) conf[static_cast<std::size_t>(i)] = p.row(i).maxCoeff();
  return conf;
}

}  // namespace

double basic_mia_score(const ClassifierModel& target, const SplitDataset& split, int f) {
  if (split.forget_classes.count(f) == 0) {
    throw UsageError("basic_mia_score: class " + std::to_string(f) + " is not a forget class");
  }
  LabeledDataset forget_train = split.forget_train;
  if (split.forget_classes.size() > 1) {
    forget_train = filter_class(split.forget_train, f);
  }
  if (forget_train.size() == 0) {
    throw UsageError("basic_mia_score: no forget-class training samples");
  }
  if (split.retain_train.size() == 0) {
    throw UsageError("basic_mia_score: empty retained training set");
  }
  const LabeledDataset nonmember = split.retained_test_except(-1);
  if (nonmember.size() == 0) throw UsageError("basic_mia_score: empty retained test set");

  const auto members = max_softmax_confidence(target, split.retain_train.features);
  const auto outsiders = max_softmax_confidence(target, nonmember.features);
  const ThresholdClassifier h = fit_logit_classifier(members, outsiders);

  const auto forget_conf = max_softmax_confidence(target, forget_train.features);
  int looks_unseen = 0;
  for (double c : forget_conf) looks_unseen += h.predict(c) == 0;
  return 100.0 * static_cast<double>(looks_unseen) / static_cast<double>(forget_conf.size());
}

namespace {

// forget logit minus the best retained logit, one row per sample
Eigen::VectorXd forget_margin(const ClassifierModel& m, const Eigen::MatrixXd& features,
                              int f) {
  const Eigen::MatrixXd z = forward_batch(m, features);
  if (f < 0 || f >= z.cols()) throw UsageError("ulira: forget class outside logit range");
  Eigen::VectorXd stat(z.rows());
  for (int i = 0; i < z.rows(); ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (int y = 0; y < z.cols(); ++y) {
      if (y != f) best = std::max(best, z(i, y));
    }
    stat(i) = z(i, f) - best;
  }
  return stat;
}

double log_gaussian(double x, double mean, double var) {
  return -0.5 * std::log(2.0 * std::numbers::pi * var) -
         (x - mean) * (x - mean) / (2.0 * var);
}

}  // namespace

double ulira_simplified(const ShadowSet& shadows, const ClassifierModel& target,
                        const SplitDataset& split, int f) {
  if (shadows.unlearned_models.empty() || shadows.retrain_models.empty()) {
    throw UsageError("ulira_simplified: both shadow arms must be nonempty");
  }
  const auto in_arm = [&](const std::vector<ClassifierModel>& arm) {
    for (const auto& m : arm) {
      if (models_equal(m, target)) return true;
    }
    return false;
  };
  const bool in_unlearned = in_arm(shadows.unlearned_models);
  const bool in_retrain = in_arm(shadows.retrain_models);
  if (in_unlearned == in_retrain) {
    throw UsageError(in_unlearned
                         ? "ulira_simplified: target appears in both shadow arms"
                         : "ulira_simplified: target is not a member of either shadow arm");
  }

  const auto it = split.test_by_class.find(f);
  if (it == split.test_by_class.end() || it->second.size() == 0) {
    throw UsageError("ulira_simplified: empty forget test split");
  }
  const Eigen::MatrixXd& forget_features = it->second.features;
  const int n_samples = static_cast<int>(forget_features.rows());

  // statistics per arm, leaving every copy of the target out of its own arm
  const auto arm_stats = [&](const std::vector<ClassifierModel>& arm, bool drop_target) {
    std::vector<Eigen::VectorXd> stats;
    for (const auto& m : arm) {
      if (drop_target && models_equal(m, target)) continue;
      stats.push_back(forget_margin(m, forget_features, f));
    }
    if (stats.size() < 2) {
      throw UsageError("ulira_simplified: fewer than two shadow models left in an arm");
    }
    return stats;
  };
  const auto unlearned = arm_stats(shadows.unlearned_models, in_unlearned);
  const auto retrained = arm_stats(shadows.retrain_models, in_retrain);
  const Eigen::VectorXd target_stat = forget_margin(target, forget_features, f);

  const auto fit = [](const std::vector<Eigen::VectorXd>& stats, int i) {
    double mean = 0.0;
    for (const auto& s : stats) mean += s(i);
    mean /= static_cast<double>(stats.size());
    double var = 0.0;
    for (const auto& s : stats) var += (s(i) - mean) * (s(i) - mean);
    var /= static_cast<double>(stats.size());
    return std::pair<double, double>(mean, std::max(var, 1e-6));
  };

  int correct = 0;
  for (int i = 0; i < n_samples; ++i) {
    const auto [mu_u, var_u] = fit(unlearned, i);
    const auto [mu_r, var_r] = fit(retrained, i);
    const bool say_unlearned =
        log_gaussian(target_stat(i), mu_u, var_u) > log_gaussian(target_stat(i), mu_r, var_r);
    correct += say_unlearned == in_unlearned;
  }
  return static_cast<double>(correct) / static_cast<double>(n_samples);
}

}  // namespace ulab
