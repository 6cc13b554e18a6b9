#include "ulab/trw.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ulab/errors.hpp"

namespace ulab {

namespace {

constexpr double kDegenerateMass = 1e-9;

int index_of_class(const ProbVector& p, int cls) {
  for (std::size_t i = 0; i < p.class_ids.size(); ++i) {
    if (p.class_ids[i] == cls) return static_cast<int>(i);
  }
  throw UsageError("class " + std::to_string(cls) + " not in distribution");
}

// Scores aligned with p's slots; forget slot and zero-mass slots get NaN when
// absent from the profile, which is an error only if that slot carries mass.
Eigen::VectorXd aligned_scores(const ProbVector& p, const SimilarityProfile& s) {
  Eigen::VectorXd out(p.size());
  for (int i = 0; i < p.size(); ++i) {
    const int cls = p.class_ids[static_cast<std::size_t>(i)];
    const auto it = s.scores.find(cls);
    if (it == s.scores.end()) {
      if (cls != s.forget_class && p.mass(i) > 0.0) {
        throw UsageError("similarity profile has no score for class " + std::to_string(cls));
      }
      out(i) = std::numeric_limits<double>::quiet_NaN();
    } else {
      out(i) = it->second;
    }
  }
  return out;
}

void require_zero_on_forget(const ProbVector& ptilde, int f) {
  const int fi = index_of_class(ptilde, f);
  if (ptilde.mass(fi) != 0.0) {
    throw UsageError("distribution still carries mass " + std::to_string(ptilde.mass(fi)) +
                     " on the forget class");
  }
}

}  // namespace

ProbVector reweight(const ProbVector& p, int f) {
  check_prob(p);
  const int fi = index_of_class(p, f);
  const double pf = p.mass(fi);
  if (pf >= 1.0 - kDegenerateMass) {
    throw DegenerateMassError("reweight: forget class holds " + std::to_string(pf) +
                              " of the mass");
  }
  ProbVector out;
  out.class_ids = p.class_ids;
  out.mass = p.mass;
  out.mass(fi) = 0.0;
  // dividing by the directly summed retained mass (= 1 - p(f)) keeps the
  // result normalized even when p(f) is close to the degeneracy cutoff
  out.mass /= out.mass.sum();
  return out;
}

SimilarityProfile similarity_scores(const ClassifierModel& model, int f, int d_prime,
                                    double temperature) {
  if (model.layers.empty()) throw UsageError("similarity_scores: empty model");
  const Eigen::MatrixXd& w = model.layers.back().weights;  // K x d
  const int k = static_cast<int>(w.rows());
  const int d = static_cast<int>(w.cols());
  if (k < 2) throw UsageError("similarity_scores: need at least two classes");
  if (f < 0 || f >= k) throw UsageError("similarity_scores: forget class out of range");
  if (temperature <= 0.0) throw ConfigError("similarity_scores: temperature must be > 0");
  if (d_prime == -1) d_prime = std::min(k, 16);
  d_prime = std::min(d_prime, d);
  if (d_prime < 1 || d_prime > std::min(d, k)) {
    throw ConfigError("similarity_scores: d_prime must be in [1, min(d, K)]");
  }

  // PCA over the K per-class weight vectors.
  const Eigen::RowVectorXd mean = w.colwise().mean();
  const Eigen::MatrixXd centered = w.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(k);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericError("similarity_scores: PCA failed");
  // eigenvalues ascend; take the trailing d_prime columns.
  const Eigen::MatrixXd basis = eig.eigenvectors().rightCols(d_prime);

  const Eigen::MatrixXd projected = w * basis;  // K x d_prime, uncentered vectors
  const Eigen::VectorXd phi_f = projected.row(f).transpose();
  const double nf = phi_f.norm();
  if (nf == 0.0) {
    throw DegenerateGeometryError("similarity_scores: projected forget vector has zero norm");
  }

  SimilarityProfile profile;
  profile.d_prime = d_prime;
  profile.temperature = temperature;
  profile.forget_class = f;
  Eigen::VectorXd cosines(k);
  for (int y = 0; y < k; ++y) {
    if (y == f) continue;
    const Eigen::VectorXd phi_y = projected.row(y).transpose();
    const double ny = phi_y.norm();
    if (ny == 0.0) {
      throw DegenerateGeometryError("similarity_scores: projected vector for class " +
                                    std::to_string(y) + " has zero norm");
    }
    cosines(y) = std::clamp(phi_y.dot(phi_f) / (ny * nf), -1.0, 1.0);
    profile.raw_cosines[y] = cosines(y);
  }

  double mx = -std::numeric_limits<double>::infinity();
  for (int y = 0; y < k; ++y) {
    if (y != f) mx = std::max(mx, cosines(y) / temperature);
  }
  double z = 0.0;
  for (int y = 0; y < k; ++y) {
    if (y != f) z += std::exp(cosines(y) / temperature - mx);
  }
  for (int y = 0; y < k; ++y) {
    if (y != f) profile.scores[y] = std::exp(cosines(y) / temperature - mx) / z;
  }
  return profile;
}

SimilarityProfile centroid_similarity_profile(const LabeledDataset& train, int f,
                                              double temperature) {
  if (train.size() == 0) throw UsageError("centroid_similarity_profile: empty dataset");
  if (temperature <= 0.0) {
    throw ConfigError("centroid_similarity_profile: temperature must be > 0");
  }
  const int k = train.num_classes();
  if (f < 0 || f >= k) {
    throw UsageError("centroid_similarity_profile: forget class out of range");
  }

  Eigen::MatrixXd centroid = Eigen::MatrixXd::Zero(k, train.dim());
  Eigen::VectorXd count = Eigen::VectorXd::Zero(k);
  for (int i = 0; i < train.size(); ++i) {
    centroid.row(train.labels[i]) += train.features.row(i);
    count(train.labels[i]) += 1.0;
  }
  if (count(f) == 0.0) {
    throw UsageError("centroid_similarity_profile: no samples for forget class " +
                     std::to_string(f));
  }
  const Eigen::RowVectorXd mu_f = centroid.row(f) / count(f);

  SimilarityProfile profile;
  profile.d_prime = static_cast<int>(train.dim());
  profile.temperature = temperature;
  profile.forget_class = f;
  std::map<int, double> inv_dist;
  double best = 0.0;
  for (int y = 0; y < k; ++y) {
    if (y == f || count(y) == 0.0) continue;
    const double dist = (centroid.row(y) / count(y) - mu_f).norm();
    if (dist == 0.0) {
      throw DegenerateGeometryError("centroid_similarity_profile: classes " +
                                    std::to_string(y) + " and " + std::to_string(f) +
                                    " share a centroid");
    }
    inv_dist[y] = 1.0 / dist;
    best = std::max(best, inv_dist[y]);
  }
  if (inv_dist.empty()) {
    throw UsageError("centroid_similarity_profile: no retained class has samples");
  }

  double z = 0.0;
  for (const auto& [y, v] : inv_dist) z += std::exp((v - best) / temperature);
  for (const auto& [y, v] : inv_dist) {
    profile.scores[y] = std::exp((v - best) / temperature) / z;
    profile.raw_cosines[y] = v / best;
  }
  return profile;
}

ProbVector tilt(const ProbVector& ptilde, const SimilarityProfile& s, double beta) {
  check_prob(ptilde);
  if (!std::isfinite(beta)) throw InvalidInputError("tilt: beta must be finite");
  require_zero_on_forget(ptilde, s.forget_class);
  const Eigen::VectorXd sc = aligned_scores(ptilde, s);

  double mx = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < ptilde.size(); ++i) {
    if (ptilde.mass(i) > 0.0) mx = std::max(mx, beta * sc(i));
  }
  if (!std::isfinite(mx)) throw InvalidInputError("tilt: all retained mass is zero");

  ProbVector out;
  out.class_ids = ptilde.class_ids;
  out.mass = Eigen::VectorXd::Zero(ptilde.size());
  double z = 0.0;
  for (int i = 0; i < ptilde.size(); ++i) {
    if (ptilde.mass(i) > 0.0) {
      out.mass(i) = ptilde.mass(i) * std::exp(beta * sc(i) - mx);
      z += out.mass(i);
    }
  }
  if (z <= 0.0) throw InvalidInputError("tilt: all retained mass is zero");
  out.mass /= z;
  return out;
}

double tilted_mean_similarity(const ProbVector& ptilde, const SimilarityProfile& s, double beta) {
  const ProbVector q = tilt(ptilde, s, beta);
  const Eigen::VectorXd sc = aligned_scores(q, s);
  double m = 0.0;
  for (int i = 0; i < q.size(); ++i) {
    if (q.mass(i) > 0.0) m += q.mass(i) * sc(i);
  }
  return m;
}

double solve_beta(const ProbVector& ptilde, const SimilarityProfile& s,
                  const MomentConstraint& constraint, double tol) {
  check_prob(ptilde);
  require_zero_on_forget(ptilde, s.forget_class);
  const Eigen::VectorXd sc = aligned_scores(ptilde, s);
  double lo_s = std::numeric_limits<double>::infinity();
  double hi_s = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < ptilde.size(); ++i) {
    if (ptilde.mass(i) > 0.0) {
      lo_s = std::min(lo_s, sc(i));
      hi_s = std::max(hi_s, sc(i));
    }
  }
  if (!(hi_s > lo_s)) {
    throw UsageError("solve_beta: scores are constant on the support");
  }
  const double c = constraint.c;
  if (!(c > lo_s && c < hi_s)) {
    throw OutOfHullError("solve_beta: target " + std::to_string(c) +
                         " not strictly inside [" + std::to_string(lo_s) + ", " +
                         std::to_string(hi_s) + "]");
  }

  auto m = [&](double beta) { return tilted_mean_similarity(ptilde, s, beta); };

  double a = -1.0, b = 1.0;
  int guard = 0;
  while (m(b) < c) {
    a = b;
    b *= 2.0;
    if (++guard > 200) throw NumericError("solve_beta: failed to bracket from above");
  }
  guard = 0;
  while (m(a) > c) {
    b = a;
    a *= 2.0;
    if (++guard > 200) throw NumericError("solve_beta: failed to bracket from below");
  }

  double mid = 0.5 * (a + b);
  for (int iter = 0; iter < 500; ++iter) {
    mid = 0.5 * (a + b);
    const double val = m(mid);
    if (std::abs(val - c) < tol) return mid;
    if (val < c) {
      a = mid;
    } else {
      b = mid;
    }
    if (b - a < 1e-16 * std::max(1.0, std::abs(a) + std::abs(b))) break;
  }
  if (std::abs(m(mid) - c) < std::max(tol, 1e-8)) return mid;
  throw NumericError("solve_beta: bisection stalled at residual " +
                     std::to_string(std::abs(m(mid) - c)));
}

namespace {

double kl_support(const Eigen::VectorXd& q, const Eigen::VectorXd& p) {
  double kl = 0.0;
  for (int i = 0; i < q.size(); ++i) {
    if (q(i) > 0.0) kl += q(i) * std::log(q(i) / p(i));
  }
  return kl;
}

}  // namespace

ProbVector iproj_oracle(const ProbVector& p, int f, const SimilarityProfile& s,
                        const MomentConstraint& constraint) {
  check_prob(p);
  if (p.size() > 5) throw UsageError("iproj_oracle: exhaustive oracle only supports K <= 5");
  const ProbVector ptilde = reweight(p, f);
  const Eigen::VectorXd sc = aligned_scores(ptilde, s);

  // q must stay inside the support of ptilde for finite divergence.
  std::vector<int> support;
  for (int i = 0; i < ptilde.size(); ++i) {
    if (ptilde.mass(i) > 0.0) support.push_back(i);
  }
  const double c = constraint.c;

  ProbVector out;
  out.class_ids = p.class_ids;
  out.mass = Eigen::VectorXd::Zero(p.size());

  if (support.size() == 1) {
    if (std::abs(sc(support[0]) - c) > 1e-9) {
      throw OutOfHullError("iproj_oracle: point-mass support cannot meet the constraint");
    }
    out.mass(support[0]) = 1.0;
    return out;
  }

  double lo_s = std::numeric_limits<double>::infinity();
  double hi_s = -std::numeric_limits<double>::infinity();
  for (int i : support) {
    lo_s = std::min(lo_s, sc(i));
    hi_s = std::max(hi_s, sc(i));
  }
  if (hi_s - lo_s < 1e-15) {
    // Constant scores: the constraint is either vacuous or impossible.
    if (std::abs(c - lo_s) > 1e-9) {
      throw OutOfHullError("iproj_oracle: constant scores cannot meet the constraint");
    }
    return ptilde;
  }
  if (!(c > lo_s && c < hi_s)) {
    throw OutOfHullError("iproj_oracle: target outside the score hull");
  }

  // Pivot on the extreme-score classes; grid the remaining free masses and
  // solve the 2x2 linear system (normalization + moment) for the pivots.
  int i_lo = support[0], i_hi = support[0];
  for (int i : support) {
    if (sc(i) < sc(i_lo)) i_lo = i;
    if (sc(i) > sc(i_hi)) i_hi = i;
  }
  std::vector<int> free;
  for (int i : support) {
    if (i != i_lo && i != i_hi) free.push_back(i);
  }

  const double s_lo = sc(i_lo), s_hi = sc(i_hi);
  double best_kl = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best = Eigen::VectorXd::Zero(p.size());
  bool found = false;

  auto consider = [&](const std::vector<double>& t) {
    double total = 0.0, moment = 0.0;
    for (std::size_t j = 0; j < free.size(); ++j) {
      total += t[j];
      moment += t[j] * sc(free[j]);
    }
    if (total > 1.0) return;
    const double b = ((c - moment) - (1.0 - total) * s_lo) / (s_hi - s_lo);
    const double a = (1.0 - total) - b;
    if (a < -1e-12 || b < -1e-12) return;
    Eigen::VectorXd q = Eigen::VectorXd::Zero(p.size());
    q(i_lo) = std::max(a, 0.0);
    q(i_hi) = std::max(b, 0.0);
    for (std::size_t j = 0; j < free.size(); ++j) q(free[j]) = t[j];
    const double kl = kl_support(q, ptilde.mass);
    if (kl < best_kl) {
      best_kl = kl;
      best = q;
      found = true;
    }
  };

  auto sweep = [&](const std::vector<double>& center, double half_width, double step) {
    std::vector<double> t(free.size(), 0.0);
    if (free.empty()) {
      consider(t);
      return;
    }
    std::vector<double> lo(free.size()), hi(free.size());
    for (std::size_t j = 0; j < free.size(); ++j) {
      lo[j] = std::max(0.0, center[j] - half_width);
      hi[j] = std::min(1.0, center[j] + half_width);
    }
    if (free.size() == 1) {
      for (double t0 = lo[0]; t0 <= hi[0] + 1e-15; t0 += step) {
        t[0] = std::min(t0, 1.0);
        consider(t);
      }
    } else {  // two free dimensions at most for K <= 5
      for (double t0 = lo[0]; t0 <= hi[0] + 1e-15; t0 += step) {
        for (double t1 = lo[1]; t1 <= hi[1] + 1e-15; t1 += step) {
          t[0] = std::min(t0, 1.0);
          t[1] = std::min(t1, 1.0);
          consider(t);
        }
      }
    }
  };

  std::vector<double> center(free.size(), 0.5);
  double half = 0.5, step = 1e-3;
  sweep(center, half, step);
  for (int round = 0; round < 3 && !free.empty(); ++round) {
    if (!found) break;
    for (std::size_t j = 0; j < free.size(); ++j) center[j] = best(free[j]);
    half = step * 2.0;
    step /= 10.0;
    sweep(center, half, step);
  }
  if (!found) throw OutOfHullError("iproj_oracle: no feasible grid point");
  out.mass = best;
  return out;
}

std::vector<ProbVector> build_forget_targets(const ClassifierModel& model,
                                             const Eigen::MatrixXd& forget_samples,
                                             const SimilarityProfile& scores,
                                             const TiltConfig& cfg) {
  if (forget_samples.rows() == 0) throw UsageError("build_forget_targets: no samples");
  const int f = scores.forget_class;
  if (f < 0 || f >= model.num_classes) {
    throw UsageError("build_forget_targets: profile forget class out of range");
  }
  const Eigen::MatrixXd logits = forward_batch(model, forget_samples);
  const Eigen::MatrixXd probs = softmax_rows(logits);

  std::vector<ProbVector> targets;
  targets.reserve(static_cast<std::size_t>(forget_samples.rows()));
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const ProbVector p = make_prob(probs.row(r).transpose());
    try {
      targets.push_back(tilt(reweight(p, f), scores, cfg.beta));
    } catch (const DegenerateMassError&) {
      // All mass on the forget class: fall back to the similarity scores.
      ProbVector fb;
      fb.class_ids = p.class_ids;
      fb.mass = Eigen::VectorXd::Zero(p.size());
      for (int i = 0; i < p.size(); ++i) {
        const auto it = scores.scores.find(fb.class_ids[static_cast<std::size_t>(i)]);
        if (it != scores.scores.end()) fb.mass(i) = it->second;
      }
      const double z = fb.mass.sum();
      if (z <= 0.0) throw InvalidInputError("build_forget_targets: empty fallback scores");
      fb.mass /= z;
      targets.push_back(std::move(fb));
    }
  }
  return targets;
}

double kl_divergence(const ProbVector& q, const ProbVector& p) {
  if (q.size() != p.size() || q.class_ids != p.class_ids) {
    throw ShapeError("kl_divergence: mismatched distributions");
  }
  double kl = 0.0;
  for (int i = 0; i < q.size(); ++i) {
    if (q.mass(i) > 0.0) {
      if (p.mass(i) <= 0.0) return std::numeric_limits<double>::infinity();
      kl += q.mass(i) * std::log(q.mass(i) / p.mass(i));
    }
  }
  return kl;
}

}  // namespace ulab
