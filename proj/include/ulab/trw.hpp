#pragma once

#include <Eigen/Dense>
#include <map>
#include <vector>

#include "ulab/dataset.hpp"
#include "ulab/model.hpp"
#include "ulab/prob.hpp"

namespace ulab {

// Class-similarity profile anchored at one forget class. `scores` is a
// softmax-normalized distribution over the retained classes (higher = more
// similar to the forget class); `raw_cosines` keeps the underlying cosine
// similarities of PCA-projected classifier weight vectors for inspection.
struct SimilarityProfile {
  std::map<int, double> scores;
  std::map<int, double> raw_cosines;
  int d_prime = 0;
  double temperature = 0.01;
  int forget_class = -1;
};

struct TiltConfig {
  double beta = 10.0;
};

// Target expected similarity for the moment-constrained projection.
struct MomentConstraint {
  double c = 0.0;
};

// Zeroes the forget class and renormalizes the remaining mass:
// out(y) = p(y) / (1 - p(f)) for y != f, out(f) = 0. The forget slot is kept
// explicitly so shapes never change downstream. Throws DegenerateMassError
// when p concentrates on f (p(f) >= 1 - 1e-9); callers fall back to the
// similarity scores as the target in that case.
ProbVector reweight(const ProbVector& p, int f);

// Geometry-based similarity between the forget class and each retained class:
// PCA is fitted on the centered per-class weight vectors of the final linear
// layer, each vector is projected onto the top d_prime principal directions,
// and the cosine between projections is sharpened through a low-temperature
// softmax over the retained classes. d_prime = -1 selects min(K, 16), capped
// by the weight dimension.
SimilarityProfile similarity_scores(const ClassifierModel& model, int f, int d_prime = -1,
                                    double temperature = 0.01);

// Data-space alternative to the weight-vector score, used for the 2-D toy
// experiments: similarity of retained class y is the inverse Euclidean
// distance between the class centroids of y and the forget class, sharpened
// through the same low-temperature softmax. raw_cosines holds the inverse
// distances rescaled by their maximum (in (0, 1]) for inspection. Immune to
// the train-time symmetry noise that can flip the weight-space cosine
// ordering when only a handful of classes exist.
SimilarityProfile centroid_similarity_profile(const LabeledDataset& train, int f,
                                              double temperature = 0.01);

// Exponential tilt of a forget-free distribution toward similar classes:
// out(y) proportional to ptilde(y) * exp(beta * s_y), normalized over the
// retained classes, computed with max-exponent subtraction. beta = 0 returns
// ptilde unchanged; adding a constant to every score leaves the result
// untouched.
ProbVector tilt(const ProbVector& ptilde, const SimilarityProfile& s, double beta);

// Expected similarity under the tilted distribution, m(beta). Strictly
// increasing in beta whenever the scores are non-constant on the support of
// ptilde (its derivative is the tilted variance of the scores), with limits
// min s and max s at beta = -inf / +inf.
double tilted_mean_similarity(const ProbVector& ptilde, const SimilarityProfile& s, double beta);

// Inverts m(beta) = c by bisection on the strictly increasing m, growing the
// initial [-1, 1] bracket geometrically until it straddles c. c must lie
// strictly between the smallest and largest score on the support of ptilde
// (OutOfHullError otherwise; the boundary corresponds to beta = +-inf).
double solve_beta(const ProbVector& ptilde, const SimilarityProfile& s,
                  const MomentConstraint& constraint, double tol = 1e-10);

// Brute-force information projection: minimizes KL(q || p) over distributions
// q on the retained classes subject to sum_y q(y) s_y = c, by exhaustive grid
// search with local refinement. Exact for two-point supports. Only small
// problems (K <= 5) are accepted; this exists to verify that the tilt of the
// reweighted distribution at the solved beta IS the projection.
ProbVector iproj_oracle(const ProbVector& p, int f, const SimilarityProfile& s,
                        const MomentConstraint& constraint);

// Per-sample forget targets: forward -> softmax -> reweight -> tilt at the
// configured beta, with the degenerate-mass fallback applied per sample
// without failing the batch. Targets are a pure function of the model passed
// in, so computing them once from the original model freezes them.
std::vector<ProbVector> build_forget_targets(const ClassifierModel& model,
                                             const Eigen::MatrixXd& forget_samples,
                                             const SimilarityProfile& scores,
                                             const TiltConfig& cfg);

// KL(q || p) with the 0 log 0 = 0 convention; +inf when q has mass where p
// has none.
double kl_divergence(const ProbVector& q, const ProbVector& p);

}  // namespace ulab
