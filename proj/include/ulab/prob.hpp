#pragma once

#include <Eigen/Dense>
#include <vector>

#include "ulab/errors.hpp"

namespace ulab {

// A distribution over class labels. mass(i) belongs to class_ids[i]; unless a
// caller says otherwise, class_ids is the identity 0..K-1.
struct ProbVector {
  Eigen::VectorXd mass;
  std::vector<int> class_ids;

  int size() const { return static_cast<int>(mass.size()); }

  // Mass assigned to a class id (not an index).
  double at_class(int class_id) const;
};

// Wraps a mass vector with identity class ids.
ProbVector make_prob(Eigen::VectorXd mass);

bool is_valid_prob(const ProbVector& p, double tol = 1e-9);

// Throws InvalidInputError when the invariants fail.
void check_prob(const ProbVector& p, double tol = 1e-9);

}  // namespace ulab
