#include "ulab/prob.hpp"

#include <cmath>
#include <string>

namespace ulab {

double ProbVector::at_class(int class_id) const {
  // Fast path: identity layout.
  if (class_id >= 0 && class_id < size() && class_ids[class_id] == class_id) {
    return mass(class_id);
  }
  for (int i = 0; i < size(); ++i) {
    if (class_ids[i] == class_id) return mass(i);
  }
  throw UsageError("ProbVector: unknown class id " + std::to_string(class_id));
}

ProbVector make_prob(Eigen::VectorXd mass) {
  ProbVector p;
  p.class_ids.resize(static_cast<std::size_t>(mass.size()));
  for (int i = 0; i < mass.size(); ++i) p.class_ids[static_cast<std::size_t>(i)] = i;
  p.mass = std::move(mass);
  return p;
}

bool is_valid_prob(const ProbVector& p, double tol) {
  if (p.mass.size() == 0) return false;
  if (p.class_ids.size() != static_cast<std::size_t>(p.mass.size())) return false;
  if (!p.mass.allFinite()) return false;
  if ((p.mass.array() < 0.0).any()) return false;
  return std::abs(p.mass.sum() - 1.0) <= tol;
}

void check_prob(const ProbVector& p, double tol) {
  if (!is_valid_prob(p, tol)) {
    throw InvalidInputError("ProbVector invariant violated (negative, non-finite, or sum != 1)");
  }
}

}  // namespace ulab
