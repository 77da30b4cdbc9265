#pragma once
// Central finite-difference gradient checking. The numeric side never touches
// reverse mode: it re-evaluates the supplied forward closure at perturbed
// leaf values, so it is an independent oracle for every differentiable path.

#include <functional>
#include <string>
#include <vector>

#include "ssmlab/tensor.hpp"

namespace ssmlab::ad {

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst;  // "param#i[j]"
  bool ok(double tol = 1e-4) const { return max_rel_error < tol; }
};

// forward() must rebuild the graph from the current leaf values and return a
// scalar loss. Central differences with the given step; relative error per
// coordinate is |a - n| / max(1, |a|, |n|).
GradCheckResult gradcheck(const std::function<Tensor()>& forward,
                          const std::vector<Tensor>& leaves, double step = 1e-5);

}  // namespace ssmlab::ad
