#include "ssmlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ssmlab::ad {

GradCheckResult gradcheck(const std::function<Tensor()>& forward,
                          const std::vector<Tensor>& leaves, double step) {
  // Analytic pass.
  for (auto leaf : leaves) {
    if (!leaf.requires_grad()) throw std::invalid_argument("gradcheck: leaf without requires_grad");
    leaf.zero_grad();
  }
  std::vector<std::vector<double>> analytic;
  {
    Graph g;
    Tensor loss = forward();
    g.backward(loss);
  }
  for (const auto& leaf : leaves) {
    if (leaf.has_grad()) {
      analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
    } else {
      analytic.emplace_back(static_cast<std::size_t>(leaf.numel()), 0.0);
    }
  }

  GradCheckResult res;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor leaf = leaves[li];
    auto data = leaf.leaf_data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double orig = data[j];
      data[j] = orig + step;
      const double fp = forward().item();
      data[j] = orig - step;
      const double fm = forward().item();
      data[j] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[li][j];
      const double abs_err = std::fabs(a - numeric);
      const double rel = abs_err / std::max({1.0, std::fabs(a), std::fabs(numeric)});
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst = "param#" + std::to_string(li) + "[" + std::to_string(j) + "]";
      }
      res.max_abs_error = std::max(res.max_abs_error, abs_err);
    }
  }
  return res;
}

}  // namespace ssmlab::ad
