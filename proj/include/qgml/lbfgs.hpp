#ifndef QGML_LBFGS_HPP
#define QGML_LBFGS_HPP

#include <functional>
#include <vector>

namespace qgml::opt {

/// Objective callback: fills grad (same length as x) and returns f(x).
using ObjectiveFn = std::function<double(const std::vector<double>&, std::vector<double>&)>;

struct LbfgsOptions {
  int max_iterations = 200;
  double grad_reduction = 1e-3;  // stop when |g| <= grad_reduction * |g0|
  int memory = 10;
  double wolfe_c1 = 1e-4;  // sufficient decrease
  double wolfe_c2 = 0.9;   // curvature
  int max_line_evals = 40;
};

struct LbfgsResult {
  std::vector<double> x;
  double f = 0.0;
  double grad_norm = 0.0;
  double initial_grad_norm = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;         // gradient-reduction target reached
  bool line_search_failed = false;  // returned the best iterate seen so far
};

/// Limited-memory BFGS with a strong-Wolfe line search. Deterministic. On
/// line-search failure the best visited point is returned and flagged.
LbfgsResult lbfgs_minimize(const ObjectiveFn& fg, std::vector<double> x0,
                           const LbfgsOptions& options = LbfgsOptions{});

}  // namespace qgml::opt

#endif
