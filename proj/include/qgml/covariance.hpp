#ifndef QGML_COVARIANCE_HPP
#define QGML_COVARIANCE_HPP

#include <vector>

#include "qgml/field.hpp"
#include "qgml/grid.hpp"

namespace qgml::da {

/// Background-error covariance configuration: B = b^2 C with a separable
/// correlation matrix C (x correlation x y correlation x layer coupling).
struct CovarianceConfig {
  double horiz_corr_len = 0.6;  // Gaussian correlation length (model units)
  double vert_corr = 0.2;       // inter-layer correlation, |c| < 1
  double std_b = 0.08;          // pointwise background standard deviation

  void validate() const;
};

/// Matrix-free B = b^2 C, C = Cl (x) Cy (x) Cx with unit diagonal, plus a
/// symmetric factor S with S S^T = B for control-variable preconditioning.
/// Immutable after construction; apply methods are pure and thread safe.
class CovarianceOperator {
 public:
  CovarianceOperator(const qg::GridSpec& grid, const CovarianceConfig& config);

  const CovarianceConfig& config() const { return config_; }

  /// B v.
  Field3 apply(const Field3& v) const;
  /// S chi, mapping a control vector into state space.
  Field3 apply_sqrt(const Field3& chi) const;
  /// S^T v; S is symmetric, so this equals apply_sqrt.
  Field3 apply_sqrt_transpose(const Field3& v) const;

 private:
  void check(const Field3& v) const;
  Field3 apply_factors(const Field3& v, const std::vector<double>& cx,
                       const std::vector<double>& cy, const std::vector<double>& cl,
                       double scale) const;

  qg::GridSpec grid_;
  CovarianceConfig config_;
  // dense symmetric per-axis factors, row-major
  std::vector<double> cx_, cy_, cl_;           // correlation factors
  std::vector<double> sx_, sy_, sl_;           // their symmetric square roots
};

}  // namespace qgml::da

#endif
