#include "qgml/covariance.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace qgml::da {

void CovarianceConfig::validate() const {
  if (!(std_b > 0.0)) throw std::invalid_argument("CovarianceConfig: std_b must be positive");
  if (!(std::fabs(vert_corr) < 1.0))
    throw std::invalid_argument("CovarianceConfig: |vert_corr| must be < 1");
  if (!(horiz_corr_len > 0.0))
    throw std::invalid_argument("CovarianceConfig: horiz_corr_len must be positive");
}

namespace {

/// Rebuilds a symmetric positive semidefinite factor and its symmetric square
/// root from one shared eigendecomposition (round-off negatives clamped), so
/// that applying the sqrt twice agrees with the factor to round-off.
void spectral_pair(std::vector<double>& m, std::vector<double>& sqrt_out, int n) {
  Eigen::MatrixXd a(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) a(r, c) = m[static_cast<size_t>(r) * n + c];
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  Eigen::VectorXd lam = es.eigenvalues(), rt = lam;
  for (int k = 0; k < n; ++k) {
    lam(k) = std::max(0.0, lam(k));
    rt(k) = std::sqrt(lam(k));
  }
  const Eigen::MatrixXd& v = es.eigenvectors();
  Eigen::MatrixXd full = v * lam.asDiagonal() * v.transpose();
  Eigen::MatrixXd s = v * rt.asDiagonal() * v.transpose();
  full = 0.5 * (full + full.transpose()).eval();
  s = 0.5 * (s + s.transpose()).eval();
  sqrt_out.resize(static_cast<size_t>(n) * n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      m[static_cast<size_t>(r) * n + c] = full(r, c);
      sqrt_out[static_cast<size_t>(r) * n + c] = s(r, c);
    }
}

}  // namespace

CovarianceOperator::CovarianceOperator(const qg::GridSpec& grid, const CovarianceConfig& config)
    : grid_(grid), config_(config) {
  grid.validate();
  config.validate();
  const int nx = grid.nx, ny = grid.ny;
  // Gaussian correlation rho(d) = exp(-d^2 / (2 L^2)) with L the correlation
  // length in model units: the curvature scale at the origin, the usual
  // definition in assimilation practice. Short-range by construction (L is
  // about two grid cells and close to the deformation radius), which is what
  // lets the analysis correct grid-scale background errors.
  const double two_l2 = 2.0 * config.horiz_corr_len * config.horiz_corr_len;

  // x: circulant from the periodically wrapped Gaussian, unit diagonal
  std::vector<double> row(nx);
  double diag = 0.0;
  for (int i = 0; i < nx; ++i) {
    double s = 0.0;
    for (int m = -3; m <= 3; ++m) {
      const double d = grid.x(i) + m * grid.lx;
      s += std::exp(-d * d / two_l2);
    }
    row[i] = s;
    if (i == 0) diag = s;
  }
  cx_.assign(static_cast<size_t>(nx) * nx, 0.0);
  for (int r = 0; r < nx; ++r)
    for (int c = 0; c < nx; ++c) cx_[static_cast<size_t>(r) * nx + c] = row[(c - r + nx) % nx] / diag;

  // y: Gaussian kernel on the interior rows, no wrap
  cy_.assign(static_cast<size_t>(ny) * ny, 0.0);
  for (int r = 0; r < ny; ++r)
    for (int c = 0; c < ny; ++c) {
      const double d = grid.y(r) - grid.y(c);
      cy_[static_cast<size_t>(r) * ny + c] = std::exp(-d * d / two_l2);
    }

  // layers
  cl_ = {1.0, config.vert_corr, config.vert_corr, 1.0};

  spectral_pair(cx_, sx_, nx);
  spectral_pair(cy_, sy_, ny);
  spectral_pair(cl_, sl_, 2);
}

void CovarianceOperator::check(const Field3& v) const {
  if (v.nl != grid_.n_layers || v.ny != grid_.ny || v.nx != grid_.nx)
    throw std::invalid_argument("CovarianceOperator: field shape does not match the grid");
}

Field3 CovarianceOperator::apply_factors(const Field3& v, const std::vector<double>& cx,
                                         const std::vector<double>& cy,
                                         const std::vector<double>& cl, double scale) const {
  const int nx = grid_.nx, ny = grid_.ny, nl = grid_.n_layers;
  Field3 a(nl, ny, nx), b(nl, ny, nx);
  // x contraction
  for (int l = 0; l < nl; ++l)
    for (int j = 0; j < ny; ++j)
      for (int r = 0; r < nx; ++r) {
        double s = 0.0;
        const double* mrow = &cx[static_cast<size_t>(r) * nx];
        for (int c = 0; c < nx; ++c) s += mrow[c] * v(l, j, c);
        a(l, j, r) = s;
      }
  // y contraction
  for (int l = 0; l < nl; ++l)
    for (int r = 0; r < ny; ++r) {
      const double* mrow = &cy[static_cast<size_t>(r) * ny];
      for (int i = 0; i < nx; ++i) {
        double s = 0.0;
        for (int c = 0; c < ny; ++c) s += mrow[c] * a(l, c, i);
        b(l, r, i) = s;
      }
    }
  // layer contraction and overall scale
  Field3 out(nl, ny, nx);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const double v1 = b(0, j, i), v2 = b(1, j, i);
      out(0, j, i) = scale * (cl[0] * v1 + cl[1] * v2);
      out(1, j, i) = scale * (cl[2] * v1 + cl[3] * v2);
    }
  return out;
}

Field3 CovarianceOperator::apply(const Field3& v) const {
  check(v);
  return apply_factors(v, cx_, cy_, cl_, config_.std_b * config_.std_b);
}

Field3 CovarianceOperator::apply_sqrt(const Field3& chi) const {
  check(chi);
  return apply_factors(chi, sx_, sy_, sl_, config_.std_b);
}

Field3 CovarianceOperator::apply_sqrt_transpose(const Field3& v) const {
  return apply_sqrt(v);
}

}  // namespace qgml::da
