#include "qgml/elliptic.hpp"

#include <fftw3.h>

#include <cmath>
#include <mutex>
#include <stdexcept>
#include <vector>

namespace qgml::qg {

namespace {
std::mutex& plan_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

void apply_pv_operator(const GridSpec& grid, double f1, double f2, const Field3& psi,
                       Field3& out, bool transposed) {
  const int nx = grid.nx, ny = grid.ny;
  const double rdx2 = 1.0 / (grid.dx() * grid.dx());
  const double rdy2 = 1.0 / (grid.dy() * grid.dy());
  // coupling rows: forward C = [[-f1, f1], [f2, -f2]]
  const double c00 = -f1;
  const double c01 = transposed ? f2 : f1;
  const double c10 = transposed ? f1 : f2;
  const double c11 = -f2;
  if (out.nl != 2 || out.ny != ny || out.nx != nx) out = Field3(2, ny, nx);
  for (int l = 0; l < 2; ++l) {
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const int ie = (i + 1) % nx, iw = (i + nx - 1) % nx;
        const double c = psi(l, j, i);
        const double n = (j + 1 < ny) ? psi(l, j + 1, i) : 0.0;
        const double s = (j > 0) ? psi(l, j - 1, i) : 0.0;
        const double lap = (psi(l, j, ie) - 2.0 * c + psi(l, j, iw)) * rdx2 + (n - 2.0 * c + s) * rdy2;
        const double other = psi(1 - l, j, i);
        const double cpl = (l == 0) ? c00 * c + c01 * other : c10 * other + c11 * c;
        out(l, j, i) = lap + cpl;
      }
    }
  }
}

struct EllipticSolver::Impl {
  int nx, ny, nk;
  double f1, f2;
  // spectral buffers, rows = 2 layers x ny
  double* real_buf = nullptr;
  fftw_complex* spec_buf = nullptr;
  fftw_plan fwd = nullptr;
  fftw_plan bwd = nullptr;
  // Thomas factorizations per (x wavenumber, vertical mode): prefactored
  // upper coefficients and pivots for diag = sx_k + d_m - 2/dy^2, off = 1/dy^2
  std::vector<double> piv;  // (nk * 2 * ny)
  std::vector<double> upc;  // same layout
  double off = 0.0;

  Impl(const GridSpec& grid, double f1_, double f2_) : nx(grid.nx), ny(grid.ny), nk(grid.nx / 2 + 1), f1(f1_), f2(f2_) {
    const int rows = 2 * ny;
    real_buf = fftw_alloc_real(static_cast<size_t>(rows) * nx);
    spec_buf = fftw_alloc_complex(static_cast<size_t>(rows) * nk);
    {
      std::lock_guard<std::mutex> lock(plan_mutex());
      fwd = fftw_plan_many_dft_r2c(1, &nx, rows, real_buf, nullptr, 1, nx, spec_buf, nullptr, 1, nk,
                                   FFTW_ESTIMATE);
      bwd = fftw_plan_many_dft_c2r(1, &nx, rows, spec_buf, nullptr, 1, nk, real_buf, nullptr, 1, nx,
                                   FFTW_ESTIMATE);
    }
    if (!fwd || !bwd) throw std::runtime_error("EllipticSolver: FFTW plan creation failed");

    const double dx = grid.dx(), dy = grid.dy();
    off = 1.0 / (dy * dy);
    piv.assign(static_cast<size_t>(nk) * 2 * ny, 0.0);
    upc.assign(piv.size(), 0.0);
    const double modes[2] = {0.0, -(f1 + f2)};
    for (int k = 0; k < nk; ++k) {
      const double sx = (2.0 * std::cos(2.0 * M_PI * k / nx) - 2.0) / (dx * dx);
      for (int m = 0; m < 2; ++m) {
        const double diag = sx + modes[m] - 2.0 / (dy * dy);
        double* p = &piv[(static_cast<size_t>(k) * 2 + m) * ny];
        double* u = &upc[(static_cast<size_t>(k) * 2 + m) * ny];
        double d = diag;
        for (int j = 0; j < ny; ++j) {
          if (j > 0) d = diag - off * u[j - 1];
          if (d == 0.0) throw std::runtime_error("EllipticSolver: singular tridiagonal system");
          p[j] = 1.0 / d;
          u[j] = off * p[j];
        }
      }
    }
  }

  ~Impl() {
    std::lock_guard<std::mutex> lock(plan_mutex());
    if (fwd) fftw_destroy_plan(fwd);
    if (bwd) fftw_destroy_plan(bwd);
    fftw_free(real_buf);
    fftw_free(spec_buf);
  }

  // in-place Thomas solve of one mode system on a strided complex column
  void solve_column(int k, int m, fftw_complex* col, int stride) const {
    const double* p = &piv[(static_cast<size_t>(k) * 2 + m) * ny];
    const double* u = &upc[(static_cast<size_t>(k) * 2 + m) * ny];
    for (int c = 0; c < 2; ++c) {
      double prev = col[0][c] * p[0];
      col[0][c] = prev;
      for (int j = 1; j < ny; ++j) {
        prev = (col[static_cast<size_t>(j) * stride][c] - off * prev) * p[j];
        col[static_cast<size_t>(j) * stride][c] = prev;
      }
      for (int j = ny - 2; j >= 0; --j) {
        prev = col[static_cast<size_t>(j) * stride][c] - u[j] * col[static_cast<size_t>(j + 1) * stride][c];
        col[static_cast<size_t>(j) * stride][c] = prev;
      }
    }
  }
};

EllipticSolver::EllipticSolver(const GridSpec& grid, double f1, double f2)
    : grid_(grid), f1_(f1), f2_(f2), impl_(std::make_unique<Impl>(grid, f1, f2)) {
  if (!(f1 > 0.0) || !(f2 > 0.0))
    throw std::invalid_argument("EllipticSolver: coupling coefficients must be positive");
}

EllipticSolver::~EllipticSolver() = default;

void EllipticSolver::solve(const Field3& rhs, Field3& psi, bool transposed) const {
  const int nx = impl_->nx, ny = impl_->ny, nk = impl_->nk;
  if (rhs.nl != 2 || rhs.ny != ny || rhs.nx != nx)
    throw std::invalid_argument("EllipticSolver::solve: rhs shape mismatch");

  std::copy(rhs.data.begin(), rhs.data.end(), impl_->real_buf);
  fftw_execute(impl_->fwd);

  // layer -> mode with V^-1, solve both modes, mode -> layer with V.
  // Forward: V^-1 = [[f2, f1], [1, -1]] / (f1+f2), V = [[1, f1], [1, -f2]].
  // Transposed coupling swaps the roles: V_T^-1 = [[1, 1], [f1, -f2]] / (f1+f2),
  // V_T = [[f2, 1], [f1, -1]].
  const double f1 = impl_->f1, f2 = impl_->f2;
  const double inv = 1.0 / (f1 + f2);
  const double a00 = transposed ? inv : f2 * inv;
  const double a01 = transposed ? inv : f1 * inv;
  const double a10 = transposed ? f1 * inv : inv;
  const double a11 = transposed ? -f2 * inv : -inv;
  const double b00 = transposed ? f2 : 1.0;
  const double b01 = transposed ? 1.0 : f1;
  const double b10 = transposed ? f1 : 1.0;
  const double b11 = transposed ? -1.0 : -f2;

  fftw_complex* spec = impl_->spec_buf;
  const auto at = [&](int l, int j, int k) -> fftw_complex& {
    return spec[(static_cast<size_t>(l) * ny + j) * nk + k];
  };
  for (int j = 0; j < ny; ++j) {
    for (int k = 0; k < nk; ++k) {
      fftw_complex& t = at(0, j, k);
      fftw_complex& b = at(1, j, k);
      for (int c = 0; c < 2; ++c) {
        const double m0 = a00 * t[c] + a01 * b[c];
        const double m1 = a10 * t[c] + a11 * b[c];
        t[c] = m0;
        b[c] = m1;
      }
    }
  }
  for (int k = 0; k < nk; ++k) {
    impl_->solve_column(k, 0, &at(0, 0, k), nk);
    impl_->solve_column(k, 1, &at(1, 0, k), nk);
  }
  for (int j = 0; j < ny; ++j) {
    for (int k = 0; k < nk; ++k) {
      fftw_complex& t = at(0, j, k);
      fftw_complex& b = at(1, j, k);
      for (int c = 0; c < 2; ++c) {
        const double p0 = b00 * t[c] + b01 * b[c];
        const double p1 = b10 * t[c] + b11 * b[c];
        t[c] = p0;
        b[c] = p1;
      }
    }
  }

  fftw_execute(impl_->bwd);
  if (!psi.same_shape(rhs)) psi = Field3(2, ny, nx);
  const double scale = 1.0 / nx;
  for (size_t idx = 0; idx < psi.data.size(); ++idx) psi.data[idx] = impl_->real_buf[idx] * scale;
}

}  // namespace qgml::qg
