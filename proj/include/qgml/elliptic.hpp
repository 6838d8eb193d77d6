#ifndef QGML_ELLIPTIC_HPP
#define QGML_ELLIPTIC_HPP

#include <memory>

#include "qgml/field.hpp"
#include "qgml/grid.hpp"

namespace qgml::qg {

/// Applies the coupled elliptic operator L = laplacian + C to interior psi
/// rows, with psi = 0 on the y walls and periodic x. C mixes the layers:
/// C = [[-f1, f1], [f2, -f2]], or its transpose when transposed is set.
void apply_pv_operator(const GridSpec& grid, double f1, double f2, const Field3& psi,
                       Field3& out, bool transposed = false);

/// Direct solver for L psi = rhs: eigen-decomposition of C splits the system
/// into a barotropic Poisson mode and a baroclinic Helmholtz mode (eigenvalues
/// 0 and -(f1+f2)); each mode is solved by a real DFT in x and a tridiagonal
/// solve in y with Dirichlet walls.
///
/// Instances are not thread safe; use one per thread. Plan creation and
/// destruction are serialized internally, so instances may be built
/// concurrently.
class EllipticSolver {
 public:
  EllipticSolver(const GridSpec& grid, double f1, double f2);
  ~EllipticSolver();
  EllipticSolver(const EllipticSolver&) = delete;
  EllipticSolver& operator=(const EllipticSolver&) = delete;

  /// rhs shape (2, ny, nx); psi gets the interior solution. transposed solves
  /// with the transposed coupling, which is the exact transpose of the
  /// forward solve.
  void solve(const Field3& rhs, Field3& psi, bool transposed = false) const;

  const GridSpec& grid() const { return grid_; }

 private:
  struct Impl;
  GridSpec grid_;
  double f1_, f2_;
  std::unique_ptr<Impl> impl_;
};

}  // namespace qgml::qg

#endif
