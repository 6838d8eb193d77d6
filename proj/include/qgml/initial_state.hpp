#ifndef QGML_INITIAL_STATE_HPP
#define QGML_INITIAL_STATE_HPP

#include <cmath>

#include "qgml/qg_model.hpp"

namespace qgml::qg {

/// Zonal-jet initial condition: psi_l follows -a_l tanh((y - ly/2)/width),
/// with the linear ramp between the end values removed so psi meets the
/// psi = 0 walls, plus a small sinusoidal perturbation to break zonal
/// symmetry. Integrations start from this state and discard a spin-up period
/// before use.
struct JetSpec {
  double a1 = 1.2;
  double a2 = 0.4;
  double width = 0.8;
  double perturb_amp = 0.2;
};

inline ModelState make_tanh_jet(const GridSpec& grid, const JetSpec& jet = JetSpec{}) {
  ModelState s;
  s.psi = Field3(grid.n_layers, grid.ny, grid.nx);
  const double half = grid.ly / 2.0;
  const double edge = std::tanh(half / jet.width);
  for (int l = 0; l < grid.n_layers; ++l) {
    const double a = (l == 0) ? jet.a1 : jet.a2;
    for (int j = 0; j < grid.ny; ++j) {
      const double y = grid.y(j);
      const double base = -a * (std::tanh((y - half) / jet.width) - edge * (y - half) / half);
      for (int i = 0; i < grid.nx; ++i) {
        s.psi(l, j, i) = base + jet.perturb_amp * std::sin(2.0 * M_PI * grid.x(i) / grid.lx) *
                                    std::sin(M_PI * y / grid.ly);
      }
    }
  }
  return s;
}

}  // namespace qgml::qg

#endif
