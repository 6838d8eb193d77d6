#ifndef QGML_QG_MODEL_HPP
#define QGML_QG_MODEL_HPP

#include <memory>
#include <optional>
#include <vector>

#include "qgml/elliptic.hpp"
#include "qgml/field.hpp"
#include "qgml/qg_params.hpp"

namespace qgml::qg {

/// Prognostic state: stream function on the interior grid.
struct ModelState {
  Field3 psi;  // (n_layers, ny, nx)
  double time = 0.0;
};

/// Potential vorticity on the full mesh including both fixed wall rows.
struct VorticityField {
  Field3 q;  // (n_layers, ny+2, nx)
};

/// Constant per-step stream-function increment.
struct ForcingTerm {
  Field3 eta;  // shape of ModelState::psi
};

/// Uniformly spaced sequence of states.
struct Trajectory {
  std::vector<ModelState> states;
  double dt_between = 0.0;

  const ModelState& front() const { return states.front(); }
  const ModelState& back() const { return states.back(); }
  size_t size() const { return states.size(); }
};

/// Two-layer quasi-geostrophic channel model with first-order upstream
/// semi-Lagrangian advection of potential vorticity and a direct elliptic
/// inversion back to the stream function.
///
/// Not thread safe; copy the model to use it from several threads.
class QgModel {
 public:
  explicit QgModel(QgParams params);
  QgModel(const QgModel& other);
  QgModel& operator=(const QgModel& other);

  const QgParams& params() const { return params_; }
  const GridSpec& grid() const { return params_.grid; }

  /// q1 = lap(psi1) - f1 (psi1 - psi2) + beta_eff(0) y
  /// q2 = lap(psi2) - f2 (psi2 - psi1) + beta_eff(1) y + Rs
  /// (psi is the deviation from the uniform background flow; with zero
  /// background shear beta_eff(l) == beta.) Wall rows carry the fixed values
  /// beta_eff(l) y (+ Rs on layer 2).
  VorticityField psi_to_q(const ModelState& state) const;

  /// Inverse of psi_to_q on the interior rows.
  ModelState q_to_psi(const VorticityField& q, double time) const;

  /// One semi-Lagrangian step of dt_step; forcing, when present, is added to
  /// psi after the inversion.
  ModelState step(const ModelState& state, const ForcingTerm* forcing = nullptr) const;

  /// horizon / dt_step consecutive steps. horizon must be a nonnegative
  /// multiple of dt_step.
  ModelState resolvent(const ModelState& state, double horizon,
                       const ForcingTerm* forcing = nullptr) const;

  /// Integrates spinup (discarded), then records length/store_every + 1
  /// states. All durations must be multiples of dt_step.
  Trajectory generate_trajectory(const ModelState& init, double spinup, double length,
                                 double store_every) const;

  /// Exact derivative of one step at the given base state.
  Field3 step_tl(const ModelState& base, const Field3& dpsi) const;

  /// Exact transpose of step_tl.
  Field3 step_adjoint(const ModelState& base, const Field3& costate) const;

  /// Propagates delta through len(base_traj)-1 steps; base_traj must store
  /// every dt_step state of the linearization trajectory.
  Field3 tangent_linear(const Trajectory& base_traj, const Field3& delta) const;

  /// Transpose of tangent_linear: sweeps the costate backwards.
  Field3 adjoint(const Trajectory& base_traj, const Field3& costate) const;

  /// Number of steps for a duration, validating divisibility by dt_step.
  int steps_for(double horizon) const;

 private:
  struct StepGeometry;
  void check_state(const ModelState& state) const;
  void check_traj(const Trajectory& traj) const;
  void diagnose_winds(const Field3& psi, Field3& u, Field3& v, bool with_background) const;
  StepGeometry departure_geometry(const Field3& u, const Field3& v) const;

  QgParams params_;
  std::unique_ptr<EllipticSolver> solver_;
};

}  // namespace qgml::qg

#endif
