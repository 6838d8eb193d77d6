#ifndef QGML_VAR4D_HPP
#define QGML_VAR4D_HPP

#include <cstdint>
#include <functional>
#include <vector>

#include "qgml/covariance.hpp"
#include "qgml/field.hpp"
#include "qgml/lbfgs.hpp"
#include "qgml/observations.hpp"
#include "qgml/qg_model.hpp"

namespace qgml::da {

/// One assimilation window: [start_time, start_time + length], batch times
/// strictly inside (start_time, start_time + length].
struct WindowSpec {
  double start_time = 0.0;
  double length = qg::kDay;
};

/// Model used inside the windows and for the forecasts between them.
enum class ModelMode {
  kOriginal,       // the imperfect model as is
  kHybrid,         // original + constant per-step forcing from a correction map
  kOracleForcing,  // same, but the correction is the exact model error
};

/// Maps a state to the estimated model error accumulated over the sampling
/// period tau; the cycling driver turns it into a per-step forcing.
using Corrector = std::function<Field3(const qg::ModelState&)>;

struct DaConfig {
  CovarianceConfig covariance;
  int max_iterations = 200;
  double grad_reduction = 1e-3;  // relative gradient-norm stop
  int memory = 10;
  ModelMode mode = ModelMode::kOriginal;
  double tau = qg::kDay;  // sampling period behind the corrector
  Corrector corrector;    // required unless mode == kOriginal

  void validate() const;
};

/// Outcome of one assimilation window.
///
/// increment holds the analysis increment of this window's training pair:
/// the next window's analysis minus the forecast of this window's analysis,
/// so it is filled once the next window has been solved and stays empty on
/// the final record.
struct CycleRecord {
  int window_index = 0;
  qg::ModelState analysis;
  qg::ModelState background;
  double final_cost = 0.0;
  double background_cost = 0.0;
  int iterations = 0;
  bool line_search_failed = false;
  Field3 increment;
};

/// Records of consecutive windows, in time order.
struct AnalysisTrajectory {
  std::vector<CycleRecord> records;

  /// States at the window starts as a uniformly spaced trajectory.
  qg::Trajectory analyses(double window_length = qg::kDay) const;
};

/// Strong-constraint cost over one window with control-variable
/// preconditioning: the control chi lives in the whitened space x = x_b + S
/// chi with S the covariance square root, so
///   J(chi) = 1/2 |chi|^2 + 1/2 sum_k |y_k - H_k(M_{0->k}(x_b + S chi))|^2 / r
/// and the gradient is chi + S^T (adjoint sum of the weighted residuals).
/// An optional constant per-step forcing shifts the trajectory but not the
/// linearization operators.
class Var4dProblem {
 public:
  Var4dProblem(const qg::QgModel& model, const CovarianceOperator& cov, WindowSpec window,
               std::vector<const ObsBatch*> batches, qg::ModelState background,
               const qg::ForcingTerm* forcing = nullptr);

  int dim() const { return static_cast<int>(background_.psi.size()); }
  const qg::ModelState& background() const { return background_; }

  /// x_b + S chi at the window start.
  qg::ModelState to_state(const std::vector<double>& chi) const;

  double cost(const std::vector<double>& chi) const;
  std::vector<double> gradient(const std::vector<double>& chi) const;
  /// Fused evaluation sharing one forward trajectory.
  double cost_and_gradient(const std::vector<double>& chi, std::vector<double>& grad) const;

  /// Observation misfit term alone, from a given initial state.
  double obs_cost(const qg::ModelState& x0) const;

 private:
  double sweep(const qg::ModelState& x0, std::vector<double>* grad_state) const;

  const qg::QgModel* model_;
  const CovarianceOperator* cov_;
  WindowSpec window_;
  std::vector<const ObsBatch*> batches_;
  std::vector<int> batch_steps_;  // step index of each batch inside the window
  qg::ModelState background_;
  const qg::ForcingTerm* forcing_;
  int n_steps_ = 0;
};

/// Minimizes one window from chi = 0; the returned record has an empty
/// increment (the cycling driver fills it).
CycleRecord minimize_window(const qg::QgModel& model, const CovarianceOperator& cov,
                            WindowSpec window, std::vector<const ObsBatch*> batches,
                            const qg::ModelState& background, const DaConfig& config,
                            const qg::ForcingTerm* forcing = nullptr, int window_index = 0);

/// Runs n_windows consecutive windows: minimize, then forecast the analysis
/// over the window length to obtain the next background (forced forecast in
/// hybrid/oracle mode, with the forcing recomputed once per window from the
/// background). Throws with the window index if the model blows up.
AnalysisTrajectory cycle(const ObsDatabase& obs, const qg::QgModel& model,
                         const CovarianceOperator& cov, const DaConfig& config, int n_windows,
                         const qg::ModelState& x_b_init);

/// Exact model error over tau: resolvent of the reference minus resolvent of
/// the original, started from the same state.
Corrector make_oracle_corrector(const qg::QgModel& reference, const qg::QgModel& original,
                                double tau);

/// Cold-start background: truth plus S times a unit normal draw.
qg::ModelState initial_background(const qg::ModelState& truth, const CovarianceOperator& cov,
                                  std::uint64_t seed);

}  // namespace qgml::da

#endif
