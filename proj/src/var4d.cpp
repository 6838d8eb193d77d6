#include "qgml/var4d.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>

namespace qgml::da {

void DaConfig::validate() const {
  covariance.validate();
  if (max_iterations < 0) throw std::invalid_argument("DaConfig: max_iterations must be >= 0");
  if (!(grad_reduction > 0.0))
    throw std::invalid_argument("DaConfig: grad_reduction must be positive");
  if (memory < 1) throw std::invalid_argument("DaConfig: memory must be >= 1");
  if (!(tau > 0.0)) throw std::invalid_argument("DaConfig: tau must be positive");
  if (mode != ModelMode::kOriginal && !corrector)
    throw std::invalid_argument("DaConfig: hybrid and oracle modes need a corrector");
}

qg::Trajectory AnalysisTrajectory::analyses(double window_length) const {
  qg::Trajectory t;
  t.dt_between = window_length;
  t.states.reserve(records.size());
  for (const CycleRecord& r : records) t.states.push_back(r.analysis);
  return t;
}

Var4dProblem::Var4dProblem(const qg::QgModel& model, const CovarianceOperator& cov,
                           WindowSpec window, std::vector<const ObsBatch*> batches,
                           qg::ModelState background, const qg::ForcingTerm* forcing)
    : model_(&model),
      cov_(&cov),
      window_(window),
      batches_(std::move(batches)),
      background_(std::move(background)),
      forcing_(forcing) {
  if (!(window_.length > 0.0))
    throw std::invalid_argument("Var4dProblem: window length must be positive");
  n_steps_ = model_->steps_for(window_.length);
  if (std::fabs(background_.time - window_.start_time) > 1e-9)
    throw std::invalid_argument("Var4dProblem: background time does not match the window start");
  if (forcing_ && !forcing_->eta.same_shape(background_.psi))
    throw std::invalid_argument("Var4dProblem: forcing shape mismatch");

  const double dt = model_->params().dt_step;
  batch_steps_.reserve(batches_.size());
  for (const ObsBatch* b : batches_) {
    if (b->locations.size() != b->values.size())
      throw std::invalid_argument("Var4dProblem: batch locations/values size mismatch");
    const double rel = b->time - window_.start_time;
    const int idx = static_cast<int>(std::llround(rel / dt));
    if (idx < 1 || idx > n_steps_ || std::fabs(rel - idx * dt) > 1e-9)
      throw std::invalid_argument(
          "Var4dProblem: batch time outside the window or off the model step grid");
    batch_steps_.push_back(idx);
  }
}

qg::ModelState Var4dProblem::to_state(const std::vector<double>& chi) const {
  if (static_cast<int>(chi.size()) != dim())
    throw std::invalid_argument("Var4dProblem: control vector size mismatch");
  Field3 c(background_.psi.nl, background_.psi.ny, background_.psi.nx);
  c.data = chi;
  qg::ModelState out = background_;
  out.psi += cov_->apply_sqrt(c);
  return out;
}

/// Forward run accumulating the observation misfit; when grad_state is given,
/// also stores the trajectory and sweeps the weighted residuals back with the
/// step adjoints, returning d(obs term)/d(x0) in *grad_state.
double Var4dProblem::sweep(const qg::ModelState& x0, std::vector<double>* grad_state) const {
  const qg::GridSpec& grid = model_->grid();
  std::vector<qg::ModelState> traj;
  if (grad_state) {
    traj.reserve(n_steps_ + 1);
    traj.push_back(x0);
  }
  std::vector<std::vector<double>> weighted(batches_.size());

  double jo = 0.0;
  qg::ModelState state = x0;
  for (int s = 1; s <= n_steps_; ++s) {
    state = model_->step(state, forcing_);
    for (double v : state.psi.data)
      if (!std::isfinite(v))
        throw std::runtime_error("Var4dProblem: model blow-up inside the window");
    if (grad_state) traj.push_back(state);
    for (size_t bi = 0; bi < batches_.size(); ++bi) {
      if (batch_steps_[bi] != s) continue;
      const ObsBatch& b = *batches_[bi];
      std::vector<double> r = interpolate(grid, state.psi, b.locations);
      for (size_t k = 0; k < r.size(); ++k) {
        r[k] -= b.values[k];
        jo += 0.5 * r[k] * r[k] / b.obs_var;
        r[k] /= b.obs_var;
      }
      if (grad_state) weighted[bi] = std::move(r);
    }
  }
  if (!grad_state) return jo;

  Field3 lambda(x0.psi.nl, x0.psi.ny, x0.psi.nx);
  for (int s = n_steps_; s >= 1; --s) {
    for (size_t bi = 0; bi < batches_.size(); ++bi)
      if (batch_steps_[bi] == s)
        lambda += h_transpose(grid, batches_[bi]->locations, weighted[bi]);
    lambda = model_->step_adjoint(traj[s - 1], lambda);
  }
  *grad_state = std::move(lambda.data);
  return jo;
}

double Var4dProblem::obs_cost(const qg::ModelState& x0) const { return sweep(x0, nullptr); }

double Var4dProblem::cost(const std::vector<double>& chi) const {
  double jb = 0.0;
  for (double v : chi) jb += 0.5 * v * v;
  return jb + sweep(to_state(chi), nullptr);
}

double Var4dProblem::cost_and_gradient(const std::vector<double>& chi,
                                       std::vector<double>& grad) const {
  std::vector<double> gs;
  const double jo = sweep(to_state(chi), &gs);
  Field3 lambda(background_.psi.nl, background_.psi.ny, background_.psi.nx);
  lambda.data = std::move(gs);
  const Field3 slam = cov_->apply_sqrt_transpose(lambda);
  grad.resize(chi.size());
  double jb = 0.0;
  for (size_t k = 0; k < chi.size(); ++k) {
    jb += 0.5 * chi[k] * chi[k];
    grad[k] = chi[k] + slam.data[k];
  }
  return jb + jo;
}

std::vector<double> Var4dProblem::gradient(const std::vector<double>& chi) const {
  std::vector<double> g;
  cost_and_gradient(chi, g);
  return g;
}

CycleRecord minimize_window(const qg::QgModel& model, const CovarianceOperator& cov,
                            WindowSpec window, std::vector<const ObsBatch*> batches,
                            const qg::ModelState& background, const DaConfig& config,
                            const qg::ForcingTerm* forcing, int window_index) {
  config.validate();
  Var4dProblem problem(model, cov, window, std::move(batches), background, forcing);

  double j_background = std::numeric_limits<double>::quiet_NaN();
  const opt::ObjectiveFn fn = [&](const std::vector<double>& x, std::vector<double>& g) {
    try {
      const double f = problem.cost_and_gradient(x, g);
      if (std::isnan(j_background)) j_background = f;  // first evaluation is at chi = 0
      return f;
    } catch (const std::runtime_error&) {
      // infeasible trial point (model blow-up); an infinite cost makes the
      // line search back off into the feasible region
      g.assign(x.size(), 0.0);
      return std::numeric_limits<double>::infinity();
    }
  };
  opt::LbfgsOptions lopt;
  lopt.max_iterations = config.max_iterations;
  lopt.grad_reduction = config.grad_reduction;
  lopt.memory = config.memory;
  const opt::LbfgsResult res =
      opt::lbfgs_minimize(fn, std::vector<double>(problem.dim(), 0.0), lopt);
  if (std::isnan(j_background))  // the background itself blew up: surface it
    throw std::runtime_error("minimize_window: model blow-up from the background state");

  CycleRecord rec;
  rec.window_index = window_index;
  rec.background = background;
  rec.analysis = problem.to_state(res.x);
  rec.final_cost = res.f;
  rec.background_cost = j_background;
  rec.iterations = res.iterations;
  rec.line_search_failed = res.line_search_failed;
  return rec;
}

AnalysisTrajectory cycle(const ObsDatabase& obs, const qg::QgModel& model,
                         const CovarianceOperator& cov, const DaConfig& config, int n_windows,
                         const qg::ModelState& x_b_init) {
  config.validate();
  if (n_windows < 1) throw std::invalid_argument("cycle: need at least one window");
  if (obs.complete_windows() < n_windows)
    throw std::invalid_argument("cycle: observation database covers " +
                                std::to_string(obs.complete_windows()) + " windows, need " +
                                std::to_string(n_windows));

  AnalysisTrajectory out;
  out.records.reserve(n_windows);
  qg::ModelState background = x_b_init;
  const double dt = model.params().dt_step;

  for (int w = 0; w < n_windows; ++w) {
    try {
      const WindowSpec window{background.time, qg::kDay};
      qg::ForcingTerm forcing;
      const qg::ForcingTerm* fptr = nullptr;
      if (config.mode != ModelMode::kOriginal) {
        forcing.eta = config.corrector(background);
        forcing.eta *= dt / config.tau;
        fptr = &forcing;
      }
      CycleRecord rec =
          minimize_window(model, cov, window, obs.window(w), background, config, fptr, w);
      background = model.resolvent(rec.analysis, window.length, fptr);
      for (double v : background.psi.data)
        if (!std::isfinite(v)) throw std::runtime_error("forecast to the next window blew up");
      if (w > 0) out.records[w - 1].increment = rec.analysis.psi - rec.background.psi;
      out.records.push_back(std::move(rec));
    } catch (const std::exception& e) {
      throw std::runtime_error("cycle: window " + std::to_string(w) + ": " + e.what());
    }
  }
  return out;
}

Corrector make_oracle_corrector(const qg::QgModel& reference, const qg::QgModel& original,
                                double tau) {
  reference.steps_for(tau);  // validates divisibility for both models up front
  original.steps_for(tau);
  const qg::GridSpec& gr = reference.grid();
  const qg::GridSpec& go = original.grid();
  if (gr.nx != go.nx || gr.ny != go.ny || gr.n_layers != go.n_layers)
    throw std::invalid_argument("make_oracle_corrector: models live on different grids");
  // copies keep the corrector self-contained; QgModel is not thread safe, so
  // share a corrector only within one cycle chain
  auto ref = std::make_shared<qg::QgModel>(reference);
  auto orig = std::make_shared<qg::QgModel>(original);
  return [ref, orig, tau](const qg::ModelState& x) {
    return ref->resolvent(x, tau).psi - orig->resolvent(x, tau).psi;
  };
}

qg::ModelState initial_background(const qg::ModelState& truth, const CovarianceOperator& cov,
                                  std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  Field3 xi(truth.psi.nl, truth.psi.ny, truth.psi.nx);
  for (double& v : xi.data) v = n01(gen);
  qg::ModelState out = truth;
  out.psi += cov.apply_sqrt(xi);
  return out;
}

}  // namespace qgml::da
