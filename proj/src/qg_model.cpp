#include "qgml/qg_model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace qgml::qg {

QgModel::QgModel(QgParams params)
    : params_(std::move(params)),
      solver_(std::make_unique<EllipticSolver>(params_.grid, params_.f1, params_.f2)) {
  params_.validate();
  const Field3& rs = params_.orography.values;
  if (rs.nl != 1 || rs.ny != params_.grid.ny + 2 || rs.nx != params_.grid.nx)
    throw std::invalid_argument("QgModel: orography shape mismatch");
}

QgModel::QgModel(const QgModel& other) : QgModel(other.params_) {}

QgModel& QgModel::operator=(const QgModel& other) {
  if (this != &other) {
    params_ = other.params_;
    solver_ = std::make_unique<EllipticSolver>(params_.grid, params_.f1, params_.f2);
  }
  return *this;
}

void QgModel::check_state(const ModelState& state) const {
  const GridSpec& g = params_.grid;
  if (state.psi.nl != g.n_layers || state.psi.ny != g.ny || state.psi.nx != g.nx)
    throw std::invalid_argument("QgModel: state shape does not match the grid");
}

void QgModel::check_traj(const Trajectory& traj) const {
  if (traj.states.empty()) throw std::invalid_argument("QgModel: empty linearization trajectory");
  if (traj.states.size() > 1 &&
      std::fabs(traj.dt_between - params_.dt_step) > 1e-12 * std::max(1.0, params_.dt_step))
    throw std::invalid_argument("QgModel: linearization trajectory must store every dt_step state");
  check_state(traj.states.front());
}

VorticityField QgModel::psi_to_q(const ModelState& state) const {
  check_state(state);
  const GridSpec& g = params_.grid;
  VorticityField out;
  out.q = Field3(2, g.ny + 2, g.nx);
  Field3 interior;
  apply_pv_operator(g, params_.f1, params_.f2, state.psi, interior);
  const Field3& rs = params_.orography.values;
  for (int l = 0; l < 2; ++l) {
    const double beta_l = params_.beta_eff(l);
    for (int jf = 0; jf < g.ny + 2; ++jf) {
      const double planetary = beta_l * g.y_full(jf);
      const bool wall = (jf == 0 || jf == g.ny + 1);
      for (int i = 0; i < g.nx; ++i) {
        double v = planetary;
        if (!wall) v += interior(l, jf - 1, i);
        if (l == 1) v += rs(0, jf, i);
        out.q(l, jf, i) = v;
      }
    }
  }
  return out;
}

ModelState QgModel::q_to_psi(const VorticityField& q, double time) const {
  const GridSpec& g = params_.grid;
  if (q.q.nl != 2 || q.q.ny != g.ny + 2 || q.q.nx != g.nx)
    throw std::invalid_argument("QgModel: vorticity shape does not match the grid");
  Field3 rhs(2, g.ny, g.nx);
  const Field3& rs = params_.orography.values;
  for (int l = 0; l < 2; ++l) {
    const double beta_l = params_.beta_eff(l);
    for (int j = 0; j < g.ny; ++j) {
      const double planetary = beta_l * g.y(j);
      for (int i = 0; i < g.nx; ++i) {
        double v = q.q(l, j + 1, i) - planetary;
        if (l == 1) v -= rs(0, j + 1, i);
        rhs(l, j, i) = v;
      }
    }
  }
  ModelState out;
  out.time = time;
  solver_->solve(rhs, out.psi);
  return out;
}

void QgModel::diagnose_winds(const Field3& psi, Field3& u, Field3& v, bool with_background) const {
  const GridSpec& g = params_.grid;
  const double r2dx = 1.0 / (2.0 * g.dx());
  const double r2dy = 1.0 / (2.0 * g.dy());
  if (!u.same_shape(psi)) u = Field3(2, g.ny, g.nx);
  if (!v.same_shape(psi)) v = Field3(2, g.ny, g.nx);
  for (int l = 0; l < 2; ++l) {
    const double u_bg = with_background ? params_.u_bg(l) : 0.0;
    for (int j = 0; j < g.ny; ++j) {
      const double* row = &psi.data[(static_cast<size_t>(l) * g.ny + j) * g.nx];
      const double* north = (j + 1 < g.ny) ? row + g.nx : nullptr;
      const double* south = (j > 0) ? row - g.nx : nullptr;
      for (int i = 0; i < g.nx; ++i) {
        const double pn = north ? north[i] : 0.0;
        const double ps = south ? south[i] : 0.0;
        u(l, j, i) = u_bg - (pn - ps) * r2dy;
        const int ie = (i + 1) % g.nx, iw = (i + g.nx - 1) % g.nx;
        v(l, j, i) = (row[ie] - row[iw]) * r2dx;
      }
    }
  }
}

/// Departure cells and interpolation offsets for every interior point.
struct QgModel::StepGeometry {
  // per (l, j, i), flattened like the state
  std::vector<int> ix0, jy0;       // cell origin: x column index, full-mesh row index
  std::vector<double> ax, ay;      // fractional offsets in the cell
  std::vector<unsigned char> clamped_y;
};

QgModel::StepGeometry QgModel::departure_geometry(const Field3& u, const Field3& v) const {
  const GridSpec& g = params_.grid;
  const double dt = params_.dt_step;
  const double dx = g.dx(), dy = g.dy();
  const size_t n = u.size();
  StepGeometry geo;
  geo.ix0.resize(n);
  geo.jy0.resize(n);
  geo.ax.resize(n);
  geo.ay.resize(n);
  geo.clamped_y.resize(n);
  size_t p = 0;
  for (int l = 0; l < 2; ++l) {
    for (int j = 0; j < g.ny; ++j) {
      for (int i = 0; i < g.nx; ++i, ++p) {
        const double du = u(l, j, i) * dt, dv = v(l, j, i) * dt;
        if (!(std::fabs(du) <= g.lx) || !(std::fabs(dv) <= g.ly)) {
          std::ostringstream msg;
          msg << "QgModel::step: departure displacement exceeds the domain or is non-finite at (l="
              << l << ", j=" << j << ", i=" << i << "): u dt=" << du << ", v dt=" << dv;
          throw std::runtime_error(msg.str());
        }
        double xd = g.x(i) - du;
        xd = std::fmod(xd, g.lx);
        if (xd < 0.0) xd += g.lx;
        double yd = g.y(j) - dv;
        unsigned char clamped = 0;
        if (yd < 0.0) {
          yd = 0.0;
          clamped = 1;
        } else if (yd > g.ly) {
          yd = g.ly;
          clamped = 1;
        }
        double fx = xd / dx;
        int ix0 = static_cast<int>(fx);
        if (ix0 >= g.nx) ix0 = g.nx - 1;
        double fy = yd / dy;
        int jy0 = static_cast<int>(fy);
        if (jy0 >= g.ny + 1) jy0 = g.ny;
        geo.ix0[p] = ix0;
        geo.jy0[p] = jy0;
        geo.ax[p] = fx - ix0;
        geo.ay[p] = fy - jy0;
        geo.clamped_y[p] = clamped;
      }
    }
  }
  return geo;
}

ModelState QgModel::step(const ModelState& state, const ForcingTerm* forcing) const {
  check_state(state);
  const GridSpec& g = params_.grid;
  const VorticityField qf = psi_to_q(state);
  Field3 u, v;
  diagnose_winds(state.psi, u, v, true);
  const StepGeometry geo = departure_geometry(u, v);

  Field3 rhs(2, g.ny, g.nx);
  const Field3& rs = params_.orography.values;
  size_t p = 0;
  for (int l = 0; l < 2; ++l) {
    const double beta_l = params_.beta_eff(l);
    for (int j = 0; j < g.ny; ++j) {
      const double planetary = beta_l * g.y(j);
      for (int i = 0; i < g.nx; ++i, ++p) {
        const int i0 = geo.ix0[p], i1 = (geo.ix0[p] + 1) % g.nx;
        const int j0 = geo.jy0[p], j1 = geo.jy0[p] + 1;
        const double ax = geo.ax[p], ay = geo.ay[p];
        const double qi = (1.0 - ax) * (1.0 - ay) * qf.q(l, j0, i0) + ax * (1.0 - ay) * qf.q(l, j0, i1) +
                          (1.0 - ax) * ay * qf.q(l, j1, i0) + ax * ay * qf.q(l, j1, i1);
        double r = qi - planetary;
        if (l == 1) r -= rs(0, j + 1, i);
        rhs(l, j, i) = r;
      }
    }
  }

  ModelState out;
  out.time = state.time + params_.dt_step;
  solver_->solve(rhs, out.psi);
  if (forcing) {
    if (!forcing->eta.same_shape(out.psi))
      throw std::invalid_argument("QgModel::step: forcing shape mismatch");
    out.psi += forcing->eta;
  }
  return out;
}

int QgModel::steps_for(double horizon) const {
  if (horizon < 0.0) throw std::invalid_argument("QgModel: negative horizon");
  const double ratio = horizon / params_.dt_step;
  const int n = static_cast<int>(std::llround(ratio));
  if (std::fabs(ratio - n) > 1e-8 * std::max(1.0, ratio)) {
    std::ostringstream msg;
    msg << "QgModel: horizon " << horizon << " is not a multiple of dt_step " << params_.dt_step;
    throw std::invalid_argument(msg.str());
  }
  return n;
}

ModelState QgModel::resolvent(const ModelState& state, double horizon,
                              const ForcingTerm* forcing) const {
  const int n = steps_for(horizon);
  ModelState cur = state;
  for (int k = 0; k < n; ++k) cur = step(cur, forcing);
  return cur;
}

Trajectory QgModel::generate_trajectory(const ModelState& init, double spinup, double length,
                                        double store_every) const {
  const int n_spin = steps_for(spinup);
  const int n_store = store_every > 0.0 ? steps_for(store_every) : 0;
  const int n_len = steps_for(length);
  if (n_len > 0 && (n_store <= 0 || n_len % n_store != 0))
    throw std::invalid_argument("QgModel::generate_trajectory: length must be a multiple of store_every");

  const auto guarded_step = [&](ModelState& cur, int k, const char* phase) {
    try {
      cur = step(cur);
    } catch (const std::runtime_error& e) {
      throw std::runtime_error(std::string(e.what()) + " [" + phase + " step " + std::to_string(k) + "]");
    }
    for (double x : cur.psi.data)
      if (!std::isfinite(x))
        throw std::runtime_error(std::string("QgModel::generate_trajectory: non-finite state [") +
                                 phase + " step " + std::to_string(k) + "]");
  };

  ModelState cur = init;
  for (int k = 1; k <= n_spin; ++k) guarded_step(cur, k, "spin-up");
  Trajectory traj;
  traj.dt_between = n_store * params_.dt_step;
  traj.states.push_back(cur);
  for (int k = 1; k <= n_len; ++k) {
    guarded_step(cur, k, "run");
    if (k % n_store == 0) traj.states.push_back(cur);
  }
  return traj;
}

Field3 QgModel::step_tl(const ModelState& base, const Field3& dpsi) const {
  check_state(base);
  const GridSpec& g = params_.grid;
  if (!dpsi.same_shape(base.psi)) throw std::invalid_argument("QgModel::step_tl: shape mismatch");
  const double dt = params_.dt_step;
  const double dx = g.dx(), dy = g.dy();

  const VorticityField qf = psi_to_q(base);
  Field3 u, v;
  diagnose_winds(base.psi, u, v, true);
  const StepGeometry geo = departure_geometry(u, v);

  Field3 dq_int;
  apply_pv_operator(g, params_.f1, params_.f2, dpsi, dq_int);
  Field3 du, dv;
  diagnose_winds(dpsi, du, dv, false);

  Field3 drhs(2, g.ny, g.nx);
  size_t p = 0;
  for (int l = 0; l < 2; ++l) {
    for (int j = 0; j < g.ny; ++j) {
      for (int i = 0; i < g.nx; ++i, ++p) {
        const int i0 = geo.ix0[p], i1 = (geo.ix0[p] + 1) % g.nx;
        const int j0 = geo.jy0[p], j1 = geo.jy0[p] + 1;
        const double ax = geo.ax[p], ay = geo.ay[p];
        // perturbation of the interpolated values (wall rows are fixed)
        const auto dq_at = [&](int jf, int ii) -> double {
          return (jf >= 1 && jf <= g.ny) ? dq_int(l, jf - 1, ii) : 0.0;
        };
        double d = (1.0 - ax) * (1.0 - ay) * dq_at(j0, i0) + ax * (1.0 - ay) * dq_at(j0, i1) +
                   (1.0 - ax) * ay * dq_at(j1, i0) + ax * ay * dq_at(j1, i1);
        // perturbation of the departure point through the winds
        const double dax = -dt * du(l, j, i) / dx;
        double day = geo.clamped_y[p] ? 0.0 : -dt * dv(l, j, i) / dy;
        const double g_ax = (1.0 - ay) * (qf.q(l, j0, i1) - qf.q(l, j0, i0)) +
                            ay * (qf.q(l, j1, i1) - qf.q(l, j1, i0));
        const double g_ay = (1.0 - ax) * (qf.q(l, j1, i0) - qf.q(l, j0, i0)) +
                            ax * (qf.q(l, j1, i1) - qf.q(l, j0, i1));
        d += g_ax * dax + g_ay * day;
        drhs(l, j, i) = d;
      }
    }
  }
  Field3 out;
  solver_->solve(drhs, out);
  return out;
}

Field3 QgModel::step_adjoint(const ModelState& base, const Field3& costate) const {
  check_state(base);
  const GridSpec& g = params_.grid;
  if (!costate.same_shape(base.psi)) throw std::invalid_argument("QgModel::step_adjoint: shape mismatch");
  const double dt = params_.dt_step;
  const double dx = g.dx(), dy = g.dy();
  const double r2dx = 1.0 / (2.0 * dx), r2dy = 1.0 / (2.0 * dy);

  const VorticityField qf = psi_to_q(base);
  Field3 u, v;
  diagnose_winds(base.psi, u, v, true);
  const StepGeometry geo = departure_geometry(u, v);

  // transpose of the final inversion
  Field3 mu;
  solver_->solve(costate, mu, true);

  Field3 aq(2, g.ny, g.nx);   // adjoint of the interior q rows
  Field3 apsi(2, g.ny, g.nx); // wind-path contributions to the state adjoint
  size_t p = 0;
  for (int l = 0; l < 2; ++l) {
    for (int j = 0; j < g.ny; ++j) {
      for (int i = 0; i < g.nx; ++i, ++p) {
        const double m = mu(l, j, i);
        const int i0 = geo.ix0[p], i1 = (geo.ix0[p] + 1) % g.nx;
        const int j0 = geo.jy0[p], j1 = geo.jy0[p] + 1;
        const double ax = geo.ax[p], ay = geo.ay[p];
        // scatter onto interior q rows; wall rows are constants
        const auto add_q = [&](int jf, int ii, double w) {
          if (jf >= 1 && jf <= g.ny) aq(l, jf - 1, ii) += w * m;
        };
        add_q(j0, i0, (1.0 - ax) * (1.0 - ay));
        add_q(j0, i1, ax * (1.0 - ay));
        add_q(j1, i0, (1.0 - ax) * ay);
        add_q(j1, i1, ax * ay);
        // departure-point path
        const double g_ax = (1.0 - ay) * (qf.q(l, j0, i1) - qf.q(l, j0, i0)) +
                            ay * (qf.q(l, j1, i1) - qf.q(l, j1, i0));
        const double g_ay = (1.0 - ax) * (qf.q(l, j1, i0) - qf.q(l, j0, i0)) +
                            ax * (qf.q(l, j1, i1) - qf.q(l, j0, i1));
        const double a_du = -dt * g_ax * m / dx;
        const double a_dv = geo.clamped_y[p] ? 0.0 : -dt * g_ay * m / dy;
        // transpose of the centered differences: u = -(psi_N - psi_S)/(2 dy),
        // v = (psi_E - psi_W)/(2 dx)
        if (j + 1 < g.ny) apsi(l, j + 1, i) -= a_du * r2dy;
        if (j > 0) apsi(l, j - 1, i) += a_du * r2dy;
        apsi(l, j, (i + 1) % g.nx) += a_dv * r2dx;
        apsi(l, j, (i + g.nx - 1) % g.nx) -= a_dv * r2dx;
      }
    }
  }
  // transpose of the pv operator applied to the interior q adjoint
  Field3 out;
  apply_pv_operator(g, params_.f1, params_.f2, aq, out, true);
  out += apsi;
  return out;
}

Field3 QgModel::tangent_linear(const Trajectory& base_traj, const Field3& delta) const {
  check_traj(base_traj);
  Field3 d = delta;
  for (size_t k = 0; k + 1 < base_traj.states.size(); ++k) d = step_tl(base_traj.states[k], d);
  return d;
}

Field3 QgModel::adjoint(const Trajectory& base_traj, const Field3& costate) const {
  check_traj(base_traj);
  Field3 lam = costate;
  for (size_t k = base_traj.states.size(); k-- > 1;) lam = step_adjoint(base_traj.states[k - 1], lam);
  return lam;
}

}  // namespace qgml::qg
