#include "qgml/lbfgs.hpp"

#include <cmath>
#include <deque>
#include <stdexcept>

namespace qgml::opt {

namespace {

double vdot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

double vnorm(const std::vector<double>& a) { return std::sqrt(vdot(a, a)); }

/// Cubic-interpolation step inside [lo, hi] from values/slopes at the ends;
/// falls back to bisection when the interpolant is untrustworthy.
double interp_step(double a, double fa, double ga, double b, double fb, double gb) {
  const double d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
  const double disc = d1 * d1 - ga * gb;
  if (disc > 0.0) {
    const double d2 = std::sqrt(disc) * (b > a ? 1.0 : -1.0);
    const double t = b - (b - a) * ((gb + d2 - d1) / (gb - ga + 2.0 * d2));
    const double lo = std::min(a, b), hi = std::max(a, b);
    const double margin = 0.1 * (hi - lo);
    if (t > lo + margin && t < hi - margin) return t;
  }
  return 0.5 * (a + b);
}

}  // namespace

LbfgsResult lbfgs_minimize(const ObjectiveFn& fg, std::vector<double> x0,
                           const LbfgsOptions& opt) {
  if (opt.memory < 1 || opt.max_iterations < 0 || !(opt.grad_reduction >= 0.0))
    throw std::invalid_argument("lbfgs_minimize: invalid options");
  const size_t n = x0.size();

  LbfgsResult res;
  res.x = std::move(x0);
  std::vector<double> g(n);
  res.f = fg(res.x, g);
  ++res.evaluations;
  res.initial_grad_norm = vnorm(g);
  res.grad_norm = res.initial_grad_norm;
  const double gtol = opt.grad_reduction * res.initial_grad_norm;

  std::vector<double> best_x = res.x;
  double best_f = res.f;

  std::deque<std::vector<double>> ss, ys;
  std::deque<double> rho;

  std::vector<double> d(n), xt(n), gt(n), alpha_buf;

  for (res.iterations = 0; res.iterations < opt.max_iterations; ++res.iterations) {
    if (res.grad_norm <= gtol) {
      res.converged = true;
      break;
    }

    // two-loop recursion for d = -H g
    d = g;
    alpha_buf.assign(ss.size(), 0.0);
    for (size_t k = ss.size(); k-- > 0;) {
      alpha_buf[k] = rho[k] * vdot(ss[k], d);
      for (size_t i = 0; i < n; ++i) d[i] -= alpha_buf[k] * ys[k][i];
    }
    if (!ss.empty()) {
      const double gamma = vdot(ss.back(), ys.back()) / vdot(ys.back(), ys.back());
      for (double& v : d) v *= gamma;
    }
    for (size_t k = 0; k < ss.size(); ++k) {
      const double beta = rho[k] * vdot(ys[k], d);
      for (size_t i = 0; i < n; ++i) d[i] += (alpha_buf[k] - beta) * ss[k][i];
    }
    for (double& v : d) v = -v;

    double dg0 = vdot(d, g);
    if (!(dg0 < 0.0)) {  // not a descent direction; fall back to steepest descent
      for (size_t i = 0; i < n; ++i) d[i] = -g[i];
      dg0 = -vdot(g, g);
      ss.clear();
      ys.clear();
      rho.clear();
    }

    // strong-Wolfe line search (bracket + zoom)
    const double f0 = res.f;
    const auto eval = [&](double a) {
      for (size_t i = 0; i < n; ++i) xt[i] = res.x[i] + a * d[i];
      const double fv = fg(xt, gt);
      ++res.evaluations;
      if (fv < best_f) {
        best_f = fv;
        best_x = xt;
      }
      return fv;
    };

    double a_prev = 0.0, f_prev = f0, g_prev = dg0;
    // without curvature pairs d = -g carries no scale information; cap the
    // first trial step at unit length so a huge gradient cannot fling the
    // search far outside the feasible region
    double a = ss.empty() ? std::min(1.0, 1.0 / res.grad_norm) : 1.0;
    double a_good = -1.0, f_good = 0.0;
    int evals = 0;
    bool zoomed = false;
    double zlo = 0.0, zhi = 0.0, flo = 0.0, fhi = 0.0, glo = 0.0, ghi = 0.0;

    while (evals < opt.max_line_evals) {
      const double fv = eval(a);
      ++evals;
      const double gv = vdot(gt, d);
      // written as a negated <= so non-finite trial values bracket instead of
      // falling through to the acceptance tests
      if (!(fv <= f0 + opt.wolfe_c1 * a * dg0) || (evals > 1 && fv >= f_prev)) {
        zlo = a_prev; flo = f_prev; glo = g_prev;
        zhi = a; fhi = fv; ghi = gv;
        zoomed = true;
        break;
      }
      if (std::fabs(gv) <= -opt.wolfe_c2 * dg0) {
        a_good = a; f_good = fv;
        break;
      }
      if (gv >= 0.0) {
        zlo = a; flo = fv; glo = gv;
        zhi = a_prev; fhi = f_prev; ghi = g_prev;
        zoomed = true;
        break;
      }
      a_prev = a; f_prev = fv; g_prev = gv;
      a *= 2.0;
    }

    if (zoomed) {
      while (evals < opt.max_line_evals) {
        const double at = interp_step(zlo, flo, glo, zhi, fhi, ghi);
        const double fv = eval(at);
        ++evals;
        const double gv = vdot(gt, d);
        if (!(fv <= f0 + opt.wolfe_c1 * at * dg0) || fv >= flo) {
          zhi = at; fhi = fv; ghi = gv;
        } else {
          if (std::fabs(gv) <= -opt.wolfe_c2 * dg0) {
            a_good = at; f_good = fv;
            break;
          }
          if (gv * (zhi - zlo) >= 0.0) {
            zhi = zlo; fhi = flo; ghi = glo;
          }
          zlo = at; flo = fv; glo = gv;
        }
        if (std::fabs(zhi - zlo) < 1e-16 * std::max(1.0, std::fabs(zlo))) break;
      }
    }

    if (a_good < 0.0) {
      res.line_search_failed = true;
      break;
    }

    // accept the step; both line-search exits follow an eval at a_good, so
    // xt/gt/f_good already hold the new point
    std::vector<double> s(n), y(n);
    for (size_t i = 0; i < n; ++i) {
      s[i] = xt[i] - res.x[i];
      y[i] = gt[i] - g[i];
    }
    res.x = xt;
    g = gt;
    res.f = f_good;
    res.grad_norm = vnorm(g);

    const double sy = vdot(s, y);
    if (sy > 1e-12 * vnorm(s) * vnorm(y)) {  // curvature guard
      ss.push_back(std::move(s));
      ys.push_back(std::move(y));
      rho.push_back(1.0 / sy);
      if (static_cast<int>(ss.size()) > opt.memory) {
        ss.pop_front();
        ys.pop_front();
        rho.pop_front();
      }
    }
  }

  if (res.grad_norm <= gtol) res.converged = true;
  if (best_f < res.f) {
    res.f = best_f;
    res.x = best_x;
    std::vector<double> gtmp(n);
    res.f = fg(res.x, gtmp);
    ++res.evaluations;
    res.grad_norm = vnorm(gtmp);
  }
  return res;
}

}  // namespace qgml::opt
