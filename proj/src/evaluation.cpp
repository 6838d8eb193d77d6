#include "qgml/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <random>
#include <stdexcept>
#include <thread>

namespace qgml::eval {

int default_threads() {
  if (const char* env = std::getenv("QGML_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

ForecastModel plain_forecaster(const qg::QgModel& model, std::string id) {
  ForecastModel fm;
  fm.model = &model;
  fm.id = std::move(id);
  return fm;
}

ForecastModel network_forecaster(const qg::QgModel& model, nn::NetworkSpec spec,
                                 std::vector<double> params, nn::Normalizer normalizer, double tau,
                                 std::string id) {
  spec.validate();
  normalizer.validate();
  if (tau <= 0.0) throw std::invalid_argument("network_forecaster: tau must be positive");
  ForecastModel fm;
  fm.model = &model;
  fm.tau = tau;
  fm.id = std::move(id);
  fm.make_corrector = [spec = std::move(spec), params = std::move(params),
                       normalizer]() -> da::Corrector {
    return [spec, params, normalizer](const qg::ModelState& x) {
      return nn::predict_correction(spec, params, normalizer, x);
    };
  };
  return fm;
}

ForecastModel oracle_forecaster(const qg::QgModel& model, const qg::QgModel& truth_model,
                                double tau, std::string id) {
  if (tau <= 0.0) throw std::invalid_argument("oracle_forecaster: tau must be positive");
  ForecastModel fm;
  fm.model = &model;
  fm.tau = tau;
  fm.id = std::move(id);
  const qg::QgModel* m = &model;
  const qg::QgModel* t = &truth_model;
  fm.make_corrector = [m, t, tau]() -> da::Corrector {
    // worker-private copies: the integrations below are not thread safe
    auto mc = std::make_shared<qg::QgModel>(*m);
    auto tc = std::make_shared<qg::QgModel>(*t);
    return [mc, tc, tau](const qg::ModelState& x) {
      return tc->resolvent(x, tau).psi - mc->resolvent(x, tau).psi;
    };
  };
  return fm;
}

namespace {

/// Chunked integration: the correction is re-evaluated on the state at the
/// start of every tau interval and applied as constant forcing across it.
qg::ModelState advance_with(const qg::QgModel& model, const da::Corrector& corrector, double tau,
                            const qg::ModelState& state, double horizon) {
  if (horizon < 0.0) throw std::invalid_argument("advance: negative horizon");
  if (horizon == 0.0) return state;
  if (!corrector) return model.resolvent(state, horizon);
  const double chunks = horizon / tau;
  const long n = std::lround(chunks);
  if (n < 1 || std::abs(chunks - static_cast<double>(n)) > 1e-9 * std::max(1.0, chunks))
    throw std::invalid_argument(
        "advance: horizon must be a multiple of the correction period tau");
  const double dt = model.params().dt_step;
  qg::ModelState x = state;
  for (long k = 0; k < n; ++k) {
    qg::ForcingTerm forcing;
    forcing.eta = corrector(x);
    forcing.eta *= dt / tau;
    x = model.resolvent(x, tau, &forcing);
  }
  return x;
}

}  // namespace

qg::ModelState advance(const ForecastModel& fm, const qg::ModelState& state, double horizon) {
  if (!fm.model) throw std::invalid_argument("advance: null model");
  const da::Corrector corrector = fm.make_corrector ? fm.make_corrector() : da::Corrector{};
  return advance_with(*fm.model, corrector, fm.tau, state, horizon);
}

SkillCurve forecast_skill(const ForecastModel& truth, const ForecastModel& test,
                          const std::vector<qg::ModelState>& inits,
                          const std::vector<double>& leads_days, int n_threads) {
  if (!truth.model || !test.model) throw std::invalid_argument("forecast_skill: null model");
  if (inits.empty()) throw std::invalid_argument("forecast_skill: empty start ensemble");
  if (leads_days.empty()) throw std::invalid_argument("forecast_skill: no lead times");
  for (size_t k = 0; k < leads_days.size(); ++k) {
    if (leads_days[k] < 0.0) throw std::invalid_argument("forecast_skill: negative lead");
    if (k > 0 && leads_days[k] <= leads_days[k - 1])
      throw std::invalid_argument("forecast_skill: lead times must increase");
  }

  const int n_init = static_cast<int>(inits.size());
  const int n_lead = static_cast<int>(leads_days.size());
  std::vector<double> err(static_cast<size_t>(n_init) * n_lead, 0.0);

  int workers = n_threads > 0 ? n_threads : default_threads();
  workers = std::min(workers, n_init);

  std::atomic<int> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;

  const auto body = [&]() {
    try {
      // thread-private integrators and correction maps
      const qg::QgModel mt(*truth.model);
      const qg::QgModel ms(*test.model);
      const da::Corrector ct = truth.make_corrector ? truth.make_corrector() : da::Corrector{};
      const da::Corrector cs = test.make_corrector ? test.make_corrector() : da::Corrector{};
      for (int j = next.fetch_add(1); j < n_init; j = next.fetch_add(1)) {
        qg::ModelState xt = inits[static_cast<size_t>(j)];
        qg::ModelState xs = xt;
        double prev_day = 0.0;
        for (int k = 0; k < n_lead; ++k) {
          const double gap = (leads_days[static_cast<size_t>(k)] - prev_day) * qg::kDay;
          xt = advance_with(mt, ct, truth.tau, xt, gap);
          xs = advance_with(ms, cs, test.tau, xs, gap);
          err[static_cast<size_t>(j) * n_lead + k] = rmse(xt.psi, xs.psi);
          prev_day = leads_days[static_cast<size_t>(k)];
        }
      }
    } catch (...) {
      const std::lock_guard<std::mutex> lock(err_mutex);
      if (!first_error) first_error = std::current_exception();
    }
  };

  if (workers <= 1) {
    body();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(body);
    for (std::thread& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  SkillCurve curve;
  curve.lead_days = leads_days;
  curve.n_ensemble = n_init;
  curve.truth_id = truth.id;
  curve.test_id = test.id;
  curve.fs.assign(static_cast<size_t>(n_lead), 0.0);
  for (int k = 0; k < n_lead; ++k) {
    double s = 0.0;
    for (int j = 0; j < n_init; ++j) s += err[static_cast<size_t>(j) * n_lead + k];
    curve.fs[static_cast<size_t>(k)] = s / n_init;
  }
  return curve;
}

Climatology climatology(const qg::Trajectory& traj) {
  if (traj.states.size() < 2 || traj.dt_between <= 0.0)
    throw std::invalid_argument("climatology: need a sampled trajectory");
  const double span = traj.dt_between * static_cast<double>(traj.states.size() - 1);
  if (span < 10.0 * qg::kDay)
    throw std::invalid_argument("climatology: trajectory too short (need at least ten days)");

  const Field3& first = traj.states.front().psi;
  Climatology out;
  out.mean = Field3(first.nl, first.ny, first.nx);
  out.stddev = Field3(first.nl, first.ny, first.nx);
  const double n = static_cast<double>(traj.states.size());
  for (const qg::ModelState& s : traj.states) {
    if (!s.psi.same_shape(first)) throw std::invalid_argument("climatology: ragged trajectory");
    for (size_t i = 0; i < out.mean.data.size(); ++i) out.mean.data[i] += s.psi.data[i];
  }
  for (double& v : out.mean.data) v /= n;
  for (const qg::ModelState& s : traj.states)
    for (size_t i = 0; i < out.stddev.data.size(); ++i) {
      const double d = s.psi.data[i] - out.mean.data[i];
      out.stddev.data[i] += d * d;
    }
  double acc = 0.0;
  for (double& v : out.stddev.data) {
    v = std::sqrt(v / n);
    acc += v;
  }
  out.variability = acc / static_cast<double>(out.stddev.data.size());
  return out;
}

double fit_doubling(const std::vector<double>& times, const std::vector<double>& errors,
                    double min_r2, int min_points) {
  if (times.size() != errors.size())
    throw std::invalid_argument("fit_doubling: times and errors differ in length");
  if (min_points < 3) min_points = 3;
  const int n = static_cast<int>(times.size());

  int best_len = 0;
  double best_r2 = 0.0, best_slope = 0.0;
  for (int i = 0; i < n; ++i) {
    if (!(errors[static_cast<size_t>(i)] > 0.0)) continue;
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0, syy = 0.0;
    int m = 0;
    for (int j = i; j < n; ++j) {
      if (!(errors[static_cast<size_t>(j)] > 0.0)) break;  // positive run ends
      const double x = times[static_cast<size_t>(j)] - times[static_cast<size_t>(i)];
      const double y = std::log(errors[static_cast<size_t>(j)]);
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
      syy += y * y;
      ++m;
      if (m < min_points) continue;
      const double dm = static_cast<double>(m);
      const double cxx = sxx - sx * sx / dm;
      const double cxy = sxy - sx * sy / dm;
      const double cyy = syy - sy * sy / dm;
      if (cxx <= 0.0 || cyy <= 1e-30) continue;
      const double r2 = cxy * cxy / (cxx * cyy);
      const double slope = cxy / cxx;
      if (r2 < min_r2 || slope <= 0.0) continue;
      if (m > best_len || (m == best_len && r2 > best_r2)) {
        best_len = m;
        best_r2 = r2;
        best_slope = slope;
      }
    }
  }
  if (best_len == 0)
    throw std::runtime_error("fit_doubling: no exponential growth regime detected");
  return std::log(2.0) / best_slope;
}

double doubling_time(const qg::QgModel& model, const qg::ModelState& base,
                     const DoublingConfig& config) {
  if (config.variability < 0.0)
    throw std::invalid_argument("doubling_time: negative variability");
  if (config.horizon <= 0.0 || config.sample_every <= 0.0)
    throw std::invalid_argument("doubling_time: horizon and sampling must be positive");

  Field3 pert(base.psi.nl, base.psi.ny, base.psi.nx);
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (double& v : pert.data) v = gauss(rng);
  const double r = rms(pert);
  if (r > 0.0) pert *= 1e-4 * config.variability / r;

  qg::ModelState xa = base;
  qg::ModelState xb = base;
  xb.psi += pert;

  const long n_samples = std::lround(config.horizon / config.sample_every);
  std::vector<double> times, errors;
  times.reserve(static_cast<size_t>(n_samples) + 1);
  errors.reserve(times.capacity());
  times.push_back(0.0);
  errors.push_back(rmse(xa.psi, xb.psi));
  for (long s = 1; s <= n_samples; ++s) {
    xa = model.resolvent(xa, config.sample_every);
    xb = model.resolvent(xb, config.sample_every);
    times.push_back(static_cast<double>(s) * config.sample_every);
    errors.push_back(rmse(xa.psi, xb.psi));
  }
  return fit_doubling(times, errors, config.min_r2, config.min_points);
}

double normalized_mse(const nn::NetworkSpec& spec, const std::vector<double>& params,
                      const nn::Normalizer& normalizer, const data::TrainingDatabase& db) {
  if (db.pairs.empty()) throw std::invalid_argument("normalized_mse: empty database");

  double tsum = 0.0;
  size_t n_comp = 0;
  for (const data::SamplePair& p : db.pairs) {
    for (const double v : p.target.data) tsum += v;
    n_comp += p.target.data.size();
  }
  const double tmean = tsum / static_cast<double>(n_comp);

  double var = 0.0, se = 0.0;
  for (const data::SamplePair& p : db.pairs) {
    qg::ModelState st;
    st.psi = p.input;
    const Field3 pred = nn::predict_correction(spec, params, normalizer, st);
    for (size_t i = 0; i < p.target.data.size(); ++i) {
      const double t = p.target.data[i];
      var += (t - tmean) * (t - tmean);
      const double d = pred.data[i] - t;
      se += d * d;
    }
  }
  var /= static_cast<double>(n_comp);
  if (!(var > 0.0)) throw std::invalid_argument("normalized_mse: target variance is zero");
  return (se / static_cast<double>(n_comp)) / var;
}

double normalized_mse(const nn::NetworkSpec& spec, const std::vector<double>& params,
                      const nn::Normalizer& normalizer,
                      const std::vector<data::TrainingDatabase>& dbs) {
  if (dbs.empty()) throw std::invalid_argument("normalized_mse: no test databases");
  double acc = 0.0;
  for (const data::TrainingDatabase& db : dbs) acc += normalized_mse(spec, params, normalizer, db);
  return acc / static_cast<double>(dbs.size());
}

data::TrainingDatabase true_error_database(const data::TrainingDatabase& db,
                                           const qg::QgModel& model,
                                           const qg::QgModel& truth_model) {
  if (db.pairs.empty()) throw std::invalid_argument("true_error_database: empty database");
  db.config.validate();
  data::TrainingDatabase out;
  out.config = db.config;
  out.trajectory_id = db.trajectory_id + "-true-error";
  out.pairs.reserve(db.pairs.size());
  for (const data::SamplePair& p : db.pairs) {
    qg::ModelState x;
    x.psi = p.input;
    data::SamplePair q;
    q.input = p.input;
    q.target = truth_model.resolvent(x, db.config.tau).psi - model.resolvent(x, db.config.tau).psi;
    out.pairs.push_back(std::move(q));
  }
  return out;
}

RmseSeries analysis_rmse(const da::AnalysisTrajectory& run, const qg::Trajectory& truth,
                         int spinup) {
  if (run.records.empty()) throw std::invalid_argument("analysis_rmse: no analysis windows");
  if (truth.states.empty() || truth.dt_between <= 0.0)
    throw std::invalid_argument("analysis_rmse: empty verifying trajectory");
  if (spinup < 0) spinup = 0;

  RmseSeries out;
  out.spinup = spinup;
  out.per_window.reserve(run.records.size());
  for (const da::CycleRecord& rec : run.records) {
    const double t = rec.analysis.time;
    const long k = std::lround(t / truth.dt_between);
    if (k < 0 || k >= static_cast<long>(truth.states.size()) ||
        std::abs(static_cast<double>(k) * truth.dt_between - t) > 1e-9 * std::max(1.0, std::abs(t)))
      throw std::invalid_argument(
          "analysis_rmse: window times do not align with the verifying trajectory");
    out.per_window.push_back(rmse(rec.analysis.psi, truth.states[static_cast<size_t>(k)].psi));
  }
  if (static_cast<int>(out.per_window.size()) <= spinup)
    throw std::invalid_argument("analysis_rmse: spin-up drops every window");
  double s = 0.0;
  for (size_t w = static_cast<size_t>(spinup); w < out.per_window.size(); ++w)
    s += out.per_window[w];
  out.average = s / static_cast<double>(out.per_window.size() - static_cast<size_t>(spinup));
  return out;
}

std::vector<nn::NetworkSpec> sweep_grid() {
  std::vector<nn::NetworkSpec> grid;
  grid.reserve(24);
  for (const nn::Family fam : {nn::Family::kD, nn::Family::kCD})
    for (const int n_layers : {1, 4})
      for (const int width : {4, 8, 16})
        for (const nn::Activation act : {nn::Activation::kLinear, nn::Activation::kRelu})
          grid.push_back(fam == nn::Family::kD ? nn::make_d_spec(n_layers, width, act)
                                               : nn::make_cd_spec(n_layers, width, act));
  return grid;
}

std::vector<std::string> sweep_labels() {
  std::vector<std::string> labels;
  labels.reserve(24);
  for (const char* fam : {"D", "CD"})
    for (const int n_layers : {1, 4})
      for (const int width : {4, 8, 16})
        for (const char* act : {"linear", "relu"})
          labels.push_back(std::string(fam) + "-" + std::to_string(n_layers) + "x" +
                           std::to_string(width) + "-" + act);
  return labels;
}

SweepResult run_sweep(const data::TrainingDatabase& db_train,
                      const data::TrainingDatabase& db_valid,
                      const std::vector<data::TrainingDatabase>& db_tests,
                      const SweepContext& context, const nn::TrainConfig& train_config,
                      int n_threads) {
  if (!context.model || !context.truth_model)
    throw std::invalid_argument("run_sweep: context needs both models");
  if (context.inits.empty()) throw std::invalid_argument("run_sweep: empty skill ensemble");
  train_config.validate();

  // the exact-error targets are shared by every record; built once up front
  // because the model integrations are not thread safe
  std::vector<data::TrainingDatabase> true_tests;
  true_tests.reserve(db_tests.size());
  for (const data::TrainingDatabase& db : db_tests)
    true_tests.push_back(true_error_database(db, *context.model, *context.truth_model));

  const std::vector<nn::NetworkSpec> grid = sweep_grid();
  const std::vector<std::string> labels = sweep_labels();
  SweepResult out;
  out.records.resize(grid.size());

  std::atomic<int> next{0};
  const auto body = [&]() {
    for (int i = next.fetch_add(1); i < static_cast<int>(grid.size()); i = next.fetch_add(1)) {
      SweepRecord& rec = out.records[static_cast<size_t>(i)];
      rec.spec = grid[static_cast<size_t>(i)];
      rec.label = labels[static_cast<size_t>(i)];
      try {
        rec.result = nn::train(rec.spec, db_train, db_valid, train_config);
        if (!db_tests.empty())
          rec.nmse_increments =
              normalized_mse(rec.spec, rec.result.params, rec.result.normalizer, db_tests);
        if (!true_tests.empty())
          rec.nmse_truth =
              normalized_mse(rec.spec, rec.result.params, rec.result.normalizer, true_tests);
        const ForecastModel truth = plain_forecaster(*context.truth_model, "truth");
        const ForecastModel hybrid =
            network_forecaster(*context.model, rec.spec, rec.result.params,
                               rec.result.normalizer, db_train.config.tau, rec.label);
        rec.fs_at_lead =
            forecast_skill(truth, hybrid, context.inits, {context.fs_lead_days}, 1).fs.front();
      } catch (const std::exception& e) {
        rec.failed = true;
        rec.error = e.what();
      }
    }
  };

  int workers = n_threads > 0 ? n_threads : default_threads();
  workers = std::min<int>(workers, static_cast<int>(grid.size()));
  if (workers <= 1) {
    body();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(body);
    for (std::thread& th : pool) th.join();
  }

  for (size_t i = 0; i < out.records.size(); ++i) {
    const SweepRecord& rec = out.records[i];
    if (rec.failed || !std::isfinite(rec.fs_at_lead)) continue;
    if (out.best_index < 0 ||
        rec.fs_at_lead < out.records[static_cast<size_t>(out.best_index)].fs_at_lead)
      out.best_index = static_cast<int>(i);
  }
  return out;
}

}  // namespace qgml::eval
