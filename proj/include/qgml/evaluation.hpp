#ifndef QGML_EVALUATION_HPP
#define QGML_EVALUATION_HPP

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "qgml/dataset.hpp"
#include "qgml/neural.hpp"
#include "qgml/var4d.hpp"

namespace qgml::eval {

/// Number of worker threads: QGML_THREADS when set, otherwise the hardware
/// concurrency (at least 1).
int default_threads();

/// Integration endpoint for forecast studies: a base model plus an optional
/// correction map applied as a constant per-step forcing, re-evaluated every
/// `tau`. `make_corrector` is invoked once per worker thread, so closures
/// that integrate further models internally stay confined to one thread.
struct ForecastModel {
  const qg::QgModel* model = nullptr;
  std::function<da::Corrector()> make_corrector;  // empty: uncorrected model
  double tau = qg::kDay;
  std::string id;
};

ForecastModel plain_forecaster(const qg::QgModel& model, std::string id);

/// Correction from a trained network, decoded through its normalizer.
ForecastModel network_forecaster(const qg::QgModel& model, nn::NetworkSpec spec,
                                 std::vector<double> params, nn::Normalizer normalizer, double tau,
                                 std::string id);

/// The exact accumulated model error: each correction evaluates both models
/// over one sampling period and takes the difference.
ForecastModel oracle_forecaster(const qg::QgModel& model, const qg::QgModel& truth_model,
                                double tau, std::string id);

/// Advances a state by `horizon`. Corrected forecasters refresh their forcing
/// every tau, so `horizon` must then be a multiple of tau.
qg::ModelState advance(const ForecastModel& fm, const qg::ModelState& state, double horizon);

/// Ensemble-mean RMSE between two integrations of the same initial states,
/// per lead time.
struct SkillCurve {
  std::vector<double> lead_days;
  std::vector<double> fs;
  int n_ensemble = 0;
  std::string truth_id;
  std::string test_id;
};

SkillCurve forecast_skill(const ForecastModel& truth, const ForecastModel& test,
                          const std::vector<qg::ModelState>& inits,
                          const std::vector<double>& leads_days, int n_threads = 0);

/// Pointwise time statistics of a trajectory; variability is the spatial
/// average of the standard-deviation field.
struct Climatology {
  Field3 mean;
  Field3 stddev;
  double variability = 0.0;
};

Climatology climatology(const qg::Trajectory& traj);

/// ln 2 over the growth rate of the longest contiguous segment of
/// log(errors) that a straight line fits with R^2 >= min_r2 and positive
/// slope. Throws when no admissible segment exists.
double fit_doubling(const std::vector<double>& times, const std::vector<double>& errors,
                    double min_r2 = 0.98, int min_points = 8);

struct DoublingConfig {
  double variability = 4.95;           // sets the seed perturbation to 1e-4 x this
  double horizon = 40.0 * qg::kDay;    // paired-integration length
  double sample_every = qg::kHour;     // error-series spacing
  std::uint64_t seed = 0;
  double min_r2 = 0.98;
  int min_points = 8;
};

/// Error-doubling time of the model around `base`, in model time units.
double doubling_time(const qg::QgModel& model, const qg::ModelState& base,
                     const DoublingConfig& config = {});

/// Mean squared prediction error over the database divided by the population
/// variance of its targets; predictions are decoded to raw units.
double normalized_mse(const nn::NetworkSpec& spec, const std::vector<double>& params,
                      const nn::Normalizer& normalizer, const data::TrainingDatabase& db);

/// Average of the per-database normalized MSE over several test databases.
double normalized_mse(const nn::NetworkSpec& spec, const std::vector<double>& params,
                      const nn::Normalizer& normalizer,
                      const std::vector<data::TrainingDatabase>& dbs);

/// Same inputs as `db`, with targets replaced by the exact model error
/// accumulated over the database's sampling period.
data::TrainingDatabase true_error_database(const data::TrainingDatabase& db,
                                           const qg::QgModel& model,
                                           const qg::QgModel& truth_model);

/// Per-window analysis RMSE against a verifying trajectory; the average
/// excludes the first `spinup` windows.
struct RmseSeries {
  std::vector<double> per_window;
  double average = 0.0;
  int spinup = 0;
};

RmseSeries analysis_rmse(const da::AnalysisTrajectory& run, const qg::Trajectory& truth,
                         int spinup = 8);

/// The fixed architecture grid: 2 families x {1,4} blocks x {4,8,16} widths
/// x {linear, relu}, in that nesting order.
std::vector<nn::NetworkSpec> sweep_grid();
std::vector<std::string> sweep_labels();

struct SweepRecord {
  nn::NetworkSpec spec;
  std::string label;
  nn::TrainResult result;
  double nmse_increments = std::numeric_limits<double>::quiet_NaN();
  double nmse_truth = std::numeric_limits<double>::quiet_NaN();
  double fs_at_lead = std::numeric_limits<double>::quiet_NaN();
  bool failed = false;
  std::string error;
};

struct SweepResult {
  std::vector<SweepRecord> records;  // grid order
  int best_index = -1;               // lowest fs_at_lead among the survivors
};

/// Shared evaluation context for a sweep cell.
struct SweepContext {
  const qg::QgModel* model = nullptr;        // imperfect forecaster
  const qg::QgModel* truth_model = nullptr;  // verifying integrator
  std::vector<qg::ModelState> inits;         // skill ensemble start states
  double fs_lead_days = 8.0;
};

/// Trains every architecture in the grid on one database pair, evaluates the
/// normalized test MSE (against increments and against the exact model
/// error) and the forecast skill at the context lead, and selects the best
/// record by that skill. Training failures mark the record instead of
/// aborting the sweep.
SweepResult run_sweep(const data::TrainingDatabase& db_train,
                      const data::TrainingDatabase& db_valid,
                      const std::vector<data::TrainingDatabase>& db_tests,
                      const SweepContext& context, const nn::TrainConfig& train_config,
                      int n_threads = 0);

}  // namespace qgml::eval

#endif
