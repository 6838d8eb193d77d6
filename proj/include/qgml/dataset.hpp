#ifndef QGML_DATASET_HPP
#define QGML_DATASET_HPP

#include <string>
#include <vector>

#include "qgml/normalizer.hpp"
#include "qgml/qg_model.hpp"

namespace qgml::data {

enum class SourceKind { kAnalysis, kTruth };

/// How a training database is cut out of a stored trajectory: every pair
/// spans one sampling period tau, and consecutive pairs tile the trajectory
/// without overlap.
struct DatasetConfig {
  double tau = qg::kDay;  // sampling period (multiple of the storage spacing)
  int n_samples = 0;      // requested pair count; 0 keeps the maximum feasible
  SourceKind source = SourceKind::kAnalysis;

  void validate() const;
};

/// One supervised example: the state at the start of a sampling period and
/// the error the model accumulates over it, x(t+tau) - M(x(t)).
struct SamplePair {
  Field3 input;
  Field3 target;
};

struct TrainingDatabase {
  std::vector<SamplePair> pairs;
  DatasetConfig config;
  std::string trajectory_id;
  nn::Normalizer normalizer;  // statistics of this database (see compute_normalizer)

  int n_samples() const { return static_cast<int>(pairs.size()); }
};

/// Stored-state indices that serve as pair inputs when subsampling at the
/// given stride: {0, stride, 2*stride, ...} up to n_stored - 1. The database
/// size N_t is the size of this set; the matching targets each need the
/// stored state one stride further on.
std::vector<int> kept_input_indices(int n_stored, int stride);

/// Largest pair count a trajectory of n_stored states supports at the given
/// stride (every input needs its endpoint state in range).
int max_feasible_samples(int n_stored, int stride);

/// Cuts pairs (x_{nk}, x_{n(k+1)} - M_tau(x_{nk})) out of a stored trajectory,
/// where n = tau / storage spacing and M is the model whose error is being
/// learned. The trajectory must be stored at a spacing that divides tau and
/// extend one stride beyond the last input. Throws when it is too short,
/// naming the maximum feasible sample count.
TrainingDatabase build_database(const qg::Trajectory& traj, const qg::QgModel& model,
                                const DatasetConfig& config,
                                const std::string& trajectory_id = "");

/// Positional trajectory-role split: first = training, second = validation,
/// all remaining = test.
struct RoleSplit {
  std::string train;
  std::string valid;
  std::vector<std::string> test;
};
RoleSplit assign_roles(const std::vector<std::string>& trajectory_ids);

/// Scalar mean/std over all input entries and, separately, over all target
/// entries (population convention). Throws on an empty database or when
/// either spread vanishes.
nn::Normalizer compute_normalizer(const TrainingDatabase& db);

/// Binary persistence: magic "QGD1", header (sample count, field dims, tau in
/// model-step units, source flag), interleaved input/target records, then a
/// JSON footer with the exact tau, source, trajectory id, and normalizer.
void save_database(const TrainingDatabase& db, const qg::QgModel& model,
                   const std::string& path);
TrainingDatabase load_database(const std::string& path);

}  // namespace qgml::data

#endif
