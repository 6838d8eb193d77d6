#ifndef QGML_OBSERVATIONS_HPP
#define QGML_OBSERVATIONS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "qgml/field.hpp"
#include "qgml/grid.hpp"
#include "qgml/qg_model.hpp"

namespace qgml::da {

/// One observation site: layer index and physical (x, y) coordinates.
struct ObsLocation {
  int layer = 0;
  double x = 0.0;
  double y = 0.0;
};

/// Simulated sounding network configuration.
struct ObsConfig {
  int n_per_batch = 50;                       // N_y
  double batch_interval = 2.0 * qg::kHour;    // time between batches
  double first_batch_offset = qg::kHour;      // first batch of each day at 01:00
  double obs_var = 0.1;                       // diagonal of R
  std::uint64_t seed = 0;

  void validate() const;
};

/// One batch of simultaneous observations.
struct ObsBatch {
  double time = 0.0;
  std::vector<ObsLocation> locations;
  std::vector<double> values;
  double obs_var = 0.1;
};

/// Batches covering consecutive 1-day windows (12 batches per window).
struct ObsDatabase {
  std::vector<ObsBatch> batches;
  std::string truth_id;
  std::uint64_t seed = 0;
  static constexpr int kBatchesPerWindow = 12;

  int complete_windows() const {
    return static_cast<int>(batches.size()) / kBatchesPerWindow;
  }
  /// Batches of window w (0-based), in time order.
  std::vector<const ObsBatch*> window(int w) const;
};

/// H: bilinear interpolation of the stream function at the given sites.
/// psi carries the interior rows; the walls interpolate as psi = 0.
std::vector<double> interpolate(const qg::GridSpec& grid, const Field3& psi,
                                const std::vector<ObsLocation>& locations);

/// Exact transpose of interpolate: scatters weighted residuals onto the
/// interpolation stencils.
Field3 h_transpose(const qg::GridSpec& grid, const std::vector<ObsLocation>& locations,
                   const std::vector<double>& residuals);

/// Draws fresh uniform sites per batch, evaluates H on the matching truth
/// state, and adds N(0, obs_var) noise. Deterministic per seed. The truth
/// must be stored at a spacing that hits every batch time exactly and must
/// cover at least one full day.
ObsDatabase generate_obs(const qg::Trajectory& truth, const qg::GridSpec& grid,
                         const ObsConfig& config, const std::string& truth_id = "");

/// JSON-lines persistence, one batch per line:
/// {"t": f64, "locs": [[layer, x, y], ...], "vals": [...], "var": f64}
void save_obs(const ObsDatabase& db, const std::string& path);
ObsDatabase load_obs(const std::string& path);

}  // namespace qgml::da

#endif
