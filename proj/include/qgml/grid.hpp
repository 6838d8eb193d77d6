#ifndef QGML_GRID_HPP
#define QGML_GRID_HPP

#include <stdexcept>

namespace qgml::qg {

/// Nondimensional time units: length scale 1e6 m, velocity scale 10 m/s,
/// so one time unit is 1e5 s (about 27.8 h).
constexpr double kTimeUnitSeconds = 1e5;
constexpr double kHour = 3600.0 / kTimeUnitSeconds;  // 0.036
constexpr double kDay = 24.0 * kHour;                // 0.864

/// Channel grid: periodic in x, ny interior rows in y plus two fixed
/// boundary rows at y = 0 and y = ly that are outside the state vector.
struct GridSpec {
  int nx = 40;
  int ny = 20;
  int n_layers = 2;
  double lx = 12.0;
  double ly = 6.3;

  double dx() const { return lx / nx; }
  double dy() const { return ly / (ny + 1); }
  int state_size() const { return n_layers * ny * nx; }

  double x(int i) const { return i * dx(); }
  /// y of interior row j, j in [0, ny)
  double y(int j) const { return (j + 1) * dy(); }
  /// y of full-field row jf, jf in [0, ny+2): 0 is the south wall
  double y_full(int jf) const { return jf * dy(); }

  bool operator==(const GridSpec&) const = default;

  void validate() const {
    if (nx < 4 || ny < 4 || n_layers != 2 || lx <= 0 || ly <= 0)
      throw std::invalid_argument("GridSpec: need nx >= 4, ny >= 4, n_layers == 2, positive extents");
  }
};

}  // namespace qgml::qg

#endif
