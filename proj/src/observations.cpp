#include "qgml/observations.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <random>
#include <sstream>
#include <stdexcept>

namespace qgml::da {

void ObsConfig::validate() const {
  if (n_per_batch < 1) throw std::invalid_argument("ObsConfig: n_per_batch must be >= 1");
  if (!(obs_var > 0.0)) throw std::invalid_argument("ObsConfig: obs_var must be positive");
  if (!(batch_interval > 0.0)) throw std::invalid_argument("ObsConfig: batch_interval must be positive");
  if (first_batch_offset < 0.0)
    throw std::invalid_argument("ObsConfig: first_batch_offset must be nonnegative");
}

std::vector<const ObsBatch*> ObsDatabase::window(int w) const {
  if (w < 0 || w >= complete_windows())
    throw std::out_of_range("ObsDatabase: window index out of range");
  std::vector<const ObsBatch*> out;
  for (int k = 0; k < kBatchesPerWindow; ++k)
    out.push_back(&batches[static_cast<size_t>(w) * kBatchesPerWindow + k]);
  return out;
}

namespace {

struct Stencil {
  int i0, i1, jf0, jf1;  // x columns and full-mesh rows (0 and ny+1 are walls)
  double ax, ay;
};

Stencil locate(const qg::GridSpec& g, const ObsLocation& loc) {
  if (loc.layer < 0 || loc.layer >= g.n_layers)
    throw std::invalid_argument("observations: layer index out of range");
  if (!(loc.x >= 0.0) || !(loc.x < g.lx) || !(loc.y >= 0.0) || !(loc.y <= g.ly)) {
    std::ostringstream msg;
    msg << "observations: location (" << loc.x << ", " << loc.y << ") outside the domain";
    throw std::invalid_argument(msg.str());
  }
  Stencil s;
  const double fx = loc.x / g.dx();
  s.i0 = static_cast<int>(fx);
  if (s.i0 >= g.nx) s.i0 = g.nx - 1;
  s.i1 = (s.i0 + 1) % g.nx;
  s.ax = fx - s.i0;
  const double fy = loc.y / g.dy();
  s.jf0 = static_cast<int>(fy);
  if (s.jf0 > g.ny) s.jf0 = g.ny;  // y = ly lands in the last cell
  s.jf1 = s.jf0 + 1;
  s.ay = fy - s.jf0;
  return s;
}

}  // namespace

std::vector<double> interpolate(const qg::GridSpec& g, const Field3& psi,
                                const std::vector<ObsLocation>& locations) {
  if (psi.nl != g.n_layers || psi.ny != g.ny || psi.nx != g.nx)
    throw std::invalid_argument("observations: state shape does not match the grid");
  std::vector<double> out(locations.size());
  for (size_t k = 0; k < locations.size(); ++k) {
    const ObsLocation& loc = locations[k];
    const Stencil s = locate(g, loc);
    const auto at = [&](int jf, int i) -> double {
      return (jf >= 1 && jf <= g.ny) ? psi(loc.layer, jf - 1, i) : 0.0;  // walls hold psi = 0
    };
    out[k] = (1.0 - s.ax) * (1.0 - s.ay) * at(s.jf0, s.i0) + s.ax * (1.0 - s.ay) * at(s.jf0, s.i1) +
             (1.0 - s.ax) * s.ay * at(s.jf1, s.i0) + s.ax * s.ay * at(s.jf1, s.i1);
  }
  return out;
}

Field3 h_transpose(const qg::GridSpec& g, const std::vector<ObsLocation>& locations,
                   const std::vector<double>& residuals) {
  if (locations.size() != residuals.size())
    throw std::invalid_argument("observations: residual count does not match locations");
  Field3 out(g.n_layers, g.ny, g.nx);
  for (size_t k = 0; k < locations.size(); ++k) {
    const ObsLocation& loc = locations[k];
    const Stencil s = locate(g, loc);
    const double r = residuals[k];
    const auto add = [&](int jf, int i, double w) {
      if (jf >= 1 && jf <= g.ny) out(loc.layer, jf - 1, i) += w * r;
    };
    add(s.jf0, s.i0, (1.0 - s.ax) * (1.0 - s.ay));
    add(s.jf0, s.i1, s.ax * (1.0 - s.ay));
    add(s.jf1, s.i0, (1.0 - s.ax) * s.ay);
    add(s.jf1, s.i1, s.ax * s.ay);
  }
  return out;
}

ObsDatabase generate_obs(const qg::Trajectory& truth, const qg::GridSpec& g,
                         const ObsConfig& config, const std::string& truth_id) {
  config.validate();
  if (truth.states.empty()) throw std::invalid_argument("generate_obs: empty truth trajectory");
  const double t0 = truth.states.front().time;
  const double t_end = truth.states.back().time;
  if (t_end - t0 + 1e-12 < qg::kDay)
    throw std::invalid_argument("generate_obs: truth shorter than one assimilation window");

  ObsDatabase db;
  db.truth_id = truth_id;
  db.seed = config.seed;
  std::mt19937_64 gen(config.seed);
  std::uniform_int_distribution<int> layer_dist(0, g.n_layers - 1);
  std::uniform_real_distribution<double> x_dist(0.0, g.lx);
  std::uniform_real_distribution<double> y_dist(0.0, g.ly);
  std::normal_distribution<double> noise(0.0, std::sqrt(config.obs_var));

  const int n_days = static_cast<int>(std::floor((t_end - t0) / qg::kDay + 1e-9));
  for (int day = 0; day < n_days; ++day) {
    for (int k = 0; k < ObsDatabase::kBatchesPerWindow; ++k) {
      const double tb = t0 + day * qg::kDay + config.first_batch_offset + k * config.batch_interval;
      const double fidx = (tb - t0) / truth.dt_between;
      const auto idx = static_cast<size_t>(std::llround(fidx));
      if (idx >= truth.states.size() || std::fabs(fidx - static_cast<double>(idx)) > 1e-6)
        throw std::invalid_argument("generate_obs: truth spacing misses a batch time");
      ObsBatch batch;
      batch.time = tb;
      batch.obs_var = config.obs_var;
      batch.locations.reserve(config.n_per_batch);
      for (int o = 0; o < config.n_per_batch; ++o) {
        ObsLocation loc;
        loc.layer = layer_dist(gen);
        loc.x = x_dist(gen);
        loc.y = y_dist(gen);
        batch.locations.push_back(loc);
      }
      batch.values = interpolate(g, truth.states[idx].psi, batch.locations);
      for (double& v : batch.values) v += noise(gen);
      db.batches.push_back(std::move(batch));
    }
  }
  return db;
}

void save_obs(const ObsDatabase& db, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_obs: cannot open " + path);
  out.precision(17);
  for (const ObsBatch& b : db.batches) {
    nlohmann::json j;
    j["t"] = b.time;
    auto& locs = j["locs"] = nlohmann::json::array();
    for (const ObsLocation& loc : b.locations) locs.push_back({loc.layer, loc.x, loc.y});
    j["vals"] = b.values;
    j["var"] = b.obs_var;
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("save_obs: write failed for " + path);
}

ObsDatabase load_obs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_obs: cannot open " + path);
  ObsDatabase db;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    ObsBatch b;
    b.time = j.at("t").get<double>();
    for (const auto& e : j.at("locs")) {
      ObsLocation loc;
      loc.layer = e.at(0).get<int>();
      loc.x = e.at(1).get<double>();
      loc.y = e.at(2).get<double>();
      b.locations.push_back(loc);
    }
    b.values = j.at("vals").get<std::vector<double>>();
    b.obs_var = j.at("var").get<double>();
    if (b.values.size() != b.locations.size())
      throw std::runtime_error("load_obs: values/locations mismatch in " + path);
    db.batches.push_back(std::move(b));
  }
  return db;
}

}  // namespace qgml::da
