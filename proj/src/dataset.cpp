#include "qgml/dataset.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <string>

namespace qgml::data {

void DatasetConfig::validate() const {
  if (!(tau > 0.0)) throw std::invalid_argument("DatasetConfig: tau must be positive");
  if (n_samples < 0) throw std::invalid_argument("DatasetConfig: n_samples must be nonnegative");
}

std::vector<int> kept_input_indices(int n_stored, int stride) {
  if (n_stored < 1) throw std::invalid_argument("kept_input_indices: need at least one state");
  if (stride < 1) throw std::invalid_argument("kept_input_indices: stride must be >= 1");
  std::vector<int> out;
  for (int i = 0; i < n_stored; i += stride) out.push_back(i);
  return out;
}

int max_feasible_samples(int n_stored, int stride) {
  if (n_stored < 1 || stride < 1) return 0;
  return (n_stored - 1) / stride;  // input n*k needs state n*(k+1) in range
}

TrainingDatabase build_database(const qg::Trajectory& traj, const qg::QgModel& model,
                                const DatasetConfig& config, const std::string& trajectory_id) {
  config.validate();
  if (traj.states.empty()) throw std::invalid_argument("build_database: empty trajectory");
  if (!(traj.dt_between > 0.0))
    throw std::invalid_argument("build_database: trajectory storage spacing must be positive");

  const double ratio = config.tau / traj.dt_between;
  const int stride = static_cast<int>(std::llround(ratio));
  if (stride < 1 || std::fabs(ratio - stride) > 1e-9 * ratio)
    throw std::invalid_argument(
        "build_database: tau must be a positive multiple of the trajectory storage spacing");

  const int n_stored = static_cast<int>(traj.states.size());
  const int max_n = max_feasible_samples(n_stored, stride);
  const int n = config.n_samples == 0 ? max_n : config.n_samples;
  if (n > max_n || n < 1)
    throw std::invalid_argument("build_database: trajectory too short for " +
                                std::to_string(config.n_samples) + " samples at this tau (max " +
                                std::to_string(max_n) + ")");

  TrainingDatabase db;
  db.config = config;
  db.config.n_samples = n;
  db.trajectory_id = trajectory_id;
  db.pairs.reserve(static_cast<size_t>(n));
  for (int k = 0; k < n; ++k) {
    const qg::ModelState& start = traj.states[static_cast<size_t>(k) * stride];
    const qg::ModelState& end = traj.states[static_cast<size_t>(k + 1) * stride];
    const qg::ModelState fc = model.resolvent(start, config.tau);
    db.pairs.push_back(SamplePair{start.psi, end.psi - fc.psi});
  }
  return db;
}

RoleSplit assign_roles(const std::vector<std::string>& trajectory_ids) {
  if (trajectory_ids.size() < 3)
    throw std::invalid_argument("assign_roles: need at least 3 trajectories (train/valid/test)");
  RoleSplit split;
  split.train = trajectory_ids[0];
  split.valid = trajectory_ids[1];
  split.test.assign(trajectory_ids.begin() + 2, trajectory_ids.end());
  return split;
}

namespace {

// population mean/std over every entry of the selected member
void scalar_stats(const std::vector<SamplePair>& pairs, bool inputs, double& mean, double& std) {
  double sum = 0.0;
  size_t count = 0;
  for (const SamplePair& p : pairs) {
    const Field3& f = inputs ? p.input : p.target;
    for (double v : f.data) sum += v;
    count += f.data.size();
  }
  mean = sum / static_cast<double>(count);
  double ss = 0.0;
  for (const SamplePair& p : pairs) {
    const Field3& f = inputs ? p.input : p.target;
    for (double v : f.data) ss += (v - mean) * (v - mean);
  }
  std = std::sqrt(ss / static_cast<double>(count));
}

}  // namespace

nn::Normalizer compute_normalizer(const TrainingDatabase& db) {
  if (db.pairs.empty()) throw std::invalid_argument("compute_normalizer: empty database");
  nn::Normalizer nrm;
  scalar_stats(db.pairs, true, nrm.in_mean, nrm.in_std);
  scalar_stats(db.pairs, false, nrm.out_mean, nrm.out_std);
  if (!(nrm.in_std > 0.0))
    throw std::invalid_argument("compute_normalizer: inputs have zero variance");
  if (!(nrm.out_std > 0.0))
    throw std::invalid_argument("compute_normalizer: targets have zero variance");
  return nrm;
}

namespace {

constexpr char kMagic[4] = {'Q', 'G', 'D', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_f64s(std::ostream& os, const std::vector<double>& v) {
  for (double x : v) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, 8);
    put_u64(os, bits);
  }
}

void get_f64s(std::istream& is, std::vector<double>& v) {
  for (double& x : v) {
    const std::uint64_t bits = get_u64(is);
    std::memcpy(&x, &bits, 8);
  }
}

}  // namespace

void save_database(const TrainingDatabase& db, const qg::QgModel& model,
                   const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("save_database: cannot open " + path);
  os.write(kMagic, 4);
  const Field3 empty;
  const Field3& probe = db.pairs.empty() ? empty : db.pairs.front().input;
  put_u64(os, static_cast<std::uint64_t>(db.pairs.size()));
  put_u64(os, static_cast<std::uint64_t>(probe.nl));
  put_u64(os, static_cast<std::uint64_t>(probe.ny));
  put_u64(os, static_cast<std::uint64_t>(probe.nx));
  put_u64(os, static_cast<std::uint64_t>(model.steps_for(db.config.tau)));
  put_u64(os, db.config.source == SourceKind::kAnalysis ? 0 : 1);
  for (const SamplePair& p : db.pairs) {
    put_f64s(os, p.input.data);
    put_f64s(os, p.target.data);
  }
  nlohmann::json j;
  j["tau"] = db.config.tau;
  j["source"] = db.config.source == SourceKind::kAnalysis ? "analysis" : "truth";
  j["trajectory_id"] = db.trajectory_id;
  j["normalizer"] = {{"in_mean", db.normalizer.in_mean},
                     {"in_std", db.normalizer.in_std},
                     {"out_mean", db.normalizer.out_mean},
                     {"out_std", db.normalizer.out_std}};
  os << j.dump();
  if (!os) throw std::runtime_error("save_database: write failed for " + path);
}

TrainingDatabase load_database(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_database: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("load_database: " + path + " is not a QGD1 database");
  const auto n = static_cast<size_t>(get_u64(is));
  const int nl = static_cast<int>(get_u64(is));
  const int ny = static_cast<int>(get_u64(is));
  const int nx = static_cast<int>(get_u64(is));
  get_u64(is);  // tau in step units; the footer carries the exact value
  const std::uint64_t source_flag = get_u64(is);

  TrainingDatabase db;
  db.pairs.resize(n);
  for (SamplePair& p : db.pairs) {
    p.input = Field3(nl, ny, nx);
    p.target = Field3(nl, ny, nx);
    get_f64s(is, p.input.data);
    get_f64s(is, p.target.data);
  }
  if (!is) throw std::runtime_error("load_database: truncated records in " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception&) {
    throw std::runtime_error("load_database: missing or corrupt footer in " + path);
  }
  db.config.tau = j.at("tau").get<double>();
  db.config.n_samples = static_cast<int>(n);
  db.config.source = source_flag == 0 ? SourceKind::kAnalysis : SourceKind::kTruth;
  db.trajectory_id = j.at("trajectory_id").get<std::string>();
  db.normalizer.in_mean = j.at("normalizer").at("in_mean").get<double>();
  db.normalizer.in_std = j.at("normalizer").at("in_std").get<double>();
  db.normalizer.out_mean = j.at("normalizer").at("out_mean").get<double>();
  db.normalizer.out_std = j.at("normalizer").at("out_std").get<double>();
  return db;
}

}  // namespace qgml::data
