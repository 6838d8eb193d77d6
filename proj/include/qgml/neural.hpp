#ifndef QGML_NEURAL_HPP
#define QGML_NEURAL_HPP

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "qgml/dataset.hpp"
#include "qgml/normalizer.hpp"
#include "qgml/qg_model.hpp"

namespace qgml::nn {

enum class Activation { kLinear, kRelu };
enum class LayerKind { kDense, kConv2d, kFlatten, kReshape };

struct LayerSpec {
  LayerKind kind = LayerKind::kDense;
  Activation activation = Activation::kLinear;
  int width = 0;    // dense: output size
  int filters = 0;  // conv2d: output channels
  int kh = 3, kw = 3;
  int shape_c = 0, shape_ny = 0, shape_nx = 0;  // reshape target

  static LayerSpec dense(int width, Activation act = Activation::kLinear);
  static LayerSpec conv2d(int filters, Activation act = Activation::kLinear, int kh = 3,
                          int kw = 3);
  static LayerSpec flatten();
  static LayerSpec reshape(int c, int ny, int nx);
};

enum class Family { kD, kCD };

/// A sequential field-to-field network. Dense layers act on flattened
/// buffers, convolutions on (channels, ny, nx) fields with periodic padding
/// in x and zero padding in y; flatten/reshape only re-interpret the buffer.
struct NetworkSpec {
  std::vector<LayerSpec> layers;
  int in_c = 2, in_ny = 20, in_nx = 40;
  int out_c = 2, out_ny = 20, out_nx = 40;
  Family family = Family::kD;

  int input_size() const { return in_c * in_ny * in_nx; }
  int output_size() const { return out_c * out_ny * out_nx; }

  /// Shape chain consistency, family template (D: dense-only; CD: all convs
  /// strictly before all denses), and a linear final parametric layer.
  void validate() const;
};

/// n hidden dense layers of the given width, then a linear projection back
/// to the output field.
NetworkSpec make_d_spec(int n_layers, int width, Activation act);
/// n convolution layers of `width` filters, then n hidden dense layers of
/// the same width, then the linear output projection.
NetworkSpec make_cd_spec(int n_layers, int width, Activation act);

/// Dense layers hold in*out weights + out biases; convolutions
/// (kh*kw*c_in + 1)*filters; flatten/reshape nothing.
int param_count(const NetworkSpec& spec);

/// Fan-scaled uniform weights (+-sqrt(6/(fan_in+fan_out))) and zero biases,
/// drawn layer by layer; deterministic per seed.
std::vector<double> init_params(const NetworkSpec& spec, std::uint64_t seed);

/// Forward pass in normalized space.
std::vector<double> forward(const NetworkSpec& spec, const std::vector<double>& params,
                            const std::vector<double>& input);

/// Mean squared error over every output component and sample, with the exact
/// reverse-mode parameter gradient.
double loss_and_grads(const NetworkSpec& spec, const std::vector<double>& params,
                      const std::vector<std::vector<double>>& inputs,
                      const std::vector<std::vector<double>>& targets, std::vector<double>& grad);
/// Same loss without the gradient work.
double loss(const NetworkSpec& spec, const std::vector<double>& params,
            const std::vector<std::vector<double>>& inputs,
            const std::vector<std::vector<double>>& targets);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-7;
};

struct AdamState {
  std::vector<double> m, v;
  long t = 0;
  explicit AdamState(size_t n) : m(n, 0.0), v(n, 0.0) {}
};

/// Standard bias-corrected Adam update; advances state.t.
void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& state,
               double lr, const AdamConfig& config = {});

struct TrainConfig {
  int epochs_phase1 = 1000;
  double lr_phase1 = 1e-3;
  int epochs_phase2 = 1000;
  double lr_phase2 = 1e-4;
  AdamConfig adam;
  int batch_size = 0;  // 0: full batch for up to 128 samples, else 32
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;  // 1-based across both phases
  double lr = 0.0;
  double train_mse = 0.0;
  double valid_mse = 0.0;
};

struct TrainResult {
  std::vector<double> params;  // parameters with the lowest validation MSE
  Normalizer normalizer;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_valid_mse = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;
};

/// Two-phase Adam training (fresh moments at the second learning rate) in the
/// training database's normalized space, keeping the parameters with the
/// lowest validation MSE. Throws on a non-finite loss, naming the epoch.
TrainResult train(const NetworkSpec& spec, const data::TrainingDatabase& db_train,
                  const data::TrainingDatabase& db_valid, const TrainConfig& config);

/// Normalize the state, run the network, denormalize: a state-space increment.
Field3 predict_correction(const NetworkSpec& spec, const std::vector<double>& params,
                          const Normalizer& normalizer, const qg::ModelState& state);

/// JSON weight file: spec, normalizer, per-layer parameter slices, seed, and
/// a training-history summary.
void save_network(const NetworkSpec& spec, const TrainResult& result, const std::string& path);

struct LoadedNetwork {
  NetworkSpec spec;
  std::vector<double> params;
  Normalizer normalizer;
  std::uint64_t seed = 0;
};
LoadedNetwork load_network(const std::string& path);

}  // namespace qgml::nn

#endif
