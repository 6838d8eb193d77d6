#include "qgml/neural.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>
#include <stdexcept>

namespace qgml::nn {

LayerSpec LayerSpec::dense(int width, Activation act) {
  LayerSpec l;
  l.kind = LayerKind::kDense;
  l.activation = act;
  l.width = width;
  return l;
}

LayerSpec LayerSpec::conv2d(int filters, Activation act, int kh, int kw) {
  LayerSpec l;
  l.kind = LayerKind::kConv2d;
  l.activation = act;
  l.filters = filters;
  l.kh = kh;
  l.kw = kw;
  return l;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec l;
  l.kind = LayerKind::kFlatten;
  return l;
}

LayerSpec LayerSpec::reshape(int c, int ny, int nx) {
  LayerSpec l;
  l.kind = LayerKind::kReshape;
  l.shape_c = c;
  l.shape_ny = ny;
  l.shape_nx = nx;
  return l;
}

namespace {

bool parametric(const LayerSpec& l) {
  return l.kind == LayerKind::kDense || l.kind == LayerKind::kConv2d;
}

struct CompiledLayer {
  LayerSpec spec;
  int in_n = 0, out_n = 0;             // flat buffer sizes
  int in_c = 0, in_ny = 0, in_nx = 0;  // field interpretation (conv layers)
  int p_off = 0, n_weights = 0, n_biases = 0;
};

struct Compiled {
  std::vector<CompiledLayer> layers;
  int n_params = 0;
};

Compiled compile(const NetworkSpec& spec) {
  if (spec.layers.empty()) throw std::invalid_argument("NetworkSpec: no layers");
  if (spec.in_c < 1 || spec.in_ny < 1 || spec.in_nx < 1 || spec.out_c < 1 || spec.out_ny < 1 ||
      spec.out_nx < 1)
    throw std::invalid_argument("NetworkSpec: input/output shapes must be positive");

  Compiled net;
  bool flat = false;
  int c = spec.in_c, ny = spec.in_ny, nx = spec.in_nx, n = spec.input_size();
  int off = 0;
  int last_param = -1, first_dense = -1, last_conv = -1;

  for (size_t li = 0; li < spec.layers.size(); ++li) {
    const LayerSpec& l = spec.layers[li];
    CompiledLayer cl;
    cl.spec = l;
    cl.in_n = n;
    cl.in_c = c;
    cl.in_ny = ny;
    cl.in_nx = nx;
    cl.p_off = off;
    switch (l.kind) {
      case LayerKind::kDense:
        if (!flat)
          throw std::invalid_argument("NetworkSpec: dense layer needs a flattened input");
        if (l.width < 1) throw std::invalid_argument("NetworkSpec: dense width must be >= 1");
        cl.n_weights = n * l.width;
        cl.n_biases = l.width;
        n = l.width;
        if (first_dense < 0) first_dense = static_cast<int>(li);
        break;
      case LayerKind::kConv2d:
        if (flat)
          throw std::invalid_argument(
              "NetworkSpec: convolution needs a (channels, ny, nx) input");
        if (l.filters < 1) throw std::invalid_argument("NetworkSpec: filters must be >= 1");
        if (l.kh < 1 || l.kw < 1 || l.kh % 2 == 0 || l.kw % 2 == 0)
          throw std::invalid_argument("NetworkSpec: kernel sides must be odd and positive");
        cl.n_weights = l.kh * l.kw * c * l.filters;
        cl.n_biases = l.filters;
        c = l.filters;
        n = c * ny * nx;
        last_conv = static_cast<int>(li);
        break;
      case LayerKind::kFlatten:
        if (flat) throw std::invalid_argument("NetworkSpec: flatten of an already flat buffer");
        flat = true;
        break;
      case LayerKind::kReshape:
        if (!flat) throw std::invalid_argument("NetworkSpec: reshape needs a flattened input");
        if (l.shape_c * l.shape_ny * l.shape_nx != n)
          throw std::invalid_argument("NetworkSpec: reshape size does not match the buffer");
        flat = false;
        c = l.shape_c;
        ny = l.shape_ny;
        nx = l.shape_nx;
        break;
    }
    cl.out_n = n;
    off += cl.n_weights + cl.n_biases;
    if (parametric(l)) last_param = static_cast<int>(li);
    net.layers.push_back(cl);
  }
  net.n_params = off;

  if (last_param < 0) throw std::invalid_argument("NetworkSpec: no parametric layers");
  if (spec.layers[static_cast<size_t>(last_param)].activation != Activation::kLinear)
    throw std::invalid_argument("NetworkSpec: the final parametric layer must be linear");
  if (flat || c != spec.out_c || ny != spec.out_ny || nx != spec.out_nx)
    throw std::invalid_argument("NetworkSpec: the chain does not end in the output shape");
  if (spec.family == Family::kD && last_conv >= 0)
    throw std::invalid_argument("NetworkSpec: family D admits no convolutions");
  if (spec.family == Family::kCD) {
    if (last_conv < 0)
      throw std::invalid_argument("NetworkSpec: family CD needs at least one convolution");
    if (first_dense >= 0 && last_conv > first_dense)
      throw std::invalid_argument("NetworkSpec: family CD puts all convolutions before denses");
  }
  return net;
}

inline int wrap_x(int x, int nx) { return x >= nx ? x - nx : (x < 0 ? x + nx : x); }

// out = act(W in + b) / act(K * in + b); buffers are distinct
void layer_forward(const CompiledLayer& cl, const double* p, const double* in, double* out) {
  const LayerSpec& l = cl.spec;
  if (l.kind == LayerKind::kDense) {
    const double* w = p + cl.p_off;
    const double* b = w + cl.n_weights;
    for (int o = 0; o < l.width; ++o) {
      double acc = b[o];
      const double* row = w + static_cast<size_t>(o) * cl.in_n;
      for (int i = 0; i < cl.in_n; ++i) acc += row[i] * in[i];
      out[o] = acc;
    }
  } else if (l.kind == LayerKind::kConv2d) {
    const double* k = p + cl.p_off;
    const double* b = k + cl.n_weights;
    const int ch = l.kh / 2, cw = l.kw / 2;
    const int plane = cl.in_ny * cl.in_nx;
    for (int f = 0; f < l.filters; ++f)
      for (int y = 0; y < cl.in_ny; ++y)
        for (int x = 0; x < cl.in_nx; ++x) {
          double acc = b[f];
          for (int c = 0; c < cl.in_c; ++c)
            for (int dy = 0; dy < l.kh; ++dy) {
              const int yy = y + dy - ch;
              if (yy < 0 || yy >= cl.in_ny) continue;  // zero padding across the walls
              const double* krow = k + ((static_cast<size_t>(f) * cl.in_c + c) * l.kh + dy) * l.kw;
              const double* irow = in + static_cast<size_t>(c) * plane + static_cast<size_t>(yy) * cl.in_nx;
              for (int dx = 0; dx < l.kw; ++dx)
                acc += krow[dx] * irow[wrap_x(x + dx - cw, cl.in_nx)];
            }
          out[(static_cast<size_t>(f) * cl.in_ny + y) * cl.in_nx + x] = acc;
        }
  } else {  // flatten / reshape: pure reinterpretation
    std::copy(in, in + cl.in_n, out);
  }
  if (l.activation == Activation::kRelu && parametric(l))
    for (int i = 0; i < cl.out_n; ++i)
      if (out[i] < 0.0) out[i] = 0.0;
}

// dL/d(post-activation out) -> accumulate parameter grads, emit dL/d(in).
// `out` holds the post-activation values (enough to undo relu's mask).
void layer_backward(const CompiledLayer& cl, const double* p, const double* in, const double* out,
                    std::vector<double>& dout, double* grad, double* din) {
  const LayerSpec& l = cl.spec;
  if (l.activation == Activation::kRelu && parametric(l))
    for (int i = 0; i < cl.out_n; ++i)
      if (out[i] <= 0.0) dout[static_cast<size_t>(i)] = 0.0;

  if (l.kind == LayerKind::kDense) {
    const double* w = p + cl.p_off;
    double* gw = grad + cl.p_off;
    double* gb = gw + cl.n_weights;
    std::fill(din, din + cl.in_n, 0.0);
    for (int o = 0; o < l.width; ++o) {
      const double g = dout[static_cast<size_t>(o)];
      if (g == 0.0) continue;
      const double* row = w + static_cast<size_t>(o) * cl.in_n;
      double* grow = gw + static_cast<size_t>(o) * cl.in_n;
      for (int i = 0; i < cl.in_n; ++i) {
        grow[i] += g * in[i];
        din[i] += g * row[i];
      }
      gb[o] += g;
    }
  } else if (l.kind == LayerKind::kConv2d) {
    const double* k = p + cl.p_off;
    double* gk = grad + cl.p_off;
    double* gb = gk + cl.n_weights;
    const int ch = l.kh / 2, cw = l.kw / 2;
    const int plane = cl.in_ny * cl.in_nx;
    std::fill(din, din + cl.in_n, 0.0);
    for (int f = 0; f < l.filters; ++f)
      for (int y = 0; y < cl.in_ny; ++y)
        for (int x = 0; x < cl.in_nx; ++x) {
          const double g = dout[(static_cast<size_t>(f) * cl.in_ny + y) * cl.in_nx + x];
          if (g == 0.0) continue;
          gb[f] += g;
          for (int c = 0; c < cl.in_c; ++c)
            for (int dy = 0; dy < l.kh; ++dy) {
              const int yy = y + dy - ch;
              if (yy < 0 || yy >= cl.in_ny) continue;
              const size_t koff = ((static_cast<size_t>(f) * cl.in_c + c) * l.kh + dy) * l.kw;
              const size_t ioff = static_cast<size_t>(c) * plane + static_cast<size_t>(yy) * cl.in_nx;
              for (int dx = 0; dx < l.kw; ++dx) {
                const int xx = wrap_x(x + dx - cw, cl.in_nx);
                gk[koff + dx] += g * in[ioff + xx];
                din[ioff + xx] += g * k[koff + dx];
              }
            }
        }
  } else {
    std::copy(dout.begin(), dout.begin() + cl.in_n, din);
  }
}

/// Forward/backward over a batch given by indices; returns the MSE and, when
/// grad is non-null, accumulates the exact parameter gradient into it.
double batch_pass(const Compiled& net, const std::vector<double>& params,
                  const std::vector<std::vector<double>>& inputs,
                  const std::vector<std::vector<double>>& targets, const int* idx, int n_idx,
                  std::vector<double>* grad) {
  const size_t n_layers = net.layers.size();
  std::vector<std::vector<double>> acts(n_layers + 1);
  acts[0].resize(static_cast<size_t>(net.layers[0].in_n));
  for (size_t li = 0; li < n_layers; ++li)
    acts[li + 1].resize(static_cast<size_t>(net.layers[li].out_n));
  std::vector<double> dout, din;

  if (grad) std::fill(grad->begin(), grad->end(), 0.0);
  const int out_n = net.layers.back().out_n;
  const double denom = static_cast<double>(n_idx) * out_n;
  double se = 0.0;

  for (int s = 0; s < n_idx; ++s) {
    const std::vector<double>& x = inputs[static_cast<size_t>(idx[s])];
    const std::vector<double>& y = targets[static_cast<size_t>(idx[s])];
    std::copy(x.begin(), x.end(), acts[0].begin());
    for (size_t li = 0; li < n_layers; ++li)
      layer_forward(net.layers[li], params.data(), acts[li].data(), acts[li + 1].data());
    const std::vector<double>& pred = acts[n_layers];
    for (int i = 0; i < out_n; ++i) {
      const double r = pred[static_cast<size_t>(i)] - y[static_cast<size_t>(i)];
      se += r * r;
    }
    if (!grad) continue;
    dout.assign(pred.begin(), pred.end());
    for (int i = 0; i < out_n; ++i)
      dout[static_cast<size_t>(i)] = 2.0 * (pred[static_cast<size_t>(i)] - y[static_cast<size_t>(i)]) / denom;
    for (size_t li = n_layers; li-- > 0;) {
      din.resize(static_cast<size_t>(net.layers[li].in_n));
      layer_backward(net.layers[li], params.data(), acts[li].data(), acts[li + 1].data(), dout,
                     grad->data(), din.data());
      dout.swap(din);
    }
  }
  return se / denom;
}

void check_batch(const Compiled& net, const std::vector<double>& params,
                 const std::vector<std::vector<double>>& inputs,
                 const std::vector<std::vector<double>>& targets) {
  if (inputs.empty() || inputs.size() != targets.size())
    throw std::invalid_argument("neural: batch must be nonempty with matching inputs/targets");
  if (static_cast<int>(params.size()) != net.n_params)
    throw std::invalid_argument("neural: parameter vector length mismatch");
  const size_t in_n = static_cast<size_t>(net.layers.front().in_n);
  const size_t out_n = static_cast<size_t>(net.layers.back().out_n);
  for (size_t s = 0; s < inputs.size(); ++s)
    if (inputs[s].size() != in_n || targets[s].size() != out_n)
      throw std::invalid_argument("neural: sample shape mismatch");
}

std::vector<int> all_indices(size_t n) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

}  // namespace

void NetworkSpec::validate() const { compile(*this); }

NetworkSpec make_d_spec(int n_layers, int width, Activation act) {
  if (n_layers < 1 || width < 1)
    throw std::invalid_argument("make_d_spec: layers and width must be >= 1");
  NetworkSpec spec;
  spec.family = Family::kD;
  spec.layers.push_back(LayerSpec::flatten());
  for (int i = 0; i < n_layers; ++i) spec.layers.push_back(LayerSpec::dense(width, act));
  spec.layers.push_back(LayerSpec::dense(spec.output_size(), Activation::kLinear));
  spec.layers.push_back(LayerSpec::reshape(spec.out_c, spec.out_ny, spec.out_nx));
  spec.validate();
  return spec;
}

NetworkSpec make_cd_spec(int n_layers, int width, Activation act) {
  if (n_layers < 1 || width < 1)
    throw std::invalid_argument("make_cd_spec: layers and width must be >= 1");
  NetworkSpec spec;
  spec.family = Family::kCD;
  for (int i = 0; i < n_layers; ++i) spec.layers.push_back(LayerSpec::conv2d(width, act));
  spec.layers.push_back(LayerSpec::flatten());
  for (int i = 0; i < n_layers; ++i) spec.layers.push_back(LayerSpec::dense(width, act));
  spec.layers.push_back(LayerSpec::dense(spec.output_size(), Activation::kLinear));
  spec.layers.push_back(LayerSpec::reshape(spec.out_c, spec.out_ny, spec.out_nx));
  spec.validate();
  return spec;
}

int param_count(const NetworkSpec& spec) { return compile(spec).n_params; }

std::vector<double> init_params(const NetworkSpec& spec, std::uint64_t seed) {
  const Compiled net = compile(spec);
  std::vector<double> p(static_cast<size_t>(net.n_params), 0.0);
  std::mt19937_64 gen(seed);
  for (const CompiledLayer& cl : net.layers) {
    if (!parametric(cl.spec)) continue;
    double fan_in, fan_out;
    if (cl.spec.kind == LayerKind::kDense) {
      fan_in = cl.in_n;
      fan_out = cl.spec.width;
    } else {
      fan_in = static_cast<double>(cl.spec.kh) * cl.spec.kw * cl.in_c;
      fan_out = static_cast<double>(cl.spec.kh) * cl.spec.kw * cl.spec.filters;
    }
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (int i = 0; i < cl.n_weights; ++i) p[static_cast<size_t>(cl.p_off + i)] = u(gen);
    // biases stay zero
  }
  return p;
}

std::vector<double> forward(const NetworkSpec& spec, const std::vector<double>& params,
                            const std::vector<double>& input) {
  const Compiled net = compile(spec);
  if (static_cast<int>(params.size()) != net.n_params)
    throw std::invalid_argument("forward: parameter vector length mismatch");
  if (static_cast<int>(input.size()) != net.layers.front().in_n)
    throw std::invalid_argument("forward: input size mismatch");
  std::vector<double> cur = input, next;
  for (const CompiledLayer& cl : net.layers) {
    next.resize(static_cast<size_t>(cl.out_n));
    layer_forward(cl, params.data(), cur.data(), next.data());
    cur.swap(next);
  }
  return cur;
}

double loss_and_grads(const NetworkSpec& spec, const std::vector<double>& params,
                      const std::vector<std::vector<double>>& inputs,
                      const std::vector<std::vector<double>>& targets, std::vector<double>& grad) {
  const Compiled net = compile(spec);
  check_batch(net, params, inputs, targets);
  grad.assign(static_cast<size_t>(net.n_params), 0.0);
  const std::vector<int> idx = all_indices(inputs.size());
  return batch_pass(net, params, inputs, targets, idx.data(), static_cast<int>(idx.size()), &grad);
}

double loss(const NetworkSpec& spec, const std::vector<double>& params,
            const std::vector<std::vector<double>>& inputs,
            const std::vector<std::vector<double>>& targets) {
  const Compiled net = compile(spec);
  check_batch(net, params, inputs, targets);
  const std::vector<int> idx = all_indices(inputs.size());
  return batch_pass(net, params, inputs, targets, idx.data(), static_cast<int>(idx.size()),
                    nullptr);
}

void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& state,
               double lr, const AdamConfig& config) {
  if (params.size() != grads.size() || params.size() != state.m.size() ||
      params.size() != state.v.size())
    throw std::invalid_argument("adam_step: size mismatch");
  ++state.t;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < params.size(); ++i) {
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grads[i];
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * grads[i] * grads[i];
    params[i] -= lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + config.eps);
  }
}

void TrainConfig::validate() const {
  if (epochs_phase1 < 1 || epochs_phase2 < 0)
    throw std::invalid_argument("TrainConfig: epochs_phase1 must be >= 1 and epochs_phase2 >= 0");
  if (!(lr_phase1 > 0.0) || !(lr_phase2 > 0.0))
    throw std::invalid_argument("TrainConfig: learning rates must be positive");
  if (batch_size < 0) throw std::invalid_argument("TrainConfig: batch_size must be nonnegative");
}

namespace {

// normalized flat copies of a database's inputs or targets
std::vector<std::vector<double>> encode_side(const std::vector<data::SamplePair>& pairs,
                                             const Normalizer& nrm, bool inputs) {
  std::vector<std::vector<double>> out;
  out.reserve(pairs.size());
  for (const data::SamplePair& p : pairs) {
    const Field3& f = inputs ? p.input : p.target;
    std::vector<double> v(f.data.size());
    for (size_t i = 0; i < v.size(); ++i)
      v[i] = inputs ? nrm.encode_in(f.data[i]) : nrm.encode_out(f.data[i]);
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace

TrainResult train(const NetworkSpec& spec, const data::TrainingDatabase& db_train,
                  const data::TrainingDatabase& db_valid, const TrainConfig& config) {
  const Compiled net = compile(spec);
  config.validate();
  if (db_train.pairs.empty() || db_valid.pairs.empty())
    throw std::invalid_argument("train: empty database");
  for (const data::TrainingDatabase* db : {&db_train, &db_valid})
    for (const data::SamplePair& p : db->pairs)
      if (static_cast<int>(p.input.data.size()) != net.layers.front().in_n ||
          static_cast<int>(p.target.data.size()) != net.layers.back().out_n)
        throw std::invalid_argument("train: database shapes do not match the network");

  TrainResult res;
  res.seed = config.seed;
  res.normalizer = data::compute_normalizer(db_train);
  const std::vector<std::vector<double>> tin = encode_side(db_train.pairs, res.normalizer, true);
  const std::vector<std::vector<double>> ttg = encode_side(db_train.pairs, res.normalizer, false);
  const std::vector<std::vector<double>> vin = encode_side(db_valid.pairs, res.normalizer, true);
  const std::vector<std::vector<double>> vtg = encode_side(db_valid.pairs, res.normalizer, false);

  const int n_train = static_cast<int>(tin.size());
  const int bs = config.batch_size > 0 ? std::min(config.batch_size, n_train)
                                       : (n_train <= 128 ? n_train : 32);

  std::vector<double> params = init_params(spec, config.seed);
  std::vector<double> grad(params.size());
  std::mt19937_64 shuffle_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  const std::vector<int> vidx = all_indices(vin.size());
  std::vector<int> order = all_indices(tin.size());

  int epoch = 0;
  const auto run_phase = [&](int n_epochs, double lr) {
    AdamState adam(params.size());  // fresh moments per phase
    for (int e = 0; e < n_epochs; ++e) {
      ++epoch;
      if (bs < n_train) std::shuffle(order.begin(), order.end(), shuffle_rng);
      double se_sum = 0.0;
      for (int s = 0; s < n_train; s += bs) {
        const int nb = std::min(bs, n_train - s);
        const double mse = batch_pass(net, params, tin, ttg, order.data() + s, nb, &grad);
        se_sum += mse * nb;
        adam_step(params, grad, adam, lr, config.adam);
      }
      EpochRecord rec;
      rec.epoch = epoch;
      rec.lr = lr;
      rec.train_mse = se_sum / n_train;
      rec.valid_mse = batch_pass(net, params, vin, vtg, vidx.data(),
                                 static_cast<int>(vidx.size()), nullptr);
      if (!std::isfinite(rec.train_mse) || !std::isfinite(rec.valid_mse))
        throw std::runtime_error("train: diverged (non-finite loss) at epoch " +
                                 std::to_string(epoch));
      res.history.push_back(rec);
      if (rec.valid_mse < res.best_valid_mse) {
        res.best_valid_mse = rec.valid_mse;
        res.best_epoch = epoch;
        res.params = params;
      }
    }
  };
  run_phase(config.epochs_phase1, config.lr_phase1);
  run_phase(config.epochs_phase2, config.lr_phase2);
  return res;
}

Field3 predict_correction(const NetworkSpec& spec, const std::vector<double>& params,
                          const Normalizer& normalizer, const qg::ModelState& state) {
  normalizer.validate();
  if (state.psi.nl != spec.in_c || state.psi.ny != spec.in_ny || state.psi.nx != spec.in_nx)
    throw std::invalid_argument("predict_correction: state shape mismatch");
  std::vector<double> x(state.psi.data.size());
  for (size_t i = 0; i < x.size(); ++i) x[i] = normalizer.encode_in(state.psi.data[i]);
  const std::vector<double> y = forward(spec, params, x);
  Field3 out(spec.out_c, spec.out_ny, spec.out_nx);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = normalizer.decode_out(y[i]);
  return out;
}

namespace {

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::kDense: return "dense";
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kFlatten: return "flatten";
    case LayerKind::kReshape: return "reshape";
  }
  return "?";
}

const char* act_name(Activation a) { return a == Activation::kRelu ? "relu" : "linear"; }

LayerKind kind_from(const std::string& s) {
  if (s == "dense") return LayerKind::kDense;
  if (s == "conv2d") return LayerKind::kConv2d;
  if (s == "flatten") return LayerKind::kFlatten;
  if (s == "reshape") return LayerKind::kReshape;
  throw std::runtime_error("load_network: unknown layer kind " + s);
}

Activation act_from(const std::string& s) {
  if (s == "linear") return Activation::kLinear;
  if (s == "relu") return Activation::kRelu;
  throw std::runtime_error("load_network: unknown activation " + s);
}

}  // namespace

void save_network(const NetworkSpec& spec, const TrainResult& result, const std::string& path) {
  const Compiled net = compile(spec);
  if (static_cast<int>(result.params.size()) != net.n_params)
    throw std::invalid_argument("save_network: parameter vector length mismatch");
  nlohmann::json j;
  j["family"] = spec.family == Family::kD ? "D" : "CD";
  j["input"] = {spec.in_c, spec.in_ny, spec.in_nx};
  j["output"] = {spec.out_c, spec.out_ny, spec.out_nx};
  nlohmann::json layers = nlohmann::json::array();
  nlohmann::json params = nlohmann::json::array();
  for (const CompiledLayer& cl : net.layers) {
    nlohmann::json lj;
    lj["kind"] = kind_name(cl.spec.kind);
    if (parametric(cl.spec)) lj["activation"] = act_name(cl.spec.activation);
    if (cl.spec.kind == LayerKind::kDense) lj["width"] = cl.spec.width;
    if (cl.spec.kind == LayerKind::kConv2d) {
      lj["filters"] = cl.spec.filters;
      lj["kernel"] = {cl.spec.kh, cl.spec.kw};
    }
    if (cl.spec.kind == LayerKind::kReshape)
      lj["shape"] = {cl.spec.shape_c, cl.spec.shape_ny, cl.spec.shape_nx};
    layers.push_back(lj);
    params.push_back(std::vector<double>(result.params.begin() + cl.p_off,
                                         result.params.begin() + cl.p_off + cl.n_weights +
                                             cl.n_biases));
  }
  j["layers"] = layers;
  j["params"] = params;
  j["normalizer"] = {{"in_mean", result.normalizer.in_mean},
                     {"in_std", result.normalizer.in_std},
                     {"out_mean", result.normalizer.out_mean},
                     {"out_std", result.normalizer.out_std}};
  j["seed"] = result.seed;
  j["history"] = {{"epochs", result.history.size()},
                  {"best_epoch", result.best_epoch},
                  {"best_valid_mse", result.best_valid_mse},
                  {"final_train_mse", result.history.empty() ? 0.0 : result.history.back().train_mse}};
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("save_network: cannot open " + path);
  os << j.dump(2) << "\n";
  if (!os) throw std::runtime_error("save_network: write failed for " + path);
}

LoadedNetwork load_network(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_network: cannot open " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_network: " + path + " is not a weight file: " + e.what());
  }
  LoadedNetwork out;
  out.spec.family = j.at("family").get<std::string>() == "CD" ? Family::kCD : Family::kD;
  out.spec.in_c = j.at("input").at(0).get<int>();
  out.spec.in_ny = j.at("input").at(1).get<int>();
  out.spec.in_nx = j.at("input").at(2).get<int>();
  out.spec.out_c = j.at("output").at(0).get<int>();
  out.spec.out_ny = j.at("output").at(1).get<int>();
  out.spec.out_nx = j.at("output").at(2).get<int>();
  for (const nlohmann::json& lj : j.at("layers")) {
    LayerSpec l;
    l.kind = kind_from(lj.at("kind").get<std::string>());
    if (lj.contains("activation")) l.activation = act_from(lj.at("activation").get<std::string>());
    if (l.kind == LayerKind::kDense) l.width = lj.at("width").get<int>();
    if (l.kind == LayerKind::kConv2d) {
      l.filters = lj.at("filters").get<int>();
      l.kh = lj.at("kernel").at(0).get<int>();
      l.kw = lj.at("kernel").at(1).get<int>();
    }
    if (l.kind == LayerKind::kReshape) {
      l.shape_c = lj.at("shape").at(0).get<int>();
      l.shape_ny = lj.at("shape").at(1).get<int>();
      l.shape_nx = lj.at("shape").at(2).get<int>();
    }
    out.spec.layers.push_back(l);
  }
  const Compiled net = compile(out.spec);
  out.params.assign(static_cast<size_t>(net.n_params), 0.0);
  const nlohmann::json& params = j.at("params");
  if (params.size() != net.layers.size())
    throw std::runtime_error("load_network: per-layer parameter count mismatch in " + path);
  for (size_t li = 0; li < net.layers.size(); ++li) {
    const CompiledLayer& cl = net.layers[li];
    const auto slice = params.at(li).get<std::vector<double>>();
    if (static_cast<int>(slice.size()) != cl.n_weights + cl.n_biases)
      throw std::runtime_error("load_network: layer parameter slice size mismatch in " + path);
    std::copy(slice.begin(), slice.end(), out.params.begin() + cl.p_off);
  }
  out.normalizer.in_mean = j.at("normalizer").at("in_mean").get<double>();
  out.normalizer.in_std = j.at("normalizer").at("in_std").get<double>();
  out.normalizer.out_mean = j.at("normalizer").at("out_mean").get<double>();
  out.normalizer.out_std = j.at("normalizer").at("out_std").get<double>();
  out.seed = j.at("seed").get<std::uint64_t>();
  return out;
}

}  // namespace qgml::nn
