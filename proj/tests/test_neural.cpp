#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "qgml/dataset.hpp"
#include "qgml/field.hpp"
#include "qgml/neural.hpp"
#include "qgml/qg_model.hpp"

namespace nn = qgml::nn;
namespace data = qgml::data;
using nn::Activation;
using nn::Family;
using nn::LayerSpec;
using nn::NetworkSpec;
using qgml::Field3;

namespace {

std::vector<double> random_vec(size_t n, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

NetworkSpec tiny_spec(std::vector<LayerSpec> layers, int ic, int iny, int inx, int oc, int ony,
                      int onx, Family fam) {
  NetworkSpec s;
  s.layers = std::move(layers);
  s.in_c = ic;
  s.in_ny = iny;
  s.in_nx = inx;
  s.out_c = oc;
  s.out_ny = ony;
  s.out_nx = onx;
  s.family = fam;
  return s;
}

/// flatten -> dense(hidden, act) -> dense(out, linear) -> reshape on a (1,2,3) box
NetworkSpec toy_d_spec(int hidden, Activation act) {
  return tiny_spec({LayerSpec::flatten(), LayerSpec::dense(hidden, act), LayerSpec::dense(6),
                    LayerSpec::reshape(1, 2, 3)},
                   1, 2, 3, 1, 2, 3, Family::kD);
}

/// Random samples with distinct input/target statistics so the scalar
/// normalizer is well defined on both sides.
data::TrainingDatabase toy_db(int n, int ic, int iny, int inx, int oc, int ony, int onx,
                              std::uint64_t seed) {
  data::TrainingDatabase db;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gi(0.1, 0.8);
  std::normal_distribution<double> gt(-0.05, 0.3);
  for (int s = 0; s < n; ++s) {
    data::SamplePair p;
    p.input = Field3(ic, iny, inx);
    p.target = Field3(oc, ony, onx);
    for (double& v : p.input.data) v = gi(rng);
    for (double& v : p.target.data) v = gt(rng);
    db.pairs.push_back(std::move(p));
  }
  db.trajectory_id = "toy-" + std::to_string(seed);
  return db;
}

std::vector<std::vector<double>> encode(const std::vector<data::SamplePair>& pairs,
                                        const qgml::nn::Normalizer& nrm, bool inputs) {
  std::vector<std::vector<double>> out;
  for (const data::SamplePair& p : pairs) {
    const Field3& f = inputs ? p.input : p.target;
    std::vector<double> v(f.data.size());
    for (size_t i = 0; i < v.size(); ++i)
      v[i] = inputs ? nrm.encode_in(f.data[i]) : nrm.encode_out(f.data[i]);
    out.push_back(std::move(v));
  }
  return out;
}

std::string temp_path(const std::string& name) { return "/tmp/qgml_nn_test_" + name; }

}  // namespace

TEST_CASE("parameter counts follow the layer arithmetic") {
  // flatten -> dense(w) -> dense(1600) -> reshape on the 2x20x40 state
  CHECK(nn::param_count(nn::make_d_spec(1, 4, Activation::kLinear)) == 14404);
  CHECK(nn::param_count(nn::make_d_spec(1, 4, Activation::kRelu)) == 14404);
  CHECK(nn::param_count(nn::make_d_spec(1, 8, Activation::kLinear)) == 1600 * 8 + 8 + 8 * 1600 + 1600);
  CHECK(nn::param_count(nn::make_d_spec(4, 4, Activation::kRelu)) ==
        6404 + 3 * (4 * 4 + 4) + 8000);

  // one conv block in front: (3*3*2+1)*4 kernel params, then denses over 4*800
  CHECK(nn::param_count(nn::make_cd_spec(1, 4, Activation::kLinear)) == 76 + 12804 + 8000);

  // a lone convolution: (kh*kw*c_in + 1) * filters
  const NetworkSpec conv_only =
      tiny_spec({LayerSpec::conv2d(4)}, 2, 4, 6, 4, 4, 6, Family::kCD);
  CHECK(nn::param_count(conv_only) == (3 * 3 * 2 + 1) * 4);
}

TEST_CASE("every architecture in the sweep grid validates and initializes consistently") {
  int n_specs = 0;
  for (const Family fam : {Family::kD, Family::kCD})
    for (const int n_layers : {1, 4})
      for (const int width : {4, 8, 16})
        for (const Activation act : {Activation::kLinear, Activation::kRelu}) {
          const NetworkSpec spec = fam == Family::kD ? nn::make_d_spec(n_layers, width, act)
                                                     : nn::make_cd_spec(n_layers, width, act);
          CHECK_NOTHROW(spec.validate());
          CHECK(spec.in_c == 2);
          CHECK(spec.in_ny == 20);
          CHECK(spec.in_nx == 40);
          const std::vector<double> p = nn::init_params(spec, 7);
          CHECK(static_cast<int>(p.size()) == nn::param_count(spec));
          ++n_specs;
        }
  CHECK(n_specs == 24);
}

TEST_CASE("malformed layer chains are rejected") {
  using doctest::Contains;
  // dense on an unflattened tensor
  CHECK_THROWS_WITH_AS(tiny_spec({LayerSpec::dense(4)}, 1, 2, 3, 1, 2, 3, Family::kD).validate(),
                       Contains("flattened"), std::invalid_argument);
  // convolution after flatten
  CHECK_THROWS_WITH_AS(tiny_spec({LayerSpec::flatten(), LayerSpec::conv2d(2)}, 1, 2, 3, 2, 2, 3,
                                 Family::kCD)
                           .validate(),
                       Contains("convolution"), std::invalid_argument);
  // reshape size mismatch
  CHECK_THROWS_WITH_AS(tiny_spec({LayerSpec::flatten(), LayerSpec::dense(5),
                                  LayerSpec::reshape(1, 2, 3)},
                                 1, 2, 3, 1, 2, 3, Family::kD)
                           .validate(),
                       Contains("reshape"), std::invalid_argument);
  // relu is not allowed on the final parametric layer
  CHECK_THROWS_WITH_AS(tiny_spec({LayerSpec::flatten(),
                                  LayerSpec::dense(6, Activation::kRelu),
                                  LayerSpec::reshape(1, 2, 3)},
                                 1, 2, 3, 1, 2, 3, Family::kD)
                           .validate(),
                       Contains("linear"), std::invalid_argument);
  // chain must end in the declared output shape
  CHECK_THROWS_WITH_AS(tiny_spec({LayerSpec::flatten(), LayerSpec::dense(6),
                                  LayerSpec::reshape(1, 2, 3)},
                                 1, 2, 3, 2, 2, 3, Family::kD)
                           .validate(),
                       Contains("output shape"), std::invalid_argument);
  // family D admits no convolutions
  CHECK_THROWS_WITH_AS(tiny_spec({LayerSpec::conv2d(1)}, 1, 2, 3, 1, 2, 3, Family::kD).validate(),
                       Contains("family D"), std::invalid_argument);
  // family CD needs at least one convolution
  CHECK_THROWS_WITH_AS(tiny_spec({LayerSpec::flatten(), LayerSpec::dense(6),
                                  LayerSpec::reshape(1, 2, 3)},
                                 1, 2, 3, 1, 2, 3, Family::kCD)
                           .validate(),
                       Contains("family CD"), std::invalid_argument);
  // family CD keeps convolutions strictly before denses
  CHECK_THROWS_WITH_AS(tiny_spec({LayerSpec::flatten(), LayerSpec::dense(6),
                                  LayerSpec::reshape(1, 2, 3), LayerSpec::conv2d(1, Activation::kLinear, 1, 1)},
                                 1, 2, 3, 1, 2, 3, Family::kCD)
                           .validate(),
                       Contains("before denses"), std::invalid_argument);
  // kernels must have odd sides
  CHECK_THROWS_WITH_AS(tiny_spec({LayerSpec::conv2d(1, Activation::kLinear, 2, 3)}, 1, 2, 3, 1, 2,
                                 3, Family::kCD)
                           .validate(),
                       Contains("odd"), std::invalid_argument);
  // no parametric layers at all
  CHECK_THROWS_WITH_AS(tiny_spec({LayerSpec::flatten(), LayerSpec::reshape(1, 2, 3)}, 1, 2, 3, 1,
                                 2, 3, Family::kD)
                           .validate(),
                       Contains("parametric"), std::invalid_argument);
}

TEST_CASE("dense forward matches a hand-built matrix evaluation") {
  const NetworkSpec spec = tiny_spec({LayerSpec::flatten(), LayerSpec::dense(4, Activation::kRelu),
                                      LayerSpec::dense(6), LayerSpec::reshape(1, 2, 3)},
                                     1, 2, 3, 1, 2, 3, Family::kD);

  SUBCASE("zero parameters give zero output") {
    const std::vector<double> p(static_cast<size_t>(nn::param_count(spec)), 0.0);
    const std::vector<double> y = nn::forward(spec, p, random_vec(6, 11));
    for (const double v : y) CHECK(v == 0.0);
  }

  SUBCASE("biases live after the weight block of each layer") {
    std::vector<double> p(static_cast<size_t>(nn::param_count(spec)), 0.0);
    // layer 2 (second dense): offset = (6*4 + 4) weights+biases of the first
    const int off2 = 6 * 4 + 4 + 4 * 6;
    for (int i = 0; i < 6; ++i) p[static_cast<size_t>(off2 + i)] = 1.0 + i;
    const std::vector<double> y = nn::forward(spec, p, random_vec(6, 12));
    for (int i = 0; i < 6; ++i) CHECK(y[static_cast<size_t>(i)] == 1.0 + i);
  }

  SUBCASE("random parameters match Eigen") {
    std::vector<double> p = nn::init_params(spec, 42);
    const std::vector<double> bias_noise = random_vec(p.size(), 43, 0.3);
    for (size_t i = 0; i < p.size(); ++i)
      if (p[i] == 0.0) p[i] = bias_noise[i];
    const std::vector<double> xin = random_vec(6, 44);

    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const RowMat> W1(p.data(), 4, 6);
    Eigen::Map<const Eigen::VectorXd> b1(p.data() + 24, 4);
    Eigen::Map<const RowMat> W2(p.data() + 28, 6, 4);
    Eigen::Map<const Eigen::VectorXd> b2(p.data() + 28 + 24, 6);
    Eigen::Map<const Eigen::VectorXd> x(xin.data(), 6);

    const Eigen::VectorXd h = (W1 * x + b1).cwiseMax(0.0);
    const Eigen::VectorXd yref = W2 * h + b2;

    const std::vector<double> y = nn::forward(spec, p, xin);
    REQUIRE(y.size() == 6);
    for (int i = 0; i < 6; ++i)
      CHECK(y[static_cast<size_t>(i)] == doctest::Approx(yref[i]).epsilon(1e-13));
  }

  SUBCASE("identity weights expose the relu elementwise") {
    const NetworkSpec id_spec =
        tiny_spec({LayerSpec::flatten(), LayerSpec::dense(6, Activation::kRelu),
                   LayerSpec::dense(6), LayerSpec::reshape(1, 2, 3)},
                  1, 2, 3, 1, 2, 3, Family::kD);
    std::vector<double> p(static_cast<size_t>(nn::param_count(id_spec)), 0.0);
    for (int o = 0; o < 6; ++o) {
      p[static_cast<size_t>(o * 6 + o)] = 1.0;                  // first dense = I
      p[static_cast<size_t>(42 + o * 6 + o)] = 1.0;             // second dense = I
    }
    const std::vector<double> xin = {0.5, -1.0, 2.0, 0.0, -0.25, 3.5};
    const std::vector<double> y = nn::forward(id_spec, p, xin);
    const std::vector<double> expect = {0.5, 0.0, 2.0, 0.0, 0.0, 3.5};
    for (int i = 0; i < 6; ++i) CHECK(y[static_cast<size_t>(i)] == expect[static_cast<size_t>(i)]);
  }
}

TEST_CASE("convolution forward matches a direct stencil sum") {
  const NetworkSpec spec = tiny_spec({LayerSpec::conv2d(3)}, 2, 4, 5, 3, 4, 5, Family::kCD);
  std::vector<double> p = nn::init_params(spec, 5);
  const std::vector<double> bias_noise = random_vec(p.size(), 6, 0.2);
  for (size_t i = 0; i < p.size(); ++i)
    if (p[i] == 0.0) p[i] = bias_noise[i];
  const std::vector<double> xin = random_vec(2 * 4 * 5, 7);

  const std::vector<double> y = nn::forward(spec, p, xin);
  REQUIRE(y.size() == 3u * 4u * 5u);

  const double* kern = p.data();
  const double* bias = p.data() + 3 * 3 * 2 * 3;
  const auto at_in = [&](int c, int yy, int xx) { return xin[static_cast<size_t>((c * 4 + yy) * 5 + xx)]; };
  for (int f = 0; f < 3; ++f)
    for (int yy = 0; yy < 4; ++yy)
      for (int xx = 0; xx < 5; ++xx) {
        double acc = bias[f];
        for (int c = 0; c < 2; ++c)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const int sy = yy + dy;
              if (sy < 0 || sy >= 4) continue;  // zero padding at the walls
              const int sx = (xx + dx + 5) % 5;  // periodic in x
              acc += kern[((f * 2 + c) * 3 + (dy + 1)) * 3 + (dx + 1)] * at_in(c, sy, sx);
            }
        CHECK(y[static_cast<size_t>((f * 4 + yy) * 5 + xx)] == doctest::Approx(acc).epsilon(1e-13));
      }
}

TEST_CASE("a ones kernel applied to a boundary delta shows padding and wrap") {
  const NetworkSpec spec = tiny_spec({LayerSpec::conv2d(1)}, 1, 4, 5, 1, 4, 5, Family::kCD);
  std::vector<double> p(static_cast<size_t>(nn::param_count(spec)), 0.0);
  for (int i = 0; i < 9; ++i) p[static_cast<size_t>(i)] = 1.0;  // kernel of ones, zero bias
  std::vector<double> xin(20, 0.0);
  xin[0] = 1.0;  // delta at the (y=0, x=0) wall corner

  const std::vector<double> y = nn::forward(spec, p, xin);
  CHECK(y[0] == 1.0);                           // on the delta
  CHECK(y[1] == 1.0);                           // one step east
  CHECK(y[4] == 1.0);                           // wraps around in x
  CHECK(y[5] == 1.0);                           // one row up
  CHECK(y[2 * 5 + 0] == 0.0);                   // out of stencil reach
  double total = 0.0;
  for (const double v : y) total += v;
  CHECK(total == doctest::Approx(6.0));         // 2 rows (wall clips one) x 3 columns
}

TEST_CASE("convolution commutes with periodic shifts in x") {
  const NetworkSpec spec = tiny_spec({LayerSpec::conv2d(3)}, 2, 4, 5, 3, 4, 5, Family::kCD);
  std::vector<double> p = nn::init_params(spec, 21);
  const std::vector<double> bias_noise = random_vec(p.size(), 22, 0.2);
  for (size_t i = 0; i < p.size(); ++i)
    if (p[i] == 0.0) p[i] = bias_noise[i];
  const std::vector<double> xin = random_vec(2 * 4 * 5, 23);

  const int shift = 2;
  std::vector<double> xsh(xin.size());
  for (int c = 0; c < 2; ++c)
    for (int yy = 0; yy < 4; ++yy)
      for (int xx = 0; xx < 5; ++xx)
        xsh[static_cast<size_t>((c * 4 + yy) * 5 + xx)] =
            xin[static_cast<size_t>((c * 4 + yy) * 5 + (xx - shift + 5) % 5)];

  const std::vector<double> y = nn::forward(spec, p, xin);
  const std::vector<double> ysh = nn::forward(spec, p, xsh);
  for (int f = 0; f < 3; ++f)
    for (int yy = 0; yy < 4; ++yy)
      for (int xx = 0; xx < 5; ++xx)
        CHECK(ysh[static_cast<size_t>((f * 4 + yy) * 5 + xx)] ==
              y[static_cast<size_t>((f * 4 + yy) * 5 + (xx - shift + 5) % 5)]);
}

TEST_CASE("a 1x1 convolution is a channel-mixing dense layer") {
  // conv: 2 channels -> 2 filters with a 1x1 kernel on a 3x4 plane
  const NetworkSpec conv_spec =
      tiny_spec({LayerSpec::conv2d(2, Activation::kLinear, 1, 1)}, 2, 3, 4, 2, 3, 4, Family::kCD);
  REQUIRE(nn::param_count(conv_spec) == 6);  // 4 kernel entries + 2 biases

  const NetworkSpec dense_spec =
      tiny_spec({LayerSpec::flatten(), LayerSpec::dense(24), LayerSpec::reshape(2, 3, 4)}, 2, 3, 4,
                2, 3, 4, Family::kD);

  const std::vector<double> kc = {0.7, -0.3, 0.2, 1.1};  // K[f*2+c]
  const std::vector<double> bc = {0.05, -0.4};
  std::vector<double> pconv = kc;
  pconv.insert(pconv.end(), bc.begin(), bc.end());

  // dense equivalent: W[(f*12+pix)*(24) + (c*12+pix)] = K[f*2+c], b[f*12+pix] = bc[f]
  std::vector<double> pdense(static_cast<size_t>(nn::param_count(dense_spec)), 0.0);
  const int plane = 12;
  for (int f = 0; f < 2; ++f)
    for (int c = 0; c < 2; ++c)
      for (int pix = 0; pix < plane; ++pix)
        pdense[static_cast<size_t>((f * plane + pix) * 24 + (c * plane + pix))] =
            kc[static_cast<size_t>(f * 2 + c)];
  for (int f = 0; f < 2; ++f)
    for (int pix = 0; pix < plane; ++pix)
      pdense[static_cast<size_t>(24 * 24 + f * plane + pix)] = bc[static_cast<size_t>(f)];

  std::vector<std::vector<double>> xs, ys;
  for (int s = 0; s < 3; ++s) {
    xs.push_back(random_vec(24, 31 + static_cast<std::uint64_t>(s)));
    ys.push_back(random_vec(24, 61 + static_cast<std::uint64_t>(s)));
  }

  SUBCASE("identical forward maps") {
    for (const std::vector<double>& x : xs) {
      const std::vector<double> yc = nn::forward(conv_spec, pconv, x);
      const std::vector<double> yd = nn::forward(dense_spec, pdense, x);
      for (size_t i = 0; i < yc.size(); ++i)
        CHECK(yc[i] == doctest::Approx(yd[i]).epsilon(1e-14));
    }
  }

  SUBCASE("conv gradients aggregate the equivalent dense gradients") {
    std::vector<double> gc, gd;
    const double lc = nn::loss_and_grads(conv_spec, pconv, xs, ys, gc);
    const double ld = nn::loss_and_grads(dense_spec, pdense, xs, ys, gd);
    CHECK(lc == doctest::Approx(ld).epsilon(1e-14));
    for (int f = 0; f < 2; ++f) {
      for (int c = 0; c < 2; ++c) {
        double sum_w = 0.0;
        for (int pix = 0; pix < plane; ++pix)
          sum_w += gd[static_cast<size_t>((f * plane + pix) * 24 + (c * plane + pix))];
        CHECK(gc[static_cast<size_t>(f * 2 + c)] == doctest::Approx(sum_w).epsilon(1e-12));
      }
      double sum_b = 0.0;
      for (int pix = 0; pix < plane; ++pix)
        sum_b += gd[static_cast<size_t>(24 * 24 + f * plane + pix)];
      CHECK(gc[static_cast<size_t>(4 + f)] == doctest::Approx(sum_b).epsilon(1e-12));
    }
  }
}

namespace {

/// Relative error between the analytic directional derivative and a central
/// finite difference of the batch loss along a random direction.
double fd_rel_err(const NetworkSpec& spec, std::uint64_t seed) {
  std::vector<double> p = nn::init_params(spec, seed);
  const std::vector<double> bias_noise = random_vec(p.size(), seed + 1000, 0.4);
  for (size_t i = 0; i < p.size(); ++i)
    if (p[i] == 0.0) p[i] = bias_noise[i];

  const size_t in_n = static_cast<size_t>(spec.input_size());
  const size_t out_n = static_cast<size_t>(spec.output_size());
  std::vector<std::vector<double>> xs, ys;
  for (int s = 0; s < 3; ++s) {
    xs.push_back(random_vec(in_n, seed + 10 + static_cast<std::uint64_t>(s)));
    ys.push_back(random_vec(out_n, seed + 20 + static_cast<std::uint64_t>(s)));
  }

  std::vector<double> grad;
  nn::loss_and_grads(spec, p, xs, ys, grad);
  const std::vector<double> dir = random_vec(p.size(), seed + 30);
  double analytic = 0.0;
  for (size_t i = 0; i < p.size(); ++i) analytic += grad[i] * dir[i];

  const double eps = 1e-6;
  std::vector<double> pp = p, pm = p;
  for (size_t i = 0; i < p.size(); ++i) {
    pp[i] += eps * dir[i];
    pm[i] -= eps * dir[i];
  }
  const double fd = (nn::loss(spec, pp, xs, ys) - nn::loss(spec, pm, xs, ys)) / (2.0 * eps);
  return std::abs(fd - analytic) / std::max(1e-12, std::abs(analytic));
}

}  // namespace

TEST_CASE("backpropagation matches finite differences for every layer kind") {
  // dense chains, both activations
  CHECK(fd_rel_err(tiny_spec({LayerSpec::flatten(), LayerSpec::dense(5),
                              LayerSpec::dense(6), LayerSpec::reshape(1, 2, 3)},
                             1, 2, 3, 1, 2, 3, Family::kD),
                   101) <= 1e-6);
  CHECK(fd_rel_err(tiny_spec({LayerSpec::flatten(), LayerSpec::dense(5, Activation::kRelu),
                              LayerSpec::dense(6), LayerSpec::reshape(1, 2, 3)},
                             1, 2, 3, 1, 2, 3, Family::kD),
                   102) <= 1e-6);
  // convolution chains, both activations
  CHECK(fd_rel_err(tiny_spec({LayerSpec::conv2d(3)}, 2, 4, 5, 3, 4, 5, Family::kCD), 103) <= 1e-6);
  CHECK(fd_rel_err(tiny_spec({LayerSpec::conv2d(3, Activation::kRelu), LayerSpec::conv2d(2)},
                             2, 4, 5, 2, 4, 5, Family::kCD),
                   104) <= 1e-6);
  // the full conv->flatten->dense template
  CHECK(fd_rel_err(tiny_spec({LayerSpec::conv2d(3), LayerSpec::flatten(), LayerSpec::dense(5),
                              LayerSpec::dense(24), LayerSpec::reshape(2, 3, 4)},
                             2, 3, 4, 2, 3, 4, Family::kCD),
                   105) <= 1e-6);
  CHECK(fd_rel_err(tiny_spec({LayerSpec::conv2d(3, Activation::kRelu), LayerSpec::flatten(),
                              LayerSpec::dense(5, Activation::kRelu), LayerSpec::dense(24),
                              LayerSpec::reshape(2, 3, 4)},
                             2, 3, 4, 2, 3, 4, Family::kCD),
                   106) <= 1e-6);
}

TEST_CASE("perfect predictions give exactly zero loss and gradient") {
  const NetworkSpec spec = toy_d_spec(4, Activation::kRelu);
  std::vector<double> p = nn::init_params(spec, 77);
  const std::vector<double> bias_noise = random_vec(p.size(), 78, 0.3);
  for (size_t i = 0; i < p.size(); ++i)
    if (p[i] == 0.0) p[i] = bias_noise[i];

  std::vector<std::vector<double>> xs, ys;
  for (int s = 0; s < 4; ++s) {
    xs.push_back(random_vec(6, 80 + static_cast<std::uint64_t>(s)));
    ys.push_back(nn::forward(spec, p, xs.back()));
  }
  std::vector<double> grad;
  CHECK(nn::loss_and_grads(spec, p, xs, ys, grad) == 0.0);
  for (const double g : grad) CHECK(g == 0.0);
}

TEST_CASE("batch loss rejects malformed batches") {
  const NetworkSpec spec = toy_d_spec(4, Activation::kLinear);
  const std::vector<double> p(static_cast<size_t>(nn::param_count(spec)), 0.0);
  std::vector<double> grad;
  CHECK_THROWS_AS(nn::loss_and_grads(spec, p, {}, {}, grad), std::invalid_argument);
  CHECK_THROWS_AS(nn::loss(spec, p, {random_vec(5, 1)}, {random_vec(6, 2)}),
                  std::invalid_argument);
  CHECK_THROWS_AS(nn::loss(spec, p, {random_vec(6, 1)}, {random_vec(7, 2)}),
                  std::invalid_argument);
  CHECK_THROWS_AS(nn::loss(spec, std::vector<double>(3, 0.0), {random_vec(6, 1)},
                           {random_vec(6, 2)}),
                  std::invalid_argument);
}

TEST_CASE("adam steps follow the bias-corrected moment update") {
  SUBCASE("first step moves each weight by about lr toward minus the gradient sign") {
    std::vector<double> params = {1.0, -2.0, 0.3};
    const std::vector<double> grads = {0.5, -3.0, 1e-3};
    nn::AdamState st(params.size());
    const nn::AdamConfig cfg;
    nn::adam_step(params, grads, st, 1e-3, cfg);
    CHECK(st.t == 1);

    // replicate the update arithmetic exactly
    const std::vector<double> p0 = {1.0, -2.0, 0.3};
    const double c1 = 1.0 - 0.9, c2 = 1.0 - 0.999;
    for (size_t i = 0; i < params.size(); ++i) {
      const double m = (1.0 - 0.9) * grads[i];
      const double v = (1.0 - 0.999) * grads[i] * grads[i];
      const double expect = p0[i] - 1e-3 * (m / c1) / (std::sqrt(v / c2) + cfg.eps);
      CHECK(params[i] == expect);
      // and that is essentially a signed step of size lr
      CHECK(std::abs((params[i] - p0[i]) + 1e-3 * (grads[i] > 0 ? 1.0 : -1.0)) < 1e-6);
    }
  }

  SUBCASE("zero gradients with zero moments leave the weights untouched") {
    std::vector<double> params = {0.25, -1.5};
    const std::vector<double> p0 = params;
    nn::AdamState st(2);
    nn::adam_step(params, std::vector<double>(2, 0.0), st, 1e-2, {});
    CHECK(params[0] == p0[0]);
    CHECK(params[1] == p0[1]);
    CHECK(st.t == 1);
  }

  SUBCASE("size mismatches are rejected") {
    std::vector<double> params = {1.0};
    nn::AdamState st(2);
    CHECK_THROWS_AS(nn::adam_step(params, {0.1}, st, 1e-3, {}), std::invalid_argument);
  }
}

TEST_CASE("training a linear map approaches the least-squares optimum") {
  // raw-space targets y = A x + c + noise on a 6 -> 2 linear network
  const NetworkSpec spec = tiny_spec(
      {LayerSpec::flatten(), LayerSpec::dense(2), LayerSpec::reshape(1, 1, 2)}, 1, 2, 3, 1, 1, 2,
      Family::kD);

  data::TrainingDatabase db;
  std::mt19937_64 rng(314);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.02);
  const double A[2][6] = {{0.4, -0.2, 0.1, 0.7, -0.5, 0.3}, {-0.6, 0.2, 0.9, -0.1, 0.05, -0.3}};
  for (int s = 0; s < 24; ++s) {
    data::SamplePair pr;
    pr.input = Field3(1, 2, 3);
    pr.target = Field3(1, 1, 2);
    for (double& v : pr.input.data) v = 0.3 + 0.5 * u(rng);
    for (int o = 0; o < 2; ++o) {
      double acc = o == 0 ? 0.2 : -0.1;
      for (int i = 0; i < 6; ++i) acc += A[o][i] * pr.input.data[static_cast<size_t>(i)];
      pr.target.data[static_cast<size_t>(o)] = acc + noise(rng);
    }
    db.pairs.push_back(std::move(pr));
  }

  nn::TrainConfig tc;
  tc.epochs_phase1 = 2000;
  tc.lr_phase1 = 1e-2;  // cover the distance from the random start ...
  tc.epochs_phase2 = 1000;  // ... then settle into the quadratic bowl
  tc.seed = 9;
  const nn::TrainResult res = nn::train(spec, db, db, tc);
  REQUIRE(res.history.size() == 3000);

  // least-squares optimum of the same normalized regression, via Eigen
  const qgml::nn::Normalizer nrm = data::compute_normalizer(db);
  Eigen::MatrixXd X(24, 7), Y(24, 2);
  for (int s = 0; s < 24; ++s) {
    for (int i = 0; i < 6; ++i) X(s, i) = nrm.encode_in(db.pairs[static_cast<size_t>(s)].input.data[static_cast<size_t>(i)]);
    X(s, 6) = 1.0;
    for (int o = 0; o < 2; ++o) Y(s, o) = nrm.encode_out(db.pairs[static_cast<size_t>(s)].target.data[static_cast<size_t>(o)]);
  }
  const Eigen::MatrixXd beta = X.colPivHouseholderQr().solve(Y);
  const double opt = (Y - X * beta).squaredNorm() / (24.0 * 2.0);

  const double final_mse = res.history.back().train_mse;
  CHECK(final_mse <= opt * (1.0 + 1e-4) + 1e-6);  // reaches the optimum ...
  CHECK(final_mse + 1e-9 >= opt);                 // ... and cannot beat it
}

TEST_CASE("training is deterministic and checkpoints the best validation epoch") {
  const NetworkSpec spec = toy_d_spec(4, Activation::kRelu);
  const data::TrainingDatabase db_train = toy_db(10, 1, 2, 3, 1, 2, 3, 501);
  const data::TrainingDatabase db_valid = toy_db(4, 1, 2, 3, 1, 2, 3, 502);

  nn::TrainConfig tc;
  tc.epochs_phase1 = 25;
  tc.epochs_phase2 = 15;
  tc.seed = 13;

  SUBCASE("identical runs produce bit-identical parameters and history") {
    const nn::TrainResult a = nn::train(spec, db_train, db_valid, tc);
    const nn::TrainResult b = nn::train(spec, db_train, db_valid, tc);
    REQUIRE(a.params.size() == b.params.size());
    for (size_t i = 0; i < a.params.size(); ++i) CHECK(a.params[i] == b.params[i]);
    REQUIRE(a.history.size() == b.history.size());
    for (size_t e = 0; e < a.history.size(); ++e) {
      CHECK(a.history[e].train_mse == b.history[e].train_mse);
      CHECK(a.history[e].valid_mse == b.history[e].valid_mse);
    }
    CHECK(a.best_epoch == b.best_epoch);
  }

  SUBCASE("mini-batch shuffling stays deterministic") {
    nn::TrainConfig small = tc;
    small.batch_size = 4;
    const nn::TrainResult a = nn::train(spec, db_train, db_valid, small);
    const nn::TrainResult b = nn::train(spec, db_train, db_valid, small);
    for (size_t i = 0; i < a.params.size(); ++i) CHECK(a.params[i] == b.params[i]);
  }

  SUBCASE("the kept parameters reproduce the lowest validation loss") {
    const nn::TrainResult res = nn::train(spec, db_train, db_valid, tc);
    REQUIRE(res.history.size() == 40);

    double lo = res.history.front().valid_mse;
    int lo_epoch = res.history.front().epoch;
    for (const nn::EpochRecord& r : res.history) {
      CHECK(r.lr == (r.epoch <= 25 ? 1e-3 : 1e-4));
      CHECK(r.epoch >= 1);
      if (r.valid_mse < lo) {
        lo = r.valid_mse;
        lo_epoch = r.epoch;
      }
    }
    CHECK(res.best_valid_mse == lo);
    CHECK(res.best_epoch == lo_epoch);

    // re-evaluate the stored parameters on the normalized validation batch
    CHECK(res.normalizer.in_std == data::compute_normalizer(db_train).in_std);
    const std::vector<std::vector<double>> vin = encode(db_valid.pairs, res.normalizer, true);
    const std::vector<std::vector<double>> vtg = encode(db_valid.pairs, res.normalizer, false);
    CHECK(nn::loss(spec, res.params, vin, vtg) == res.best_valid_mse);
  }

  SUBCASE("a single-phase schedule is allowed") {
    nn::TrainConfig one = tc;
    one.epochs_phase2 = 0;
    const nn::TrainResult res = nn::train(spec, db_train, db_valid, one);
    CHECK(res.history.size() == 25);
    CHECK(res.history.back().lr == 1e-3);
  }

  SUBCASE("shape mismatches and empty databases are rejected") {
    const data::TrainingDatabase wrong = toy_db(5, 2, 2, 3, 1, 2, 3, 503);
    CHECK_THROWS_WITH_AS(nn::train(spec, wrong, db_valid, tc),
                         doctest::Contains("shapes"), std::invalid_argument);
    const data::TrainingDatabase empty;
    CHECK_THROWS_AS(nn::train(spec, empty, db_valid, tc), std::invalid_argument);
  }
}

TEST_CASE("a runaway learning rate aborts with the failing epoch") {
  const NetworkSpec spec = tiny_spec(
      {LayerSpec::flatten(), LayerSpec::dense(2), LayerSpec::reshape(1, 1, 2)}, 1, 2, 3, 1, 1, 2,
      Family::kD);
  data::TrainingDatabase db = toy_db(8, 1, 2, 3, 1, 1, 2, 601);
  nn::TrainConfig tc;
  tc.epochs_phase1 = 400;
  tc.lr_phase1 = 1e160;  // one Adam step of this size overflows the squared loss
  tc.epochs_phase2 = 0;
  CHECK_THROWS_WITH_AS(nn::train(spec, db, db, tc), doctest::Contains("epoch"),
                       std::runtime_error);
}

TEST_CASE("training configs are validated") {
  nn::TrainConfig tc;
  tc.epochs_phase1 = 0;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
  tc = {};
  tc.lr_phase2 = 0.0;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
  tc = {};
  tc.batch_size = -1;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
  tc = {};
  tc.epochs_phase2 = 0;
  CHECK_NOTHROW(tc.validate());
}

TEST_CASE("predicted corrections are decoded through the normalizer") {
  const NetworkSpec spec = tiny_spec({LayerSpec::flatten(), LayerSpec::dense(24),
                                      LayerSpec::reshape(2, 3, 4)},
                                     2, 3, 4, 2, 3, 4, Family::kD);

  qgml::qg::ModelState state;
  state.psi = Field3(2, 3, 4);
  const std::vector<double> vals = random_vec(24, 901);
  state.psi.data = vals;

  SUBCASE("a zero network emits the constant output mean") {
    const std::vector<double> p(static_cast<size_t>(nn::param_count(spec)), 0.0);
    qgml::nn::Normalizer nrm;
    nrm.out_mean = 0.7;
    nrm.out_std = 2.5;
    const Field3 out = nn::predict_correction(spec, p, nrm, state);
    REQUIRE(out.nl == 2);
    for (const double v : out.data) CHECK(v == 0.7);
  }

  SUBCASE("an identity network round-trips through encode and decode") {
    std::vector<double> p(static_cast<size_t>(nn::param_count(spec)), 0.0);
    for (int o = 0; o < 24; ++o) p[static_cast<size_t>(o * 24 + o)] = 1.0;
    qgml::nn::Normalizer nrm;
    nrm.in_mean = 0.2;
    nrm.in_std = 1.7;
    nrm.out_mean = 0.2;
    nrm.out_std = 1.7;
    const Field3 out = nn::predict_correction(spec, p, nrm, state);
    for (size_t i = 0; i < out.data.size(); ++i)
      CHECK(out.data[i] == doctest::Approx(vals[i]).epsilon(1e-14));
  }

  SUBCASE("degenerate normalizers and wrong shapes are rejected") {
    const std::vector<double> p(static_cast<size_t>(nn::param_count(spec)), 0.0);
    qgml::nn::Normalizer bad;
    bad.out_std = 0.0;
    CHECK_THROWS_AS(nn::predict_correction(spec, p, bad, state), std::invalid_argument);

    qgml::qg::ModelState wrong;
    wrong.psi = Field3(2, 4, 4);
    CHECK_THROWS_WITH_AS(nn::predict_correction(spec, p, {}, wrong),
                         doctest::Contains("shape"), std::invalid_argument);
  }
}

TEST_CASE("weight files round-trip the network exactly") {
  const NetworkSpec spec = tiny_spec({LayerSpec::conv2d(3, Activation::kRelu),
                                      LayerSpec::flatten(), LayerSpec::dense(5, Activation::kRelu),
                                      LayerSpec::dense(12), LayerSpec::reshape(1, 3, 4)},
                                     2, 3, 4, 1, 3, 4, Family::kCD);
  nn::TrainResult res;
  res.params = nn::init_params(spec, 111);
  const std::vector<double> bias_noise = random_vec(res.params.size(), 112, 0.3);
  for (size_t i = 0; i < res.params.size(); ++i)
    if (res.params[i] == 0.0) res.params[i] = bias_noise[i];
  res.normalizer.in_mean = 0.12;
  res.normalizer.in_std = 3.4;
  res.normalizer.out_mean = -0.02;
  res.normalizer.out_std = 0.15;
  res.best_epoch = 17;
  res.best_valid_mse = 0.023;
  res.seed = 999;
  res.history.resize(20);

  const std::string path = temp_path("roundtrip.json");
  nn::save_network(spec, res, path);
  const nn::LoadedNetwork back = nn::load_network(path);

  CHECK(back.spec.family == Family::kCD);
  REQUIRE(back.spec.layers.size() == spec.layers.size());
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    CHECK(back.spec.layers[i].kind == spec.layers[i].kind);
    CHECK(back.spec.layers[i].activation == spec.layers[i].activation);
  }
  REQUIRE(back.params.size() == res.params.size());
  for (size_t i = 0; i < res.params.size(); ++i) CHECK(back.params[i] == res.params[i]);
  CHECK(back.normalizer.in_mean == res.normalizer.in_mean);
  CHECK(back.normalizer.in_std == res.normalizer.in_std);
  CHECK(back.normalizer.out_mean == res.normalizer.out_mean);
  CHECK(back.normalizer.out_std == res.normalizer.out_std);
  CHECK(back.seed == 999);

  const std::vector<double> x = random_vec(24, 113);
  const std::vector<double> y0 = nn::forward(spec, res.params, x);
  const std::vector<double> y1 = nn::forward(back.spec, back.params, x);
  for (size_t i = 0; i < y0.size(); ++i) CHECK(y0[i] == y1[i]);

  std::remove(path.c_str());
}

TEST_CASE("weight file loading rejects foreign or missing files") {
  CHECK_THROWS_WITH_AS(nn::load_network(temp_path("does_not_exist.json")),
                       doctest::Contains("cannot open"), std::runtime_error);

  const std::string path = temp_path("garbage.json");
  {
    std::FILE* f = std::fopen(path.c_str(), "w");
    REQUIRE(f != nullptr);
    std::fputs("this is { not a weight file", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(nn::load_network(path), std::runtime_error);
  std::remove(path.c_str());
}
