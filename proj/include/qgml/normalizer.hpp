#ifndef QGML_NORMALIZER_HPP
#define QGML_NORMALIZER_HPP

#include <stdexcept>

namespace qgml::nn {

/// Global scalar normalization: one mean/std pair over all input entries of a
/// training set, and one over all target entries. Network forward passes run
/// in the normalized space; predictions are mapped back through the output
/// statistics.
struct Normalizer {
  double in_mean = 0.0;
  double in_std = 1.0;
  double out_mean = 0.0;
  double out_std = 1.0;

  void validate() const {
    if (!(in_std > 0.0) || !(out_std > 0.0))
      throw std::invalid_argument("Normalizer: stds must be positive");
  }

  double encode_in(double v) const { return (v - in_mean) / in_std; }
  double encode_out(double v) const { return (v - out_mean) / out_std; }
  double decode_out(double v) const { return v * out_std + out_mean; }
};

}  // namespace qgml::nn

#endif
