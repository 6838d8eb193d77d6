#ifndef QGML_FIELD_HPP
#define QGML_FIELD_HPP

#include <cassert>
#include <cmath>
#include <cstddef>
#include <vector>

namespace qgml {

/// Dense (layer, y, x) array, row-major with x fastest.
/// Used both for interior-only fields (ny rows) and fields that carry the
/// two fixed wall rows (ny+2 rows), depending on context.
struct Field3 {
  int nl = 0;
  int ny = 0;
  int nx = 0;
  std::vector<double> data;

  Field3() = default;
  Field3(int nl_, int ny_, int nx_)
      : nl(nl_), ny(ny_), nx(nx_), data(static_cast<size_t>(nl_) * ny_ * nx_, 0.0) {}

  double& operator()(int l, int j, int i) {
    assert(l >= 0 && l < nl && j >= 0 && j < ny && i >= 0 && i < nx);
    return data[(static_cast<size_t>(l) * ny + j) * nx + i];
  }
  double operator()(int l, int j, int i) const {
    assert(l >= 0 && l < nl && j >= 0 && j < ny && i >= 0 && i < nx);
    return data[(static_cast<size_t>(l) * ny + j) * nx + i];
  }

  size_t size() const { return data.size(); }
  bool same_shape(const Field3& o) const { return nl == o.nl && ny == o.ny && nx == o.nx; }
  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  Field3& operator+=(const Field3& o) {
    assert(same_shape(o));
    for (size_t k = 0; k < data.size(); ++k) data[k] += o.data[k];
    return *this;
  }
  Field3& operator-=(const Field3& o) {
    assert(same_shape(o));
    for (size_t k = 0; k < data.size(); ++k) data[k] -= o.data[k];
    return *this;
  }
  Field3& operator*=(double a) {
    for (double& v : data) v *= a;
    return *this;
  }
};

inline Field3 operator+(Field3 a, const Field3& b) { return a += b; }
inline Field3 operator-(Field3 a, const Field3& b) { return a -= b; }
inline Field3 operator*(double s, Field3 a) { return a *= s; }

inline void axpy(double a, const Field3& x, Field3& y) {
  assert(x.same_shape(y));
  for (size_t k = 0; k < x.data.size(); ++k) y.data[k] += a * x.data[k];
}

inline double dot(const Field3& a, const Field3& b) {
  assert(a.same_shape(b));
  double s = 0.0;
  for (size_t k = 0; k < a.data.size(); ++k) s += a.data[k] * b.data[k];
  return s;
}

inline double norm2(const Field3& a) { return std::sqrt(dot(a, a)); }

/// Root mean square over all components.
inline double rms(const Field3& a) {
  if (a.data.empty()) return 0.0;
  return std::sqrt(dot(a, a) / static_cast<double>(a.size()));
}

/// Root mean square of the pointwise difference.
inline double rmse(const Field3& a, const Field3& b) {
  assert(a.same_shape(b));
  double s = 0.0;
  for (size_t k = 0; k < a.data.size(); ++k) {
    const double d = a.data[k] - b.data[k];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(a.size()));
}

}  // namespace qgml

#endif
