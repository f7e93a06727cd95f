#ifndef M2R_TENSOR_HPP
#define M2R_TENSOR_HPP

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "m2r/errors.hpp"
#include "m2r/rng.hpp"

namespace m2r {

// Dense 64-bit real tensor with an optional gradient buffer of the same
// length. Shapes are row-major.
struct Tensor {
  std::vector<size_t> shape;
  std::vector<double> v;
  std::vector<double> g;

  Tensor() = default;
  explicit Tensor(std::vector<size_t> s) : shape(std::move(s)) {
    v.assign(count(shape), 0.0);
  }

  static size_t count(const std::vector<size_t>& s) {
    return std::accumulate(s.begin(), s.end(), size_t{1}, std::multiplies<>());
  }

  size_t size() const { return v.size(); }

  void require_grad() {
    if (g.size() != v.size()) g.assign(v.size(), 0.0);
  }
  void zero_grad() { g.assign(v.size(), 0.0); }

  double& at(size_t i) { return v[i]; }
  double at(size_t i) const { return v[i]; }

  // [C,H,W] indexing
  double& at3(size_t c, size_t y, size_t x) {
    return v[(c * shape[1] + y) * shape[2] + x];
  }
  double at3(size_t c, size_t y, size_t x) const {
    return v[(c * shape[1] + y) * shape[2] + x];
  }
  // [R,C] indexing
  double& at2(size_t r, size_t c) { return v[r * shape[1] + c]; }
  double at2(size_t r, size_t c) const { return v[r * shape[1] + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i)
      s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
  }

  void fill_uniform(Rng& rng, double lo, double hi) {
    for (auto& x : v) x = rng.uniform(lo, hi);
  }
};

// Channel-wise concatenation of two [C,H,W] images.
inline Tensor stack_channels(const Tensor& a, const Tensor& b) {
  if (a.shape.size() != 3 || b.shape.size() != 3 || a.shape[1] != b.shape[1] ||
      a.shape[2] != b.shape[2])
    throw shape_error("stack_channels: incompatible shapes " + a.shape_str() +
                      " and " + b.shape_str());
  Tensor out({a.shape[0] + b.shape[0], a.shape[1], a.shape[2]});
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + long(a.v.size()));
  return out;
}

inline void check_shape(const Tensor& t, const std::vector<size_t>& want,
                        const char* where) {
  if (t.shape != want) {
    Tensor w(want);
    throw shape_error(std::string(where) + ": expected " + w.shape_str() +
                      ", got " + t.shape_str());
  }
}

}  // namespace m2r

#endif  // M2R_TENSOR_HPP
