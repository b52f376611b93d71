#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lagr/error.hpp"

namespace lagr {

/// Dimensions of a rank-4 NCHW field.
struct Shape {
  std::size_t b = 0, c = 0, h = 0, w = 0;

  constexpr std::size_t size() const { return b * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return "(" + std::to_string(b) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

/// Dense B x C x H x W array of doubles, W fastest. The carrier for every
/// signal in the library: images, feature maps, kernels, cochains, scalars.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size())
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_.str());
  }

  static Tensor scalar(double v) { return Tensor({1, 1, 1, 1}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const {
    return ((b * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  double& operator()(std::size_t b, std::size_t c, std::size_t h, std::size_t w) {
    return data_[index(b, c, h, w)];
  }
  double operator()(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[index(b, c, h, w)];
  }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() & { return data_; }
  std::span<const double> data() const& { return data_; }
  std::vector<double> data() && { return std::move(data_); }

  /// Contiguous H x W plane of channel c in batch item b.
  std::span<double> plane(std::size_t b, std::size_t c) {
    return std::span<double>(data_).subspan(index(b, c, 0, 0), shape_.plane());
  }
  std::span<const double> plane(std::size_t b, std::size_t c) const {
    return std::span<const double>(data_).subspan(index(b, c, 0, 0), shape_.plane());
  }

  double item() const {
    if (data_.size() != 1) throw DimensionError("item() on non-scalar tensor " + shape_.str());
    return data_[0];
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    require_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  void require_same(const Tensor& o, const char* what) const {
    if (shape_ != o.shape_)
      throw DimensionError(std::string(what) + ": shape " + shape_.str() + " vs " + o.shape_.str());
  }

 private:
  Shape shape_{};
  std::vector<double> data_;
};

/// Real pixel coordinate: u is the column (x), v the row (y).
struct GridPoint {
  double u = 0.0;
  double v = 0.0;
};

inline bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
}

inline double l2_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  a.require_same(b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
inline Tensor operator*(Tensor a, double s) { return a *= s; }
inline Tensor operator-(const Tensor& a, const Tensor& b) {
  a.require_same(b, "-");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

} // namespace lagr
