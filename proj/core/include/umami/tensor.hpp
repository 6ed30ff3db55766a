#pragma once

// Dense row-major float64 tensor. Deliberately tiny: the model only ever
// needs rank-1/rank-2 views, so "shape" is a vector but every op treats the
// data as [rows, cols] with cols = product of trailing dims.

#include <cstdint>
#include <random>
#include <vector>

namespace umami::ag {

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<long> shape_in);

  static Tensor zeros(std::vector<long> shape);
  static Tensor full(std::vector<long> shape, double v);
  static Tensor scalar(double v);
  static Tensor from(std::vector<long> shape, std::vector<double> values);
  static Tensor gaussian(std::vector<long> shape, std::mt19937_64& rng, double stddev, double mean = 0.0);
  // Truncated normal: resample anything beyond 2 stddev (matches the
  // initialization scheme used for fresh weights).
  static Tensor trunc_normal(std::vector<long> shape, std::mt19937_64& rng, double stddev);

  long numel() const { return static_cast<long>(data.size()); }
  long rows() const { return shape.empty() ? 0 : shape[0]; }
  long cols() const;                   // product of dims past the first; 1 for rank-1
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool is_scalar() const { return numel() == 1; }

  double& operator[](long i) { return data[static_cast<std::size_t>(i)]; }
  double operator[](long i) const { return data[static_cast<std::size_t>(i)]; }
  double& at(long r, long c) { return data[static_cast<std::size_t>(r * cols() + c)]; }
  double at(long r, long c) const { return data[static_cast<std::size_t>(r * cols() + c)]; }

  bool all_finite() const;
  double l2_norm() const;

  std::vector<long> shape;
  std::vector<double> data;
};

}  // namespace umami::ag
