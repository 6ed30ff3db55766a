#include "umami/tensor.hpp"

#include <cmath>

#include "umami/common.hpp"

namespace umami::ag {

Tensor::Tensor(std::vector<long> shape_in) : shape(std::move(shape_in)) {
  long n = 1;
  for (long d : shape) {
    if (d < 0) throw NumericError("tensor: negative dimension");
    n *= d;
  }
  data.assign(static_cast<std::size_t>(n), 0.0);
}

Tensor Tensor::zeros(std::vector<long> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<long> shape, double v) {
  Tensor t(std::move(shape));
  for (double& x : t.data) x = v;
  return t;
}

Tensor Tensor::scalar(double v) {
  Tensor t({1});
  t.data[0] = v;
  return t;
}

Tensor Tensor::from(std::vector<long> shape, std::vector<double> values) {
  Tensor t(std::move(shape));
  if (t.data.size() != values.size()) throw NumericError("tensor: data size does not match shape");
  t.data = std::move(values);
  return t;
}

Tensor Tensor::gaussian(std::vector<long> shape, std::mt19937_64& rng, double stddev, double mean) {
  Tensor t(std::move(shape));
  for (double& x : t.data) x = mean + stddev * next_gaussian(rng);
  return t;
}

Tensor Tensor::trunc_normal(std::vector<long> shape, std::mt19937_64& rng, double stddev) {
  Tensor t(std::move(shape));
  for (double& x : t.data) {
    double g;
    do {
      g = next_gaussian(rng);
    } while (std::abs(g) > 2.0);
    x = stddev * g;
  }
  return t;
}

long Tensor::cols() const {
  if (shape.size() <= 1) return 1;
  long c = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) c *= shape[i];
  return c;
}

bool Tensor::all_finite() const {
  for (double x : data)
    if (!std::isfinite(x)) return false;
  return true;
}

double Tensor::l2_norm() const {
  double s = 0.0;
  for (double x : data) s += x * x;
  return std::sqrt(s);
}

}  // namespace umami::ag
