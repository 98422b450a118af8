#include "sthfl/kernels.hpp"

#include <limits>

namespace sthfl::kernels::serial {

void affine(const Layer& layer, const Matrix& in, Matrix& out) {
  require_same_size(in.cols(), layer.in_dim(), "affine: input width mismatch");
  out = Matrix(in.rows(), layer.out_dim());
  for (std::size_t j = 0; j < in.rows(); ++j) {
    auto x = in.row(j);
    for (std::size_t o = 0; o < layer.out_dim(); ++o) {
      auto w = layer.weight.row(o);
      double acc = layer.bias[o];
      for (std::size_t k = 0; k < x.size(); ++k) acc += w[k] * x[k];
      out(j, o) = acc;
    }
  }
}

void relu(const Matrix& pre, Matrix& out) {
  out = Matrix(pre.rows(), pre.cols());
  auto src = pre.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0 ? src[i] : 0.0;
}

void accumulate_grad(const Matrix& delta, const Matrix& input, Layer& grad) {
  require_same_size(delta.rows(), input.rows(), "accumulate_grad: batch mismatch");
  require_same_size(delta.cols(), grad.out_dim(), "accumulate_grad: output width mismatch");
  require_same_size(input.cols(), grad.in_dim(), "accumulate_grad: input width mismatch");
  for (std::size_t j = 0; j < delta.rows(); ++j) {
    auto x = input.row(j);
    for (std::size_t o = 0; o < delta.cols(); ++o) {
      const double d = delta(j, o);
      auto w = grad.weight.row(o);
      for (std::size_t k = 0; k < x.size(); ++k) w[k] += d * x[k];
      grad.bias[o] += d;
    }
  }
}

void backprop(const Layer& layer, const Matrix& delta, Matrix& out) {
  require_same_size(delta.cols(), layer.out_dim(), "backprop: delta width mismatch");
  out = Matrix(delta.rows(), layer.in_dim());
  for (std::size_t j = 0; j < delta.rows(); ++j) {
    auto dst = out.row(j);
    for (std::size_t o = 0; o < layer.out_dim(); ++o) {
      const double d = delta(j, o);
      auto w = layer.weight.row(o);
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += d * w[k];
    }
  }
}

std::vector<std::size_t> nearest(const Matrix& points, const Matrix& centers) {
  require_same_size(points.cols(), centers.cols(), "nearest: dimension mismatch");
  std::vector<std::size_t> out(points.rows(), 0);
  for (std::size_t j = 0; j < points.rows(); ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centers.rows(); ++c) {
      double d = squared_distance(points.row(j), centers.row(c));
      if (d < best) {
        best = d;
        out[j] = c;
      }
    }
  }
  return out;
}

}  // namespace sthfl::kernels::serial
