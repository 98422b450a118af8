#include <limits>

#include "sthfl/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sthfl::kernels {

namespace {
// Below this many rows the fork/join overhead dominates.
constexpr std::ptrdiff_t kMinParallelRows = 64;
}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace parallel {

void affine(const Layer& layer, const Matrix& in, Matrix& out) {
  require_same_size(in.cols(), layer.in_dim(), "affine: input width mismatch");
  out = Matrix(in.rows(), layer.out_dim());
  const auto rows = static_cast<std::ptrdiff_t>(in.rows());
#pragma omp parallel for schedule(static) if (rows >= kMinParallelRows)
  for (std::ptrdiff_t j = 0; j < rows; ++j) {
    auto x = in.row(static_cast<std::size_t>(j));
    auto dst = out.row(static_cast<std::size_t>(j));
    for (std::size_t o = 0; o < layer.out_dim(); ++o) {
      auto w = layer.weight.row(o);
      double acc = layer.bias[o];
      for (std::size_t k = 0; k < x.size(); ++k) acc += w[k] * x[k];
      dst[o] = acc;
    }
  }
}

void relu(const Matrix& pre, Matrix& out) {
  out = Matrix(pre.rows(), pre.cols());
  auto src = pre.values();
  auto dst = out.values();
  const auto n = static_cast<std::ptrdiff_t>(src.size());
#pragma omp parallel for schedule(static) if (n >= kMinParallelRows * 32)
  for (std::ptrdiff_t i = 0; i < n; ++i) dst[i] = src[i] > 0.0 ? src[i] : 0.0;
}

void accumulate_grad(const Matrix& delta, const Matrix& input, Layer& grad) {
  require_same_size(delta.rows(), input.rows(), "accumulate_grad: batch mismatch");
  require_same_size(delta.cols(), grad.out_dim(), "accumulate_grad: output width mismatch");
  require_same_size(input.cols(), grad.in_dim(), "accumulate_grad: input width mismatch");
  // Threads own output units; every element still sums samples in row order.
  const auto outs = static_cast<std::ptrdiff_t>(delta.cols());
  const auto rows = delta.rows();
#pragma omp parallel for schedule(static) if (static_cast<std::ptrdiff_t>(rows) >= kMinParallelRows)
  for (std::ptrdiff_t o = 0; o < outs; ++o) {
    auto w = grad.weight.row(static_cast<std::size_t>(o));
    double b = grad.bias[static_cast<std::size_t>(o)];
    for (std::size_t j = 0; j < rows; ++j) {
      const double d = delta(j, static_cast<std::size_t>(o));
      auto x = input.row(j);
      for (std::size_t k = 0; k < x.size(); ++k) w[k] += d * x[k];
      b += d;
    }
    grad.bias[static_cast<std::size_t>(o)] = b;
  }
}

void backprop(const Layer& layer, const Matrix& delta, Matrix& out) {
  require_same_size(delta.cols(), layer.out_dim(), "backprop: delta width mismatch");
  out = Matrix(delta.rows(), layer.in_dim());
  const auto rows = static_cast<std::ptrdiff_t>(delta.rows());
#pragma omp parallel for schedule(static) if (rows >= kMinParallelRows)
  for (std::ptrdiff_t j = 0; j < rows; ++j) {
    auto dst = out.row(static_cast<std::size_t>(j));
    for (std::size_t o = 0; o < layer.out_dim(); ++o) {
      const double d = delta(static_cast<std::size_t>(j), o);
      auto w = layer.weight.row(o);
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += d * w[k];
    }
  }
}

std::vector<std::size_t> nearest(const Matrix& points, const Matrix& centers) {
  require_same_size(points.cols(), centers.cols(), "nearest: dimension mismatch");
  std::vector<std::size_t> out(points.rows(), 0);
  const auto rows = static_cast<std::ptrdiff_t>(points.rows());
#pragma omp parallel for schedule(static) if (rows >= kMinParallelRows)
  for (std::ptrdiff_t j = 0; j < rows; ++j) {
    double best = std::numeric_limits<double>::infinity();
    auto p = points.row(static_cast<std::size_t>(j));
    for (std::size_t c = 0; c < centers.rows(); ++c) {
      double d = squared_distance(p, centers.row(c));
      if (d < best) {
        best = d;
        out[static_cast<std::size_t>(j)] = c;
      }
    }
  }
  return out;
}

}  // namespace parallel
}  // namespace sthfl::kernels
