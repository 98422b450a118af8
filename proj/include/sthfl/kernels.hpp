#pragma once

#include <span>
#include <vector>

#include "sthfl/linalg.hpp"

namespace sthfl {

// A dense layer: out = weight * in + bias, weight is (out_dim x in_dim).
struct Layer {
  Matrix weight;
  Vec bias;

  std::size_t in_dim() const noexcept { return weight.cols(); }
  std::size_t out_dim() const noexcept { return weight.rows(); }
  bool operator==(const Layer&) const = default;
};

// Batched building blocks of the model. Every kernel exists twice: a plain
// serial loop kept as the reference, and an OpenMP version that parallelises
// over independent outputs only. Each output element is accumulated in the
// same order in both, so the two agree bit for bit at any thread count.
namespace kernels {

namespace serial {

// out(j, :) = layer.weight * in(j, :) + layer.bias
void affine(const Layer& layer, const Matrix& in, Matrix& out);

void relu(const Matrix& pre, Matrix& out);

// grad.weight += delta^T * input; grad.bias += column sums of delta.
void accumulate_grad(const Matrix& delta, const Matrix& input, Layer& grad);

// out(j, :) = delta(j, :) * layer.weight
void backprop(const Layer& layer, const Matrix& delta, Matrix& out);

// Index (into `centers` rows) of the nearest center for each point; ties go
// to the lowest row.
std::vector<std::size_t> nearest(const Matrix& points, const Matrix& centers);

}  // namespace serial

namespace parallel {

void affine(const Layer& layer, const Matrix& in, Matrix& out);
void relu(const Matrix& pre, Matrix& out);
void accumulate_grad(const Matrix& delta, const Matrix& input, Layer& grad);
void backprop(const Layer& layer, const Matrix& delta, Matrix& out);
std::vector<std::size_t> nearest(const Matrix& points, const Matrix& centers);

}  // namespace parallel

// Threads OpenMP would use for a parallel region here (1 without OpenMP).
int max_threads();

}  // namespace kernels
}  // namespace sthfl
