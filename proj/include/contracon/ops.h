#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "contracon/random.h"
#include "contracon/tensor.h"

namespace contracon {

enum class Activation { gelu, sigmoid, relu };

Activation parse_activation(std::string_view name);

// Elementwise binary ops. `b` may either match `a` exactly or match a
// trailing suffix of `a`'s shape, in which case it is broadcast over the
// leading axes (bias vectors, per-feature scales).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
// a * s where s holds a single value; differentiable in both.
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, const Tensor<T>& s);

template <typename T>
Tensor<T> sum(const Tensor<T>& a);
template <typename T>
Tensor<T> mean(const Tensor<T>& a);

// [m×k]·[k×n], [B×m×k]·[k×n] (shared right operand) or [B×m×k]·[B×k×n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// Swaps the last two axes of a rank-2 or rank-3 tensor.
template <typename T>
Tensor<T> transpose(const Tensor<T>& a);
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T>
Tensor<T> concat_last(std::span<const Tensor<T>> parts);

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis = -1);

// Normalizes over the last axis with population variance.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps);

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind);
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) { return activation(x, Activation::gelu); }
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) { return activation(x, Activation::sigmoid); }
template <typename T>
Tensor<T> relu(const Tensor<T>& x) { return activation(x, Activation::relu); }

// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

// Single-channel cross-correlation of an r×c matrix with an odd k×k kernel,
// stride 1, zero padding (k-1)/2; the output has the input's shape.
template <typename T>
Tensor<T> conv2d_same(const Tensor<T>& input, const Tensor<T>& kernel);

// Multi-channel convolution over [B×C×H×W] with weight [O×C×k×k] and bias [O].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding);

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, std::size_t kernel, std::size_t stride, std::size_t padding);

// Inverted dropout: zeroes entries with probability p and scales survivors
// by 1/(1-p).
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng);

// Stochastic depth: drops the whole sample (axis 0 slice) with probability p.
template <typename T>
Tensor<T> drop_path(const Tensor<T>& x, double p, Rng& rng);

// Number of random masks drawn by dropout/drop_path on this thread. Lets the
// gradient checker reject stochastic functions.
std::uint64_t stochastic_draws();

// Output extent of a strided window along one axis; 0 when the window does
// not fit.
std::size_t window_output_extent(std::size_t input, std::size_t kernel, std::size_t stride, std::size_t padding);

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
    return add(a, b);
}
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
    return sub(a, b);
}
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) {
    return mul(a, b);
}

}  // namespace contracon
