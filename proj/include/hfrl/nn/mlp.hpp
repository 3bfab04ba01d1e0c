#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hfrl::nn {

enum class Activation { tanh, relu };

inline std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

// Fully connected network. Hidden layers use `activation`, the output layer
// is linear. Parameters are stored per layer as a row-major weight matrix
// (out x in) followed by the bias vector.
struct MlpShape {
  std::vector<std::size_t> sizes;  // input, hidden..., output
  Activation activation = Activation::tanh;

  std::size_t layers() const { return sizes.size() - 1; }
  std::size_t input_dim() const { return sizes.front(); }
  std::size_t output_dim() const { return sizes.back(); }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) n += sizes[l + 1] * sizes[l] + sizes[l + 1];
    return n;
  }

  // Offset of layer l's weight block.
  std::size_t offset(std::size_t l) const {
    std::size_t n = 0;
    for (std::size_t k = 0; k < l; ++k) n += sizes[k + 1] * sizes[k] + sizes[k + 1];
    return n;
  }

  bool operator==(const MlpShape&) const = default;
};

struct MlpCache {
  std::vector<std::vector<double>> act;  // act[0] = input, act[l+1] = output of layer l
};

inline double activate(Activation a, double z) { return a == Activation::tanh ? std::tanh(z) : (z > 0.0 ? z : 0.0); }

// Derivative expressed through the activation output y = f(z).
inline double activate_grad(Activation a, double y) {
  return a == Activation::tanh ? 1.0 - y * y : (y > 0.0 ? 1.0 : 0.0);
}

inline std::span<const double> forward(const MlpShape& shape, std::span<const double> params,
                                       std::span<const double> x, MlpCache& cache) {
  if (x.size() != shape.input_dim())
    throw std::invalid_argument("mlp: input dimension " + std::to_string(x.size()) + ", expected " +
                                std::to_string(shape.input_dim()));
  if (params.size() != shape.param_count()) throw std::invalid_argument("mlp: parameter count mismatch");
  const std::size_t L = shape.layers();
  cache.act.resize(L + 1);
  cache.act[0].assign(x.begin(), x.end());
  std::size_t off = 0;
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t in = shape.sizes[l], out = shape.sizes[l + 1];
    const double* W = params.data() + off;
    const double* b = W + out * in;
    const auto& prev = cache.act[l];
    auto& cur = cache.act[l + 1];
    cur.resize(out);
    const bool hidden = l + 1 < L;
    for (std::size_t i = 0; i < out; ++i) {
      double z = b[i];
      const double* row = W + i * in;
      for (std::size_t j = 0; j < in; ++j) z += row[j] * prev[j];
      cur[i] = hidden ? activate(shape.activation, z) : z;
    }
    off += out * in + out;
  }
  return cache.act[L];
}

// Accumulates d(loss)/d(params) into grad given d(loss)/d(output).
inline void backward(const MlpShape& shape, std::span<const double> params, const MlpCache& cache,
                     std::span<const double> grad_out, std::span<double> grad) {
  const std::size_t L = shape.layers();
  if (grad_out.size() != shape.output_dim()) throw std::invalid_argument("mlp: output gradient size mismatch");
  if (grad.size() != shape.param_count()) throw std::invalid_argument("mlp: gradient buffer size mismatch");
  std::vector<double> delta(grad_out.begin(), grad_out.end());
  std::vector<double> prev_delta;
  for (std::size_t l = L; l-- > 0;) {
    const std::size_t in = shape.sizes[l], out = shape.sizes[l + 1];
    const std::size_t off = shape.offset(l);
    const double* W = params.data() + off;
    double* gW = grad.data() + off;
    double* gb = gW + out * in;
    const auto& x = cache.act[l];
    for (std::size_t i = 0; i < out; ++i) {
      const double d = delta[i];
      if (d == 0.0) continue;
      double* grow = gW + i * in;
      for (std::size_t j = 0; j < in; ++j) grow[j] += d * x[j];
      gb[i] += d;
    }
    if (l == 0) break;
    prev_delta.assign(in, 0.0);
    for (std::size_t i = 0; i < out; ++i) {
      const double d = delta[i];
      if (d == 0.0) continue;
      const double* row = W + i * in;
      for (std::size_t j = 0; j < in; ++j) prev_delta[j] += d * row[j];
    }
    for (std::size_t j = 0; j < in; ++j) prev_delta[j] *= activate_grad(shape.activation, x[j]);
    delta.swap(prev_delta);
  }
}

}  // namespace hfrl::nn
