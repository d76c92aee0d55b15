// SPDX-License-Identifier: Apache-2.0
//
// Minimal layer library with hand-written backward passes. Every layer caches
// what its backward pass needs during forward(); a backward() call must follow
// the matching forward() on the same layer object.
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dcssd/random.hpp"
#include "dcssd/tensor.hpp"

namespace dcssd::nn {

enum class Mode { Train, Inference };

template <typename T>
struct Param {
  Tensor<T> value;
  Tensor<T> grad;  // empty for buffers
  bool trainable = true;

  void zero_grad() { grad.fill(T{}); }
};

template <typename T>
struct NamedParam {
  std::string name;
  Param<T>* param;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

/// Plain matrix product helpers over row-major storage (Eigen-backed).
/// C(m,n) = alpha * op(A) * op(B) + beta * C
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, const T* b, T beta, T* c);

struct ConvGeometry {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
};

/// Unfolds a batch NCHW into a (C*k*k) x (N*Ho*Wo) column matrix.
template <typename T>
void im2col(const T* image, std::size_t batch, const ConvGeometry& g, T* col);

/// Adjoint of im2col; accumulates into image (which must be pre-zeroed by the caller if needed).
template <typename T>
void col2im(const T* col, std::size_t batch, const ConvGeometry& g, T* image);

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
         std::size_t pad, bool bias);

  Tensor<T> forward(const Tensor<T>& x);
  /// Returns dL/dx; accumulates parameter gradients when enabled.
  Tensor<T> backward(const Tensor<T>& dy, bool param_grads = true);

  void init_normal(Rng& rng, double stddev);
  void append_params(ParamList<T>& out, const std::string& prefix);

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }

 private:
  ConvGeometry geometry_for(const Tensor<T>& x) const;

  std::size_t in_ = 0, out_ = 0, kernel_ = 1, stride_ = 1, pad_ = 0;
  bool has_bias_ = false;
  Param<T> weight_;  // (out, in*k*k)
  Param<T> bias_;    // (out)
  Tensor<T> input_;
};

/// Fractionally-strided convolution; the adjoint of Conv2d with the same geometry.
template <typename T>
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                  std::size_t stride, std::size_t pad, bool bias);

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy, bool param_grads = true);

  void init_normal(Rng& rng, double stddev);
  void append_params(ParamList<T>& out, const std::string& prefix);

  std::size_t out_size(std::size_t in_size) const {
    return (in_size - 1) * stride_ + kernel_ - 2 * pad_;
  }

 private:
  std::size_t in_ = 0, out_ = 0, kernel_ = 1, stride_ = 1, pad_ = 0;
  bool has_bias_ = false;
  Param<T> weight_;  // (in, out*k*k)
  Param<T> bias_;
  Tensor<T> input_;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in_features, std::size_t out_features, bool bias);

  /// x is (N, in_features); any trailing shape is flattened.
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy, bool param_grads = true);

  void init_normal(Rng& rng, double stddev);
  void append_params(ParamList<T>& out, const std::string& prefix);

  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }

 private:
  std::size_t in_ = 0, out_ = 0;
  bool has_bias_ = false;
  Param<T> weight_;  // (out, in)
  Param<T> bias_;
  Tensor<T> input_;
  Shape input_shape_;
};

/// Batch normalization over axis 1 of an (N, C, ...) tensor.
template <typename T>
class BatchNorm {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels);

  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy, bool param_grads = true);

  void init_normal(Rng& rng, double stddev);
  void append_params(ParamList<T>& out, const std::string& prefix);

  Param<T>& running_mean() { return running_mean_; }
  Param<T>& running_var() { return running_var_; }

 private:
  std::size_t channels_ = 0;
  Param<T> gamma_, beta_;
  Param<T> running_mean_, running_var_;
  Mode last_mode_ = Mode::Inference;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

enum class Activation { ReLU, LeakyReLU, Tanh, Sigmoid };

template <typename T>
class ActivationLayer {
 public:
  explicit ActivationLayer(Activation kind = Activation::ReLU, T slope = T(0.2))
      : kind_(kind), slope_(slope) {}

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy) const;
  const Tensor<T>& output() const { return output_; }

 private:
  Activation kind_;
  T slope_;
  Tensor<T> input_;
  Tensor<T> output_;
};

struct AdamConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(ParamList<T> params, AdamConfig config);

  void step();
  void zero_grad();

  const AdamConfig& config() const { return config_; }
  long long steps() const { return steps_; }
  void set_steps(long long steps) { steps_ = steps; }
  /// First/second moment tensors, aligned with the trainable params.
  ParamList<T> state();

 private:
  ParamList<T> params_;
  AdamConfig config_;
  std::vector<Param<T>> first_, second_;
  long long steps_ = 0;
};

template <typename T>
void zero_grads(const ParamList<T>& params) {
  for (const auto& p : params) {
    if (p.param->trainable) p.param->zero_grad();
  }
}

}  // namespace dcssd::nn
