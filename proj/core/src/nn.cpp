// SPDX-License-Identifier: Apache-2.0
#include "dcssd/nn.hpp"

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>

namespace dcssd::nn {

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, const T* b, T beta, T* c) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  Eigen::Map<Mat> C(c, M, N);
  const CMap A(a, trans_a ? K : M, trans_a ? M : K);
  const CMap B(b, trans_b ? N : K, trans_b ? K : N);

  auto apply = [&](const auto& lhs, const auto& rhs) {
    if (beta == T{}) {
      C.noalias() = alpha * (lhs * rhs);
    } else {
      if (beta != T{1}) C *= beta;
      C.noalias() += alpha * (lhs * rhs);
    }
  };
  if (!trans_a && !trans_b) apply(A, B);
  else if (trans_a && !trans_b) apply(A.transpose(), B);
  else if (!trans_a && trans_b) apply(A, B.transpose());
  else apply(A.transpose(), B.transpose());
}

template <typename T>
void im2col(const T* image, std::size_t batch, const ConvGeometry& g, T* col) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const std::size_t plane = oh * ow;
  const std::size_t cols = batch * plane;
  const auto H = static_cast<long>(g.height), W = static_cast<long>(g.width);
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        T* row = col + ((c * g.kernel + ki) * g.kernel + kj) * cols;
        for (std::size_t n = 0; n < batch; ++n) {
          const T* src = image + (n * g.channels + c) * g.height * g.width;
          T* dst = row + n * plane;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
            if (iy < 0 || iy >= H) {
              std::fill(dst + oy * ow, dst + (oy + 1) * ow, T{});
              continue;
            }
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
              dst[oy * ow + ox] = (ix < 0 || ix >= W) ? T{} : src[iy * W + ix];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, std::size_t batch, const ConvGeometry& g, T* image) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const std::size_t plane = oh * ow;
  const std::size_t cols = batch * plane;
  const auto H = static_cast<long>(g.height), W = static_cast<long>(g.width);
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        const T* row = col + ((c * g.kernel + ki) * g.kernel + kj) * cols;
        for (std::size_t n = 0; n < batch; ++n) {
          T* dst = image + (n * g.channels + c) * g.height * g.width;
          const T* src = row + n * plane;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
            if (iy < 0 || iy >= H) continue;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
              if (ix >= 0 && ix < W) dst[iy * W + ix] += src[oy * ow + ox];
            }
          }
        }
      }
    }
  }
}

namespace {

// (N, C, P) <-> (C, N*P)
template <typename T>
void batch_to_channel_major(const T* in, std::size_t n, std::size_t c, std::size_t p, T* out) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j)
      std::copy_n(in + (i * c + j) * p, p, out + j * n * p + i * p);
}

template <typename T>
void channel_major_to_batch(const T* in, std::size_t n, std::size_t c, std::size_t p, T* out) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j)
      std::copy_n(in + j * n * p + i * p, p, out + (i * c + j) * p);
}

template <typename T>
void require_rank4(const Tensor<T>& x, std::size_t channels, const char* who) {
  if (x.rank() != 4 || x.dim(1) != channels) {
    throw std::invalid_argument(std::string(who) + ": expected (N," + std::to_string(channels) +
                                ",H,W) input, got " + shape_string(x.shape()));
  }
}

template <typename T>
Param<T> make_param(Shape shape, bool trainable = true) {
  Param<T> p;
  p.value = Tensor<T>(shape);
  if (trainable) p.grad = Tensor<T>(shape);
  p.trainable = trainable;
  return p;
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                  std::size_t stride, std::size_t pad, bool bias)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), pad_(pad),
      has_bias_(bias) {
  weight_ = make_param<T>({out_, in_ * kernel_ * kernel_});
  if (has_bias_) bias_ = make_param<T>({out_});
}

template <typename T>
ConvGeometry Conv2d<T>::geometry_for(const Tensor<T>& x) const {
  return ConvGeometry{in_, x.dim(2), x.dim(3), kernel_, stride_, pad_};
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) {
  require_rank4(x, in_, "Conv2d");
  input_ = x;
  const auto g = geometry_for(x);
  const std::size_t n = x.dim(0), p = g.out_height() * g.out_width(), k = in_ * kernel_ * kernel_;
  std::vector<T> col(k * n * p);
  im2col(x.data(), n, g, col.data());
  std::vector<T> ymat(out_ * n * p);
  gemm<T>(false, false, out_, n * p, k, T{1}, weight_.value.data(), col.data(), T{}, ymat.data());
  Tensor<T> y({n, out_, g.out_height(), g.out_width()});
  channel_major_to_batch(ymat.data(), n, out_, p, y.data());
  if (has_bias_) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < out_; ++o) {
        T* dst = y.data() + (i * out_ + o) * p;
        for (std::size_t j = 0; j < p; ++j) dst[j] += bias_.value[o];
      }
  }
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy, bool param_grads) {
  const auto g = geometry_for(input_);
  const std::size_t n = input_.dim(0), p = g.out_height() * g.out_width(),
                    k = in_ * kernel_ * kernel_;
  std::vector<T> dymat(out_ * n * p);
  batch_to_channel_major(dy.data(), n, out_, p, dymat.data());
  std::vector<T> col(k * n * p);
  if (param_grads) {
    im2col(input_.data(), n, g, col.data());
    gemm<T>(false, true, out_, k, n * p, T{1}, dymat.data(), col.data(), T{1},
            weight_.grad.data());
    if (has_bias_) {
      for (std::size_t o = 0; o < out_; ++o) {
        T s{};
        for (std::size_t j = 0; j < n * p; ++j) s += dymat[o * n * p + j];
        bias_.grad[o] += s;
      }
    }
  }
  gemm<T>(true, false, k, n * p, out_, T{1}, weight_.value.data(), dymat.data(), T{}, col.data());
  Tensor<T> dx(input_.shape());
  col2im(col.data(), n, g, dx.data());
  return dx;
}

template <typename T>
void Conv2d<T>::init_normal(Rng& rng, double stddev) {
  fill_normal(weight_.value.span(), rng, 0.0, stddev);
  if (has_bias_) bias_.value.fill(T{});
}

template <typename T>
void Conv2d<T>::append_params(ParamList<T>& out, const std::string& prefix) {
  out.push_back({prefix + ".weight", &weight_});
  if (has_bias_) out.push_back({prefix + ".bias", &bias_});
}

// ------------------------------------------------------- ConvTranspose2d

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(std::size_t in_channels, std::size_t out_channels,
                                    std::size_t kernel, std::size_t stride, std::size_t pad,
                                    bool bias)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), pad_(pad),
      has_bias_(bias) {
  weight_ = make_param<T>({in_, out_ * kernel_ * kernel_});
  if (has_bias_) bias_ = make_param<T>({out_});
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::forward(const Tensor<T>& x) {
  require_rank4(x, in_, "ConvTranspose2d");
  input_ = x;
  const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3), p = h * w;
  const ConvGeometry g{out_, out_size(h), out_size(w), kernel_, stride_, pad_};
  const std::size_t k = out_ * kernel_ * kernel_;
  std::vector<T> xmat(in_ * n * p);
  batch_to_channel_major(x.data(), n, in_, p, xmat.data());
  std::vector<T> col(k * n * p);
  gemm<T>(true, false, k, n * p, in_, T{1}, weight_.value.data(), xmat.data(), T{}, col.data());
  Tensor<T> y({n, out_, g.height, g.width});
  col2im(col.data(), n, g, y.data());
  if (has_bias_) {
    const std::size_t q = g.height * g.width;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < out_; ++o) {
        T* dst = y.data() + (i * out_ + o) * q;
        for (std::size_t j = 0; j < q; ++j) dst[j] += bias_.value[o];
      }
  }
  return y;
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::backward(const Tensor<T>& dy, bool param_grads) {
  const std::size_t n = input_.dim(0), h = input_.dim(2), w = input_.dim(3), p = h * w;
  const ConvGeometry g{out_, out_size(h), out_size(w), kernel_, stride_, pad_};
  const std::size_t k = out_ * kernel_ * kernel_;
  std::vector<T> col(k * n * p);
  im2col(dy.data(), n, g, col.data());
  if (param_grads) {
    std::vector<T> xmat(in_ * n * p);
    batch_to_channel_major(input_.data(), n, in_, p, xmat.data());
    gemm<T>(false, true, in_, k, n * p, T{1}, xmat.data(), col.data(), T{1},
            weight_.grad.data());
    if (has_bias_) {
      const std::size_t q = g.height * g.width;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out_; ++o) {
          const T* src = dy.data() + (i * out_ + o) * q;
          T s{};
          for (std::size_t j = 0; j < q; ++j) s += src[j];
          bias_.grad[o] += s;
        }
    }
  }
  std::vector<T> dxmat(in_ * n * p);
  gemm<T>(false, false, in_, n * p, k, T{1}, weight_.value.data(), col.data(), T{}, dxmat.data());
  Tensor<T> dx(input_.shape());
  channel_major_to_batch(dxmat.data(), n, in_, p, dx.data());
  return dx;
}

template <typename T>
void ConvTranspose2d<T>::init_normal(Rng& rng, double stddev) {
  fill_normal(weight_.value.span(), rng, 0.0, stddev);
  if (has_bias_) bias_.value.fill(T{});
}

template <typename T>
void ConvTranspose2d<T>::append_params(ParamList<T>& out, const std::string& prefix) {
  out.push_back({prefix + ".weight", &weight_});
  if (has_bias_) out.push_back({prefix + ".bias", &bias_});
}

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(std::size_t in_features, std::size_t out_features, bool bias)
    : in_(in_features), out_(out_features), has_bias_(bias) {
  weight_ = make_param<T>({out_, in_});
  if (has_bias_) bias_ = make_param<T>({out_});
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) {
  const std::size_t n = x.dim(0);
  if (x.size() != n * in_) {
    throw std::invalid_argument("Linear: expected " + std::to_string(in_) +
                                " features per row, got shape " + shape_string(x.shape()));
  }
  input_shape_ = x.shape();
  input_ = x;
  Tensor<T> y({n, out_});
  gemm<T>(false, true, n, out_, in_, T{1}, x.data(), weight_.value.data(), T{}, y.data());
  if (has_bias_) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < out_; ++o) y[i * out_ + o] += bias_.value[o];
  }
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& dy, bool param_grads) {
  const std::size_t n = input_shape_.at(0);
  if (param_grads) {
    gemm<T>(true, false, out_, in_, n, T{1}, dy.data(), input_.data(), T{1}, weight_.grad.data());
    if (has_bias_) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out_; ++o) bias_.grad[o] += dy[i * out_ + o];
    }
  }
  Tensor<T> dx(input_shape_);
  gemm<T>(false, false, n, in_, out_, T{1}, dy.data(), weight_.value.data(), T{}, dx.data());
  return dx;
}

template <typename T>
void Linear<T>::init_normal(Rng& rng, double stddev) {
  fill_normal(weight_.value.span(), rng, 0.0, stddev);
  if (has_bias_) bias_.value.fill(T{});
}

template <typename T>
void Linear<T>::append_params(ParamList<T>& out, const std::string& prefix) {
  out.push_back({prefix + ".weight", &weight_});
  if (has_bias_) out.push_back({prefix + ".bias", &bias_});
}

// ------------------------------------------------------------- BatchNorm

template <typename T>
BatchNorm<T>::BatchNorm(std::size_t channels) : channels_(channels) {
  gamma_ = make_param<T>({channels_});
  beta_ = make_param<T>({channels_});
  running_mean_ = make_param<T>({channels_}, false);
  running_var_ = make_param<T>({channels_}, false);
  gamma_.value.fill(T{1});
  running_var_.value.fill(T{1});
}

template <typename T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& x, Mode mode) {
  if (x.rank() < 2 || x.dim(1) != channels_) {
    throw std::invalid_argument("BatchNorm: expected (N," + std::to_string(channels_) +
                                ",...) input, got " + shape_string(x.shape()));
  }
  const std::size_t n = x.dim(0);
  const std::size_t s = x.size() / (n * channels_);
  const std::size_t m = n * s;
  last_mode_ = mode;
  xhat_ = Tensor<T>(x.shape());
  inv_std_.assign(channels_, T{});
  Tensor<T> y(x.shape());
  for (std::size_t c = 0; c < channels_; ++c) {
    double mean, var;
    if (mode == Mode::Train) {
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* src = x.data() + (i * channels_ + c) * s;
        for (std::size_t j = 0; j < s; ++j) sum += src[j];
      }
      mean = sum / static_cast<double>(m);
      double sq = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* src = x.data() + (i * channels_ + c) * s;
        for (std::size_t j = 0; j < s; ++j) {
          const double d = src[j] - mean;
          sq += d * d;
        }
      }
      var = sq / static_cast<double>(m);
      const double unbiased = m > 1 ? sq / static_cast<double>(m - 1) : var;
      running_mean_.value[c] =
          static_cast<T>((1.0 - kMomentum) * running_mean_.value[c] + kMomentum * mean);
      running_var_.value[c] =
          static_cast<T>((1.0 - kMomentum) * running_var_.value[c] + kMomentum * unbiased);
    } else {
      mean = running_mean_.value[c];
      var = running_var_.value[c];
    }
    const T inv = static_cast<T>(1.0 / std::sqrt(var + kEps));
    inv_std_[c] = inv;
    const T g = gamma_.value[c], b = beta_.value[c], mu = static_cast<T>(mean);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * channels_ + c) * s;
      for (std::size_t j = 0; j < s; ++j) {
        const T xh = (x[off + j] - mu) * inv;
        xhat_[off + j] = xh;
        y[off + j] = g * xh + b;
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm<T>::backward(const Tensor<T>& dy, bool param_grads) {
  const std::size_t n = dy.dim(0);
  const std::size_t s = dy.size() / (n * channels_);
  const double m = static_cast<double>(n * s);
  Tensor<T> dx(dy.shape());
  for (std::size_t c = 0; c < channels_; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * channels_ + c) * s;
      for (std::size_t j = 0; j < s; ++j) {
        sum_dy += dy[off + j];
        sum_dy_xhat += static_cast<double>(dy[off + j]) * xhat_[off + j];
      }
    }
    if (param_grads) {
      gamma_.grad[c] += static_cast<T>(sum_dy_xhat);
      beta_.grad[c] += static_cast<T>(sum_dy);
    }
    const T g = gamma_.value[c];
    const T inv = inv_std_[c];
    if (last_mode_ == Mode::Train) {
      const T mean_dy = static_cast<T>(sum_dy / m);
      const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / m);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t off = (i * channels_ + c) * s;
        for (std::size_t j = 0; j < s; ++j) {
          dx[off + j] = g * inv * (dy[off + j] - mean_dy - xhat_[off + j] * mean_dy_xhat);
        }
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t off = (i * channels_ + c) * s;
        for (std::size_t j = 0; j < s; ++j) dx[off + j] = g * inv * dy[off + j];
      }
    }
  }
  return dx;
}

template <typename T>
void BatchNorm<T>::init_normal(Rng& rng, double stddev) {
  fill_normal(gamma_.value.span(), rng, 1.0, stddev);
  beta_.value.fill(T{});
  running_mean_.value.fill(T{});
  running_var_.value.fill(T{1});
}

template <typename T>
void BatchNorm<T>::append_params(ParamList<T>& out, const std::string& prefix) {
  out.push_back({prefix + ".gamma", &gamma_});
  out.push_back({prefix + ".beta", &beta_});
  out.push_back({prefix + ".running_mean", &running_mean_});
  out.push_back({prefix + ".running_var", &running_var_});
}

// ------------------------------------------------------------ Activation

template <typename T>
Tensor<T> ActivationLayer<T>::forward(const Tensor<T>& x) {
  input_ = x;
  output_ = Tensor<T>(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    switch (kind_) {
      case Activation::ReLU: output_[i] = v > T{} ? v : T{}; break;
      case Activation::LeakyReLU: output_[i] = v > T{} ? v : slope_ * v; break;
      case Activation::Tanh: output_[i] = std::tanh(v); break;
      case Activation::Sigmoid:
        if (v >= T{}) {
          output_[i] = T{1} / (T{1} + std::exp(-v));
        } else {
          const T e = std::exp(v);
          output_[i] = e / (T{1} + e);
        }
        break;
    }
  }
  return output_;
}

template <typename T>
Tensor<T> ActivationLayer<T>::backward(const Tensor<T>& dy) const {
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) {
    const T y = output_[i];
    switch (kind_) {
      case Activation::ReLU: dx[i] = input_[i] > T{} ? dy[i] : T{}; break;
      case Activation::LeakyReLU: dx[i] = input_[i] > T{} ? dy[i] : slope_ * dy[i]; break;
      case Activation::Tanh: dx[i] = dy[i] * (T{1} - y * y); break;
      case Activation::Sigmoid: dx[i] = dy[i] * y * (T{1} - y); break;
    }
  }
  return dx;
}

// ------------------------------------------------------------------ Adam

template <typename T>
Adam<T>::Adam(ParamList<T> params, AdamConfig config) : config_(config) {
  for (auto& p : params) {
    if (!p.param->trainable) continue;
    params_.push_back(p);
    first_.push_back(make_param<T>(p.param->value.shape(), false));
    second_.push_back(make_param<T>(p.param->value.shape(), false));
  }
}

template <typename T>
void Adam<T>::step() {
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const T lr = static_cast<T>(config_.learning_rate);
  const T eps = static_cast<T>(config_.eps);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = *params_[k].param;
    auto& m = first_[k].value;
    auto& v = second_[k].value;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const T g = p.grad[i];
      m[i] = static_cast<T>(b1) * m[i] + static_cast<T>(1.0 - b1) * g;
      v[i] = static_cast<T>(b2) * v[i] + static_cast<T>(1.0 - b2) * g * g;
      const T mhat = m[i] / static_cast<T>(c1);
      const T vhat = v[i] / static_cast<T>(c2);
      p.value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  zero_grads(params_);
}

template <typename T>
ParamList<T> Adam<T>::state() {
  ParamList<T> out;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    out.push_back({"adam.m." + params_[k].name, &first_[k]});
    out.push_back({"adam.v." + params_[k].name, &second_[k]});
  }
  return out;
}

#define DCSSD_INSTANTIATE(T)                                                               \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, T, const T*,    \
                        const T*, T, T*);                                                  \
  template void im2col<T>(const T*, std::size_t, const ConvGeometry&, T*);                 \
  template void col2im<T>(const T*, std::size_t, const ConvGeometry&, T*);                 \
  template class Conv2d<T>;                                                                \
  template class ConvTranspose2d<T>;                                                       \
  template class Linear<T>;                                                                \
  template class BatchNorm<T>;                                                             \
  template class ActivationLayer<T>;                                                       \
  template class Adam<T>;

DCSSD_INSTANTIATE(float)
DCSSD_INSTANTIATE(double)

#undef DCSSD_INSTANTIATE

}  // namespace dcssd::nn
