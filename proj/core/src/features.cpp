// SPDX-License-Identifier: Apache-2.0
#include "dcssd/features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Dense>

#include "dcssd/errors.hpp"
#include "dcssd/random.hpp"

namespace dcssd {

namespace {

using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VecD = Eigen::VectorXd;
using MapF = Eigen::Map<MatF>;

}  // namespace

std::size_t feature_dim(const GanArchitecture& arch) {
  std::size_t channels = 0;
  for (std::size_t c : arch.discriminator_channels) channels += c;
  return kPoolGrid * kPoolGrid * channels;
}

void max_pool_grid(const TensorF& activation, float* out, std::size_t stride, std::size_t column) {
  if (activation.rank() != 4) throw std::invalid_argument("max_pool_grid: expected (N, C, H, W)");
  const std::size_t n = activation.dim(0), c = activation.dim(1), h = activation.dim(2),
                    w = activation.dim(3);
  if (h % kPoolGrid != 0 || w % kPoolGrid != 0) {
    throw std::invalid_argument("max_pool_grid: spatial size not divisible by the grid");
  }
  const std::size_t ph = h / kPoolGrid, pw = w / kPoolGrid;
  for (std::size_t b = 0; b < n; ++b) {
    float* row = out + b * stride + column;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const float* plane = activation.data() + (b * c + ch) * h * w;
      for (std::size_t i = 0; i < kPoolGrid; ++i) {
        for (std::size_t j = 0; j < kPoolGrid; ++j) {
          float m = -std::numeric_limits<float>::infinity();
          for (std::size_t y = i * ph; y < (i + 1) * ph; ++y)
            for (std::size_t x = j * pw; x < (j + 1) * pw; ++x) m = std::max(m, plane[y * w + x]);
          row[(ch * kPoolGrid + i) * kPoolGrid + j] = m;
        }
      }
    }
  }
}

TensorF extract_features_batch(DiscriminatorNet& d, std::span<const ImageChip> chips,
                               std::size_t chunk) {
  if (chunk == 0) throw std::invalid_argument("extract_features_batch: chunk must be positive");
  const std::size_t dim = feature_dim(d.architecture());
  TensorF out({chips.size(), dim});
  for (std::size_t start = 0; start < chips.size(); start += chunk) {
    const std::size_t count = std::min(chunk, chips.size() - start);
    TensorF batch({count, ImageChip::kChannels, kChipSide, kChipSide});
    for (std::size_t i = 0; i < count; ++i) {
      const ImageChip& chip = chips[start + i];
      if (chip.height() != kChipSide || chip.width() != kChipSide) {
        throw std::invalid_argument("extract_features: chips must be 3x32x32");
      }
      std::copy(chip.tensor().begin(), chip.tensor().end(), batch.slab(i).begin());
    }
    d.forward(batch, nn::Mode::Inference);
    std::size_t column = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      const TensorF& act = d.block_activation(k);
      max_pool_grid(act, out.data() + start * dim, dim, column);
      column += act.dim(1) * kPoolGrid * kPoolGrid;
    }
  }
  return out;
}

std::vector<float> extract_features(DiscriminatorNet& d, const ImageChip& chip) {
  const TensorF f = extract_features_batch(d, std::span<const ImageChip>(&chip, 1));
  return f.storage();
}

std::vector<double> LinearClassifier::logits(std::span<const float> features) const {
  if (features.size() != dim) {
    throw std::invalid_argument("LinearClassifier: feature length " +
                                std::to_string(features.size()) + " != " + std::to_string(dim));
  }
  std::vector<double> z(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    z[i] = (static_cast<double>(features[i]) - feature_mean[i]) / feature_std[i];
  }
  std::vector<double> out(num_classes);
  for (std::size_t k = 0; k < num_classes; ++k) {
    const double* w = weights.data() + k * dim;
    double acc = bias[k];
    for (std::size_t i = 0; i < dim; ++i) acc += w[i] * z[i];
    out[k] = acc;
  }
  return out;
}

std::vector<double> LinearClassifier::probabilities(std::span<const float> features) const {
  std::vector<double> p = logits(features);
  const double m = *std::max_element(p.begin(), p.end());
  double sum = 0.0;
  for (double& v : p) sum += (v = std::exp(v - m));
  for (double& v : p) v /= sum;
  return p;
}

namespace {

// Cross-entropy on logits; fills R = softmax - onehot.
double cross_entropy(const MatD& logits, std::span<const int> labels, MatD& residual) {
  const std::size_t n = static_cast<std::size_t>(logits.rows());
  residual.resize(logits.rows(), logits.cols());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = logits.row(static_cast<Eigen::Index>(i));
    const double m = row.maxCoeff();
    const Eigen::RowVectorXd e = (row.array() - m).exp();
    const double s = e.sum();
    loss += m + std::log(s) - row(labels[i]);
    residual.row(static_cast<Eigen::Index>(i)) = e / s;
    residual(static_cast<Eigen::Index>(i), labels[i]) -= 1.0;
  }
  return loss / static_cast<double>(n);
}

// Weight space spanned by {W0} and the rows of X: W = coef * W0 + A^T X. Every GD
// iterate from W0 stays in this space, so only N x C coefficients are tracked.
// K = X X^T is kept in float like X itself; each iteration streams it once.
class GramBackend {
 public:
  struct Rep {
    double coef = 0.0;
    MatD a;   // N x C
    MatD ka;  // K a, kept in step with a
    VecD b;
  };

  GramBackend(const MapF& x, const MatD& w0, double lambda) : lambda_(lambda) {
    const Eigen::Index n = x.rows();
    k_ = MatF::Zero(n, n);
    constexpr Eigen::Index kBlock = 512;
    for (Eigen::Index j = 0; j < x.cols(); j += kBlock) {
      const Eigen::Index w = std::min(kBlock, x.cols() - j);
      const Eigen::MatrixXf block = x.middleCols(j, w);
      k_.selfadjointView<Eigen::Lower>().rankUpdate(block);
    }
    k_.triangularView<Eigen::StrictlyUpper>() = k_.transpose();
    p0_ = (x * w0.transpose().cast<float>()).cast<double>();
    w0sq_ = w0.squaredNorm();
  }

  Rep initial(std::size_t classes) const {
    const Eigen::Index n = k_.rows(), c = static_cast<Eigen::Index>(classes);
    return {1.0, MatD::Zero(n, c), MatD::Zero(n, c), VecD::Zero(c)};
  }
  MatD logits(const Rep& s) const {
    MatD z = s.coef * p0_ + s.ka;
    z.rowwise() += s.b.transpose();
    return z;
  }
  Rep gradient(const Rep& s, const MatD& residual) const {
    const double inv_n = 1.0 / static_cast<double>(residual.rows());
    Rep g;
    g.coef = 2.0 * lambda_ * s.coef;
    g.a = inv_n * residual + 2.0 * lambda_ * s.a;
    g.ka = inv_n * (k_ * residual.cast<float>()).cast<double>() + 2.0 * lambda_ * s.ka;
    g.b = inv_n * residual.colwise().sum().transpose();
    return g;
  }
  static Rep step(const Rep& s, double eta, const Rep& g) {
    return {s.coef - eta * g.coef, s.a - eta * g.a, s.ka - eta * g.ka, s.b - eta * g.b};
  }
  double inner(const Rep& u, const Rep& v) const {
    return u.coef * v.coef * w0sq_ + u.coef * p0_.cwiseProduct(v.a).sum() +
           v.coef * p0_.cwiseProduct(u.a).sum() + u.a.cwiseProduct(v.ka).sum() + u.b.dot(v.b);
  }
  double weight_sq(const Rep& s) const { return inner(s, s) - s.b.squaredNorm(); }
  MatD weights(const Rep& s, const MapF& x, const MatD& w0) const {
    MatD w = (s.a.transpose().cast<float>() * x).cast<double>();
    w += s.coef * w0;
    return w;
  }

 private:
  double lambda_;
  MatF k_;
  MatD p0_;
  double w0sq_ = 0.0;
};

class PrimalBackend {
 public:
  struct Rep {
    MatD w;  // C x D
    VecD b;
  };

  PrimalBackend(const MapF& x, const MatD& w0, double lambda) : x_(x), w0_(w0), lambda_(lambda) {}

  Rep initial(std::size_t classes) const {
    return {w0_, VecD::Zero(static_cast<Eigen::Index>(classes))};
  }
  MatD logits(const Rep& s) const {
    MatD z = (x_ * s.w.transpose().cast<float>()).cast<double>();
    z.rowwise() += s.b.transpose();
    return z;
  }
  Rep gradient(const Rep& s, const MatD& residual) const {
    const double inv_n = 1.0 / static_cast<double>(residual.rows());
    const MatF rt = residual.transpose().cast<float>();
    Rep g;
    g.w = inv_n * (rt * x_).cast<double>() + 2.0 * lambda_ * s.w;
    g.b = inv_n * residual.colwise().sum().transpose();
    return g;
  }
  static Rep step(const Rep& s, double eta, const Rep& g) {
    return {s.w - eta * g.w, s.b - eta * g.b};
  }
  double inner(const Rep& u, const Rep& v) const {
    return u.w.cwiseProduct(v.w).sum() + u.b.dot(v.b);
  }
  double weight_sq(const Rep& s) const { return s.w.squaredNorm(); }
  MatD weights(const Rep& s, const MapF&, const MatD&) const { return s.w; }

 private:
  const MapF& x_;
  const MatD& w0_;
  double lambda_;
};

struct DescentOutcome {
  MatD weights;
  VecD bias;
  std::vector<double> trace;
  std::size_t iterations = 0;
  double gradient_norm = 0.0;
  bool converged = false;
};

template <typename Backend>
DescentOutcome descend(const Backend& be, const MapF& x, const MatD& w0,
                       std::span<const int> labels, const LinearTrainConfig& cfg) {
  constexpr double kArmijo = 1e-4;
  constexpr int kMaxHalvings = 60;
  const double lambda = cfg.l2_lambda;
  auto objective = [&](const auto& s, MatD& residual) {
    const double j = cross_entropy(be.logits(s), labels, residual) + lambda * be.weight_sq(s);
    if (!std::isfinite(j)) throw NumericalError("train_linear: objective is not finite");
    return j;
  };

  DescentOutcome out;
  auto s = be.initial(cfg.num_classes);
  MatD residual;
  double j = objective(s, residual);
  auto g = be.gradient(s, residual);
  double gg = be.inner(g, g);
  out.trace.push_back(j);
  double eta = 1.0;
  while (true) {
    out.gradient_norm = std::sqrt(std::max(0.0, gg));
    if (out.gradient_norm <= cfg.gradient_tolerance) {
      out.converged = true;
      break;
    }
    if (out.iterations >= cfg.max_iterations) break;

    bool accepted = false;
    decltype(s) next;
    MatD next_residual;
    double next_j = j;
    for (int h = 0; h < kMaxHalvings && !accepted; ++h) {
      next = Backend::step(s, eta, g);
      next_j = objective(next, next_residual);
      if (next_j <= j - kArmijo * eta * gg) {
        accepted = true;
      } else {
        eta *= 0.5;
      }
    }
    if (!accepted) break;  // step collapsed below resolution

    auto next_g = be.gradient(next, next_residual);
    const double cross = be.inner(g, next_g);
    const double next_gg = be.inner(next_g, next_g);
    // Barzilai-Borwein trial step: |s|^2 / s.y with s = -eta g, y = g' - g.
    const double curvature = gg - cross;
    const double bb = curvature > 0.0 ? eta * gg / curvature : 2.0 * eta;
    eta = std::clamp(bb, 1e-12, 1e12);

    s = std::move(next);
    g = std::move(next_g);
    gg = next_gg;
    j = next_j;
    out.trace.push_back(j);
    ++out.iterations;
  }
  out.weights = be.weights(s, x, w0);
  out.bias = s.b;
  return out;
}

}  // namespace

LinearTrainResult train_linear(TensorF features, std::span<const int> labels,
                               const LinearTrainConfig& cfg) {
  if (features.rank() != 2 || features.dim(0) == 0 || features.dim(1) == 0) {
    throw std::invalid_argument("train_linear: features must be a non-empty (N, D) matrix");
  }
  const std::size_t n = features.dim(0), dim = features.dim(1), classes = cfg.num_classes;
  if (labels.size() != n) throw std::invalid_argument("train_linear: label count mismatch");
  if (classes < 2) throw std::invalid_argument("train_linear: need at least two classes");
  if (!(cfg.l2_lambda > 0.0)) throw std::invalid_argument("train_linear: l2_lambda must be positive");
  std::vector<std::size_t> counts(classes, 0);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw std::invalid_argument("train_linear: label " + std::to_string(y) + " out of range");
    }
    ++counts[static_cast<std::size_t>(y)];
  }
  if (std::find(counts.begin(), counts.end(), 0) != counts.end()) {
    throw std::invalid_argument("train_linear: every class must be present");
  }

  LinearClassifier clf;
  clf.num_classes = classes;
  clf.dim = dim;
  clf.l2_lambda = cfg.l2_lambda;
  clf.feature_mean.assign(dim, 0.0f);
  clf.feature_std.assign(dim, 0.0f);
  {
    std::vector<double> sum(dim, 0.0), sq(dim, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const float* row = features.data() + i * dim;
      for (std::size_t d = 0; d < dim; ++d) {
        if (!std::isfinite(row[d])) throw NumericalError("train_linear: non-finite feature");
        sum[d] += row[d];
      }
    }
    for (std::size_t d = 0; d < dim; ++d) sum[d] /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const float* row = features.data() + i * dim;
      for (std::size_t d = 0; d < dim; ++d) sq[d] += (row[d] - sum[d]) * (row[d] - sum[d]);
    }
    for (std::size_t d = 0; d < dim; ++d) {
      clf.feature_mean[d] = static_cast<float>(sum[d]);
      const double sd = std::sqrt(sq[d] / static_cast<double>(n));
      clf.feature_std[d] = static_cast<float>(std::max(sd, LinearClassifier::kStdFloor));
    }
    for (std::size_t i = 0; i < n; ++i) {
      float* row = features.data() + i * dim;
      for (std::size_t d = 0; d < dim; ++d) {
        row[d] = (row[d] - clf.feature_mean[d]) / clf.feature_std[d];
      }
    }
  }

  const MapF x(features.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  MatD w0(static_cast<Eigen::Index>(classes), static_cast<Eigen::Index>(dim));
  {
    Rng rng(cfg.seed);
    fill_normal(std::span<double>(w0.data(), static_cast<std::size_t>(w0.size())), rng, 0.0, 0.01);
  }

  const bool gram = cfg.solver == LinearSolver::Gram ||
                    (cfg.solver == LinearSolver::Auto && n <= dim);
  DescentOutcome fit = gram ? descend(GramBackend(x, w0, cfg.l2_lambda), x, w0, labels, cfg)
                            : descend(PrimalBackend(x, w0, cfg.l2_lambda), x, w0, labels, cfg);

  clf.weights.assign(fit.weights.data(), fit.weights.data() + fit.weights.size());
  clf.bias.assign(fit.bias.data(), fit.bias.data() + fit.bias.size());
  LinearTrainResult result;
  result.classifier = std::move(clf);
  result.objective_trace = std::move(fit.trace);
  result.iterations = fit.iterations;
  result.gradient_norm = fit.gradient_norm;
  result.converged = fit.converged;
  return result;
}

Classification classify_features(const LinearClassifier& clf, std::span<const float> features) {
  const std::vector<double> p = clf.probabilities(features);
  const auto best = std::max_element(p.begin(), p.end());  // first maximum on ties
  return {static_cast<int>(best - p.begin()), *best};
}

Classification classify_chip(DiscriminatorNet& d, const LinearClassifier& clf,
                             const ImageChip& chip) {
  return classify_features(clf, extract_features(d, chip));
}

Checkpoint classifier_checkpoint(const LinearClassifier& clf, const nlohmann::json& metadata) {
  Checkpoint ckpt;
  ckpt.metadata = metadata;
  ckpt.metadata["kind"] = "classifier";
  ckpt.metadata["num_classes"] = clf.num_classes;
  ckpt.metadata["dim"] = clf.dim;
  ckpt.metadata["l2_lambda"] = clf.l2_lambda;
  auto to_f = [](const std::vector<double>& v) {
    return std::vector<float>(v.begin(), v.end());
  };
  ckpt.add("clf.weights", TensorF({clf.num_classes, clf.dim}, to_f(clf.weights)));
  ckpt.add("clf.bias", TensorF({clf.num_classes}, to_f(clf.bias)));
  ckpt.add("clf.mean", TensorF({clf.dim}, clf.feature_mean));
  ckpt.add("clf.std", TensorF({clf.dim}, clf.feature_std));
  return ckpt;
}

LinearClassifier load_classifier(const Checkpoint& ckpt) {
  if (ckpt.metadata.value("kind", "") != "classifier") {
    throw DataError("checkpoint does not hold a classifier");
  }
  LinearClassifier clf;
  try {
    clf.num_classes = ckpt.metadata.at("num_classes").get<std::size_t>();
    clf.dim = ckpt.metadata.at("dim").get<std::size_t>();
    clf.l2_lambda = ckpt.metadata.at("l2_lambda").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("classifier metadata: ") + e.what());
  }
  auto fetch = [&](const std::string& name, Shape shape) {
    const TensorF* t = ckpt.find(name);
    if (t == nullptr || t->shape() != shape) throw DataError("classifier tensor " + name + " missing or misshapen");
    return t->storage();
  };
  const auto w = fetch("clf.weights", {clf.num_classes, clf.dim});
  const auto b = fetch("clf.bias", {clf.num_classes});
  clf.weights.assign(w.begin(), w.end());
  clf.bias.assign(b.begin(), b.end());
  clf.feature_mean = fetch("clf.mean", {clf.dim});
  clf.feature_std = fetch("clf.std", {clf.dim});
  return clf;
}

}  // namespace dcssd
