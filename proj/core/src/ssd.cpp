// SPDX-License-Identifier: Apache-2.0
#include "dcssd/ssd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "dcssd/errors.hpp"
#include "dcssd/random.hpp"

namespace dcssd {

DefaultBoxSet build_default_boxes(std::span<const GridSpec> grids, double s_min, double s_max,
                                  bool extra_unit_box) {
  if (grids.empty()) throw std::invalid_argument("build_default_boxes: no feature maps");
  if (!(s_min > 0.0 && s_min < s_max && s_max <= 1.0)) {
    throw std::invalid_argument("build_default_boxes: need 0 < s_min < s_max <= 1");
  }
  const std::size_t m = grids.size();
  auto scale = [&](std::size_t k) {
    if (k >= m) return 1.0;
    return m == 1 ? s_min : s_min + (s_max - s_min) * static_cast<double>(k) / (m - 1.0);
  };

  DefaultBoxSet set;
  for (std::size_t k = 0; k < m; ++k) {
    const GridSpec& g = grids[k];
    if (g.size == 0 || g.ratios.empty()) {
      throw std::invalid_argument("build_default_boxes: empty grid or ratio list");
    }
    for (double r : g.ratios) {
      if (!(r > 0.0)) throw std::invalid_argument("build_default_boxes: ratios must be positive");
    }
    const double s = scale(k);
    const double s_extra = std::sqrt(s * scale(k + 1));
    const bool has_unit = std::find(g.ratios.begin(), g.ratios.end(), 1.0) != g.ratios.end();
    DefaultBoxSet::Layout layout{g.size, g.ratios.size() + (extra_unit_box && has_unit ? 1 : 0),
                                 s, g.ratios};
    const double f = static_cast<double>(g.size);
    for (std::size_t i = 0; i < g.size; ++i) {
      for (std::size_t j = 0; j < g.size; ++j) {
        const double cx = (j + 0.5) / f, cy = (i + 0.5) / f;
        for (double r : g.ratios) {
          set.boxes.push_back(clip_unit({cx, cy, s * std::sqrt(r), s / std::sqrt(r)}));
        }
        if (extra_unit_box && has_unit) set.boxes.push_back(clip_unit({cx, cy, s_extra, s_extra}));
      }
    }
    set.layout.push_back(std::move(layout));
  }
  return set;
}

MatchResult match_boxes(std::span<const GtBox> truths, std::span<const Box> defaults, double tau) {
  if (defaults.empty()) throw std::invalid_argument("match_boxes: empty default set");
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("match_boxes: tau must lie in (0, 1)");
  MatchResult out;
  out.assigned_truth.assign(defaults.size(), kBackgroundMatch);
  out.best_default.resize(truths.size());
  std::vector<bool> claimed(defaults.size(), false);
  for (std::size_t t = 0; t < truths.size(); ++t) {
    std::size_t best = 0;
    double best_iou = -1.0;
    for (std::size_t d = 0; d < defaults.size(); ++d) {
      const double v = iou(truths[t].box, defaults[d]);
      if (v > best_iou) best_iou = v, best = d;
    }
    out.best_default[t] = best;
    // A later truth claiming the same default takes it over.
    out.assigned_truth[best] = static_cast<int>(t);
    claimed[best] = true;
  }
  for (std::size_t d = 0; d < defaults.size(); ++d) {
    if (claimed[d]) continue;
    double best_iou = -1.0;
    int best = kBackgroundMatch;
    for (std::size_t t = 0; t < truths.size(); ++t) {
      const double v = iou(truths[t].box, defaults[d]);
      if (v > best_iou) best_iou = v, best = static_cast<int>(t);
    }
    if (best != kBackgroundMatch && best_iou >= tau) out.assigned_truth[d] = best;
  }
  return out;
}

MatchTargets make_targets(std::span<const GtBox> truths, std::span<const Box> defaults,
                          const MatchResult& match) {
  if (match.assigned_truth.size() != defaults.size()) {
    throw std::invalid_argument("make_targets: match does not cover the default set");
  }
  MatchTargets out;
  out.labels.assign(defaults.size(), 0);
  out.offsets.assign(defaults.size(), {0.0, 0.0, 0.0, 0.0});
  for (std::size_t d = 0; d < defaults.size(); ++d) {
    const int t = match.assigned_truth[d];
    if (t == kBackgroundMatch) continue;
    const GtBox& gt = truths[static_cast<std::size_t>(t)];
    if (gt.class_id < 0 || gt.class_id >= static_cast<int>(kObjectClasses)) {
      throw std::invalid_argument("make_targets: class id out of range");
    }
    out.labels[d] = gt.class_id + 1;
    out.offsets[d] = encode_offsets(gt.box, defaults[d]);
    ++out.positives;
  }
  return out;
}

template <typename T>
MultiboxLoss<T> multibox_loss(const Tensor<T>& logits, const Tensor<T>& offsets,
                              std::span<const MatchTargets> targets, double alpha,
                              double neg_ratio) {
  if (logits.rank() != 3 || logits.dim(2) != kScoreClasses || offsets.rank() != 3 ||
      offsets.dim(2) != kOffsetDims || offsets.dim(0) != logits.dim(0) ||
      offsets.dim(1) != logits.dim(1) || targets.size() != logits.dim(0)) {
    throw std::invalid_argument("multibox_loss: inconsistent shapes");
  }
  const std::size_t batch = logits.dim(0), n_def = logits.dim(1);
  std::size_t total_pos = 0;
  for (const auto& t : targets) {
    if (t.labels.size() != n_def || t.offsets.size() != n_def) {
      throw std::invalid_argument("multibox_loss: targets do not cover the default set");
    }
    total_pos += t.positives;
  }
  if (total_pos == 0) throw std::invalid_argument("multibox_loss: no matched default boxes");

  MultiboxLoss<T> out;
  out.positives = total_pos;
  out.grad_logits = Tensor<T>(logits.shape());
  out.grad_offsets = Tensor<T>(offsets.shape());
  const T inv_n = T(1) / static_cast<T>(total_pos);
  T conf = 0, loc = 0;

  std::vector<T> probs(n_def * kScoreClasses), bg_loss(n_def);
  std::vector<std::size_t> negatives;
  for (std::size_t b = 0; b < batch; ++b) {
    const MatchTargets& tg = targets[b];
    const T* lg = logits.data() + b * n_def * kScoreClasses;
    for (std::size_t d = 0; d < n_def; ++d) {
      const T* row = lg + d * kScoreClasses;
      const T m = *std::max_element(row, row + kScoreClasses);
      T sum = 0;
      for (std::size_t c = 0; c < kScoreClasses; ++c) sum += std::exp(row[c] - m);
      const T lse = m + std::log(sum);
      for (std::size_t c = 0; c < kScoreClasses; ++c) {
        probs[d * kScoreClasses + c] = std::exp(row[c] - lse);
      }
      bg_loss[d] = lse - row[0];
    }

    std::size_t pos = 0;
    negatives.clear();
    auto add_ce = [&](std::size_t d, int label, T loss) {
      conf += loss;
      T* g = out.grad_logits.data() + (b * n_def + d) * kScoreClasses;
      for (std::size_t c = 0; c < kScoreClasses; ++c) g[c] = probs[d * kScoreClasses + c] * inv_n;
      g[label] -= inv_n;
    };
    for (std::size_t d = 0; d < n_def; ++d) {
      const int label = tg.labels[d];
      if (label == 0) {
        negatives.push_back(d);
        continue;
      }
      ++pos;
      const T* row = lg + d * kScoreClasses;
      add_ce(d, label, bg_loss[d] + row[0] - row[label]);
      const T* pred = offsets.data() + (b * n_def + d) * kOffsetDims;
      T* g = out.grad_offsets.data() + (b * n_def + d) * kOffsetDims;
      for (std::size_t k = 0; k < kOffsetDims; ++k) {
        const T diff = pred[k] - static_cast<T>(tg.offsets[d][k]);
        const T a = std::abs(diff);
        loc += a < T(1) ? T(0.5) * diff * diff : a - T(0.5);
        g[k] = static_cast<T>(alpha) * inv_n * (a < T(1) ? diff : (diff > 0 ? T(1) : T(-1)));
      }
    }
    const std::size_t keep = std::min(
        negatives.size(), static_cast<std::size_t>(std::floor(neg_ratio * static_cast<double>(pos))));
    std::partial_sort(negatives.begin(), negatives.begin() + static_cast<std::ptrdiff_t>(keep),
                      negatives.end(), [&](std::size_t x, std::size_t y) {
                        return bg_loss[x] != bg_loss[y] ? bg_loss[x] > bg_loss[y] : x < y;
                      });
    for (std::size_t i = 0; i < keep; ++i) add_ce(negatives[i], 0, bg_loss[negatives[i]]);
  }
  out.conf_loss = conf;
  out.loc_loss = loc;
  out.loss = (conf + static_cast<T>(alpha) * loc) * inv_n;
  return out;
}

template MultiboxLoss<float> multibox_loss<float>(const TensorF&, const TensorF&,
                                                  std::span<const MatchTargets>, double, double);
template MultiboxLoss<double> multibox_loss<double>(const TensorD&, const TensorD&,
                                                    std::span<const MatchTargets>, double, double);

std::vector<Detection> nms(std::span<const Detection> dets, double iou_thr, std::size_t top_k) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].confidence > dets[b].confidence;
  });
  std::vector<std::size_t> kept;
  for (std::size_t idx : order) {
    const Detection& cand = dets[idx];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](std::size_t k) {
      return dets[k].class_id == cand.class_id && iou(dets[k].box, cand.box) > iou_thr;
    });
    if (!suppressed) kept.push_back(idx);
  }
  // kept is already in (confidence desc, index asc) order.
  if (kept.size() > top_k) kept.resize(top_k);
  std::vector<Detection> out;
  out.reserve(kept.size());
  for (std::size_t k : kept) out.push_back(dets[k]);
  return out;
}

void DetectorConfig::validate() const {
  if (canvas_size == 0 || canvas_size % 32 != 0) {
    throw std::invalid_argument("DetectorConfig: canvas_size must be a positive multiple of 32");
  }
  if (backbone_channels.size() != 5 ||
      std::any_of(backbone_channels.begin(), backbone_channels.end(),
                  [](std::size_t c) { return c == 0; })) {
    throw std::invalid_argument("DetectorConfig: backbone_channels needs 5 positive widths");
  }
  if (ratios.empty()) throw std::invalid_argument("DetectorConfig: no aspect ratios");
  if (!(s_min > 0.0 && s_min < s_max && s_max <= 1.0)) {
    throw std::invalid_argument("DetectorConfig: need 0 < s_min < s_max <= 1");
  }
  if (!(match_tau > 0.0 && match_tau < 1.0)) throw std::invalid_argument("DetectorConfig: bad match_tau");
  if (!(neg_ratio >= 0.0) || !(alpha >= 0.0)) {
    throw std::invalid_argument("DetectorConfig: neg_ratio and alpha must be non-negative");
  }
  if (!(nms_iou > 0.0 && nms_iou <= 1.0) || top_k == 0) {
    throw std::invalid_argument("DetectorConfig: bad NMS settings");
  }
  if (!(learning_rate > 0.0) || batch_size == 0) {
    throw std::invalid_argument("DetectorConfig: learning_rate and batch_size must be positive");
  }
}

nlohmann::json DetectorConfig::to_json() const {
  return {{"canvas_size", canvas_size}, {"backbone_channels", backbone_channels},
          {"ratios", ratios},           {"s_min", s_min},
          {"s_max", s_max},             {"match_tau", match_tau},
          {"neg_ratio", neg_ratio},     {"alpha", alpha},
          {"nms_iou", nms_iou},         {"top_k", top_k},
          {"learning_rate", learning_rate}, {"batch_size", batch_size},
          {"epochs", epochs},           {"seed", seed}};
}

DetectorConfig DetectorConfig::from_json(const nlohmann::json& j) {
  DetectorConfig c;
  const nlohmann::json known = c.to_json();
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw std::invalid_argument("DetectorConfig: unknown key '" + key + "'");
  }
  auto read = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  read("canvas_size", c.canvas_size);
  read("backbone_channels", c.backbone_channels);
  read("ratios", c.ratios);
  read("s_min", c.s_min);
  read("s_max", c.s_max);
  read("match_tau", c.match_tau);
  read("neg_ratio", c.neg_ratio);
  read("alpha", c.alpha);
  read("nms_iou", c.nms_iou);
  read("top_k", c.top_k);
  read("learning_rate", c.learning_rate);
  read("batch_size", c.batch_size);
  read("epochs", c.epochs);
  read("seed", c.seed);
  c.validate();
  return c;
}

// ------------------------------------------------------------- DetectorNet

namespace {

constexpr std::size_t kHeadWidth = kScoreClasses + kOffsetDims;

}  // namespace

DetectorNet::DetectorNet(DetectorConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const auto& ch = cfg_.backbone_channels;
  // Layers: three stride-2 convs to 1/8, a stride-1 conv, two more stride-2 convs.
  const std::size_t widths[6] = {ch[0], ch[1], ch[2], ch[2], ch[3], ch[4]};
  const std::size_t strides[6] = {2, 2, 2, 1, 2, 2};
  std::size_t in = ImageChip::kChannels;
  for (std::size_t i = 0; i < 6; ++i) {
    backbone_.emplace_back(in, widths[i], 3, strides[i], 1, true);
    relus_.emplace_back(nn::Activation::ReLU);
    in = widths[i];
  }
  head_taps_ = {3, 4, 5};
  std::vector<GridSpec> grids;
  for (std::size_t k = 0; k < 3; ++k) {
    grids.push_back({cfg_.canvas_size / (8u << k), cfg_.ratios});
  }
  defaults_ = build_default_boxes(grids, cfg_.s_min, cfg_.s_max);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const auto& lay = defaults_.layout[k];
    heads_.emplace_back(widths[head_taps_[k]], lay.boxes_per_cell * kHeadWidth, 3, 1, 1, true);
    head_offsets_.push_back(offset);
    offset += lay.grid * lay.grid * lay.boxes_per_cell;
  }
  head_shapes_.resize(3);
}

void DetectorNet::initialize(std::uint64_t seed) {
  Rng rng(seed);
  for (auto& conv : backbone_) {
    conv.init_normal(rng, std::sqrt(2.0 / (9.0 * static_cast<double>(conv.in_channels()))));
  }
  for (auto& head : heads_) head.init_normal(rng, 0.01);
}

DetectorOutput DetectorNet::forward(const TensorF& canvases) {
  if (canvases.rank() != 4 || canvases.dim(1) != ImageChip::kChannels ||
      canvases.dim(2) != cfg_.canvas_size || canvases.dim(3) != cfg_.canvas_size) {
    throw std::invalid_argument("DetectorNet: expected (B, 3, " + std::to_string(cfg_.canvas_size) +
                                ", " + std::to_string(cfg_.canvas_size) + ") canvases, got " +
                                shape_string(canvases.shape()));
  }
  const std::size_t batch = canvases.dim(0), n_def = defaults_.size();
  TensorF x = canvases;
  for (std::size_t i = 0; i < backbone_.size(); ++i) {
    x = relus_[i].forward(backbone_[i].forward(x));
  }
  DetectorOutput out{TensorF({batch, n_def, kScoreClasses}), TensorF({batch, n_def, kOffsetDims})};
  for (std::size_t k = 0; k < heads_.size(); ++k) {
    const TensorF y = heads_[k].forward(relus_[head_taps_[k]].output());
    head_shapes_[k] = y.shape();
    const std::size_t boxes = defaults_.layout[k].boxes_per_cell, f = y.dim(2), cells = f * f;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t cell = 0; cell < cells; ++cell) {
        for (std::size_t a = 0; a < boxes; ++a) {
          const std::size_t d = head_offsets_[k] + cell * boxes + a;
          for (std::size_t q = 0; q < kHeadWidth; ++q) {
            const float v = y[((b * boxes * kHeadWidth) + a * kHeadWidth + q) * cells + cell];
            if (q < kScoreClasses) {
              out.logits[(b * n_def + d) * kScoreClasses + q] = v;
            } else {
              out.offsets[(b * n_def + d) * kOffsetDims + (q - kScoreClasses)] = v;
            }
          }
        }
      }
    }
  }
  return out;
}

void DetectorNet::backward(const TensorF& grad_logits, const TensorF& grad_offsets) {
  const std::size_t n_def = defaults_.size();
  const std::size_t batch = grad_logits.dim(0);
  std::vector<TensorF> grad_act(backbone_.size());
  for (std::size_t k = 0; k < heads_.size(); ++k) {
    TensorF dy(head_shapes_[k]);
    const std::size_t boxes = defaults_.layout[k].boxes_per_cell, f = dy.dim(2), cells = f * f;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t cell = 0; cell < cells; ++cell) {
        for (std::size_t a = 0; a < boxes; ++a) {
          const std::size_t d = head_offsets_[k] + cell * boxes + a;
          for (std::size_t q = 0; q < kHeadWidth; ++q) {
            dy[((b * boxes * kHeadWidth) + a * kHeadWidth + q) * cells + cell] =
                q < kScoreClasses
                    ? grad_logits[(b * n_def + d) * kScoreClasses + q]
                    : grad_offsets[(b * n_def + d) * kOffsetDims + (q - kScoreClasses)];
          }
        }
      }
    }
    grad_act[head_taps_[k]] = heads_[k].backward(dy);
  }
  for (std::size_t i = backbone_.size(); i-- > 0;) {
    if (grad_act[i].empty()) continue;
    const TensorF dx = backbone_[i].backward(relus_[i].backward(grad_act[i]));
    if (i == 0) break;
    if (grad_act[i - 1].empty()) {
      grad_act[i - 1] = dx;
    } else {
      for (std::size_t j = 0; j < dx.size(); ++j) grad_act[i - 1][j] += dx[j];
    }
  }
}

nn::ParamList<float> DetectorNet::params() {
  nn::ParamList<float> out;
  for (std::size_t i = 0; i < backbone_.size(); ++i) {
    backbone_[i].append_params(out, "ssd.conv" + std::to_string(i));
  }
  for (std::size_t k = 0; k < heads_.size(); ++k) {
    heads_[k].append_params(out, "ssd.head" + std::to_string(k));
  }
  return out;
}

// ---------------------------------------------------------------- training

namespace {

void copy_canvas(const ImageChip& canvas, TensorF& batch, std::size_t slot) {
  std::copy(canvas.tensor().begin(), canvas.tensor().end(), batch.slab(slot).begin());
}

}  // namespace

DetectorTrainResult train_detector(std::span<const Scene> scenes, const DetectorConfig& cfg,
                                   const DetectorProgress& progress) {
  cfg.validate();
  if (scenes.empty()) throw std::invalid_argument("train_detector: no scenes");
  DetectorTrainResult result{DetectorNet(cfg), {}};
  DetectorNet& net = result.net;
  net.initialize(derive_seed(cfg.seed, 1));

  std::vector<MatchTargets> targets;
  targets.reserve(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Scene& s = scenes[i];
    if (s.truths.empty()) {
      throw std::invalid_argument("train_detector: scene " + std::to_string(i) + " has no truths");
    }
    if (s.canvas.height() != cfg.canvas_size || s.canvas.width() != cfg.canvas_size) {
      throw std::invalid_argument("train_detector: scene " + std::to_string(i) +
                                  " canvas size does not match the detector");
    }
    const auto match = match_boxes(s.truths, net.defaults().boxes, cfg.match_tau);
    targets.push_back(make_targets(s.truths, net.defaults().boxes, match));
  }

  nn::Adam<float> opt(net.params(), {cfg.learning_rate, 0.9, 0.999, 1e-8});
  std::vector<std::size_t> order(scenes.size());
  std::size_t iteration = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(cfg.seed, 1000 + epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - start);
      TensorF batch({count, ImageChip::kChannels, cfg.canvas_size, cfg.canvas_size});
      std::vector<MatchTargets> batch_targets;
      for (std::size_t i = 0; i < count; ++i) {
        copy_canvas(scenes[order[start + i]].canvas, batch, i);
        batch_targets.push_back(targets[order[start + i]]);
      }
      opt.zero_grad();
      const DetectorOutput out = net.forward(batch);
      const auto loss = multibox_loss<float>(out.logits, out.offsets, batch_targets, cfg.alpha,
                                             cfg.neg_ratio);
      if (!std::isfinite(loss.loss)) {
        throw NumericalError("train_detector: non-finite loss at iteration " +
                             std::to_string(iteration) + " (epoch " + std::to_string(epoch) + ")");
      }
      net.backward(loss.grad_logits, loss.grad_offsets);
      opt.step();
      const double n = static_cast<double>(loss.positives);
      DetectorLogRow row{iteration, epoch, loss.loss, loss.conf_loss / n, loss.loc_loss / n};
      result.log.push_back(row);
      if (progress) progress(row);
      ++iteration;
    }
  }
  return result;
}

// --------------------------------------------------------------- inference

std::vector<std::vector<Detection>> detect_batch(DetectorNet& net,
                                                 std::span<const ImageChip> canvases,
                                                 double conf_thr, std::size_t chunk) {
  if (chunk == 0) throw std::invalid_argument("detect_batch: chunk must be positive");
  const DetectorConfig& cfg = net.config();
  const auto& defaults = net.defaults().boxes;
  const std::size_t n_def = defaults.size();
  std::vector<std::vector<Detection>> all;
  all.reserve(canvases.size());
  for (std::size_t start = 0; start < canvases.size(); start += chunk) {
    const std::size_t count = std::min(chunk, canvases.size() - start);
    TensorF batch({count, ImageChip::kChannels, cfg.canvas_size, cfg.canvas_size});
    for (std::size_t i = 0; i < count; ++i) {
      const ImageChip& c = canvases[start + i];
      if (c.height() != cfg.canvas_size || c.width() != cfg.canvas_size) {
        throw std::invalid_argument("detect: canvas must be 3x" + std::to_string(cfg.canvas_size) +
                                    "x" + std::to_string(cfg.canvas_size));
      }
      copy_canvas(c, batch, i);
    }
    const DetectorOutput out = net.forward(batch);
    for (std::size_t b = 0; b < count; ++b) {
      std::vector<Detection> cands;
      for (std::size_t d = 0; d < n_def; ++d) {
        const float* row = out.logits.data() + (b * n_def + d) * kScoreClasses;
        const std::size_t arg = static_cast<std::size_t>(
            std::max_element(row, row + kScoreClasses) - row);
        if (arg == 0) continue;
        double sum = 0.0;
        for (std::size_t c = 0; c < kScoreClasses; ++c) sum += std::exp(double(row[c]) - row[arg]);
        const double conf = 1.0 / sum;
        if (conf < conf_thr) continue;
        const float* off = out.offsets.data() + (b * n_def + d) * kOffsetDims;
        const Box box = clip_unit(decode_offsets({off[0], off[1], off[2], off[3]}, defaults[d]));
        if (!(box.w > 0.0 && box.h > 0.0)) continue;
        cands.push_back({box, static_cast<int>(arg) - 1, conf});
      }
      all.push_back(nms(cands, cfg.nms_iou, cfg.top_k));
    }
  }
  return all;
}

std::vector<Detection> detect(DetectorNet& net, const ImageChip& canvas, double conf_thr) {
  return std::move(detect_batch(net, std::span<const ImageChip>(&canvas, 1), conf_thr).front());
}

Checkpoint detector_checkpoint(DetectorNet& net, const nlohmann::json& metadata) {
  Checkpoint ckpt;
  ckpt.metadata = metadata;
  ckpt.metadata["kind"] = "detector";
  ckpt.metadata["detector_config"] = net.config().to_json();
  ckpt.add_params(net.params());
  return ckpt;
}

DetectorNet load_detector(const Checkpoint& ckpt) {
  if (ckpt.metadata.value("kind", "") != "detector") {
    throw DataError("checkpoint does not hold a detector");
  }
  DetectorConfig cfg;
  try {
    cfg = DetectorConfig::from_json(ckpt.metadata.at("detector_config"));
  } catch (const std::exception& e) {
    throw DataError(std::string("detector metadata: ") + e.what());
  }
  DetectorNet net(cfg);
  ckpt.restore_params(net.params());
  return net;
}

nlohmann::json detection_json(const Detection& det, std::size_t scene_id) {
  return {{"scene_id", scene_id}, {"class_id", det.class_id}, {"cx", det.box.cx},
          {"cy", det.box.cy},     {"w", det.box.w},           {"h", det.box.h},
          {"confidence", det.confidence}};
}

void write_detections_jsonl(std::ostream& out, std::size_t scene_id,
                            std::span<const Detection> dets) {
  for (const auto& d : dets) out << detection_json(d, scene_id).dump() << '\n';
}

}  // namespace dcssd
