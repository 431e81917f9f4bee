#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ppgstress/model.hpp"
#include "ppgstress/rng.hpp"
#include "ppgstress/scalogram.hpp"

namespace ppgstress {

inline double crossentropy(const std::vector<double>& probs, int label) {
  if (label < 0 || label >= static_cast<int>(probs.size()))
    throw std::runtime_error("crossentropy: label " + std::to_string(label) + " out of range");
  return -std::log(std::max(probs[static_cast<std::size_t>(label)], 1e-12));
}

template <class T>
double crossentropy(const std::vector<T>& probs, int label) {
  return crossentropy(std::vector<double>(probs.begin(), probs.end()), label);
}

// ---- gradients ----------------------------------------------------------------

/// One entry per model layer; pool and flatten entries stay empty.
template <class T>
struct LayerGrad {
  TensorT<T> weights;
  std::vector<T> bias;
};

template <class T>
struct Gradients {
  std::vector<LayerGrad<T>> layers;
};

template <class T>
struct BackwardResult {
  Gradients<T> grads;     // d(mean crossentropy)/d(parameter)
  TensorT<T> probs;       // (batch, classes)
  double mean_loss = 0.0;
};

namespace detail {

template <class T>
Gradients<T> zero_gradients(const ModelT<T>& m) {
  Gradients<T> g;
  g.layers.resize(m.layers.size());
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& l = m.layers[i];
    if (l.kind == LayerKind::conv2d || l.kind == LayerKind::dense) {
      g.layers[i].weights = TensorT<T>(l.weights.shape);
      g.layers[i].bias.assign(l.bias.size(), T(0));
    }
  }
  return g;
}

}  // namespace detail

/// Backprop of mean crossentropy over the batch. Softmax and crossentropy
/// fuse to (p - onehot)/batch at the logits; ReLU masks by the sign of the
/// post-activation; maxpool routes each gradient to the first maximum in
/// scan order. Examples are accumulated in batch order so results are
/// bit-reproducible.
template <class T>
BackwardResult<T> backward(const ModelT<T>& m, const std::vector<TensorT<T>>& batch,
                           const std::vector<int>& labels) {
  if (batch.empty()) throw std::runtime_error("backward: empty batch");
  if (batch.size() != labels.size())
    throw std::runtime_error("backward: batch has " + std::to_string(batch.size()) +
                             " examples but " + std::to_string(labels.size()) + " labels");

  BackwardResult<T> result;
  result.grads = detail::zero_gradients(m);

  const auto out_shapes = boundary_shapes(m);
  const int classes = out_shapes.back()[0];
  result.probs = TensorT<T>({static_cast<int>(batch.size()), classes});

  const T inv_batch = T(1) / static_cast<T>(batch.size());
  for (std::size_t n = 0; n < batch.size(); ++n) {
    if (labels[n] < 0 || labels[n] >= classes)
      throw std::runtime_error("backward: label " + std::to_string(labels[n]) + " out of range");
    const auto acts = forward_trace(m, batch[n]);
    const auto& p = acts.back().data;
    std::copy(p.begin(), p.end(),
              result.probs.data.begin() + static_cast<std::ptrdiff_t>(n * p.size()));
    result.mean_loss += crossentropy(p, labels[n]);

    // delta w.r.t. the current boundary's post-activation (pre-activation at
    // the softmax head, where the fused form already includes the jacobian)
    std::vector<T> delta(p.size());
    for (std::size_t k = 0; k < p.size(); ++k)
      delta[k] = (p[k] - (static_cast<int>(k) == labels[n] ? T(1) : T(0))) * inv_batch;

    std::size_t b = acts.size() - 1;
    for (std::size_t li = m.layers.size(); li-- > 0;) {
      const auto& l = m.layers[li];
      if (l.kind == LayerKind::flatten) continue;  // boundary aliased, layout unchanged
      const auto& in_act = acts[b - 1];
      const auto& out_act = acts[b];

      switch (l.kind) {
        case LayerKind::dense: {
          if (l.act == Activation::relu)
            for (std::size_t i = 0; i < delta.size(); ++i)
              if (out_act.data[i] <= T(0)) delta[i] = T(0);
          const int out_n = l.weights.dim(0), in_n = l.weights.dim(1);
          auto& g = result.grads.layers[li];
          std::vector<T> din(static_cast<std::size_t>(in_n), T(0));
          for (int o = 0; o < out_n; ++o) {
            const T d = delta[static_cast<std::size_t>(o)];
            g.bias[static_cast<std::size_t>(o)] += d;
            T* grow = &g.weights.data[static_cast<std::size_t>(o) * in_n];
            const T* wrow = &l.weights.data[static_cast<std::size_t>(o) * in_n];
            for (int i = 0; i < in_n; ++i) {
              grow[i] += d * in_act.data[static_cast<std::size_t>(i)];
              din[static_cast<std::size_t>(i)] += d * wrow[i];
            }
          }
          delta = std::move(din);
          break;
        }
        case LayerKind::maxpool2: {
          const int h = in_act.dim(0), w = in_act.dim(1), c = in_act.dim(2);
          std::vector<T> din(in_act.size(), T(0));
          const int oh_n = out_act.dim(0), ow_n = out_act.dim(1);
          for (int oh = 0; oh < oh_n; ++oh)
            for (int ow = 0; ow < ow_n; ++ow)
              for (int cc = 0; cc < c; ++cc) {
                const T mx = out_act.at3(oh, ow, cc);
                const T d = delta[(static_cast<std::size_t>(oh) * ow_n + ow) * c + cc];
                for (int q = 0; q < 4; ++q) {
                  const int r = 2 * oh + q / 2, col = 2 * ow + q % 2;
                  if (in_act.at3(r, col, cc) == mx) {
                    din[(static_cast<std::size_t>(r) * w + col) * c + cc] += d;
                    break;
                  }
                }
              }
          (void)h;
          delta = std::move(din);
          break;
        }
        case LayerKind::conv2d: {
          if (l.act == Activation::relu)
            for (std::size_t i = 0; i < delta.size(); ++i)
              if (out_act.data[i] <= T(0)) delta[i] = T(0);
          const int h = in_act.dim(0), w = in_act.dim(1), c = in_act.dim(2);
          const int kh = l.weights.dim(0), kw = l.weights.dim(1), kn = l.weights.dim(3);
          const int oh_n = out_act.dim(0), ow_n = out_act.dim(1);
          auto& g = result.grads.layers[li];
          const bool need_din = li > 0;
          std::vector<T> din;
          if (need_din) din.assign(in_act.size(), T(0));
          for (int oh = 0; oh < oh_n; ++oh)
            for (int ow = 0; ow < ow_n; ++ow) {
              const T* d_px = &delta[(static_cast<std::size_t>(oh) * ow_n + ow) * kn];
              for (int k = 0; k < kn; ++k) g.bias[static_cast<std::size_t>(k)] += d_px[k];
              for (int i = 0; i < kh; ++i)
                for (int j = 0; j < kw; ++j)
                  for (int cc = 0; cc < c; ++cc) {
                    const std::size_t in_idx =
                        (static_cast<std::size_t>(oh + i) * w + (ow + j)) * c + cc;
                    const T v = in_act.data[in_idx];
                    T* gk = &g.weights.at4(i, j, cc, 0);
                    const T* wk = &l.weights.at4(i, j, cc, 0);
                    T din_acc = T(0);
                    for (int k = 0; k < kn; ++k) {
                      gk[k] += v * d_px[k];
                      din_acc += wk[k] * d_px[k];
                    }
                    if (need_din) din[in_idx] += din_acc;
                  }
            }
          (void)h;
          if (need_din)
            delta = std::move(din);
          else
            delta.clear();
          break;
        }
        case LayerKind::flatten:
          break;
      }
      --b;
    }
  }
  result.mean_loss /= static_cast<double>(batch.size());
  return result;
}

// ---- Adam ----------------------------------------------------------------------

template <class T>
struct AdamState {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long long t = 0;
  std::vector<LayerGrad<T>> m;  // first moment, shapes mirror parameters
  std::vector<LayerGrad<T>> v;  // second moment
};

template <class T>
AdamState<T> make_adam(const ModelT<T>& model, double lr = 0.001) {
  AdamState<T> st;
  st.lr = lr;
  st.m = detail::zero_gradients(model).layers;
  st.v = detail::zero_gradients(model).layers;
  return st;
}

/// conv1, conv2, ..., dense1, dense2 in graph order; empty for layers
/// without parameters. Used in diagnostics.
template <class T>
std::vector<std::string> param_layer_names(const ModelT<T>& m) {
  std::vector<std::string> names(m.layers.size());
  int conv_i = 0, dense_i = 0;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    if (m.layers[i].kind == LayerKind::conv2d)
      names[i] = "conv" + std::to_string(++conv_i);
    else if (m.layers[i].kind == LayerKind::dense)
      names[i] = "dense" + std::to_string(++dense_i);
  }
  return names;
}

namespace detail {

template <class T>
void adam_update(std::vector<T>& params, const std::vector<T>& grads, std::vector<T>& m,
                 std::vector<T>& v, const AdamState<T>& st, double bc1, double bc2,
                 const std::string& name) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = static_cast<double>(grads[i]);
    if (!std::isfinite(g))
      throw std::runtime_error("adam_step: non-finite gradient in " + name);
    const double mi = st.beta1 * static_cast<double>(m[i]) + (1.0 - st.beta1) * g;
    const double vi = st.beta2 * static_cast<double>(v[i]) + (1.0 - st.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double mhat = mi / bc1;
    const double vhat = vi / bc2;
    params[i] = static_cast<T>(static_cast<double>(params[i]) -
                               st.lr * mhat / (std::sqrt(vhat) + st.epsilon));
  }
}

}  // namespace detail

template <class T>
void adam_step(ModelT<T>& model, const Gradients<T>& grads, AdamState<T>& st) {
  if (grads.layers.size() != model.layers.size())
    throw std::runtime_error("adam_step: gradient/model layer count mismatch");
  st.t += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  const auto names = param_layer_names(model);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    auto& l = model.layers[i];
    if (l.kind != LayerKind::conv2d && l.kind != LayerKind::dense) continue;
    detail::adam_update(l.weights.data, grads.layers[i].weights.data, st.m[i].weights.data,
                        st.v[i].weights.data, st, bc1, bc2, names[i] + ".weights");
    detail::adam_update(l.bias, grads.layers[i].bias, st.m[i].bias, st.v[i].bias, st, bc1, bc2,
                        names[i] + ".bias");
  }
}

// ---- training loop ---------------------------------------------------------------

struct TrainConfig {
  int epochs = 5;
  int batch_size = 32;
  double val_split = 0.2;
  uint64_t seed = 0;            // split and shuffle
  AugmentParams augment;        // applied to training batches only
  double learning_rate = 0.001;
};

inline void validate(const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw std::runtime_error("train config: epochs must be at least 1");
  if (cfg.batch_size < 1) throw std::runtime_error("train config: batch size must be at least 1");
  if (!(cfg.val_split > 0.0 && cfg.val_split < 1.0))
    throw std::runtime_error("train config: validation split must be in (0,1)");
  validate(cfg.augment);
}

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_acc = 0.0;
  double val_acc = 0.0;
  double mean_loss = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
};

template <class T>
struct TrainResult {
  ModelT<T> model;
  TrainHistory history;
  std::vector<std::size_t> train_indices;  // into the input image list
  std::vector<std::size_t> val_indices;
};

namespace detail {

inline int argmax_class(const float* p, int n) {
  int best = 0;
  for (int k = 1; k < n; ++k)
    if (p[k] > p[best]) best = k;
  return best;
}

template <class T>
int argmax_class(const std::vector<T>& p) {
  int best = 0;
  for (int k = 1; k < static_cast<int>(p.size()); ++k)
    if (p[static_cast<std::size_t>(k)] > p[static_cast<std::size_t>(best)]) best = k;
  return best;
}

inline void fisher_yates(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.bounded(i)]);
}

}  // namespace detail

/// Stratified split, per-epoch shuffle, augmented training batches, Adam
/// updates. Training accuracy and loss are running statistics over the
/// augmented batches as seen during the epoch (the model changes between
/// batches); validation accuracy is measured on untouched images after the
/// epoch. Deterministic given cfg.seed and cfg.augment.seed.
template <class T>
TrainResult<T> train(const ModelT<T>& start, const std::vector<ScalogramImage>& images,
                     const TrainConfig& cfg) {
  validate(cfg);
  std::vector<std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!images[i].label)
      throw std::runtime_error("train: unlabeled image at index " + std::to_string(i));
    const int c = *images[i].label;
    if (c < 0) throw std::runtime_error("train: negative label at index " + std::to_string(i));
    if (static_cast<std::size_t>(c) >= by_class.size()) by_class.resize(static_cast<std::size_t>(c) + 1);
    by_class[static_cast<std::size_t>(c)].push_back(i);
  }
  std::size_t nonempty = 0;
  for (const auto& g : by_class) nonempty += g.empty() ? 0 : 1;
  if (nonempty < 2) throw std::runtime_error("train: single-class dataset");
  for (std::size_t c = 0; c < by_class.size(); ++c)
    if (!by_class[c].empty() && by_class[c].size() < 2)
      throw std::runtime_error("train: class " + std::to_string(c) +
                               " has fewer than 2 examples");

  TrainResult<T> result;
  result.model = start;

  Rng split_rng = fork_rng(cfg.seed, 0x73706c69);  // split stream
  for (auto& group : by_class) {
    detail::fisher_yates(group, split_rng);
    std::size_t val_n = static_cast<std::size_t>(
        std::lround(static_cast<double>(group.size()) * cfg.val_split));
    val_n = std::min(std::max<std::size_t>(val_n, 1), group.size() - 1);
    for (std::size_t i = 0; i < group.size(); ++i)
      (i < val_n ? result.val_indices : result.train_indices).push_back(group[i]);
  }
  std::sort(result.train_indices.begin(), result.train_indices.end());
  std::sort(result.val_indices.begin(), result.val_indices.end());

  AdamState<T> opt = make_adam(result.model, cfg.learning_rate);
  uint64_t draw_index = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = result.train_indices;
    Rng shuffle_rng = fork_rng(cfg.seed, 0x65706f63ull + static_cast<uint64_t>(epoch));
    detail::fisher_yates(order, shuffle_rng);

    std::size_t correct = 0;
    double loss_sum = 0.0;
    for (std::size_t off = 0; off < order.size(); off += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), off + static_cast<std::size_t>(cfg.batch_size));
      std::vector<TensorT<T>> batch;
      std::vector<int> labels;
      batch.reserve(end - off);
      for (std::size_t i = off; i < end; ++i) {
        const ScalogramImage aug = augment(images[order[i]], cfg.augment, draw_index++);
        batch.push_back(image_tensor<T>(aug));
        labels.push_back(*images[order[i]].label);
      }
      BackwardResult<T> step = backward(result.model, batch, labels);
      const int classes = step.probs.dim(1);
      for (std::size_t n = 0; n < batch.size(); ++n) {
        std::vector<T> p(step.probs.data.begin() + static_cast<std::ptrdiff_t>(n * classes),
                         step.probs.data.begin() + static_cast<std::ptrdiff_t>((n + 1) * classes));
        if (detail::argmax_class(p) == labels[n]) ++correct;
      }
      loss_sum += step.mean_loss * static_cast<double>(batch.size());
      adam_step(result.model, step.grads, opt);
    }

    std::size_t val_correct = 0;
    for (std::size_t idx : result.val_indices) {
      const auto p = forward_single(result.model, image_tensor<T>(images[idx]));
      if (detail::argmax_class(p) == *images[idx].label) ++val_correct;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
    stats.val_acc = static_cast<double>(val_correct) / static_cast<double>(result.val_indices.size());
    stats.mean_loss = loss_sum / static_cast<double>(order.size());
    result.history.epochs.push_back(stats);
  }
  return result;
}

// ---- history export ---------------------------------------------------------------

inline std::string history_csv(const TrainHistory& h) {
  std::string out = "epoch,train_acc,val_acc,loss\n";
  char buf[128];
  for (const auto& e : h.epochs) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g\n", e.epoch, e.train_acc, e.val_acc,
                  e.mean_loss);
    out += buf;
  }
  return out;
}

inline nlohmann::json history_json(const TrainHistory& h) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : h.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"train_acc", e.train_acc},
                      {"val_acc", e.val_acc},
                      {"loss", e.mean_loss}});
  return nlohmann::json{{"epochs", epochs}};
}

inline void write_history_csv(const TrainHistory& h, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << history_csv(h);
}

}  // namespace ppgstress
