#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ppgstress/rng.hpp"
#include "ppgstress/scalogram.hpp"
#include "ppgstress/tensor.hpp"

namespace ppgstress {

enum class LayerKind : uint8_t { conv2d = 1, maxpool2 = 2, flatten = 3, dense = 4 };
enum class Activation : uint8_t { none = 0, relu = 1, softmax = 2 };

template <class T>
struct LayerT {
  LayerKind kind{};
  Activation act = Activation::none;
  TensorT<T> weights;   // conv: (kh, kw, in_c, out_c); dense: (out, in)
  std::vector<T> bias;  // conv/dense only
};

/// Sequential 2-conv CNN. The default build is
/// 64x64x1 -> Conv(32,3x3)+ReLU -> MaxPool -> Conv(64,3x3)+ReLU -> MaxPool
/// -> Flatten -> Dense(384)+ReLU -> Dense(2)+Softmax.
template <class T>
struct ModelT {
  int input_h = 64;
  int input_w = 64;
  int input_c = 1;
  uint64_t seed = 0;
  std::vector<LayerT<T>> layers;
};

using Model = ModelT<float>;

struct ModelSpec {
  int input_h = 64;
  int input_w = 64;
  int input_c = 1;
  int conv1_filters = 32;
  int conv2_filters = 64;
  int hidden_units = 384;
  int classes = 2;
  bool second_pool = true;  // reduced test variants drop it when pooled dims hit 1
};

// ---- kernel ops ------------------------------------------------------------

/// Valid cross-correlation: out[h,w,k] = sum_{i,j,c} in[h+i,w+j,c] * K[i,j,c,k] + b[k].
template <class T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& kernels, const std::vector<T>& bias) {
  if (input.rank() != 3 || kernels.rank() != 4)
    throw std::runtime_error("conv2d: expected input rank 3 and kernels rank 4");
  const int h = input.dim(0), w = input.dim(1), c = input.dim(2);
  const int kh = kernels.dim(0), kw = kernels.dim(1), kc = kernels.dim(2), kn = kernels.dim(3);
  if (kc != c)
    throw std::runtime_error("conv2d: channel mismatch, input " + shape_str(input.shape) +
                             " vs kernels " + shape_str(kernels.shape));
  if (static_cast<int>(bias.size()) != kn) throw std::runtime_error("conv2d: bias length mismatch");
  if (h < kh || w < kw) throw std::runtime_error("conv2d: input smaller than kernel");

  TensorT<T> out({h - kh + 1, w - kw + 1, kn});
  for (int oh = 0; oh < out.dim(0); ++oh) {
    for (int ow = 0; ow < out.dim(1); ++ow) {
      T* acc = &out.at3(oh, ow, 0);
      for (int k = 0; k < kn; ++k) acc[k] = bias[static_cast<std::size_t>(k)];
      for (int i = 0; i < kh; ++i) {
        for (int j = 0; j < kw; ++j) {
          const T* in_px = &input.at3(oh + i, ow + j, 0);
          for (int cc = 0; cc < c; ++cc) {
            const T v = in_px[cc];
            const T* kk = &kernels.at4(i, j, cc, 0);
            for (int k = 0; k < kn; ++k) acc[k] += v * kk[k];
          }
        }
      }
    }
  }
  return out;
}

/// Non-overlapping 2x2 max; odd trailing row/column dropped.
template <class T>
TensorT<T> maxpool2(const TensorT<T>& input) {
  if (input.rank() != 3) throw std::runtime_error("maxpool2: expected rank 3");
  const int h = input.dim(0), w = input.dim(1), c = input.dim(2);
  if (h < 2 || w < 2) throw std::runtime_error("maxpool2: input height and width must be at least 2");
  TensorT<T> out({h / 2, w / 2, c});
  for (int oh = 0; oh < out.dim(0); ++oh)
    for (int ow = 0; ow < out.dim(1); ++ow)
      for (int cc = 0; cc < c; ++cc) {
        T m = input.at3(2 * oh, 2 * ow, cc);
        m = std::max(m, input.at3(2 * oh, 2 * ow + 1, cc));
        m = std::max(m, input.at3(2 * oh + 1, 2 * ow, cc));
        m = std::max(m, input.at3(2 * oh + 1, 2 * ow + 1, cc));
        out.at3(oh, ow, cc) = m;
      }
  return out;
}

/// out = W x + b with W stored (out, in) row-major.
template <class T>
std::vector<T> dense(const std::vector<T>& input, const TensorT<T>& weights, const std::vector<T>& bias) {
  if (weights.rank() != 2) throw std::runtime_error("dense: expected weights rank 2");
  const int out_n = weights.dim(0), in_n = weights.dim(1);
  if (static_cast<int>(input.size()) != in_n)
    throw std::runtime_error("dense: input length " + std::to_string(input.size()) +
                             " does not match weights " + shape_str(weights.shape));
  if (static_cast<int>(bias.size()) != out_n) throw std::runtime_error("dense: bias length mismatch");
  std::vector<T> out(static_cast<std::size_t>(out_n));
  for (int o = 0; o < out_n; ++o) {
    const T* row = &weights.data[static_cast<std::size_t>(o) * in_n];
    T acc = bias[static_cast<std::size_t>(o)];
    for (int i = 0; i < in_n; ++i) acc += row[i] * input[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(o)] = acc;
  }
  return out;
}

template <class T>
std::vector<T> softmax(const std::vector<T>& logits) {
  if (logits.empty()) throw std::runtime_error("softmax: empty input");
  T zmax = logits[0];
  for (T z : logits) zmax = std::max(zmax, z);
  std::vector<T> p(logits.size());
  T sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - zmax);
    sum += p[i];
  }
  for (auto& x : p) x /= sum;
  return p;
}

template <class T>
void relu_inplace(TensorT<T>& t) {
  for (auto& x : t.data) x = std::max(x, T(0));
}

// ---- model construction -----------------------------------------------------

namespace detail {

template <class T>
TensorT<T> he_normal(std::vector<int> shape, int fan_in, Rng& rng) {
  TensorT<T> t(std::move(shape));
  const double std_dev = std::sqrt(2.0 / fan_in);
  for (auto& x : t.data) x = static_cast<T>(std_dev * rng.normal());
  return t;
}

}  // namespace detail

/// Output spatial dims along the layer chain; throws if shapes do not chain.
template <class T>
std::vector<std::vector<int>> boundary_shapes(const ModelT<T>& m) {
  std::vector<std::vector<int>> shapes;
  std::vector<int> cur{m.input_h, m.input_w, m.input_c};
  shapes.push_back(cur);
  for (const auto& layer : m.layers) {
    switch (layer.kind) {
      case LayerKind::conv2d: {
        if (cur.size() != 3) throw std::runtime_error("model: conv2d needs rank-3 input");
        const int kh = layer.weights.dim(0), kw = layer.weights.dim(1);
        if (layer.weights.dim(2) != cur[2]) throw std::runtime_error("model: conv2d channel mismatch");
        if (cur[0] < kh || cur[1] < kw) throw std::runtime_error("model: conv2d input too small");
        cur = {cur[0] - kh + 1, cur[1] - kw + 1, layer.weights.dim(3)};
        break;
      }
      case LayerKind::maxpool2:
        if (cur.size() != 3 || cur[0] < 2 || cur[1] < 2)
          throw std::runtime_error("model: maxpool2 input too small");
        cur = {cur[0] / 2, cur[1] / 2, cur[2]};
        break;
      case LayerKind::flatten: {
        int n = 1;
        for (int d : cur) n *= d;
        cur = {n};
        break;
      }
      case LayerKind::dense:
        if (cur.size() != 1 || layer.weights.dim(1) != cur[0])
          throw std::runtime_error("model: dense input mismatch, expected " +
                                   std::to_string(layer.weights.dim(1)));
        cur = {layer.weights.dim(0)};
        break;
    }
    // a flatten boundary aliases the buffer it reshapes
    if (layer.kind != LayerKind::flatten) shapes.push_back(cur);
  }
  return shapes;
}

template <class T = float>
ModelT<T> build_model(const ModelSpec& spec, uint64_t seed) {
  ModelT<T> m;
  m.input_h = spec.input_h;
  m.input_w = spec.input_w;
  m.input_c = spec.input_c;
  m.seed = seed;
  Rng rng(seed);

  auto bare = [](LayerKind kind) {
    LayerT<T> l;
    l.kind = kind;
    return l;
  };
  auto conv = [&](int in_c, int out_c) {
    LayerT<T> l;
    l.kind = LayerKind::conv2d;
    l.act = Activation::relu;
    l.weights = detail::he_normal<T>({3, 3, in_c, out_c}, 9 * in_c, rng);
    l.bias.assign(static_cast<std::size_t>(out_c), T(0));
    return l;
  };
  auto dense_layer = [&](int in_n, int out_n, Activation act) {
    LayerT<T> l;
    l.kind = LayerKind::dense;
    l.act = act;
    l.weights = detail::he_normal<T>({out_n, in_n}, in_n, rng);
    l.bias.assign(static_cast<std::size_t>(out_n), T(0));
    return l;
  };

  m.layers.push_back(conv(spec.input_c, spec.conv1_filters));
  m.layers.push_back(bare(LayerKind::maxpool2));
  int h = (spec.input_h - 2) / 2, w = (spec.input_w - 2) / 2;
  m.layers.push_back(conv(spec.conv1_filters, spec.conv2_filters));
  h -= 2;
  w -= 2;
  if (spec.second_pool) {
    m.layers.push_back(bare(LayerKind::maxpool2));
    h /= 2;
    w /= 2;
  }
  m.layers.push_back(bare(LayerKind::flatten));
  m.layers.push_back(dense_layer(h * w * spec.conv2_filters, spec.hidden_units, Activation::relu));
  m.layers.push_back(dense_layer(spec.hidden_units, spec.classes, Activation::softmax));

  boundary_shapes(m);  // shape chain must be consistent
  return m;
}

inline Model build_default_model(uint64_t seed) { return build_model<float>(ModelSpec{}, seed); }

template <class T>
std::size_t parameter_count(const ModelT<T>& m) {
  std::size_t n = 0;
  for (const auto& l : m.layers) n += l.weights.size() + l.bias.size();
  return n;
}

/// Serialized numeric payload at 32-bit floats, in bytes.
template <class T>
std::size_t float_payload_bytes(const ModelT<T>& m) {
  return parameter_count(m) * 4;
}

// ---- forward ----------------------------------------------------------------

/// Per-boundary activations (post-activation), acts[0] = input. Used by
/// training and calibration. Flatten reshapes in place and adds no boundary.
template <class T>
std::vector<TensorT<T>> forward_trace(const ModelT<T>& m, const TensorT<T>& input) {
  if (input.rank() != 3 || input.dim(0) != m.input_h || input.dim(1) != m.input_w ||
      input.dim(2) != m.input_c)
    throw std::runtime_error("forward: input shape " + shape_str(input.shape) + " does not match model " +
                             shape_str({m.input_h, m.input_w, m.input_c}));
  std::vector<TensorT<T>> acts;
  acts.push_back(input);
  TensorT<T> cur = input;
  for (const auto& l : m.layers) {
    switch (l.kind) {
      case LayerKind::conv2d:
        cur = conv2d(cur, l.weights, l.bias);
        if (l.act == Activation::relu) relu_inplace(cur);
        break;
      case LayerKind::maxpool2:
        cur = maxpool2(cur);
        break;
      case LayerKind::flatten:
        cur.shape = {static_cast<int>(cur.size())};
        continue;  // aliases the previous boundary
      case LayerKind::dense: {
        std::vector<T> y = dense(cur.data, l.weights, l.bias);
        if (l.act == Activation::relu)
          for (auto& x : y) x = std::max(x, T(0));
        else if (l.act == Activation::softmax)
          y = softmax(y);
        cur = TensorT<T>({static_cast<int>(y.size())});
        cur.data = std::move(y);
        break;
      }
    }
    acts.push_back(cur);
  }
  return acts;
}

template <class T>
std::vector<T> forward_single(const ModelT<T>& m, const TensorT<T>& input) {
  return forward_trace(m, input).back().data;
}

template <class T>
TensorT<T> image_tensor(const ScalogramImage& img) {
  TensorT<T> t({kImageSize, kImageSize, 1});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) t.data[i] = static_cast<T>(img.pixels[i]);
  return t;
}

/// Batch forward: probabilities per example, shape (n, classes).
template <class T>
TensorT<T> forward(const ModelT<T>& m, const std::vector<TensorT<T>>& batch) {
  if (batch.empty()) throw std::runtime_error("forward: empty batch");
  std::vector<T> first = forward_single(m, batch[0]);
  TensorT<T> out({static_cast<int>(batch.size()), static_cast<int>(first.size())});
  std::copy(first.begin(), first.end(), out.data.begin());
  for (std::size_t i = 1; i < batch.size(); ++i) {
    std::vector<T> p = forward_single(m, batch[i]);
    std::copy(p.begin(), p.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * p.size()));
  }
  return out;
}

}  // namespace ppgstress
