#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "ppgstress/model.hpp"

namespace ppgstress {

inline double round_half_even(double x) {
  const double f = std::floor(x);
  const double d = x - f;
  if (d > 0.5) return f + 1.0;
  if (d < 0.5) return f;
  return std::fmod(f, 2.0) == 0.0 ? f : f + 1.0;
}

inline int8_t clamp_i8(double q) {
  return static_cast<int8_t>(std::clamp(q, -128.0, 127.0));
}

// ---- structured pruning ------------------------------------------------------

struct PruneConfig {
  int keep_units = 128;  // hidden dense width retained, ranked by row L2 norm
};

/// Keeps the hidden units with the largest L2 norm of (incoming row, bias),
/// ties broken toward lower index; drops the matching rows of the hidden
/// dense layer and columns of the output layer. Result stays dense.
template <class T>
ModelT<T> prune_dense_units(const ModelT<T>& m, const PruneConfig& cfg) {
  // locate the two trailing dense layers
  int d1 = -1, d2 = -1;
  for (int i = 0; i < static_cast<int>(m.layers.size()); ++i) {
    if (m.layers[static_cast<std::size_t>(i)].kind == LayerKind::dense) {
      d1 = d2;
      d2 = i;
    }
  }
  if (d1 < 0 || d2 != static_cast<int>(m.layers.size()) - 1)
    throw std::runtime_error("prune_dense_units: model must end with two dense layers");

  const auto& hidden = m.layers[static_cast<std::size_t>(d1)];
  const auto& output = m.layers[static_cast<std::size_t>(d2)];
  const int width = hidden.weights.dim(0);
  const int in_n = hidden.weights.dim(1);
  if (cfg.keep_units < 1 || cfg.keep_units > width)
    throw std::runtime_error("prune_dense_units: keep count " + std::to_string(cfg.keep_units) +
                             " outside [1, " + std::to_string(width) + "]");

  std::vector<double> norm_sq(static_cast<std::size_t>(width));
  for (int u = 0; u < width; ++u) {
    double acc = static_cast<double>(hidden.bias[static_cast<std::size_t>(u)]) *
                 hidden.bias[static_cast<std::size_t>(u)];
    const T* row = &hidden.weights.data[static_cast<std::size_t>(u) * in_n];
    for (int i = 0; i < in_n; ++i) acc += static_cast<double>(row[i]) * row[i];
    norm_sq[static_cast<std::size_t>(u)] = acc;
  }

  std::vector<int> order(static_cast<std::size_t>(width));
  for (int u = 0; u < width; ++u) order[static_cast<std::size_t>(u)] = u;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return norm_sq[static_cast<std::size_t>(a)] > norm_sq[static_cast<std::size_t>(b)];
  });
  std::vector<int> kept(order.begin(), order.begin() + cfg.keep_units);
  std::sort(kept.begin(), kept.end());

  ModelT<T> out = m;
  auto& h = out.layers[static_cast<std::size_t>(d1)];
  h.weights = TensorT<T>({cfg.keep_units, in_n});
  h.bias.resize(static_cast<std::size_t>(cfg.keep_units));
  for (int r = 0; r < cfg.keep_units; ++r) {
    const int u = kept[static_cast<std::size_t>(r)];
    std::copy_n(&hidden.weights.data[static_cast<std::size_t>(u) * in_n], in_n,
                &h.weights.data[static_cast<std::size_t>(r) * in_n]);
    h.bias[static_cast<std::size_t>(r)] = hidden.bias[static_cast<std::size_t>(u)];
  }

  auto& o = out.layers[static_cast<std::size_t>(d2)];
  const int classes = output.weights.dim(0);
  o.weights = TensorT<T>({classes, cfg.keep_units});
  for (int cls = 0; cls < classes; ++cls)
    for (int r = 0; r < cfg.keep_units; ++r)
      o.weights.data[static_cast<std::size_t>(cls) * cfg.keep_units + r] =
          output.weights.data[static_cast<std::size_t>(cls) * width + kept[static_cast<std::size_t>(r)]];

  boundary_shapes(out);
  return out;
}

// ---- calibration ---------------------------------------------------------

struct ActivationRange {
  double lo = 0.0;
  double hi = 0.0;
};

/// Per-boundary (min, max) over the calibration activations, widened to
/// include 0; a degenerate [0,0] range widens to [0,1].
template <class T>
std::vector<ActivationRange> calibrate(const ModelT<T>& m, const std::vector<TensorT<T>>& images) {
  if (images.empty()) throw std::runtime_error("calibrate: empty calibration set");
  std::vector<ActivationRange> ranges;
  for (std::size_t n = 0; n < images.size(); ++n) {
    const auto acts = forward_trace(m, images[n]);
    if (ranges.empty()) {
      ranges.resize(acts.size());
      for (auto& r : ranges) {
        r.lo = std::numeric_limits<double>::infinity();
        r.hi = -std::numeric_limits<double>::infinity();
      }
    }
    for (std::size_t b = 0; b < acts.size(); ++b) {
      for (T v : acts[b].data) {
        ranges[b].lo = std::min(ranges[b].lo, static_cast<double>(v));
        ranges[b].hi = std::max(ranges[b].hi, static_cast<double>(v));
      }
    }
  }
  for (auto& r : ranges) {
    r.lo = std::min(r.lo, 0.0);
    r.hi = std::max(r.hi, 0.0);
    if (r.lo == 0.0 && r.hi == 0.0) r.hi = 1.0;
  }
  return ranges;
}

// ---- int8 quantization -----------------------------------------------------

enum class QuantMode { symmetric, affine };

struct QuantizedTensor {
  std::vector<int8_t> q;
  double scale = 1.0;
  int zero_point = 0;
};

struct QuantParams {
  double scale = 1.0;
  int zero_point = 0;
};

/// Affine int8 params for a calibrated range: scale = (max-min)/255,
/// zp = round(-min/scale) - 128.
inline QuantParams affine_params(ActivationRange r) {
  r.lo = std::min(r.lo, 0.0);
  r.hi = std::max(r.hi, 0.0);
  if (r.lo == 0.0 && r.hi == 0.0) r.hi = 1.0;
  QuantParams p;
  p.scale = (r.hi - r.lo) / 255.0;
  p.zero_point = static_cast<int>(std::lround(-r.lo / p.scale)) - 128;
  return p;
}

/// Symmetric: scale = max|x|/127, zero point 0. Affine: scale/zp from the
/// value range (widened to include 0). Rounding is half-to-even throughout.
template <class T>
QuantizedTensor quantize_tensor(const std::vector<T>& values, QuantMode mode) {
  QuantizedTensor out;
  out.q.resize(values.size());
  if (mode == QuantMode::symmetric) {
    double amax = 0.0;
    for (T v : values) amax = std::max(amax, std::abs(static_cast<double>(v)));
    out.scale = amax > 0.0 ? amax / 127.0 : 1.0;
    out.zero_point = 0;
    for (std::size_t i = 0; i < values.size(); ++i)
      out.q[i] = clamp_i8(round_half_even(static_cast<double>(values[i]) / out.scale));
    return out;
  }
  ActivationRange r;
  r.lo = std::numeric_limits<double>::infinity();
  r.hi = -std::numeric_limits<double>::infinity();
  for (T v : values) {
    r.lo = std::min(r.lo, static_cast<double>(v));
    r.hi = std::max(r.hi, static_cast<double>(v));
  }
  if (values.empty()) r = {0.0, 0.0};
  const QuantParams p = affine_params(r);
  out.scale = p.scale;
  out.zero_point = p.zero_point;
  for (std::size_t i = 0; i < values.size(); ++i)
    out.q[i] = clamp_i8(round_half_even(static_cast<double>(values[i]) / p.scale) + p.zero_point);
  return out;
}

// ---- quantized model ---------------------------------------------------------

struct QuantLayer {
  LayerKind kind{};
  Activation act = Activation::none;
  std::vector<int> weight_shape;
  std::vector<int8_t> weights;  // per-tensor symmetric, zero point 0
  double weight_scale = 1.0;
  std::vector<int32_t> bias;  // scale = s_in * s_weight
  double bias_scale = 1.0;
};

struct BoundaryQuant {
  ActivationRange range;
  QuantParams params;
};

struct QuantModel {
  int input_h = 64;
  int input_w = 64;
  int input_c = 1;
  uint64_t seed = 0;
  std::vector<QuantLayer> layers;
  std::vector<BoundaryQuant> boundaries;  // input first, then one per non-flatten layer
};

/// Weight payload bytes (int8) plus bias payload bytes (int32).
inline std::size_t quant_payload_bytes(const QuantModel& qm) {
  std::size_t n = 0;
  for (const auto& l : qm.layers) n += l.weights.size() + 4 * l.bias.size();
  return n;
}

/// Post-training quantization: per-tensor symmetric int8 weights, int32
/// biases at s_in*s_w, activation params from the calibrated ranges.
template <class T>
QuantModel quantize_ptq(const ModelT<T>& m, const std::vector<ActivationRange>& ranges) {
  const auto shapes = boundary_shapes(m);
  if (ranges.size() != shapes.size())
    throw std::runtime_error("quantize_ptq: expected " + std::to_string(shapes.size()) +
                             " boundary ranges, got " + std::to_string(ranges.size()));

  QuantModel qm;
  qm.input_h = m.input_h;
  qm.input_w = m.input_w;
  qm.input_c = m.input_c;
  qm.seed = m.seed;
  qm.boundaries.resize(ranges.size());
  for (std::size_t b = 0; b < ranges.size(); ++b) {
    qm.boundaries[b].range = ranges[b];
    qm.boundaries[b].params = affine_params(ranges[b]);
  }

  std::size_t boundary = 0;  // input boundary of the layer being quantized
  for (const auto& l : m.layers) {
    QuantLayer ql;
    ql.kind = l.kind;
    ql.act = l.act;
    if (l.kind == LayerKind::conv2d || l.kind == LayerKind::dense) {
      const QuantizedTensor w = quantize_tensor(l.weights.data, QuantMode::symmetric);
      ql.weight_shape = l.weights.shape;
      ql.weights = w.q;
      ql.weight_scale = w.scale;
      ql.bias_scale = qm.boundaries[boundary].params.scale * w.scale;
      ql.bias.resize(l.bias.size());
      for (std::size_t i = 0; i < l.bias.size(); ++i) {
        const double q = round_half_even(static_cast<double>(l.bias[i]) / ql.bias_scale);
        ql.bias[i] = static_cast<int32_t>(
            std::clamp(q, static_cast<double>(std::numeric_limits<int32_t>::min()),
                       static_cast<double>(std::numeric_limits<int32_t>::max())));
      }
    }
    if (l.kind != LayerKind::flatten) ++boundary;
    qm.layers.push_back(std::move(ql));
  }
  return qm;
}

}  // namespace ppgstress
