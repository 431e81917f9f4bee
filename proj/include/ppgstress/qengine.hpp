#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ppgstress/compress.hpp"

namespace ppgstress {

/// Effective multiplier mapping an int32 accumulator at s_in*s_w back to the
/// int8 grid of the next boundary.
struct RequantParams {
  double multiplier = 1.0;  // s_in * s_w / s_out
  int zero_point = 0;
};

inline int8_t requantize(int32_t acc, const RequantParams& p) {
  return clamp_i8(round_half_even(static_cast<double>(acc) * p.multiplier) + p.zero_point);
}

namespace detail {

struct QBuffer {
  std::vector<int> shape;
  std::vector<int8_t> data;
};

}  // namespace detail

inline std::vector<std::vector<int>> boundary_shapes(const QuantModel& qm) {
  std::vector<std::vector<int>> shapes;
  std::vector<int> cur{qm.input_h, qm.input_w, qm.input_c};
  shapes.push_back(cur);
  for (const auto& l : qm.layers) {
    switch (l.kind) {
      case LayerKind::conv2d:
        cur = {cur[0] - l.weight_shape[0] + 1, cur[1] - l.weight_shape[1] + 1, l.weight_shape[3]};
        break;
      case LayerKind::maxpool2:
        cur = {cur[0] / 2, cur[1] / 2, cur[2]};
        break;
      case LayerKind::flatten: {
        int n = 1;
        for (int d : cur) n *= d;
        cur = {n};
        continue;
      }
      case LayerKind::dense:
        cur = {l.weight_shape[0]};
        break;
    }
    shapes.push_back(cur);
  }
  return shapes;
}

/// Integer-only forward pass: input quantized at the first boundary, conv and
/// dense accumulate in int32, every boundary requantized to int8 with
/// half-to-even rounding, final logits dequantized and softmaxed in float.
/// Bit-deterministic across platforms.
inline std::vector<double> qforward(const QuantModel& qm, const ScalogramImage& img) {
  if (qm.input_h != kImageSize || qm.input_w != kImageSize || qm.input_c != 1)
    throw std::runtime_error("qforward: model input spec does not match a 64x64x1 image");
  if (qm.boundaries.size() < 2) throw std::runtime_error("qforward: model has no boundaries");

  detail::QBuffer cur;
  cur.shape = {qm.input_h, qm.input_w, qm.input_c};
  cur.data.resize(img.pixels.size());
  const QuantParams in_p = qm.boundaries[0].params;
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    cur.data[i] = clamp_i8(round_half_even(static_cast<double>(img.pixels[i]) / in_p.scale) +
                           in_p.zero_point);

  std::size_t boundary = 0;
  for (const auto& l : qm.layers) {
    const QuantParams src = qm.boundaries[boundary].params;
    switch (l.kind) {
      case LayerKind::flatten: {
        int n = 1;
        for (int d : cur.shape) n *= d;
        cur.shape = {n};
        continue;
      }
      case LayerKind::maxpool2: {
        const int h = cur.shape[0], w = cur.shape[1], c = cur.shape[2];
        if (h < 2 || w < 2) throw std::runtime_error("qforward: maxpool2 input too small");
        const QuantParams dst = qm.boundaries[boundary + 1].params;
        RequantParams rq{src.scale / dst.scale, dst.zero_point};
        detail::QBuffer out;
        out.shape = {h / 2, w / 2, c};
        out.data.resize(static_cast<std::size_t>(h / 2) * (w / 2) * c);
        for (int oh = 0; oh < h / 2; ++oh)
          for (int ow = 0; ow < w / 2; ++ow)
            for (int cc = 0; cc < c; ++cc) {
              auto px = [&](int r, int col) {
                return cur.data[(static_cast<std::size_t>(r) * w + col) * c + cc];
              };
              int8_t m = px(2 * oh, 2 * ow);
              m = std::max(m, px(2 * oh, 2 * ow + 1));
              m = std::max(m, px(2 * oh + 1, 2 * ow));
              m = std::max(m, px(2 * oh + 1, 2 * ow + 1));
              out.data[(static_cast<std::size_t>(oh) * (w / 2) + ow) * c + cc] =
                  requantize(static_cast<int32_t>(m) - src.zero_point, rq);
            }
        cur = std::move(out);
        break;
      }
      case LayerKind::conv2d: {
        const int h = cur.shape[0], w = cur.shape[1], c = cur.shape[2];
        const int kh = l.weight_shape[0], kw = l.weight_shape[1], kn = l.weight_shape[3];
        if (l.weight_shape[2] != c) throw std::runtime_error("qforward: conv channel mismatch");
        const QuantParams dst = qm.boundaries[boundary + 1].params;
        RequantParams rq{src.scale * l.weight_scale / dst.scale, dst.zero_point};
        detail::QBuffer out;
        out.shape = {h - kh + 1, w - kw + 1, kn};
        out.data.resize(static_cast<std::size_t>(out.shape[0]) * out.shape[1] * kn);
        std::vector<int32_t> acc(static_cast<std::size_t>(kn));
        for (int oh = 0; oh < out.shape[0]; ++oh) {
          for (int ow = 0; ow < out.shape[1]; ++ow) {
            for (int k = 0; k < kn; ++k) acc[static_cast<std::size_t>(k)] = l.bias[static_cast<std::size_t>(k)];
            for (int i = 0; i < kh; ++i)
              for (int j = 0; j < kw; ++j)
                for (int cc = 0; cc < c; ++cc) {
                  const int32_t v =
                      static_cast<int32_t>(
                          cur.data[(static_cast<std::size_t>(oh + i) * w + (ow + j)) * c + cc]) -
                      src.zero_point;
                  const int8_t* kk = &l.weights[((static_cast<std::size_t>(i) * kw + j) * c + cc) * kn];
                  for (int k = 0; k < kn; ++k) acc[static_cast<std::size_t>(k)] += v * kk[k];
                }
            int8_t* dst_px = &out.data[(static_cast<std::size_t>(oh) * out.shape[1] + ow) * kn];
            for (int k = 0; k < kn; ++k) {
              int8_t q = requantize(acc[static_cast<std::size_t>(k)], rq);
              if (l.act == Activation::relu) q = std::max(q, static_cast<int8_t>(dst.zero_point));
              dst_px[k] = q;
            }
          }
        }
        cur = std::move(out);
        break;
      }
      case LayerKind::dense: {
        const int out_n = l.weight_shape[0], in_n = l.weight_shape[1];
        if (static_cast<int>(cur.data.size()) != in_n)
          throw std::runtime_error("qforward: dense input mismatch");
        const QuantParams dst = qm.boundaries[boundary + 1].params;
        RequantParams rq{src.scale * l.weight_scale / dst.scale, dst.zero_point};
        detail::QBuffer out;
        out.shape = {out_n};
        out.data.resize(static_cast<std::size_t>(out_n));
        for (int o = 0; o < out_n; ++o) {
          int32_t acc = l.bias[static_cast<std::size_t>(o)];
          const int8_t* row = &l.weights[static_cast<std::size_t>(o) * in_n];
          for (int i = 0; i < in_n; ++i)
            acc += (static_cast<int32_t>(cur.data[static_cast<std::size_t>(i)]) - src.zero_point) *
                   row[i];
          int8_t q = requantize(acc, rq);
          if (l.act == Activation::relu) q = std::max(q, static_cast<int8_t>(dst.zero_point));
          out.data[static_cast<std::size_t>(o)] = q;
        }
        cur = std::move(out);
        break;
      }
    }
    ++boundary;
  }

  const QuantParams logit_p = qm.boundaries.back().params;
  std::vector<double> logits(cur.data.size());
  for (std::size_t i = 0; i < cur.data.size(); ++i)
    logits[i] = logit_p.scale * (static_cast<int>(cur.data[i]) - logit_p.zero_point);
  return softmax(logits);
}

// ---- memory planning ---------------------------------------------------------

/// Tensor buffer accounting only; stack and runtime overhead are out of
/// scope and the JSON report says so. Pool and flatten run in place, conv
/// and dense transitions keep input and output live.
struct MemoryPlan {
  std::vector<std::size_t> buffer_bytes;  // one per boundary
  std::size_t peak_arena_bytes = 0;
  std::size_t flash_payload_bytes = 0;
};

struct Budget {
  std::size_t flash_bytes = 2'000'000;
  std::size_t ram_bytes = 512'000;
};

struct BudgetReport {
  std::size_t flash_bytes = 0;
  std::size_t flash_budget = 0;
  std::size_t ram_peak_bytes = 0;
  std::size_t ram_budget = 0;
  bool pass = false;
  long long flash_margin = 0;  // budget - used; negative = over budget
  long long ram_margin = 0;
};

namespace detail {

// kinds[i] pairs with boundary i -> i+1 (flatten excluded from boundaries)
inline MemoryPlan plan_from_shapes(const std::vector<std::vector<int>>& shapes,
                                   const std::vector<LayerKind>& kinds, std::size_t act_bytes,
                                   std::size_t payload) {
  MemoryPlan plan;
  for (const auto& s : shapes) {
    std::size_t n = act_bytes;
    for (int d : s) n *= static_cast<std::size_t>(d);
    plan.buffer_bytes.push_back(n);
  }
  for (std::size_t b = 0; b < plan.buffer_bytes.size(); ++b)
    plan.peak_arena_bytes = std::max(plan.peak_arena_bytes, plan.buffer_bytes[b]);
  for (std::size_t i = 0; i + 1 < plan.buffer_bytes.size(); ++i) {
    if (kinds[i] == LayerKind::maxpool2) continue;  // in place
    plan.peak_arena_bytes =
        std::max(plan.peak_arena_bytes, plan.buffer_bytes[i] + plan.buffer_bytes[i + 1]);
  }
  plan.flash_payload_bytes = payload;
  return plan;
}

template <class LayerSeq>
std::vector<LayerKind> transition_kinds(const LayerSeq& layers) {
  std::vector<LayerKind> kinds;
  for (const auto& l : layers)
    if (l.kind != LayerKind::flatten) kinds.push_back(l.kind);
  return kinds;
}

}  // namespace detail

inline MemoryPlan plan_memory(const QuantModel& qm) {
  return detail::plan_from_shapes(boundary_shapes(qm), detail::transition_kinds(qm.layers), 1,
                                  quant_payload_bytes(qm));
}

/// Float-engine plan: same graph, 4-byte activations, float32 payload.
template <class T>
MemoryPlan plan_memory(const ModelT<T>& m) {
  return detail::plan_from_shapes(boundary_shapes(m), detail::transition_kinds(m.layers), 4,
                                  float_payload_bytes(m));
}

inline BudgetReport check_budget(const MemoryPlan& plan, const Budget& b) {
  BudgetReport r;
  r.flash_bytes = plan.flash_payload_bytes;
  r.flash_budget = b.flash_bytes;
  r.ram_peak_bytes = plan.peak_arena_bytes;
  r.ram_budget = b.ram_bytes;
  r.flash_margin = static_cast<long long>(b.flash_bytes) - static_cast<long long>(plan.flash_payload_bytes);
  r.ram_margin = static_cast<long long>(b.ram_bytes) - static_cast<long long>(plan.peak_arena_bytes);
  r.pass = r.flash_margin >= 0 && r.ram_margin >= 0;
  return r;
}

inline nlohmann::json budget_report_json(const BudgetReport& r, const MemoryPlan& plan) {
  nlohmann::json j;
  j["flash_bytes"] = r.flash_bytes;
  j["flash_budget"] = r.flash_budget;
  j["ram_peak_bytes"] = r.ram_peak_bytes;
  j["ram_budget"] = r.ram_budget;
  j["pass"] = r.pass;
  j["margins"] = {{"flash_bytes", r.flash_margin}, {"ram_bytes", r.ram_margin}};
  j["buffers"] = plan.buffer_bytes;
  j["ram_coverage"] = "tensor buffers only; stack and runtime overhead excluded";
  return j;
}

}  // namespace ppgstress
