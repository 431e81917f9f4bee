#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ppgstress/compress.hpp"
#include "ppgstress/rng.hpp"

using namespace ppgstress;

namespace {

ModelSpec small_spec() {
  ModelSpec s;
  s.input_h = s.input_w = 16;
  s.conv1_filters = 2;
  s.conv2_filters = 3;
  s.hidden_units = 3;
  s.second_pool = false;
  return s;
}

Tensor random_image(const ModelSpec& spec, uint64_t seed) {
  Rng rng(seed);
  Tensor x({spec.input_h, spec.input_w, spec.input_c});
  for (auto& v : x.data) v = static_cast<float>(rng.uniform());
  return x;
}

}  // namespace

TEST_CASE("round_half_even breaks ties toward even") {
  REQUIRE(round_half_even(0.5) == 0.0);
  REQUIRE(round_half_even(1.5) == 2.0);
  REQUIRE(round_half_even(2.5) == 2.0);
  REQUIRE(round_half_even(-0.5) == 0.0);
  REQUIRE(round_half_even(-1.5) == -2.0);
  REQUIRE(round_half_even(-2.5) == -2.0);
  REQUIRE(round_half_even(0.49999) == 0.0);
  REQUIRE(round_half_even(3.0) == 3.0);
  REQUIRE(round_half_even(2.51) == 3.0);
}

TEST_CASE("symmetric quantization reference values") {
  const auto qt = quantize_tensor(std::vector<float>{-1.0f, 0.5f, 1.0f}, QuantMode::symmetric);
  REQUIRE(qt.scale == Catch::Approx(1.0 / 127.0).epsilon(1e-12));
  REQUIRE(qt.zero_point == 0);
  REQUIRE(qt.q[0] == -127);
  REQUIRE(qt.q[1] == 64);  // 63.5 rounds to even
  REQUIRE(qt.q[2] == 127);
}

TEST_CASE("all-zero tensors quantize to the unit scale") {
  const auto qt = quantize_tensor(std::vector<float>(10, 0.0f), QuantMode::symmetric);
  REQUIRE(qt.scale == 1.0);
  REQUIRE(qt.zero_point == 0);
  for (int8_t q : qt.q) REQUIRE(q == 0);
}

TEST_CASE("symmetric round trip error stays within half a step") {
  Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<float> xs(64);
    const double span = rng.uniform(0.01, 10.0);
    for (auto& v : xs) v = static_cast<float>(rng.uniform(-span, span));
    const auto qt = quantize_tensor(xs, QuantMode::symmetric);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double back = qt.scale * qt.q[i];
      REQUIRE(std::abs(xs[i] - back) <= qt.scale * 0.5 + 1e-12);
    }
  }
}

TEST_CASE("constant tensors survive quantization nearly exactly") {
  for (double c : {0.3, -2.5, 100.0}) {
    const auto qt = quantize_tensor(std::vector<double>(5, c), QuantMode::symmetric);
    for (int8_t q : qt.q) REQUIRE(std::abs(c - qt.scale * q) <= std::abs(c) / 127.0);
  }
}

TEST_CASE("affine parameters cover the calibrated range") {
  const QuantParams p = affine_params({-1.0, 3.0});
  REQUIRE(p.scale == Catch::Approx(4.0 / 255.0).epsilon(1e-12));
  REQUIRE(p.zero_point == -64);  // -lo/scale = 63.75 rounds to 64

  const QuantParams q = affine_params({0.0, 6.0});
  REQUIRE(q.scale == Catch::Approx(6.0 / 255.0).epsilon(1e-12));
  REQUIRE(q.zero_point == -128);

  // ranges not containing zero widen to include it
  const QuantParams r = affine_params({2.0, 6.0});
  REQUIRE(r.scale == Catch::Approx(6.0 / 255.0).epsilon(1e-12));
  REQUIRE(r.zero_point == -128);

  const QuantParams z = affine_params({0.0, 0.0});
  REQUIRE(z.scale == Catch::Approx(1.0 / 255.0).epsilon(1e-12));
  REQUIRE(z.zero_point == -128);
}

TEST_CASE("pruning keeps the largest-norm hidden units in index order") {
  auto m = build_model<float>(small_spec(), 50);
  auto& hidden = m.layers[m.layers.size() - 2];
  auto& head = m.layers.back();
  const int in_n = hidden.weights.dim(1);
  for (auto& v : hidden.weights.data) v = 0.0f;
  hidden.weights.data[0 * static_cast<std::size_t>(in_n)] = 3.0f;
  hidden.weights.data[1 * static_cast<std::size_t>(in_n)] = 1.0f;
  hidden.weights.data[2 * static_cast<std::size_t>(in_n)] = 2.0f;
  hidden.bias = {0.5f, 0.25f, 0.125f};
  for (std::size_t i = 0; i < head.weights.data.size(); ++i)
    head.weights.data[i] = static_cast<float>(i + 1);  // (2 classes, 3 units): 1..6

  const auto pruned = prune_dense_units(m, PruneConfig{2});
  const auto& ph = pruned.layers[pruned.layers.size() - 2];
  const auto& po = pruned.layers.back();
  REQUIRE(ph.weights.dim(0) == 2);
  REQUIRE(ph.weights.data[0] == 3.0f);
  REQUIRE(ph.weights.data[static_cast<std::size_t>(in_n)] == 2.0f);
  const std::vector<float> want_bias{0.5f, 0.125f};
  REQUIRE(ph.bias == want_bias);
  // head columns follow the kept units: unit 1 dropped
  const std::vector<int> want_head_shape{2, 2};
  const std::vector<float> want_head{1.0f, 3.0f, 4.0f, 6.0f};
  REQUIRE(po.weights.shape == want_head_shape);
  REQUIRE(po.weights.data == want_head);

  // earlier layers are untouched
  REQUIRE(pruned.layers[0].weights.data == m.layers[0].weights.data);
  boundary_shapes(pruned);
}

TEST_CASE("pruning ties break toward the lower unit index") {
  auto m = build_model<float>(small_spec(), 51);
  auto& hidden = m.layers[m.layers.size() - 2];
  const int in_n = hidden.weights.dim(1);
  for (auto& v : hidden.weights.data) v = 0.0f;
  hidden.weights.data[0 * static_cast<std::size_t>(in_n)] = 1.0f;
  hidden.weights.data[1 * static_cast<std::size_t>(in_n)] = 1.0f;
  hidden.weights.data[2 * static_cast<std::size_t>(in_n)] = 2.0f;
  hidden.bias = {0.0f, 0.0f, 0.0f};
  const auto pruned = prune_dense_units(m, PruneConfig{2});
  const auto& ph = pruned.layers[pruned.layers.size() - 2];
  // norms tie at 1.0 between units 0 and 1; the lower index survives, and
  // rows come back in unit-index order
  REQUIRE(ph.weights.data[0 * static_cast<std::size_t>(in_n)] == 1.0f);
  REQUIRE(ph.weights.data[1 * static_cast<std::size_t>(in_n)] == 2.0f);
}

TEST_CASE("keeping the full width is the identity and bounds are enforced") {
  const auto m = build_model<float>(small_spec(), 52);
  const auto same = prune_dense_units(m, PruneConfig{3});
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    REQUIRE(same.layers[li].weights.data == m.layers[li].weights.data);
    REQUIRE(same.layers[li].bias == m.layers[li].bias);
  }
  REQUIRE_THROWS_WITH(prune_dense_units(m, PruneConfig{4}),
                      Catch::Matchers::ContainsSubstring("outside [1, 3]"));
  REQUIRE_THROWS(prune_dense_units(m, PruneConfig{0}));
}

TEST_CASE("default model pruning arithmetic") {
  const auto m = build_default_model(1);
  const auto pruned = prune_dense_units(m, PruneConfig{});
  REQUIRE(parameter_count(pruned) == 1624834);
  REQUIRE(float_payload_bytes(pruned) == 6499336);
  // dropped: 256 hidden rows of 12544+1 and 2x256 head columns
  const std::size_t dropped = 256u * 12545u + 2u * 256u;
  REQUIRE(float_payload_bytes(m) - 4u * dropped == float_payload_bytes(pruned));
}

TEST_CASE("calibration ranges are monotone in the calibration set") {
  const ModelSpec spec = small_spec();
  const auto m = build_model<float>(spec, 53);
  std::vector<Tensor> a{random_image(spec, 1), random_image(spec, 2)};
  std::vector<Tensor> ab = a;
  ab.push_back(random_image(spec, 3));
  ab.push_back(random_image(spec, 4));

  const auto ra = calibrate(m, a);
  const auto rab = calibrate(m, ab);
  REQUIRE(ra.size() == boundary_shapes(m).size());
  REQUIRE(ra.size() == rab.size());
  for (std::size_t b = 0; b < ra.size(); ++b) {
    REQUIRE(rab[b].lo <= ra[b].lo);
    REQUIRE(rab[b].hi >= ra[b].hi);
    REQUIRE(ra[b].lo <= 0.0);
    REQUIRE(ra[b].hi >= 0.0);
  }
  // boundaries behind a ReLU (and the non-negative input) pin lo at zero
  for (std::size_t b = 0; b + 1 < ra.size(); ++b) REQUIRE(ra[b].lo == 0.0);
}

TEST_CASE("calibration widens degenerate ranges and rejects empty sets") {
  const ModelSpec spec = small_spec();
  auto m = build_model<float>(spec, 54);
  for (auto& l : m.layers) {
    for (auto& v : l.weights.data) v = 0.0f;
    for (auto& v : l.bias) v = 0.0f;
  }
  Tensor zero({spec.input_h, spec.input_w, 1});
  const auto ranges = calibrate(m, std::vector<Tensor>{zero});
  for (std::size_t b = 0; b + 1 < ranges.size(); ++b) {
    REQUIRE(ranges[b].lo == 0.0);
    REQUIRE(ranges[b].hi == 1.0);
  }
  // softmax output is a nonzero simplex even for a zero model
  REQUIRE(ranges.back().hi == 0.5);

  REQUIRE_THROWS_WITH(calibrate(m, std::vector<Tensor>{}),
                      Catch::Matchers::ContainsSubstring("empty calibration set"));
}

TEST_CASE("quantized payload arithmetic for the pruned default model") {
  const auto m = build_default_model(2);
  const auto pruned = prune_dense_units(m, PruneConfig{});
  std::vector<ActivationRange> ranges(boundary_shapes(pruned).size(), ActivationRange{0.0, 1.0});
  const QuantModel qm = quantize_ptq(pruned, ranges);
  // int8 weights byte-per-parameter, int32 biases four
  const std::size_t bias_count = 32 + 64 + 128 + 2;
  REQUIRE(quant_payload_bytes(qm) == (1624834 - bias_count) + 4 * bias_count);
  REQUIRE(quant_payload_bytes(qm) == 1625512);
  REQUIRE(qm.boundaries.size() == 7);
}

TEST_CASE("quantization verifies the boundary range count") {
  const auto m = build_model<float>(small_spec(), 55);
  std::vector<ActivationRange> four(4, ActivationRange{0.0, 1.0});
  REQUIRE_THROWS_WITH(quantize_ptq(m, four),
                      Catch::Matchers::ContainsSubstring("expected 6 boundary ranges, got 4"));
}

TEST_CASE("quantized weights reconstruct within half a step elementwise") {
  const ModelSpec spec = small_spec();
  const auto m = build_model<float>(spec, 56);
  const auto ranges = calibrate(m, std::vector<Tensor>{random_image(spec, 5)});
  const QuantModel qm = quantize_ptq(m, ranges);
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    const auto& fl = m.layers[li];
    const auto& ql = qm.layers[li];
    if (fl.kind != LayerKind::conv2d && fl.kind != LayerKind::dense) continue;
    REQUIRE(ql.weights.size() == fl.weights.data.size());
    for (std::size_t i = 0; i < ql.weights.size(); ++i) {
      const double back = ql.weight_scale * ql.weights[i];
      REQUIRE(std::abs(fl.weights.data[i] - back) <= ql.weight_scale * 0.5 + 1e-12);
    }
  }
}
