#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "ppgstress/model_io.hpp"
#include "ppgstress/qengine.hpp"
#include "ppgstress/rng.hpp"

using namespace ppgstress;
namespace fs = std::filesystem;

namespace {

ScalogramImage random_scalogram(uint64_t seed) {
  Rng rng(seed);
  ScalogramImage img;
  for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
  return img;
}

QuantModel reduced_quant_model(uint64_t seed) {
  ModelSpec spec;
  spec.conv1_filters = 4;
  spec.conv2_filters = 8;
  spec.hidden_units = 16;
  const auto m = build_model<float>(spec, seed);
  std::vector<Tensor> calib;
  for (uint64_t i = 0; i < 2; ++i) calib.push_back(image_tensor<float>(random_scalogram(seed + i)));
  return quantize_ptq(m, calibrate(m, calib));
}

}  // namespace

TEST_CASE("requantize reference values") {
  REQUIRE(requantize(100, RequantParams{0.5, 0}) == 50);
  REQUIRE(requantize(100, RequantParams{0.5, 10}) == 60);
  REQUIRE(requantize(5, RequantParams{0.5, 0}) == 2);    // 2.5 rounds to even
  REQUIRE(requantize(10000, RequantParams{0.1, 0}) == 127);
  REQUIRE(requantize(-10000, RequantParams{0.1, 0}) == -128);
  REQUIRE(requantize(0, RequantParams{0.3, -7}) == -7);
}

TEST_CASE("memory plan for the pruned quantized default model") {
  const auto m = build_default_model(60);
  const auto pruned = prune_dense_units(m, PruneConfig{});
  std::vector<ActivationRange> ranges(7, ActivationRange{0.0, 1.0});
  const QuantModel qm = quantize_ptq(pruned, ranges);
  const MemoryPlan plan = plan_memory(qm);

  const std::vector<std::size_t> want{4096, 123008, 30752, 53824, 12544, 128, 2};
  REQUIRE(plan.buffer_bytes == want);
  // peak is the first conv transition; pools run in place
  REQUIRE(plan.peak_arena_bytes == 127104);
  REQUIRE(plan.flash_payload_bytes == 1625512);
}

TEST_CASE("memory plan for the float default model") {
  const auto m = build_default_model(61);
  const MemoryPlan plan = plan_memory(m);
  REQUIRE(plan.buffer_bytes.size() == 7);
  REQUIRE(plan.buffer_bytes[0] == 16384);
  REQUIRE(plan.buffer_bytes[1] == 492032);
  REQUIRE(plan.peak_arena_bytes == 508416);
  REQUIRE(plan.flash_payload_bytes == 19347464);
}

TEST_CASE("plans depend only on the graph shape") {
  const auto a = plan_memory(build_default_model(1));
  const auto b = plan_memory(build_default_model(99));
  REQUIRE(a.buffer_bytes == b.buffer_bytes);
  REQUIRE(a.peak_arena_bytes == b.peak_arena_bytes);
  REQUIRE(a.flash_payload_bytes == b.flash_payload_bytes);
  for (std::size_t bytes : a.buffer_bytes) REQUIRE(a.peak_arena_bytes >= bytes);
}

TEST_CASE("a zeroed model infers an exactly uniform posterior") {
  ModelSpec spec;
  spec.conv1_filters = 2;
  spec.conv2_filters = 2;
  spec.hidden_units = 4;
  auto m = build_model<float>(spec, 62);
  for (auto& l : m.layers) {
    for (auto& v : l.weights.data) v = 0.0f;
    for (auto& v : l.bias) v = 0.0f;
  }
  std::vector<ActivationRange> ranges(7, ActivationRange{0.0, 1.0});
  const QuantModel qm = quantize_ptq(m, ranges);
  const auto p = qforward(qm, random_scalogram(63));
  REQUIRE(p.size() == 2);
  REQUIRE(p[0] == 0.5);
  REQUIRE(p[1] == 0.5);
}

TEST_CASE("integer inference is deterministic and produces a simplex") {
  const QuantModel qm = reduced_quant_model(64);
  const ScalogramImage img = random_scalogram(65);
  const auto p1 = qforward(qm, img);
  const auto p2 = qforward(qm, img);
  REQUIRE(p1 == p2);
  REQUIRE(p1.size() == 2);
  REQUIRE(p1[0] >= 0.0);
  REQUIRE(p1[1] >= 0.0);
  REQUIRE(p1[0] + p1[1] == Catch::Approx(1.0).epsilon(1e-12));

  // distinct inputs move the posterior for a non-degenerate model
  const auto p3 = qforward(qm, random_scalogram(66));
  REQUIRE((p1[0] != p3[0] || p1[1] != p3[1]));
}

TEST_CASE("qforward rejects models that do not take a 64x64 image") {
  QuantModel qm = reduced_quant_model(67);
  qm.input_h = 32;
  REQUIRE_THROWS_WITH(qforward(qm, random_scalogram(68)),
                      Catch::Matchers::ContainsSubstring("64x64x1"));
}

TEST_CASE("quantized model serialization round trip") {
  const QuantModel qm = reduced_quant_model(69);
  const auto path = (fs::temp_directory_path() / "ppg_qengine_round.sdm").string();
  save_model(qm, path);
  REQUIRE(is_quantized_model_file(detail::read_file(path)));
  const QuantModel back = load_quant_model(path);

  REQUIRE(back.layers.size() == qm.layers.size());
  for (std::size_t i = 0; i < qm.layers.size(); ++i) {
    REQUIRE(back.layers[i].kind == qm.layers[i].kind);
    REQUIRE(back.layers[i].weights == qm.layers[i].weights);
    REQUIRE(back.layers[i].weight_scale == qm.layers[i].weight_scale);
    REQUIRE(back.layers[i].bias == qm.layers[i].bias);
    REQUIRE(back.layers[i].bias_scale == qm.layers[i].bias_scale);
  }
  REQUIRE(back.boundaries.size() == qm.boundaries.size());
  for (std::size_t b = 0; b < qm.boundaries.size(); ++b) {
    REQUIRE(back.boundaries[b].params.scale == qm.boundaries[b].params.scale);
    REQUIRE(back.boundaries[b].params.zero_point == qm.boundaries[b].params.zero_point);
    REQUIRE(back.boundaries[b].range.lo == qm.boundaries[b].range.lo);
    REQUIRE(back.boundaries[b].range.hi == qm.boundaries[b].range.hi);
  }
  const ScalogramImage img = random_scalogram(70);
  REQUIRE(qforward(back, img) == qforward(qm, img));
}

TEST_CASE("budget verdicts for the reference models") {
  const auto base = build_default_model(71);

  SECTION("pruned and quantized fits") {
    const auto pruned = prune_dense_units(base, PruneConfig{});
    std::vector<ActivationRange> ranges(7, ActivationRange{0.0, 1.0});
    const auto report = check_budget(plan_memory(quantize_ptq(pruned, ranges)), Budget{});
    REQUIRE(report.pass);
    REQUIRE(report.flash_margin == 2000000 - 1625512);
    REQUIRE(report.ram_margin == 512000 - 127104);
  }
  SECTION("the float model blows the flash budget") {
    const auto report = check_budget(plan_memory(base), Budget{});
    REQUIRE_FALSE(report.pass);
    REQUIRE(report.flash_margin == -17347464);
    REQUIRE(report.ram_margin >= 0);  // RAM alone would fit
  }
  SECTION("an empty plan passes trivially") {
    const auto report = check_budget(MemoryPlan{}, Budget{});
    REQUIRE(report.pass);
    REQUIRE(report.flash_margin == 2000000);
    REQUIRE(report.ram_margin == 512000);
  }
  SECTION("shrinking the budget flips the verdict") {
    const auto pruned = prune_dense_units(base, PruneConfig{});
    std::vector<ActivationRange> ranges(7, ActivationRange{0.0, 1.0});
    const auto plan = plan_memory(quantize_ptq(pruned, ranges));
    REQUIRE(check_budget(plan, Budget{}).pass);
    REQUIRE_FALSE(check_budget(plan, Budget{1625511, 512000}).pass);
    REQUIRE_FALSE(check_budget(plan, Budget{2000000, 127103}).pass);
    REQUIRE(check_budget(plan, Budget{1625512, 127104}).pass);
  }
}

TEST_CASE("budget report json carries the exact key set") {
  const auto m = build_default_model(72);
  const auto plan = plan_memory(m);
  const auto j = budget_report_json(check_budget(plan, Budget{}), plan);

  const std::vector<std::string> keys{"flash_bytes", "flash_budget", "ram_peak_bytes",
                                      "ram_budget",  "pass",         "margins",
                                      "buffers",     "ram_coverage"};
  REQUIRE(j.size() == keys.size());
  for (const auto& k : keys) REQUIRE(j.contains(k));
  REQUIRE(j.at("margins").contains("flash_bytes"));
  REQUIRE(j.at("margins").contains("ram_bytes"));
  REQUIRE(j.at("pass").is_boolean());
  REQUIRE(j.at("buffers").size() == plan.buffer_bytes.size());
  REQUIRE(j.at("margins").at("flash_bytes").get<long long>() == -17347464);
}
