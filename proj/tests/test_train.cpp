#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "ppgstress/train.hpp"

using namespace ppgstress;

namespace {

ModelSpec reduced_spec_8() {
  ModelSpec s;
  s.input_h = s.input_w = 8;
  s.conv1_filters = 3;
  s.conv2_filters = 4;
  s.hidden_units = 8;
  s.second_pool = false;
  return s;
}

ModelSpec reduced_spec_14() {
  ModelSpec s;
  s.input_h = s.input_w = 14;
  s.conv1_filters = 3;
  s.conv2_filters = 4;
  s.hidden_units = 8;
  s.second_pool = true;
  return s;
}

std::vector<TensorT<double>> random_inputs(const ModelSpec& spec, uint64_t seed, int n) {
  Rng rng(seed);
  std::vector<TensorT<double>> xs;
  for (int i = 0; i < n; ++i) {
    TensorT<double> x({spec.input_h, spec.input_w, spec.input_c});
    for (auto& v : x.data) v = rng.uniform();
    xs.push_back(std::move(x));
  }
  return xs;
}

double batch_loss(const ModelT<double>& m, const std::vector<TensorT<double>>& xs,
                  const std::vector<int>& ys) {
  double acc = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) acc += crossentropy(forward_single(m, xs[i]), ys[i]);
  return acc / static_cast<double>(xs.size());
}

// Central finite differences against every parameter. Near-zero entries
// (dead ReLU paths) are excluded from the relative comparison and must
// instead agree absolutely.
void finite_difference_check(const ModelSpec& spec, uint64_t wseed, uint64_t xseed) {
  ModelT<double> m = build_model<double>(spec, wseed);
  auto xs = random_inputs(spec, xseed, 3);
  std::vector<int> ys{0, 1, 0};
  const auto res = backward(m, xs, ys);

  const double h = 1e-3;
  double worst = 0.0;
  int checked = 0;
  auto probe = [&](std::vector<double>& params, const std::vector<double>& g) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double orig = params[i];
      params[i] = orig + h;
      const double lp = batch_loss(m, xs, ys);
      params[i] = orig - h;
      const double lm = batch_loss(m, xs, ys);
      params[i] = orig;
      const double fd = (lp - lm) / (2.0 * h);
      const double denom = std::max(std::abs(fd), std::abs(g[i]));
      if (denom < 1e-6) {
        REQUIRE(std::abs(fd - g[i]) < 1e-9);
        continue;
      }
      worst = std::max(worst, std::abs(fd - g[i]) / denom);
      ++checked;
    }
  };
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    auto& l = m.layers[li];
    if (l.kind != LayerKind::conv2d && l.kind != LayerKind::dense) continue;
    probe(l.weights.data, res.grads.layers[li].weights.data);
    probe(l.bias, res.grads.layers[li].bias);
  }
  REQUIRE(checked > 50);
  REQUIRE(worst < 1e-4);
}

ScalogramImage hot_row_image(int cls, int jitter) {
  ScalogramImage img;
  img.label = cls;
  const int base = cls == 0 ? 10 : 44;
  for (int r = base; r < base + 8; ++r)
    for (int c = 0; c < kImageSize; ++c)
      img.at(r, c) = 1.0f - 0.01f * static_cast<float>((jitter + c) % 7);
  return img;
}

std::vector<ScalogramImage> toy_dataset(int per_class) {
  std::vector<ScalogramImage> images;
  for (int i = 0; i < per_class; ++i) images.push_back(hot_row_image(0, i));
  for (int i = 0; i < per_class; ++i) images.push_back(hot_row_image(1, i));
  return images;
}

AugmentParams no_augment() {
  AugmentParams a;
  a.max_rotation_deg = 0.0;
  a.max_shift_fraction = 0.0;
  a.flip_probability = 0.0;
  return a;
}

}  // namespace

TEST_CASE("crossentropy reference values") {
  REQUIRE(crossentropy(std::vector<double>{0.5, 0.5}, 0) ==
          Catch::Approx(std::log(2.0)).epsilon(1e-12));
  REQUIRE(crossentropy(std::vector<double>{1.0, 0.0}, 0) == 0.0);
  // probability floor keeps the zero-probability loss finite
  REQUIRE(crossentropy(std::vector<double>{0.0, 1.0}, 0) ==
          Catch::Approx(-std::log(1e-12)).epsilon(1e-12));
  REQUIRE_THROWS_WITH(crossentropy(std::vector<double>{0.5, 0.5}, 2),
                      Catch::Matchers::ContainsSubstring("out of range"));
  REQUIRE_THROWS_WITH(crossentropy(std::vector<double>{0.5, 0.5}, -1),
                      Catch::Matchers::ContainsSubstring("out of range"));
}

TEST_CASE("zero model with balanced labels has exactly zero head bias gradient") {
  auto m = build_model<float>(reduced_spec_8(), 4);
  for (auto& l : m.layers) {
    for (auto& v : l.weights.data) v = 0.0f;
    for (auto& v : l.bias) v = 0.0f;
  }
  Rng rng(5);
  std::vector<Tensor> batch;
  for (int i = 0; i < 2; ++i) {
    Tensor x({8, 8, 1});
    for (auto& v : x.data) v = static_cast<float>(rng.uniform());
    batch.push_back(std::move(x));
  }
  const auto res = backward(m, batch, std::vector<int>{0, 1});
  // softmax of zero logits is uniform, so the two deltas cancel exactly
  const auto& head_bias_grad = res.grads.layers.back().bias;
  REQUIRE(head_bias_grad.size() == 2);
  REQUIRE(head_bias_grad[0] == 0.0f);
  REQUIRE(head_bias_grad[1] == 0.0f);
  for (std::size_t i = 0; i < res.probs.data.size(); ++i) REQUIRE(res.probs.data[i] == 0.5f);
  REQUIRE(res.mean_loss == Catch::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("backward matches central finite differences on a single-pool network") {
  finite_difference_check(reduced_spec_8(), 21, 101);
}

TEST_CASE("backward matches central finite differences on a two-pool network") {
  finite_difference_check(reduced_spec_14(), 22, 102);
}

TEST_CASE("duplicating the batch leaves the mean gradient unchanged") {
  const ModelSpec spec = reduced_spec_8();
  const auto m = build_model<double>(spec, 31);
  auto xs = random_inputs(spec, 131, 1);
  const auto single = backward(m, xs, std::vector<int>{1});
  xs.push_back(xs[0]);
  const auto doubled = backward(m, xs, std::vector<int>{1, 1});
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    const auto& a = single.grads.layers[li];
    const auto& b = doubled.grads.layers[li];
    for (std::size_t i = 0; i < a.weights.data.size(); ++i)
      REQUIRE(a.weights.data[i] == Catch::Approx(b.weights.data[i]).margin(1e-9));
    for (std::size_t i = 0; i < a.bias.size(); ++i)
      REQUIRE(a.bias[i] == Catch::Approx(b.bias[i]).margin(1e-9));
  }
}

TEST_CASE("adam first step moves by almost exactly the learning rate") {
  auto m = build_model<double>(reduced_spec_8(), 6);
  auto st = make_adam(m, 0.001);
  auto grads = detail::zero_gradients(m);
  for (auto& lg : grads.layers) {
    for (auto& v : lg.weights.data) v = 0.5;
    for (auto& v : lg.bias) v = 0.5;
  }
  const double before = m.layers[0].weights.data[0];
  adam_step(m, grads, st);
  const double update = m.layers[0].weights.data[0] - before;
  // bias-corrected first step: -lr * g / (|g| + eps)
  REQUIRE(std::abs(update + 0.001) < 1e-9);
  REQUIRE(st.t == 1);
}

TEST_CASE("adam leaves parameters alone under zero gradients") {
  auto m = build_model<double>(reduced_spec_8(), 7);
  const auto before = m;
  auto st = make_adam(m, 0.01);
  const auto grads = detail::zero_gradients(m);
  adam_step(m, grads, st);
  adam_step(m, grads, st);
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    REQUIRE(m.layers[li].weights.data == before.layers[li].weights.data);
    REQUIRE(m.layers[li].bias == before.layers[li].bias);
  }
}

TEST_CASE("adam three-step trajectory matches the hand recurrence") {
  auto m = build_model<double>(reduced_spec_8(), 8);
  auto st = make_adam(m, 0.001);
  auto grads = detail::zero_gradients(m);
  for (auto& lg : grads.layers) {
    for (auto& v : lg.weights.data) v = 1.0;
    for (auto& v : lg.bias) v = 1.0;
  }
  const double x0 = m.layers.back().bias[0];
  for (int i = 0; i < 3; ++i) adam_step(m, grads, st);

  double x = x0, mm = 0.0, vv = 0.0;
  for (int t = 1; t <= 3; ++t) {
    mm = 0.9 * mm + 0.1 * 1.0;
    vv = 0.999 * vv + 0.001 * 1.0;
    const double mhat = mm / (1.0 - std::pow(0.9, t));
    const double vhat = vv / (1.0 - std::pow(0.999, t));
    x -= 0.001 * mhat / (std::sqrt(vhat) + 1e-8);
  }
  REQUIRE(std::abs(m.layers.back().bias[0] - x) < 1e-12);
}

TEST_CASE("adam first step opposes the gradient sign on real gradients") {
  const ModelSpec spec = reduced_spec_8();
  auto m = build_model<double>(spec, 9);
  const auto xs = random_inputs(spec, 109, 4);
  const auto res = backward(m, xs, std::vector<int>{0, 1, 1, 0});
  const auto before = m;
  auto st = make_adam(m, 0.001);
  adam_step(m, res.grads, st);
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    const auto& g = res.grads.layers[li].weights.data;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (std::abs(g[i]) < 1e-3) continue;
      const double update = m.layers[li].weights.data[i] - before.layers[li].weights.data[i];
      const double sign = g[i] > 0.0 ? 1.0 : -1.0;
      REQUIRE(std::abs(update + 0.001 * sign) < 0.001 * 1e-3);
    }
  }
}

TEST_CASE("adam rejects non-finite gradients with the layer name") {
  auto m = build_model<double>(reduced_spec_8(), 10);
  auto st = make_adam(m, 0.001);
  auto grads = detail::zero_gradients(m);
  // layer order: conv, pool, conv, flatten, dense, dense
  auto& hidden = grads.layers[m.layers.size() - 2];
  hidden.weights.data[3] = std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_WITH(adam_step(m, grads, st),
                      Catch::Matchers::ContainsSubstring("dense1.weights"));
}

TEST_CASE("training history covers every epoch and is reproducible") {
  ModelSpec spec;
  spec.conv1_filters = 4;
  spec.conv2_filters = 8;
  spec.hidden_units = 16;
  const auto start = build_model<float>(spec, 40);
  const auto images = toy_dataset(8);

  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.val_split = 0.25;
  cfg.seed = 12;
  cfg.augment = no_augment();

  const auto a = train(start, images, cfg);
  const auto b = train(start, images, cfg);
  REQUIRE(a.history.epochs.size() == 2);
  REQUIRE(a.history.epochs[0].epoch == 1);
  REQUIRE(a.history.epochs[1].epoch == 2);
  for (std::size_t li = 0; li < a.model.layers.size(); ++li) {
    REQUIRE(a.model.layers[li].weights.data == b.model.layers[li].weights.data);
    REQUIRE(a.model.layers[li].bias == b.model.layers[li].bias);
  }
  REQUIRE(a.train_indices == b.train_indices);
  REQUIRE(a.val_indices == b.val_indices);
  for (std::size_t i = 0; i < 2; ++i) {
    REQUIRE(a.history.epochs[i].train_acc == b.history.epochs[i].train_acc);
    REQUIRE(a.history.epochs[i].val_acc == b.history.epochs[i].val_acc);
    REQUIRE(a.history.epochs[i].mean_loss == b.history.epochs[i].mean_loss);
  }
}

TEST_CASE("training separates a trivially separable dataset") {
  ModelSpec spec;
  spec.conv1_filters = 4;
  spec.conv2_filters = 8;
  spec.hidden_units = 16;
  const auto start = build_model<float>(spec, 41);
  const auto images = toy_dataset(12);

  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 8;
  cfg.val_split = 0.25;
  cfg.seed = 13;
  cfg.augment = no_augment();
  cfg.learning_rate = 0.005;

  const auto res = train(start, images, cfg);
  double best_train = 0.0;
  for (const auto& e : res.history.epochs) best_train = std::max(best_train, e.train_acc);
  REQUIRE(best_train == 1.0);
  REQUIRE(res.history.epochs.back().mean_loss < res.history.epochs.front().mean_loss);
  REQUIRE(res.history.epochs.back().val_acc == 1.0);
}

TEST_CASE("training validates its inputs") {
  ModelSpec spec;
  spec.conv1_filters = 2;
  spec.conv2_filters = 2;
  spec.hidden_units = 4;
  const auto start = build_model<float>(spec, 42);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.augment = no_augment();

  SECTION("single class") {
    std::vector<ScalogramImage> images{hot_row_image(0, 0), hot_row_image(0, 1)};
    for (auto& img : images) img.label = 0;
    REQUIRE_THROWS_WITH(train(start, images, cfg),
                        Catch::Matchers::ContainsSubstring("single-class"));
  }
  SECTION("unlabeled image") {
    std::vector<ScalogramImage> images = toy_dataset(2);
    images[1].label.reset();
    REQUIRE_THROWS_WITH(train(start, images, cfg),
                        Catch::Matchers::ContainsSubstring("unlabeled image at index 1"));
  }
  SECTION("undersized class") {
    std::vector<ScalogramImage> images{hot_row_image(0, 0), hot_row_image(0, 1),
                                       hot_row_image(0, 2), hot_row_image(1, 0)};
    REQUIRE_THROWS_WITH(train(start, images, cfg),
                        Catch::Matchers::ContainsSubstring("class 1 has fewer than 2"));
  }
  SECTION("config bounds") {
    TrainConfig bad = cfg;
    bad.epochs = 0;
    std::vector<ScalogramImage> images = toy_dataset(2);
    REQUIRE_THROWS(train(start, images, bad));
    bad = cfg;
    bad.val_split = 1.0;
    REQUIRE_THROWS(train(start, images, bad));
  }
}

TEST_CASE("the split is stratified and covers the dataset") {
  ModelSpec spec;
  spec.conv1_filters = 2;
  spec.conv2_filters = 2;
  spec.hidden_units = 4;
  const auto start = build_model<float>(spec, 43);

  std::vector<ScalogramImage> images;
  for (int i = 0; i < 10; ++i) images.push_back(hot_row_image(0, i));
  for (int i = 0; i < 6; ++i) images.push_back(hot_row_image(1, i));

  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 16;
  cfg.val_split = 0.25;
  cfg.seed = 14;
  cfg.augment = no_augment();

  const auto res = train(start, images, cfg);
  auto count_labels = [&](const std::vector<std::size_t>& idx, int cls) {
    std::size_t n = 0;
    for (std::size_t i : idx) n += *images[i].label == cls ? 1 : 0;
    return n;
  };
  // 10 * 0.25 and 6 * 0.25 round to 3 and 2 held-out examples
  REQUIRE(res.val_indices.size() == 5);
  REQUIRE(res.train_indices.size() == 11);
  REQUIRE(count_labels(res.val_indices, 0) == 3);
  REQUIRE(count_labels(res.val_indices, 1) == 2);
  std::vector<bool> seen(images.size(), false);
  for (std::size_t i : res.train_indices) seen[i] = true;
  for (std::size_t i : res.val_indices) {
    REQUIRE_FALSE(seen[i]);  // disjoint
    seen[i] = true;
  }
  for (bool s : seen) REQUIRE(s);
}

TEST_CASE("history serializers carry every epoch row") {
  TrainHistory h;
  h.epochs.push_back({1, 0.5, 0.25, 1.5});
  h.epochs.push_back({2, 0.75, 0.5, 0.75});
  const std::string csv = history_csv(h);
  REQUIRE(csv.rfind("epoch,train_acc,val_acc,loss\n", 0) == 0);
  REQUIRE(csv.find("1,0.5,0.25,1.5\n") != std::string::npos);
  REQUIRE(csv.find("2,0.75,0.5,0.75\n") != std::string::npos);

  const auto j = history_json(h);
  REQUIRE(j.at("epochs").size() == 2);
  REQUIRE(j.at("epochs")[1].at("val_acc").get<double>() == 0.5);
  REQUIRE(j.at("epochs")[0].at("epoch").get<int>() == 1);
}
