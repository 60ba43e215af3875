#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "srnn/train.hpp"

using namespace srnn;

namespace {

TrainConfig paper_schedule() {
  TrainConfig cfg;
  cfg.lr0 = 0.001;
  cfg.decay_every = 30;
  cfg.decay_factor = 0.1;
  cfg.epochs = 65;
  return cfg;
}

std::uint64_t fnv1a_bits(const Image<float>& img) {
  std::uint64_t h = 1469598103934665603ULL;
  for (float v : img.data.data) {
    std::uint32_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, sizeof(bits));
    for (int i = 0; i < 4; ++i) {
      h ^= (bits >> (8 * i)) & 0xFF;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

// two vertical-position classes, learnable from either scale
std::pair<Dataset<float>, Dataset<float>> toy_two_class(std::size_t count) {
  Dataset<float> ds;
  ds.classes = 2;
  ds.split = "train";
  Rng rng(77);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t label = i % 2;
    Image<float> img(1, 12, 12);
    for (std::size_t y = 0; y < 12; ++y)
      for (std::size_t x = 0; x < 12; ++x) {
        const bool bright = label == 0 ? y < 6 : y >= 6;
        img.at(0, y, x) = static_cast<float>(
            std::clamp((bright ? 0.8 : 0.2) + rng.uniform(-0.05, 0.05), 0.0, 1.0));
      }
    ds.samples.push_back({std::move(img), label});
  }
  return {ds, ds};
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("lr schedule reproduces the stated decade steps") {
  const TrainConfig cfg = paper_schedule();
  CHECK(lr_at_epoch(cfg, 0) == 0.001);
  CHECK(lr_at_epoch(cfg, 30) == doctest::Approx(0.0001).epsilon(1e-12));
  CHECK(lr_at_epoch(cfg, 60) == doctest::Approx(0.00001).epsilon(1e-12));
}

TEST_CASE("lr schedule is piecewise constant with breaks at multiples") {
  const TrainConfig cfg = paper_schedule();
  double prev = lr_at_epoch(cfg, 0);
  for (std::size_t e = 1; e <= 100; ++e) {
    const double lr = lr_at_epoch(cfg, e);
    CHECK(lr <= prev);
    if (e % cfg.decay_every == 0)
      CHECK(lr == doctest::Approx(prev * cfg.decay_factor).epsilon(1e-12));
    else
      CHECK(lr == prev);
    prev = lr;
  }
}

TEST_CASE("sgd with zero momentum and decay is plain gradient descent") {
  auto p = leaf(Tensor<double>({3}, {1.0, -2.0, 0.5}));
  p->grad = Tensor<double>({3}, {0.1, 0.2, -0.3});
  std::vector<NamedParam<double>> params = {{"w", p, true}};
  SgdNesterov<double> opt;
  opt.init(params);
  TrainConfig cfg;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  cfg.nesterov = false;
  opt.step(params, 0.5, cfg);
  CHECK(p->value[0] == 1.0 - 0.5 * 0.1);
  CHECK(p->value[1] == -2.0 - 0.5 * 0.2);
  CHECK(p->value[2] == 0.5 - 0.5 * -0.3);
}

TEST_CASE("zero gradient and zero state is a fixed point without decay") {
  auto p = leaf(Tensor<double>({2}, {3.0, -4.0}));
  p->grad = Tensor<double>({2});
  std::vector<NamedParam<double>> params = {{"w", p, false}};
  SgdNesterov<double> opt;
  opt.init(params);
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  for (int i = 0; i < 3; ++i) opt.step(params, 0.1, cfg);
  CHECK(p->value[0] == 3.0);
  CHECK(p->value[1] == -4.0);
}

TEST_CASE("three steps match a hand-rolled scalar recurrence") {
  // quadratic loss 0.5*(a*p0^2 + b*p1^2), gradients fed manually
  const double a = 2.0, b = 0.7, lr = 0.05, mu = 0.9, wd = 0.01;
  auto p = leaf(Tensor<double>({2}, {1.5, -2.5}));
  std::vector<NamedParam<double>> params = {{"w", p, true}};
  SgdNesterov<double> opt;
  opt.init(params);
  TrainConfig cfg;
  cfg.momentum = mu;
  cfg.weight_decay = wd;
  cfg.nesterov = true;

  double q0 = 1.5, q1 = -2.5, v0 = 0.0, v1 = 0.0;
  for (int step = 0; step < 3; ++step) {
    p->grad = Tensor<double>({2}, {a * p->value[0], b * p->value[1]});
    opt.step(params, lr, cfg);

    const double g0 = a * q0 + wd * q0;
    v0 = mu * v0 + g0;
    q0 -= lr * (g0 + mu * v0);
    const double g1 = b * q1 + wd * q1;
    v1 = mu * v1 + g1;
    q1 -= lr * (g1 + mu * v1);
  }
  CHECK(p->value[0] == doctest::Approx(q0).epsilon(1e-12));
  CHECK(p->value[1] == doctest::Approx(q1).epsilon(1e-12));
}

TEST_CASE("weight decay never touches bias parameters with zero gradients") {
  auto w = leaf(Tensor<double>({2}, {1.0, 2.0}));
  auto b = leaf(Tensor<double>({2}, {0.3, -0.4}));
  w->grad = Tensor<double>({2});
  b->grad = Tensor<double>({2});
  std::vector<NamedParam<double>> params = {{"w", w, true}, {"b", b, false}};
  SgdNesterov<double> opt;
  opt.init(params);
  TrainConfig cfg;  // weight_decay 1e-4 default
  for (int i = 0; i < 5; ++i) opt.step(params, 0.1, cfg);
  CHECK(b->value[0] == 0.3);
  CHECK(b->value[1] == -0.4);
  CHECK(w->value[0] != 1.0);  // decay does move the weight
}

TEST_CASE("sgd rejects mismatched state") {
  auto p = leaf(Tensor<double>({2}));
  p->grad = Tensor<double>({2});
  std::vector<NamedParam<double>> params = {{"w", p, true}};
  SgdNesterov<double> opt;  // init skipped
  TrainConfig cfg;
  CHECK_THROWS_AS(opt.step(params, 0.1, cfg), ContractError);
}

TEST_CASE("centered crop without flip reproduces the image") {
  Rng rng(5);
  Image<float> img(rand_uniform<float>({2, 9, 9}, rng, 0.0f, 1.0f));
  auto out = augment_with(img, 4, 4, false);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    CHECK(out.data[i] == img.data[i]);
}

TEST_CASE("flipping twice with the same centered crop is the identity") {
  Rng rng(6);
  Image<float> img(rand_uniform<float>({1, 8, 8}, rng, 0.0f, 1.0f));
  auto once = augment_with(img, 4, 4, true);
  auto twice = augment_with(once, 4, 4, true);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    CHECK(twice.data[i] == img.data[i]);
}

TEST_CASE("augmented output for a fixed seed is pinned") {
  SyntheticSpec spec;
  spec.train_per_class = 1;
  spec.val_per_class = 1;
  auto [train, val] = generate_scale_task<float>(spec);
  Rng rng(2024);
  Image<float> out = augment(train.samples[0].image, rng);
  // golden hash recorded from the first implementation run
  CHECK(fnv1a_bits(out) == 0xac146662441e8e32ULL);
}

TEST_CASE("crafted six-sample ranking matches hand-enumerated top-k errors") {
  Dataset<double> ds;
  ds.classes = 10;
  ds.split = "val";
  for (std::size_t i = 0; i < 6; ++i)
    ds.samples.push_back({Image<double>(1, 1, 1), i});
  std::vector<std::vector<double>> rows = {
      {9, 0, 1, 2, 3, 4, 5, 6, 7, 8},  // label 0: outright winner, rank 0
      {0, 5, 9, 0, 0, 0, 0, 0, 0, 0},  // label 1: rank 1
      {9, 8, 7, 6, 5, 4, 0, 0, 0, 0},  // label 2: rank 2
      {9, 8, 7, 2, 6, 5, 0, 0, 0, 0},  // label 3: rank 5, top-5 miss
      {0, 1, 2, 3, 7, 0, 0, 0, 0, 7},  // label 4: tie vs class 9, label wins
      {7, 1, 2, 3, 2, 7, 0, 0, 0, 0},  // label 5: tie vs class 0, label loses
  };
  auto ev = evaluate_logits(ds, 4, [&](const Dataset<double>&,
                                       const std::vector<std::size_t>& idxs) {
    Tensor<double> out({idxs.size(), 10});
    for (std::size_t i = 0; i < idxs.size(); ++i)
      for (std::size_t c = 0; c < 10; ++c)
        out.at(i, c) = rows[idxs[i]][c];
    return out;
  });
  // hand enumeration: top-1 hits = {0, 4}; top-5 hits = {0, 1, 2, 4, 5}
  CHECK(ev.top1_error == doctest::Approx(100.0 * 4.0 / 6.0).epsilon(1e-12));
  CHECK(ev.top5_error == doctest::Approx(100.0 * 1.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("all-correct and all-wrong evaluations hit the rails") {
  Dataset<double> ds;
  ds.classes = 10;
  for (std::size_t i = 0; i < 5; ++i)
    ds.samples.push_back({Image<double>(1, 1, 1), i});
  auto perfect = evaluate_logits(
      ds, 2, [&](const Dataset<double>&, const std::vector<std::size_t>& idxs) {
        Tensor<double> out({idxs.size(), 10});
        for (std::size_t i = 0; i < idxs.size(); ++i)
          out.at(i, ds.samples[idxs[i]].label) = 5.0;
        return out;
      });
  CHECK(perfect.top1_error == 0.0);
  CHECK(perfect.top5_error == 0.0);

  auto hopeless = evaluate_logits(
      ds, 2, [&](const Dataset<double>&, const std::vector<std::size_t>& idxs) {
        Tensor<double> out({idxs.size(), 10});
        for (std::size_t i = 0; i < idxs.size(); ++i) {
          for (std::size_t c = 0; c < 10; ++c) out.at(i, c) = 10.0 - c;
          out.at(i, ds.samples[idxs[i]].label) = -1.0;  // label dead last
        }
        return out;
      });
  CHECK(hopeless.top1_error == 100.0);
  CHECK(hopeless.top5_error == 100.0);
}

TEST_CASE("top-1 error is never below top-5 error") {
  Rng rng(7);
  Dataset<double> ds;
  ds.classes = 7;
  for (std::size_t i = 0; i < 40; ++i)
    ds.samples.push_back({Image<double>(1, 1, 1), rng.index(7)});
  auto ev = evaluate_logits(
      ds, 8, [&](const Dataset<double>&, const std::vector<std::size_t>& idxs) {
        Rng local(idxs[0] + 123);
        return rand_uniform<double>({idxs.size(), 7}, local);
      });
  CHECK(ev.top1_error >= ev.top5_error);
}

TEST_CASE("one epoch on four samples reduces the training loss") {
  auto [train, val] = toy_two_class(4);
  BaseCnnConfig cfg;
  cfg.in_channels = 1;
  cfg.stage_channels = {4, 8};
  Rng rng(9);
  CnnClassifier<float> model = CnnClassifier<float>::init(cfg, 2, rng);

  TrainConfig tc;
  tc.head = Head::single;
  tc.scales = {{12, 12}};
  tc.epochs = 1;
  tc.batch_size = 4;
  tc.lr0 = 0.05;
  tc.augment = false;

  auto loss_now = [&] {
    std::vector<std::size_t> idxs = {0, 1, 2, 3};
    auto [pyr, labels] = [&] {
      Rng dummy(0);
      return assemble_batch(train, idxs, tc.scales, false, dummy);
    }();
    return cross_entropy_from_logits(logits_for(model, pyr), labels)
        ->value[0];
  };
  const double before = loss_now();
  fit(tc, train, val, model);
  CHECK(loss_now() < before);
}

TEST_CASE("history lr column equals lr_at_epoch") {
  auto [train, val] = toy_two_class(6);
  BaseCnnConfig cfg;
  cfg.in_channels = 1;
  cfg.stage_channels = {4, 8};
  Rng rng(10);
  CnnClassifier<float> model = CnnClassifier<float>::init(cfg, 2, rng);
  TrainConfig tc;
  tc.head = Head::single;
  tc.scales = {{12, 12}};
  tc.epochs = 5;
  tc.batch_size = 6;
  tc.decay_every = 2;
  tc.decay_factor = 0.5;
  tc.augment = false;
  auto history = fit(tc, train, val, model);
  REQUIRE(history.size() == 5);
  for (std::size_t e = 0; e < 5; ++e) {
    CHECK(history[e].epoch == e);
    CHECK(history[e].lr == lr_at_epoch(tc, e));
  }
}

TEST_CASE("fit rejects ensemble heads and empty datasets") {
  auto [train, val] = toy_two_class(4);
  BaseCnnConfig cfg;
  cfg.in_channels = 1;
  cfg.stage_channels = {4};
  Rng rng(11);
  CnnClassifier<float> model = CnnClassifier<float>::init(cfg, 2, rng);
  TrainConfig tc;
  tc.head = Head::ens_logit;
  tc.scales = {{12, 12}};
  CHECK_THROWS_AS(fit(tc, train, val, model), ContractError);
  tc.head = Head::single;
  Dataset<float> empty;
  empty.classes = 2;
  CHECK_THROWS_AS(fit(tc, empty, val, model), ContractError);
}

TEST_CASE("fit is bitwise reproducible for a fixed seed") {
  auto [train, val] = toy_two_class(8);
  BaseCnnConfig cfg;
  cfg.in_channels = 1;
  cfg.stage_channels = {4, 8};
  TrainConfig tc;
  tc.head = Head::srnn_vanilla;
  tc.scales = {{6, 6}, {12, 12}};
  tc.epochs = 3;
  tc.batch_size = 4;
  tc.seed = 42;

  auto run_once = [&] {
    Rng rng(123);
    auto base = CnnClassifier<float>::init(cfg, 2, rng);
    auto model = SrnnVanilla<float>::from_pretrained(base);
    auto history = fit(tc, train, val, model);
    return std::make_pair(history, model.named_params());
  };
  auto [h1, p1] = run_once();
  auto [h2, p2] = run_once();
  REQUIRE(h1.size() == h2.size());
  for (std::size_t e = 0; e < h1.size(); ++e) {
    CHECK(h1[e].train_loss == h2[e].train_loss);
    CHECK(h1[e].val_top1 == h2[e].val_top1);
    CHECK(h1[e].val_top5 == h2[e].val_top5);
  }
  REQUIRE(p1.size() == p2.size());
  for (std::size_t t = 0; t < p1.size(); ++t)
    for (std::size_t i = 0; i < p1[t].node->value.size(); ++i)
      CHECK(p1[t].node->value[i] == p2[t].node->value[i]);
}

TEST_CASE("vanilla srnn overfits a 50-sample two-class toy task") {
  auto [train, val] = toy_two_class(50);
  BaseCnnConfig cfg;
  cfg.in_channels = 1;
  cfg.stage_channels = {8, 16};
  Rng rng(13);
  auto base = CnnClassifier<float>::init(cfg, 2, rng);
  auto model = SrnnVanilla<float>::from_pretrained(base);

  TrainConfig tc;
  tc.head = Head::srnn_vanilla;
  tc.scales = {{6, 6}, {12, 12}};
  tc.batch_size = 10;
  tc.lr0 = 0.02;
  tc.augment = false;
  tc.epochs = 20;

  double best = 100.0;
  std::size_t epochs_used = 0;
  while (epochs_used < 200 && best >= 5.0) {
    auto history = fit(tc, train, train, model);  // val = train: train error
    epochs_used += tc.epochs;
    for (const auto& e : history) best = std::min(best, e.val_top1);
  }
  CHECK(best < 5.0);
}

}  // TEST_SUITE
