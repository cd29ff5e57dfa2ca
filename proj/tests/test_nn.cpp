#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "stagenet/loss.hpp"
#include "stagenet/nn/model.hpp"
#include "stagenet/rng.hpp"

using namespace stagenet;
using namespace stagenet::nn;

namespace {

/// Small enough for finite-difference checks, still exercises every layer
/// kind (stem, dense layers, transitions, pooling, heads).
BackboneConfig grad_check_config() {
  BackboneConfig cfg;
  cfg.variant = BackboneVariant::tiny_densenet_3d;
  cfg.init_features = 4;
  cfg.growth_rate = 2;
  cfg.block_layers = {1, 1, 1, 1};
  cfg.stem_kernel = 3;
  cfg.input_shape = {16, 16, 16};
  return cfg;
}

template <typename T>
Tensor<T> random_batch(const BackboneConfig& cfg, std::int64_t n, std::uint64_t seed) {
  Tensor<T> x({n, 1, cfg.input_shape[0], cfg.input_shape[1], cfg.input_shape[2]});
  Rng rng(seed);
  for (std::int64_t i = 0; i < x.size(); ++i) x[i] = static_cast<T>(rng.normal(0.0, 1.0));
  return x;
}

double loss_of(MultiTaskModel<double>& model, const Tensor<double>& x, const Tensor<double>& at,
               const Tensor<double>& st, const Tensor<double>& dt) {
  auto y = model.forward(x, /*train=*/true);
  return multitask_loss(y.age, y.sex_logit, y.dx_logit, at, st, dt).l_total;
}

}  // namespace

TEST_CASE("analytic gradients match finite differences through the full model") {
  auto cfg = grad_check_config();
  MultiTaskModel<double> model(cfg, 5);
  auto x = random_batch<double>(cfg, 2, 6);
  Tensor<double> at({2}), st({2}), dt({2});
  at[0] = 61.3;
  at[1] = 48.7;
  st[0] = 1.0;
  st[1] = 0.0;
  dt[0] = 1.0;
  dt[1] = 0.0;

  auto y = model.forward(x, true);
  Tensor<double> ga({2}), gs({2}), gd({2});
  multitask_loss(y.age, y.sex_logit, y.dx_logit, at, st, dt, &ga, &gs, &gd);
  model.zero_grad();
  model.backward(ga, gs, gd);

  auto params = model.params();
  Rng pick(7);
  int checked = 0;
  const double h = 1e-5;
  for (int s = 0; s < 24; ++s) {
    auto* p = params[static_cast<std::size_t>(
        pick.uniform_int(0, static_cast<std::int64_t>(params.size()) - 1))];
    const std::int64_t idx = pick.uniform_int(0, p->value.size() - 1);
    const double saved = p->value[idx];
    const double analytic = p->grad[idx];

    p->value[idx] = saved + h;
    const double lp = loss_of(model, x, at, st, dt);
    p->value[idx] = saved - h;
    const double lm = loss_of(model, x, at, st, dt);
    p->value[idx] = saved;
    const double fd = (lp - lm) / (2.0 * h);

    // ReLU kinks crossed by the probe step and FD roundoff put a floor on
    // attainable accuracy; accept a tight relative or absolute agreement
    const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-6});
    const bool ok = std::abs(fd - analytic) / denom < 1e-3 || std::abs(fd - analytic) < 1e-7;
    CHECK(ok);
    ++checked;
  }
  CHECK(checked >= 20);
}

TEST_CASE("model construction is bitwise deterministic per seed") {
  auto cfg = grad_check_config();
  MultiTaskModel<float> a(cfg, 3), b(cfg, 3), c(cfg, 4);
  auto pa = a.params(), pb = b.params(), pc = c.params();
  REQUIRE(pa.size() == pb.size());
  bool identical = true, differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name == pb[i]->name);
    for (std::int64_t j = 0; j < pa[i]->value.size(); ++j) {
      identical = identical && pa[i]->value[j] == pb[i]->value[j];
      differs = differs || pa[i]->value[j] != pc[i]->value[j];
    }
  }
  CHECK(identical);
  CHECK(differs);
}

TEST_CASE("forward emits one scalar per head per sample") {
  auto cfg = grad_check_config();
  MultiTaskModel<float> model(cfg, 1);
  auto y = model.forward(random_batch<float>(cfg, 2, 2), false);
  CHECK(y.age.shape() == std::vector<std::int64_t>{2});
  CHECK(y.sex_logit.shape() == std::vector<std::int64_t>{2});
  CHECK(y.dx_logit.shape() == std::vector<std::int64_t>{2});
  for (std::int64_t i = 0; i < 2; ++i) {
    CHECK(std::isfinite(y.age[i]));
    CHECK(std::isfinite(y.sex_logit[i]));
    CHECK(std::isfinite(y.dx_logit[i]));
  }
}

TEST_CASE("forward rejects wrong shapes and non-finite input") {
  auto cfg = grad_check_config();
  MultiTaskModel<float> model(cfg, 1);
  Tensor<float> bad({2, 1, 16, 16, 8});
  CHECK_THROWS_WITH_AS(model.forward(bad, false), doctest::Contains("shape"), std::runtime_error);
  auto x = random_batch<float>(cfg, 1, 3);
  x[5] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_WITH_AS(model.forward(x, false), doctest::Contains("finite"), std::runtime_error);
}

TEST_CASE("preset parameter counts and full/tiny ratio") {
  auto full_cfg = BackboneConfig::preset(BackboneVariant::densenet121_3d, {32, 38, 32});
  auto tiny_cfg = BackboneConfig::preset(BackboneVariant::tiny_densenet_3d, {32, 38, 32});
  MultiTaskModel<float> full(full_cfg, 1);
  MultiTaskModel<float> tiny(tiny_cfg, 1);
  CHECK(full.feature_dim() == 1024);
  CHECK(tiny.feature_dim() == 258);
  // backbone (11,242,624 / 1,117,092) plus three (F+1)-parameter heads
  const auto nf = full.parameter_count();
  const auto nt = tiny.parameter_count();
  CHECK(nf == 11242624 + 3 * 1025);
  CHECK(nt == 1117092 + 3 * 259);
  const double ratio = static_cast<double>(nf) / static_cast<double>(nt);
  CHECK(ratio >= 5.0);
  CHECK(ratio <= 15.0);
}

TEST_CASE("feature width does not depend on the input shape") {
  MultiTaskModel<float> a(BackboneConfig::preset(BackboneVariant::tiny_densenet_3d, {32, 38, 32}),
                          1);
  MultiTaskModel<float> b(BackboneConfig::preset(BackboneVariant::tiny_densenet_3d, {91, 109, 91}),
                          1);
  CHECK(a.feature_dim() == b.feature_dim());
  CHECK(a.parameter_count() == b.parameter_count());
}

TEST_CASE("config validation rejects too-small inputs") {
  auto cfg = grad_check_config();
  cfg.input_shape = {16, 15, 16};
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("16"), std::runtime_error);
}

TEST_CASE("full checkpoint round trip reproduces outputs exactly") {
  auto cfg = grad_check_config();
  MultiTaskModel<float> src(cfg, 10);
  auto x = random_batch<float>(cfg, 2, 11);
  // perturb running stats away from their defaults so state is exercised
  src.forward(x, true);
  auto y0 = src.forward(x, false);
  save_checkpoint(src, "ck_full_test.ck", CheckpointKind::full);

  MultiTaskModel<float> dst(cfg, 99);
  load_full_checkpoint(dst, "ck_full_test.ck");
  auto y1 = dst.forward(x, false);
  for (std::int64_t i = 0; i < 2; ++i) {
    CHECK(y1.age[i] == y0.age[i]);
    CHECK(y1.sex_logit[i] == y0.sex_logit[i]);
    CHECK(y1.dx_logit[i] == y0.dx_logit[i]);
  }
  std::remove("ck_full_test.ck");
}

TEST_CASE("backbone checkpoint loads weights but keeps fresh heads") {
  auto cfg = grad_check_config();
  MultiTaskModel<float> src(cfg, 20);
  save_checkpoint(src, "ck_bb_test.ck", CheckpointKind::backbone_only);

  MultiTaskModel<float> dst(cfg, 21);
  auto head_before = dst.params().back()->value;  // head.dx bias/weight block
  load_backbone_weights(dst, "ck_bb_test.ck");

  auto sp = src.backbone_params();
  auto dp = dst.backbone_params();
  for (std::size_t i = 0; i < sp.size(); ++i) {
    for (std::int64_t j = 0; j < sp[i]->value.size(); ++j) {
      CHECK(dp[i]->value[j] == sp[i]->value[j]);
    }
  }
  auto head_after = dst.params().back()->value;
  for (std::int64_t j = 0; j < head_before.size(); ++j) {
    CHECK(head_after[j] == head_before[j]);
  }
  std::remove("ck_bb_test.ck");
}

TEST_CASE("checkpoint with a different architecture is rejected with the field names") {
  auto cfg = grad_check_config();
  MultiTaskModel<float> src(cfg, 30);
  save_checkpoint(src, "ck_mismatch_test.ck", CheckpointKind::backbone_only);

  auto other = cfg;
  other.growth_rate = 4;
  MultiTaskModel<float> dst(other, 30);
  CHECK_THROWS_WITH_AS(load_backbone_weights(dst, "ck_mismatch_test.ck"),
                       doctest::Contains("growth_rate"), std::runtime_error);
  std::remove("ck_mismatch_test.ck");
}

TEST_CASE("read_checkpoint rejects files without the magic") {
  std::ofstream f("ck_bogus_test.ck", std::ios::binary);
  f << "definitely not a checkpoint";
  f.close();
  CHECK_THROWS_WITH_AS(read_checkpoint("ck_bogus_test.ck"), doctest::Contains("not a checkpoint"),
                       std::runtime_error);
  std::remove("ck_bogus_test.ck");
}

TEST_CASE("zeroed heads produce identically zero outputs") {
  auto cfg = grad_check_config();
  MultiTaskModel<float> model(cfg, 40);
  for (auto* p : model.params()) {
    if (p->name.rfind("head.", 0) == 0) p->value.zero();
  }
  auto y = model.forward(random_batch<float>(cfg, 3, 41), false);
  for (std::int64_t i = 0; i < 3; ++i) {
    CHECK(y.age[i] == 0.0f);
    CHECK(y.sex_logit[i] == 0.0f);
    CHECK(y.dx_logit[i] == 0.0f);
  }
}

TEST_CASE("eval-mode outputs are per-sample: batch permutation is equivariant") {
  auto cfg = grad_check_config();
  MultiTaskModel<float> model(cfg, 50);
  auto x = random_batch<float>(cfg, 3, 51);
  const std::int64_t v = 16 * 16 * 16;
  Tensor<float> rev({3, 1, 16, 16, 16});
  for (std::int64_t b = 0; b < 3; ++b) {
    std::copy(x.data() + b * v, x.data() + (b + 1) * v, rev.data() + (2 - b) * v);
  }
  auto y = model.forward(x, false);
  auto yr = model.forward(rev, false);
  for (std::int64_t b = 0; b < 3; ++b) {
    CHECK(y.age[b] == yr.age[2 - b]);
    CHECK(y.sex_logit[b] == yr.sex_logit[2 - b]);
    CHECK(y.dx_logit[b] == yr.dx_logit[2 - b]);
  }
}
