#include <doctest.h>

#include <cmath>

#include "stagenet/synthetic.hpp"
#include "stagenet/volume.hpp"

using namespace stagenet;

namespace {

SyntheticConfig small_config() {
  SyntheticConfig cfg;
  cfg.shape = {16, 18, 16};
  cfg.signal_region.center = {8, 9, 8};
  cfg.signal_region.half_extent = {3, 3, 3};
  cfg.n_controls = 8;
  cfg.n_per_stage = {2, 2, 2, 2};
  cfg.seed = 11;
  return cfg;
}

// In-region mean over all subjects matching a predicate.
double region_mean(const SyntheticCohort& c, Diagnosis dx, int stage) {
  double sum = 0.0;
  std::int64_t n = 0;
  for (const auto& r : c.manifest.records) {
    if (r.diagnosis != dx) continue;
    if (dx == Diagnosis::patient && r.hy_stage != stage) continue;
    const Volume& v = c.volumes.at(r.subject_id);
    const auto& box = c.ground_truth.entries.at(r.subject_id).mask_box;
    for (std::int64_t d = box.lo(0); d < box.hi(0); ++d) {
      for (std::int64_t h = box.lo(1); h < box.hi(1); ++h) {
        for (std::int64_t w = box.lo(2); w < box.hi(2); ++w) {
          sum += v.at(d, h, w);
          ++n;
        }
      }
    }
  }
  return sum / static_cast<double>(n);
}

}  // namespace

TEST_CASE("generate_cohort is deterministic per seed, distinct across seeds") {
  auto cfg = small_config();
  auto a = generate_cohort(cfg);
  auto b = generate_cohort(cfg);
  cfg.seed = 12;
  auto c = generate_cohort(cfg);
  const auto& id = a.manifest.records.front().subject_id;
  bool same = true, diff = false;
  for (std::int64_t i = 0; i < a.volumes.at(id).numel(); ++i) {
    same = same && a.volumes.at(id).data[i] == b.volumes.at(id).data[i];
    diff = diff || a.volumes.at(id).data[i] != c.volumes.at(id).data[i];
  }
  CHECK(same);
  CHECK(diff);
}

TEST_CASE("noiseless limit: stage-4 volumes offset by the effect size in-region") {
  auto cfg = small_config();
  cfg.noise_sd = 1e-12;
  cfg.sex_signal_scale = 0.0;
  cfg.effect_sizes = {{1, 0.25}, {2, 0.5}, {3, 0.75}, {4, 1.0}};
  auto c = generate_cohort(cfg);
  for (const auto& r : c.manifest.records) {
    if (r.hy_stage != 4) continue;
    const Volume& v = c.volumes.at(r.subject_id);
    const auto& box = c.ground_truth.entries.at(r.subject_id).mask_box;
    CHECK(v.at(box.center[0], box.center[1], box.center[2]) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(v.at(0, 0, 0) == doctest::Approx(0.0).epsilon(1e-6));
  }
}

// Sample-mean oracle: per-stage in-region patient-vs-control difference
// should track the configured effect size within 3 standard errors.
TEST_CASE("per-stage region contrast matches the configured effect sizes") {
  SyntheticConfig cfg;
  cfg.shape = {16, 18, 16};
  cfg.signal_region.center = {8, 9, 8};
  cfg.signal_region.half_extent = {3, 3, 3};
  cfg.n_controls = 60;
  cfg.n_per_stage = {15, 15, 15, 15};
  cfg.effect_sizes = {{1, 0.3}, {2, 0.6}, {3, 0.9}, {4, 1.2}};
  cfg.noise_sd = 1.0;
  cfg.sex_signal_scale = 0.0;
  cfg.seed = 21;
  auto c = generate_cohort(cfg);
  const double ctrl = region_mean(c, Diagnosis::control, 0);
  const std::int64_t region_vox = 6 * 6 * 6;
  double prev_diff = -1.0;
  for (int s = 1; s <= 4; ++s) {
    const double diff = region_mean(c, Diagnosis::patient, s) - ctrl;
    // SE of the difference of means over 15 (or 60) subjects x region voxels
    const double se = std::sqrt(1.0 / (15.0 * region_vox) + 1.0 / (60.0 * region_vox));
    CHECK(std::abs(diff - cfg.effect_sizes.at(s)) < 3.0 * se);
    CHECK(diff > prev_diff);  // monotone separability
    prev_diff = diff;
  }
}

TEST_CASE("null signal: effect sizes ~0 leave patients and controls alike") {
  auto cfg = small_config();
  cfg.n_controls = 40;
  cfg.n_per_stage = {10, 10, 10, 10};
  cfg.sex_signal_scale = 0.0;
  // strictly increasing but negligible
  cfg.effect_sizes = {{1, 1e-9}, {2, 2e-9}, {3, 3e-9}, {4, 4e-9}};
  auto c = generate_cohort(cfg);
  const double diff = region_mean(c, Diagnosis::patient, 4) - region_mean(c, Diagnosis::control, 0);
  const double se = std::sqrt(1.0 / (10.0 * 216) + 1.0 / (40.0 * 216));
  CHECK(std::abs(diff) < 4.0 * se);
}

TEST_CASE("generate_ood_cohort: offset 0 with same seed is the identity") {
  auto cfg = small_config();
  auto a = generate_cohort(cfg);
  auto b = generate_ood_cohort(cfg, 0.0);
  const auto& id = a.manifest.records.front().subject_id;
  for (std::int64_t i = 0; i < a.volumes.at(id).numel(); ++i) {
    CHECK(a.volumes.at(id).data[i] == b.volumes.at(id).data[i]);
  }
}

TEST_CASE("generate_ood_cohort shifts the voxelwise mean by the offset") {
  auto cfg = small_config();
  cfg.n_controls = 30;
  cfg.n_per_stage = {0, 0, 0, 0};
  cfg.effect_sizes = {{1, 0.3}, {2, 0.6}, {3, 0.9}, {4, 1.2}};
  cfg.sex_signal_scale = 0.0;
  auto base = generate_cohort(cfg);
  auto shifted = generate_ood_cohort(cfg, 0.5);
  auto total_mean = [](const SyntheticCohort& c) {
    double sum = 0.0;
    std::int64_t n = 0;
    for (const auto& [id, v] : c.volumes) {
      for (std::int64_t i = 0; i < v.numel(); ++i) sum += v.data[i];
      n += v.numel();
    }
    return sum / static_cast<double>(n);
  };
  const double diff = total_mean(shifted) - total_mean(base);
  const double se = 1.0 / std::sqrt(30.0 * 16 * 18 * 16);
  CHECK(std::abs(diff - 0.5) < 3.0 * se);
}

TEST_CASE("z-transform absorbs a global OOD offset") {
  auto cfg = small_config();
  auto shifted = generate_ood_cohort(cfg, 10.0);
  for (const auto& [id, v] : shifted.volumes) {
    auto z = z_transform(v);
    double sum = 0.0;
    for (std::int64_t i = 0; i < z.numel(); ++i) sum += z.data[i];
    CHECK(std::abs(sum / static_cast<double>(z.numel())) < 1e-5);
  }
}

TEST_CASE("ground-truth masks exist exactly for patients") {
  auto c = generate_cohort(small_config());
  for (const auto& r : c.manifest.records) {
    const auto& gt = c.ground_truth.entries.at(r.subject_id);
    CHECK(gt.has_mask == (r.diagnosis == Diagnosis::patient));
  }
}

TEST_CASE("config validation") {
  auto cfg = small_config();
  cfg.n_controls = 0;
  cfg.n_per_stage = {0, 0, 0, 0};
  CHECK_THROWS_AS(generate_cohort(cfg), std::runtime_error);

  cfg = small_config();
  cfg.effect_sizes = {{1, 0.5}, {2, 0.4}, {3, 0.9}, {4, 1.2}};
  CHECK_THROWS_WITH_AS(generate_cohort(cfg), doctest::Contains("increasing"), std::runtime_error);

  cfg = small_config();
  cfg.signal_region.center = {15, 9, 8};
  cfg.signal_region.half_extent = {4, 3, 3};
  CHECK_THROWS_WITH_AS(generate_cohort(cfg), doctest::Contains("signal_region"),
                       std::runtime_error);
}
