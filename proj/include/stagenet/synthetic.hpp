#pragma once

#include <array>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "stagenet/manifest.hpp"
#include "stagenet/rng.hpp"
#include "stagenet/volume.hpp"

#include <nlohmann/json.hpp>

namespace stagenet {

/// Axis-aligned signal box, closed on the low edge, open on the high edge.
struct SignalBox {
  Shape3 center{16, 19, 16};
  Shape3 half_extent{4, 4, 4};

  std::int64_t lo(int axis) const { return center[axis] - half_extent[axis]; }
  std::int64_t hi(int axis) const { return center[axis] + half_extent[axis]; }
  bool contains(std::int64_t d, std::int64_t h, std::int64_t w) const {
    return d >= lo(0) && d < hi(0) && h >= lo(1) && h < hi(1) && w >= lo(2) && w < hi(2);
  }
};

struct SyntheticConfig {
  Shape3 shape{32, 38, 32};
  int n_controls = 60;
  std::array<int, 4> n_per_stage{15, 15, 15, 15};  // stages 1..4
  std::map<int, double> effect_sizes{{1, 0.3}, {2, 0.6}, {3, 0.9}, {4, 1.2}};
  SignalBox signal_region;
  double noise_sd = 1.0;
  double site_offset = 0.0;
  std::pair<double, double> age_range{40.0, 80.0};
  double sex_signal_scale = 0.5;
  std::uint64_t seed = 0;
  std::string site = "synth";

  void validate() const {
    if (noise_sd <= 0.0) throw std::runtime_error("noise_sd must be positive");
    int total = n_controls;
    for (int n : n_per_stage) total += n;
    if (total <= 0) throw std::runtime_error("synthetic cohort has zero subjects");
    double prev = -1e300;
    for (const auto& [stage, e] : effect_sizes) {
      if (e <= prev) {
        throw std::runtime_error("effect_sizes must be strictly increasing with stage");
      }
      prev = e;
    }
    for (int a = 0; a < 3; ++a) {
      if (signal_region.lo(a) < 0 || signal_region.hi(a) > shape[a]) {
        throw std::runtime_error("signal_region lies outside the volume shape");
      }
    }
    if (!(age_range.first > 0.0 && age_range.second < 120.0 &&
          age_range.first < age_range.second)) {
      throw std::runtime_error("age_range must satisfy 0 < min < max < 120");
    }
  }
};

struct GroundTruthEntry {
  Diagnosis diagnosis = Diagnosis::control;
  int stage = 0;  // 0 for controls
  SignalBox mask_box;
  bool has_mask = false;
  double age = 0.0;
  Sex sex = Sex::female;
};

struct GroundTruth {
  std::unordered_map<std::string, GroundTruthEntry> entries;

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [id, e] : entries) {
      nlohmann::json box = nullptr;
      if (e.has_mask) {
        box = {{"center", {e.mask_box.center[0], e.mask_box.center[1], e.mask_box.center[2]}},
               {"half_extent",
                {e.mask_box.half_extent[0], e.mask_box.half_extent[1], e.mask_box.half_extent[2]}}};
      }
      j[id] = {{"diagnosis", e.diagnosis == Diagnosis::patient ? "PD" : "CN"},
               {"stage", e.stage},
               {"mask_box", box},
               {"age", e.age},
               {"sex", e.sex == Sex::female ? "F" : "M"}};
    }
    return j;
  }
};

struct SyntheticCohort {
  CohortManifest manifest;
  GroundTruth ground_truth;
  std::unordered_map<std::string, Volume> volumes;
};

/// Background Gaussian noise + site offset + a sex-linked global intensity
/// shift, plus effect_sizes[stage] added inside the signal box for patients.
/// Each subject's stream is derived from (seed, subject index), so generation
/// order does not matter.
inline SyntheticCohort generate_cohort(const SyntheticConfig& cfg) {
  cfg.validate();
  SyntheticCohort out;
  out.manifest.name = cfg.site;
  out.manifest.canonical_shape = cfg.shape;

  struct Plan {
    Diagnosis dx;
    int stage;
  };
  std::vector<Plan> plan;
  for (int i = 0; i < cfg.n_controls; ++i) plan.push_back({Diagnosis::control, 0});
  for (int s = 1; s <= 4; ++s) {
    for (int i = 0; i < cfg.n_per_stage[static_cast<std::size_t>(s - 1)]; ++i) {
      plan.push_back({Diagnosis::patient, s});
    }
  }

  for (std::size_t idx = 0; idx < plan.size(); ++idx) {
    Rng rng(cfg.seed, idx);
    const Plan& p = plan[idx];

    SubjectRecord rec;
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%s_%s_%04zu", cfg.site.c_str(),
                  p.dx == Diagnosis::patient ? "pd" : "cn", idx);
    rec.subject_id = buf;
    rec.age = rng.uniform(cfg.age_range.first, cfg.age_range.second);
    rec.sex = rng.bernoulli(0.5) ? Sex::male : Sex::female;
    rec.diagnosis = p.dx;
    if (p.dx == Diagnosis::patient) rec.hy_stage = p.stage;
    rec.site = cfg.site;
    rec.volume_ref = rec.subject_id;

    Volume v(cfg.shape);
    const double sex_shift = rec.sex == Sex::male ? cfg.sex_signal_scale : 0.0;
    for (std::int64_t i = 0; i < v.numel(); ++i) {
      v.data[i] = static_cast<float>(rng.normal(0.0, cfg.noise_sd) + cfg.site_offset + sex_shift);
    }
    if (p.dx == Diagnosis::patient) {
      const double effect = cfg.effect_sizes.at(p.stage);
      for (std::int64_t d = cfg.signal_region.lo(0); d < cfg.signal_region.hi(0); ++d) {
        for (std::int64_t h = cfg.signal_region.lo(1); h < cfg.signal_region.hi(1); ++h) {
          for (std::int64_t w = cfg.signal_region.lo(2); w < cfg.signal_region.hi(2); ++w) {
            v.at(d, h, w) += static_cast<float>(effect);
          }
        }
      }
    }

    GroundTruthEntry gt;
    gt.diagnosis = p.dx;
    gt.stage = p.stage;
    gt.mask_box = cfg.signal_region;
    gt.has_mask = p.dx == Diagnosis::patient;
    gt.age = rec.age;
    gt.sex = rec.sex;

    out.ground_truth.entries[rec.subject_id] = gt;
    out.volumes[rec.subject_id] = std::move(v);
    out.manifest.records.push_back(std::move(rec));
  }
  out.manifest.validate();
  return out;
}

/// Domain-shifted sibling cohort: same recipe with site_offset := offset.
/// Pass a fresh seed in cfg for an independent draw.
inline SyntheticCohort generate_ood_cohort(SyntheticConfig cfg, double offset) {
  cfg.site_offset = offset;
  return generate_cohort(cfg);
}

}  // namespace stagenet
