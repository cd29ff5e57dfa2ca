#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "stagenet/manifest.hpp"
#include "stagenet/rng.hpp"

#include <nlohmann/json.hpp>

namespace stagenet {

enum class CurriculumKind { curriculum, anti_curriculum, none };
enum class BalanceMode { off, balanced };

inline std::string to_string(CurriculumKind k) {
  switch (k) {
    case CurriculumKind::curriculum: return "curriculum";
    case CurriculumKind::anti_curriculum: return "anti_curriculum";
    case CurriculumKind::none: return "none";
  }
  return "?";
}

inline CurriculumKind curriculum_kind_from_string(const std::string& s) {
  if (s == "curriculum") return CurriculumKind::curriculum;
  if (s == "anti_curriculum") return CurriculumKind::anti_curriculum;
  if (s == "none") return CurriculumKind::none;
  throw std::runtime_error("unknown curriculum kind: " + s);
}

struct Episode {
  std::set<int> included_stages;
  std::vector<std::string> subject_ids;  // seeded shuffle order
  bool balanced = false;
};

struct EpisodePlan {
  CurriculumKind kind = CurriculumKind::none;
  std::vector<Episode> episodes;

  nlohmann::json to_json() const {
    nlohmann::json eps = nlohmann::json::array();
    for (const auto& e : episodes) {
      eps.push_back({{"included_stages", e.included_stages},
                     {"subject_ids", e.subject_ids},
                     {"balanced", e.balanced}});
    }
    return {{"kind", to_string(kind)}, {"episodes", eps}};
  }
};

/// Episodes introduce stages in severity order: stage 4 first for the
/// curriculum, reversed for the anti-curriculum; each episode is cumulative
/// and always carries all training controls (before balancing). Stage 0, if
/// ever present, comes last in the curriculum and first in the
/// anti-curriculum. Empty stages are skipped.
inline EpisodePlan build_episode_plan(const CohortManifest& train, CurriculumKind kind,
                                      BalanceMode balance, std::uint64_t seed) {
  std::vector<const SubjectRecord*> controls;
  std::vector<const SubjectRecord*> patients;
  std::set<int> stages_present;
  for (const auto& r : train.records) {
    if (r.diagnosis == Diagnosis::control) {
      controls.push_back(&r);
    } else {
      if (*r.hy_stage < 0 || *r.hy_stage > 4) {
        throw std::runtime_error("unknown H&Y stage " + std::to_string(*r.hy_stage));
      }
      patients.push_back(&r);
      stages_present.insert(*r.hy_stage);
    }
  }
  if (controls.empty()) throw std::runtime_error("episode plan needs at least one control");
  if (patients.empty()) throw std::runtime_error("episode plan needs at least one patient");

  // Severity order of stage introduction.
  std::vector<int> order;
  for (int s = 4; s >= 1; --s) {
    if (stages_present.count(s)) order.push_back(s);
  }
  if (stages_present.count(0)) order.push_back(0);
  if (kind == CurriculumKind::anti_curriculum) std::reverse(order.begin(), order.end());

  EpisodePlan plan;
  plan.kind = kind;

  const std::size_t n_episodes = kind == CurriculumKind::none ? 1 : order.size();
  std::set<int> cumulative;
  for (std::size_t k = 0; k < n_episodes; ++k) {
    Episode ep;
    if (kind == CurriculumKind::none) {
      cumulative = stages_present;
    } else {
      cumulative.insert(order[k]);
    }
    ep.included_stages = cumulative;
    ep.balanced = balance == BalanceMode::balanced;

    std::vector<const SubjectRecord*> ep_patients;
    for (const auto* p : patients) {
      if (cumulative.count(*p->hy_stage)) ep_patients.push_back(p);
    }

    std::vector<const SubjectRecord*> ep_controls = controls;
    if (balance == BalanceMode::balanced && ep_controls.size() > ep_patients.size()) {
      // Independent redraw per episode from a seeded stream.
      Rng rng(seed, 0xba10 + k);
      rng.shuffle(ep_controls.begin(), ep_controls.end());
      ep_controls.resize(ep_patients.size());
    }

    std::vector<const SubjectRecord*> roster = ep_controls;
    roster.insert(roster.end(), ep_patients.begin(), ep_patients.end());
    Rng rng(seed, 0x405 + k);
    rng.shuffle(roster.begin(), roster.end());
    for (const auto* r : roster) ep.subject_ids.push_back(r->subject_id);

    plan.episodes.push_back(std::move(ep));
  }
  return plan;
}

inline const std::vector<std::string>& episode_subjects(const EpisodePlan& plan, std::size_t k) {
  if (k >= plan.episodes.size()) {
    throw std::out_of_range("episode index " + std::to_string(k) + " out of range (plan has " +
                            std::to_string(plan.episodes.size()) + " episodes)");
  }
  return plan.episodes[k].subject_ids;
}

}  // namespace stagenet
