#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace stagenet {

/// (label, score) pairs; score is the sigmoid of the dx logit.
struct ScoredSet {
  std::vector<int> labels;      // 0/1
  std::vector<double> scores;

  void add(int label, double score) {
    if (label != 0 && label != 1) throw std::runtime_error("label must be 0 or 1");
    labels.push_back(label);
    scores.push_back(score);
  }
  std::size_t size() const { return labels.size(); }
  std::size_t n_pos() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  }
  std::size_t n_neg() const { return size() - n_pos(); }

  void require_both_classes(const char* who) const {
    if (n_pos() == 0 || n_neg() == 0) {
      throw std::runtime_error(std::string(who) + ": need at least one positive and one negative");
    }
  }
};

/// Mann-Whitney estimator via midranks; ties get 0.5 credit.
inline double roc_auc(const ScoredSet& s) {
  s.require_both_classes("roc_auc");
  const std::size_t n = s.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return s.scores[a] < s.scores[b]; });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && s.scores[idx[j]] == s.scores[idx[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
    for (std::size_t k = i; k < j; ++k) {
      if (s.labels[idx[k]] == 1) rank_sum_pos += midrank;
    }
    i = j;
  }
  const double np = static_cast<double>(s.n_pos());
  const double nn = static_cast<double>(s.n_neg());
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

/// Candidate thresholds for the decision rule score >= t: midpoints between
/// adjacent distinct sorted scores, plus a sentinel below and above all scores.
inline std::vector<double> youden_candidates(const ScoredSet& s) {
  std::vector<double> sorted = s.scores;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<double> cand;
  cand.push_back(sorted.front() - 1.0);  // everything predicted positive
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
    cand.push_back(0.5 * (sorted[i] + sorted[i + 1]));
  }
  cand.push_back(sorted.back() + 1.0);  // everything predicted negative
  return cand;
}

inline double youden_j_at(const ScoredSet& s, double t) {
  std::size_t tp = 0, fn = 0, tn = 0, fp = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const bool pred = s.scores[i] >= t;
    if (s.labels[i] == 1) {
      pred ? ++tp : ++fn;
    } else {
      pred ? ++fp : ++tn;
    }
  }
  const double sens = static_cast<double>(tp) / static_cast<double>(tp + fn);
  const double spec = static_cast<double>(tn) / static_cast<double>(tn + fp);
  return sens + spec - 1.0;
}

/// Threshold maximizing J = sensitivity + specificity - 1; ties broken by the
/// smallest candidate threshold.
inline double youden_threshold(const ScoredSet& s) {
  s.require_both_classes("youden_threshold");
  const auto cands = youden_candidates(s);
  double best_t = cands.front();
  double best_j = youden_j_at(s, best_t);
  for (std::size_t i = 1; i < cands.size(); ++i) {
    const double j = youden_j_at(s, cands[i]);
    if (j > best_j) {
      best_j = j;
      best_t = cands[i];
    }
  }
  return best_t;
}

struct AccuracyPrecision {
  double accuracy = 0.0;
  double precision = 0.0;
  bool precision_defined = true;  // false when no predicted positives
};

inline AccuracyPrecision accuracy_precision_at(const ScoredSet& s, double t) {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const bool pred = s.scores[i] >= t;
    if (s.labels[i] == 1) {
      pred ? ++tp : ++fn;
    } else {
      pred ? ++fp : ++tn;
    }
  }
  AccuracyPrecision out;
  out.accuracy = s.size() ? static_cast<double>(tp + tn) / static_cast<double>(s.size()) : 0.0;
  if (tp + fp == 0) {
    out.precision = 0.0;
    out.precision_defined = false;
  } else {
    out.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  }
  return out;
}

struct EvaluationReport {
  double roc_auc = 0.0;
  double threshold = 0.0;
  double accuracy = 0.0;
  double precision = 0.0;
  bool precision_defined = true;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;

  // Aggregates across runs (mean above, SDs here) when n_runs > 1.
  std::size_t n_runs = 1;
  double roc_auc_sd = 0.0;
  double accuracy_sd = 0.0;
  double precision_sd = 0.0;
  double threshold_sd = 0.0;

  nlohmann::json to_json() const {
    return {{"roc_auc", roc_auc},         {"threshold", threshold},
            {"accuracy", accuracy},       {"precision", precision},
            {"precision_defined", precision_defined},
            {"n_pos", n_pos},             {"n_neg", n_neg},
            {"n_runs", n_runs},           {"roc_auc_sd", roc_auc_sd},
            {"accuracy_sd", accuracy_sd}, {"precision_sd", precision_sd},
            {"threshold_sd", threshold_sd}};
  }
};

/// Evaluate a scored set at a given threshold (typically the validation-set
/// Youden threshold for test / OOD evaluation).
inline EvaluationReport evaluate_at(const ScoredSet& s, double threshold) {
  EvaluationReport r;
  r.roc_auc = roc_auc(s);
  r.threshold = threshold;
  const auto ap = accuracy_precision_at(s, threshold);
  r.accuracy = ap.accuracy;
  r.precision = ap.precision;
  r.precision_defined = ap.precision_defined;
  r.n_pos = s.n_pos();
  r.n_neg = s.n_neg();
  return r;
}

inline EvaluationReport evaluate(const ScoredSet& s) {
  return evaluate_at(s, youden_threshold(s));
}

/// Mean and sample SD (n-1) per metric across runs; SD = 0 for a single run.
inline EvaluationReport aggregate_runs(const std::vector<EvaluationReport>& runs) {
  if (runs.empty()) throw std::runtime_error("aggregate_runs: empty report list");
  auto mean_sd = [&](auto getter) {
    double m = 0.0;
    for (const auto& r : runs) m += getter(r);
    m /= static_cast<double>(runs.size());
    double sd = 0.0;
    if (runs.size() > 1) {
      double ss = 0.0;
      for (const auto& r : runs) {
        const double d = getter(r) - m;
        ss += d * d;
      }
      sd = std::sqrt(ss / static_cast<double>(runs.size() - 1));
    }
    return std::pair<double, double>(m, sd);
  };
  EvaluationReport out;
  std::tie(out.roc_auc, out.roc_auc_sd) = mean_sd([](const auto& r) { return r.roc_auc; });
  std::tie(out.accuracy, out.accuracy_sd) = mean_sd([](const auto& r) { return r.accuracy; });
  std::tie(out.precision, out.precision_sd) = mean_sd([](const auto& r) { return r.precision; });
  std::tie(out.threshold, out.threshold_sd) = mean_sd([](const auto& r) { return r.threshold; });
  out.precision_defined =
      std::all_of(runs.begin(), runs.end(), [](const auto& r) { return r.precision_defined; });
  out.n_pos = runs.front().n_pos;
  out.n_neg = runs.front().n_neg;
  out.n_runs = runs.size();
  return out;
}

}  // namespace stagenet
