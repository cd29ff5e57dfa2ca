#include <doctest.h>

#include <cmath>

#include "stagenet/metrics.hpp"
#include "stagenet/rng.hpp"

using namespace stagenet;

namespace {

// Brute-force pairwise oracle for the AUC.
double auc_oracle(const ScoredSet& s) {
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.labels[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (s.labels[j] != 0) continue;
      ++pairs;
      if (s.scores[i] > s.scores[j]) sum += 1.0;
      else if (s.scores[i] == s.scores[j]) sum += 0.5;
    }
  }
  return sum / static_cast<double>(pairs);
}

ScoredSet random_set(Rng& rng, std::size_t n, bool inject_ties) {
  ScoredSet s;
  while (true) {
    s = ScoredSet{};
    for (std::size_t i = 0; i < n; ++i) {
      double score = rng.uniform(0.0, 1.0);
      if (inject_ties && rng.bernoulli(0.4)) score = std::round(score * 4.0) / 4.0;
      s.add(rng.bernoulli(0.5) ? 1 : 0, score);
    }
    if (s.n_pos() > 0 && s.n_neg() > 0) return s;
  }
}

}  // namespace

TEST_CASE("roc_auc: perfect separation and all-ties") {
  ScoredSet s;
  s.add(1, 0.9);
  s.add(1, 0.8);
  s.add(0, 0.2);
  s.add(0, 0.1);
  CHECK(roc_auc(s) == doctest::Approx(1.0));

  ScoredSet t;
  for (int i = 0; i < 6; ++i) t.add(i % 2, 0.5);
  CHECK(roc_auc(t) == doctest::Approx(0.5));
}

TEST_CASE("roc_auc matches the hand-enumerated 3/4 example") {
  ScoredSet s;
  s.add(1, 0.9);
  s.add(1, 0.4);
  s.add(0, 0.5);
  s.add(0, 0.3);
  CHECK(roc_auc(s) == doctest::Approx(0.75));
}

TEST_CASE("roc_auc equals the pairwise oracle on 200 random sets with ties") {
  Rng rng(100);
  for (int trial = 0; trial < 200; ++trial) {
    auto s = random_set(rng, static_cast<std::size_t>(rng.uniform_int(2, 50)), true);
    CHECK(std::abs(roc_auc(s) - auc_oracle(s)) < 1e-9);
  }
}

TEST_CASE("roc_auc invariances") {
  Rng rng(200);
  for (int trial = 0; trial < 50; ++trial) {
    auto s = random_set(rng, 20, true);
    const double base = roc_auc(s);

    ScoredSet mono = s;  // strictly increasing transform
    for (auto& x : mono.scores) x = std::exp(3.0 * x) + x;
    CHECK(roc_auc(mono) == doctest::Approx(base).epsilon(1e-12));

    ScoredSet neg = s;  // negated scores flip the AUC
    for (auto& x : neg.scores) x = -x;
    CHECK(roc_auc(neg) == doctest::Approx(1.0 - base).epsilon(1e-12));

    ScoredSet swapped = neg;  // negate + swap labels restores it
    for (auto& l : swapped.labels) l = 1 - l;
    CHECK(roc_auc(swapped) == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("roc_auc rejects single-class input") {
  ScoredSet s;
  s.add(1, 0.5);
  s.add(1, 0.7);
  CHECK_THROWS_AS(roc_auc(s), std::runtime_error);
}

TEST_CASE("youden_threshold: separated case returns the first maximizing midpoint") {
  ScoredSet s;
  s.add(1, 0.9);
  s.add(1, 0.8);
  s.add(0, 0.2);
  s.add(0, 0.1);
  CHECK(youden_threshold(s) == doctest::Approx(0.5));
}

TEST_CASE("youden_threshold: all scores identical returns the below-all sentinel") {
  ScoredSet s;
  s.add(1, 0.5);
  s.add(0, 0.5);
  CHECK(youden_threshold(s) == doctest::Approx(-0.5));  // 0.5 - 1
}

TEST_CASE("youden_threshold matches an exhaustive candidate scan on 200 sets") {
  Rng rng(300);
  for (int trial = 0; trial < 200; ++trial) {
    auto s = random_set(rng, static_cast<std::size_t>(rng.uniform_int(2, 40)), true);
    const double t = youden_threshold(s);
    // Oracle: exhaustive scan with smallest-t tie-break.
    double best_t = 0.0, best_j = -2.0;
    for (double c : youden_candidates(s)) {
      const double j = youden_j_at(s, c);
      if (j > best_j) {
        best_j = j;
        best_t = c;
      }
    }
    CHECK(t == best_t);
    for (double c : youden_candidates(s)) {
      CHECK(youden_j_at(s, t) >= youden_j_at(s, c));
    }
  }
}

TEST_CASE("accuracy/precision at a threshold") {
  ScoredSet s;
  s.add(1, 0.9);
  s.add(1, 0.4);
  s.add(0, 0.5);
  s.add(0, 0.3);
  auto ap = accuracy_precision_at(s, 0.45);  // TP=1 FP=1 TN=1 FN=1
  CHECK(ap.accuracy == doctest::Approx(0.5));
  CHECK(ap.precision == doctest::Approx(0.5));
  CHECK(ap.precision_defined);

  auto none = accuracy_precision_at(s, 2.0);  // nothing predicted positive
  CHECK(none.accuracy == doctest::Approx(0.5));  // n_neg / n
  CHECK_FALSE(none.precision_defined);
  CHECK(none.precision == 0.0);

  ScoredSet sep;
  sep.add(1, 0.9);
  sep.add(0, 0.1);
  auto perfect = accuracy_precision_at(sep, youden_threshold(sep));
  CHECK(perfect.accuracy == doctest::Approx(1.0));
  CHECK(perfect.precision == doctest::Approx(1.0));
}

TEST_CASE("aggregate_runs: mean and sample SD") {
  EvaluationReport a, b;
  a.roc_auc = 0.6;
  b.roc_auc = 0.7;
  auto agg = aggregate_runs({a, b});
  CHECK(agg.roc_auc == doctest::Approx(0.65));
  CHECK(agg.roc_auc_sd == doctest::Approx(0.070710678).epsilon(1e-6));
  CHECK(agg.n_runs == 2);

  auto single = aggregate_runs({a});
  CHECK(single.roc_auc == doctest::Approx(0.6));
  CHECK(single.roc_auc_sd == 0.0);

  auto swapped = aggregate_runs({b, a});
  CHECK(swapped.roc_auc == doctest::Approx(agg.roc_auc));
  CHECK(swapped.roc_auc_sd == doctest::Approx(agg.roc_auc_sd));

  CHECK_THROWS_AS(aggregate_runs({}), std::runtime_error);
}
