#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>

#include "stagenet/manifest.hpp"

using namespace stagenet;

namespace {

std::string write_temp(const std::string& content) {
  static int counter = 0;
  std::string path = "manifest_test_" + std::to_string(counter++) + ".csv";
  std::ofstream f(path);
  f << content;
  return path;
}

/// Taiwan-like training counts: CN-180, s1-61, s2-67, s3-43, s4-27.
CohortManifest taiwan_like() {
  CohortManifest m;
  m.name = "taiwan_like";
  auto add = [&m](const std::string& prefix, int n, Diagnosis dx, std::optional<int> stage) {
    for (int i = 0; i < n; ++i) {
      SubjectRecord r;
      r.subject_id = prefix + std::to_string(i);
      r.age = 60.0;
      r.sex = i % 2 ? Sex::male : Sex::female;
      r.diagnosis = dx;
      r.hy_stage = stage;
      r.site = "tw";
      r.volume_ref = r.subject_id;
      m.records.push_back(r);
    }
  };
  add("cn", 180, Diagnosis::control, std::nullopt);
  add("s1_", 61, Diagnosis::patient, 1);
  add("s2_", 67, Diagnosis::patient, 2);
  add("s3_", 43, Diagnosis::patient, 3);
  add("s4_", 27, Diagnosis::patient, 4);
  return m;
}

}  // namespace

TEST_CASE("load_manifest parses a minimal valid file") {
  auto path = write_temp(
      "subject_id,age,sex,diagnosis,hy_stage,site,volume_ref\n"
      "a,62.5,F,CN,,siteA,a\n"
      "b,58.1,M,PD,3,siteA,b\n");
  auto m = load_manifest(path);
  REQUIRE(m.records.size() == 2);
  CHECK(m.records[0].diagnosis == Diagnosis::control);
  CHECK_FALSE(m.records[0].hy_stage.has_value());
  CHECK(m.records[1].hy_stage == 3);
  std::remove(path.c_str());
}

TEST_CASE("load_manifest rejects a control with a stage, naming the row") {
  auto path = write_temp(
      "subject_id,age,sex,diagnosis,hy_stage,site,volume_ref\n"
      "a,62.5,F,CN,2,siteA,a\n");
  CHECK_THROWS_WITH_AS(load_manifest(path), doctest::Contains("row 2"), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("load_manifest rejects duplicate ids and bad header") {
  auto dup = write_temp(
      "subject_id,age,sex,diagnosis,hy_stage,site,volume_ref\n"
      "a,62.5,F,CN,,s,a\n"
      "a,63.5,M,PD,1,s,a2\n");
  CHECK_THROWS_WITH_AS(load_manifest(dup), doctest::Contains("duplicate"), std::runtime_error);
  std::remove(dup.c_str());

  auto bad = write_temp("id,age\na,1\n");
  CHECK_THROWS_AS(load_manifest(bad), std::runtime_error);
  std::remove(bad.c_str());
}

TEST_CASE("load_manifest handles Taiwan-like counts") {
  auto m = taiwan_like();
  std::string path = "taiwan_like_test.csv";
  save_manifest(m, path);
  auto loaded = load_manifest(path);
  CHECK(loaded.records.size() == 378);
  std::remove(path.c_str());
}

TEST_CASE("record invariants: age bounds and stage range") {
  SubjectRecord r;
  r.subject_id = "x";
  r.age = 130;
  r.diagnosis = Diagnosis::control;
  CHECK_THROWS_AS(r.validate("t"), std::runtime_error);
  r.age = 50;
  r.diagnosis = Diagnosis::patient;
  r.hy_stage = 7;
  CHECK_THROWS_AS(r.validate("t"), std::runtime_error);
  r.hy_stage = 4;
  CHECK_NOTHROW(r.validate("t"));
}

TEST_CASE("split_manifest: exact divisibility keeps per-class fractions") {
  CohortManifest m;
  m.name = "even";
  for (int i = 0; i < 100; ++i) {
    SubjectRecord r;
    r.subject_id = "s" + std::to_string(i);
    r.age = 50;
    r.sex = Sex::female;
    r.diagnosis = i < 50 ? Diagnosis::control : Diagnosis::patient;
    if (r.diagnosis == Diagnosis::patient) r.hy_stage = 2;
    r.site = "x";
    r.volume_ref = r.subject_id;
    m.records.push_back(r);
  }
  SplitSpec spec;
  spec.seed = 42;
  auto sr = split_manifest(m, spec);
  CHECK(sr.train.records.size() == 80);
  CHECK(sr.val.records.size() == 10);
  CHECK(sr.test.records.size() == 10);
  CHECK(sr.train.count(Diagnosis::control) == 40);
  CHECK(sr.val.count(Diagnosis::control) == 5);
  CHECK(sr.test.count(Diagnosis::control) == 5);
}

TEST_CASE("split_manifest is deterministic and partitions exactly") {
  auto m = taiwan_like();
  SplitSpec spec;
  spec.seed = 7;
  auto a = split_manifest(m, spec);
  auto b = split_manifest(m, spec);
  auto ids = [](const CohortManifest& c) {
    std::vector<std::string> v;
    for (const auto& r : c.records) v.push_back(r.subject_id);
    return v;
  };
  CHECK(ids(a.train) == ids(b.train));
  CHECK(ids(a.val) == ids(b.val));
  CHECK(ids(a.test) == ids(b.test));

  std::set<std::string> all;
  for (const auto* part : {&a.train, &a.val, &a.test}) {
    for (const auto& r : part->records) CHECK(all.insert(r.subject_id).second);
  }
  CHECK(all.size() == m.records.size());
}

// Largest-remainder apportionment on the Taiwan-like manifest:
// CN 180 -> 144/18/18, s1 61 -> 49/6/6, s2 67 -> 53/7/7, s3 43 -> 35/4/4,
// s4 27 -> 21/3/3, totalling 302/38/38.
TEST_CASE("split_manifest: Taiwan-like manifest lands on 302/38/38") {
  auto m = taiwan_like();
  SplitSpec spec;
  spec.seed = 1;
  auto sr = split_manifest(m, spec);
  CHECK(sr.train.records.size() == 302);
  CHECK(sr.val.records.size() == 38);
  CHECK(sr.test.records.size() == 38);
}

TEST_CASE("split_manifest: per-stratum deviation at most one record") {
  auto m = taiwan_like();
  SplitSpec spec;
  spec.seed = 3;
  auto sr = split_manifest(m, spec);
  auto stage_count = [](const CohortManifest& c, std::optional<int> stage) {
    std::size_t n = 0;
    for (const auto& r : c.records) {
      if (r.hy_stage == stage) ++n;
    }
    return n;
  };
  const double fr[3] = {0.8, 0.1, 0.1};
  const CohortManifest* parts[3] = {&sr.train, &sr.val, &sr.test};
  for (std::optional<int> stage : {std::optional<int>{}, std::optional<int>{1},
                                   std::optional<int>{2}, std::optional<int>{3},
                                   std::optional<int>{4}}) {
    const double total = static_cast<double>(stage_count(*parts[0], stage) +
                                             stage_count(*parts[1], stage) +
                                             stage_count(*parts[2], stage));
    for (int i = 0; i < 3; ++i) {
      const double got = static_cast<double>(stage_count(*parts[i], stage));
      CHECK(std::abs(got - fr[i] * total) <= 1.0);
    }
  }
}

TEST_CASE("split spec validation") {
  SplitSpec spec;
  spec.train_fraction = 0.9;
  CHECK_THROWS_AS(spec.validate(), std::runtime_error);
  spec.train_fraction = 0.8;
  CHECK_NOTHROW(spec.validate());
}
