#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "stagenet/rng.hpp"
#include "stagenet/volume.hpp"

namespace stagenet {

enum class Sex { female, male };
enum class Diagnosis { control, patient };

struct SubjectRecord {
  std::string subject_id;
  double age = 0.0;
  Sex sex = Sex::female;
  Diagnosis diagnosis = Diagnosis::control;
  std::optional<int> hy_stage;  // present iff diagnosis == patient
  std::string site;
  std::string volume_ref;

  void validate(const std::string& context) const {
    if (subject_id.empty()) throw std::runtime_error(context + ": empty subject_id");
    if (!(age > 0.0 && age < 120.0)) {
      throw std::runtime_error(context + ": age " + std::to_string(age) +
                               " outside (0, 120) for subject " + subject_id);
    }
    if (diagnosis == Diagnosis::control && hy_stage.has_value()) {
      throw std::runtime_error(context + ": control subject " + subject_id +
                               " carries an H&Y stage");
    }
    if (diagnosis == Diagnosis::patient) {
      if (!hy_stage.has_value()) {
        throw std::runtime_error(context + ": patient " + subject_id + " missing H&Y stage");
      }
      if (*hy_stage < 0 || *hy_stage > 4) {
        throw std::runtime_error(context + ": subject " + subject_id + " has H&Y stage " +
                                 std::to_string(*hy_stage) + " outside 0..4");
      }
    }
  }
};

struct CohortManifest {
  std::string name;
  std::vector<SubjectRecord> records;
  Shape3 canonical_shape{0, 0, 0};

  void validate() const {
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const std::string ctx = "manifest " + name + " row " + std::to_string(i + 1);
      records[i].validate(ctx);
      if (!seen.insert(records[i].subject_id).second) {
        throw std::runtime_error(ctx + ": duplicate subject_id " + records[i].subject_id);
      }
    }
  }

  std::size_t count(Diagnosis dx) const {
    return static_cast<std::size_t>(std::count_if(
        records.begin(), records.end(),
        [dx](const SubjectRecord& r) { return r.diagnosis == dx; }));
  }
};

struct SplitSpec {
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  std::uint64_t seed = 0;
  // Stratification keys; diagnosis/hy_stage default so every stage shows up
  // in every split when counts allow.
  bool by_diagnosis = true;
  bool by_stage = true;
  bool by_sex = false;

  void validate() const {
    auto in01 = [](double f) { return f > 0.0 && f < 1.0; };
    if (!in01(train_fraction) || !in01(val_fraction) || !in01(test_fraction)) {
      throw std::runtime_error("split fractions must each lie in (0,1)");
    }
    if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9) {
      throw std::runtime_error("split fractions must sum to 1");
    }
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline const char* kManifestHeader = "subject_id,age,sex,diagnosis,hy_stage,site,volume_ref";

/// Manifest CSV: header exactly kManifestHeader; sex F/M, diagnosis CN/PD,
/// hy_stage empty for CN.
inline CohortManifest load_manifest(const std::string& path,
                                    const Shape3& canonical_shape = {0, 0, 0}) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open manifest " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("manifest " + path + " is empty");
  if (detail::trim(line) != kManifestHeader) {
    throw std::runtime_error("manifest " + path + " has unexpected header: " + line);
  }
  CohortManifest m;
  m.name = path;
  m.canonical_shape = canonical_shape;
  std::size_t row = 1;
  while (std::getline(f, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_csv_line(line);
    const std::string ctx = "manifest " + path + " row " + std::to_string(row);
    if (fields.size() != 7) {
      throw std::runtime_error(ctx + ": expected 7 fields, got " +
                               std::to_string(fields.size()));
    }
    SubjectRecord r;
    r.subject_id = detail::trim(fields[0]);
    try {
      r.age = std::stod(detail::trim(fields[1]));
    } catch (const std::exception&) {
      throw std::runtime_error(ctx + ": bad age '" + fields[1] + "'");
    }
    const std::string sex = detail::trim(fields[2]);
    if (sex == "F") r.sex = Sex::female;
    else if (sex == "M") r.sex = Sex::male;
    else throw std::runtime_error(ctx + ": sex must be F or M, got '" + sex + "'");
    const std::string dx = detail::trim(fields[3]);
    if (dx == "CN") r.diagnosis = Diagnosis::control;
    else if (dx == "PD") r.diagnosis = Diagnosis::patient;
    else throw std::runtime_error(ctx + ": diagnosis must be CN or PD, got '" + dx + "'");
    const std::string stage = detail::trim(fields[4]);
    if (!stage.empty()) {
      try {
        r.hy_stage = std::stoi(stage);
      } catch (const std::exception&) {
        throw std::runtime_error(ctx + ": bad hy_stage '" + stage + "'");
      }
    }
    r.site = detail::trim(fields[5]);
    r.volume_ref = detail::trim(fields[6]);
    r.validate(ctx);
    m.records.push_back(std::move(r));
  }
  m.validate();
  return m;
}

inline void save_manifest(const CohortManifest& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write manifest " + path);
  f << kManifestHeader << "\n";
  for (const auto& r : m.records) {
    f << r.subject_id << "," << r.age << "," << (r.sex == Sex::female ? "F" : "M") << ","
      << (r.diagnosis == Diagnosis::control ? "CN" : "PD") << ","
      << (r.hy_stage ? std::to_string(*r.hy_stage) : "") << "," << r.site << ","
      << r.volume_ref << "\n";
  }
}

struct SplitResult {
  CohortManifest train, val, test;
};

/// Stratified split with largest-remainder apportionment per stratum; ties in
/// the remainder go to the earlier split (train, val, test). Deterministic
/// for a fixed seed regardless of input record order.
inline SplitResult split_manifest(const CohortManifest& manifest, const SplitSpec& spec) {
  spec.validate();
  if (manifest.records.empty()) throw std::runtime_error("split_manifest: empty manifest");

  using Key = std::tuple<int, int, int>;
  std::map<Key, std::vector<const SubjectRecord*>> strata;
  for (const auto& r : manifest.records) {
    Key k{spec.by_diagnosis ? static_cast<int>(r.diagnosis) : 0,
          spec.by_stage ? (r.hy_stage ? *r.hy_stage : -1) : 0,
          spec.by_sex ? static_cast<int>(r.sex) : 0};
    strata[k].push_back(&r);
  }

  SplitResult out;
  for (auto* part : {&out.train, &out.val, &out.test}) {
    part->canonical_shape = manifest.canonical_shape;
  }
  out.train.name = manifest.name + ":train";
  out.val.name = manifest.name + ":val";
  out.test.name = manifest.name + ":test";

  const double fracs[3] = {spec.train_fraction, spec.val_fraction, spec.test_fraction};
  std::size_t stratum_idx = 0;
  for (auto& [key, recs] : strata) {
    std::sort(recs.begin(), recs.end(), [](const SubjectRecord* a, const SubjectRecord* b) {
      return a->subject_id < b->subject_id;
    });
    Rng rng(spec.seed, 0x517u + stratum_idx);
    rng.shuffle(recs.begin(), recs.end());
    ++stratum_idx;

    const std::size_t n = recs.size();
    if (n < 3) {
      std::cerr << "warning: stratum of size " << n
                << " is smaller than the number of splits; assigning by rounding rule\n";
    }
    std::size_t counts[3];
    double rem[3];
    std::size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
      const double q = static_cast<double>(n) * fracs[i];
      counts[i] = static_cast<std::size_t>(q);
      rem[i] = q - static_cast<double>(counts[i]);
      assigned += counts[i];
    }
    while (assigned < n) {
      int best = 0;
      for (int i = 1; i < 3; ++i) {
        if (rem[i] > rem[best]) best = i;  // ties keep the earlier split
      }
      counts[best] += 1;
      rem[best] = -1.0;
      ++assigned;
    }

    std::size_t pos = 0;
    CohortManifest* parts[3] = {&out.train, &out.val, &out.test};
    for (int i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < counts[i]; ++j) parts[i]->records.push_back(*recs[pos++]);
    }
  }
  return out;
}

}  // namespace stagenet
