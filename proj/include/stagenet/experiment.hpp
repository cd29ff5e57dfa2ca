#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "stagenet/curriculum.hpp"
#include "stagenet/manifest.hpp"
#include "stagenet/metrics.hpp"
#include "stagenet/nn/model.hpp"
#include "stagenet/occlusion.hpp"
#include "stagenet/synthetic.hpp"
#include "stagenet/train.hpp"

#include <nlohmann/json.hpp>

namespace stagenet {

namespace fs = std::filesystem;

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                                const std::string& section) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw std::runtime_error("unknown key '" + it.key() + "' in config section '" + section +
                               "'");
    }
  }
}

inline Shape3 shape_from_json(const nlohmann::json& j) {
  return Shape3{j.at(0).get<std::int64_t>(), j.at(1).get<std::int64_t>(),
                j.at(2).get<std::int64_t>()};
}

}  // namespace detail

/// One JSON document drives the whole pipeline; unknown keys are rejected.
struct ExperimentConfig {
  SyntheticConfig synthetic;
  double ood_offset = 0.5;
  std::uint64_t ood_seed = 9001;
  SplitSpec split;
  nn::BackboneConfig backbone;
  TrainConfig train;
  OcclusionConfig occlusion;
  int n_runs = 3;
  std::string output_dir = "out";

  static ExperimentConfig from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(j,
                                {"synthetic", "split", "backbone", "train", "occlusion",
                                 "n_runs", "output_dir"},
                                "<top level>");
    ExperimentConfig c;
    if (j.contains("synthetic")) {
      const auto& s = j.at("synthetic");
      detail::reject_unknown_keys(
          s,
          {"shape", "n_controls", "n_per_stage", "effect_sizes", "signal_center",
           "signal_half_extent", "noise_sd", "site_offset", "age_range", "sex_signal_scale",
           "seed", "ood_offset", "ood_seed"},
          "synthetic");
      if (s.contains("shape")) c.synthetic.shape = detail::shape_from_json(s.at("shape"));
      if (s.contains("n_controls")) c.synthetic.n_controls = s.at("n_controls").get<int>();
      if (s.contains("n_per_stage")) {
        for (int i = 0; i < 4; ++i) c.synthetic.n_per_stage[static_cast<std::size_t>(i)] =
            s.at("n_per_stage").at(i).get<int>();
      }
      if (s.contains("effect_sizes")) {
        c.synthetic.effect_sizes.clear();
        for (int st = 1; st <= 4; ++st) {
          c.synthetic.effect_sizes[st] = s.at("effect_sizes").at(st - 1).get<double>();
        }
      }
      if (s.contains("signal_center")) c.synthetic.signal_region.center =
          detail::shape_from_json(s.at("signal_center"));
      if (s.contains("signal_half_extent")) c.synthetic.signal_region.half_extent =
          detail::shape_from_json(s.at("signal_half_extent"));
      if (s.contains("noise_sd")) c.synthetic.noise_sd = s.at("noise_sd").get<double>();
      if (s.contains("site_offset")) c.synthetic.site_offset = s.at("site_offset").get<double>();
      if (s.contains("age_range")) {
        c.synthetic.age_range = {s.at("age_range").at(0).get<double>(),
                                 s.at("age_range").at(1).get<double>()};
      }
      if (s.contains("sex_signal_scale")) c.synthetic.sex_signal_scale =
          s.at("sex_signal_scale").get<double>();
      if (s.contains("seed")) c.synthetic.seed = s.at("seed").get<std::uint64_t>();
      if (s.contains("ood_offset")) c.ood_offset = s.at("ood_offset").get<double>();
      if (s.contains("ood_seed")) c.ood_seed = s.at("ood_seed").get<std::uint64_t>();
    }
    if (j.contains("split")) {
      const auto& s = j.at("split");
      detail::reject_unknown_keys(
          s, {"train_fraction", "val_fraction", "test_fraction", "seed", "stratify_by"}, "split");
      if (s.contains("train_fraction")) c.split.train_fraction = s.at("train_fraction");
      if (s.contains("val_fraction")) c.split.val_fraction = s.at("val_fraction");
      if (s.contains("test_fraction")) c.split.test_fraction = s.at("test_fraction");
      if (s.contains("seed")) c.split.seed = s.at("seed").get<std::uint64_t>();
      if (s.contains("stratify_by")) {
        c.split.by_diagnosis = c.split.by_stage = c.split.by_sex = false;
        for (const auto& k : s.at("stratify_by")) {
          const std::string key = k.get<std::string>();
          if (key == "diagnosis") c.split.by_diagnosis = true;
          else if (key == "hy_stage") c.split.by_stage = true;
          else if (key == "sex") c.split.by_sex = true;
          else throw std::runtime_error("unknown stratify_by key: " + key);
        }
      }
    }
    c.backbone = nn::BackboneConfig::preset(nn::BackboneVariant::tiny_densenet_3d,
                                            c.synthetic.shape);
    if (j.contains("backbone")) {
      const auto& s = j.at("backbone");
      detail::reject_unknown_keys(
          s, {"variant", "init_features", "growth_rate", "block_layers", "stem_kernel"},
          "backbone");
      if (s.contains("variant")) {
        c.backbone = nn::BackboneConfig::preset(
            nn::backbone_variant_from_string(s.at("variant").get<std::string>()),
            c.synthetic.shape);
      }
      if (s.contains("init_features")) c.backbone.init_features = s.at("init_features");
      if (s.contains("growth_rate")) c.backbone.growth_rate = s.at("growth_rate");
      if (s.contains("block_layers")) {
        for (int i = 0; i < 4; ++i) c.backbone.block_layers[static_cast<std::size_t>(i)] =
            s.at("block_layers").at(i).get<std::int64_t>();
      }
      if (s.contains("stem_kernel")) c.backbone.stem_kernel = s.at("stem_kernel");
    }
    if (j.contains("train")) {
      const auto& s = j.at("train");
      detail::reject_unknown_keys(s,
                                  {"learning_rate", "optimizer", "batch_size",
                                   "epochs_per_episode", "patience", "seed", "kind", "balance",
                                   "pretrained"},
                                  "train");
      if (s.contains("learning_rate")) c.train.learning_rate = s.at("learning_rate");
      if (s.contains("optimizer")) c.train.optimizer =
          optimizer_from_string(s.at("optimizer").get<std::string>());
      if (s.contains("batch_size")) c.train.batch_size = s.at("batch_size").get<std::int64_t>();
      if (s.contains("epochs_per_episode")) c.train.epochs_per_episode =
          s.at("epochs_per_episode").get<int>();
      if (s.contains("patience")) c.train.patience = s.at("patience").get<int>();
      if (s.contains("seed")) c.train.seed = s.at("seed").get<std::uint64_t>();
      if (s.contains("kind")) c.train.kind =
          curriculum_kind_from_string(s.at("kind").get<std::string>());
      if (s.contains("balance")) c.train.balance =
          s.at("balance").get<std::string>() == "balanced" ? BalanceMode::balanced
                                                           : BalanceMode::off;
      if (s.contains("pretrained") && !s.at("pretrained").is_null()) {
        c.train.pretrained = s.at("pretrained").get<std::string>();
      }
    }
    if (j.contains("occlusion")) {
      const auto& s = j.at("occlusion");
      detail::reject_unknown_keys(s, {"patch_size", "stride", "fill_value", "edge_mode"},
                                  "occlusion");
      if (s.contains("patch_size")) c.occlusion.patch_size = s.at("patch_size").get<std::int64_t>();
      if (s.contains("stride")) c.occlusion.stride = s.at("stride").get<std::int64_t>();
      if (s.contains("fill_value")) c.occlusion.fill_value = s.at("fill_value");
      if (s.contains("edge_mode")) {
        const std::string m = s.at("edge_mode").get<std::string>();
        if (m == "clamp_extra_position") c.occlusion.edge_mode = EdgeMode::clamp_extra_position;
        else if (m == "interior_only") c.occlusion.edge_mode = EdgeMode::interior_only;
        else throw std::runtime_error("unknown edge_mode: " + m);
      }
    }
    if (j.contains("n_runs")) c.n_runs = j.at("n_runs").get<int>();
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    c.synthetic.validate();
    c.train.validate();
    return c;
  }

  static ExperimentConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config " + path);
    return from_json(nlohmann::json::parse(f));
  }
};

// --------------------------------------------------------------- datasets

/// Disk-backed volume lookup rooted at a dataset directory, with caching.
class DiskVolumes {
 public:
  explicit DiskVolumes(std::string root) : root_(std::move(root)) {}
  const Volume& operator()(const SubjectRecord& r) {
    auto it = cache_.find(r.volume_ref);
    if (it != cache_.end()) return it->second;
    Volume v;
    try {
      v = load_volume((fs::path(root_) / r.volume_ref).string());
    } catch (const std::exception& e) {
      throw std::runtime_error("subject " + r.subject_id + ": " + e.what());
    }
    return cache_.emplace(r.volume_ref, std::move(v)).first->second;
  }

 private:
  std::string root_;
  std::unordered_map<std::string, Volume> cache_;
};

/// Threshold comes from in-distribution validation data; no refitting on the
/// evaluated (possibly OOD) set.
template <typename T>
EvaluationReport zero_shot_eval(nn::MultiTaskModel<T>& model, const DataSet<T>& ds,
                                double threshold_from_val) {
  auto ev = detail::evaluate_model(model, ds);
  return evaluate_at(ev.dx_scores, threshold_from_val);
}

// --------------------------------------------------------------- commands

inline fs::path data_dir(const ExperimentConfig& c) { return fs::path(c.output_dir) / "data"; }
inline fs::path runs_dir(const ExperimentConfig& c) { return fs::path(c.output_dir) / "runs"; }
inline fs::path reports_dir(const ExperimentConfig& c) {
  return fs::path(c.output_dir) / "reports";
}

/// generate: manifests (train/val/test/ood) + volumes + ground truth on disk.
inline void cmd_generate(const ExperimentConfig& cfg) {
  const fs::path dd = data_dir(cfg);
  fs::create_directories(dd / "vols");

  SyntheticConfig id_cfg = cfg.synthetic;
  id_cfg.site = "synth";
  SyntheticCohort cohort = generate_cohort(id_cfg);

  SyntheticConfig ood_cfg = cfg.synthetic;
  ood_cfg.site = "ood";
  ood_cfg.seed = cfg.ood_seed;
  SyntheticCohort ood = generate_ood_cohort(ood_cfg, cfg.ood_offset);

  auto split = split_manifest(cohort.manifest, cfg.split);
  save_manifest(split.train, (dd / "train.csv").string());
  save_manifest(split.val, (dd / "val.csv").string());
  save_manifest(split.test, (dd / "test.csv").string());
  save_manifest(ood.manifest, (dd / "ood.csv").string());

  nlohmann::json gt = cohort.ground_truth.to_json();
  const nlohmann::json ood_gt = ood.ground_truth.to_json();
  for (auto it = ood_gt.begin(); it != ood_gt.end(); ++it) gt[it.key()] = it.value();
  {
    std::ofstream f(dd / "ground_truth.json");
    f << gt.dump(2) << "\n";
  }
  {
    nlohmann::json meta = {{"canonical_shape",
                            {cfg.synthetic.shape[0], cfg.synthetic.shape[1],
                             cfg.synthetic.shape[2]}}};
    std::ofstream f(dd / "meta.json");
    f << meta.dump(2) << "\n";
  }
  for (const auto& [id, vol] : cohort.volumes) save_volume(vol, (dd / "vols" / id).string());
  for (const auto& [id, vol] : ood.volumes) save_volume(vol, (dd / "vols" / id).string());
}

inline Shape3 load_canonical_shape(const ExperimentConfig& cfg) {
  std::ifstream f(data_dir(cfg) / "meta.json");
  if (!f) throw std::runtime_error("dataset not found; run generate first");
  nlohmann::json meta = nlohmann::json::parse(f);
  return detail::shape_from_json(meta.at("canonical_shape"));
}

template <typename T = float>
DataSet<T> load_dataset(const ExperimentConfig& cfg, const std::string& name) {
  const Shape3 shape = load_canonical_shape(cfg);
  CohortManifest m = load_manifest((data_dir(cfg) / (name + ".csv")).string(), shape);
  DiskVolumes vols((data_dir(cfg) / "vols").string());
  return make_dataset<T>(m, [&vols](const SubjectRecord& r) -> const Volume& { return vols(r); });
}

/// pretrain: fresh synthetic cohort (independent seed), sex-classification
/// proxy task, backbone-only checkpoint at <output>/pretrain/backbone.ck.
inline std::string cmd_pretrain(const ExperimentConfig& cfg) {
  SyntheticConfig pc = cfg.synthetic;
  pc.site = "pretrain";
  pc.seed = mix_seed(cfg.synthetic.seed, 0x9e7a);
  SyntheticCohort cohort = generate_cohort(pc);
  auto split = split_manifest(cohort.manifest, cfg.split);

  auto lookup = [&cohort](const SubjectRecord& r) -> const Volume& {
    return cohort.volumes.at(r.subject_id);
  };
  DataSet<float> train_ds = make_dataset<float>(split.train, lookup);
  DataSet<float> val_ds = make_dataset<float>(split.val, lookup);

  nn::MultiTaskModel<float> model(cfg.backbone, cfg.train.seed);
  TrainConfig tc = cfg.train;
  tc.pretrained.reset();
  auto result = pretrain_proxy(model, train_ds, val_ds, tc);

  const fs::path pd = fs::path(cfg.output_dir) / "pretrain";
  fs::create_directories(pd);
  nn::save_checkpoint(model, (pd / "backbone.ck").string(), nn::CheckpointKind::backbone_only);
  result.write_jsonl((pd / "log.jsonl").string());
  return (pd / "backbone.ck").string();
}

struct RunArtifacts {
  std::string checkpoint;
  std::string log;
};

/// train: n_runs independent seeds of curriculum training over the on-disk
/// dataset; per-run logs, plans, and full checkpoints.
inline std::vector<RunArtifacts> cmd_train(const ExperimentConfig& cfg) {
  DataSet<float> train_ds = load_dataset<float>(cfg, "train");
  DataSet<float> val_ds = load_dataset<float>(cfg, "val");
  const Shape3 shape = load_canonical_shape(cfg);
  CohortManifest train_m = load_manifest((data_dir(cfg) / "train.csv").string(), shape);

  std::vector<RunArtifacts> out;
  for (int run = 0; run < cfg.n_runs; ++run) {
    const std::uint64_t run_seed = mix_seed(cfg.train.seed, static_cast<std::uint64_t>(run));
    TrainConfig tc = cfg.train;
    tc.seed = run_seed;

    EpisodePlan plan = build_episode_plan(train_m, tc.kind, tc.balance, run_seed);
    nn::BackboneConfig bb = cfg.backbone;
    bb.input_shape = shape;
    nn::MultiTaskModel<float> model(bb, run_seed);
    if (tc.pretrained) nn::load_backbone_weights(model, *tc.pretrained);

    TrainResult result = run_curriculum_training(model, train_ds, val_ds, plan, tc);

    const fs::path rd = runs_dir(cfg) / ("run_" + std::to_string(run));
    fs::create_directories(rd);
    {
      std::ofstream f(rd / "plan.json");
      f << plan.to_json().dump(2) << "\n";
    }
    result.write_jsonl((rd / "log.jsonl").string());
    nn::save_checkpoint(model, (rd / "checkpoint.ck").string(), nn::CheckpointKind::full);
    out.push_back({(rd / "checkpoint.ck").string(), (rd / "log.jsonl").string()});
  }
  return out;
}

struct RunEvaluation {
  EvaluationReport val, test, ood;
};

inline nlohmann::json report_row(const ExperimentConfig& cfg, const std::string& dataset,
                                 const EvaluationReport& r) {
  return {{"architecture", nn::to_string(cfg.backbone.variant)},
          {"pretrained", cfg.train.pretrained.has_value()},
          {"strategy",
           to_string(cfg.train.kind) +
               (cfg.train.balance == BalanceMode::balanced ? " (balanced)" : "")},
          {"dataset", dataset},
          {"metrics", r.to_json()}};
}

/// evaluate: per-run in-distribution + zero-shot OOD reports with the Youden
/// threshold fitted on validation data; aggregated mean (SD) rows.
inline std::vector<RunEvaluation> cmd_evaluate(const ExperimentConfig& cfg) {
  DataSet<float> val_ds = load_dataset<float>(cfg, "val");
  DataSet<float> test_ds = load_dataset<float>(cfg, "test");
  DataSet<float> ood_ds = load_dataset<float>(cfg, "ood");
  const Shape3 shape = load_canonical_shape(cfg);

  std::vector<RunEvaluation> evals;
  for (int run = 0; run < cfg.n_runs; ++run) {
    const fs::path rd = runs_dir(cfg) / ("run_" + std::to_string(run));
    nn::BackboneConfig bb = cfg.backbone;
    bb.input_shape = shape;
    nn::MultiTaskModel<float> model(bb, 0);
    nn::load_full_checkpoint(model, (rd / "checkpoint.ck").string());

    RunEvaluation ev;
    auto val_scores = detail::evaluate_model(model, val_ds).dx_scores;
    const double thr = youden_threshold(val_scores);
    ev.val = evaluate_at(val_scores, thr);
    ev.test = zero_shot_eval(model, test_ds, thr);
    ev.ood = zero_shot_eval(model, ood_ds, thr);
    evals.push_back(ev);
  }

  fs::create_directories(reports_dir(cfg));
  {
    std::ofstream f(reports_dir(cfg) / "runs.csv");
    f << "run,dataset,roc_auc,threshold,accuracy,precision,precision_defined,n_pos,n_neg\n";
    for (std::size_t run = 0; run < evals.size(); ++run) {
      auto emit = [&](const std::string& name, const EvaluationReport& r) {
        f << run << "," << name << "," << r.roc_auc << "," << r.threshold << "," << r.accuracy
          << "," << r.precision << "," << (r.precision_defined ? 1 : 0) << "," << r.n_pos << ","
          << r.n_neg << "\n";
      };
      emit("val", evals[run].val);
      emit("test", evals[run].test);
      emit("ood", evals[run].ood);
    }
  }
  {
    std::vector<EvaluationReport> vs, ts, os;
    for (const auto& e : evals) {
      vs.push_back(e.val);
      ts.push_back(e.test);
      os.push_back(e.ood);
    }
    nlohmann::json rows = nlohmann::json::array();
    rows.push_back(report_row(cfg, "val", aggregate_runs(vs)));
    rows.push_back(report_row(cfg, "test", aggregate_runs(ts)));
    rows.push_back(report_row(cfg, "ood", aggregate_runs(os)));
    std::ofstream f(reports_dir(cfg) / "report.json");
    f << nlohmann::json{{"rows", rows}}.dump(2) << "\n";
  }
  return evals;
}

/// occlude: heatmap + overlays for one subject using a trained checkpoint.
inline void cmd_occlude(const ExperimentConfig& cfg, const std::string& checkpoint,
                        const std::string& subject_id) {
  const Shape3 shape = load_canonical_shape(cfg);
  SubjectRecord rec;
  bool found = false;
  for (const char* name : {"test", "val", "train", "ood"}) {
    CohortManifest m = load_manifest((data_dir(cfg) / (std::string(name) + ".csv")).string(),
                                     shape);
    for (const auto& r : m.records) {
      if (r.subject_id == subject_id) {
        rec = r;
        found = true;
        break;
      }
    }
    if (found) break;
  }
  if (!found) throw std::runtime_error("unknown subject " + subject_id);

  DiskVolumes vols((data_dir(cfg) / "vols").string());
  Volume v = z_transform(vols(rec));

  nn::BackboneConfig bb = cfg.backbone;
  bb.input_shape = shape;
  nn::MultiTaskModel<float> model(bb, 0);
  nn::load_full_checkpoint(model, checkpoint);

  Heatmap hm = occlusion_sensitivity(model, v, cfg.occlusion);
  const fs::path od = fs::path(cfg.output_dir) / "occlusion";
  fs::create_directories(od);
  export_overlay(hm, v, (od / subject_id).string());
}

/// report: re-aggregate the per-run CSV into the report JSON without
/// touching any checkpoints.
inline nlohmann::json cmd_report(const ExperimentConfig& cfg) {
  std::ifstream f(reports_dir(cfg) / "runs.csv");
  if (!f) throw std::runtime_error("runs.csv not found; run evaluate first");
  std::string line;
  std::getline(f, line);  // header
  std::map<std::string, std::vector<EvaluationReport>> by_dataset;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    EvaluationReport r;
    r.roc_auc = std::stod(fields.at(2));
    r.threshold = std::stod(fields.at(3));
    r.accuracy = std::stod(fields.at(4));
    r.precision = std::stod(fields.at(5));
    r.precision_defined = fields.at(6) == "1";
    r.n_pos = std::stoul(fields.at(7));
    r.n_neg = std::stoul(fields.at(8));
    by_dataset[fields.at(1)].push_back(r);
  }
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& [name, runs] : by_dataset) {
    rows.push_back(report_row(cfg, name, aggregate_runs(runs)));
  }
  nlohmann::json out{{"rows", rows}};
  std::ofstream rf(reports_dir(cfg) / "report.json");
  rf << out.dump(2) << "\n";
  return out;
}

/// search: random hyperparameter search on the on-disk dataset.
inline SearchResult cmd_search(const ExperimentConfig& cfg, int n_trials, int budget_epochs) {
  DataSet<float> train_ds = load_dataset<float>(cfg, "train");
  DataSet<float> val_ds = load_dataset<float>(cfg, "val");
  const Shape3 shape = load_canonical_shape(cfg);
  nn::BackboneConfig bb = cfg.backbone;
  bb.input_shape = shape;
  SearchSpace space;
  auto result = hyperparameter_search(space, n_trials, cfg.train.seed, budget_epochs, bb,
                                      train_ds, val_ds, cfg.train);
  fs::create_directories(reports_dir(cfg));
  nlohmann::json trials = nlohmann::json::array();
  for (const auto& t : result.trials) {
    trials.push_back({{"learning_rate", t.config.learning_rate},
                      {"optimizer", to_string(t.config.optimizer)},
                      {"batch_size", t.config.batch_size},
                      {"val_auc", t.val_auc}});
  }
  std::ofstream f(reports_dir(cfg) / "search.json");
  f << nlohmann::json{{"best",
                       {{"learning_rate", result.best.learning_rate},
                        {"optimizer", to_string(result.best.optimizer)},
                        {"batch_size", result.best.batch_size}}},
                      {"trials", trials}}
           .dump(2)
    << "\n";
  return result;
}

}  // namespace stagenet
