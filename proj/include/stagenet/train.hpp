#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "stagenet/curriculum.hpp"
#include "stagenet/loss.hpp"
#include "stagenet/manifest.hpp"
#include "stagenet/metrics.hpp"
#include "stagenet/nn/model.hpp"
#include "stagenet/optim.hpp"
#include "stagenet/volume.hpp"

#include <nlohmann/json.hpp>

namespace stagenet {

struct TrainConfig {
  double learning_rate = 3e-4;
  OptimizerKind optimizer = OptimizerKind::adam;
  std::int64_t batch_size = 8;
  int epochs_per_episode = 30;
  int patience = 15;
  std::uint64_t seed = 0;
  CurriculumKind kind = CurriculumKind::curriculum;
  BalanceMode balance = BalanceMode::off;
  std::optional<std::string> pretrained;  // backbone checkpoint path

  /// Bounds of the searched space; experiment configs must stay inside them.
  void validate() const {
    if (learning_rate < 1e-5 || learning_rate > 2e-3) {
      throw std::runtime_error("learning_rate must lie in [1e-5, 2e-3]");
    }
    if (batch_size != 1 && batch_size != 4 && batch_size != 8 && batch_size != 16) {
      throw std::runtime_error("batch_size must be one of {1, 4, 8, 16}");
    }
    if (epochs_per_episode < 1 || patience < 1) {
      throw std::runtime_error("epochs_per_episode and patience must be >= 1");
    }
  }
};

/// In-memory dataset of z-transformed volumes plus labels, indexed by
/// subject id. sex/dx are 0/1 (male = 1, patient = 1).
template <typename T>
struct DataSet {
  Shape3 shape{0, 0, 0};
  std::vector<std::string> ids;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<Tensor<T>> vols;  // each flat (D*H*W)
  std::vector<double> age;
  std::vector<T> sex, dx;

  void add(const std::string& id, const Volume& zvol, double a, Sex s, Diagnosis d) {
    if (shape == Shape3{0, 0, 0}) shape = zvol.shape;
    check_shape(zvol, shape);
    index[id] = ids.size();
    ids.push_back(id);
    vols.push_back(zvol.data.template cast<T>());
    age.push_back(a);
    sex.push_back(s == Sex::male ? T(1) : T(0));
    dx.push_back(d == Diagnosis::patient ? T(1) : T(0));
  }
  std::size_t size() const { return ids.size(); }
  std::size_t at(const std::string& id) const {
    auto it = index.find(id);
    if (it == index.end()) throw std::runtime_error("unknown subject id: " + id);
    return it->second;
  }
};

using VolumeLookup = std::function<const Volume&(const SubjectRecord&)>;

/// z-transforms every referenced volume once and caches it in memory.
template <typename T>
DataSet<T> make_dataset(const CohortManifest& m, const VolumeLookup& lookup) {
  DataSet<T> ds;
  for (const auto& r : m.records) {
    const Volume& raw = lookup(r);
    if (m.canonical_shape != Shape3{0, 0, 0}) check_shape(raw, m.canonical_shape);
    ds.add(r.subject_id, z_transform(raw), r.age, r.sex, r.diagnosis);
  }
  return ds;
}

struct EpochLogRow {
  int episode = 0;
  int epoch = 0;
  LossBreakdown train_loss;
  LossBreakdown val_loss;
  double val_auc = 0.0;
};

struct TrainResult {
  std::vector<float> best_snapshot;
  std::vector<EpochLogRow> log;
  std::string stopping_reason;

  void write_jsonl(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write log " + path);
    for (const auto& r : log) {
      for (const char* split : {"train", "val"}) {
        const LossBreakdown& lb = split == std::string("train") ? r.train_loss : r.val_loss;
        nlohmann::json j = {{"episode", r.episode}, {"epoch", r.epoch},   {"split", split},
                            {"l_age", lb.l_age},   {"l_sex", lb.l_sex},  {"l_dx", lb.l_dx},
                            {"l_total", lb.l_total}, {"val_auc", r.val_auc}};
        f << j.dump() << "\n";
      }
    }
  }
};

enum class LossMode { multitask, sex_only };

namespace detail {

template <typename T>
Tensor<T> assemble_batch(const DataSet<T>& ds, const std::vector<std::size_t>& rows) {
  const std::int64_t b = static_cast<std::int64_t>(rows.size());
  const std::int64_t v = ds.shape[0] * ds.shape[1] * ds.shape[2];
  Tensor<T> batch({b, 1, ds.shape[0], ds.shape[1], ds.shape[2]});
  for (std::int64_t i = 0; i < b; ++i) {
    std::copy(ds.vols[rows[static_cast<std::size_t>(i)]].data(),
              ds.vols[rows[static_cast<std::size_t>(i)]].data() + v, batch.data() + i * v);
  }
  return batch;
}

template <typename T>
struct EvalResult {
  LossBreakdown loss;
  ScoredSet dx_scores;
  ScoredSet sex_scores;
};

/// Forward-only pass over a whole dataset in eval mode, summing losses.
template <typename T>
EvalResult<T> evaluate_model(nn::MultiTaskModel<T>& model, const DataSet<T>& ds,
                             std::int64_t eval_batch = 16) {
  EvalResult<T> out;
  for (std::size_t start = 0; start < ds.size(); start += static_cast<std::size_t>(eval_batch)) {
    const std::size_t end = std::min(ds.size(), start + static_cast<std::size_t>(eval_batch));
    std::vector<std::size_t> rows;
    for (std::size_t i = start; i < end; ++i) rows.push_back(i);
    Tensor<T> batch = assemble_batch(ds, rows);
    auto y = model.forward(batch, /*train=*/false);
    const std::int64_t b = static_cast<std::int64_t>(rows.size());
    Tensor<T> at({b}), st({b}), dt({b});
    for (std::int64_t i = 0; i < b; ++i) {
      at[i] = static_cast<T>(ds.age[rows[static_cast<std::size_t>(i)]]);
      st[i] = ds.sex[rows[static_cast<std::size_t>(i)]];
      dt[i] = ds.dx[rows[static_cast<std::size_t>(i)]];
    }
    LossBreakdown lb = multitask_loss(y.age, y.sex_logit, y.dx_logit, at, st, dt);
    out.loss.l_age += lb.l_age;
    out.loss.l_sex += lb.l_sex;
    out.loss.l_dx += lb.l_dx;
    for (std::int64_t i = 0; i < b; ++i) {
      out.dx_scores.add(static_cast<int>(dt[i]), detail::sigmoid(y.dx_logit[i]));
      out.sex_scores.add(static_cast<int>(st[i]), detail::sigmoid(y.sex_logit[i]));
    }
  }
  out.loss.l_total = out.loss.l_age + out.loss.l_sex + out.loss.l_dx;
  return out;
}

}  // namespace detail

/// One episode of mini-batch training with early stopping on validation
/// l_total; returns with the model restored to the best-validation weights
/// seen in this episode. Optimizer state is local to the episode.
template <typename T>
std::string train_episode(nn::MultiTaskModel<T>& model, const std::vector<std::string>& roster,
                          const DataSet<T>& train_ds, const DataSet<T>& val_ds,
                          const TrainConfig& cfg, int episode_idx,
                          std::vector<EpochLogRow>& log, LossMode mode = LossMode::multitask) {
  if (roster.empty()) throw std::runtime_error("train_episode: empty episode roster");
  if (val_ds.size() == 0) throw std::runtime_error("train_episode: empty validation set");

  std::vector<std::size_t> rows;
  for (const auto& id : roster) rows.push_back(train_ds.at(id));

  Optimizer<T> opt(model.params(), cfg.optimizer, cfg.learning_rate);

  double best_val = std::numeric_limits<double>::infinity();
  std::vector<T> best_snap = model.snapshot();
  int epochs_since_best = 0;
  std::string reason = "completed all epochs";

  for (int epoch = 0; epoch < cfg.epochs_per_episode; ++epoch) {
    Rng shuffle_rng(cfg.seed, mix_seed(0xe90c, static_cast<std::uint64_t>(episode_idx) * 1000 +
                                                   static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order = rows;
    shuffle_rng.shuffle(order.begin(), order.end());

    LossBreakdown train_total;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<std::size_t> batch_rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(end));
      Tensor<T> batch = detail::assemble_batch(train_ds, batch_rows);
      auto y = model.forward(batch, /*train=*/true);
      const std::int64_t b = static_cast<std::int64_t>(batch_rows.size());
      Tensor<T> at({b}), st({b}), dt({b});
      for (std::int64_t i = 0; i < b; ++i) {
        at[i] = static_cast<T>(train_ds.age[batch_rows[static_cast<std::size_t>(i)]]);
        st[i] = train_ds.sex[batch_rows[static_cast<std::size_t>(i)]];
        dt[i] = train_ds.dx[batch_rows[static_cast<std::size_t>(i)]];
      }
      Tensor<T> ga({b}), gs({b}), gd({b});
      LossBreakdown lb = multitask_loss(y.age, y.sex_logit, y.dx_logit, at, st, dt, &ga, &gs, &gd);
      if (!std::isfinite(lb.l_total)) {
        throw std::runtime_error("training diverged: non-finite loss in episode " +
                                 std::to_string(episode_idx) + " epoch " + std::to_string(epoch));
      }
      if (mode == LossMode::sex_only) {
        ga.zero();
        gd.zero();
        train_total.l_sex += lb.l_sex;
        train_total.l_total += lb.l_sex;
      } else {
        train_total.l_age += lb.l_age;
        train_total.l_sex += lb.l_sex;
        train_total.l_dx += lb.l_dx;
        train_total.l_total += lb.l_total;
      }
      model.zero_grad();
      model.backward(ga, gs, gd);
      opt.step();
    }

    auto val = detail::evaluate_model(model, val_ds);
    double val_metric;
    double val_auc;
    LossBreakdown val_loss = val.loss;
    if (mode == LossMode::sex_only) {
      val_metric = val.loss.l_sex;
      val_loss = LossBreakdown{0.0, val.loss.l_sex, 0.0, val.loss.l_sex};
      val_auc = roc_auc(val.sex_scores);
    } else {
      val_metric = val.loss.l_total;
      try {
        val_auc = roc_auc(val.dx_scores);
      } catch (const std::exception&) {
        val_auc = std::numeric_limits<double>::quiet_NaN();  // single-class val set
      }
    }

    EpochLogRow row;
    row.episode = episode_idx;
    row.epoch = epoch;
    row.train_loss = train_total;
    row.val_loss = val_loss;
    row.val_auc = val_auc;
    log.push_back(row);

    if (val_metric < best_val) {
      best_val = val_metric;
      best_snap = model.snapshot();
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
      if (epochs_since_best >= cfg.patience) {
        reason = "early stop: no validation improvement for " + std::to_string(cfg.patience) +
                 " epochs";
        break;
      }
    }
  }
  model.restore(best_snap);
  return reason;
}

/// Sequential fine-tuning over the episode plan; weights carry forward,
/// optimizer state does not.
template <typename T>
TrainResult run_curriculum_training(nn::MultiTaskModel<T>& model, const DataSet<T>& train_ds,
                                    const DataSet<T>& val_ds, const EpisodePlan& plan,
                                    const TrainConfig& cfg) {
  TrainResult result;
  std::string reason;
  for (std::size_t k = 0; k < plan.episodes.size(); ++k) {
    reason = train_episode(model, plan.episodes[k].subject_ids, train_ds, val_ds, cfg,
                           static_cast<int>(k), result.log);
  }
  result.stopping_reason = reason;
  auto snap = model.snapshot();
  result.best_snapshot.assign(snap.begin(), snap.end());
  return result;
}

/// Desk-scale stand-in for large-cohort pretraining: trains backbone + a
/// temporary sex head on sex classification only. The caller saves a
/// backbone-only checkpoint; the sex head used here is discarded on load.
template <typename T>
TrainResult pretrain_proxy(nn::MultiTaskModel<T>& model, const DataSet<T>& train_ds,
                           const DataSet<T>& val_ds, const TrainConfig& cfg) {
  bool has_f = false, has_m = false;
  for (const auto s : train_ds.sex) {
    if (s == T(0)) has_f = true;
    else has_m = true;
  }
  if (!has_f || !has_m) {
    throw std::runtime_error("pretrain_proxy: cohort must contain both sexes");
  }
  TrainResult result;
  result.stopping_reason = train_episode(model, train_ds.ids, train_ds, val_ds, cfg,
                                         /*episode_idx=*/0, result.log, LossMode::sex_only);
  auto snap = model.snapshot();
  result.best_snapshot.assign(snap.begin(), snap.end());
  return result;
}

// ------------------------------------------------------- random search

struct SearchSpace {
  double lr_min = 1e-5;
  double lr_max = 2e-3;
  std::vector<OptimizerKind> optimizers{OptimizerKind::sgd, OptimizerKind::adam,
                                        OptimizerKind::adamw};
  std::vector<std::int64_t> batch_sizes{1, 4, 8, 16};
};

struct SearchTrial {
  TrainConfig config;
  double val_auc = 0.0;
};

struct SearchResult {
  TrainConfig best;
  std::vector<SearchTrial> trials;
};

/// Random search: learning rate log-uniform, optimizer and batch size
/// uniform; each trial trains briefly on a single all-data episode and is
/// scored by validation ROC-AUC.
template <typename T>
SearchResult hyperparameter_search(const SearchSpace& space, int n_trials, std::uint64_t seed,
                                   int budget_epochs, const nn::BackboneConfig& bb_cfg,
                                   const DataSet<T>& train_ds, const DataSet<T>& val_ds,
                                   const TrainConfig& base) {
  if (n_trials < 1) throw std::runtime_error("hyperparameter_search: n_trials must be >= 1");
  SearchResult out;
  Rng rng(seed, 0x5ea7c4);
  double best_auc = -1.0;
  for (int t = 0; t < n_trials; ++t) {
    TrainConfig cfg = base;
    cfg.learning_rate = std::exp(rng.uniform(std::log(space.lr_min), std::log(space.lr_max)));
    cfg.optimizer = space.optimizers[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(space.optimizers.size()) - 1))];
    cfg.batch_size = space.batch_sizes[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(space.batch_sizes.size()) - 1))];
    cfg.epochs_per_episode = budget_epochs;
    cfg.patience = budget_epochs;  // no early stop within the short budget
    cfg.seed = mix_seed(seed, static_cast<std::uint64_t>(t));

    nn::MultiTaskModel<T> model(bb_cfg, cfg.seed);
    if (base.pretrained) nn::load_backbone_weights(model, *base.pretrained);
    std::vector<EpochLogRow> log;
    train_episode(model, train_ds.ids, train_ds, val_ds, cfg, 0, log);
    auto val = detail::evaluate_model(model, val_ds);
    SearchTrial trial;
    trial.config = cfg;
    trial.val_auc = roc_auc(val.dx_scores);
    if (trial.val_auc > best_auc) {
      best_auc = trial.val_auc;
      out.best = cfg;
    }
    out.trials.push_back(trial);
  }
  return out;
}

}  // namespace stagenet
