#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "stagenet/nn/densenet.hpp"
#include "stagenet/nn/layers.hpp"

#include <nlohmann/json.hpp>

namespace stagenet::nn {

/// Shared backbone with three scalar heads. Age is a linear output; sex and
/// dx emit logits, sigmoid is applied only in the loss / evaluation.
template <typename T>
class MultiTaskModel {
 public:
  struct Outputs {
    Tensor<T> age, sex_logit, dx_logit;  // each (N)
  };

  MultiTaskModel(const BackboneConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    backbone_ = std::make_unique<DenseNetBackbone<T>>(cfg, rng);
    const int64_t f = backbone_->feature_dim();
    age_head_ = std::make_unique<Linear<T>>("head.age", f, 1, rng);
    sex_head_ = std::make_unique<Linear<T>>("head.sex", f, 1, rng);
    dx_head_ = std::make_unique<Linear<T>>("head.dx", f, 1, rng);
  }

  Outputs forward(const Tensor<T>& batch, bool train) {
    for (int64_t i = 0; i < batch.size(); ++i) {
      if (!std::isfinite(static_cast<double>(batch[i]))) {
        throw std::runtime_error("model forward: non-finite input");
      }
    }
    const auto& s = batch.shape();
    const auto& in = backbone_->config().input_shape;
    if (s.size() != 5 || s[1] != 1 || s[2] != in[0] || s[3] != in[1] || s[4] != in[2]) {
      throw std::runtime_error("model forward: batch shape " + shape_str(s) +
                               " does not match model input shape " + shape3_str(in));
    }
    Tensor<T> feat = backbone_->forward(batch, train);
    Outputs out;
    out.age = squeeze(age_head_->forward(feat, train));
    out.sex_logit = squeeze(sex_head_->forward(feat, train));
    out.dx_logit = squeeze(dx_head_->forward(feat, train));
    return out;
  }

  /// Per-head gradients (each (N)) flow back through the shared features.
  void backward(const Tensor<T>& g_age, const Tensor<T>& g_sex, const Tensor<T>& g_dx) {
    Tensor<T> gf = age_head_->backward(unsqueeze(g_age));
    Tensor<T> gs = sex_head_->backward(unsqueeze(g_sex));
    Tensor<T> gd = dx_head_->backward(unsqueeze(g_dx));
    for (int64_t i = 0; i < gf.size(); ++i) gf[i] += gs[i] + gd[i];
    backbone_->backward(gf);
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    backbone_->collect_params(out);
    age_head_->collect_params(out);
    sex_head_->collect_params(out);
    dx_head_->collect_params(out);
    return out;
  }
  std::vector<Param<T>*> backbone_params() {
    std::vector<Param<T>*> out;
    backbone_->collect_params(out);
    return out;
  }
  std::vector<std::pair<std::string, Tensor<T>*>> state() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    backbone_->collect_state(out);
    return out;
  }

  void zero_grad() {
    for (auto* p : params()) p->grad.zero();
  }

  std::int64_t parameter_count() {
    std::int64_t n = 0;
    for (auto* p : params()) n += p->value.size();
    return n;
  }

  const BackboneConfig& config() const { return backbone_->config(); }
  int64_t feature_dim() const { return backbone_->feature_dim(); }

  /// Flat snapshot of all trainable parameters plus BN running stats; used
  /// for best-validation restores inside an episode.
  std::vector<T> snapshot() {
    std::vector<T> out;
    for (auto* p : params()) {
      out.insert(out.end(), p->value.storage().begin(), p->value.storage().end());
    }
    for (auto& [name, t] : state()) {
      out.insert(out.end(), t->storage().begin(), t->storage().end());
    }
    return out;
  }
  void restore(const std::vector<T>& snap) {
    std::size_t off = 0;
    for (auto* p : params()) {
      std::copy(snap.begin() + off, snap.begin() + off + p->value.storage().size(),
                p->value.storage().begin());
      off += p->value.storage().size();
    }
    for (auto& [name, t] : state()) {
      std::copy(snap.begin() + off, snap.begin() + off + t->storage().size(),
                t->storage().begin());
      off += t->storage().size();
    }
    if (off != snap.size()) throw std::runtime_error("restore: snapshot size mismatch");
  }

 private:
  static Tensor<T> squeeze(const Tensor<T>& x) {  // (N,1) -> (N)
    Tensor<T> y({x.shape()[0]});
    for (int64_t i = 0; i < y.size(); ++i) y[i] = x[i];
    return y;
  }
  static Tensor<T> unsqueeze(const Tensor<T>& x) {  // (N) -> (N,1)
    Tensor<T> y({x.shape()[0], 1});
    for (int64_t i = 0; i < y.size(); ++i) y[i] = x[i];
    return y;
  }

  std::unique_ptr<DenseNetBackbone<T>> backbone_;
  std::unique_ptr<Linear<T>> age_head_, sex_head_, dx_head_;
};

template <typename T>
MultiTaskModel<T> build_model(const BackboneConfig& cfg, std::uint64_t seed) {
  return MultiTaskModel<T>(cfg, seed);
}

// ------------------------------------------------------------ checkpoints
//
// File layout: 8-byte magic "SNCKPT\x01\n", uint32 LE header length, JSON
// header, then float32 LE parameter data in header order. Values are always
// stored as float32 regardless of the in-memory scalar type.

inline constexpr char kCheckpointMagic[8] = {'S', 'N', 'C', 'K', 'P', 'T', '\x01', '\n'};

enum class CheckpointKind { backbone_only, full };

template <typename T>
void save_checkpoint(MultiTaskModel<T>& model, const std::string& path, CheckpointKind kind) {
  std::vector<std::pair<std::string, const Tensor<T>*>> entries;
  auto ps = kind == CheckpointKind::backbone_only ? model.backbone_params() : model.params();
  for (auto* p : ps) entries.emplace_back(p->name, &p->value);
  for (auto& [name, t] : model.state()) entries.emplace_back(name, t);

  nlohmann::json header;
  header["format_version"] = 1;
  header["kind"] = kind == CheckpointKind::backbone_only ? "backbone" : "full";
  header["backbone_config"] = model.config().to_json();
  nlohmann::json plist = nlohmann::json::array();
  std::int64_t offset = 0;
  for (const auto& [name, t] : entries) {
    plist.push_back({{"name", name}, {"shape", t->shape()}, {"offset", offset}});
    offset += t->size();
  }
  header["params"] = plist;
  const std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path);
  f.write(kCheckpointMagic, 8);
  const std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());
  f.write(reinterpret_cast<const char*>(&hlen), 4);
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, t] : entries) {
    std::vector<float> buf(static_cast<std::size_t>(t->size()));
    for (std::int64_t i = 0; i < t->size(); ++i) buf[static_cast<std::size_t>(i)] =
        static_cast<float>((*t)[i]);
    f.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
}

struct CheckpointFile {
  nlohmann::json header;
  std::unordered_map<std::string, std::pair<std::vector<std::int64_t>, std::vector<float>>> data;
};

inline CheckpointFile read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint " + path);
  char magic[8];
  f.read(magic, 8);
  if (f.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw std::runtime_error(path + " is not a checkpoint file");
  }
  std::uint32_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), 4);
  std::string hs(hlen, '\0');
  f.read(hs.data(), hlen);
  CheckpointFile ck;
  ck.header = nlohmann::json::parse(hs);
  if (ck.header.at("format_version").get<int>() != 1) {
    throw std::runtime_error("unsupported checkpoint format version in " + path);
  }
  for (const auto& p : ck.header.at("params")) {
    std::vector<std::int64_t> shape = p.at("shape").get<std::vector<std::int64_t>>();
    std::int64_t n = 1;
    for (auto s : shape) n *= s;
    std::vector<float> buf(static_cast<std::size_t>(n));
    f.read(reinterpret_cast<char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (f.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float))) {
      throw std::runtime_error("checkpoint " + path + " truncated at " +
                               p.at("name").get<std::string>());
    }
    ck.data[p.at("name").get<std::string>()] = {std::move(shape), std::move(buf)};
  }
  return ck;
}

/// Replace backbone parameters (and BN running stats) with checkpoint values;
/// the three task heads keep their fresh initialization.
template <typename T>
void load_backbone_weights(MultiTaskModel<T>& model, const std::string& path) {
  CheckpointFile ck = read_checkpoint(path);
  const BackboneConfig ck_cfg = BackboneConfig::from_json(ck.header.at("backbone_config"));
  const auto diff = ck_cfg.diff(model.config());
  if (!diff.empty()) {
    std::string fields;
    for (const auto& d : diff) fields += (fields.empty() ? "" : ", ") + d;
    throw std::runtime_error("checkpoint backbone config does not match model; differing fields: " +
                             fields);
  }
  auto assign = [&](const std::string& name, Tensor<T>& dst) {
    auto it = ck.data.find(name);
    if (it == ck.data.end()) throw std::runtime_error("checkpoint missing parameter " + name);
    const auto& buf = it->second.second;
    if (static_cast<std::int64_t>(buf.size()) != dst.size()) {
      throw std::runtime_error("checkpoint parameter " + name + " has wrong size");
    }
    for (std::int64_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(buf[static_cast<std::size_t>(i)]);
  };
  for (auto* p : model.backbone_params()) assign(p->name, p->value);
  for (auto& [name, t] : model.state()) assign(name, *t);
}

/// Load a full checkpoint (backbone + heads + BN state).
template <typename T>
void load_full_checkpoint(MultiTaskModel<T>& model, const std::string& path) {
  CheckpointFile ck = read_checkpoint(path);
  if (ck.header.at("kind") != "full") {
    throw std::runtime_error(path + " is not a full checkpoint");
  }
  const BackboneConfig ck_cfg = BackboneConfig::from_json(ck.header.at("backbone_config"));
  const auto diff = ck_cfg.diff(model.config());
  if (!diff.empty()) throw std::runtime_error("checkpoint/model backbone config mismatch");
  auto assign = [&](const std::string& name, Tensor<T>& dst) {
    auto it = ck.data.find(name);
    if (it == ck.data.end()) throw std::runtime_error("checkpoint missing parameter " + name);
    for (std::int64_t i = 0; i < dst.size(); ++i) dst[i] =
        static_cast<T>(it->second.second[static_cast<std::size_t>(i)]);
  };
  for (auto* p : model.params()) assign(p->name, p->value);
  for (auto& [name, t] : model.state()) assign(name, *t);
}

}  // namespace stagenet::nn
