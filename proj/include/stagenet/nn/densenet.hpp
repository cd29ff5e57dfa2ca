#pragma once

#include <array>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "stagenet/nn/layers.hpp"
#include "stagenet/volume.hpp"

#include <nlohmann/json.hpp>

namespace stagenet::nn {

enum class BackboneVariant { densenet121_3d, tiny_densenet_3d };

inline std::string to_string(BackboneVariant v) {
  return v == BackboneVariant::densenet121_3d ? "densenet121_3d" : "tiny_densenet_3d";
}
inline BackboneVariant backbone_variant_from_string(const std::string& s) {
  if (s == "densenet121_3d") return BackboneVariant::densenet121_3d;
  if (s == "tiny_densenet_3d") return BackboneVariant::tiny_densenet_3d;
  throw std::runtime_error("unknown backbone variant: " + s);
}

struct BackboneConfig {
  BackboneVariant variant = BackboneVariant::tiny_densenet_3d;
  int64_t init_features = 32;
  int64_t growth_rate = 16;
  std::array<int64_t, 4> block_layers{3, 6, 12, 8};
  int64_t stem_kernel = 3;
  Shape3 input_shape{32, 38, 32};

  static BackboneConfig preset(BackboneVariant v, const Shape3& input_shape) {
    BackboneConfig c;
    c.variant = v;
    c.input_shape = input_shape;
    if (v == BackboneVariant::densenet121_3d) {
      c.init_features = 64;
      c.growth_rate = 32;
      c.block_layers = {6, 12, 24, 16};
      c.stem_kernel = 7;
    } else {
      c.init_features = 32;
      c.growth_rate = 16;
      c.block_layers = {3, 6, 12, 8};
      c.stem_kernel = 3;
    }
    return c;
  }

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (input_shape[a] < 16) {
        throw std::runtime_error("input shape " + shape3_str(input_shape) +
                                 " too small; each axis must be >= 16 to survive the "
                                 "four downsampling stages");
      }
    }
  }

  nlohmann::json to_json() const {
    return {{"variant", to_string(variant)},
            {"init_features", init_features},
            {"growth_rate", growth_rate},
            {"block_layers", block_layers},
            {"stem_kernel", stem_kernel},
            {"input_shape", {input_shape[0], input_shape[1], input_shape[2]}}};
  }

  static BackboneConfig from_json(const nlohmann::json& j) {
    BackboneConfig c;
    c.variant = backbone_variant_from_string(j.at("variant").get<std::string>());
    c.init_features = j.at("init_features").get<int64_t>();
    c.growth_rate = j.at("growth_rate").get<int64_t>();
    for (int i = 0; i < 4; ++i) c.block_layers[static_cast<std::size_t>(i)] =
        j.at("block_layers").at(i).get<int64_t>();
    c.stem_kernel = j.at("stem_kernel").get<int64_t>();
    for (int i = 0; i < 3; ++i) c.input_shape[static_cast<std::size_t>(i)] =
        j.at("input_shape").at(i).get<int64_t>();
    return c;
  }

  std::vector<std::string> diff(const BackboneConfig& o) const {
    std::vector<std::string> d;
    if (variant != o.variant) d.push_back("variant");
    if (init_features != o.init_features) d.push_back("init_features");
    if (growth_rate != o.growth_rate) d.push_back("growth_rate");
    if (block_layers != o.block_layers) d.push_back("block_layers");
    if (stem_kernel != o.stem_kernel) d.push_back("stem_kernel");
    return d;  // input_shape may differ; the backbone is shape-agnostic
  }
};

/// BN-ReLU-Conv1 (bottleneck, 4*growth) -> BN-ReLU-Conv3 (growth); output is
/// the input concatenated with the new feature maps along channels.
template <typename T>
class DenseLayer : public Module<T> {
 public:
  DenseLayer(const std::string& name, int64_t in_c, int64_t growth, Rng& rng)
      : in_c_(in_c), growth_(growth),
        bn1_(name + ".bn1", in_c),
        conv1_(name + ".conv1", in_c, 4 * growth, 1, 1, 0, rng),
        bn2_(name + ".bn2", 4 * growth),
        conv3_(name + ".conv3", 4 * growth, growth, 3, 1, 1, rng) {}

  Tensor<T> forward(const Tensor<T>& x, bool train) override {
    x_shape_ = x.shape();
    Tensor<T> t = bn1_.forward(x, train);
    t = relu1_.forward(t, train);
    t = conv1_.forward(t, train);
    t = bn2_.forward(t, train);
    t = relu2_.forward(t, train);
    t = conv3_.forward(t, train);

    const int64_t n = x.shape()[0];
    const int64_t v = x.shape()[2] * x.shape()[3] * x.shape()[4];
    Tensor<T> y({n, in_c_ + growth_, x.shape()[2], x.shape()[3], x.shape()[4]});
    for (int64_t b = 0; b < n; ++b) {
      std::memcpy(y.data() + b * (in_c_ + growth_) * v, x.data() + b * in_c_ * v,
                  static_cast<std::size_t>(in_c_ * v) * sizeof(T));
      std::memcpy(y.data() + (b * (in_c_ + growth_) + in_c_) * v, t.data() + b * growth_ * v,
                  static_cast<std::size_t>(growth_ * v) * sizeof(T));
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const int64_t n = x_shape_[0];
    const int64_t v = x_shape_[2] * x_shape_[3] * x_shape_[4];
    Tensor<T> gnew({n, growth_, x_shape_[2], x_shape_[3], x_shape_[4]});
    Tensor<T> gx(x_shape_);
    for (int64_t b = 0; b < n; ++b) {
      std::memcpy(gx.data() + b * in_c_ * v, gy.data() + b * (in_c_ + growth_) * v,
                  static_cast<std::size_t>(in_c_ * v) * sizeof(T));
      std::memcpy(gnew.data() + b * growth_ * v,
                  gy.data() + (b * (in_c_ + growth_) + in_c_) * v,
                  static_cast<std::size_t>(growth_ * v) * sizeof(T));
    }
    Tensor<T> g = conv3_.backward(gnew);
    g = relu2_.backward(g);
    g = bn2_.backward(g);
    g = conv1_.backward(g);
    g = relu1_.backward(g);
    g = bn1_.backward(g);
    for (int64_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    return gx;
  }

  void collect_params(std::vector<Param<T>*>& out) override {
    bn1_.collect_params(out);
    conv1_.collect_params(out);
    bn2_.collect_params(out);
    conv3_.collect_params(out);
  }
  void collect_state(std::vector<std::pair<std::string, Tensor<T>*>>& out) override {
    bn1_.collect_state(out);
    bn2_.collect_state(out);
  }

 private:
  int64_t in_c_, growth_;
  BatchNorm3d<T> bn1_;
  ReLU<T> relu1_;
  Conv3d<T> conv1_;
  BatchNorm3d<T> bn2_;
  ReLU<T> relu2_;
  Conv3d<T> conv3_;
  std::vector<int64_t> x_shape_;
};

/// Shared convolutional feature extractor: stem, four dense blocks with
/// transitions (compression 0.5, average-pool by 2), final BN-ReLU and global
/// average pooling to a fixed-length feature vector.
template <typename T>
class DenseNetBackbone {
 public:
  DenseNetBackbone(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const int64_t stem_pad = cfg.stem_kernel / 2;
    net_.add(std::make_unique<Conv3d<T>>("backbone.stem.conv", 1, cfg.init_features,
                                         cfg.stem_kernel, 2, stem_pad, rng));
    net_.add(std::make_unique<BatchNorm3d<T>>("backbone.stem.bn", cfg.init_features));
    net_.add(std::make_unique<ReLU<T>>());
    net_.add(std::make_unique<MaxPool3d<T>>(3, 2, 1));

    int64_t c = cfg.init_features;
    for (int bi = 0; bi < 4; ++bi) {
      const std::string bname = "backbone.block" + std::to_string(bi + 1);
      for (int64_t li = 0; li < cfg.block_layers[static_cast<std::size_t>(bi)]; ++li) {
        net_.add(std::make_unique<DenseLayer<T>>(bname + ".layer" + std::to_string(li + 1), c,
                                                 cfg.growth_rate, rng));
        c += cfg.growth_rate;
      }
      if (bi != 3) {
        const std::string tname = "backbone.trans" + std::to_string(bi + 1);
        net_.add(std::make_unique<BatchNorm3d<T>>(tname + ".bn", c));
        net_.add(std::make_unique<ReLU<T>>());
        const int64_t out = c / 2;  // compression 0.5
        net_.add(std::make_unique<Conv3d<T>>(tname + ".conv", c, out, 1, 1, 0, rng));
        net_.add(std::make_unique<AvgPool3d<T>>(2, 2));
        c = out;
      }
    }
    net_.add(std::make_unique<BatchNorm3d<T>>("backbone.final.bn", c));
    net_.add(std::make_unique<ReLU<T>>());
    net_.add(std::make_unique<GlobalAvgPool<T>>());
    feature_dim_ = c;
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) { return net_.forward(x, train); }
  Tensor<T> backward(const Tensor<T>& gfeat) { return net_.backward(gfeat); }
  void collect_params(std::vector<Param<T>*>& out) { net_.collect_params(out); }
  void collect_state(std::vector<std::pair<std::string, Tensor<T>*>>& out) {
    net_.collect_state(out);
  }

  int64_t feature_dim() const { return feature_dim_; }
  const BackboneConfig& config() const { return cfg_; }

 private:
  BackboneConfig cfg_;
  Sequential<T> net_;
  int64_t feature_dim_ = 0;
};

}  // namespace stagenet::nn
