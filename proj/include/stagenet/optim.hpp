#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "stagenet/nn/layers.hpp"

namespace stagenet {

enum class OptimizerKind { sgd, adam, adamw };

inline std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::adamw: return "adamw";
  }
  return "?";
}
inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  if (s == "adamw") return OptimizerKind::adamw;
  throw std::runtime_error("unknown optimizer: " + s);
}

/// First-order optimizer over a fixed parameter list. State is reset by
/// constructing a fresh instance (done at every episode boundary).
template <typename T>
class Optimizer {
 public:
  Optimizer(std::vector<nn::Param<T>*> params, OptimizerKind kind, double lr,
            double weight_decay = 0.01)
      : params_(std::move(params)), kind_(kind), lr_(lr), wd_(weight_decay) {
    if (kind_ != OptimizerKind::sgd) {
      m_.resize(params_.size());
      v_.resize(params_.size());
      for (std::size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(static_cast<std::size_t>(params_[i]->value.size()), 0.0);
        v_[i].assign(static_cast<std::size_t>(params_[i]->value.size()), 0.0);
      }
    }
  }

  void step() {
    ++t_;
    if (kind_ == OptimizerKind::sgd) {
      for (auto* p : params_) {
        for (std::int64_t i = 0; i < p->value.size(); ++i) {
          p->value[i] -= static_cast<T>(lr_ * static_cast<double>(p->grad[i]));
        }
      }
      return;
    }
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(b1, t_);
    const double bc2 = 1.0 - std::pow(b2, t_);
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      auto* p = params_[pi];
      auto& m = m_[pi];
      auto& v = v_[pi];
      for (std::int64_t i = 0; i < p->value.size(); ++i) {
        const double g = p->grad[i];
        m[static_cast<std::size_t>(i)] = b1 * m[static_cast<std::size_t>(i)] + (1.0 - b1) * g;
        v[static_cast<std::size_t>(i)] = b2 * v[static_cast<std::size_t>(i)] + (1.0 - b2) * g * g;
        const double mh = m[static_cast<std::size_t>(i)] / bc1;
        const double vh = v[static_cast<std::size_t>(i)] / bc2;
        double upd = lr_ * mh / (std::sqrt(vh) + eps);
        if (kind_ == OptimizerKind::adamw) {
          upd += lr_ * wd_ * static_cast<double>(p->value[i]);  // decoupled decay
        }
        p->value[i] -= static_cast<T>(upd);
      }
    }
  }

  double lr() const { return lr_; }

 private:
  std::vector<nn::Param<T>*> params_;
  OptimizerKind kind_;
  double lr_, wd_;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace stagenet
