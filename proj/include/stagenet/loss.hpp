#pragma once

#include <cmath>
#include <stdexcept>

#include "stagenet/tensor.hpp"

namespace stagenet {

/// Summed per-batch losses; l_total is the plain sum with no weighting.
struct LossBreakdown {
  double l_age = 0.0;
  double l_sex = 0.0;
  double l_dx = 0.0;
  double l_total = 0.0;
};

namespace detail {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// BCE from a logit, numerically stable form; logits clamped to |z| <= 30.
inline double bce_from_logit(double z, double y) {
  z = std::max(-30.0, std::min(30.0, z));
  // log(1 + e^z) - y*z, computed without overflow
  const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
  return softplus - y * z;
}

}  // namespace detail

/// L1 age loss + BCE sex/dx losses, all SUM-reduced over the batch.
/// If grads are non-null they receive d(l_total)/d(prediction).
template <typename T>
LossBreakdown multitask_loss(const Tensor<T>& age_pred, const Tensor<T>& sex_logit,
                             const Tensor<T>& dx_logit, const Tensor<T>& age_true,
                             const Tensor<T>& sex_true, const Tensor<T>& dx_true,
                             Tensor<T>* g_age = nullptr, Tensor<T>* g_sex = nullptr,
                             Tensor<T>* g_dx = nullptr) {
  const auto n = age_pred.size();
  if (sex_logit.size() != n || dx_logit.size() != n || age_true.size() != n ||
      sex_true.size() != n || dx_true.size() != n) {
    throw std::runtime_error("multitask_loss: batch length mismatch");
  }
  LossBreakdown lb;
  for (std::int64_t i = 0; i < n; ++i) {
    const double ap = age_pred[i], sz = sex_logit[i], dz = dx_logit[i];
    if (!std::isfinite(ap) || !std::isfinite(sz) || !std::isfinite(dz)) {
      throw std::runtime_error("multitask_loss: non-finite prediction");
    }
    const double sy = sex_true[i], dy = dx_true[i];
    if ((sy != 0.0 && sy != 1.0) || (dy != 0.0 && dy != 1.0)) {
      throw std::runtime_error("multitask_loss: sex/dx labels must be 0 or 1");
    }
    const double adiff = ap - static_cast<double>(age_true[i]);
    lb.l_age += std::abs(adiff);
    lb.l_sex += detail::bce_from_logit(sz, sy);
    lb.l_dx += detail::bce_from_logit(dz, dy);
    if (g_age) (*g_age)[i] = static_cast<T>(adiff > 0 ? 1.0 : (adiff < 0 ? -1.0 : 0.0));
    if (g_sex) (*g_sex)[i] =
        static_cast<T>(detail::sigmoid(std::max(-30.0, std::min(30.0, sz))) - sy);
    if (g_dx) (*g_dx)[i] =
        static_cast<T>(detail::sigmoid(std::max(-30.0, std::min(30.0, dz))) - dy);
  }
  lb.l_total = lb.l_age + lb.l_sex + lb.l_dx;
  return lb;
}

}  // namespace stagenet
