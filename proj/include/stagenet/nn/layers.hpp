#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stagenet/rng.hpp"
#include "stagenet/tensor.hpp"

namespace stagenet::nn {

using std::int64_t;

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  explicit Param(std::vector<int64_t> shape) : value(shape), grad(std::move(shape)) {}
};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ColMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;

inline int64_t conv_out_len(int64_t len, int64_t k, int64_t stride, int64_t pad) {
  return (len + 2 * pad - k) / stride + 1;
}

/// Forward/backward module over (N, C, D, H, W) activations. forward() saves
/// what backward() needs; backward() consumes the gradient w.r.t. the output
/// and returns the gradient w.r.t. the input, accumulating parameter grads.
template <typename T>
class Module {
 public:
  virtual ~Module() = default;
  virtual Tensor<T> forward(const Tensor<T>& x, bool train) = 0;
  virtual Tensor<T> backward(const Tensor<T>& gy) = 0;
  virtual void collect_params(std::vector<Param<T>*>& /*out*/) {}
  /// Non-trainable state that must travel with checkpoints (BN running stats).
  virtual void collect_state(std::vector<std::pair<std::string, Tensor<T>*>>& /*out*/) {}
};

// ---------------------------------------------------------------- Conv3d

template <typename T>
class Conv3d : public Module<T> {
 public:
  Conv3d(std::string name, int64_t in_c, int64_t out_c, int64_t k, int64_t stride, int64_t pad,
         Rng& rng)
      : in_c_(in_c), out_c_(out_c), k_(k), stride_(stride), pad_(pad),
        w_({out_c, in_c * k * k * k}) {
    w_.name = name + ".w";
    // Kaiming fan-in, zero bias (convs carry no bias; BN follows).
    const double sd = std::sqrt(2.0 / static_cast<double>(in_c * k * k * k));
    for (int64_t i = 0; i < w_.value.size(); ++i) {
      w_.value[i] = static_cast<T>(rng.normal(0.0, sd));
    }
  }

  Tensor<T> forward(const Tensor<T>& x, bool /*train*/) override {
    x_ = x;
    const auto& s = x.shape();
    n_ = s[0];
    d_ = s[2]; h_ = s[3]; w_in_ = s[4];
    if (s[1] != in_c_) {
      throw std::runtime_error(w_.name + ": expected " + std::to_string(in_c_) +
                               " input channels, got " + std::to_string(s[1]));
    }
    od_ = conv_out_len(d_, k_, stride_, pad_);
    oh_ = conv_out_len(h_, k_, stride_, pad_);
    ow_ = conv_out_len(w_in_, k_, stride_, pad_);
    if (od_ < 1 || oh_ < 1 || ow_ < 1) {
      throw std::runtime_error(w_.name + ": input " + shape_str(s) + " too small for kernel " +
                               std::to_string(k_));
    }
    const int64_t v = od_ * oh_ * ow_;
    const int64_t kk = in_c_ * k_ * k_ * k_;
    Tensor<T> y({n_, out_c_, od_, oh_, ow_});
    Eigen::Map<const RowMat<T>> wm(w_.value.data(), out_c_, kk);
    ColMat<T> col;
    for (int64_t n = 0; n < n_; ++n) {
      Eigen::Map<RowMat<T>> ym(y.data() + n * out_c_ * v, out_c_, v);
      if (is_pointwise()) {
        Eigen::Map<const RowMat<T>> xm(x.data() + n * in_c_ * v, in_c_, v);
        ym.noalias() = wm * xm;
      } else {
        im2col(x.data() + n * in_c_ * d_ * h_ * w_in_, col);
        ym.noalias() = wm * col;
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const int64_t v = od_ * oh_ * ow_;
    const int64_t kk = in_c_ * k_ * k_ * k_;
    Tensor<T> gx({n_, in_c_, d_, h_, w_in_});
    Eigen::Map<const RowMat<T>> wm(w_.value.data(), out_c_, kk);
    Eigen::Map<RowMat<T>> gwm(w_.grad.data(), out_c_, kk);
    ColMat<T> col, gcol;
    for (int64_t n = 0; n < n_; ++n) {
      Eigen::Map<const RowMat<T>> gym(gy.data() + n * out_c_ * v, out_c_, v);
      if (is_pointwise()) {
        Eigen::Map<const RowMat<T>> xm(x_.data() + n * in_c_ * v, in_c_, v);
        gwm.noalias() += gym * xm.transpose();
        Eigen::Map<RowMat<T>> gxm(gx.data() + n * in_c_ * v, in_c_, v);
        gxm.noalias() = wm.transpose() * gym;
      } else {
        im2col(x_.data() + n * in_c_ * d_ * h_ * w_in_, col);
        gwm.noalias() += gym * col.transpose();
        gcol.noalias() = wm.transpose() * gym;
        col2im(gcol, gx.data() + n * in_c_ * d_ * h_ * w_in_);
      }
    }
    return gx;
  }

  void collect_params(std::vector<Param<T>*>& out) override { out.push_back(&w_); }

 private:
  bool is_pointwise() const { return k_ == 1 && stride_ == 1 && pad_ == 0; }

  void im2col(const T* x, ColMat<T>& col) const {
    const int64_t v = od_ * oh_ * ow_;
    col.resize(in_c_ * k_ * k_ * k_, v);
    int64_t vcol = 0;
    for (int64_t odi = 0; odi < od_; ++odi) {
      const int64_t d0 = odi * stride_ - pad_;
      for (int64_t ohi = 0; ohi < oh_; ++ohi) {
        const int64_t h0 = ohi * stride_ - pad_;
        for (int64_t owi = 0; owi < ow_; ++owi, ++vcol) {
          const int64_t w0 = owi * stride_ - pad_;
          T* dst = col.data() + vcol * col.rows();
          for (int64_t c = 0; c < in_c_; ++c) {
            const T* xc = x + c * d_ * h_ * w_in_;
            for (int64_t kd = 0; kd < k_; ++kd) {
              const int64_t dd = d0 + kd;
              const bool dok = dd >= 0 && dd < d_;
              for (int64_t kh = 0; kh < k_; ++kh) {
                const int64_t hh = h0 + kh;
                const bool hok = dok && hh >= 0 && hh < h_;
                const T* row = xc + (dd * h_ + hh) * w_in_;
                for (int64_t kw = 0; kw < k_; ++kw) {
                  const int64_t ww = w0 + kw;
                  *dst++ = (hok && ww >= 0 && ww < w_in_) ? row[ww] : T(0);
                }
              }
            }
          }
        }
      }
    }
  }

  void col2im(const ColMat<T>& gcol, T* gx) const {
    int64_t vcol = 0;
    for (int64_t odi = 0; odi < od_; ++odi) {
      const int64_t d0 = odi * stride_ - pad_;
      for (int64_t ohi = 0; ohi < oh_; ++ohi) {
        const int64_t h0 = ohi * stride_ - pad_;
        for (int64_t owi = 0; owi < ow_; ++owi, ++vcol) {
          const int64_t w0 = owi * stride_ - pad_;
          const T* src = gcol.data() + vcol * gcol.rows();
          for (int64_t c = 0; c < in_c_; ++c) {
            T* gc = gx + c * d_ * h_ * w_in_;
            for (int64_t kd = 0; kd < k_; ++kd) {
              const int64_t dd = d0 + kd;
              const bool dok = dd >= 0 && dd < d_;
              for (int64_t kh = 0; kh < k_; ++kh) {
                const int64_t hh = h0 + kh;
                const bool hok = dok && hh >= 0 && hh < h_;
                T* row = gc + (dd * h_ + hh) * w_in_;
                for (int64_t kw = 0; kw < k_; ++kw) {
                  const int64_t ww = w0 + kw;
                  if (hok && ww >= 0 && ww < w_in_) row[ww] += *src;
                  ++src;
                }
              }
            }
          }
        }
      }
    }
  }

  int64_t in_c_, out_c_, k_, stride_, pad_;
  Param<T> w_;
  Tensor<T> x_;
  int64_t n_ = 0, d_ = 0, h_ = 0, w_in_ = 0, od_ = 0, oh_ = 0, ow_ = 0;
};

// ------------------------------------------------------------ BatchNorm3d

template <typename T>
class BatchNorm3d : public Module<T> {
 public:
  BatchNorm3d(std::string name, int64_t c, double eps = 1e-5, double momentum = 0.1)
      : c_(c), eps_(eps), momentum_(momentum), gamma_({c}), beta_({c}),
        running_mean_({c}), running_var_({c}) {
    gamma_.name = name + ".gamma";
    beta_.name = name + ".beta";
    gamma_.value.fill(T(1));
    running_var_.fill(T(1));
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) override {
    const auto& s = x.shape();
    shape_ = s;
    const int64_t n = s[0], v = s[2] * s[3] * s[4];
    const int64_t m = n * v;
    Tensor<T> y(s);
    train_ = train;
    if (train) {
      xhat_ = Tensor<T>(s);
      inv_std_.assign(static_cast<std::size_t>(c_), 0.0);
      for (int64_t c = 0; c < c_; ++c) {
        double sum = 0.0;
        for (int64_t b = 0; b < n; ++b) {
          const T* xc = x.data() + (b * c_ + c) * v;
          for (int64_t i = 0; i < v; ++i) sum += xc[i];
        }
        const double mean = sum / static_cast<double>(m);
        double ss = 0.0;
        for (int64_t b = 0; b < n; ++b) {
          const T* xc = x.data() + (b * c_ + c) * v;
          for (int64_t i = 0; i < v; ++i) {
            const double d = xc[i] - mean;
            ss += d * d;
          }
        }
        const double var = ss / static_cast<double>(m);
        const double inv = 1.0 / std::sqrt(var + eps_);
        inv_std_[static_cast<std::size_t>(c)] = inv;
        const double g = gamma_.value[c], bta = beta_.value[c];
        for (int64_t b = 0; b < n; ++b) {
          const T* xc = x.data() + (b * c_ + c) * v;
          T* xhc = xhat_.data() + (b * c_ + c) * v;
          T* yc = y.data() + (b * c_ + c) * v;
          for (int64_t i = 0; i < v; ++i) {
            const double xh = (xc[i] - mean) * inv;
            xhc[i] = static_cast<T>(xh);
            yc[i] = static_cast<T>(g * xh + bta);
          }
        }
        running_mean_[c] = static_cast<T>((1.0 - momentum_) * running_mean_[c] + momentum_ * mean);
        running_var_[c] = static_cast<T>((1.0 - momentum_) * running_var_[c] + momentum_ * var);
      }
    } else {
      for (int64_t c = 0; c < c_; ++c) {
        const double mean = running_mean_[c];
        const double inv = 1.0 / std::sqrt(static_cast<double>(running_var_[c]) + eps_);
        const double g = gamma_.value[c], bta = beta_.value[c];
        for (int64_t b = 0; b < n; ++b) {
          const T* xc = x.data() + (b * c_ + c) * v;
          T* yc = y.data() + (b * c_ + c) * v;
          for (int64_t i = 0; i < v; ++i) {
            yc[i] = static_cast<T>(g * ((xc[i] - mean) * inv) + bta);
          }
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    if (!train_) throw std::runtime_error("BatchNorm3d::backward after eval-mode forward");
    const int64_t n = shape_[0], v = shape_[2] * shape_[3] * shape_[4];
    const int64_t m = n * v;
    Tensor<T> gx(shape_);
    for (int64_t c = 0; c < c_; ++c) {
      double sum_gy = 0.0, sum_gy_xhat = 0.0;
      for (int64_t b = 0; b < n; ++b) {
        const T* gyc = gy.data() + (b * c_ + c) * v;
        const T* xhc = xhat_.data() + (b * c_ + c) * v;
        for (int64_t i = 0; i < v; ++i) {
          sum_gy += gyc[i];
          sum_gy_xhat += static_cast<double>(gyc[i]) * xhc[i];
        }
      }
      gamma_.grad[c] += static_cast<T>(sum_gy_xhat);
      beta_.grad[c] += static_cast<T>(sum_gy);
      const double g = gamma_.value[c];
      const double inv = inv_std_[static_cast<std::size_t>(c)];
      const double k = g * inv / static_cast<double>(m);
      for (int64_t b = 0; b < n; ++b) {
        const T* gyc = gy.data() + (b * c_ + c) * v;
        const T* xhc = xhat_.data() + (b * c_ + c) * v;
        T* gxc = gx.data() + (b * c_ + c) * v;
        for (int64_t i = 0; i < v; ++i) {
          gxc[i] = static_cast<T>(
              k * (static_cast<double>(m) * gyc[i] - sum_gy - xhc[i] * sum_gy_xhat));
        }
      }
    }
    return gx;
  }

  void collect_params(std::vector<Param<T>*>& out) override {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }

  void collect_state(std::vector<std::pair<std::string, Tensor<T>*>>& out) override {
    const std::string base = gamma_.name.substr(0, gamma_.name.size() - 6);  // strip ".gamma"
    out.emplace_back(base + ".running_mean", &running_mean_);
    out.emplace_back(base + ".running_var", &running_var_);
  }

  Tensor<T>& running_mean() { return running_mean_; }
  Tensor<T>& running_var() { return running_var_; }

 private:
  int64_t c_;
  double eps_, momentum_;
  Param<T> gamma_, beta_;
  Tensor<T> running_mean_, running_var_;
  Tensor<T> xhat_;
  std::vector<double> inv_std_;
  std::vector<int64_t> shape_;
  bool train_ = true;
};

// ------------------------------------------------------------------ ReLU

template <typename T>
class ReLU : public Module<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool /*train*/) override {
    mask_.assign(static_cast<std::size_t>(x.size()), 0);
    Tensor<T> y(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) {
      if (x[i] > T(0)) {
        y[i] = x[i];
        mask_[static_cast<std::size_t>(i)] = 1;
      }
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> gx(gy.shape());
    for (int64_t i = 0; i < gy.size(); ++i) {
      if (mask_[static_cast<std::size_t>(i)]) gx[i] = gy[i];
    }
    return gx;
  }

 private:
  std::vector<unsigned char> mask_;
};

// ------------------------------------------------------------- MaxPool3d

template <typename T>
class MaxPool3d : public Module<T> {
 public:
  MaxPool3d(int64_t k, int64_t stride, int64_t pad) : k_(k), stride_(stride), pad_(pad) {}

  Tensor<T> forward(const Tensor<T>& x, bool /*train*/) override {
    const auto& s = x.shape();
    in_shape_ = s;
    const int64_t n = s[0], c = s[1], d = s[2], h = s[3], w = s[4];
    const int64_t od = conv_out_len(d, k_, stride_, pad_);
    const int64_t oh = conv_out_len(h, k_, stride_, pad_);
    const int64_t ow = conv_out_len(w, k_, stride_, pad_);
    Tensor<T> y({n, c, od, oh, ow});
    argmax_.assign(static_cast<std::size_t>(y.size()), 0);
    int64_t o = 0;
    for (int64_t b = 0; b < n; ++b) {
      for (int64_t cc = 0; cc < c; ++cc) {
        const T* xc = x.data() + (b * c + cc) * d * h * w;
        for (int64_t odi = 0; odi < od; ++odi) {
          for (int64_t ohi = 0; ohi < oh; ++ohi) {
            for (int64_t owi = 0; owi < ow; ++owi, ++o) {
              T best = -std::numeric_limits<T>::infinity();
              int64_t besti = -1;
              for (int64_t kd = 0; kd < k_; ++kd) {
                const int64_t dd = odi * stride_ - pad_ + kd;
                if (dd < 0 || dd >= d) continue;
                for (int64_t kh = 0; kh < k_; ++kh) {
                  const int64_t hh = ohi * stride_ - pad_ + kh;
                  if (hh < 0 || hh >= h) continue;
                  for (int64_t kw = 0; kw < k_; ++kw) {
                    const int64_t ww = owi * stride_ - pad_ + kw;
                    if (ww < 0 || ww >= w) continue;
                    const int64_t idx = (dd * h + hh) * w + ww;
                    if (xc[idx] > best) {
                      best = xc[idx];
                      besti = idx;
                    }
                  }
                }
              }
              y[o] = best;
              argmax_[static_cast<std::size_t>(o)] = (b * c + cc) * d * h * w + besti;
            }
          }
        }
      }
    }
    out_shape_ = y.shape();
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> gx(in_shape_);
    for (int64_t o = 0; o < gy.size(); ++o) {
      gx[argmax_[static_cast<std::size_t>(o)]] += gy[o];
    }
    return gx;
  }

 private:
  int64_t k_, stride_, pad_;
  std::vector<int64_t> in_shape_, out_shape_;
  std::vector<int64_t> argmax_;
};

// ------------------------------------------------------------- AvgPool3d

/// Windows are clamped at the boundary and averaged over the elements they
/// actually cover, so axes shorter than the kernel still emit one output.
template <typename T>
class AvgPool3d : public Module<T> {
 public:
  AvgPool3d(int64_t k, int64_t stride) : k_(k), stride_(stride) {}

  Tensor<T> forward(const Tensor<T>& x, bool /*train*/) override {
    const auto& s = x.shape();
    in_shape_ = s;
    const int64_t n = s[0], c = s[1], d = s[2], h = s[3], w = s[4];
    const int64_t od = pool_out_len(d), oh = pool_out_len(h), ow = pool_out_len(w);
    Tensor<T> y({n, c, od, oh, ow});
    int64_t o = 0;
    for (int64_t b = 0; b < n; ++b) {
      for (int64_t cc = 0; cc < c; ++cc) {
        const T* xc = x.data() + (b * c + cc) * d * h * w;
        for (int64_t odi = 0; odi < od; ++odi) {
          const int64_t d0 = odi * stride_, d1 = std::min(d0 + k_, d);
          for (int64_t ohi = 0; ohi < oh; ++ohi) {
            const int64_t h0 = ohi * stride_, h1 = std::min(h0 + k_, h);
            for (int64_t owi = 0; owi < ow; ++owi, ++o) {
              const int64_t w0 = owi * stride_, w1 = std::min(w0 + k_, w);
              double acc = 0.0;
              for (int64_t dd = d0; dd < d1; ++dd) {
                for (int64_t hh = h0; hh < h1; ++hh) {
                  const T* row = xc + (dd * h + hh) * w;
                  for (int64_t ww = w0; ww < w1; ++ww) acc += row[ww];
                }
              }
              y[o] = static_cast<T>(acc / static_cast<double>((d1 - d0) * (h1 - h0) * (w1 - w0)));
            }
          }
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const auto& s = in_shape_;
    const int64_t n = s[0], c = s[1], d = s[2], h = s[3], w = s[4];
    const int64_t od = pool_out_len(d), oh = pool_out_len(h), ow = pool_out_len(w);
    Tensor<T> gx(in_shape_);
    int64_t o = 0;
    for (int64_t b = 0; b < n; ++b) {
      for (int64_t cc = 0; cc < c; ++cc) {
        T* gc = gx.data() + (b * c + cc) * d * h * w;
        for (int64_t odi = 0; odi < od; ++odi) {
          const int64_t d0 = odi * stride_, d1 = std::min(d0 + k_, d);
          for (int64_t ohi = 0; ohi < oh; ++ohi) {
            const int64_t h0 = ohi * stride_, h1 = std::min(h0 + k_, h);
            for (int64_t owi = 0; owi < ow; ++owi, ++o) {
              const int64_t w0 = owi * stride_, w1 = std::min(w0 + k_, w);
              const T g = static_cast<T>(
                  gy[o] / static_cast<T>((d1 - d0) * (h1 - h0) * (w1 - w0)));
              for (int64_t dd = d0; dd < d1; ++dd) {
                for (int64_t hh = h0; hh < h1; ++hh) {
                  T* row = gc + (dd * h + hh) * w;
                  for (int64_t ww = w0; ww < w1; ++ww) row[ww] += g;
                }
              }
            }
          }
        }
      }
    }
    return gx;
  }

 private:
  int64_t pool_out_len(int64_t len) const {
    return len >= k_ ? (len - k_) / stride_ + 1 : 1;
  }

  int64_t k_, stride_;
  std::vector<int64_t> in_shape_;
};

// --------------------------------------------------------- GlobalAvgPool

/// (N, C, D, H, W) -> (N, C); F stays fixed whatever the spatial extent.
template <typename T>
class GlobalAvgPool : public Module<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool /*train*/) override {
    const auto& s = x.shape();
    in_shape_ = s;
    const int64_t n = s[0], c = s[1], v = s[2] * s[3] * s[4];
    Tensor<T> y({n, c});
    for (int64_t b = 0; b < n; ++b) {
      for (int64_t cc = 0; cc < c; ++cc) {
        const T* xc = x.data() + (b * c + cc) * v;
        double acc = 0.0;
        for (int64_t i = 0; i < v; ++i) acc += xc[i];
        y[b * c + cc] = static_cast<T>(acc / static_cast<double>(v));
      }
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) override {
    const auto& s = in_shape_;
    const int64_t n = s[0], c = s[1], v = s[2] * s[3] * s[4];
    Tensor<T> gx(in_shape_);
    const T inv = T(1) / static_cast<T>(v);
    for (int64_t b = 0; b < n; ++b) {
      for (int64_t cc = 0; cc < c; ++cc) {
        T* gc = gx.data() + (b * c + cc) * v;
        const T g = gy[b * c + cc] * inv;
        for (int64_t i = 0; i < v; ++i) gc[i] = g;
      }
    }
    return gx;
  }

 private:
  std::vector<int64_t> in_shape_;
};

// ---------------------------------------------------------------- Linear

template <typename T>
class Linear : public Module<T> {
 public:
  Linear(std::string name, int64_t in_f, int64_t out_f, Rng& rng)
      : in_f_(in_f), out_f_(out_f), w_({out_f, in_f}), b_({out_f}) {
    w_.name = name + ".w";
    b_.name = name + ".b";
    const double sd = std::sqrt(2.0 / static_cast<double>(in_f));
    for (int64_t i = 0; i < w_.value.size(); ++i) {
      w_.value[i] = static_cast<T>(rng.normal(0.0, sd));
    }
  }

  Tensor<T> forward(const Tensor<T>& x, bool /*train*/) override {
    x_ = x;
    const int64_t n = x.shape()[0];
    Tensor<T> y({n, out_f_});
    Eigen::Map<const RowMat<T>> xm(x.data(), n, in_f_);
    Eigen::Map<const RowMat<T>> wm(w_.value.data(), out_f_, in_f_);
    Eigen::Map<RowMat<T>> ym(y.data(), n, out_f_);
    ym.noalias() = xm * wm.transpose();
    for (int64_t b = 0; b < n; ++b) {
      for (int64_t o = 0; o < out_f_; ++o) y[b * out_f_ + o] += b_.value[o];
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const int64_t n = x_.shape()[0];
    Eigen::Map<const RowMat<T>> gym(gy.data(), n, out_f_);
    Eigen::Map<const RowMat<T>> xm(x_.data(), n, in_f_);
    Eigen::Map<RowMat<T>> gwm(w_.grad.data(), out_f_, in_f_);
    gwm.noalias() += gym.transpose() * xm;
    for (int64_t b = 0; b < n; ++b) {
      for (int64_t o = 0; o < out_f_; ++o) b_.grad[o] += gy[b * out_f_ + o];
    }
    Tensor<T> gx({n, in_f_});
    Eigen::Map<const RowMat<T>> wm(w_.value.data(), out_f_, in_f_);
    Eigen::Map<RowMat<T>> gxm(gx.data(), n, in_f_);
    gxm.noalias() = gym * wm;
    return gx;
  }

  void collect_params(std::vector<Param<T>*>& out) override {
    out.push_back(&w_);
    out.push_back(&b_);
  }

 private:
  int64_t in_f_, out_f_;
  Param<T> w_, b_;
  Tensor<T> x_;
};

// ------------------------------------------------------------ Sequential

template <typename T>
class Sequential : public Module<T> {
 public:
  void add(std::unique_ptr<Module<T>> m) { mods_.push_back(std::move(m)); }

  Tensor<T> forward(const Tensor<T>& x, bool train) override {
    Tensor<T> cur = x;
    for (auto& m : mods_) cur = m->forward(cur, train);
    return cur;
  }
  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> cur = gy;
    for (auto it = mods_.rbegin(); it != mods_.rend(); ++it) cur = (*it)->backward(cur);
    return cur;
  }
  void collect_params(std::vector<Param<T>*>& out) override {
    for (auto& m : mods_) m->collect_params(out);
  }
  void collect_state(std::vector<std::pair<std::string, Tensor<T>*>>& out) override {
    for (auto& m : mods_) m->collect_state(out);
  }

 private:
  std::vector<std::unique_ptr<Module<T>>> mods_;
};

}  // namespace stagenet::nn
