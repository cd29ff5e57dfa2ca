#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "stagenet/loss.hpp"
#include "stagenet/nn/model.hpp"
#include "stagenet/png.hpp"
#include "stagenet/volume.hpp"

namespace stagenet {

enum class EdgeMode { clamp_extra_position, interior_only };

struct OcclusionConfig {
  std::int64_t patch_size = 16;
  std::int64_t stride = 4;
  double fill_value = 0.0;  // standardized mean; "black" in z-transformed space
  EdgeMode edge_mode = EdgeMode::clamp_extra_position;

  void validate(const Shape3& shape) const {
    const std::int64_t min_axis = std::min({shape[0], shape[1], shape[2]});
    if (!(1 <= stride && stride <= patch_size && patch_size <= min_axis)) {
      throw std::runtime_error("occlusion config requires 1 <= stride <= patch_size <= min axis");
    }
  }
};

/// Heatmap values live on the input grid; larger = occluding here reduces
/// the patient-class probability more.
struct Heatmap {
  Tensor<double> values;
  Shape3 shape{0, 0, 0};
};

inline std::vector<std::int64_t> occlusion_positions(std::int64_t axis_len, std::int64_t patch,
                                                     std::int64_t stride, EdgeMode edge_mode) {
  if (patch > axis_len) {
    throw std::runtime_error("occlusion patch " + std::to_string(patch) +
                             " exceeds axis length " + std::to_string(axis_len));
  }
  std::vector<std::int64_t> out;
  for (std::int64_t s = 0; s + patch <= axis_len; s += stride) out.push_back(s);
  if (edge_mode == EdgeMode::clamp_extra_position) {
    const std::int64_t last = axis_len - patch;
    if (out.empty() || out.back() != last) out.push_back(last);
  }
  return out;
}

/// Masks every (patch, stride) position with fill_value, records the drop in
/// patient probability, and spreads each drop over the patch voxels. Each
/// voxel's value is the mean drop over all patches covering it. Model is any
/// type with forward(batch, train) -> outputs carrying dx_logit and a
/// config() with input_shape (duck-typed so tests can use stub predictors).
template <typename Model>
Heatmap occlusion_sensitivity(Model& model, const Volume& v, const OcclusionConfig& cfg) {
  using T = float;
  cfg.validate(v.shape);
  const auto& in = model.config().input_shape;
  check_shape(v, in);

  auto prob_batch = [&](const Tensor<T>& batch) {
    auto y = model.forward(batch, /*train=*/false);
    std::vector<double> p(static_cast<std::size_t>(y.dx_logit.size()));
    for (std::int64_t i = 0; i < y.dx_logit.size(); ++i) {
      p[static_cast<std::size_t>(i)] = detail::sigmoid(y.dx_logit[i]);
    }
    return p;
  };

  const std::int64_t vox = v.numel();
  Tensor<T> base({1, 1, v.shape[0], v.shape[1], v.shape[2]});
  for (std::int64_t i = 0; i < vox; ++i) base[i] = static_cast<T>(v.data[i]);
  const double p0 = prob_batch(base)[0];

  const auto pd = occlusion_positions(v.shape[0], cfg.patch_size, cfg.stride, cfg.edge_mode);
  const auto ph = occlusion_positions(v.shape[1], cfg.patch_size, cfg.stride, cfg.edge_mode);
  const auto pw = occlusion_positions(v.shape[2], cfg.patch_size, cfg.stride, cfg.edge_mode);

  struct Pos {
    std::int64_t d, h, w;
  };
  std::vector<Pos> positions;
  for (auto d : pd)
    for (auto h : ph)
      for (auto w : pw) positions.push_back({d, h, w});

  Tensor<double> acc({v.shape[0], v.shape[1], v.shape[2]});
  Tensor<double> cover({v.shape[0], v.shape[1], v.shape[2]});

  const std::size_t occl_batch = 16;
  for (std::size_t start = 0; start < positions.size(); start += occl_batch) {
    const std::size_t end = std::min(positions.size(), start + occl_batch);
    const std::int64_t b = static_cast<std::int64_t>(end - start);
    Tensor<T> batch({b, 1, v.shape[0], v.shape[1], v.shape[2]});
    for (std::int64_t i = 0; i < b; ++i) {
      std::copy(base.data(), base.data() + vox, batch.data() + i * vox);
      const Pos& p = positions[start + static_cast<std::size_t>(i)];
      for (std::int64_t d = p.d; d < p.d + cfg.patch_size; ++d) {
        for (std::int64_t h = p.h; h < p.h + cfg.patch_size; ++h) {
          T* row = batch.data() + i * vox + (d * v.shape[1] + h) * v.shape[2] + p.w;
          std::fill(row, row + cfg.patch_size, static_cast<T>(cfg.fill_value));
        }
      }
    }
    const auto probs = prob_batch(batch);
    for (std::int64_t i = 0; i < b; ++i) {
      const Pos& p = positions[start + static_cast<std::size_t>(i)];
      const double delta = p0 - probs[static_cast<std::size_t>(i)];
      for (std::int64_t d = p.d; d < p.d + cfg.patch_size; ++d) {
        for (std::int64_t h = p.h; h < p.h + cfg.patch_size; ++h) {
          const std::int64_t off = (d * v.shape[1] + h) * v.shape[2] + p.w;
          for (std::int64_t w = 0; w < cfg.patch_size; ++w) {
            acc[off + w] += delta;
            cover[off + w] += 1.0;
          }
        }
      }
    }
  }

  Heatmap hm;
  hm.shape = v.shape;
  hm.values = Tensor<double>({v.shape[0], v.shape[1], v.shape[2]});
  for (std::int64_t i = 0; i < vox; ++i) {
    if (cover[i] == 0.0) {
      throw std::runtime_error("occlusion: uncovered voxel (interior_only edge mode leaves "
                               "edge voxels uncovered on this shape)");
    }
    hm.values[i] = acc[i] / cover[i];
  }
  return hm;
}

namespace detail {

inline void render_slice(const Heatmap& hm, const Volume& v, int axis, std::int64_t index,
                         const std::string& path) {
  // Axes of the 2D slice for a given cut axis.
  const int a1 = axis == 0 ? 1 : 0;
  const int a2 = axis == 2 ? 1 : 2;
  const int w = static_cast<int>(v.shape[static_cast<std::size_t>(a2)]);
  const int h = static_cast<int>(v.shape[static_cast<std::size_t>(a1)]);

  auto vox = [&](std::int64_t i, std::int64_t j) {
    std::int64_t c[3];
    c[axis] = index;
    c[a1] = i;
    c[a2] = j;
    return std::pair<float, double>(v.at(c[0], c[1], c[2]),
                                    hm.values[(c[0] * v.shape[1] + c[1]) * v.shape[2] + c[2]]);
  };

  float vmin = std::numeric_limits<float>::max(), vmax = std::numeric_limits<float>::lowest();
  double hmax = 0.0;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      auto [g, hv] = vox(i, j);
      vmin = std::min(vmin, g);
      vmax = std::max(vmax, g);
      hmax = std::max(hmax, std::abs(hv));
    }
  }
  const float vrange = vmax > vmin ? vmax - vmin : 1.0f;

  std::vector<unsigned char> rgb(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      auto [g, hv] = vox(i, j);
      const double gray = (g - vmin) / vrange;
      // positive heat -> red overlay, negative -> blue
      const double a = hmax > 0.0 ? std::min(1.0, std::abs(hv) / hmax) * 0.6 : 0.0;
      const double r = gray * (1.0 - a) + (hv >= 0 ? 1.0 : 0.0) * a;
      const double gg = gray * (1.0 - a);
      const double b = gray * (1.0 - a) + (hv < 0 ? 1.0 : 0.0) * a;
      auto* px = &rgb[(static_cast<std::size_t>(i) * static_cast<std::size_t>(w) +
                       static_cast<std::size_t>(j)) * 3];
      px[0] = static_cast<unsigned char>(std::round(255.0 * std::clamp(r, 0.0, 1.0)));
      px[1] = static_cast<unsigned char>(std::round(255.0 * std::clamp(gg, 0.0, 1.0)));
      px[2] = static_cast<unsigned char>(std::round(255.0 * std::clamp(b, 0.0, 1.0)));
    }
  }
  write_png_rgb(path, w, h, rgb);
}

}  // namespace detail

/// Writes the raw heatmap in the volume file format plus three orthogonal
/// mid-plane overlay slices as PNG: <base>_heatmap.{f32,json} and
/// <base>_{axial,coronal,sagittal}.png.
inline void export_overlay(const Heatmap& hm, const Volume& v, const std::string& path_base) {
  if (hm.shape != v.shape) throw std::runtime_error("export_overlay: shape mismatch");
  Volume hv(hm.shape, v.voxel_size_mm);
  for (std::int64_t i = 0; i < hv.numel(); ++i) hv.data[i] = static_cast<float>(hm.values[i]);
  save_volume(hv, path_base + "_heatmap");
  const char* names[3] = {"axial", "coronal", "sagittal"};
  for (int axis = 0; axis < 3; ++axis) {
    detail::render_slice(hm, v, axis, v.shape[static_cast<std::size_t>(axis)] / 2,
                         path_base + "_" + names[axis] + ".png");
  }
}

}  // namespace stagenet
