#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

#include "stagenet/tensor.hpp"

#include <nlohmann/json.hpp>

namespace stagenet {

using Shape3 = std::array<std::int64_t, 3>;

inline std::string shape3_str(const Shape3& s) {
  return "(" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," +
         std::to_string(s[2]) + ")";
}

/// One 3D scan: dense float32 voxels, C-order (d, h, w).
struct Volume {
  Tensor<float> data;
  Shape3 shape{0, 0, 0};
  double voxel_size_mm = 2.0;

  Volume() = default;
  explicit Volume(const Shape3& s, double voxel_mm = 2.0)
      : data({s[0], s[1], s[2]}), shape(s), voxel_size_mm(voxel_mm) {}

  std::int64_t numel() const { return shape[0] * shape[1] * shape[2]; }
  float& at(std::int64_t d, std::int64_t h, std::int64_t w) {
    return data[(d * shape[1] + h) * shape[2] + w];
  }
  float at(std::int64_t d, std::int64_t h, std::int64_t w) const {
    return data[(d * shape[1] + h) * shape[2] + w];
  }
};

inline void check_shape(const Volume& v, const Shape3& canonical) {
  if (v.shape != canonical) {
    throw std::runtime_error("volume shape " + shape3_str(v.shape) +
                             " does not match canonical shape " + shape3_str(canonical));
  }
}

/// Per-image standardization: subtract the whole-volume mean, divide by the
/// whole-volume SD (population convention). Accumulates in double.
inline Volume z_transform(const Volume& v) {
  const std::int64_t n = v.numel();
  if (n == 0) throw std::runtime_error("z_transform: empty volume");
  double sum = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const float x = v.data[i];
    if (!std::isfinite(x)) throw std::runtime_error("z_transform: non-finite voxel");
    sum += x;
  }
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = v.data[i] - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / static_cast<double>(n));
  if (sd == 0.0) throw std::runtime_error("z_transform: constant volume (SD = 0)");
  Volume out(v.shape, v.voxel_size_mm);
  const double inv = 1.0 / sd;
  for (std::int64_t i = 0; i < n; ++i) {
    out.data[i] = static_cast<float>((v.data[i] - mean) * inv);
  }
  return out;
}

// ---- volume file format: <name>.f32 raw little-endian floats, C-order,
// ---- with a JSON sidecar <name>.json {shape, voxel_size_mm, dtype, order}.

inline void save_volume(const Volume& v, const std::string& path_base) {
  {
    std::ofstream f(path_base + ".f32", std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path_base + ".f32");
    f.write(reinterpret_cast<const char*>(v.data.data()),
            static_cast<std::streamsize>(v.numel() * sizeof(float)));
  }
  nlohmann::json hdr = {
      {"shape", {v.shape[0], v.shape[1], v.shape[2]}},
      {"voxel_size_mm", v.voxel_size_mm},
      {"dtype", "f32le"},
      {"order", "C"},
  };
  std::ofstream f(path_base + ".json");
  if (!f) throw std::runtime_error("cannot write " + path_base + ".json");
  f << hdr.dump(2) << "\n";
}

inline Volume load_volume(const std::string& path_base) {
  std::ifstream hf(path_base + ".json");
  if (!hf) throw std::runtime_error("cannot read volume header " + path_base + ".json");
  nlohmann::json hdr = nlohmann::json::parse(hf);
  if (hdr.at("dtype") != "f32le" || hdr.at("order") != "C") {
    throw std::runtime_error("unsupported volume encoding in " + path_base + ".json");
  }
  Shape3 shape{hdr.at("shape").at(0).get<std::int64_t>(),
               hdr.at("shape").at(1).get<std::int64_t>(),
               hdr.at("shape").at(2).get<std::int64_t>()};
  Volume v(shape, hdr.value("voxel_size_mm", 2.0));
  std::ifstream f(path_base + ".f32", std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path_base + ".f32");
  f.read(reinterpret_cast<char*>(v.data.data()),
         static_cast<std::streamsize>(v.numel() * sizeof(float)));
  if (f.gcount() != static_cast<std::streamsize>(v.numel() * sizeof(float))) {
    throw std::runtime_error("volume file " + path_base + ".f32 shorter than header shape");
  }
  return v;
}

}  // namespace stagenet
