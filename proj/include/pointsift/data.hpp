// Copyright 2026 The pointsift Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Synthetic labeled shapes and scenes, XYZL point files, and room-to-block
// sampling.

#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pointsift/error.hpp"
#include "pointsift/geometry.hpp"

namespace pointsift {

enum class ShapeKind { sphere = 0, cuboid = 1, plane = 2 };

inline const char* shape_kind_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::cuboid: return "cuboid";
    case ShapeKind::plane: return "plane";
  }
  return "?";
}

/// A surface to sample. `scale` is the sphere diameter, the cube side, or the
/// side of the square plane (horizontal, through `center`).
struct ShapeSpec {
  ShapeKind kind = ShapeKind::sphere;
  Vec3 center{0.0, 0.0, 0.0};
  double scale = 1.0;
  std::size_t points = 256;
  int label = 0;

  void validate() const {
    if (!(scale > 0.0) || !std::isfinite(scale)) throw InvalidArgument("shape scale must be positive");
    if (points < 8) throw InvalidArgument("a shape needs at least 8 points");
  }

  double surface_area() const {
    switch (kind) {
      case ShapeKind::sphere: return std::numbers::pi * scale * scale;
      case ShapeKind::cuboid: return 6.0 * scale * scale;
      case ShapeKind::plane: return scale * scale;
    }
    return 0.0;
  }
};

/// Points drawn uniformly on the shape surface; labels all equal spec.label.
inline PointCloud generate_shape(const ShapeSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(-0.5, 0.5);
  const double s = spec.scale;
  PointCloud cloud;
  cloud.positions.reserve(spec.points);
  for (std::size_t i = 0; i < spec.points; ++i) {
    Vec3 p{};
    switch (spec.kind) {
      case ShapeKind::sphere: {
        double norm = 0.0;
        do {
          for (auto& v : p) v = normal(rng);
          norm = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
        } while (norm < 1e-12);
        for (auto& v : p) v = v / norm * (0.5 * s);
        break;
      }
      case ShapeKind::cuboid: {
        // Faces have equal area, so area weighting is a uniform face choice.
        const auto face = static_cast<int>(rng() % 6);
        const int axis = face / 2;
        for (auto& v : p) v = unit(rng) * s;
        p[axis] = (face % 2 == 0 ? -0.5 : 0.5) * s;
        break;
      }
      case ShapeKind::plane:
        p = {unit(rng) * s, unit(rng) * s, 0.0};
        break;
    }
    cloud.positions.push_back({p[0] + spec.center[0], p[1] + spec.center[1], p[2] + spec.center[2]});
  }
  cloud.labels.assign(spec.points, spec.label);
  return cloud;
}

struct Scene {
  PointCloud cloud;                 // labeled
  std::vector<std::uint32_t> shape_of;  // provenance: index into `specs`
  std::vector<ShapeSpec> specs;
  std::uint64_t seed = 0;
};

/// Samples every shape, merges them, then subsamples (without replacement)
/// or pads (with replacement) uniformly to exactly `n_points`.
inline Scene generate_scene(const std::vector<ShapeSpec>& specs, std::size_t n_points, std::uint64_t seed) {
  if (specs.empty()) throw InvalidArgument("generate_scene: no shapes");
  if (n_points == 0) throw InvalidArgument("generate_scene: n_points must be positive");
  std::size_t total = 0;
  for (const auto& s : specs) {
    s.validate();
    total += s.points;
  }
  for (const auto& s : specs) {
    if (static_cast<double>(n_points) * static_cast<double>(s.points) / static_cast<double>(total) < 8.0)
      throw InvalidArgument("generate_scene: a shape would receive fewer than 8 of the scene's points");
  }
  Scene scene;
  scene.specs = specs;
  scene.seed = seed;
  std::vector<Vec3> pos;
  std::vector<int> lab;
  std::vector<std::uint32_t> prov;
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < specs.size(); ++k) {
    const PointCloud c = generate_shape(specs[k], rng());
    pos.insert(pos.end(), c.positions.begin(), c.positions.end());
    lab.insert(lab.end(), c.labels.begin(), c.labels.end());
    prov.insert(prov.end(), c.size(), static_cast<std::uint32_t>(k));
  }
  std::vector<std::size_t> pick(total);
  for (std::size_t i = 0; i < total; ++i) pick[i] = i;
  if (n_points <= total) {
    for (std::size_t i = 0; i < n_points; ++i) std::swap(pick[i], pick[i + rng() % (total - i)]);
    pick.resize(n_points);
  } else {
    // Every point appears in a random order, then uniform draws fill the rest.
    for (std::size_t i = 0; i + 1 < total; ++i) std::swap(pick[i], pick[i + rng() % (total - i)]);
    while (pick.size() < n_points) pick.push_back(rng() % total);
  }
  for (auto i : pick) {
    scene.cloud.positions.push_back(pos[i]);
    scene.cloud.labels.push_back(lab[i]);
    scene.shape_of.push_back(prov[i]);
  }
  return scene;
}

// ---------------------------------------------------------------------------
// Scene recipes

/// Toy segmentation scenes: a floor plane (class 2) with spheres (class 0)
/// and cubes (class 1) floating above it. With num_classes == 2 the floor is
/// omitted. Object sizes are log-uniform in [scale_min, scale_max]; point
/// budgets follow surface area so density is uniform.
struct ToySceneOptions {
  std::size_t num_classes = 3;
  std::size_t min_objects = 2;
  std::size_t max_objects = 4;
  double scale_min = 0.3;
  double scale_max = 0.7;
  double floor_size = 2.0;
};

inline Scene generate_toy_scene(std::size_t n_points, std::uint64_t seed, const ToySceneOptions& opt = {}) {
  if (opt.num_classes < 1 || opt.num_classes > 3) throw InvalidArgument("toy scenes support 1 to 3 classes");
  if (!(opt.scale_min > 0.0) || opt.scale_min > opt.scale_max) throw InvalidArgument("invalid scale range");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const std::size_t kinds = std::min<std::size_t>(opt.num_classes, 2);
  const std::size_t n_obj = opt.min_objects + rng() % (opt.max_objects - opt.min_objects + 1);
  std::vector<ShapeSpec> specs;
  const double half = 0.5 * opt.floor_size;
  for (std::size_t k = 0; k < n_obj; ++k) {
    ShapeSpec s;
    s.kind = static_cast<ShapeKind>(kinds == 1 ? 0 : rng() % kinds);
    s.label = static_cast<int>(s.kind);
    s.scale = opt.scale_min * std::pow(opt.scale_max / opt.scale_min, u01(rng));
    // Rejection-sample a spot that keeps objects apart.
    for (int attempt = 0; attempt < 64; ++attempt) {
      const double lim = std::max(0.0, half - 0.5 * s.scale);
      s.center = {(2.0 * u01(rng) - 1.0) * lim, (2.0 * u01(rng) - 1.0) * lim, 0.5 * s.scale + 0.15};
      bool clear = true;
      for (const auto& o : specs) {
        const double dx = o.center[0] - s.center[0], dy = o.center[1] - s.center[1];
        clear = clear && std::sqrt(dx * dx + dy * dy) > 0.55 * (o.scale + s.scale) * std::numbers::sqrt2;
      }
      if (clear) break;
    }
    specs.push_back(s);
  }
  if (opt.num_classes == 3) {
    ShapeSpec floor;
    floor.kind = ShapeKind::plane;
    floor.label = 2;
    floor.scale = opt.floor_size;
    floor.center = {0.0, 0.0, 0.0};
    specs.push_back(floor);
  }
  double area = 0.0;
  for (const auto& s : specs) area += s.surface_area();
  for (auto& s : specs)
    s.points = std::max<std::size_t>(8, static_cast<std::size_t>(std::ceil(2.0 * n_points * s.surface_area() / area)));
  return generate_scene(specs, n_points, rng());
}

/// One shape per sample for the scale experiment: a sphere or cube centered
/// at the origin with log-uniform scale in [scale_min, scale_max].
inline Scene generate_scale_sample(std::size_t n_points, double scale_min, double scale_max, std::uint64_t seed) {
  if (!(scale_min > 0.0) || scale_min > scale_max) throw InvalidArgument("invalid scale range");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  ShapeSpec s;
  s.kind = static_cast<ShapeKind>(rng() % 2);
  s.label = static_cast<int>(s.kind);
  s.scale = scale_min * std::pow(scale_max / scale_min, u01(rng));
  s.points = n_points;
  return generate_scene({s}, n_points, rng());
}

// ---------------------------------------------------------------------------
// XYZL files

/// Writes `x y z label` or `x y z r g b label` lines at 17 significant digits.
inline void save_xyzl(const PointCloud& cloud, const std::string& path) {
  cloud.validate();
  if (!cloud.has_labels()) throw InvalidArgument("save_xyzl: cloud has no labels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  char buf[512];
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.positions[i];
    int n = 0;
    if (cloud.has_colors()) {
      const auto& c = cloud.colors[i];
      n = std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g %.17g %.17g %d\n", p[0], p[1], p[2], c[0], c[1],
                        c[2], cloud.labels[i]);
    } else {
      n = std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %d\n", p[0], p[1], p[2], cloud.labels[i]);
    }
    out.write(buf, n);
  }
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

inline PointCloud parse_xyzl(const std::string& text) {
  PointCloud cloud;
  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0, columns = 0;
  std::vector<std::string> tok;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw.resize(hash);
    tok.clear();
    std::istringstream ls(raw);
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    if (tok.size() != 4 && tok.size() != 7)
      throw ParseError("expected 4 or 7 columns, found " + std::to_string(tok.size()), line);
    if (columns == 0) columns = tok.size();
    if (tok.size() != columns)
      throw FormatError("inconsistent column count (" + std::to_string(tok.size()) + " after " +
                            std::to_string(columns) + ")",
                        line);
    double v[6];
    for (std::size_t c = 0; c + 1 < tok.size(); ++c) {
      const auto& t = tok[c];
      auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v[c]);
      if (ec != std::errc() || p != t.data() + t.size() || !std::isfinite(v[c]))
        throw ParseError("invalid number '" + t + "'", line);
    }
    const auto& lt = tok.back();
    int label = 0;
    auto [p, ec] = std::from_chars(lt.data(), lt.data() + lt.size(), label);
    if (ec != std::errc() || p != lt.data() + lt.size() || label < 0)
      throw ParseError("invalid label '" + lt + "'", line);
    cloud.positions.push_back({v[0], v[1], v[2]});
    if (columns == 7) cloud.colors.push_back({v[3], v[4], v[5]});
    cloud.labels.push_back(label);
  }
  if (cloud.positions.empty()) throw ParseError("no points", line);
  return cloud;
}

inline PointCloud load_xyzl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_xyzl(buf.str());
}

// ---------------------------------------------------------------------------
// Block sampling

struct BlockSampleResult {
  std::vector<PointCloud> blocks;
  std::vector<std::array<std::int64_t, 2>> cells;        // (floor(x/b), floor(y/b)) per block
  std::vector<std::vector<std::uint32_t>> source_indices;  // origin of each block point
  std::size_t dropped = 0;                                 // sparse blocks skipped
};

/// Splits a cloud into block_size x block_size columns in x-y. Blocks with
/// at least points_per_block/4 points are resampled to exactly
/// points_per_block (without replacement when possible, otherwise all points
/// plus uniform repeats) and re-centered on their x-y centroid; z is kept.
inline BlockSampleResult block_sample(const PointCloud& cloud, double block_size, std::size_t points_per_block,
                                      std::uint64_t seed) {
  cloud.validate();
  if (!(block_size > 0.0)) throw InvalidArgument("block_size must be positive");
  if (points_per_block == 0) throw InvalidArgument("points_per_block must be positive");
  std::map<std::array<std::int64_t, 2>, std::vector<std::uint32_t>> cells;
  for (std::uint32_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.positions[i];
    cells[{static_cast<std::int64_t>(std::floor(p[0] / block_size)),
           static_cast<std::int64_t>(std::floor(p[1] / block_size))}]
        .push_back(i);
  }
  BlockSampleResult out;
  std::mt19937_64 rng(seed);
  const std::size_t min_points = (points_per_block + 3) / 4;
  for (auto& [key, members] : cells) {
    if (members.size() < min_points) {
      ++out.dropped;
      continue;
    }
    double cx = 0.0, cy = 0.0;
    for (auto i : members) {
      cx += cloud.positions[i][0];
      cy += cloud.positions[i][1];
    }
    cx /= static_cast<double>(members.size());
    cy /= static_cast<double>(members.size());
    std::vector<std::uint32_t> pick = members;
    const std::size_t n = pick.size();
    if (n >= points_per_block) {
      for (std::size_t i = 0; i < points_per_block; ++i) std::swap(pick[i], pick[i + rng() % (n - i)]);
      pick.resize(points_per_block);
    } else {
      while (pick.size() < points_per_block) pick.push_back(members[rng() % n]);
    }
    PointCloud block;
    for (auto i : pick) {
      const auto& p = cloud.positions[i];
      block.positions.push_back({p[0] - cx, p[1] - cy, p[2]});
      if (cloud.has_colors()) block.colors.push_back(cloud.colors[i]);
      if (cloud.has_labels()) block.labels.push_back(cloud.labels[i]);
    }
    out.blocks.push_back(std::move(block));
    out.cells.push_back(key);
    out.source_indices.push_back(std::move(pick));
  }
  return out;
}

}  // namespace pointsift
