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

// On-disk datasets: a directory of XYZL files plus manifest.csv.

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pointsift/data.hpp"
#include "pointsift/error.hpp"

namespace pointsift {

inline constexpr const char* kManifestName = "manifest.csv";
inline constexpr const char* kManifestHeader = "filename,shape_kinds,scales,seed";

struct ManifestEntry {
  std::string filename;
  std::vector<ShapeKind> kinds;
  std::vector<double> scales;
  std::uint64_t seed = 0;
};

inline ShapeKind parse_shape_kind(const std::string& s, std::size_t line) {
  if (s == "sphere") return ShapeKind::sphere;
  if (s == "cuboid") return ShapeKind::cuboid;
  if (s == "plane") return ShapeKind::plane;
  throw ParseError("unknown shape kind '" + s + "'", line);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string format_manifest(const std::vector<ManifestEntry>& entries) {
  std::string out = std::string(kManifestHeader) + "\n";
  char buf[64];
  for (const auto& e : entries) {
    out += e.filename + ",";
    for (std::size_t k = 0; k < e.kinds.size(); ++k) out += (k ? ";" : "") + std::string(shape_kind_name(e.kinds[k]));
    out += ",";
    for (std::size_t k = 0; k < e.scales.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%.17g", e.scales[k]);
      out += (k ? ";" : "") + std::string(buf);
    }
    out += "," + std::to_string(e.seed) + "\n";
  }
  return out;
}

inline std::vector<ManifestEntry> parse_manifest(const std::string& text) {
  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0;
  std::vector<ManifestEntry> entries;
  while (std::getline(in, raw)) {
    ++line;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (line == 1) {
      if (raw != kManifestHeader) throw ParseError("expected header '" + std::string(kManifestHeader) + "'", line);
      continue;
    }
    if (raw.empty()) continue;
    const auto cols = split(raw, ',');
    if (cols.size() != 4) throw ParseError("expected 4 columns", line);
    ManifestEntry e;
    e.filename = cols[0];
    if (e.filename.empty() || e.filename.find('/') != std::string::npos) throw ParseError("bad filename", line);
    for (const auto& k : split(cols[1], ';')) e.kinds.push_back(parse_shape_kind(k, line));
    for (const auto& s : split(cols[2], ';')) {
      std::size_t used = 0;
      try {
        e.scales.push_back(std::stod(s, &used));
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != s.size()) throw ParseError("bad scale '" + s + "'", line);
    }
    if (e.scales.size() != e.kinds.size()) throw ParseError("shape_kinds and scales differ in length", line);
    std::size_t used = 0;
    try {
      e.seed = std::stoull(cols[3], &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != cols[3].size()) throw ParseError("bad seed", line);
    entries.push_back(std::move(e));
  }
  if (line == 0) throw ParseError("empty manifest", 0);
  return entries;
}

struct Dataset {
  std::vector<ManifestEntry> entries;
  std::vector<PointCloud> clouds;
};

inline Dataset load_dataset(const std::string& dir) {
  const std::filesystem::path root(dir);
  std::ifstream in(root / kManifestName, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + (root / kManifestName).string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  Dataset d;
  d.entries = parse_manifest(buf.str());
  for (const auto& e : d.entries) d.clouds.push_back(load_xyzl((root / e.filename).string()));
  return d;
}

enum class DatasetKind { toy, scale };

struct GenDataOptions {
  DatasetKind kind = DatasetKind::toy;
  std::size_t scenes = 10;
  std::size_t points = 1024;
  std::size_t classes = 3;
  std::uint64_t seed = 1;
  double scale_min = 0.3;
  double scale_max = 0.7;
};

/// Scene i uses seed `opt.seed + i`. Toy scenes take their object sizes from
/// the scale range; scale samples hold one shape each and ignore `classes`.
inline Scene generate_dataset_scene(const GenDataOptions& opt, std::size_t i) {
  if (!(opt.scale_min > 0.0) || opt.scale_min > opt.scale_max) throw InvalidArgument("invalid scale range");
  const std::uint64_t seed = opt.seed + i;
  if (opt.kind == DatasetKind::scale) return generate_scale_sample(opt.points, opt.scale_min, opt.scale_max, seed);
  ToySceneOptions t;
  t.num_classes = opt.classes;
  t.scale_min = opt.scale_min;
  t.scale_max = opt.scale_max;
  return generate_toy_scene(opt.points, seed, t);
}

inline std::vector<ManifestEntry> write_dataset(const std::string& dir, const GenDataOptions& opt) {
  if (!(opt.scale_min > 0.0) || opt.scale_min > opt.scale_max) throw InvalidArgument("invalid scale range");
  const std::filesystem::path root(dir);
  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  if (ec || !std::filesystem::is_directory(root)) throw std::runtime_error("cannot create directory '" + dir + "'");
  std::vector<ManifestEntry> entries;
  char name[32];
  for (std::size_t i = 0; i < opt.scenes; ++i) {
    const Scene s = generate_dataset_scene(opt, i);
    std::snprintf(name, sizeof name, "scene_%05zu.xyzl", i);
    save_xyzl(s.cloud, (root / name).string());
    ManifestEntry e;
    e.filename = name;
    e.seed = s.seed;
    for (const auto& spec : s.specs) {
      e.kinds.push_back(spec.kind);
      e.scales.push_back(spec.scale);
    }
    entries.push_back(std::move(e));
  }
  std::ofstream out(root / kManifestName, std::ios::binary);
  const std::string text = format_manifest(entries);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("cannot write manifest in '" + dir + "'");
  return entries;
}

}  // namespace pointsift
