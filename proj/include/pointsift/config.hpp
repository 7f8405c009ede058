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

// Network and training configuration, read from flat `key = value` text.
//
// Lists are comma separated. Per-stage block dimensions are semicolon
// separated lists of comma lists, with `-` marking a stage without a block:
//
//   down_pointsift = 32,32 ; 64,64 ; 128,128
//   up_pointsift   = - ; 64,64 ; 128,128

#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pointsift/error.hpp"

namespace pointsift {

/// Kind of local feature block interleaved with the sampling layers.
enum class BlockKind {
  pointsift,   // stacked orientation-encoding units + fusion
  ball_query,  // ball-query neighbors + point-wise convolution over the ordered group
};

struct NetworkConfig {
  std::size_t input_points = 1024;
  std::size_t num_classes = 3;
  bool use_rgb = false;
  std::vector<std::size_t> stage_sizes{256, 64, 16};
  std::vector<std::size_t> channel_widths{32, 64, 128, 256};  // one per level
  std::vector<double> oe_radii{0.1, 0.2, 0.4, 0.8};           // one per level
  std::vector<std::vector<std::size_t>> down_pointsift{{32, 32}, {64, 64}, {128, 128}};
  std::vector<std::vector<std::size_t>> up_pointsift{{32, 32}, {64, 64}, {128, 128}};
  std::vector<std::size_t> bottom_pointsift{};  // block at the coarsest level, if any
  BlockKind block_kind = BlockKind::pointsift;
  std::size_t ball_block_neighbors = 8;
  std::size_t max_k = 32;
  std::vector<double> sa_radii{0.2, 0.4, 0.8};
  std::size_t sa_mlp_layers = 2;
  std::size_t fp_mlp_layers = 1;
  std::size_t input_mlp_layers = 2;
  std::uint64_t seed = 1;
  bool relative_coords_only = false;
  bool fusion_activation = true;
  bool canonical_fps = true;
  bool oec_depthwise = false;  // reserved; depthwise OEC is not implemented

  std::size_t levels() const { return stage_sizes.size() + 1; }

  std::size_t input_dim() const {
    if (relative_coords_only) return use_rgb ? 3 : 1;
    return use_rgb ? 6 : 3;
  }

  std::size_t level_points(std::size_t level) const {
    return level == 0 ? input_points : stage_sizes[level - 1];
  }

  void validate() const {
    const std::size_t stages = stage_sizes.size();
    if (input_points == 0) throw InvalidArgument("input_points must be positive");
    if (num_classes == 0) throw InvalidArgument("num_classes must be positive");
    if (stages == 0) throw InvalidArgument("stage_sizes must name at least one stage");
    if (channel_widths.size() != stages + 1)
      throw InvalidArgument("channel_widths needs one entry per level (" + std::to_string(stages + 1) + ")");
    if (oe_radii.size() != stages + 1)
      throw InvalidArgument("oe_radii needs one entry per level (" + std::to_string(stages + 1) + ")");
    if (sa_radii.size() != stages) throw InvalidArgument("sa_radii needs one entry per stage");
    if (down_pointsift.size() != stages) throw InvalidArgument("down_pointsift needs one entry per stage");
    if (up_pointsift.size() != stages) throw InvalidArgument("up_pointsift needs one entry per stage");
    std::size_t prev = input_points;
    for (auto s : stage_sizes) {
      if (s == 0 || s > prev) throw InvalidArgument("stage_sizes must be positive and non-increasing");
      prev = s;
    }
    for (auto w : channel_widths)
      if (w == 0) throw InvalidArgument("channel widths must be positive");
    for (auto r : oe_radii)
      if (!(r > 0.0)) throw InvalidArgument("oe_radii must be positive");
    for (auto r : sa_radii)
      if (!(r > 0.0)) throw InvalidArgument("sa_radii must be positive");
    auto check_dims = [](const std::vector<std::size_t>& dims) {
      for (auto d : dims)
        if (d == 0) throw InvalidArgument("block dimensions must be positive");
    };
    for (const auto& d : down_pointsift) check_dims(d);
    for (const auto& d : up_pointsift) check_dims(d);
    check_dims(bottom_pointsift);
    if (max_k == 0) throw InvalidArgument("max_k must be positive");
    if (ball_block_neighbors == 0) throw InvalidArgument("ball_block_neighbors must be positive");
    if (sa_mlp_layers == 0 || fp_mlp_layers == 0 || input_mlp_layers == 0)
      throw InvalidArgument("mlp layer counts must be positive");
    if (oec_depthwise) throw InvalidArgument("oec_depthwise is reserved and not implemented");
  }
};

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t shuffle_seed = 7;
};

struct ExperimentConfig {
  NetworkConfig network;
  TrainConfig train;
};

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

template <class T>
T parse_number(const std::string& text, std::size_t line) {
  T v{};
  const char* b = text.data();
  const char* e = text.data() + text.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e || text.empty())
    throw ParseError("invalid number '" + text + "'", line);
  return v;
}

inline bool parse_bool(const std::string& text, std::size_t line) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ParseError("invalid boolean '" + text + "'", line);
}

template <class T>
std::vector<T> parse_list(const std::string& text, std::size_t line) {
  std::vector<T> out;
  if (text.empty() || text == "-") return out;
  for (const auto& item : split(text, ',')) out.push_back(parse_number<T>(item, line));
  return out;
}

inline std::vector<std::vector<std::size_t>> parse_block_dims(const std::string& text, std::size_t line) {
  std::vector<std::vector<std::size_t>> out;
  for (const auto& stage : split(text, ';')) out.push_back(parse_list<std::size_t>(stage, line));
  return out;
}

template <class T>
std::string join(const std::vector<T>& xs) {
  if (xs.empty()) return "-";
  std::ostringstream out;
  out << std::setprecision(17);
  for (std::size_t i = 0; i < xs.size(); ++i) out << (i ? "," : "") << xs[i];
  return out.str();
}

inline std::string join_blocks(const std::vector<std::vector<std::size_t>>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? " ; " : "") + join(xs[i]);
  return out;
}

}  // namespace config_detail

/// Parses configuration text. Unknown keys and malformed values raise
/// ParseError carrying the 1-based line number.
inline ExperimentConfig parse_config(std::string_view text) {
  using namespace config_detail;
  ExperimentConfig cfg;
  auto& net = cfg.network;
  auto& tr = cfg.train;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string body = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", line);
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    if (key == "input_points") net.input_points = parse_number<std::size_t>(value, line);
    else if (key == "num_classes") net.num_classes = parse_number<std::size_t>(value, line);
    else if (key == "use_rgb") net.use_rgb = parse_bool(value, line);
    else if (key == "stage_sizes") net.stage_sizes = parse_list<std::size_t>(value, line);
    else if (key == "channel_widths") net.channel_widths = parse_list<std::size_t>(value, line);
    else if (key == "oe_radii") net.oe_radii = parse_list<double>(value, line);
    else if (key == "down_pointsift") net.down_pointsift = parse_block_dims(value, line);
    else if (key == "up_pointsift") net.up_pointsift = parse_block_dims(value, line);
    else if (key == "bottom_pointsift") net.bottom_pointsift = parse_list<std::size_t>(value, line);
    else if (key == "block_kind") {
      if (value == "pointsift") net.block_kind = BlockKind::pointsift;
      else if (value == "ball_query") net.block_kind = BlockKind::ball_query;
      else throw ParseError("block_kind must be pointsift or ball_query", line);
    } else if (key == "ball_block_neighbors") net.ball_block_neighbors = parse_number<std::size_t>(value, line);
    else if (key == "max_k") net.max_k = parse_number<std::size_t>(value, line);
    else if (key == "sa_radii") net.sa_radii = parse_list<double>(value, line);
    else if (key == "sa_mlp_layers") net.sa_mlp_layers = parse_number<std::size_t>(value, line);
    else if (key == "fp_mlp_layers") net.fp_mlp_layers = parse_number<std::size_t>(value, line);
    else if (key == "input_mlp_layers") net.input_mlp_layers = parse_number<std::size_t>(value, line);
    else if (key == "seed") net.seed = parse_number<std::uint64_t>(value, line);
    else if (key == "relative_coords_only") net.relative_coords_only = parse_bool(value, line);
    else if (key == "fusion_activation") net.fusion_activation = parse_bool(value, line);
    else if (key == "fps_start") {
      if (value == "canonical") net.canonical_fps = true;
      else if (value == "seeded") net.canonical_fps = false;
      else throw ParseError("fps_start must be canonical or seeded", line);
    } else if (key == "oec_depthwise") net.oec_depthwise = parse_bool(value, line);
    else if (key == "optimizer") {
      if (value == "adam") tr.optimizer = OptimizerKind::adam;
      else if (value == "sgd") tr.optimizer = OptimizerKind::sgd;
      else throw ParseError("optimizer must be adam or sgd", line);
    } else if (key == "learning_rate") tr.learning_rate = parse_number<double>(value, line);
    else if (key == "beta1") tr.beta1 = parse_number<double>(value, line);
    else if (key == "beta2") tr.beta2 = parse_number<double>(value, line);
    else if (key == "shuffle_seed") tr.shuffle_seed = parse_number<std::uint64_t>(value, line);
    else throw ParseError("unknown key '" + key + "'", line);
  }
  try {
    net.validate();
  } catch (const InvalidArgument& e) {
    throw ParseError(e.what(), 0);
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config file '" + path + "'", 0);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

/// Inverse of parse_config; the output parses back to an equal configuration.
inline std::string format_config(const ExperimentConfig& cfg) {
  using namespace config_detail;
  const auto& n = cfg.network;
  const auto& t = cfg.train;
  std::ostringstream out;
  out << std::setprecision(17);
  out << "input_points = " << n.input_points << "\n"
      << "num_classes = " << n.num_classes << "\n"
      << "use_rgb = " << (n.use_rgb ? "true" : "false") << "\n"
      << "stage_sizes = " << join(n.stage_sizes) << "\n"
      << "channel_widths = " << join(n.channel_widths) << "\n"
      << "oe_radii = " << join(n.oe_radii) << "\n"
      << "down_pointsift = " << join_blocks(n.down_pointsift) << "\n"
      << "up_pointsift = " << join_blocks(n.up_pointsift) << "\n"
      << "bottom_pointsift = " << join(n.bottom_pointsift) << "\n"
      << "block_kind = " << (n.block_kind == BlockKind::pointsift ? "pointsift" : "ball_query") << "\n"
      << "ball_block_neighbors = " << n.ball_block_neighbors << "\n"
      << "max_k = " << n.max_k << "\n"
      << "sa_radii = " << join(n.sa_radii) << "\n"
      << "sa_mlp_layers = " << n.sa_mlp_layers << "\n"
      << "fp_mlp_layers = " << n.fp_mlp_layers << "\n"
      << "input_mlp_layers = " << n.input_mlp_layers << "\n"
      << "seed = " << n.seed << "\n"
      << "relative_coords_only = " << (n.relative_coords_only ? "true" : "false") << "\n"
      << "fusion_activation = " << (n.fusion_activation ? "true" : "false") << "\n"
      << "fps_start = " << (n.canonical_fps ? "canonical" : "seeded") << "\n"
      << "oec_depthwise = " << (n.oec_depthwise ? "true" : "false") << "\n"
      << "optimizer = " << (t.optimizer == OptimizerKind::adam ? "adam" : "sgd") << "\n"
      << "learning_rate = " << t.learning_rate << "\n"
      << "beta1 = " << t.beta1 << "\n"
      << "beta2 = " << t.beta2 << "\n"
      << "shuffle_seed = " << t.shuffle_seed << "\n";
  return out.str();
}

}  // namespace pointsift
