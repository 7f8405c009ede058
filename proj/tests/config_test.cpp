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

#include <gtest/gtest.h>

#include "pointsift/config.hpp"

namespace pointsift {
namespace {

bool same(const ExperimentConfig& a, const ExperimentConfig& b) { return format_config(a) == format_config(b); }

TEST(Config, DefaultsDescribeDeskScaleNetwork) {
  const NetworkConfig c;
  EXPECT_EQ(c.input_points, 1024u);
  EXPECT_EQ(c.stage_sizes, (std::vector<std::size_t>{256, 64, 16}));
  EXPECT_EQ(c.levels(), 4u);
  EXPECT_EQ(c.level_points(0), 1024u);
  EXPECT_EQ(c.level_points(3), 16u);
  EXPECT_EQ(c.input_dim(), 3u);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, FormatParsesBackToEqualConfig) {
  ExperimentConfig cfg;
  cfg.network.stage_sizes = {128, 32};
  cfg.network.channel_widths = {8, 16, 24};
  cfg.network.oe_radii = {0.15, 0.3, 0.6};
  cfg.network.sa_radii = {0.1 + 0.2, 0.7};
  cfg.network.down_pointsift = {{8, 8}, {}};
  cfg.network.up_pointsift = {{}, {16}};
  cfg.network.bottom_pointsift = {24};
  cfg.network.block_kind = BlockKind::ball_query;
  cfg.network.canonical_fps = false;
  cfg.train.optimizer = OptimizerKind::sgd;
  cfg.train.learning_rate = 0.012345678901234567;
  const ExperimentConfig back = parse_config(format_config(cfg));
  EXPECT_TRUE(same(cfg, back));
  EXPECT_EQ(back.network.sa_radii, cfg.network.sa_radii);
  EXPECT_EQ(back.network.down_pointsift, cfg.network.down_pointsift);
  EXPECT_EQ(back.train.learning_rate, cfg.train.learning_rate);
}

TEST(Config, CommentsAndWhitespaceAreIgnored) {
  const auto cfg = parse_config("# comment\n\n  max_k = 12   # trailing\nblock_kind=ball_query\n");
  EXPECT_EQ(cfg.network.max_k, 12u);
  EXPECT_EQ(cfg.network.block_kind, BlockKind::ball_query);
}

std::size_t error_line(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ParseError& e) {
    return e.line();
  }
  ADD_FAILURE() << "no ParseError for: " << text;
  return 999;
}

TEST(Config, ErrorsCarryLineNumbers) {
  EXPECT_EQ(error_line("max_k = 4\nbogus = 1\n"), 2u);
  EXPECT_EQ(error_line("\nmax_k = four\n"), 2u);
  EXPECT_EQ(error_line("max_k 4\n"), 1u);
  EXPECT_EQ(error_line("use_rgb = maybe\n"), 1u);
  EXPECT_EQ(error_line("block_kind = knn\n"), 1u);
  EXPECT_EQ(error_line("stage_sizes = 256, x\n"), 1u);
  // Cross-field violations are reported without a line.
  EXPECT_EQ(error_line("stage_sizes = 256, 64\n"), 0u);
}

TEST(Config, ValidationRejectsInconsistentShapes) {
  NetworkConfig c;
  c.channel_widths = {32, 64};
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = NetworkConfig{};
  c.stage_sizes = {256, 512, 16};
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = NetworkConfig{};
  c.sa_radii = {0.2, 0.0, 0.8};
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = NetworkConfig{};
  c.oec_depthwise = true;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = NetworkConfig{};
  c.down_pointsift = {{32, 0}, {}, {}};
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(Config, RelativeCoordinatesChangeInputWidth) {
  NetworkConfig c;
  c.relative_coords_only = true;
  EXPECT_EQ(c.input_dim(), 1u);
  c.use_rgb = true;
  EXPECT_EQ(c.input_dim(), 3u);
  c.relative_coords_only = false;
  EXPECT_EQ(c.input_dim(), 6u);
}

}  // namespace
}  // namespace pointsift
