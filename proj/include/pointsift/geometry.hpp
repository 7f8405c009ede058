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

// Exact spatial queries over point sets: a uniform-grid index, octant
// nearest-neighbor search, ball query, kNN, farthest point sampling and
// inverse-distance interpolation stencils.
//
// Every query is a pure function of an immutable index. Distance ties are
// broken by the lower point index, so results are deterministic and can be
// compared index-for-index against brute-force scans.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pointsift/error.hpp"

namespace pointsift {

using Vec3 = std::array<double, 3>;

inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

struct PointCloud {
  std::vector<Vec3> positions;
  std::vector<Vec3> colors;  // empty, or one RGB triple in [0,1] per point
  std::vector<int> labels;   // empty, or one class id per point

  std::size_t size() const { return positions.size(); }
  bool has_colors() const { return !colors.empty(); }
  bool has_labels() const { return !labels.empty(); }

  /// Throws InvalidArgument if the cloud violates its invariants.
  void validate() const {
    if (positions.empty()) throw InvalidArgument("point cloud is empty");
    for (const auto& p : positions) {
      if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2]))
        throw InvalidArgument("point cloud has a non-finite coordinate");
    }
    if (!colors.empty() && colors.size() != positions.size())
      throw InvalidArgument("color count does not match point count");
    if (!labels.empty() && labels.size() != positions.size())
      throw InvalidArgument("label count does not match point count");
  }
};

using CellKey = std::array<std::int64_t, 3>;

struct CellKeyHash {
  std::size_t operator()(const CellKey& k) const noexcept {
    std::uint64_t h = 1469598103934665603ull;
    for (auto v : k) {
      h ^= static_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    }
    return static_cast<std::size_t>(h);
  }
};

/// Uniform grid over a set of positions. The index refers to the positions it
/// was built from; they must outlive it and stay unchanged.
class SpatialIndex {
 public:
  SpatialIndex(std::span<const Vec3> positions, double cell_size)
      : positions_(positions), cell_size_(cell_size) {
    if (!(cell_size > 0.0) || !std::isfinite(cell_size))
      throw InvalidArgument("cell_size must be a positive finite number");
    if (positions.empty()) throw InvalidArgument("cannot index an empty point set");
    lo_.fill(std::numeric_limits<std::int64_t>::max());
    hi_.fill(std::numeric_limits<std::int64_t>::min());
    for (std::size_t i = 0; i < positions.size(); ++i) {
      const auto& p = positions[i];
      if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2]))
        throw InvalidArgument("point " + std::to_string(i) + " has a non-finite coordinate");
      const CellKey key = cell_of(p);
      for (int a = 0; a < 3; ++a) {
        lo_[a] = std::min(lo_[a], key[a]);
        hi_[a] = std::max(hi_[a], key[a]);
      }
      cells_[key].push_back(static_cast<std::uint32_t>(i));
    }
  }

  double cell_size() const { return cell_size_; }
  std::span<const Vec3> positions() const { return positions_; }
  std::size_t size() const { return positions_.size(); }
  std::size_t occupied_cells() const { return cells_.size(); }

  CellKey cell_of(const Vec3& p) const {
    CellKey key{};
    for (int a = 0; a < 3; ++a) {
      const double c = std::floor(p[a] / cell_size_);
      if (!(std::fabs(c) < 4.0e15)) throw InvalidArgument("coordinate too large for cell_size");
      key[a] = static_cast<std::int64_t>(c);
    }
    return key;
  }

  /// Points stored in one cell, in ascending index order; nullptr if unoccupied.
  const std::vector<std::uint32_t>* cell(const CellKey& key) const {
    auto it = cells_.find(key);
    return it == cells_.end() ? nullptr : &it->second;
  }

  /// Calls `visit(index)` for every point in cells overlapping the axis-aligned
  /// box of half-width `radius` around `center`. Visit order is unspecified.
  /// Returns the number of occupied cells inspected.
  template <class Visit>
  std::size_t for_each_candidate(const Vec3& center, double radius, Visit&& visit) const {
    CellKey lo{}, hi{};
    double box_cells = 1.0;
    for (int a = 0; a < 3; ++a) {
      const double l = std::floor((center[a] - radius) / cell_size_);
      const double h = std::floor((center[a] + radius) / cell_size_);
      lo[a] = std::max(lo_[a], static_cast<std::int64_t>(std::max(l, -4.0e15)));
      hi[a] = std::min(hi_[a], static_cast<std::int64_t>(std::min(h, 4.0e15)));
      if (lo[a] > hi[a]) return 0;
      box_cells *= static_cast<double>(hi[a] - lo[a] + 1);
    }
    std::size_t inspected = 0;
    if (box_cells > static_cast<double>(cells_.size())) {
      for (const auto& [key, members] : cells_) {
        bool inside = true;
        for (int a = 0; a < 3; ++a) inside = inside && key[a] >= lo[a] && key[a] <= hi[a];
        if (!inside) continue;
        ++inspected;
        for (auto i : members) visit(i);
      }
      return inspected;
    }
    for (std::int64_t x = lo[0]; x <= hi[0]; ++x)
      for (std::int64_t y = lo[1]; y <= hi[1]; ++y)
        for (std::int64_t z = lo[2]; z <= hi[2]; ++z) {
          const auto* members = cell({x, y, z});
          if (members == nullptr) continue;
          ++inspected;
          for (auto i : *members) visit(i);
        }
    return inspected;
  }

  /// Largest distance any query inside the indexed bounding box can need.
  double extent_diagonal() const {
    double d2 = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double span = static_cast<double>(hi_[a] - lo_[a] + 1) * cell_size_;
      d2 += span * span;
    }
    return std::sqrt(d2);
  }

 private:
  std::span<const Vec3> positions_;
  double cell_size_;
  std::unordered_map<CellKey, std::vector<std::uint32_t>, CellKeyHash> cells_;
  CellKey lo_{}, hi_{};
};

inline SpatialIndex build_index(const PointCloud& cloud, double cell_size) {
  if (cloud.positions.empty()) throw InvalidArgument("cannot index an empty point cloud");
  return SpatialIndex(cloud.positions, cell_size);
}

// ---------------------------------------------------------------------------
// Octant search

/// Octant code of an offset: bit a is set iff component a is >= 0
/// (x = bit 0, y = bit 1, z = bit 2). A zero offset lands in octant 7.
inline int octant_of(const Vec3& offset) {
  return (offset[0] >= 0.0 ? 1 : 0) | (offset[1] >= 0.0 ? 2 : 0) | (offset[2] >= 0.0 ? 4 : 0);
}

struct OctantNeighborhood {
  std::array<std::uint32_t, 8> neighbor_indices{};
  std::array<bool, 8> self_duplicated{};

  friend bool operator==(const OctantNeighborhood&, const OctantNeighborhood&) = default;
};

/// Nearest in-radius neighbor of point `query` in each of the eight octants.
/// Octants with no candidate hold the query itself, flagged self_duplicated.
inline OctantNeighborhood s8n_search(const SpatialIndex& index, std::size_t query, double radius) {
  if (query >= index.size()) throw InvalidArgument("s8n_search: query index out of range");
  if (!(radius > 0.0)) throw InvalidArgument("s8n_search: radius must be positive");
  const auto pos = index.positions();
  const Vec3& q = pos[query];
  const double r2 = radius * radius;
  std::array<double, 8> best;
  best.fill(std::numeric_limits<double>::infinity());
  OctantNeighborhood out;
  out.neighbor_indices.fill(static_cast<std::uint32_t>(query));
  out.self_duplicated.fill(true);
  index.for_each_candidate(q, radius, [&](std::uint32_t j) {
    if (j == query) return;
    const Vec3& p = pos[j];
    const Vec3 offset{p[0] - q[0], p[1] - q[1], p[2] - q[2]};
    const double d2 = offset[0] * offset[0] + offset[1] * offset[1] + offset[2] * offset[2];
    if (d2 > r2) return;
    const int o = octant_of(offset);
    if (d2 < best[o] || (d2 == best[o] && j < out.neighbor_indices[o])) {
      best[o] = d2;
      out.neighbor_indices[o] = j;
      out.self_duplicated[o] = false;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Ball query and kNN

/// Result of a neighbor query. For ball queries `indices` is padded to max_k
/// by repeating indices[0]; found == 0 means nothing was found and
/// `indices` is empty.
struct NeighborList {
  std::vector<std::uint32_t> indices;
  std::size_t found = 0;

  bool empty() const { return found == 0; }
};

/// The max_k lowest-index points within `radius` of `center`.
inline NeighborList ball_query(const SpatialIndex& index, const Vec3& center, double radius,
                               std::size_t max_k) {
  if (!(radius > 0.0)) throw InvalidArgument("ball_query: radius must be positive");
  if (max_k == 0) throw InvalidArgument("ball_query: max_k must be at least 1");
  const auto pos = index.positions();
  const double r2 = radius * radius;
  NeighborList out;
  index.for_each_candidate(center, radius, [&](std::uint32_t j) {
    if (squared_distance(pos[j], center) <= r2) out.indices.push_back(j);
  });
  if (out.indices.empty()) return out;
  if (out.indices.size() > max_k) {
    std::nth_element(out.indices.begin(), out.indices.begin() + static_cast<std::ptrdiff_t>(max_k),
                     out.indices.end());
    out.indices.resize(max_k);
  }
  std::sort(out.indices.begin(), out.indices.end());
  out.found = out.indices.size();
  out.indices.resize(max_k, out.indices.front());
  return out;
}

/// The k nearest points to `query`, ascending distance, ties by lower index.
inline NeighborList knn(const SpatialIndex& index, const Vec3& query, std::size_t k) {
  if (k == 0) throw InvalidArgument("knn: k must be at least 1");
  if (k > index.size()) throw InvalidArgument("knn: k exceeds the number of points");
  const auto pos = index.positions();
  std::vector<std::pair<double, std::uint32_t>> found;
  double radius = index.cell_size();
  for (;;) {
    found.clear();
    const double r2 = radius * radius;
    index.for_each_candidate(query, radius, [&](std::uint32_t j) {
      const double d2 = squared_distance(pos[j], query);
      if (d2 <= r2) found.emplace_back(d2, j);
    });
    if (found.size() >= k) break;
    if (radius > 4.0 * index.extent_diagonal() + 4.0 * std::fabs(query[0]) +
                     4.0 * std::fabs(query[1]) + 4.0 * std::fabs(query[2])) {
      // Query far outside the data: fall back to a full scan.
      found.clear();
      for (std::uint32_t j = 0; j < pos.size(); ++j)
        found.emplace_back(squared_distance(pos[j], query), j);
      break;
    }
    radius *= 2.0;
  }
  std::partial_sort(found.begin(), found.begin() + static_cast<std::ptrdiff_t>(k), found.end());
  NeighborList out;
  out.indices.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.indices.push_back(found[i].second);
  out.found = k;
  return out;
}

// ---------------------------------------------------------------------------
// Farthest point sampling

/// Index of the lexicographically smallest (x, y, z); ties by lower index.
inline std::uint32_t canonical_start(std::span<const Vec3> positions) {
  if (positions.empty()) throw InvalidArgument("canonical_start: empty point set");
  std::uint32_t best = 0;
  for (std::uint32_t i = 1; i < positions.size(); ++i)
    if (positions[i] < positions[best]) best = i;
  return best;
}

/// Greedy farthest point sampling starting from `start`. Output is in
/// selection order; ties in the min-distance criterion go to the lower index.
inline std::vector<std::uint32_t> farthest_point_sampling_from(std::span<const Vec3> positions,
                                                               std::size_t m, std::uint32_t start) {
  const std::size_t n = positions.size();
  if (m == 0) throw InvalidArgument("farthest_point_sampling: m must be at least 1");
  if (m > n) throw InvalidArgument("farthest_point_sampling: m exceeds the number of points");
  if (start >= n) throw InvalidArgument("farthest_point_sampling: start index out of range");
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::vector<std::uint32_t> picked;
  picked.reserve(m);
  std::uint32_t current = start;
  for (std::size_t s = 0; s < m; ++s) {
    picked.push_back(current);
    min_d2[current] = -1.0;  // taken
    const Vec3& c = positions[current];
    std::uint32_t next = 0;
    double next_d2 = -1.0;
    for (std::uint32_t i = 0; i < n; ++i) {
      if (min_d2[i] < 0.0) continue;
      const double d2 = std::min(min_d2[i], squared_distance(positions[i], c));
      min_d2[i] = d2;
      if (d2 > next_d2) {
        next_d2 = d2;
        next = i;
      }
    }
    current = next;
  }
  return picked;
}

/// FPS whose first centroid is a seeded uniform draw.
inline std::vector<std::uint32_t> farthest_point_sampling(std::span<const Vec3> positions,
                                                          std::size_t m, std::uint64_t seed) {
  if (positions.empty()) throw InvalidArgument("farthest_point_sampling: empty point set");
  std::mt19937_64 rng(seed);
  const auto start = static_cast<std::uint32_t>(rng() % positions.size());
  return farthest_point_sampling_from(positions, m, start);
}

// ---------------------------------------------------------------------------
// Interpolation stencils

struct InterpolationStencil {
  std::vector<std::uint32_t> indices;
  std::vector<double> weights;  // sums to 1
};

/// Inverse squared-distance weights over the k nearest known points
/// (all of them when fewer than k exist).
inline InterpolationStencil interpolation_weights(const SpatialIndex& known, const Vec3& query,
                                                  std::size_t k = 3, double epsilon = 1e-8) {
  const std::size_t take = std::min(k, known.size());
  InterpolationStencil out;
  out.indices = knn(known, query, take).indices;
  out.weights.resize(take);
  double total = 0.0;
  for (std::size_t i = 0; i < take; ++i) {
    out.weights[i] = 1.0 / (squared_distance(known.positions()[out.indices[i]], query) + epsilon);
    total += out.weights[i];
  }
  for (auto& w : out.weights) w /= total;
  return out;
}

}  // namespace pointsift
