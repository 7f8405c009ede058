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

// Binary parameter checkpoints.
//
// Layout (all integers and floats little-endian):
//   "PSIFT1"
//   per parameter, sorted by name:
//     u32 name length, name bytes, u32 rank, u64 extent * rank,
//     f64 value * product(extents)   (row-major)

#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pointsift/error.hpp"
#include "pointsift/nn.hpp"

namespace pointsift {

inline constexpr char kCheckpointMagic[] = "PSIFT1";

namespace checkpoint_detail {

template <class T>
void put_le(std::string& out, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& data) : data_(data) {}

  template <class T>
  T get(const char* what) {
    if (pos_ + sizeof(T) > data_.size())
      throw CheckpointError(CheckpointError::Code::truncated, std::string("checkpoint truncated reading ") + what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }

  std::string bytes(std::size_t n, const char* what) {
    if (pos_ + n > data_.size())
      throw CheckpointError(CheckpointError::Code::truncated, std::string("checkpoint truncated reading ") + what);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  const std::string& data_;
  std::size_t pos_ = 0;
};

}  // namespace checkpoint_detail

inline std::string encode_checkpoint(NetworkParams& net) {
  using namespace checkpoint_detail;
  std::vector<Parameter*> params = net.parameters();
  std::sort(params.begin(), params.end(), [](const Parameter* a, const Parameter* b) { return a->name < b->name; });
  std::string out(kCheckpointMagic, 6);
  for (const Parameter* p : params) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    out += p->name;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p->value.rank()));
    for (auto e : p->value.shape) put_le<std::uint64_t>(out, e);
    for (double v : p->value.data) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

/// Parameter values keyed by name, as stored in a checkpoint.
inline std::map<std::string, Tensor> decode_checkpoint(const std::string& data) {
  using namespace checkpoint_detail;
  if (data.size() < 6 || data.compare(0, 6, kCheckpointMagic) != 0)
    throw CheckpointError(CheckpointError::Code::bad_magic, "not a checkpoint (missing PSIFT1 magic)");
  Reader r(data);
  r.bytes(6, "magic");
  std::map<std::string, Tensor> out;
  while (!r.done()) {
    const auto name_len = r.get<std::uint32_t>("name length");
    std::string name = r.bytes(name_len, "name");
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank > 8) throw CheckpointError(CheckpointError::Code::shape_mismatch, "implausible rank for '" + name + "'");
    Shape shape(rank);
    std::uint64_t count = 1;
    for (auto& e : shape) {
      e = static_cast<std::size_t>(r.get<std::uint64_t>("extent"));
      count *= e;
      if (count > (std::uint64_t{1} << 34))
        throw CheckpointError(CheckpointError::Code::shape_mismatch, "implausible size for '" + name + "'");
    }
    Tensor t(shape);
    for (auto& v : t.data) v = std::bit_cast<double>(r.get<std::uint64_t>("values"));
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

inline void save_checkpoint(NetworkParams& net, const std::string& path) {
  const std::string bytes = encode_checkpoint(net);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(CheckpointError::Code::io, "cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointError::Code::io, "write failed for '" + path + "'");
}

/// Loads parameter values into a network built from `config`. Every
/// parameter must be present with exactly the configured shape.
inline NetworkParams load_checkpoint(const std::string& path, const NetworkConfig& config) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Code::io, "cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  auto stored = decode_checkpoint(buf.str());
  NetworkParams net = make_network(config);
  net.for_each_parameter([&](Parameter& p) {
    auto it = stored.find(p.name);
    if (it == stored.end())
      throw CheckpointError(CheckpointError::Code::missing_parameter, "checkpoint lacks parameter '" + p.name + "'");
    if (it->second.shape != p.value.shape)
      throw CheckpointError(CheckpointError::Code::shape_mismatch,
                            "parameter '" + p.name + "' has shape " + ad::shape_string(it->second.shape) +
                                ", config expects " + ad::shape_string(p.value.shape));
    p.value = std::move(it->second);
    p.grad = Tensor(p.value.shape);
    stored.erase(it);
  });
  if (!stored.empty())
    throw CheckpointError(CheckpointError::Code::shape_mismatch,
                          "checkpoint has parameter '" + stored.begin()->first + "' unknown to the config");
  return net;
}

}  // namespace pointsift
