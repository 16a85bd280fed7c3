// Copyright 2026 The Matchmap Authors
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

#pragma once

#include <cstdint>
#include <fstream>
#include <type_traits>
#include <map>
#include <string>

#include "json.hpp"
#include "matchmap/config.hpp"
#include "matchmap/encoders.hpp"
#include "matchmap/optim.hpp"
#include "matchmap/tensor_io.hpp"

// Checkpoint file: magic "MMCK", u8 version, u32 length-prefixed JSON
// configuration document, then a u32-count-prefixed sequence of
// (u32 length-prefixed name, MMTF tensor) entries. Entries cover every
// parameter, every buffer, and optimizer velocities under "opt/<name>".
// The JSON document carries its own hash; an edited document fails to
// load.

namespace mm {

inline constexpr uint8_t kCheckpointVersion = 1;

struct CheckpointMeta {
  ModelConfig model;
  TrainConfig train;
  int64_t epoch = 0;
  ImageStats stats;
};

inline void to_json(nlohmann::json& j, const ImageStats& s) {
  j = {{"mean", {s.mean[0], s.mean[1], s.mean[2]}},
       {"stdev", {s.stdev[0], s.stdev[1], s.stdev[2]}}};
}

inline void from_json(const nlohmann::json& j, ImageStats& s) {
  for (int i = 0; i < 3; ++i) {
    s.mean[i] = j.at("mean").at(size_t(i)).get<double>();
    s.stdev[i] = j.at("stdev").at(size_t(i)).get<double>();
  }
}

inline void to_json(nlohmann::json& j, const CheckpointMeta& m) {
  j = {{"model", m.model},
       {"train", m.train},
       {"epoch", m.epoch},
       {"stats", m.stats}};
}

inline void from_json(const nlohmann::json& j, CheckpointMeta& m) {
  j.at("model").get_to(m.model);
  j.at("train").get_to(m.train);
  j.at("epoch").get_to(m.epoch);
  j.at("stats").get_to(m.stats);
}

namespace detail {

inline void put_u32ck(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

inline uint32_t get_u32ck(std::istream& is, const char* what) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  check(is.gcount() == 4, "checkpoint read: truncated ", what);
  return v;
}

inline void put_name(std::ostream& os, const std::string& name) {
  check(name.size() <= (1u << 16), "checkpoint write: name too long");
  put_u32ck(os, uint32_t(name.size()));
  os.write(name.data(), std::streamsize(name.size()));
}

inline std::string get_name(std::istream& is) {
  const uint32_t n = get_u32ck(is, "name length");
  check(n <= (1u << 16), "checkpoint read: unreasonable name length ", n);
  std::string s(n, '\0');
  is.read(s.data(), std::streamsize(n));
  check(is.gcount() == std::streamsize(n), "checkpoint read: truncated name");
  return s;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const ParamStore<T>& ps,
                     std::type_identity_t<const SgdState<T>*> opt = nullptr) {
  validate(meta.model);
  validate(meta.train);
  nlohmann::json doc = meta;
  doc["hash"] = config_hash(doc);

  std::ofstream os(path, std::ios::binary);
  check(bool(os), "checkpoint write: cannot open ", path);
  os.write("MMCK", 4);
  os.put(char(kCheckpointVersion));
  const std::string text = doc.dump();
  detail::put_u32ck(os, uint32_t(text.size()));
  os.write(text.data(), std::streamsize(text.size()));

  uint32_t count = uint32_t(ps.params().size() + ps.buffers().size());
  if (opt) count += uint32_t(opt->velocities().size());
  detail::put_u32ck(os, count);
  for (const auto& [name, p] : ps.params()) {
    detail::put_name(os, name);
    write_tensor(os, p.value);
  }
  for (const auto& [name, b] : ps.buffers()) {
    detail::put_name(os, name);
    write_tensor(os, b);
  }
  if (opt) {
    for (const auto& [name, v] : opt->velocities()) {
      detail::put_name(os, "opt/" + name);
      write_tensor(os, v);
    }
  }
  check(bool(os), "checkpoint write: stream failure on ", path);
}

// Rebuilds the parameter store from the stored config, then overwrites
// every parameter and buffer from the file. Optimizer velocities are
// restored when an optimizer is supplied; they are otherwise ignored.
template <typename T>
CheckpointMeta load_checkpoint(const std::string& path, ParamStore<T>& ps,
                               std::type_identity_t<SgdState<T>*> opt = nullptr) {
  std::ifstream is(path, std::ios::binary);
  check(bool(is), "checkpoint read: cannot open ", path);
  char magic[4] = {0, 0, 0, 0};
  is.read(magic, 4);
  check(is.gcount() == 4 && std::string(magic, 4) == "MMCK",
        "checkpoint read: bad magic in ", path);
  const int ver = is.get();
  check(ver != EOF, "checkpoint read: truncated version");
  check(ver == kCheckpointVersion, "checkpoint read: version ", ver,
        " unsupported, expected ", int(kCheckpointVersion));

  const uint32_t text_len = detail::get_u32ck(is, "config length");
  check(text_len <= (1u << 24), "checkpoint read: unreasonable config size");
  std::string text(text_len, '\0');
  is.read(text.data(), std::streamsize(text_len));
  check(is.gcount() == std::streamsize(text_len),
        "checkpoint read: truncated config");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail("checkpoint read: bad config JSON: ", e.what());
  }
  check(doc.contains("hash"), "checkpoint read: config hash missing");
  const uint64_t stored_hash = doc.at("hash").get<uint64_t>();
  doc.erase("hash");
  check(config_hash(doc) == stored_hash,
        "checkpoint read: config hash mismatch; file was altered");
  CheckpointMeta meta;
  try {
    doc.get_to(meta);
  } catch (const nlohmann::json::exception& e) {
    fail("checkpoint read: bad config fields: ", e.what());
  }
  validate(meta.model);
  validate(meta.train);

  check(ps.params().empty() && ps.buffers().empty(),
        "checkpoint read: parameter store must start empty");
  init_params(meta.model, ps, meta.train.seed);

  const uint32_t count = detail::get_u32ck(is, "entry count");
  std::map<std::string, Tensor<T>> entries;
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = detail::get_name(is);
    Tensor<T> t = read_tensor<T>(is);
    check(!entries.count(name), "checkpoint read: duplicate entry '", name,
          "'");
    entries.emplace(std::move(name), std::move(t));
  }
  is.peek();
  check(is.eof(), "checkpoint read: trailing bytes in ", path);

  for (auto& [name, p] : ps.params()) {
    auto it = entries.find(name);
    check(it != entries.end(), "checkpoint read: missing tensor '", name,
          "'");
    check(it->second.shape() == p.value.shape(),
          "checkpoint read: shape mismatch for '", name, "': stored ",
          shape_str(it->second.shape()), ", expected ",
          shape_str(p.value.shape()));
    p.value = std::move(it->second);
    entries.erase(it);
  }
  for (auto& [name, b] : ps.buffers()) {
    auto it = entries.find(name);
    check(it != entries.end(), "checkpoint read: missing buffer '", name,
          "'");
    check(it->second.shape() == b.shape(),
          "checkpoint read: shape mismatch for '", name, "'");
    b = std::move(it->second);
    entries.erase(it);
  }
  for (auto& [name, t] : entries) {
    check(name.rfind("opt/", 0) == 0, "checkpoint read: unexpected tensor '",
          name, "'");
    const std::string pname = name.substr(4);
    check(ps.has(pname), "checkpoint read: velocity for unknown parameter '",
          pname, "'");
    if (opt) opt->velocity(pname, t.shape()) = std::move(t);
  }
  return meta;
}

}  // namespace mm
