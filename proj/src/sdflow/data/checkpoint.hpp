// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

// Checkpoint container:
//
//   SDFLOW-CKPT\n
//   version <v>\n
//   config <byte count>\n<key=value lines>
//   arrays <count>\n
//   array <name> <rank> <d0> ... <dn>\n<little-endian float32 payload>   (repeated)
//   crc32 <8 hex digits>\n            (over every preceding byte)

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sdflow/autodiff/tensor.hpp"
#include "sdflow/data/config.hpp"

namespace sdflow::data {

inline constexpr const char* kCheckpointMagic = "SDFLOW-CKPT";
inline constexpr int kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  ad::Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  KeyValueConfig config;
  std::vector<NamedArray> arrays;

  void add(std::string name, ad::Shape shape, std::vector<float> values);
  void add(const std::string& name, const ad::Tensor<float>& t);
  bool has(const std::string& name) const;
  const NamedArray& get(const std::string& name) const;
  // Copies a stored array into an existing tensor of the same shape.
  void restore(const std::string& name, ad::Tensor<float>& t) const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

std::uint32_t crc32_of(const void* data, std::size_t n);
std::uint32_t file_crc32(const std::string& path);
std::string hex32(std::uint32_t v);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

}  // namespace sdflow::data
