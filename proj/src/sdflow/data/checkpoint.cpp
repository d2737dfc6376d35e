// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#include "sdflow/data/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sdflow/common/error.hpp"

namespace sdflow::data {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

void Checkpoint::add(std::string name, ad::Shape shape, std::vector<float> values) {
  if (name.empty() || name.find_first_of(" \n") != std::string::npos) {
    throw ParameterError("invalid array name '" + name + "'");
  }
  if (has(name)) throw ParameterError("duplicate array name '" + name + "'");
  if (ad::numel_of(shape) != values.size()) throw DimensionError("array '" + name + "' shape/value mismatch");
  arrays.push_back({std::move(name), std::move(shape), std::move(values)});
}

void Checkpoint::add(const std::string& name, const ad::Tensor<float>& t) { add(name, t.shape(), t.values()); }

bool Checkpoint::has(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return true;
  }
  return false;
}

const NamedArray& Checkpoint::get(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return a;
  }
  throw LoadError("checkpoint has no array '" + name + "'");
}

void Checkpoint::restore(const std::string& name, ad::Tensor<float>& t) const {
  const auto& a = get(name);
  if (a.shape != t.shape()) {
    throw LoadError("array '" + name + "' has shape " + ad::shape_str(a.shape) + ", expected " +
                    ad::shape_str(t.shape()));
  }
  std::copy(a.values.begin(), a.values.end(), t.data().begin());
}

std::uint32_t crc32_of(const void* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  const auto* p = static_cast<const Bytef*>(data);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof(buf), "%08x", v);
  return buf;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out;
  out += kCheckpointMagic;
  out += "\nversion " + std::to_string(kCheckpointVersion) + "\n";
  const std::string cfg = ckpt.config.to_text();
  out += "config " + std::to_string(cfg.size()) + "\n" + cfg;
  out += "arrays " + std::to_string(ckpt.arrays.size()) + "\n";
  for (const auto& a : ckpt.arrays) {
    out += "array " + a.name + " " + std::to_string(a.shape.size());
    for (auto d : a.shape) out += " " + std::to_string(d);
    out += "\n";
    out.append(reinterpret_cast<const char*>(a.values.data()), a.values.size() * sizeof(float));
  }
  out += "crc32 " + hex32(crc32_of(out.data(), out.size())) + "\n";
  return out;
}

namespace {

class Reader {
 public:
  Reader(const std::string& bytes, std::string origin) : b_(bytes), origin_(std::move(origin)) {}

  std::string line() {
    const auto nl = b_.find('\n', pos_);
    if (nl == std::string::npos) fail("truncated header");
    std::string s = b_.substr(pos_, nl - pos_);
    pos_ = nl + 1;
    return s;
  }
  std::string take(std::size_t n) {
    if (b_.size() - pos_ < n) fail("truncated payload");
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }
  [[noreturn]] void fail(const std::string& what) const { throw LoadError(origin_ + ": " + what); }

 private:
  const std::string& b_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::size_t to_size(const std::string& s, const Reader& r) {
  std::size_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) r.fail("bad integer '" + s + "'");
  return v;
}

}  // namespace

Checkpoint parse_checkpoint(const std::string& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  const std::size_t magic_len = std::strlen(kCheckpointMagic);
  if (bytes.size() < magic_len + 1 || bytes.compare(0, magic_len, kCheckpointMagic) != 0 ||
      bytes[magic_len] != '\n') {
    r.fail("bad magic (not a checkpoint)");
  }
  r.line();
  auto v = words(r.line());
  if (v.size() != 2 || v[0] != "version") r.fail("missing version line");
  if (v[1] != std::to_string(kCheckpointVersion)) {
    r.fail("unsupported checkpoint version " + v[1] + " (this build reads " + std::to_string(kCheckpointVersion) +
           ")");
  }
  // Verify integrity before interpreting the payload.
  const auto tail = bytes.rfind("crc32 ");
  if (tail == std::string::npos || bytes.size() - tail != 6 + 8 + 1) r.fail("missing or truncated checksum");
  const std::string stored = bytes.substr(tail + 6, 8);
  if (stored != hex32(crc32_of(bytes.data(), tail))) r.fail("checksum mismatch (file corrupted)");

  Checkpoint ckpt;
  auto c = words(r.line());
  if (c.size() != 2 || c[0] != "config") r.fail("missing config block");
  ckpt.config = KeyValueConfig::parse(r.take(to_size(c[1], r)));
  auto a = words(r.line());
  if (a.size() != 2 || a[0] != "arrays") r.fail("missing array count");
  const std::size_t count = to_size(a[1], r);
  for (std::size_t i = 0; i < count; ++i) {
    auto h = words(r.line());
    if (h.size() < 3 || h[0] != "array") r.fail("bad array header");
    const std::size_t rank = to_size(h[2], r);
    if (h.size() != 3 + rank) r.fail("array '" + h[1] + "' rank/shape mismatch");
    ad::Shape shape(rank);
    for (std::size_t k = 0; k < rank; ++k) shape[k] = to_size(h[3 + k], r);
    const std::size_t n = ad::numel_of(shape);
    const std::string payload = r.take(n * sizeof(float));
    std::vector<float> vals(n);
    std::memcpy(vals.data(), payload.data(), payload.size());
    ckpt.arrays.push_back({h[1], std::move(shape), std::move(vals)});
  }
  if (r.pos() != tail) r.fail("unexpected bytes before checksum");
  return ckpt;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) { write_file(path, serialize_checkpoint(ckpt)); }

Checkpoint load_checkpoint(const std::string& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const IoError& e) {
    throw LoadError(e.what());
  }
  return parse_checkpoint(bytes, path);
}

std::uint32_t file_crc32(const std::string& path) {
  const std::string bytes = read_file(path);
  return crc32_of(bytes.data(), bytes.size());
}

}  // namespace sdflow::data
