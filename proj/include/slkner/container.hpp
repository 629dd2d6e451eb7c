// SPDX-License-Identifier: Apache-2.0
/**
 * @file   container.hpp
 * @brief  Binary container for named tensors plus string metadata. Used for
 *         checkpoints and for precomputed per-character vectors.
 *
 * Layout (all integers and reals little-endian):
 *
 *   "SLKNERPS"                      8-byte magic
 *   u32 version                     currently 1
 *   u32 n_meta
 *     n_meta x { u32 key_len, key bytes, u64 value_len, value bytes }
 *   u32 n_tensors
 *     n_tensors x { u32 name_len, name bytes, u8 dtype (4 = f32, 8 = f64),
 *                   u32 rank, rank x u64 extent, product(extents) reals }
 *   "END!"                          4-byte trailer
 */
#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "slkner/error.hpp"
#include "slkner/tensor.hpp"

namespace slkner {

inline constexpr char kContainerMagic[8] = {'S', 'L', 'K', 'N', 'E', 'R', 'P', 'S'};
inline constexpr std::uint32_t kContainerVersion = 1;

struct ContainerTensor {
  Shape shape;
  std::uint8_t dtype = 8;
  std::vector<double> values;  // f32 payloads widen exactly

  template <typename Real>
  Tensor<Real> as() const {
    std::vector<Real> v(values.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<Real>(values[i]);
    return Tensor<Real>(shape, std::move(v));
  }
};

struct Container {
  std::map<std::string, std::string> meta;
  std::vector<std::string> order;  // tensor insertion order
  std::map<std::string, ContainerTensor> tensors;

  template <typename Real>
  void put(const std::string& name, const Tensor<Real>& t) {
    static_assert(std::is_same_v<Real, float> || std::is_same_v<Real, double>);
    ContainerTensor ct;
    ct.shape = t.shape();
    ct.dtype = sizeof(Real);
    ct.values.assign(t.storage().begin(), t.storage().end());
    if (!tensors.count(name)) order.push_back(name);
    tensors[name] = std::move(ct);
  }

  bool has(const std::string& name) const { return tensors.count(name) > 0; }

  const ContainerTensor& get(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError("container has no tensor '" + name + "'");
    return it->second;
  }

  const std::string& meta_at(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw DataError("container has no metadata key '" + key + "'");
    return it->second;
  }
};

namespace detail {

template <typename T>
void put_le(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
  out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  unsigned char b[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof(T)))
    throw DataError("container truncated");
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

inline std::string get_bytes(std::istream& in, std::uint64_t n) {
  if (n > (std::uint64_t{1} << 40)) throw DataError("container field length implausible");
  std::string s(static_cast<std::size_t>(n), '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n)))
    throw DataError("container truncated");
  return s;
}

}  // namespace detail

inline void write_container(std::ostream& out, const Container& c) {
  out.write(kContainerMagic, sizeof kContainerMagic);
  detail::put_le<std::uint32_t>(out, kContainerVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.meta.size()));
  for (const auto& [k, v] : c.meta) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(k.size()));
    out.write(k.data(), static_cast<std::streamsize>(k.size()));
    detail::put_le<std::uint64_t>(out, v.size());
    out.write(v.data(), static_cast<std::streamsize>(v.size()));
  }
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.order.size()));
  for (const auto& name : c.order) {
    const auto& t = c.tensors.at(name);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_le<std::uint8_t>(out, t.dtype);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto e : t.shape) detail::put_le<std::uint64_t>(out, e);
    if (t.dtype == 4) {
      for (double v : t.values) detail::put_le<float>(out, static_cast<float>(v));
    } else {
      for (double v : t.values) detail::put_le<double>(out, v);
    }
  }
  out.write("END!", 4);
}

inline Container read_container(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kContainerMagic, 8) != 0)
    throw DataError("not a slkner container (bad magic)");
  const auto version = detail::get_le<std::uint32_t>(in);
  if (version != kContainerVersion)
    throw DataError("unsupported container version " + std::to_string(version));
  Container c;
  const auto n_meta = detail::get_le<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto key = detail::get_bytes(in, detail::get_le<std::uint32_t>(in));
    auto value = detail::get_bytes(in, detail::get_le<std::uint64_t>(in));
    c.meta.emplace(std::move(key), std::move(value));
  }
  const auto n_tensors = detail::get_le<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    auto name = detail::get_bytes(in, detail::get_le<std::uint32_t>(in));
    ContainerTensor t;
    t.dtype = detail::get_le<std::uint8_t>(in);
    if (t.dtype != 4 && t.dtype != 8)
      throw DataError("tensor '" + name + "' has unknown dtype " + std::to_string(t.dtype));
    const auto rank = detail::get_le<std::uint32_t>(in);
    std::uint64_t count = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const auto e = detail::get_le<std::uint64_t>(in);
      if (e == 0 || e > (std::uint64_t{1} << 34))
        throw DataError("tensor '" + name + "' has an invalid extent");
      t.shape.push_back(static_cast<std::size_t>(e));
      count *= e;
    }
    t.values.resize(static_cast<std::size_t>(count));
    for (auto& v : t.values)
      v = t.dtype == 4 ? static_cast<double>(detail::get_le<float>(in))
                       : detail::get_le<double>(in);
    c.order.push_back(name);
    c.tensors.emplace(std::move(name), std::move(t));
  }
  char trailer[4];
  if (!in.read(trailer, 4) || std::memcmp(trailer, "END!", 4) != 0)
    throw DataError("container truncated (missing trailer)");
  return c;
}

/// Writes to "<path>.tmp" and renames over `path`.
inline void save_container(const std::string& path, const Container& c) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp + "'");
    write_container(out, c);
    out.flush();
    if (!out) throw DataError("write failed for '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw DataError("cannot move checkpoint into place at '" + path + "'");
  }
}

inline Container load_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open container '" + path + "'");
  try {
    return read_container(in);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

}  // namespace slkner
