#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ssrt/error.hpp"
#include "ssrt/nn/params.hpp"
#include "ssrt/nn/tensor.hpp"

namespace ssrt::nn {

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

/// Contents of a checkpoint file.
///
/// Layout (little-endian host order):
///   "SSRTCKPT" | u32 version | u32 scalar bytes | u64 config hash |
///   u64 metadata length | metadata bytes | u64 tensor count |
///   per tensor: u32 name length | name | u32 rank | u64 dims[rank] | raw values
template <class T>
struct Checkpoint {
  std::uint64_t config_hash = 0;
  std::string metadata;  // JSON text
  std::vector<std::pair<std::string, Tensor<T>>> tensors;

  const Tensor<T>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'S', 'S', 'R', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class U>
void put(std::ofstream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <class U>
U get(std::ifstream& is) {
  U v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!is) throw ValidationError("checkpoint truncated");
  return v;
}

}  // namespace detail

template <class T>
void write_checkpoint(const std::string& path, const Checkpoint<T>& ck) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeFailure("cannot open checkpoint for writing: " + path);
  os.write(detail::kCheckpointMagic, 8);
  detail::put<std::uint32_t>(os, detail::kCheckpointVersion);
  detail::put<std::uint32_t>(os, sizeof(T));
  detail::put<std::uint64_t>(os, ck.config_hash);
  detail::put<std::uint64_t>(os, ck.metadata.size());
  os.write(ck.metadata.data(), static_cast<std::streamsize>(ck.metadata.size()));
  detail::put<std::uint64_t>(os, ck.tensors.size());
  for (const auto& [name, t] : ck.tensors) {
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) detail::put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
  }
  if (!os) throw RuntimeFailure("failed writing checkpoint: " + path);
}

template <class T>
Checkpoint<T> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, detail::kCheckpointMagic, 8) != 0) throw ValidationError("not a checkpoint: " + path);
  if (detail::get<std::uint32_t>(is) != detail::kCheckpointVersion)
    throw ValidationError("unsupported checkpoint version");
  if (detail::get<std::uint32_t>(is) != sizeof(T)) throw ValidationError("checkpoint scalar type mismatch");
  Checkpoint<T> ck;
  ck.config_hash = detail::get<std::uint64_t>(is);
  ck.metadata.resize(detail::get<std::uint64_t>(is));
  is.read(ck.metadata.data(), static_cast<std::streamsize>(ck.metadata.size()));
  const auto count = detail::get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(detail::get<std::uint32_t>(is), '\0');
    is.read(name.data(), static_cast<std::streamsize>(name.size()));
    Shape shape(detail::get<std::uint32_t>(is));
    for (auto& d : shape) d = detail::get<std::uint64_t>(is);
    Tensor<T> t(shape);
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
    if (!is) throw ValidationError("checkpoint truncated in tensor " + name);
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ck;
}

/// Copies every parameter of `store` into `ck` under its own name.
template <class T>
void add_parameters(Checkpoint<T>& ck, const ParamStore<T>& store, const std::string& prefix = "") {
  for (const auto& p : store) ck.tensors.emplace_back(prefix + p->name, p->value);
}

/// Restores every parameter of `store` from `ck`; all names must be present with matching shapes.
template <class T>
void load_parameters(const Checkpoint<T>& ck, ParamStore<T>& store, const std::string& prefix = "") {
  for (auto& p : store) {
    const Tensor<T>* t = ck.find(prefix + p->name);
    if (!t) throw ValidationError("checkpoint is missing parameter " + p->name);
    if (t->shape() != p->value.shape())
      throw ValidationError("checkpoint shape mismatch for " + p->name + ": " + shape_string(t->shape()) +
                            " vs " + shape_string(p->value.shape()));
    p->value = *t;
  }
}

}  // namespace ssrt::nn
