#ifndef M2R_CHECKPOINT_HPP
#define M2R_CHECKPOINT_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "m2r/errors.hpp"
#include "m2r/tensor.hpp"

namespace m2r {

// Versioned binary checkpoint:
//   magic "M2RW", format version u32, layer count u32,
//   per layer: kind tag (u32 length + bytes), shape (u32 ndim + u64 extents),
//   little-endian 64-bit floats.
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const char* what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    throw parse_error(std::string("checkpoint: truncated while reading ") + what);
  return v;
}

}  // namespace detail

struct NamedTensor {
  std::string kind;
  Tensor tensor;
};

inline void write_checkpoint(std::ostream& out, const std::vector<NamedTensor>& entries) {
  out.write("M2RW", 4);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint32_t>(out, std::uint32_t(entries.size()));
  for (const auto& e : entries) {
    detail::put<std::uint32_t>(out, std::uint32_t(e.kind.size()));
    out.write(e.kind.data(), std::streamsize(e.kind.size()));
    detail::put<std::uint32_t>(out, std::uint32_t(e.tensor.shape.size()));
    for (size_t d : e.tensor.shape) detail::put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(e.tensor.v.data()),
              std::streamsize(e.tensor.v.size() * sizeof(double)));
  }
}

inline std::vector<NamedTensor> read_checkpoint(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "M2RW", 4) != 0)
    throw parse_error("checkpoint: bad magic");
  const auto version = detail::get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion)
    throw version_error("checkpoint: unsupported version " + std::to_string(version));
  const auto count = detail::get<std::uint32_t>(in, "layer count");
  std::vector<NamedTensor> entries(count);
  for (auto& e : entries) {
    const auto klen = detail::get<std::uint32_t>(in, "kind length");
    e.kind.resize(klen);
    if (!in.read(e.kind.data(), klen))
      throw parse_error("checkpoint: truncated kind tag");
    const auto ndim = detail::get<std::uint32_t>(in, "ndim");
    e.tensor.shape.resize(ndim);
    for (auto& d : e.tensor.shape)
      d = size_t(detail::get<std::uint64_t>(in, "extent"));
    e.tensor.v.resize(Tensor::count(e.tensor.shape));
    if (!in.read(reinterpret_cast<char*>(e.tensor.v.data()),
                 std::streamsize(e.tensor.v.size() * sizeof(double))))
      throw parse_error("checkpoint: truncated tensor data");
  }
  return entries;
}

inline void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open checkpoint for writing: " + path);
  write_checkpoint(out, entries);
}

inline std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open checkpoint: " + path);
  return read_checkpoint(in);
}

// Snapshot / restore helpers for anything exposing params().
inline std::vector<NamedTensor> snapshot_params(const std::string& kind,
                                                std::vector<Tensor*> params) {
  std::vector<NamedTensor> out;
  for (size_t i = 0; i < params.size(); ++i)
    out.push_back({kind + "." + std::to_string(i), *params[i]});
  return out;
}

inline void restore_params(const std::vector<NamedTensor>& entries,
                           std::vector<Tensor*> params) {
  if (entries.size() != params.size())
    throw parse_error("checkpoint: entry count " + std::to_string(entries.size()) +
                      " != parameter count " + std::to_string(params.size()));
  for (size_t i = 0; i < params.size(); ++i) {
    if (entries[i].tensor.shape != params[i]->shape)
      throw shape_error("checkpoint: entry " + std::to_string(i) + " shape " +
                        entries[i].tensor.shape_str() + " != model " +
                        params[i]->shape_str());
    params[i]->v = entries[i].tensor.v;
  }
}

}  // namespace m2r

#endif  // M2R_CHECKPOINT_HPP
