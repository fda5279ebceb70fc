#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "clipforge/common.hpp"
#include "clipforge/layers.hpp"
#include "clipforge/tensor.hpp"

namespace clipforge {

// Checkpoint container: an ordered map of named tensors.
using TensorMap = std::map<std::string, Tensor>;

inline constexpr char kCheckpointMagic[4] = {'C', 'L', 'P', 'F'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout: magic "CLPF", u32 version, u32 tensor count, then per tensor:
// u32 name length + UTF-8 name, u32 rank, u32 dims, f64 data. All integers
// and floats little-endian.
inline void save_checkpoint(const std::string& path, const TensorMap& tensors) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), strformat("cannot open checkpoint for writing: %s", path.c_str()));
  os.write(kCheckpointMagic, 4);
  write_u32(os, kCheckpointVersion);
  write_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<std::uint32_t>(tensor.shape.size()));
    for (int d : tensor.shape) write_u32(os, static_cast<std::uint32_t>(d));
    for (double v : tensor.data) write_f64(os, v);
  }
  require(os.good(), strformat("write failure on checkpoint: %s", path.c_str()));
}

inline TensorMap load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is.good()) throw RuntimeError(strformat("cannot open checkpoint: %s", path.c_str()));
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw RuntimeError(strformat("%s is not a checkpoint file (bad magic)", path.c_str()));
  }
  const std::uint32_t version = read_u32(is, "checkpoint version");
  if (version != kCheckpointVersion) {
    throw RuntimeError(strformat("unsupported checkpoint version %u in %s", version, path.c_str()));
  }
  const std::uint32_t count = read_u32(is, "checkpoint tensor count");
  TensorMap tensors;
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint32_t name_len = read_u32(is, "tensor name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw RuntimeError(strformat("truncated tensor name in %s", path.c_str()));
    const std::uint32_t rank = read_u32(is, "tensor rank");
    Shape shape(rank);
    std::int64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape[d] = static_cast<int>(read_u32(is, "tensor dimension"));
      if (shape[d] < 1) throw RuntimeError(strformat("invalid dimension in %s", path.c_str()));
      numel *= shape[d];
    }
    std::vector<double> data(static_cast<std::size_t>(numel));
    for (double& v : data) v = read_f64(is, "tensor data");
    tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return tensors;
}

// Strict restore into live parameter refs: every ref must be present with a
// matching shape, and the file must not carry unknown tensors.
inline void restore_params(const TensorMap& tensors, const std::vector<ParamRef>& refs,
                           const std::string& context) {
  std::size_t used = 0;
  for (const ParamRef& ref : refs) {
    auto it = tensors.find(ref.name);
    if (it == tensors.end()) {
      throw RuntimeError(strformat("checkpoint missing tensor %s (%s)", ref.name.c_str(),
                                   context.c_str()));
    }
    if (it->second.shape != ref.tensor->shape) {
      throw RuntimeError(strformat("checkpoint tensor %s has shape %s, expected %s (%s)",
                                   ref.name.c_str(), shape_str(it->second.shape).c_str(),
                                   shape_str(ref.tensor->shape).c_str(), context.c_str()));
    }
    *ref.tensor = it->second;
    ++used;
  }
  if (used != tensors.size()) {
    for (const auto& [name, tensor] : tensors) {
      bool known = false;
      for (const ParamRef& ref : refs) {
        if (ref.name == name) {
          known = true;
          break;
        }
      }
      if (!known) {
        throw RuntimeError(strformat("checkpoint carries unknown tensor %s (%s)", name.c_str(),
                                     context.c_str()));
      }
    }
  }
}

}  // namespace clipforge
