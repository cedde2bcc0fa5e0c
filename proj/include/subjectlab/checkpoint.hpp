#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "subjectlab/tensor.hpp"

namespace subjectlab {

// On-disk layout:
//
//   subjectlab-checkpoint 1
//   meta <key> <value-to-end-of-line>      (zero or more, sorted by key)
//   tensor <name> <byte-offset> <float-count> <d0>x<d1>...
//   ...
//   end
//   <raw little-endian float32 blob, tensors in manifest order>
//
// Byte offsets are relative to the first byte after the "end" line.
struct Checkpoint {
  std::map<std::string, std::string> meta;
  ParameterSet params;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// Throws IoError("checkpoint not found: ...") when the file is missing.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace subjectlab
