#pragma once

#include <map>
#include <string>

#include "bafdet/tensor.hpp"

namespace bafdet {

/// Versioned binary container of named f64 tensors plus string metadata.
/// Saving then loading reproduces every value bit-exactly.
struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::map<std::string, Tensor> tensors;

  long meta_long(const std::string& key, long fallback) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);

/// Throws std::runtime_error on bad magic, unsupported version, or truncation.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace bafdet
