#pragma once

#include <string>

#include "cpnorm/model.hpp"

namespace cpnorm {

inline constexpr int checkpoint_format_version = 1;

struct Checkpoint {
  Model model;
  /// Free-form JSON object stored alongside the parameters.
  std::string metadata_json;
};

/// Magic, little-endian u64 header length, JSON header (layer specs and
/// per-tensor byte offsets), then a little-endian float64 payload. Written
/// to a temporary file and renamed, so an existing file is only replaced by
/// a complete one.
void save_checkpoint(const std::string& path, const Model& model,
                     const std::string& metadata_json = "{}");

/// Throws std::runtime_error on a malformed file.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace cpnorm
