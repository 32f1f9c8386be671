// SPDX-License-Identifier: Apache-2.0
//
// File layout: the 6 magic bytes "CHELA1", an 8-byte little-endian header
// length, a JSON manifest of that length, then the payload of raw
// little-endian float32 values. Manifest offsets are relative to the payload.
#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "chela/error.hpp"
#include "chela/layer.hpp"
#include "chela/optim.hpp"

namespace chela {

class CheckpointError : public Error {
 public:
  using Error::Error;
};
class BadMagicError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
/// Shapes, offsets or names in the manifest disagree with each other or with the model.
class ManifestError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class TruncatedPayloadError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

inline constexpr char kCheckpointMagic[] = "CHELA1";

struct Checkpoint {
  ModelParams<float> params;
  OptimState<float> optim;
  std::uint64_t rng_state = 0;
  std::uint64_t step = 0;
};

/// Written to a temporary sibling file, then renamed over `path`.
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

/// The parsed manifest, for inspection and tests.
nlohmann::json read_checkpoint_manifest(const std::string& path);

}  // namespace chela
