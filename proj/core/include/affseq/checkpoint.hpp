// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "affseq/dataset.hpp"
#include "affseq/model.hpp"

namespace affseq {

class RmsProp;

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Model parameters ("param:<name>"), optimizer caches ("opt:<name>") and
/// normalization statistics ("norm:<modality>:mean|std"), plus a flat
/// key=value echo of the model configuration and training progress.
struct Checkpoint {
  std::map<std::string, std::string> config;
  std::vector<NamedTensor> tensors;

  ModelConfig model_config() const { return ModelConfig::from_keys(config); }
  std::size_t epoch() const;
  std::optional<double> best_score() const;
  const Tensor* find(const std::string& name) const;
};

/// Layout (all integers little-endian):
///   "AFCK" | u32 version | u32 config length | config (UTF-8 key=value lines)
///   | u32 tensor count | per tensor: u16 name length, name, u8 rank,
///   u32 dims[rank], float32 payload, u32 CRC32(payload)
///   | u32 CRC32 of everything before it.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Throws IoError, FormatError (magic, version, layout), TruncationError or
/// ChecksumError.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// As above, then ConfigError if the stored model.variant or model.cell
/// differs from `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

Checkpoint capture_checkpoint(Model& model, const RmsProp* optimizer,
                              const NormalizationStats& stats, std::size_t epoch,
                              std::optional<double> best_score);

/// Copies tensors back into a model built from ckpt.model_config(). Throws
/// FormatError when a parameter is missing or its shape disagrees.
void restore_model(const Checkpoint& ckpt, Model& model);
void restore_optimizer(const Checkpoint& ckpt, RmsProp& optimizer);
NormalizationStats restore_stats(const Checkpoint& ckpt);

}  // namespace affseq
