#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "scriptid/trainer.hpp"

namespace scriptid {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMetadata {
  std::vector<std::string> class_table;
  TrainConfig config;
  std::int64_t iteration = 0;
};

struct Checkpoint {
  ModelParams<float> params;
  std::optional<AdamState> adam;
  CheckpointMetadata meta;
};

/// Encodes the byte layout described in docs/checkpoint_format.md. Tensors are written
/// sorted by name, so equal states give equal bytes.
std::vector<std::uint8_t> serialize_checkpoint(const ModelParams<float>& params, const CheckpointMetadata& meta,
                                               const AdamState* adam = nullptr);

/// Decodes and validates. Distinct errors: BadMagic, UnsupportedVersion, IntegrityError
/// (truncation, CRC, malformed fields), MissingTensor, ShapeMismatch (including a class
/// count different from `expected_classes`).
Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes, std::optional<int> expected_classes = {});

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params,
                     const CheckpointMetadata& meta, const AdamState* adam = nullptr);

Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<int> expected_classes = {});

/// CRC-32 of a whole file. A checkpoint ends in its own CRC, so this is the same
/// residue constant for every intact checkpoint; compare the trailer to tell them apart.
std::uint32_t file_crc32(const std::filesystem::path& path);

}  // namespace scriptid
