#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "lmaml/maml.hpp"
#include "lmaml/text.hpp"

namespace lmaml {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class VersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class ChecksumError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout (little endian):
///   "LMAMLCK\0" | u32 version | u32 n, n bytes config text
///   | u32 tensor count | per tensor: u32 name length, name, u32 layer,
///     u32 ndim, u64 dims[ndim], f64 data[numel]
///   | u32 CRC-32 of every preceding byte
std::vector<std::uint8_t> encode_checkpoint(const MetaModel& model);
MetaModel decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const MetaModel& model, const std::filesystem::path& path);
MetaModel load_checkpoint(const std::filesystem::path& path);

/// Canonical text of the architecture, task and optimizer settings.
KeyValueText model_config_text(const MetaModel& model);

}  // namespace lmaml
