// Copyright (c) 2026 The shira-engine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "shira/adapter.hpp"
#include "shira/mask.hpp"
#include "shira/nn.hpp"

namespace shira {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::uint32_t kFormatVersion = 1;

enum class AdapterKind : std::uint8_t { sparse = 0, lora = 1 };

/// Bytes of a sparse layer payload after the 12-byte layer header.
constexpr std::size_t sparse_payload_bytes(std::size_t nnz) noexcept {
  return 8 + 8 + 1 + 8 * nnz + 8 * nnz;
}
inline constexpr std::size_t kAdapterHeaderBytes = 4 + 4 + 1 + 4;
inline constexpr std::size_t kLayerHeaderBytes = 12;

// Encoders validate their input; decoders throw FormatError with a distinct
// kind per failure. Trailing JSON meta is optional on read.

Bytes encode_adapter(const ModelAdapter& adapter);
ModelAdapter decode_adapter(std::span<const std::uint8_t> bytes);

Bytes encode_checkpoint(const Mlp& model);
Mlp decode_checkpoint(std::span<const std::uint8_t> bytes);

Bytes encode_mask(const ModelMask& mask);
ModelMask decode_mask(std::span<const std::uint8_t> bytes);

void write_adapter(const std::filesystem::path& path,
                   const ModelAdapter& adapter);
ModelAdapter read_adapter(const std::filesystem::path& path);

void write_checkpoint(const std::filesystem::path& path, const Mlp& model);
Mlp read_checkpoint(const std::filesystem::path& path);

void write_mask(const std::filesystem::path& path, const ModelMask& mask);
ModelMask read_mask(const std::filesystem::path& path);

/// Whole-file helpers; IoError on failure.
Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> bytes);

/// FNV-1a 64 over bytes.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept;

}  // namespace shira
