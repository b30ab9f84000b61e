// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lcnx/config.hpp"
#include "lcnx/lora.hpp"
#include "lcnx/model.hpp"

// File layout (all integers little-endian):
//
//   offset 0   8 bytes   magic "LCNXCKPT"
//   offset 8   u32       format version (1)
//   offset 12  u64       header length H in bytes
//   offset 20  u32       CRC-32 of the header bytes
//   offset 24  H bytes   UTF-8 JSON header (keys sorted, no whitespace)
//   offset 24+H          payload: f32 tensors concatenated in index order
//
// The header records kind, model config, lora config (adapters only), class
// names, free-form metadata, the tensor index {name, shape, dtype, offset}
// with offsets relative to the payload start, the payload length and the
// CRC-32 of the payload.
namespace lcnx {

enum class CheckpointKind { base, adapter };

struct TensorEntry {
    std::string name;
    Shape shape;
    std::uint64_t offset = 0;
};

struct CheckpointHeader {
    std::uint32_t version = 1;
    CheckpointKind kind = CheckpointKind::base;
    ModelConfig model;
    std::optional<LoraConfig> lora;
    std::vector<std::string> class_names;
    nlohmann::json metadata = nlohmann::json::object();
    std::vector<TensorEntry> tensors;
    std::uint64_t payload_bytes = 0;
    std::uint32_t crc32 = 0;
};

struct Checkpoint {
    CheckpointHeader header;
    std::vector<NdArray<float>> tensors; ///< same order as header.tensors

    const NdArray<float>& tensor(const std::string& name) const;
};

inline constexpr char kCheckpointMagic[8] = {'L', 'C', 'N', 'X', 'C', 'K', 'P', 'T'};

/// Full backbone (every tensor).
void save_base(const Model<float>& model, const std::filesystem::path& path,
               const nlohmann::json& metadata = nlohmann::json::object());

/// Adapter pairs and the classification head only.
void save_adapter(const PeftModel<float>& model, const std::filesystem::path& path,
                  const nlohmann::json& metadata = nlohmann::json::object());

/// Encodes a checkpoint to bytes; deterministic for identical inputs.
std::string encode_checkpoint(const Checkpoint& ckpt);

/// Decodes and validates; throws ChecksumError / IoError on corrupt or truncated input.
Checkpoint decode_checkpoint(const std::string& bytes);

Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Writes via a temporary file and rename.
void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

Checkpoint checkpoint_of(const Model<float>& model, const nlohmann::json& metadata = nlohmann::json::object());
Checkpoint checkpoint_of(const PeftModel<float>& model, const nlohmann::json& metadata = nlohmann::json::object());

/// Restores a base model; every parameter trainable.
Model<float> model_from_checkpoint(const Checkpoint& ckpt);
Model<float> load_base(const std::filesystem::path& path);

/// Attaches an adapter checkpoint to a compatible base. Throws
/// CompatibilityError when the backbone shapes differ.
PeftModel<float> attach_adapter(Model<float> base, const Checkpoint& adapter);
PeftModel<float> load_peft(const std::filesystem::path& base_path, const std::filesystem::path& adapter_path);

std::string to_string(CheckpointKind kind);

} // namespace lcnx
