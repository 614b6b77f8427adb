#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "contracon/adapter.h"
#include "contracon/backbone.h"

namespace contracon {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;

enum class CheckpointKind { base, adapter };

struct CheckpointManifest {
    CheckpointKind kind = CheckpointKind::base;
    int task_id = 1;
    ModelConfig config;
    std::size_t kernel_size = 0;  // adapters only
    GateMode gate_mode = GateMode::learnable;
    std::vector<int> classes;
    InputNormalization normalization;
    bool frozen = false;
    // Free-form run configuration text carried along for later commands.
    std::string run_config;
};

// File layout: "CTCN", u32 version, u32 manifest length, manifest JSON,
// u32 record count, then per record
//   u32 name length, name, u8 dtype, u8 rank, u64 dims[rank], f32 payload
// with every integer and float little-endian. Writes go to a temporary file
// that is renamed over the target.
void write_checkpoint(const std::filesystem::path& path, const CheckpointManifest& manifest,
                      const std::vector<NamedTensor<float>>& tensors);

struct CheckpointFile {
    CheckpointManifest manifest;
    std::vector<NamedTensor<float>> tensors;
};

// Errors: bad_magic, version_mismatch, truncated, format (malformed manifest
// or unknown dtype), io (unreadable file).
CheckpointFile read_checkpoint(const std::filesystem::path& path);

void save_backbone(const Backbone<float>& backbone, const std::filesystem::path& path, const std::string& run_config = {});
Backbone<float> load_backbone(const std::filesystem::path& path);

void save_adapter(const TaskAdapter<float>& adapter, const std::filesystem::path& path);
TaskAdapter<float> load_adapter(const std::filesystem::path& path);
// Also checks the adapter against `backbone` (config_mismatch on failure).
TaskAdapter<float> load_adapter(const std::filesystem::path& path, const Backbone<float>& backbone);

// Every adapter checkpoint in `dir`, ordered by the task id in its manifest.
// Files that are not checkpoints are skipped.
std::vector<TaskAdapter<float>> load_adapter_dir(const std::filesystem::path& dir, const Backbone<float>& backbone);

}  // namespace contracon
