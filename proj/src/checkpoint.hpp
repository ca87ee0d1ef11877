#pragma once

#include <filesystem>

#include "tensor.hpp"

namespace gridflow {

// Versioned checkpoint: named float32 tensors plus the variant tag and the
// config snapshot that produced them. Synchronization parameters live in the
// same namespace under "sync.{layer}." prefixes.
struct CheckpointMeta {
    std::string variant;      // "base" or a 4D variant name
    std::string config_text;  // config snapshot
};

void save_checkpoint(const std::filesystem::path& path, const CheckpointMeta& meta,
                     const ParamSet<float>& params);

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

// Fills every registered parameter by name; missing or shape-mismatched
// tensors are errors. Extra tensors in the file are errors too when
// `strict`, otherwise ignored (loading a 4D checkpoint into a bare model).
void load_checkpoint_into(const std::filesystem::path& path, const ParamSet<float>& params,
                          bool strict = true);

}  // namespace gridflow
