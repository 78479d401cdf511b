// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "orbiter360/pipeline/bundle.hpp"

namespace orbiter360::pipeline {

inline constexpr const char* kCheckpointVersion = "orbiter360-ckpt-v1";

/// Write the bundle (config, parameters, optimizer moments, stage progress)
/// as one checksummed archive. The write is atomic: a temporary file is
/// renamed into place, so a crash never leaves a partial archive behind.
void saveCheckpoint(const ModelBundle& b, const std::filesystem::path& path);

/// Rebuild a bundle from an archive. Version mismatch is fatal with both
/// versions in the message; a corrupt or truncated archive is an I/O error.
ModelBundle loadCheckpoint(const std::filesystem::path& path);

} // namespace orbiter360::pipeline
