// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "orbiter360/core/image.hpp"
#include "orbiter360/scene/scene.hpp"

namespace orbiter360::data {

using scene::CameraPose;

struct DatasetConfig {
    int scenes = 8;
    int viewsPerScene = 36;
    double stepDeg = 10.0;
    double elevation = 0.0;
    Index resolution = 64;
    int styleCount = scene::kStyleCount; ///< scene i gets style i % styleCount
    std::uint64_t seed = 0;
};

struct ViewRecord {
    std::string path; ///< relative to the dataset root
    CameraPose pose;
    std::uint64_t sceneSeed = 0;
    int styleId = 0;
};

/// Rows of one scene, in generation (azimuth) order.
struct SceneViews {
    std::uint64_t sceneSeed = 0;
    int styleId = 0;
    std::vector<std::size_t> rows;
};

class Dataset {
  public:
    std::filesystem::path root;
    std::vector<ViewRecord> records;
    std::vector<SceneViews> scenes;

    Image loadImage(std::size_t row) const;
    /// Side length of the stored images (decoded once, cached).
    Index resolution() const;

  private:
    mutable Index resolution_ = 0;
};

/// Renders every scene orbit to <root>/images/, writes manifest.jsonl and
/// checksum.txt. Returns the dataset checksum. Deterministic in the config.
std::uint64_t generateDataset(const DatasetConfig& cfg, const std::filesystem::path& root);

Dataset loadDataset(const std::filesystem::path& root);

/// Recompute the checksum of a dataset on disk (image bytes in manifest
/// order, then the manifest itself).
std::uint64_t datasetChecksum(const std::filesystem::path& root);

} // namespace orbiter360::data
