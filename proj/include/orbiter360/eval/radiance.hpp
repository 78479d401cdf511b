// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <vector>

#include "orbiter360/core/image.hpp"
#include "orbiter360/scene/scene.hpp"

namespace orbiter360::eval {

/// Fitting recipe for the voxel radiance grid. Deterministic in the seed.
struct RadianceConfig {
    int gridSize = 32;       ///< D: the grid is D^3 voxels over [-1.2, 1.2]^3
    int iterations = 1500;   ///< Adam steps
    int raysPerBatch = 1024; ///< pixels sampled per step
    int samplesPerRay = 48;  ///< stratified midpoints inside the grid box
    float learningRate = 0.1f;
    /// Every Nth view is excluded from fitting and scored by re-render PSNR;
    /// 0 trains on everything (then no held-out scores are produced).
    int holdoutEvery = 6;
    /// Squared total-variation weight on neighboring raw voxels. Keeps the
    /// grid from memorizing individual training rays and from building the
    /// interior structures that can fake view-dependent content.
    float tvWeight = 5e-3f;
    float sparsityWeight = 5e-4f; ///< pushes density toward empty space
    std::uint64_t seed = 0;
};

/// D^3 voxel grid of (density, rgb). Raw values are stored; density goes
/// through softplus (hence never negative) and color through a sigmoid.
struct RadianceGrid {
    int size = 0;
    std::vector<float> densityRaw; ///< D^3
    std::vector<float> colorRaw;   ///< D^3 * 3

    double densityAt(int ix, int iy, int iz) const;
};

struct RadianceFit {
    RadianceGrid grid;
    std::vector<double> losses;      ///< mean batch loss per step
    std::vector<int> heldOutViews;   ///< indices into the input views
    std::vector<double> heldOutPsnr; ///< re-render PSNR per held-out view
    double meanHeldOutPsnr = 0.0;    ///< NaN when nothing is held out
    std::vector<Image> depthMaps;    ///< one per input view, near = bright
};

/// Fits a radiance grid to posed views by differentiable volume rendering
/// (Adam on hand-derived gradients). Needs at least 8 views whose azimuths
/// span at least 180 degrees; a non-finite loss raises TrainingError.
RadianceFit fitRadianceGrid(const std::vector<Image>& views, const std::vector<scene::CameraPose>& poses,
                            const RadianceConfig& cfg);

/// Volume-renders the grid from a pose, compositing over the shared scene
/// background color.
Image renderRadiance(const RadianceGrid& grid, const scene::CameraPose& pose, Index resolution);

/// Expected-depth map: brighter is closer; pixels that miss the grid are 0.
Image renderRadianceDepth(const RadianceGrid& grid, const scene::CameraPose& pose, Index resolution);

/// Checksummed little-endian archive of a fitted grid.
void saveRadianceGrid(const RadianceGrid& grid, const std::filesystem::path& path);
RadianceGrid loadRadianceGrid(const std::filesystem::path& path);

} // namespace orbiter360::eval
