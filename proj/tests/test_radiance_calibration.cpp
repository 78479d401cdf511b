// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdio>
#include <vector>

#include "orbiter360/eval/radiance.hpp"
#include "orbiter360/scene/scene.hpp"

using namespace orbiter360;

// Calibration of the consistency detector at full scale: a 64^3 grid fitted
// to 36 evenly spaced renderer views must re-render held-out views at
// >= 24 dB, and the same recipe fed one identical image across all 36 poses
// must land strictly below that — otherwise the fitter cannot separate
// consistent orbits from inconsistent ones.
TEST_CASE("radiance grid calibration at D=64 K=36") {
    auto spec = scene::makeSceneSpec(123, 2);
    std::vector<Image> views;
    std::vector<scene::CameraPose> poses;
    for (int i = 0; i < 36; ++i) {
        scene::CameraPose pose{360.0 * i / 36, (i % 3 - 1) * 8.0, scene::kDefaultRadius};
        poses.push_back(pose);
        views.push_back(scene::renderView(spec, pose, 32));
    }

    eval::RadianceConfig cfg;
    cfg.gridSize = 64;
    cfg.seed = 9;
    auto calibration = eval::fitRadianceGrid(views, poses, cfg);
    REQUIRE(calibration.heldOutViews.size() == 6);
    std::printf("calibration meanHeldOutPsnr=%.3f\n", calibration.meanHeldOutPsnr);
    CHECK(calibration.meanHeldOutPsnr >= 24.0);

    std::vector<Image> copies(views.size(), views.front());
    auto inconsistent = eval::fitRadianceGrid(copies, poses, cfg);
    std::printf("inconsistent meanHeldOutPsnr=%.3f\n", inconsistent.meanHeldOutPsnr);
    CHECK(inconsistent.meanHeldOutPsnr < calibration.meanHeldOutPsnr);
}
