// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "orbiter360/core/tensor.hpp"

namespace orbiter360 {

/// RGB image with float channels in [0,1], row-major HxWx3.
struct Image {
    Index height = 0;
    Index width = 0;
    std::vector<float> rgb;

    Image() = default;
    Image(Index h, Index w) : height(h), width(w), rgb(static_cast<std::size_t>(h * w * 3), 0.0f) {}

    float* px(Index y, Index x) { return rgb.data() + (y * width + x) * 3; }
    const float* px(Index y, Index x) const { return rgb.data() + (y * width + x) * 3; }

    bool sameSize(const Image& o) const { return height == o.height && width == o.width; }
};

/// Images enter the network as NCHW tensors; values stay in [0,1].
TensorF imagesToTensor(const std::vector<Image>& images);
std::vector<Image> tensorToImages(const TensorF& t);
inline TensorF imageToTensor(const Image& im) { return imagesToTensor({im}); }
inline Image tensorToImage(const TensorF& t) { return tensorToImages(t)[0]; }

/// Minimal PNG codec (8-bit RGB/RGBA, no interlace) over zlib. Encoding is
/// deterministic: fixed filter choice and compression level, so identical
/// pixels produce identical bytes.
std::vector<std::uint8_t> encodePng(const Image& im);
Image decodePng(const std::uint8_t* data, std::size_t size);

void savePng(const std::filesystem::path& path, const Image& im);
Image loadPng(const std::filesystem::path& path);

/// Whole-file FNV-1a hash, used by dataset checksums.
std::uint64_t hashFile(const std::filesystem::path& path);

std::vector<std::uint8_t> readFileBytes(const std::filesystem::path& path);
void writeFileBytes(const std::filesystem::path& path, const void* data, std::size_t size);

} // namespace orbiter360
