// SPDX-License-Identifier: Apache-2.0
#include "orbiter360/core/image.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "orbiter360/core/error.hpp"
#include "orbiter360/core/rng.hpp"

namespace orbiter360 {

namespace {

void put32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get32(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
           std::uint32_t(p[3]);
}

void putChunk(std::vector<std::uint8_t>& out, const char type[4], const std::uint8_t* data, std::size_t n) {
    put32(out, static_cast<std::uint32_t>(n));
    std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data, data + n);
    std::uint32_t crc =
        static_cast<std::uint32_t>(::crc32(0L, out.data() + start, static_cast<uInt>(4 + n)));
    put32(out, crc);
}

std::uint8_t to8(float v) {
    float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

void unfilterRow(std::uint8_t filter, std::uint8_t* row, const std::uint8_t* prev, std::size_t n, int bpp) {
    auto paeth = [](int a, int b, int c) {
        int p = a + b - c, pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
        return (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c);
    };
    for (std::size_t i = 0; i < n; ++i) {
        int left = i >= static_cast<std::size_t>(bpp) ? row[i - bpp] : 0;
        int up = prev ? prev[i] : 0;
        int ul = (prev && i >= static_cast<std::size_t>(bpp)) ? prev[i - bpp] : 0;
        int x = row[i];
        switch (filter) {
        case 0: break;
        case 1: x += left; break;
        case 2: x += up; break;
        case 3: x += (left + up) / 2; break;
        case 4: x += paeth(left, up, ul); break;
        default: throw IoError("png: unsupported filter type");
        }
        row[i] = static_cast<std::uint8_t>(x & 0xff);
    }
}

} // namespace

std::vector<std::uint8_t> encodePng(const Image& im) {
    ORBITER360_CHECK(im.height > 0 && im.width > 0, "png: empty image");
    const Index H = im.height, W = im.width;
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(H * (1 + W * 3)));
    std::size_t k = 0;
    for (Index y = 0; y < H; ++y) {
        raw[k++] = 0;
        for (Index x = 0; x < W; ++x) {
            const float* p = im.px(y, x);
            raw[k++] = to8(p[0]);
            raw[k++] = to8(p[1]);
            raw[k++] = to8(p[2]);
        }
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> z(bound);
    if (compress2(z.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw IoError("png: deflate failed");
    z.resize(bound);

    std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    std::uint8_t ihdr[13];
    ihdr[0] = static_cast<std::uint8_t>(W >> 24);
    ihdr[1] = static_cast<std::uint8_t>(W >> 16);
    ihdr[2] = static_cast<std::uint8_t>(W >> 8);
    ihdr[3] = static_cast<std::uint8_t>(W);
    ihdr[4] = static_cast<std::uint8_t>(H >> 24);
    ihdr[5] = static_cast<std::uint8_t>(H >> 16);
    ihdr[6] = static_cast<std::uint8_t>(H >> 8);
    ihdr[7] = static_cast<std::uint8_t>(H);
    ihdr[8] = 8;
    ihdr[9] = 2;
    ihdr[10] = ihdr[11] = ihdr[12] = 0;
    putChunk(out, "IHDR", ihdr, 13);
    putChunk(out, "IDAT", z.data(), z.size());
    putChunk(out, "IEND", nullptr, 0);
    return out;
}

Image decodePng(const std::uint8_t* data, std::size_t size) {
    static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    if (size < 8 || std::memcmp(data, sig, 8) != 0) throw IoError("png: bad signature");
    std::size_t pos = 8;
    Index W = 0, H = 0;
    int colorType = -1;
    std::vector<std::uint8_t> idat;
    while (pos + 8 <= size) {
        std::uint32_t len = get32(data + pos);
        if (pos + 12 + len > size) throw IoError("png: truncated chunk");
        const char* type = reinterpret_cast<const char*>(data + pos + 4);
        const std::uint8_t* body = data + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            W = get32(body);
            H = get32(body + 4);
            if (body[8] != 8) throw IoError("png: only 8-bit depth supported");
            colorType = body[9];
            if (colorType != 2 && colorType != 6) throw IoError("png: only RGB/RGBA supported");
            if (body[12] != 0) throw IoError("png: interlace not supported");
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), body, body + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (W <= 0 || H <= 0 || idat.empty()) throw IoError("png: missing image data");
    int bpp = colorType == 6 ? 4 : 3;
    std::size_t rowBytes = static_cast<std::size_t>(W) * bpp;
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(H) * (rowBytes + 1));
    uLongf rawLen = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &rawLen, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        rawLen != raw.size())
        throw IoError("png: inflate failed");

    Image im(H, W);
    std::uint8_t* prev = nullptr;
    for (Index y = 0; y < H; ++y) {
        std::uint8_t* row = raw.data() + static_cast<std::size_t>(y) * (rowBytes + 1);
        unfilterRow(row[0], row + 1, prev, rowBytes, bpp);
        for (Index x = 0; x < W; ++x) {
            float* p = im.px(y, x);
            p[0] = row[1 + x * bpp + 0] / 255.0f;
            p[1] = row[1 + x * bpp + 1] / 255.0f;
            p[2] = row[1 + x * bpp + 2] / 255.0f;
        }
        prev = row + 1;
    }
    return im;
}

void savePng(const std::filesystem::path& path, const Image& im) {
    auto bytes = encodePng(im);
    writeFileBytes(path, bytes.data(), bytes.size());
}

Image loadPng(const std::filesystem::path& path) {
    auto bytes = readFileBytes(path);
    return decodePng(bytes.data(), bytes.size());
}

std::vector<std::uint8_t> readFileBytes(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for reading: " + path.string());
    f.seekg(0, std::ios::end);
    std::streamoff n = f.tellg();
    f.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(n));
    if (n > 0) f.read(reinterpret_cast<char*>(bytes.data()), n);
    if (!f) throw IoError("read failed: " + path.string());
    return bytes;
}

void writeFileBytes(const std::filesystem::path& path, const void* data, std::size_t size) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!f) throw IoError("write failed: " + path.string());
}

std::uint64_t hashFile(const std::filesystem::path& path) {
    auto bytes = readFileBytes(path);
    return fnv1a64(bytes.data(), bytes.size());
}

TensorF imagesToTensor(const std::vector<Image>& images) {
    ORBITER360_CHECK(!images.empty(), "imagesToTensor: empty batch");
    Index N = static_cast<Index>(images.size()), H = images[0].height, W = images[0].width;
    TensorF t({N, 3, H, W});
    for (Index n = 0; n < N; ++n) {
        ORBITER360_CHECK(images[static_cast<std::size_t>(n)].sameSize(images[0]),
                         "imagesToTensor: mixed sizes");
        const Image& im = images[static_cast<std::size_t>(n)];
        for (Index c = 0; c < 3; ++c)
            for (Index y = 0; y < H; ++y)
                for (Index x = 0; x < W; ++x) t.at(n, c, y, x) = im.px(y, x)[c];
    }
    return t;
}

std::vector<Image> tensorToImages(const TensorF& t) {
    ORBITER360_CHECK(t.rank() == 4 && t.dim(1) == 3, "tensorToImages: expects Nx3xHxW");
    Index N = t.dim(0), H = t.dim(2), W = t.dim(3);
    std::vector<Image> images;
    images.reserve(static_cast<std::size_t>(N));
    for (Index n = 0; n < N; ++n) {
        Image im(H, W);
        for (Index c = 0; c < 3; ++c)
            for (Index y = 0; y < H; ++y)
                for (Index x = 0; x < W; ++x) im.px(y, x)[c] = t.at(n, c, y, x);
        images.push_back(std::move(im));
    }
    return images;
}

} // namespace orbiter360
