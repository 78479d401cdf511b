// SPDX-License-Identifier: Apache-2.0
#include "orbiter360/data/dataset.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <json.hpp>

namespace orbiter360::data {

namespace {

std::uint64_t sceneSeedFor(std::uint64_t datasetSeed, int sceneIndex) {
    std::uint64_t x = datasetSeed ^ fnv1a64("scene-" + std::to_string(sceneIndex));
    return splitmix64(x);
}

std::string viewPath(int sceneIndex, int k) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "images/scene%04d_%03d.png", sceneIndex, k);
    return buf;
}

std::uint64_t checksumOf(const std::filesystem::path& root, const std::vector<std::string>& paths) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& rel : paths) {
        auto bytes = readFileBytes(root / rel);
        h = fnv1a64(bytes.data(), bytes.size(), h);
    }
    auto manifest = readFileBytes(root / "manifest.jsonl");
    return fnv1a64(manifest.data(), manifest.size(), h);
}

} // namespace

Image Dataset::loadImage(std::size_t row) const {
    ORBITER360_CHECK(row < records.size(), "dataset row out of range");
    return loadPng(root / records[row].path);
}

Index Dataset::resolution() const {
    if (resolution_ == 0 && !records.empty()) resolution_ = loadImage(0).width;
    return resolution_;
}

std::uint64_t generateDataset(const DatasetConfig& cfg, const std::filesystem::path& root) {
    ORBITER360_CHECK(cfg.scenes >= 1, "dataset needs at least one scene");
    ORBITER360_CHECK(cfg.viewsPerScene >= 1 && cfg.stepDeg != 0.0, "orbit needs n >= 1 and a nonzero step");
    ORBITER360_CHECK(cfg.styleCount >= 1 && cfg.styleCount <= scene::kStyleCount, "style count out of range");

    std::error_code ec;
    std::filesystem::create_directories(root / "images", ec);
    if (ec) throw IoError("cannot create dataset directory: " + (root / "images").string());

    std::string manifest;
    std::vector<std::string> paths;
    for (int i = 0; i < cfg.scenes; ++i) {
        int style = i % cfg.styleCount;
        std::uint64_t seed = sceneSeedFor(cfg.seed, i);
        scene::SceneSpec spec = scene::makeSceneSpec(seed, style);
        scene::ViewSequence seq =
            scene::sampleSequence(spec, cfg.viewsPerScene, 0.0, cfg.stepDeg, cfg.resolution, cfg.elevation);
        for (int k = 0; k < cfg.viewsPerScene; ++k) {
            const auto& s = seq.samples[static_cast<std::size_t>(k)];
            std::string rel = viewPath(i, k);
            savePng(root / rel, s.image);
            nlohmann::json row = {{"path", rel},
                                  {"azimuth", s.pose.azimuth},
                                  {"elevation", s.pose.elevation},
                                  {"radius", s.pose.radius},
                                  {"scene_seed", seed},
                                  {"style_id", style}};
            manifest += row.dump();
            manifest += '\n';
            paths.push_back(std::move(rel));
        }
    }
    writeFileBytes(root / "manifest.jsonl", manifest.data(), manifest.size());

    std::uint64_t sum = checksumOf(root, paths);
    char line[32];
    std::snprintf(line, sizeof(line), "fnv1a64:%016" PRIx64 "\n", sum);
    writeFileBytes(root / "checksum.txt", line, std::strlen(line));
    return sum;
}

Dataset loadDataset(const std::filesystem::path& root) {
    std::ifstream in(root / "manifest.jsonl");
    if (!in) throw IoError("cannot open manifest: " + (root / "manifest.jsonl").string());
    Dataset ds;
    ds.root = root;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json row = nlohmann::json::parse(line, nullptr, false);
        if (row.is_discarded()) throw DataError("malformed manifest row: " + line);
        ViewRecord r;
        r.path = row.at("path").get<std::string>();
        r.pose.azimuth = row.at("azimuth").get<double>();
        r.pose.elevation = row.at("elevation").get<double>();
        r.pose.radius = row.at("radius").get<double>();
        r.sceneSeed = row.at("scene_seed").get<std::uint64_t>();
        r.styleId = row.at("style_id").get<int>();
        if (ds.scenes.empty() || ds.scenes.back().sceneSeed != r.sceneSeed)
            ds.scenes.push_back({r.sceneSeed, r.styleId, {}});
        ds.scenes.back().rows.push_back(ds.records.size());
        ds.records.push_back(std::move(r));
    }
    if (ds.records.empty()) throw DataError("dataset manifest is empty: " + root.string());
    return ds;
}

std::uint64_t datasetChecksum(const std::filesystem::path& root) {
    Dataset ds = loadDataset(root);
    std::vector<std::string> paths;
    paths.reserve(ds.records.size());
    for (const auto& r : ds.records) paths.push_back(r.path);
    return checksumOf(root, paths);
}

} // namespace orbiter360::data
