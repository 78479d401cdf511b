// SPDX-License-Identifier: Apache-2.0
#include "orbiter360/pipeline/checkpoint.hpp"

#include <cstring>
#include <json.hpp>

#include "orbiter360/core/image.hpp"

namespace orbiter360::pipeline {
namespace {

constexpr const char* kMagicPrefix = "orbiter360-ckpt-";

void putU32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void putU64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void putRaw(std::vector<std::uint8_t>& out, const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out.insert(out.end(), p, p + n);
}

void putTensorData(std::vector<std::uint8_t>& out, const TensorF& t) {
    putRaw(out, t.data(), static_cast<std::size_t>(t.numel()) * sizeof(float));
}

/// Bounds-checked cursor over the archive body (checksum already verified).
struct Reader {
    const std::uint8_t* base;
    std::size_t size;
    std::size_t pos = 0;

    void need(std::size_t k) const {
        if (pos + k > size) throw IoError("corrupt checkpoint archive: truncated record");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(base[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(base[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(base + pos), n);
        pos += n;
        return s;
    }
    void raw(void* dst, std::size_t n) {
        need(n);
        std::memcpy(dst, base + pos, n);
        pos += n;
    }
    std::string line() {
        std::size_t end = pos;
        while (end < size && base[end] != '\n') ++end;
        if (end == size) throw IoError("corrupt checkpoint archive: missing header line");
        std::string s(reinterpret_cast<const char*>(base + pos), end - pos);
        pos = end + 1;
        return s;
    }
};

void readInto(Reader& r, TensorF& t, const std::string& name, const Shape& want) {
    if (t.shape() != want) {
        std::string msg = "checkpoint shape mismatch for " + name + ": archive [";
        for (std::size_t i = 0; i < want.size(); ++i) msg += (i ? "," : "") + std::to_string(want[i]);
        msg += "], model [";
        for (Index i = 0; i < t.rank(); ++i) msg += (i ? "," : "") + std::to_string(t.dim(i));
        msg += "]";
        throw IntegrationError(msg);
    }
    r.raw(t.data(), static_cast<std::size_t>(t.numel()) * sizeof(float));
}

} // namespace

void saveCheckpoint(const ModelBundle& b, const std::filesystem::path& path) {
    std::vector<std::uint8_t> out;
    out.reserve(static_cast<std::size_t>(b.store.totalElements()) * sizeof(float) + (1 << 16));

    std::string magic = std::string(kCheckpointVersion) + "\n";
    putRaw(out, magic.data(), magic.size());

    nlohmann::json meta;
    meta["version"] = kCheckpointVersion;
    meta["config"] = {{"resolution", b.cfg.resolution},
                      {"base_channels", b.cfg.baseChannels},
                      {"temb_channels", b.cfg.tembChannels},
                      {"latent_channels", b.cfg.latentChannels},
                      {"n_max_views", b.cfg.nMaxViews},
                      {"timesteps", b.cfg.T},
                      {"schedule", diffusion::toString(b.cfg.schedule)}};
    meta["completed"] = b.completedSteps;
    meta["scale_calibrated"] = b.scaleCalibrated;
    meta["adam"] = {{"stage", b.adam.stage}, {"t", b.adam.t}};
    std::string metaStr = meta.dump();
    putU64(out, metaStr.size());
    putRaw(out, metaStr.data(), metaStr.size());

    putU64(out, b.store.size());
    b.store.forEach([&](const Parameter<float>& p) {
        putU32(out, static_cast<std::uint32_t>(p.name.size()));
        putRaw(out, p.name.data(), p.name.size());
        putU32(out, static_cast<std::uint32_t>(p.value.rank()));
        for (Index i = 0; i < p.value.rank(); ++i) putU64(out, static_cast<std::uint64_t>(p.value.dim(i)));
        putTensorData(out, p.value);
    });

    putU64(out, b.adam.moments.size());
    for (const auto& [name, mv] : b.adam.moments) {
        putU32(out, static_cast<std::uint32_t>(name.size()));
        putRaw(out, name.data(), name.size());
        putU64(out, static_cast<std::uint64_t>(mv.first.numel()));
        putTensorData(out, mv.first);
        putTensorData(out, mv.second);
    }

    putU64(out, fnv1a64(out.data(), out.size()));

    auto tmp = path;
    tmp += ".tmp";
    writeFileBytes(tmp, out.data(), out.size());
    std::filesystem::rename(tmp, path);
}

ModelBundle loadCheckpoint(const std::filesystem::path& path) {
    auto bytes = readFileBytes(path);

    Reader header{bytes.data(), bytes.size()};
    std::string magic = header.line();
    if (magic != kCheckpointVersion) {
        if (magic.rfind(kMagicPrefix, 0) == 0)
            throw IntegrationError("checkpoint version mismatch: archive is \"" + magic + "\", this build reads \"" +
                                   kCheckpointVersion + "\"");
        throw IoError("not a checkpoint archive: " + path.string());
    }

    if (bytes.size() < header.pos + 8) throw IoError("corrupt checkpoint archive: truncated record");
    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(bytes[bytes.size() - 8 + i]) << (8 * i);
    if (fnv1a64(bytes.data(), bytes.size() - 8) != stored)
        throw IoError("corrupt checkpoint archive: checksum mismatch");

    Reader r{bytes.data(), bytes.size() - 8, header.pos};

    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(r.str(r.u64()));
    } catch (const nlohmann::json::exception&) {
        throw IoError("corrupt checkpoint archive: bad metadata block");
    }

    PipelineConfig cfg;
    try {
        const auto& c = meta.at("config");
        cfg.resolution = c.at("resolution").get<Index>();
        cfg.baseChannels = c.at("base_channels").get<Index>();
        cfg.tembChannels = c.at("temb_channels").get<Index>();
        cfg.latentChannels = c.at("latent_channels").get<Index>();
        cfg.nMaxViews = c.at("n_max_views").get<Index>();
        cfg.T = c.at("timesteps").get<int>();
        cfg.schedule = diffusion::scheduleKindFromString(c.at("schedule").get<std::string>());
    } catch (const nlohmann::json::exception&) {
        throw IoError("corrupt checkpoint archive: incomplete config snapshot");
    }

    ModelBundle b = ModelBundle::build(cfg);
    b.completedSteps = meta.at("completed").get<std::map<std::string, int>>();
    b.scaleCalibrated = meta.at("scale_calibrated").get<bool>();
    b.adam.stage = meta.at("adam").at("stage").get<std::string>();
    b.adam.t = meta.at("adam").at("t").get<long>();

    std::uint64_t nParams = r.u64();
    if (nParams != b.store.size())
        throw IntegrationError("checkpoint holds " + std::to_string(nParams) + " parameters, model expects " +
                               std::to_string(b.store.size()));
    for (std::uint64_t i = 0; i < nParams; ++i) {
        std::string name = r.str(r.u32());
        Shape shape(r.u32());
        for (auto& d : shape) d = static_cast<Index>(r.u64());
        Parameter<float>* p = b.store.find(name);
        if (!p) throw IntegrationError("checkpoint parameter not in model: " + name);
        readInto(r, p->value, name, shape);
    }

    std::uint64_t nMoments = r.u64();
    for (std::uint64_t i = 0; i < nMoments; ++i) {
        std::string name = r.str(r.u32());
        auto numel = static_cast<Index>(r.u64());
        Parameter<float>* p = b.store.find(name);
        if (!p) throw IntegrationError("optimizer moment for unknown parameter: " + name);
        if (p->value.numel() != numel)
            throw IntegrationError("optimizer moment size mismatch for " + name);
        auto& mv = b.adam.moments[name];
        mv.first = TensorF(p->value.shape());
        mv.second = TensorF(p->value.shape());
        r.raw(mv.first.data(), static_cast<std::size_t>(numel) * sizeof(float));
        r.raw(mv.second.data(), static_cast<std::size_t>(numel) * sizeof(float));
    }

    if (r.pos != r.size) throw IoError("corrupt checkpoint archive: trailing bytes");
    return b;
}

} // namespace orbiter360::pipeline
