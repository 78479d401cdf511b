// SPDX-License-Identifier: Apache-2.0
#include "orbiter360/cli/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>

#include "orbiter360/core/error.hpp"
#include "orbiter360/core/image.hpp"

namespace orbiter360::cli {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

template <typename T> T parseNumber(const std::string& text, const std::string& key, const char* kind) {
    std::string_view sv = trim(text);
    T value{};
    auto [end, ec] = std::from_chars(sv.data(), sv.data() + sv.size(), value);
    if (ec != std::errc{} || end != sv.data() + sv.size())
        throw ConfigError("config key '" + key + "' is not " + kind + ": '" + text + "'");
    return value;
}

std::string lowered(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

} // namespace

KeyValueConfig KeyValueConfig::fromFile(const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes = readFileBytes(path); // IoError when missing
    KeyValueConfig cfg = fromString(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                                    path.string());
    return cfg;
}

KeyValueConfig KeyValueConfig::fromString(std::string_view text, std::string source) {
    KeyValueConfig cfg;
    cfg.source_ = std::move(source);
    int lineNo = 0;
    while (!text.empty()) {
        ++lineNo;
        std::size_t nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (std::size_t hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string_view::npos || trim(line.substr(0, eq)).empty())
            throw ConfigError(cfg.source_ + ":" + std::to_string(lineNo) + ": expected key=value, got '" +
                              std::string(line) + "'");
        cfg.entries_[std::string(trim(line.substr(0, eq)))] = std::string(trim(line.substr(eq + 1)));
    }
    return cfg;
}

std::string KeyValueConfig::getString(const std::string& key, const std::string& def) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? def : it->second;
}

long KeyValueConfig::getInt(const std::string& key, long def) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? def : parseNumber<long>(it->second, key, "an integer");
}

std::uint64_t KeyValueConfig::getUint(const std::string& key, std::uint64_t def) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? def : parseNumber<std::uint64_t>(it->second, key, "an unsigned integer");
}

double KeyValueConfig::getDouble(const std::string& key, double def) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return def;
    // from_chars for doubles is missing in some libstdc++ configurations;
    // strtod with a full-consumption check matches its strictness.
    std::string text(trim(it->second));
    if (text.empty()) throw ConfigError("config key '" + key + "' is not a number: ''");
    char* end = nullptr;
    double value = std::strtod(text.c_str(), &end);
    if (end != text.c_str() + text.size())
        throw ConfigError("config key '" + key + "' is not a number: '" + it->second + "'");
    return value;
}

bool KeyValueConfig::getBool(const std::string& key, bool def) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return def;
    std::string v = lowered(trim(it->second));
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "' is not a boolean: '" + it->second + "'");
}

std::string KeyValueConfig::snapshot() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
    return out;
}

void writeSnapshot(const KeyValueConfig& cfg, const std::filesystem::path& path) {
    std::string text = cfg.snapshot();
    writeFileBytes(path, text.data(), text.size());
}

std::uint64_t resolveSeed(std::optional<std::uint64_t> flagSeed, const KeyValueConfig& cfg,
                          std::uint64_t fallback) {
    if (flagSeed) return *flagSeed;
    if (cfg.has("seed")) return cfg.getUint("seed", 0);
    if (const char* env = std::getenv("ORBITER360_SEED")) {
        std::string_view sv = trim(env);
        std::uint64_t value = 0;
        auto [end, ec] = std::from_chars(sv.data(), sv.data() + sv.size(), value);
        if (ec != std::errc{} || end != sv.data() + sv.size() || sv.empty())
            throw ConfigError(std::string("ORBITER360_SEED is not an unsigned integer: '") + env + "'");
        return value;
    }
    return fallback;
}

} // namespace orbiter360::cli
