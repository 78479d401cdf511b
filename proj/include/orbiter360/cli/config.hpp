// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace orbiter360::cli {

/// Flat key=value configuration: one pair per line, '#' starts a comment,
/// blank lines allowed, whitespace around keys and values ignored. Later
/// assignments (including flag overrides via set) win.
class KeyValueConfig {
  public:
    KeyValueConfig() = default;

    /// Missing file -> IoError; a line without '=' -> ConfigError naming
    /// the source and line number.
    static KeyValueConfig fromFile(const std::filesystem::path& path);
    static KeyValueConfig fromString(std::string_view text, std::string source = "<inline>");

    bool has(const std::string& key) const { return entries_.count(key) != 0; }
    void set(const std::string& key, std::string value) { entries_[key] = std::move(value); }

    /// Typed getters return the default when the key is absent and throw
    /// ConfigError when the stored text does not parse as the type.
    std::string getString(const std::string& key, const std::string& def) const;
    long getInt(const std::string& key, long def) const;
    std::uint64_t getUint(const std::string& key, std::uint64_t def) const;
    double getDouble(const std::string& key, double def) const;
    bool getBool(const std::string& key, bool def) const;

    const std::map<std::string, std::string>& entries() const { return entries_; }

    /// Sorted key=value lines; parsing the snapshot reproduces the config.
    std::string snapshot() const;

  private:
    std::map<std::string, std::string> entries_;
    std::string source_ = "<inline>";
};

/// Writes the resolved-config snapshot of a run.
void writeSnapshot(const KeyValueConfig& cfg, const std::filesystem::path& path);

/// Seed precedence: explicit flag, then the config's "seed" key, then the
/// ORBITER360_SEED environment variable, then the fallback. A non-numeric
/// environment value -> ConfigError.
std::uint64_t resolveSeed(std::optional<std::uint64_t> flagSeed, const KeyValueConfig& cfg,
                          std::uint64_t fallback);

} // namespace orbiter360::cli
