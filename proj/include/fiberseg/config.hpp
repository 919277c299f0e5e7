#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "fiberseg/errors.hpp"

namespace fiberseg {

// UTF-8 key=value configuration with [section] headers. '#' and ';' start
// comments; keys before any header live in the "" section. Also used for run
// manifests (sections written sorted, so equal configs serialize identically).
struct ConfigFile {
    std::map<std::string, std::map<std::string, std::string>> sections;

    bool has(const std::string& section, const std::string& key) const;
    std::string get(const std::string& section, const std::string& key,
                    const std::string& fallback) const;
    std::string require(const std::string& section, const std::string& key) const;
    int64_t get_int(const std::string& section, const std::string& key, int64_t fallback) const;
    double get_double(const std::string& section, const std::string& key, double fallback) const;
    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;

    void set(const std::string& section, const std::string& key, const std::string& value);
    void set_int(const std::string& section, const std::string& key, int64_t value);
    void set_double(const std::string& section, const std::string& key, double value);
    void set_bool(const std::string& section, const std::string& key, bool value);

    std::string dump() const;
};

// Parse errors carry "<origin>:<line>: <message>".
ConfigFile parse_config_text(const std::string& text, const std::string& origin = "<string>");
ConfigFile parse_config(const std::filesystem::path& path);

// Atomic: writes to <path>.tmp and renames on success.
void write_config(const ConfigFile& cfg, const std::filesystem::path& path);

}  // namespace fiberseg
