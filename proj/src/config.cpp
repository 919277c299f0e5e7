#include "fiberseg/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace fiberseg {

namespace {

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

[[noreturn]] void bad_value(const std::string& section, const std::string& key,
                            const std::string& value, const char* want) {
    throw ConfigError("[" + section + "] " + key + ": cannot parse '" + value + "' as " + want);
}

}  // namespace

bool ConfigFile::has(const std::string& section, const std::string& key) const {
    auto s = sections.find(section);
    return s != sections.end() && s->second.count(key) > 0;
}

std::string ConfigFile::get(const std::string& section, const std::string& key,
                            const std::string& fallback) const {
    auto s = sections.find(section);
    if (s == sections.end()) return fallback;
    auto k = s->second.find(key);
    return k == s->second.end() ? fallback : k->second;
}

std::string ConfigFile::require(const std::string& section, const std::string& key) const {
    if (!has(section, key))
        throw ConfigError("missing required key [" + section + "] " + key);
    return sections.at(section).at(key);
}

int64_t ConfigFile::get_int(const std::string& section, const std::string& key,
                            int64_t fallback) const {
    if (!has(section, key)) return fallback;
    const std::string v = sections.at(section).at(key);
    try {
        size_t pos = 0;
        const int64_t out = std::stoll(v, &pos);
        if (pos != v.size()) bad_value(section, key, v, "integer");
        return out;
    } catch (const std::logic_error&) {
        bad_value(section, key, v, "integer");
    }
}

double ConfigFile::get_double(const std::string& section, const std::string& key,
                              double fallback) const {
    if (!has(section, key)) return fallback;
    const std::string v = sections.at(section).at(key);
    try {
        size_t pos = 0;
        const double out = std::stod(v, &pos);
        if (pos != v.size()) bad_value(section, key, v, "number");
        return out;
    } catch (const std::logic_error&) {
        bad_value(section, key, v, "number");
    }
}

bool ConfigFile::get_bool(const std::string& section, const std::string& key,
                          bool fallback) const {
    if (!has(section, key)) return fallback;
    const std::string v = sections.at(section).at(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    bad_value(section, key, v, "boolean");
}

void ConfigFile::set(const std::string& section, const std::string& key,
                     const std::string& value) {
    sections[section][key] = value;
}

void ConfigFile::set_int(const std::string& section, const std::string& key, int64_t value) {
    set(section, key, std::to_string(value));
}

void ConfigFile::set_double(const std::string& section, const std::string& key, double value) {
    std::ostringstream os;
    os.precision(17);
    os << value;
    set(section, key, os.str());
}

void ConfigFile::set_bool(const std::string& section, const std::string& key, bool value) {
    set(section, key, value ? "true" : "false");
}

std::string ConfigFile::dump() const {
    std::ostringstream os;
    bool first = true;
    for (const auto& [section, keys] : sections) {
        if (keys.empty()) continue;
        if (!first) os << "\n";
        first = false;
        if (!section.empty()) os << "[" << section << "]\n";
        for (const auto& [k, v] : keys) os << k << " = " << v << "\n";
    }
    return os.str();
}

ConfigFile parse_config_text(const std::string& text, const std::string& origin) {
    ConfigFile out;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    auto fail = [&](const std::string& msg) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + msg);
    };
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail("unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty()) fail("empty section name");
            out.sections[section];  // record even if empty
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos) fail("expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) fail("empty key");
        out.sections[section][key] = trim(line.substr(eq + 1));
    }
    return out;
}

ConfigFile parse_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read config: " + path.string());
    std::ostringstream buf;
    buf << f.rdbuf();
    return parse_config_text(buf.str(), path.string());
}

void write_config(const ConfigFile& cfg, const std::filesystem::path& path) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp);
        if (!f) throw IoError("cannot write config: " + path.string());
        f << cfg.dump();
        if (!f) throw IoError("short write: " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace fiberseg
