#include "defuse/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace defuse {
namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) {
        return {};
    }
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& origin) {
    KeyValueConfig cfg;
    cfg.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        }
        cfg.values_[key] = trim(line.substr(eq + 1));
    }
    return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path.string());
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str(), path.string());
}

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
    return get(key).value_or(fallback);
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
    return has(key) ? require_double(key) : fallback;
}

int KeyValueConfig::get_int(const std::string& key, int fallback) const {
    return has(key) ? require_int(key) : fallback;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
    const auto value = get(key);
    if (!value) {
        return fallback;
    }
    if (*value == "1" || *value == "true" || *value == "on" || *value == "yes") {
        return true;
    }
    if (*value == "0" || *value == "false" || *value == "off" || *value == "no") {
        return false;
    }
    throw ConfigError(origin_ + ": key '" + key + "' is not a boolean: " + *value);
}

double KeyValueConfig::require_double(const std::string& key) const {
    const auto value = get(key);
    if (!value) {
        throw ConfigError(origin_ + ": missing key '" + key + "'");
    }
    try {
        std::size_t used = 0;
        const double d = std::stod(*value, &used);
        if (used != value->size()) {
            throw std::invalid_argument(key);
        }
        return d;
    } catch (const std::exception&) {
        throw ConfigError(origin_ + ": key '" + key + "' is not a number: " + *value);
    }
}

int KeyValueConfig::require_int(const std::string& key) const {
    const auto value = get(key);
    if (!value) {
        throw ConfigError(origin_ + ": missing key '" + key + "'");
    }
    int out = 0;
    const auto* first = value->data();
    const auto* last = first + value->size();
    const auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc() || ptr != last) {
        throw ConfigError(origin_ + ": key '" + key + "' is not an integer: " + *value);
    }
    return out;
}

std::string KeyValueConfig::to_string() const {
    std::ostringstream out;
    for (const auto& [key, value] : values_) {
        out << key << " = " << value << '\n';
    }
    return out.str();
}

void KeyValueConfig::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) {
        throw ConfigError("cannot write config file " + path.string());
    }
    out << to_string();
}

}  // namespace defuse
