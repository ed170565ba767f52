#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>

namespace defuse {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Flat `key = value` file. `#` starts a comment; blank lines are ignored.
class KeyValueConfig {
public:
    KeyValueConfig() = default;

    static KeyValueConfig parse(const std::string& text, const std::string& origin = "<string>");
    static KeyValueConfig load(const std::filesystem::path& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::optional<std::string> get(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    int get_int(const std::string& key, int fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    /// Required variants throw ConfigError when the key is missing or malformed.
    double require_double(const std::string& key) const;
    int require_int(const std::string& key) const;

    const std::map<std::string, std::string>& values() const { return values_; }
    std::string to_string() const;
    void save(const std::filesystem::path& path) const;

private:
    std::string origin_;
    std::map<std::string, std::string> values_;
};

}  // namespace defuse
