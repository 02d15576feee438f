#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

namespace blend {

/// Invalid or missing configuration value. The message names the field.
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& field, const std::string& detail)
        : std::runtime_error("config field '" + field + "': " + detail), field_(field) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

namespace yaml {

YAML::Node parse(const std::string& text, const std::string& origin);
YAML::Node load_file(const std::string& path);

template <typename V>
V get(const YAML::Node& node, const std::string& key, const std::string& path) {
    const std::string field = path.empty() ? key : path + "." + key;
    const YAML::Node child = node[key];
    if (!child) throw ConfigError(field, "missing");
    try {
        return child.as<V>();
    } catch (const YAML::Exception& e) {
        throw ConfigError(field, std::string("wrong type: ") + e.what());
    }
}

template <typename V>
V get_or(const YAML::Node& node, const std::string& key, const std::string& path, V fallback) {
    if (!node[key]) return fallback;
    return get<V>(node, key, path);
}

/// Rejects keys outside `allowed`.
void check_keys(const YAML::Node& node, const std::vector<std::string>& allowed, const std::string& path);

/// Applies "a.b.c=value" to a mapping, creating intermediate maps. The value
/// is parsed as YAML so lists and numbers keep their type.
void apply_override(YAML::Node& root, const std::string& assignment);

std::string emit(const YAML::Node& node);

}  // namespace yaml
}  // namespace blend
