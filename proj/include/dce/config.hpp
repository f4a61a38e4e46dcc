#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "dce/pipeline.hpp"

namespace dce::config {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Minimal TOML subset: [table.sub] headers, key = value pairs with string,
// integer, float and boolean values, # comments. Enough for the engine's
// config files; arrays and inline tables are not supported.
using TomlValue = std::variant<std::string, std::int64_t, double, bool>;

class TomlDocument {
public:
    void set(const std::string& key, TomlValue value);  // ConfigError on duplicates

    bool has(const std::string& key) const;
    const TomlValue* find(const std::string& key) const;

    std::string get_string(const std::string& key) const;
    std::int64_t get_int(const std::string& key) const;
    double get_double(const std::string& key) const;  // accepts integer values
    bool get_bool(const std::string& key) const;

    std::string get_string_or(const std::string& key, const std::string& fallback) const;
    std::int64_t get_int_or(const std::string& key, std::int64_t fallback) const;
    double get_double_or(const std::string& key, double fallback) const;
    bool get_bool_or(const std::string& key, bool fallback) const;

    /// Keys beginning "prefix." in lexicographic order.
    std::vector<std::string> keys_with_prefix(const std::string& prefix) const;
    const std::map<std::string, TomlValue>& entries() const { return values_; }

private:
    std::map<std::string, TomlValue> values_;  // flattened "table.key"
};

TomlDocument parse_toml(const std::string& text);  // ConfigError with line numbers
TomlDocument load_toml(const std::filesystem::path& path);

/// Builds a full PipelineConfig from a TOML file: [pipeline] and [geometry]
/// tables plus one [endpoints.KIND] table per specialist. Relative paths in
/// the file resolve against the file's directory. Loads the template library,
/// fixture store and routing table named by the file. Unknown keys are
/// rejected.
pipeline::PipelineConfig load_pipeline_config(const std::filesystem::path& path);

}  // namespace dce::config
