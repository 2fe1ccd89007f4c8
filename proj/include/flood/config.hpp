#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace flood {

/// One documented configuration key.
struct KeySpec {
    std::string key;
    std::string type;     // int, real, string, bool
    std::string fallback; // default value as text
    std::string help;
};

/// Every key accepted in a config file, across all subcommands.
const std::vector<KeySpec>& config_schema();

/// Flat `key = value` configuration. Lines starting with '#' and blank lines are ignored.
/// Parse and type errors raise ErrorCategory::config.
class Config {
public:
    Config() = default;

    static Config parse(const std::string& text, const std::string& source = "<text>");
    static Config load(const std::filesystem::path& path);

    /// Rejects keys absent from config_schema().
    void check_known() const;

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    /// Typed getters. Without an explicit fallback the schema default is used.
    std::string get_string(const std::string& key) const;
    double get_real(const std::string& key) const;
    long long get_int(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    /// Explicitly set keys, sorted, one `key = value` per line.
    std::string to_text() const;
    /// All schema keys with effective values (explicit or default), sorted.
    std::string effective_text() const;

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::string raw(const std::string& key) const;

    std::map<std::string, std::string> values_;
    std::string source_ = "<config>";
};

}  // namespace flood
