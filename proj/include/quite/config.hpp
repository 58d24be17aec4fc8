#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>

namespace quite::config {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// `key = value` lines; `#` starts a comment, blank lines are ignored and
/// values may be wrapped in double quotes. Keys are dotted lower-case names
/// such as `llm.model`.
class Settings {
public:
    Settings() = default;
    static Settings parse(const std::string& text, const std::string& origin = "<string>");
    /// Throws ConfigError when the file cannot be read or a line is malformed.
    static Settings load(const std::filesystem::path& path);

    [[nodiscard]] std::optional<std::string> get(const std::string& key) const;
    void set(std::string key, std::string value);
    [[nodiscard]] const std::map<std::string, std::string>& values() const noexcept { return values_; }

    /// Command-line value, else the environment variable, else the file.
    [[nodiscard]] std::optional<std::string> resolve(const std::string& key, const std::optional<std::string>& flag,
                                                     const char* env_var = nullptr) const;

    [[nodiscard]] double get_double(const std::string& key, double fallback) const;
    [[nodiscard]] int get_int(const std::string& key, int fallback) const;
    [[nodiscard]] bool get_bool(const std::string& key, bool fallback) const;

private:
    std::map<std::string, std::string> values_;
};

}  // namespace quite::config
