#include "quite/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "quite/sql.hpp"

namespace quite::config {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

Settings Settings::parse(const std::string& text, const std::string& origin) {
    Settings s;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string body = line;
        bool in_quotes = false;
        for (std::size_t i = 0; i < body.size(); ++i) {
            if (body[i] == '"') in_quotes = !in_quotes;
            if (body[i] == '#' && !in_quotes) {
                body.resize(i);
                break;
            }
        }
        body = trim(body);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw ConfigError(fmt::format("{}:{}: expected key = value", origin, lineno));
        std::string key = trim(body.substr(0, eq));
        std::string value = trim(body.substr(eq + 1));
        if (key.empty()) throw ConfigError(fmt::format("{}:{}: empty key", origin, lineno));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        s.values_[sql::to_lower(key)] = value;
    }
    return s;
}

Settings Settings::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

std::optional<std::string> Settings::get(const std::string& key) const {
    auto it = values_.find(sql::to_lower(key));
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

void Settings::set(std::string key, std::string value) { values_[sql::to_lower(key)] = std::move(value); }

std::optional<std::string> Settings::resolve(const std::string& key, const std::optional<std::string>& flag,
                                             const char* env_var) const {
    if (flag) return flag;
    if (env_var) {
        if (const char* v = std::getenv(env_var); v && *v) return std::string(v);
    }
    return get(key);
}

double Settings::get_double(const std::string& key, double fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    try {
        std::size_t used = 0;
        double d = std::stod(*v, &used);
        if (used != v->size()) throw std::invalid_argument(*v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError(fmt::format("{} is not a number: {}", key, *v));
    }
}

int Settings::get_int(const std::string& key, int fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    try {
        std::size_t used = 0;
        int i = std::stoi(*v, &used);
        if (used != v->size()) throw std::invalid_argument(*v);
        return i;
    } catch (const std::exception&) {
        throw ConfigError(fmt::format("{} is not an integer: {}", key, *v));
    }
}

bool Settings::get_bool(const std::string& key, bool fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    const auto s = sql::to_lower(*v);
    if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
    if (s == "false" || s == "no" || s == "off" || s == "0") return false;
    throw ConfigError(fmt::format("{} is not a boolean: {}", key, *v));
}

}  // namespace quite::config
