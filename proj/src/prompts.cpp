#include "quite/prompts.hpp"

#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>

namespace quite::prompts {

namespace detail {
extern const std::pair<std::string_view, std::string_view> kEmbedded[];
extern const std::size_t kEmbeddedCount;
}  // namespace detail

namespace {

std::mutex g_mutex;
std::filesystem::path g_override;

std::filesystem::path override_dir() {
    std::lock_guard lock(g_mutex);
    if (!g_override.empty()) return g_override;
    if (const char* env = std::getenv("QUITE_PROMPT_DIR"); env && *env) return env;
    return {};
}

}  // namespace

void set_override_dir(std::filesystem::path dir) {
    std::lock_guard lock(g_mutex);
    g_override = std::move(dir);
}

std::string load(std::string_view name) {
    if (const auto dir = override_dir(); !dir.empty()) {
        const auto path = dir / (std::string(name) + ".txt");
        if (std::ifstream in(path); in) {
            std::ostringstream ss;
            ss << in.rdbuf();
            return ss.str();
        }
    }
    for (std::size_t i = 0; i < detail::kEmbeddedCount; ++i) {
        if (detail::kEmbedded[i].first == name) return std::string(detail::kEmbedded[i].second);
    }
    throw TemplateError("unknown prompt template: " + std::string(name));
}

std::vector<std::string> names() {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < detail::kEmbeddedCount; ++i) out.emplace_back(detail::kEmbedded[i].first);
    return out;
}

std::string render(std::string_view tmpl, const std::map<std::string, std::string>& vars) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t pos = 0;
    while (pos < tmpl.size()) {
        const auto open = tmpl.find("{{", pos);
        if (open == std::string_view::npos) {
            out.append(tmpl.substr(pos));
            break;
        }
        const auto close = tmpl.find("}}", open + 2);
        if (close == std::string_view::npos) throw TemplateError("unterminated placeholder in template");
        out.append(tmpl.substr(pos, open - pos));
        const std::string key(tmpl.substr(open + 2, close - open - 2));
        auto it = vars.find(key);
        if (it == vars.end()) throw TemplateError("no value for placeholder {{" + key + "}}");
        out += it->second;
        pos = close + 2;
    }
    return out;
}

std::string fill(std::string_view name, const std::map<std::string, std::string>& vars) {
    return render(load(name), vars);
}

}  // namespace quite::prompts
