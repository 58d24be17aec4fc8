#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

// Prompt templates. The files under prompts/ are compiled in; a directory
// named by set_override_dir() or QUITE_PROMPT_DIR takes precedence per file.
namespace quite::prompts {

class TemplateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void set_override_dir(std::filesystem::path dir);

/// Template text by name (file stem). Throws TemplateError for unknown names.
[[nodiscard]] std::string load(std::string_view name);

[[nodiscard]] std::vector<std::string> names();

/// Substitutes every `{{key}}`. Throws TemplateError on a placeholder with no value.
[[nodiscard]] std::string render(std::string_view tmpl, const std::map<std::string, std::string>& vars);

/// load() followed by render().
[[nodiscard]] std::string fill(std::string_view name, const std::map<std::string, std::string>& vars);

}  // namespace quite::prompts
