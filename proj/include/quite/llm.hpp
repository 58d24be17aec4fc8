#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "quite/core.hpp"

namespace quite::llm {

enum class Role { system, user, assistant };

std::string_view to_string(Role role) noexcept;

struct ChatMessage {
    Role role;
    std::string content;

    ChatMessage(Role r, std::string c);
};

struct ProviderConfig {
    std::string endpoint;
    std::string model_name;
    std::string api_key;
    double temperature = 0.0;
    int max_output_tokens = 4096;
    std::chrono::milliseconds timeout{std::chrono::seconds(300)};
    int max_retries = 2;
    /// Total tokens this binding may consume over its lifetime; 0 disables the check.
    std::size_t token_budget = 0;
};

class TransportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class BudgetExceeded : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Chat-completion interface every agent speaks through.
class Provider {
public:
    virtual ~Provider() = default;
    /// Throws TransportError or BudgetExceeded.
    virtual std::string complete(std::span<const ChatMessage> messages, const ProviderConfig& config) = 0;
};

/// Deterministic provider driven by a script of canned responses.
///
/// A request is resolved in this order:
///   1. an entry pinned to the request's sequence position;
///   2. the first substring entry whose needle occurs in any message and
///      that still has uses left;
///   3. the next unconsumed sequential entry.
/// When nothing matches the request fails with BudgetExceeded.
class ScriptedMock final : public Provider {
public:
    struct Entry {
        std::optional<std::size_t> position;
        std::optional<std::string> contains;
        std::string response;
        /// Uses allowed for a substring entry; unlimited when empty.
        std::optional<std::size_t> times;
    };

    ScriptedMock() = default;
    explicit ScriptedMock(std::vector<Entry> entries);
    ScriptedMock(ScriptedMock&& other) noexcept
        : entries_(std::move(other.entries_)),
          uses_(std::move(other.uses_)),
          cursor_(other.cursor_),
          next_sequential_(other.next_sequential_) {}

    /// `{"responses": [{"position"?, "contains"?, "times"?, "response"}]}`;
    /// a bare array of entries is accepted too.
    static ScriptedMock from_json(const nlohmann::json& doc);
    static ScriptedMock from_file(const std::filesystem::path& path);

    ScriptedMock& at_position(std::size_t position, std::string response);
    ScriptedMock& when_contains(std::string needle, std::string response,
                                std::optional<std::size_t> times = std::nullopt);
    ScriptedMock& then(std::string response);

    std::string complete(std::span<const ChatMessage> messages, const ProviderConfig& config) override;

    [[nodiscard]] std::size_t requests_served() const;

private:
    mutable std::mutex mutex_;
    std::vector<Entry> entries_;
    std::vector<std::size_t> uses_;
    std::size_t cursor_ = 0;
    std::size_t next_sequential_ = 0;
};

/// OpenAI-compatible chat-completion client over HTTP(S).
class HttpChatClient final : public Provider {
public:
    HttpChatClient() = default;

    std::string complete(std::span<const ChatMessage> messages, const ProviderConfig& config) override;

    [[nodiscard]] std::size_t tokens_used() const;

    /// Request body in the wire format: {model, messages[{role, content}], temperature, max_tokens}.
    static nlohmann::json request_body(std::span<const ChatMessage> messages, const ProviderConfig& config);

    /// Extracts the assistant text. A separate `reasoning_content` field is
    /// folded back in as a leading <think> block so callers see one trace.
    static std::string parse_response(const nlohmann::json& body);

private:
    mutable std::mutex mutex_;
    std::size_t tokens_used_ = 0;
};

/// Reads QUITE_LLM_ENDPOINT / QUITE_LLM_KEY into a base config.
ProviderConfig config_from_environment(ProviderConfig base = {});

/// One logged exchange.
struct TranscriptRecord {
    std::string agent;
    std::vector<ChatMessage> request;
    std::string response;
    std::string error;
};

/// Append-only log of every prompt and response in a session.
class Transcript {
public:
    void append(TranscriptRecord record);
    [[nodiscard]] std::vector<TranscriptRecord> records() const;
    [[nodiscard]] std::size_t size() const;
    /// One JSON object per line.
    void write_jsonl(const std::filesystem::path& path) const;

private:
    mutable std::mutex mutex_;
    std::vector<TranscriptRecord> records_;
};

/// Binds a provider and config to a named agent and records each exchange.
class Binding {
public:
    Binding(std::string agent, std::shared_ptr<Provider> provider, ProviderConfig config,
            std::shared_ptr<Transcript> transcript = nullptr);

    std::string ask(std::span<const ChatMessage> messages) const;
    std::string ask(std::string system_prompt, std::string user_prompt) const;

    [[nodiscard]] const std::string& agent() const noexcept { return agent_; }
    [[nodiscard]] const ProviderConfig& config() const noexcept { return config_; }

private:
    std::string agent_;
    std::shared_ptr<Provider> provider_;
    ProviderConfig config_;
    std::shared_ptr<Transcript> transcript_;
};

struct SplitTrace {
    std::string thinking;
    std::string answer;
    bool has_boundary = false;
};

/// Splits a `<think>...</think>` prefix from the answer. Without the marker the
/// whole text is the answer.
[[nodiscard]] SplitTrace split_reasoning(std::string_view response);

/// Value of the first `TAG: value` line in the answer part of a response.
/// Matching ignores case and leading markdown decoration (`*`, `#`, `-`).
[[nodiscard]] std::optional<std::string> tagged_line(std::string_view response, std::string_view tag);

/// Every SQL statement in fenced code blocks, in document order; if there are
/// none, statements found by a leading-keyword scan.
[[nodiscard]] std::vector<SqlQuery> extract_sql(std::string_view response);

}  // namespace quite::llm
