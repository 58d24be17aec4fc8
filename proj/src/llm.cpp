#include "quite/llm.hpp"

#include <cstdlib>
#include <fstream>
#include <regex>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include "quite/sql.hpp"

namespace quite::llm {

std::string_view to_string(Role role) noexcept {
    switch (role) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    return "user";
}

ChatMessage::ChatMessage(Role r, std::string c) : role(r), content(std::move(c)) {
    if (content.empty()) throw std::invalid_argument("chat message content must be non-empty");
}

// ---------------------------------------------------------------------------
// ScriptedMock

ScriptedMock::ScriptedMock(std::vector<Entry> entries)
    : entries_(std::move(entries)), uses_(entries_.size(), 0) {}

ScriptedMock ScriptedMock::from_json(const nlohmann::json& doc) {
    const nlohmann::json& list = doc.is_array() ? doc : doc.at("responses");
    std::vector<Entry> entries;
    for (const auto& item : list) {
        Entry e;
        if (item.is_string()) {
            e.response = item.get<std::string>();
        } else {
            e.response = item.at("response").get<std::string>();
            if (item.contains("position")) e.position = item.at("position").get<std::size_t>();
            if (item.contains("contains")) e.contains = item.at("contains").get<std::string>();
            if (item.contains("times")) e.times = item.at("times").get<std::size_t>();
        }
        entries.push_back(std::move(e));
    }
    return ScriptedMock(std::move(entries));
}

ScriptedMock ScriptedMock::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open mock script " + path.string());
    return from_json(nlohmann::json::parse(in));
}

ScriptedMock& ScriptedMock::at_position(std::size_t position, std::string response) {
    std::lock_guard lock(mutex_);
    entries_.push_back(Entry{position, std::nullopt, std::move(response), std::nullopt});
    uses_.push_back(0);
    return *this;
}

ScriptedMock& ScriptedMock::when_contains(std::string needle, std::string response,
                                          std::optional<std::size_t> times) {
    std::lock_guard lock(mutex_);
    entries_.push_back(Entry{std::nullopt, std::move(needle), std::move(response), times});
    uses_.push_back(0);
    return *this;
}

ScriptedMock& ScriptedMock::then(std::string response) {
    std::lock_guard lock(mutex_);
    entries_.push_back(Entry{std::nullopt, std::nullopt, std::move(response), std::nullopt});
    uses_.push_back(0);
    return *this;
}

std::string ScriptedMock::complete(std::span<const ChatMessage> messages, const ProviderConfig&) {
    if (messages.empty()) throw std::invalid_argument("complete() needs at least one message");
    std::lock_guard lock(mutex_);
    const std::size_t request = cursor_++;

    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].position && *entries_[i].position == request) {
            ++uses_[i];
            return entries_[i].response;
        }
    }
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const Entry& e = entries_[i];
        if (!e.contains || e.position) continue;
        if (e.times && uses_[i] >= *e.times) continue;
        const bool hit = std::any_of(messages.begin(), messages.end(), [&](const ChatMessage& m) {
            return m.content.find(*e.contains) != std::string::npos;
        });
        if (hit) {
            ++uses_[i];
            return e.response;
        }
    }
    for (; next_sequential_ < entries_.size(); ++next_sequential_) {
        const Entry& e = entries_[next_sequential_];
        if (e.position || e.contains) continue;
        ++uses_[next_sequential_];
        return entries_[next_sequential_++].response;
    }
    throw BudgetExceeded(fmt::format("mock script exhausted at request {}", request));
}

std::size_t ScriptedMock::requests_served() const {
    std::lock_guard lock(mutex_);
    return cursor_;
}

// ---------------------------------------------------------------------------
// HttpChatClient

namespace {

struct ParsedUrl {
    std::string scheme_host_port;
    std::string path;
};

ParsedUrl parse_url(const std::string& url) {
    static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re)) throw TransportError("invalid LLM endpoint URL: " + url);
    std::string path = m[2].matched ? m[2].str() : std::string();
    if (path.empty() || path == "/") path = "/v1/chat/completions";
    return {m[1].str(), path};
}

bool retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

}  // namespace

nlohmann::json HttpChatClient::request_body(std::span<const ChatMessage> messages, const ProviderConfig& config) {
    nlohmann::json msgs = nlohmann::json::array();
    for (const auto& m : messages) {
        msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    }
    return {
        {"model", config.model_name},
        {"messages", std::move(msgs)},
        {"temperature", config.temperature},
        {"max_tokens", config.max_output_tokens},
    };
}

std::string HttpChatClient::parse_response(const nlohmann::json& body) {
    const auto& choices = body.at("choices");
    if (!choices.is_array() || choices.empty()) throw TransportError("response has no choices");
    const auto& message = choices.at(0).at("message");
    std::string content = message.value("content", std::string());
    if (message.contains("reasoning_content") && message["reasoning_content"].is_string()) {
        const auto reasoning = message["reasoning_content"].get<std::string>();
        if (!reasoning.empty()) content = "<think>\n" + reasoning + "\n</think>\n" + content;
    }
    return content;
}

std::string HttpChatClient::complete(std::span<const ChatMessage> messages, const ProviderConfig& config) {
    if (messages.empty()) throw std::invalid_argument("complete() needs at least one message");
    if (config.token_budget > 0 && tokens_used() >= config.token_budget) {
        throw BudgetExceeded(fmt::format("token budget of {} exhausted", config.token_budget));
    }
    const ParsedUrl url = parse_url(config.endpoint);
    const std::string payload = request_body(messages, config).dump();

    std::string last_error;
    for (int attempt = 0; attempt <= config.max_retries; ++attempt) {
        if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(250 * (1 << (attempt - 1))));
        httplib::Client client(url.scheme_host_port);
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config.timeout).count();
        client.set_connection_timeout(std::max<long>(1, static_cast<long>(secs)), 0);
        client.set_read_timeout(std::max<long>(1, static_cast<long>(secs)), 0);
        client.set_write_timeout(std::max<long>(1, static_cast<long>(secs)), 0);
        httplib::Headers headers;
        if (!config.api_key.empty()) headers.emplace("Authorization", "Bearer " + config.api_key);

        auto res = client.Post(url.path, headers, payload, "application/json");
        if (!res) {
            last_error = "transport failure: " + httplib::to_string(res.error());
            spdlog::warn("LLM request attempt {} failed: {}", attempt + 1, last_error);
            continue;
        }
        if (res->status != 200) {
            last_error = fmt::format("HTTP {}: {}", res->status, res->body.substr(0, 512));
            if (retryable_status(res->status)) {
                spdlog::warn("LLM request attempt {} failed: {}", attempt + 1, last_error);
                continue;
            }
            throw TransportError(last_error);
        }
        nlohmann::json body;
        try {
            body = nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
            throw TransportError(std::string("malformed response body: ") + e.what());
        }
        if (body.contains("usage") && body["usage"].contains("total_tokens")) {
            std::lock_guard lock(mutex_);
            tokens_used_ += body["usage"]["total_tokens"].get<std::size_t>();
        }
        try {
            return parse_response(body);
        } catch (const nlohmann::json::exception& e) {
            throw TransportError(std::string("unexpected response shape: ") + e.what());
        }
    }
    throw TransportError(fmt::format("giving up after {} attempts: {}", config.max_retries + 1, last_error));
}

std::size_t HttpChatClient::tokens_used() const {
    std::lock_guard lock(mutex_);
    return tokens_used_;
}

ProviderConfig config_from_environment(ProviderConfig base) {
    if (const char* endpoint = std::getenv("QUITE_LLM_ENDPOINT"); endpoint && *endpoint) base.endpoint = endpoint;
    if (const char* key = std::getenv("QUITE_LLM_KEY"); key && *key) base.api_key = key;
    return base;
}

// ---------------------------------------------------------------------------
// Transcript and Binding

void Transcript::append(TranscriptRecord record) {
    std::lock_guard lock(mutex_);
    records_.push_back(std::move(record));
}

std::vector<TranscriptRecord> Transcript::records() const {
    std::lock_guard lock(mutex_);
    return records_;
}

std::size_t Transcript::size() const {
    std::lock_guard lock(mutex_);
    return records_.size();
}

void Transcript::write_jsonl(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write transcript " + path.string());
    for (const auto& r : records()) {
        nlohmann::json msgs = nlohmann::json::array();
        for (const auto& m : r.request) msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
        nlohmann::json line{{"agent", r.agent}, {"request", msgs}, {"response", r.response}};
        if (!r.error.empty()) line["error"] = r.error;
        out << line.dump() << '\n';
    }
}

Binding::Binding(std::string agent, std::shared_ptr<Provider> provider, ProviderConfig config,
                 std::shared_ptr<Transcript> transcript)
    : agent_(std::move(agent)),
      provider_(std::move(provider)),
      config_(std::move(config)),
      transcript_(std::move(transcript)) {
    if (!provider_) throw std::invalid_argument("binding needs a provider");
}

std::string Binding::ask(std::span<const ChatMessage> messages) const {
    try {
        std::string response = provider_->complete(messages, config_);
        if (transcript_) {
            transcript_->append({agent_, {messages.begin(), messages.end()}, response, {}});
        }
        return response;
    } catch (const std::exception& e) {
        if (transcript_) transcript_->append({agent_, {messages.begin(), messages.end()}, {}, e.what()});
        throw;
    }
}

std::string Binding::ask(std::string system_prompt, std::string user_prompt) const {
    std::vector<ChatMessage> messages;
    if (!system_prompt.empty()) messages.emplace_back(Role::system, std::move(system_prompt));
    messages.emplace_back(Role::user, std::move(user_prompt));
    return ask(messages);
}

// ---------------------------------------------------------------------------
// Response parsing

SplitTrace split_reasoning(std::string_view response) {
    const auto open = response.find("<think>");
    const auto close = response.find("</think>");
    if (close == std::string_view::npos) return {std::string(), std::string(response), false};
    const std::size_t start = open == std::string_view::npos || open > close ? 0 : open + 7;
    SplitTrace out;
    out.thinking = std::string(response.substr(start, close - start));
    out.answer = std::string(response.substr(close + 8));
    out.has_boundary = true;
    auto trim = [](std::string& s) {
        const auto a = s.find_first_not_of(" \t\r\n");
        const auto b = s.find_last_not_of(" \t\r\n");
        s = a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    trim(out.thinking);
    trim(out.answer);
    return out;
}

std::optional<std::string> tagged_line(std::string_view response, std::string_view tag) {
    const std::string answer = split_reasoning(response).answer;
    const std::string wanted = sql::to_upper(tag);
    std::size_t pos = 0;
    while (pos <= answer.size()) {
        auto end = answer.find('\n', pos);
        if (end == std::string::npos) end = answer.size();
        std::string_view line(answer.data() + pos, end - pos);
        while (!line.empty() && (line.front() == ' ' || line.front() == '*' || line.front() == '#' ||
                                 line.front() == '-' || line.front() == '\t')) {
            line.remove_prefix(1);
        }
        if (line.size() > wanted.size() && sql::to_upper(line.substr(0, wanted.size())) == wanted) {
            std::string_view rest = line.substr(wanted.size());
            while (!rest.empty() && (rest.front() == '*' || rest.front() == ' ')) rest.remove_prefix(1);
            if (!rest.empty() && rest.front() == ':') {
                rest.remove_prefix(1);
                std::string value(rest);
                const auto a = value.find_first_not_of(" *\t");
                const auto b = value.find_last_not_of(" *\t\r");
                return a == std::string::npos ? std::string() : value.substr(a, b - a + 1);
            }
        }
        pos = end + 1;
    }
    return std::nullopt;
}

namespace {

bool starts_with_statement_keyword(std::string_view text) {
    std::vector<sql::Token> toks;
    try {
        toks = sql::lex(text);
    } catch (const sql::SyntaxError&) {
        return false;
    }
    std::size_t k = 0;
    while (k < toks.size() && toks[k].kind == sql::TokenKind::lparen) ++k;
    const auto& t = toks[k];
    return t.is_keyword("select") || t.is_keyword("with") || t.is_keyword("insert") || t.is_keyword("update") ||
           t.is_keyword("delete") || t.is_keyword("values");
}

void push_statements(std::string_view block, std::vector<SqlQuery>& out) {
    for (auto& stmt : sql::split_statements(block)) {
        // Keep a leading hint block attached to its statement.
        std::string_view body = stmt;
        if (auto hint = sql::leading_hint_block(body)) body.remove_prefix(body.find(*hint) + hint->size());
        if (starts_with_statement_keyword(body)) out.emplace_back(std::move(stmt));
    }
}

bool line_starts_keyword(std::string_view line) {
    static const std::array<std::string_view, 5> kws{"SELECT", "WITH", "INSERT", "UPDATE", "DELETE"};
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string_view::npos) return false;
    line.remove_prefix(first);
    for (auto kw : kws) {
        if (line.substr(0, kw.size()) == kw &&
            (line.size() == kw.size() || !std::isalnum(static_cast<unsigned char>(line[kw.size()])))) {
            return true;
        }
    }
    return false;
}

}  // namespace

std::vector<SqlQuery> extract_sql(std::string_view response) {
    std::vector<SqlQuery> out;
    bool saw_fence = false;
    std::size_t pos = 0;
    while (true) {
        const auto open = response.find("```", pos);
        if (open == std::string_view::npos) break;
        const auto line_end = response.find('\n', open);
        if (line_end == std::string_view::npos) break;
        const auto close = response.find("```", line_end);
        if (close == std::string_view::npos) break;
        saw_fence = true;
        const std::string tag = sql::to_lower(response.substr(open + 3, line_end - open - 3));
        const bool sql_like = tag.find_first_not_of(" \t\r") == std::string::npos ||
                              tag.find("sql") != std::string::npos || tag.find("postgres") != std::string::npos;
        if (sql_like) push_statements(response.substr(line_end + 1, close - line_end - 1), out);
        pos = close + 3;
    }
    if (saw_fence && !out.empty()) return out;

    // Leading-keyword scan: an upper-case statement keyword at the start of a
    // line opens a statement that runs to a top-level semicolon, a blank line
    // or the end of the text.
    std::size_t line_start = 0;
    while (line_start < response.size()) {
        auto line_end = response.find('\n', line_start);
        if (line_end == std::string_view::npos) line_end = response.size();
        const std::string_view line = response.substr(line_start, line_end - line_start);
        if (!line_starts_keyword(line)) {
            line_start = line_end + 1;
            continue;
        }
        std::size_t end = line_start;
        int depth = 0;
        bool in_str = false;
        std::size_t stop = response.size();
        for (; end < response.size(); ++end) {
            const char c = response[end];
            if (c == '\'') in_str = !in_str;
            if (in_str) continue;
            if (c == '(') ++depth;
            if (c == ')') --depth;
            if (c == ';' && depth <= 0) {
                stop = end + 1;
                break;
            }
            if (c == '\n' && end + 1 < response.size()) {
                const auto next_nl = response.find('\n', end + 1);
                const auto next_line =
                    response.substr(end + 1, (next_nl == std::string_view::npos ? response.size() : next_nl) - end - 1);
                if (next_line.find_first_not_of(" \t\r") == std::string_view::npos) {
                    stop = end;
                    break;
                }
            }
        }
        std::string_view stmt = response.substr(line_start, stop - line_start);
        const auto a = stmt.find_first_not_of(" \t\r\n");
        const auto b = stmt.find_last_not_of(" \t\r\n");
        if (a != std::string_view::npos) out.emplace_back(std::string(stmt.substr(a, b - a + 1)));
        line_start = stop + 1;
    }
    return out;
}

}  // namespace quite::llm
