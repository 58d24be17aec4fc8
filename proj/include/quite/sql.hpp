#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

// Lightweight SQL text tooling for the PostgreSQL dialect: a lexer, a
// validating recursive-descent parser for the query subset the engine
// rewrites, and the structural facts other modules need (CTE references,
// relation aliases, top-level ORDER BY).
namespace quite::sql {

enum class TokenKind {
    identifier,
    quoted_identifier,
    number,
    string,
    param,
    op,
    lparen,
    rparen,
    lbracket,
    rbracket,
    comma,
    semicolon,
    dot,
    end,
};

struct Token {
    TokenKind kind = TokenKind::end;
    std::string text;
    std::size_t offset = 0;

    /// Case-insensitive keyword match for unquoted identifiers.
    [[nodiscard]] bool is_keyword(std::string_view kw) const noexcept;
};

class SyntaxError : public std::runtime_error {
public:
    SyntaxError(const std::string& message, std::size_t offset);
    [[nodiscard]] std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// Tokenizes SQL, dropping comments and whitespace. Throws SyntaxError on an
/// unterminated string, quoted identifier or block comment.
[[nodiscard]] std::vector<Token> lex(std::string_view sql);

struct CteFact {
    std::string name;
    std::string body;
    std::size_t references = 0;
    bool has_aggregate = false;
    bool materialized_keyword = false;
    bool not_materialized_keyword = false;
};

struct RelationRef {
    std::string name;
    std::string alias;
    bool is_cte = false;
};

struct QueryFacts {
    std::vector<CteFact> ctes;
    std::vector<RelationRef> relations;
    bool has_top_level_order_by = false;
    std::size_t statement_count = 0;

    [[nodiscard]] const CteFact* find_cte(std::string_view name) const;
    /// Base-table names referenced anywhere (CTE names excluded), deduplicated.
    [[nodiscard]] std::vector<std::string> base_tables() const;
};

/// Parses a single statement (optional trailing semicolon) and returns its
/// structural facts. Throws SyntaxError on grammar violations. The grammar is
/// a practical subset of PostgreSQL: constructs outside it are rejected even
/// if the server would accept them.
[[nodiscard]] QueryFacts analyze(std::string_view sql);

/// Non-throwing variant: the error message, or nullopt when the text parses.
[[nodiscard]] std::optional<std::string> grammar_error(std::string_view sql);

/// True when the outermost statement ends with an ORDER BY clause. Falls back
/// to a token scan at parenthesis depth 0 when the text is outside the grammar.
[[nodiscard]] bool has_top_level_order_by(std::string_view sql);

/// Splits on semicolons outside strings, comments and parentheses. Each piece
/// keeps its terminating semicolon; blank pieces are dropped.
[[nodiscard]] std::vector<std::string> split_statements(std::string_view sql);

/// Collapses whitespace runs, trims, and drops one trailing semicolon. Used to
/// decide whether an LLM changed a query.
[[nodiscard]] std::string normalize_whitespace(std::string_view sql);

/// Leading `/*+ ... */` block (after whitespace), including delimiters.
[[nodiscard]] std::optional<std::string> leading_hint_block(std::string_view sql);

[[nodiscard]] std::string to_lower(std::string_view s);
[[nodiscard]] std::string to_upper(std::string_view s);

}  // namespace quite::sql
