#include "quite/sql.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <set>

#include <fmt/format.h>

namespace quite::sql {

namespace {

bool ieq(std::string_view a, std::string_view b) noexcept {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(a[i])) != std::tolower(static_cast<unsigned char>(b[i]))) {
            return false;
        }
    }
    return true;
}

bool is_ident_start(char c) noexcept {
    const auto u = static_cast<unsigned char>(c);
    return std::isalpha(u) || c == '_' || u >= 0x80;
}

bool is_ident_char(char c) noexcept {
    const auto u = static_cast<unsigned char>(c);
    return std::isalnum(u) || c == '_' || c == '$' || u >= 0x80;
}

bool is_op_char(char c) noexcept {
    return std::string_view("+-*/<>=~!@#%^&|`?").find(c) != std::string_view::npos;
}

class Lexer {
public:
    explicit Lexer(std::string_view sql) : s_(sql) {}

    std::vector<Token> run() {
        std::vector<Token> out;
        while (true) {
            skip_space_and_comments();
            if (pos_ >= s_.size()) break;
            out.push_back(next());
        }
        out.push_back(Token{TokenKind::end, "", s_.size()});
        return out;
    }

private:
    char peek(std::size_t ahead = 0) const noexcept {
        return pos_ + ahead < s_.size() ? s_[pos_ + ahead] : '\0';
    }

    void skip_space_and_comments() {
        while (pos_ < s_.size()) {
            const char c = s_[pos_];
            if (std::isspace(static_cast<unsigned char>(c))) {
                ++pos_;
            } else if (c == '-' && peek(1) == '-') {
                while (pos_ < s_.size() && s_[pos_] != '\n') ++pos_;
            } else if (c == '/' && peek(1) == '*') {
                skip_block_comment();
            } else {
                break;
            }
        }
    }

    void skip_block_comment() {
        const std::size_t start = pos_;
        int depth = 0;
        while (pos_ < s_.size()) {
            if (s_[pos_] == '/' && peek(1) == '*') {
                ++depth;
                pos_ += 2;
            } else if (s_[pos_] == '*' && peek(1) == '/') {
                --depth;
                pos_ += 2;
                if (depth == 0) return;
            } else {
                ++pos_;
            }
        }
        throw SyntaxError("unterminated /* comment", start);
    }

    Token next() {
        const std::size_t start = pos_;
        const char c = s_[pos_];

        if ((c == 'E' || c == 'e') && peek(1) == '\'') {
            ++pos_;
            return quoted_string(start, true);
        }
        if ((c == 'B' || c == 'b' || c == 'X' || c == 'x' || c == 'N' || c == 'n') && peek(1) == '\'') {
            ++pos_;
            return quoted_string(start, false);
        }
        if (is_ident_start(c)) {
            while (pos_ < s_.size() && is_ident_char(s_[pos_])) ++pos_;
            return Token{TokenKind::identifier, std::string(s_.substr(start, pos_ - start)), start};
        }
        if (c == '"') return quoted_identifier(start);
        if (c == '\'') return quoted_string(start, false);
        if (c == '$') {
            if (std::isdigit(static_cast<unsigned char>(peek(1)))) {
                ++pos_;
                while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
                return Token{TokenKind::param, std::string(s_.substr(start, pos_ - start)), start};
            }
            return dollar_string(start);
        }
        if (std::isdigit(static_cast<unsigned char>(c)) ||
            (c == '.' && std::isdigit(static_cast<unsigned char>(peek(1))))) {
            return number(start);
        }
        switch (c) {
            case '(': ++pos_; return Token{TokenKind::lparen, "(", start};
            case ')': ++pos_; return Token{TokenKind::rparen, ")", start};
            case '[': ++pos_; return Token{TokenKind::lbracket, "[", start};
            case ']': ++pos_; return Token{TokenKind::rbracket, "]", start};
            case ',': ++pos_; return Token{TokenKind::comma, ",", start};
            case ';': ++pos_; return Token{TokenKind::semicolon, ";", start};
            case '.': ++pos_; return Token{TokenKind::dot, ".", start};
            case ':':
                if (peek(1) == ':') {
                    pos_ += 2;
                    return Token{TokenKind::op, "::", start};
                }
                ++pos_;
                return Token{TokenKind::op, ":", start};
            default: break;
        }
        if (is_op_char(c)) return operator_token(start);
        throw SyntaxError(fmt::format("unexpected character '{}'", c), start);
    }

    Token quoted_string(std::size_t start, bool backslash_escapes) {
        ++pos_;  // opening quote
        while (pos_ < s_.size()) {
            const char c = s_[pos_];
            if (backslash_escapes && c == '\\') {
                pos_ += 2;
                continue;
            }
            if (c == '\'') {
                if (peek(1) == '\'') {
                    pos_ += 2;
                    continue;
                }
                ++pos_;
                return Token{TokenKind::string, std::string(s_.substr(start, pos_ - start)), start};
            }
            ++pos_;
        }
        throw SyntaxError("unterminated quoted string", start);
    }

    Token quoted_identifier(std::size_t start) {
        ++pos_;
        std::string name;
        while (pos_ < s_.size()) {
            if (s_[pos_] == '"') {
                if (peek(1) == '"') {
                    name.push_back('"');
                    pos_ += 2;
                    continue;
                }
                ++pos_;
                if (name.empty()) throw SyntaxError("zero-length delimited identifier", start);
                return Token{TokenKind::quoted_identifier, name, start};
            }
            name.push_back(s_[pos_++]);
        }
        throw SyntaxError("unterminated quoted identifier", start);
    }

    Token dollar_string(std::size_t start) {
        std::size_t p = pos_ + 1;
        while (p < s_.size() && is_ident_char(s_[p]) && s_[p] != '$') ++p;
        if (p >= s_.size() || s_[p] != '$') throw SyntaxError("unexpected '$'", start);
        const std::string_view tag = s_.substr(pos_, p - pos_ + 1);
        const std::size_t close = s_.find(tag, p + 1);
        if (close == std::string_view::npos) throw SyntaxError("unterminated dollar-quoted string", start);
        pos_ = close + tag.size();
        return Token{TokenKind::string, std::string(s_.substr(start, pos_ - start)), start};
    }

    Token number(std::size_t start) {
        auto digits = [&] {
            while (pos_ < s_.size() && (std::isdigit(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) ++pos_;
        };
        digits();
        if (peek() == '.' && peek(1) != '.') {
            ++pos_;
            digits();
        }
        if ((peek() == 'e' || peek() == 'E') &&
            (std::isdigit(static_cast<unsigned char>(peek(1))) ||
             ((peek(1) == '+' || peek(1) == '-') && std::isdigit(static_cast<unsigned char>(peek(2)))))) {
            pos_ += 2;
            digits();
        }
        if (pos_ < s_.size() && is_ident_start(s_[pos_])) {
            throw SyntaxError("trailing junk after numeric literal", start);
        }
        return Token{TokenKind::number, std::string(s_.substr(start, pos_ - start)), start};
    }

    Token operator_token(std::size_t start) {
        std::size_t end = pos_;
        while (end < s_.size() && is_op_char(s_[end])) {
            if (end > pos_ && ((s_[end] == '-' && end + 1 < s_.size() && s_[end + 1] == '-') ||
                               (s_[end] == '/' && end + 1 < s_.size() && s_[end + 1] == '*'))) {
                break;
            }
            ++end;
        }
        // An operator may end in + or - only if it contains one of ~!@#%^&|`?
        std::string_view op = s_.substr(pos_, end - pos_);
        if (op.size() > 1 && op.find_first_of("~!@#%^&|`?") == std::string_view::npos) {
            while (op.size() > 1 && (op.back() == '+' || op.back() == '-')) op.remove_suffix(1);
        }
        pos_ += op.size();
        return Token{TokenKind::op, std::string(op), start};
    }

    std::string_view s_;
    std::size_t pos_ = 0;
};

const std::set<std::string, std::less<>>& reserved_words() {
    static const std::set<std::string, std::less<>> words{
        "all", "and", "any", "array", "as", "asc", "between", "both", "case", "cast", "check", "collate",
        "column", "constraint", "create", "cross", "current_date", "current_time", "current_timestamp",
        "default", "desc", "distinct", "do", "else", "end", "except", "exists", "false", "fetch", "for",
        "foreign", "from", "full", "grant", "group", "having", "ilike", "in", "inner", "intersect", "into",
        "is", "isnull", "join", "lateral", "leading", "left", "like", "limit", "natural", "not", "notnull",
        "null", "offset", "on", "only", "or", "order", "outer", "primary", "references", "returning",
        "right", "select", "similar", "some", "symmetric", "table", "then", "to", "trailing", "true",
        "union", "unique", "using", "values", "when", "where", "window", "with",
    };
    return words;
}

bool is_reserved(std::string_view word) {
    return reserved_words().contains(to_lower(word));
}

bool is_aggregate_name(std::string_view name) {
    static const std::array<std::string_view, 12> aggs{"count",   "sum",       "avg",      "min",
                                                       "max",     "array_agg", "string_agg", "bool_and",
                                                       "bool_or", "every",     "stddev",   "variance"};
    return std::any_of(aggs.begin(), aggs.end(), [&](std::string_view a) { return ieq(a, name); });
}

class Parser {
public:
    Parser(std::string_view sql, std::vector<Token> tokens) : sql_(sql), toks_(std::move(tokens)) {}

    QueryFacts parse_single() {
        statement(0);
        facts_.statement_count = 1;
        if (at(TokenKind::semicolon)) advance();
        if (!at(TokenKind::end)) {
            if (at(TokenKind::semicolon) || peek_starts_statement()) {
                fail("multiple statements are not supported");
            }
            fail(fmt::format("syntax error at or near \"{}\"", cur().text));
        }
        return std::move(facts_);
    }

private:
    // ---- token helpers -------------------------------------------------
    const Token& cur() const { return toks_[i_]; }
    const Token& look(std::size_t ahead) const {
        return toks_[std::min(i_ + ahead, toks_.size() - 1)];
    }
    bool at(TokenKind k) const { return cur().kind == k; }
    bool at_kw(std::string_view kw) const { return cur().is_keyword(kw); }
    bool at_op(std::string_view op) const { return cur().kind == TokenKind::op && cur().text == op; }
    void advance() {
        if (!at(TokenKind::end)) ++i_;
    }
    bool accept_kw(std::string_view kw) {
        if (at_kw(kw)) {
            advance();
            return true;
        }
        return false;
    }
    bool accept(TokenKind k) {
        if (at(k)) {
            advance();
            return true;
        }
        return false;
    }
    void expect_kw(std::string_view kw) {
        if (!accept_kw(kw)) fail(fmt::format("expected {}", to_upper(kw)));
    }
    void expect(TokenKind k, std::string_view what) {
        if (!accept(k)) fail(fmt::format("expected {}", what));
    }
    [[noreturn]] void fail(const std::string& msg) const {
        if (at(TokenKind::end)) throw SyntaxError(msg + " at end of input", cur().offset);
        throw SyntaxError(fmt::format("{} at or near \"{}\"", msg, cur().text), cur().offset);
    }
    bool peek_starts_statement() const {
        return at_kw("select") || at_kw("with") || at_kw("insert") || at_kw("update") || at_kw("delete") ||
               at_kw("values");
    }
    bool at_name() const {
        return at(TokenKind::quoted_identifier) || (at(TokenKind::identifier) && !is_reserved(cur().text));
    }
    std::string name(std::string_view what) {
        if (at(TokenKind::quoted_identifier)) {
            std::string n = cur().text;
            advance();
            return n;
        }
        if (at(TokenKind::identifier) && !is_reserved(cur().text)) {
            std::string n = to_lower(cur().text);
            advance();
            return n;
        }
        fail(fmt::format("expected {}", what));
    }
    // Column labels after AS may be any identifier, reserved or not.
    std::string label() {
        if (at(TokenKind::identifier) || at(TokenKind::quoted_identifier)) {
            std::string n = at(TokenKind::identifier) ? to_lower(cur().text) : cur().text;
            advance();
            return n;
        }
        fail("expected alias");
    }

    // ---- statements ----------------------------------------------------
    void statement(int depth) {
        const std::size_t scope_mark = ctes_in_scope_.size();
        if (at_kw("with")) with_clause(depth);
        if (at_kw("select") || at_kw("values") || at(TokenKind::lparen)) {
            select_stmt(depth);
        } else if (at_kw("insert")) {
            insert_stmt();
        } else if (at_kw("update")) {
            update_stmt();
        } else if (at_kw("delete")) {
            delete_stmt();
        } else {
            fail("syntax error");
        }
        ctes_in_scope_.resize(scope_mark);
    }

    void with_clause(int depth) {
        expect_kw("with");
        const bool recursive = accept_kw("recursive");
        do {
            CteFact cte;
            cte.name = name("CTE name");
            if (accept(TokenKind::lparen)) {
                do {
                    name("column name");
                } while (accept(TokenKind::comma));
                expect(TokenKind::rparen, "\")\"");
            }
            expect_kw("as");
            if (accept_kw("not")) {
                expect_kw("materialized");
                cte.not_materialized_keyword = true;
            } else if (accept_kw("materialized")) {
                cte.materialized_keyword = true;
            }
            const std::size_t open = cur().offset;
            expect(TokenKind::lparen, "\"(\"");
            std::size_t declared = 0;
            if (recursive) {
                declare_cte(cte);
                declared = facts_.ctes.size() - 1;
            }
            const std::size_t body_token = i_;
            statement(depth + 1);
            const std::size_t close = cur().offset;
            expect(TokenKind::rparen, "\")\"");
            cte.body = std::string(sql_.substr(open + 1, close - open - 1));
            cte.has_aggregate = body_has_aggregate(body_token, i_ - 1);
            if (recursive) {
                auto& stored = facts_.ctes[declared];
                stored.body = cte.body;
                stored.has_aggregate = cte.has_aggregate;
            } else {
                declare_cte(cte);
            }
        } while (accept(TokenKind::comma));
    }

    void declare_cte(const CteFact& cte) {
        facts_.ctes.push_back(cte);
        ctes_in_scope_.push_back(facts_.ctes.size() - 1);
    }

    bool body_has_aggregate(std::size_t from, std::size_t to) const {
        for (std::size_t k = from; k < to; ++k) {
            const Token& t = toks_[k];
            if (t.is_keyword("group") && toks_[k + 1].is_keyword("by")) return true;
            if (t.is_keyword("distinct")) return true;
            if (t.kind == TokenKind::identifier && is_aggregate_name(t.text) &&
                toks_[k + 1].kind == TokenKind::lparen) {
                return true;
            }
        }
        return false;
    }

    void select_stmt(int depth) {
        select_term(depth);
        while (at_kw("union") || at_kw("intersect") || at_kw("except")) {
            advance();
            if (!accept_kw("all")) accept_kw("distinct");
            select_term(depth);
        }
        bool ordered = false;
        if (at_kw("order")) {
            advance();
            expect_kw("by");
            order_list();
            ordered = true;
        }
        limit_offset_clauses();
        if (at_kw("for")) {
            advance();
            if (!(accept_kw("update") || accept_kw("share"))) {
                if (accept_kw("no")) {
                    expect_kw("key");
                    expect_kw("update");
                } else if (accept_kw("key")) {
                    expect_kw("share");
                } else {
                    fail("syntax error");
                }
            }
        }
        if (depth == 0) facts_.has_top_level_order_by = ordered;
    }

    void limit_offset_clauses() {
        for (int guard = 0; guard < 3; ++guard) {
            if (accept_kw("limit")) {
                if (!accept_kw("all")) expr();
            } else if (accept_kw("offset")) {
                expr();
                if (!accept_kw("rows")) accept_kw("row");
            } else if (accept_kw("fetch")) {
                if (!accept_kw("first")) expect_kw("next");
                if (!at_kw("row") && !at_kw("rows")) expr();
                if (!accept_kw("rows")) expect_kw("row");
                if (accept_kw("with")) {
                    expect_kw("ties");
                } else {
                    expect_kw("only");
                }
            } else {
                break;
            }
        }
    }

    void select_term(int depth) {
        if (accept(TokenKind::lparen)) {
            const std::size_t scope_mark = ctes_in_scope_.size();
            if (at_kw("with")) with_clause(depth + 1);
            select_stmt(depth + 1);
            ctes_in_scope_.resize(scope_mark);
            expect(TokenKind::rparen, "\")\"");
            return;
        }
        if (accept_kw("values")) {
            values_rows();
            return;
        }
        expect_kw("select");
        if (accept_kw("distinct")) {
            if (accept_kw("on")) {
                expect(TokenKind::lparen, "\"(\"");
                expr_list();
                expect(TokenKind::rparen, "\")\"");
            }
        } else {
            accept_kw("all");
        }
        select_list();
        if (accept_kw("into")) fail("SELECT INTO is not supported");
        if (accept_kw("from")) from_list();
        if (accept_kw("where")) expr();
        if (at_kw("group")) {
            advance();
            expect_kw("by");
            group_list();
        }
        if (accept_kw("having")) expr();
        if (accept_kw("window")) {
            do {
                name("window name");
                expect_kw("as");
                expect(TokenKind::lparen, "\"(\"");
                window_spec();
            } while (accept(TokenKind::comma));
        }
    }

    void values_rows() {
        do {
            expect(TokenKind::lparen, "\"(\"");
            expr_list();
            expect(TokenKind::rparen, "\")\"");
        } while (accept(TokenKind::comma));
    }

    void select_list() {
        do {
            if (at_op("*")) {
                advance();
                continue;
            }
            if (at_kw("from") || at(TokenKind::end)) fail("syntax error");
            expr();
            if (accept_kw("as")) {
                label();
            } else if (at_name()) {
                advance();
            }
        } while (accept(TokenKind::comma));
    }

    void group_list() {
        do {
            if (at_kw("grouping") && look(1).is_keyword("sets")) {
                advance();
                advance();
                skip_balanced_parens();
            } else if (at(TokenKind::lparen) && look(1).kind == TokenKind::rparen) {
                advance();  // empty grouping set ()
                advance();
            } else {
                expr();
            }
        } while (accept(TokenKind::comma));
    }

    void skip_balanced_parens() {
        expect(TokenKind::lparen, "\"(\"");
        int depth = 1;
        while (depth > 0) {
            if (at(TokenKind::end)) fail("unbalanced parentheses");
            if (at(TokenKind::lparen)) ++depth;
            if (at(TokenKind::rparen)) --depth;
            advance();
        }
    }

    void order_list() {
        do {
            expr();
            if (!accept_kw("asc") && !accept_kw("desc") && accept_kw("using")) {
                if (!at(TokenKind::op)) fail("expected operator");
                advance();
            }
            if (accept_kw("nulls")) {
                if (!accept_kw("first")) expect_kw("last");
            }
        } while (accept(TokenKind::comma));
    }

    void from_list() {
        do {
            from_item();
        } while (accept(TokenKind::comma));
    }

    void from_item() {
        table_ref();
        while (true) {
            bool natural = accept_kw("natural");
            bool cross = false;
            if (accept_kw("cross")) {
                cross = true;
            } else if (accept_kw("left") || accept_kw("right") || accept_kw("full")) {
                accept_kw("outer");
            } else {
                accept_kw("inner");
            }
            if (!accept_kw("join")) {
                if (natural || cross) fail("expected JOIN");
                // a bare INNER without JOIN
                if (toks_[i_ - 1].is_keyword("inner") || toks_[i_ - 1].is_keyword("outer")) fail("expected JOIN");
                return;
            }
            table_ref();
            if (natural || cross) continue;
            if (accept_kw("on")) {
                expr();
            } else if (accept_kw("using")) {
                expect(TokenKind::lparen, "\"(\"");
                do {
                    name("column name");
                } while (accept(TokenKind::comma));
                expect(TokenKind::rparen, "\")\"");
            } else {
                fail("expected ON or USING");
            }
        }
    }

    void optional_alias(RelationRef* ref) {
        std::string alias;
        if (accept_kw("as")) {
            alias = label();
        } else if (at_name() && !at_kw("set")) {
            alias = name("alias");
        }
        if (!alias.empty() && accept(TokenKind::lparen)) {
            do {
                name("column alias");
            } while (accept(TokenKind::comma));
            expect(TokenKind::rparen, "\")\"");
        }
        if (ref && !alias.empty()) ref->alias = alias;
    }

    void table_ref() {
        accept_kw("lateral");
        if (accept(TokenKind::lparen)) {
            if (at_kw("select") || at_kw("with") || at_kw("values") ||
                (at(TokenKind::lparen) && paren_starts_query(i_))) {
                statement(1);
                expect(TokenKind::rparen, "\")\"");
                optional_alias(nullptr);
            } else {
                from_item();
                expect(TokenKind::rparen, "\")\"");
                optional_alias(nullptr);
            }
            return;
        }
        accept_kw("only");
        std::string n = name("table name");
        while (accept(TokenKind::dot)) n += "." + name("qualified name");
        if (at(TokenKind::lparen)) {
            // set-returning function in FROM
            call_arguments();
            if (accept_kw("with")) expect_kw("ordinality");
            optional_alias(nullptr);
            return;
        }
        RelationRef ref{n, n, false};
        if (n.find('.') == std::string::npos) {
            if (auto idx = cte_lookup(n)) {
                ref.is_cte = true;
                ++facts_.ctes[*idx].references;
            }
        }
        optional_alias(&ref);
        facts_.relations.push_back(std::move(ref));
    }

    bool paren_starts_query(std::size_t k) const {
        while (k < toks_.size() && toks_[k].kind == TokenKind::lparen) ++k;
        return k < toks_.size() && (toks_[k].is_keyword("select") || toks_[k].is_keyword("with") ||
                                    toks_[k].is_keyword("values"));
    }

    std::optional<std::size_t> cte_lookup(const std::string& n) const {
        for (auto it = ctes_in_scope_.rbegin(); it != ctes_in_scope_.rend(); ++it) {
            if (facts_.ctes[*it].name == n) return *it;
        }
        return std::nullopt;
    }

    void insert_stmt() {
        expect_kw("insert");
        expect_kw("into");
        std::string n = name("table name");
        while (accept(TokenKind::dot)) n += "." + name("qualified name");
        RelationRef ref{n, n, false};
        if (accept_kw("as")) ref.alias = label();
        facts_.relations.push_back(ref);
        if (at(TokenKind::lparen) && !paren_starts_query(i_)) {
            advance();
            do {
                name("column name");
            } while (accept(TokenKind::comma));
            expect(TokenKind::rparen, "\")\"");
        }
        if (accept_kw("default")) {
            expect_kw("values");
        } else {
            select_stmt(1);
        }
        returning();
    }

    void update_stmt() {
        expect_kw("update");
        accept_kw("only");
        std::string n = name("table name");
        while (accept(TokenKind::dot)) n += "." + name("qualified name");
        RelationRef ref{n, n, false};
        optional_alias(&ref);
        facts_.relations.push_back(ref);
        expect_kw("set");
        do {
            if (accept(TokenKind::lparen)) {
                do {
                    name("column name");
                } while (accept(TokenKind::comma));
                expect(TokenKind::rparen, "\")\"");
            } else {
                name("column name");
            }
            if (!at_op("=")) fail("expected \"=\"");
            advance();
            if (!accept_kw("default")) expr();
        } while (accept(TokenKind::comma));
        if (accept_kw("from")) from_list();
        if (accept_kw("where")) expr();
        returning();
    }

    void delete_stmt() {
        expect_kw("delete");
        expect_kw("from");
        accept_kw("only");
        std::string n = name("table name");
        while (accept(TokenKind::dot)) n += "." + name("qualified name");
        RelationRef ref{n, n, false};
        optional_alias(&ref);
        facts_.relations.push_back(ref);
        if (accept_kw("using")) from_list();
        if (accept_kw("where")) expr();
        returning();
    }

    void returning() {
        if (accept_kw("returning")) select_list();
    }

    // ---- expressions ---------------------------------------------------
    void expr_list() {
        do {
            expr();
        } while (accept(TokenKind::comma));
    }

    void expr() { or_expr(); }

    void or_expr() {
        and_expr();
        while (accept_kw("or")) and_expr();
    }

    void and_expr() {
        not_expr();
        while (accept_kw("and")) not_expr();
    }

    void not_expr() {
        if (accept_kw("not")) {
            not_expr();
            return;
        }
        predicate();
    }

    bool at_comparison() const {
        if (cur().kind != TokenKind::op) return false;
        const std::string& t = cur().text;
        return t == "=" || t == "<>" || t == "!=" || t == "<" || t == ">" || t == "<=" || t == ">=";
    }

    void predicate() {
        other_op_expr();
        while (true) {
            if (at_comparison()) {
                advance();
                if (at_kw("any") || at_kw("all") || at_kw("some")) {
                    advance();
                    expect(TokenKind::lparen, "\"(\"");
                    if (at_kw("select") || at_kw("with") || at_kw("values")) {
                        statement(1);
                    } else {
                        expr();
                    }
                    expect(TokenKind::rparen, "\")\"");
                } else {
                    other_op_expr();
                }
                continue;
            }
            if (at_kw("is")) {
                advance();
                accept_kw("not");
                if (accept_kw("distinct")) {
                    expect_kw("from");
                    other_op_expr();
                } else if (!(accept_kw("null") || accept_kw("true") || accept_kw("false") ||
                             accept_kw("unknown"))) {
                    fail("syntax error");
                }
                continue;
            }
            if (accept_kw("isnull") || accept_kw("notnull")) continue;
            const bool negated = at_kw("not") && (look(1).is_keyword("in") || look(1).is_keyword("between") ||
                                                  look(1).is_keyword("like") || look(1).is_keyword("ilike") ||
                                                  look(1).is_keyword("similar"));
            if (negated) advance();
            if (accept_kw("in")) {
                expect(TokenKind::lparen, "\"(\"");
                if (at_kw("select") || at_kw("with") || at_kw("values")) {
                    statement(1);
                } else {
                    expr_list();
                }
                expect(TokenKind::rparen, "\")\"");
                continue;
            }
            if (accept_kw("between")) {
                accept_kw("symmetric");
                other_op_expr();
                expect_kw("and");
                other_op_expr();
                continue;
            }
            if (accept_kw("like") || accept_kw("ilike")) {
                other_op_expr();
                if (accept_kw("escape")) other_op_expr();
                continue;
            }
            if (accept_kw("similar")) {
                expect_kw("to");
                other_op_expr();
                if (accept_kw("escape")) other_op_expr();
                continue;
            }
            if (negated) fail("syntax error");
            break;
        }
    }

    bool at_generic_op() const {
        if (cur().kind != TokenKind::op) return false;
        const std::string& t = cur().text;
        return !(t == "=" || t == "<>" || t == "!=" || t == "<" || t == ">" || t == "<=" || t == ">=" ||
                 t == "+" || t == "-" || t == "*" || t == "/" || t == "%" || t == "^" || t == "::" || t == ":");
    }

    void other_op_expr() {
        additive();
        while (at_generic_op()) {
            advance();
            additive();
        }
    }

    void additive() {
        multiplicative();
        while (at_op("+") || at_op("-")) {
            advance();
            multiplicative();
        }
    }

    void multiplicative() {
        unary();
        while (at_op("*") || at_op("/") || at_op("%") || at_op("^")) {
            advance();
            unary();
        }
    }

    void unary() {
        if (at_op("+") || at_op("-") || at_op("~") || at_op("@")) {
            advance();
            unary();
            return;
        }
        postfix();
    }

    void postfix() {
        primary();
        while (true) {
            if (at_op("::")) {
                advance();
                type_name();
            } else if (accept(TokenKind::lbracket)) {
                expr();
                if (at_op(":")) {
                    advance();
                    expr();
                }
                expect(TokenKind::rbracket, "\"]\"");
            } else if (at_kw("collate")) {
                advance();
                if (!accept(TokenKind::quoted_identifier)) name("collation");
            } else if (at_kw("at") && look(1).is_keyword("time")) {
                advance();
                advance();
                expect_kw("zone");
                unary();
            } else {
                break;
            }
        }
    }

    void type_name() {
        static const std::array<std::string_view, 6> continuations{"precision", "varying", "with",
                                                                   "without",   "time",    "zone"};
        if (!(at(TokenKind::identifier) || at(TokenKind::quoted_identifier))) fail("expected type name");
        advance();
        while (accept(TokenKind::dot)) label();
        while (at(TokenKind::identifier) &&
               std::any_of(continuations.begin(), continuations.end(),
                           [&](std::string_view c) { return cur().is_keyword(c); })) {
            advance();
        }
        if (accept(TokenKind::lparen)) {
            expr_list();
            expect(TokenKind::rparen, "\")\"");
        }
        while (accept(TokenKind::lbracket)) {
            if (at(TokenKind::number)) advance();
            expect(TokenKind::rbracket, "\"]\"");
        }
    }

    void primary() {
        const Token& t = cur();
        switch (t.kind) {
            case TokenKind::number:
            case TokenKind::string:
            case TokenKind::param:
                advance();
                return;
            case TokenKind::lparen:
                paren_primary();
                return;
            case TokenKind::quoted_identifier:
                column_or_call();
                return;
            case TokenKind::identifier:
                break;
            default:
                fail("syntax error");
        }
        if (accept_kw("null") || accept_kw("true") || accept_kw("false") || accept_kw("default")) return;
        if (at_kw("current_date") || at_kw("current_time") || at_kw("current_timestamp") ||
            at_kw("localtime") || at_kw("localtimestamp") || at_kw("current_user") || at_kw("session_user")) {
            advance();
            if (accept(TokenKind::lparen)) {
                if (at(TokenKind::number)) advance();
                expect(TokenKind::rparen, "\")\"");
            }
            return;
        }
        if (accept_kw("exists")) {
            expect(TokenKind::lparen, "\"(\"");
            statement(1);
            expect(TokenKind::rparen, "\")\"");
            return;
        }
        if (at_kw("case")) {
            case_expr();
            return;
        }
        if (accept_kw("cast")) {
            expect(TokenKind::lparen, "\"(\"");
            expr();
            expect_kw("as");
            type_name();
            expect(TokenKind::rparen, "\")\"");
            return;
        }
        if (at_kw("array")) {
            advance();
            if (accept(TokenKind::lbracket)) {
                if (!at(TokenKind::rbracket)) expr_list();
                expect(TokenKind::rbracket, "\"]\"");
            } else {
                expect(TokenKind::lparen, "\"(\"");
                statement(1);
                expect(TokenKind::rparen, "\")\"");
            }
            return;
        }
        if (at_kw("row") && look(1).kind == TokenKind::lparen) {
            advance();
            advance();
            if (!at(TokenKind::rparen)) expr_list();
            expect(TokenKind::rparen, "\")\"");
            return;
        }
        if (at_kw("interval") && look(1).kind == TokenKind::string) {
            advance();
            advance();
            static const std::array<std::string_view, 6> units{"year", "month", "day", "hour", "minute", "second"};
            while (at(TokenKind::identifier) &&
                   (std::any_of(units.begin(), units.end(), [&](std::string_view u) { return cur().is_keyword(u); }) ||
                    cur().is_keyword("to"))) {
                advance();
            }
            return;
        }
        if (at_kw("extract") && look(1).kind == TokenKind::lparen) {
            advance();
            advance();
            if (at(TokenKind::string)) {
                advance();
            } else {
                label();
            }
            expect_kw("from");
            expr();
            expect(TokenKind::rparen, "\")\"");
            return;
        }
        if ((at_kw("substring") || at_kw("position") || at_kw("trim") || at_kw("overlay")) &&
            look(1).kind == TokenKind::lparen) {
            special_function();
            return;
        }
        if (is_reserved(t.text) && !at_kw("left") && !at_kw("right")) fail("syntax error");
        // typed literal: DATE '2020-01-01', TIMESTAMP '...'
        if (look(1).kind == TokenKind::string && !is_reserved(t.text)) {
            advance();
            advance();
            return;
        }
        column_or_call();
    }

    void special_function() {
        const bool is_trim = at_kw("trim");
        advance();
        expect(TokenKind::lparen, "\"(\"");
        if (is_trim) {
            if (!accept_kw("leading") && !accept_kw("trailing")) accept_kw("both");
            if (accept_kw("from")) {
                expr_list();
            } else {
                expr();
                if (accept_kw("from")) {
                    expr_list();
                } else {
                    while (accept(TokenKind::comma)) expr();
                }
            }
            expect(TokenKind::rparen, "\")\"");
            return;
        }
        // substring / position / overlay: accept either SQL-standard keywords or commas
        additive_or_expr_in_special();
        while (at_kw("from") || at_kw("for") || at_kw("in") || at_kw("placing") || at(TokenKind::comma)) {
            advance();
            additive_or_expr_in_special();
        }
        expect(TokenKind::rparen, "\")\"");
    }

    void additive_or_expr_in_special() { other_op_expr(); }

    void paren_primary() {
        expect(TokenKind::lparen, "\"(\"");
        if (at_kw("select") || at_kw("with") || at_kw("values") ||
            (at(TokenKind::lparen) && paren_starts_query(i_) && subquery_paren_closes_query(i_))) {
            statement(1);
            expect(TokenKind::rparen, "\")\"");
            return;
        }
        expr();
        while (accept(TokenKind::comma)) expr();
        expect(TokenKind::rparen, "\")\"");
        if (at(TokenKind::dot)) {
            // (composite).field or (row).*
            advance();
            if (at_op("*")) {
                advance();
            } else {
                label();
            }
        }
    }

    // "((SELECT 1) UNION (SELECT 2))" is a query; "((SELECT 1) + 1)" is an expression.
    bool subquery_paren_closes_query(std::size_t k) const {
        int depth = 0;
        for (; k < toks_.size(); ++k) {
            if (toks_[k].kind == TokenKind::lparen) ++depth;
            if (toks_[k].kind == TokenKind::rparen) {
                --depth;
                if (depth == 0) {
                    const Token& after = toks_[std::min(k + 1, toks_.size() - 1)];
                    return after.is_keyword("union") || after.is_keyword("intersect") ||
                           after.is_keyword("except") || after.is_keyword("order") || after.is_keyword("limit");
                }
            }
        }
        return false;
    }

    void column_or_call() {
        advance();  // first name component
        while (at(TokenKind::dot)) {
            advance();
            if (at_op("*")) {
                advance();
                return;
            }
            label();
        }
        if (at(TokenKind::lparen)) {
            call_arguments();
            if (at_kw("within") && look(1).is_keyword("group")) {
                advance();
                advance();
                expect(TokenKind::lparen, "\"(\"");
                expect_kw("order");
                expect_kw("by");
                order_list();
                expect(TokenKind::rparen, "\")\"");
            }
            if (accept_kw("filter")) {
                expect(TokenKind::lparen, "\"(\"");
                expect_kw("where");
                expr();
                expect(TokenKind::rparen, "\")\"");
            }
            if (accept_kw("over")) {
                if (accept(TokenKind::lparen)) {
                    window_spec();
                } else {
                    name("window name");
                }
            }
        }
    }

    void call_arguments() {
        expect(TokenKind::lparen, "\"(\"");
        if (accept(TokenKind::rparen)) return;
        if (at_op("*")) {
            advance();
            expect(TokenKind::rparen, "\")\"");
            return;
        }
        if (!accept_kw("distinct")) accept_kw("all");
        do {
            if (at_kw("variadic")) advance();
            expr();
        } while (accept(TokenKind::comma));
        if (at_kw("order")) {
            advance();
            expect_kw("by");
            order_list();
        }
        expect(TokenKind::rparen, "\")\"");
    }

    // Called after "(" has been consumed.
    void window_spec() {
        if (at_name() && !at_kw("partition") && !at_kw("order") && !at_kw("rows") && !at_kw("range") &&
            !at_kw("groups")) {
            advance();  // existing window name
        }
        if (accept_kw("partition")) {
            expect_kw("by");
            expr_list();
        }
        if (accept_kw("order")) {
            expect_kw("by");
            order_list();
        }
        if (at_kw("rows") || at_kw("range") || at_kw("groups")) {
            // frame clause: accept any balanced token run
            int depth = 0;
            while (!(depth == 0 && at(TokenKind::rparen))) {
                if (at(TokenKind::end)) fail("unterminated window specification");
                if (at(TokenKind::lparen)) ++depth;
                if (at(TokenKind::rparen)) --depth;
                advance();
            }
        }
        expect(TokenKind::rparen, "\")\"");
    }

    void case_expr() {
        expect_kw("case");
        if (!at_kw("when")) expr();
        if (!at_kw("when")) fail("expected WHEN");
        while (accept_kw("when")) {
            expr();
            expect_kw("then");
            expr();
        }
        if (accept_kw("else")) expr();
        expect_kw("end");
    }

    std::string_view sql_;
    std::vector<Token> toks_;
    std::size_t i_ = 0;
    QueryFacts facts_;
    std::vector<std::size_t> ctes_in_scope_;
};

}  // namespace

bool Token::is_keyword(std::string_view kw) const noexcept {
    return kind == TokenKind::identifier && ieq(text, kw);
}

SyntaxError::SyntaxError(const std::string& message, std::size_t offset)
    : std::runtime_error(message), offset_(offset) {}

std::vector<Token> lex(std::string_view sql) { return Lexer(sql).run(); }

const CteFact* QueryFacts::find_cte(std::string_view name) const {
    for (const auto& c : ctes) {
        if (c.name == name) return &c;
    }
    return nullptr;
}

std::vector<std::string> QueryFacts::base_tables() const {
    std::vector<std::string> out;
    for (const auto& r : relations) {
        if (r.is_cte) continue;
        if (std::find(out.begin(), out.end(), r.name) == out.end()) out.push_back(r.name);
    }
    return out;
}

QueryFacts analyze(std::string_view sql) {
    auto tokens = lex(sql);
    if (tokens.size() == 1) throw SyntaxError("empty query", 0);
    Parser p(sql, std::move(tokens));
    return p.parse_single();
}

std::optional<std::string> grammar_error(std::string_view sql) {
    try {
        (void)analyze(sql);
        return std::nullopt;
    } catch (const SyntaxError& e) {
        return std::string("syntax error: ") + e.what();
    }
}

bool has_top_level_order_by(std::string_view sql) {
    try {
        return analyze(sql).has_top_level_order_by;
    } catch (const SyntaxError&) {
    }
    std::vector<Token> toks;
    try {
        toks = lex(sql);
    } catch (const SyntaxError&) {
        return false;
    }
    int depth = 0;
    bool ordered = false;
    for (std::size_t k = 0; k + 1 < toks.size(); ++k) {
        const Token& t = toks[k];
        if (t.kind == TokenKind::lparen) ++depth;
        if (t.kind == TokenKind::rparen) --depth;
        if (depth != 0) continue;
        if (t.is_keyword("order") && toks[k + 1].is_keyword("by")) ordered = true;
        if (t.is_keyword("union") || t.is_keyword("intersect") || t.is_keyword("except")) ordered = false;
    }
    return ordered;
}

std::vector<std::string> split_statements(std::string_view sql) {
    std::vector<std::string> out;
    std::size_t start = 0;
    int depth = 0;
    std::size_t i = 0;
    auto flush = [&](std::size_t end) {
        std::string_view piece = sql.substr(start, end - start);
        const auto first = piece.find_first_not_of(" \t\r\n");
        if (first != std::string_view::npos) {
            const auto last = piece.find_last_not_of(" \t\r\n");
            std::string stmt(piece.substr(first, last - first + 1));
            bool has_content = true;
            try {
                const auto toks = lex(stmt);
                has_content = std::any_of(toks.begin(), toks.end(), [](const Token& t) {
                    return t.kind != TokenKind::semicolon && t.kind != TokenKind::end;
                });
            } catch (const SyntaxError&) {
            }
            if (has_content) out.push_back(std::move(stmt));
        }
        start = end;
    };
    while (i < sql.size()) {
        const char c = sql[i];
        if (c == '\'' || c == '"') {
            const char q = c;
            ++i;
            while (i < sql.size()) {
                if (sql[i] == q) {
                    if (i + 1 < sql.size() && sql[i + 1] == q) {
                        i += 2;
                        continue;
                    }
                    break;
                }
                ++i;
            }
            ++i;
        } else if (c == '-' && i + 1 < sql.size() && sql[i + 1] == '-') {
            while (i < sql.size() && sql[i] != '\n') ++i;
        } else if (c == '/' && i + 1 < sql.size() && sql[i + 1] == '*') {
            const auto close = sql.find("*/", i + 2);
            i = close == std::string_view::npos ? sql.size() : close + 2;
        } else if (c == '(') {
            ++depth;
            ++i;
        } else if (c == ')') {
            --depth;
            ++i;
        } else if (c == ';' && depth <= 0) {
            ++i;
            flush(i);
        } else {
            ++i;
        }
    }
    flush(sql.size());
    return out;
}

std::string normalize_whitespace(std::string_view sql) {
    std::string out;
    out.reserve(sql.size());
    bool pending_space = false;
    for (char c : sql) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(c);
    }
    while (!out.empty() && (out.back() == ';' || out.back() == ' ')) out.pop_back();
    return out;
}

std::optional<std::string> leading_hint_block(std::string_view sql) {
    const auto first = sql.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos || sql.substr(first, 3) != "/*+") return std::nullopt;
    const auto close = sql.find("*/", first + 3);
    if (close == std::string_view::npos) return std::nullopt;
    return std::string(sql.substr(first, close + 2 - first));
}

std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string to_upper(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    return out;
}

}  // namespace quite::sql
