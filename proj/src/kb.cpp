#include "quite/kb.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <regex>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "quite/prompts.hpp"
#include "quite/sql.hpp"

namespace quite::kb {

namespace {

constexpr std::pair<Category, std::string_view> kCategoryNames[] = {
    {Category::join_optimization, "join_optimization"},
    {Category::constant_folding, "constant_folding"},
    {Category::predicate_simplification, "predicate_simplification"},
    {Category::other, "other"},
};

constexpr std::pair<Provenance, std::string_view> kProvenanceNames[] = {
    {Provenance::official_docs, "official_docs"},
    {Provenance::community, "community"},
    {Provenance::fixture, "fixture"},
};

std::string trim(std::string_view s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string_view::npos) return {};
    const auto b = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(a, b - a + 1));
}

}  // namespace

std::string_view to_string(Category c) noexcept {
    for (const auto& [k, n] : kCategoryNames) {
        if (k == c) return n;
    }
    return "other";
}

std::string_view to_string(Provenance p) noexcept {
    for (const auto& [k, n] : kProvenanceNames) {
        if (k == p) return n;
    }
    return "fixture";
}

std::optional<Category> category_from_string(std::string_view s) {
    const std::string lowered = sql::to_lower(trim(s));
    for (const auto& [k, n] : kCategoryNames) {
        if (n == lowered) return k;
    }
    return std::nullopt;
}

std::optional<Provenance> provenance_from_string(std::string_view s) {
    for (const auto& [k, n] : kProvenanceNames) {
        if (n == s) return k;
    }
    return std::nullopt;
}

void KbEntry::validate() const {
    auto blank = [](const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; };
    if (blank(id)) throw std::invalid_argument("knowledge entry needs an id");
    if (blank(question.text) || blank(question.sql) || blank(answer.text) || blank(answer.sql)) {
        throw std::invalid_argument("knowledge entry " + id + " has an empty question or answer half");
    }
}

// ---------------------------------------------------------------------------
// BM25

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) || c == '_') {
            cur += static_cast<char>(std::tolower(c));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

double bm25_idf(std::size_t n_docs, std::size_t doc_freq) noexcept {
    const double n = static_cast<double>(n_docs);
    const double df = static_cast<double>(doc_freq);
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

Bm25Index::Bm25Index(const std::vector<std::vector<std::string>>& docs, Bm25Params params) : params_(params) {
    doc_length_.reserve(docs.size());
    std::size_t total = 0;
    for (std::size_t d = 0; d < docs.size(); ++d) {
        std::map<std::string_view, std::size_t> tf;
        for (const auto& term : docs[d]) ++tf[term];
        for (const auto& [term, count] : tf) postings_[std::string(term)].push_back({d, count});
        doc_length_.push_back(docs[d].size());
        total += docs[d].size();
    }
    avgdl_ = docs.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(docs.size());
}

std::size_t Bm25Index::doc_freq(const std::string& term) const {
    auto it = postings_.find(term);
    return it == postings_.end() ? 0 : it->second.size();
}

std::vector<double> Bm25Index::score(const std::vector<std::string>& query_terms) const {
    std::vector<double> scores(doc_length_.size(), 0.0);
    std::set<std::string_view> seen;
    for (const auto& term : query_terms) {
        if (!seen.insert(term).second) continue;
        auto it = postings_.find(term);
        if (it == postings_.end()) continue;
        const double idf = bm25_idf(doc_length_.size(), it->second.size());
        for (const auto& p : it->second) {
            const double tf = static_cast<double>(p.tf);
            const double norm = params_.k1 * (1.0 - params_.b + params_.b * static_cast<double>(doc_length_[p.doc]) / avgdl_);
            scores[p.doc] += idf * (tf * (params_.k1 + 1.0)) / (tf + norm);
        }
    }
    return scores;
}

// ---------------------------------------------------------------------------
// Corpus

Corpus::Corpus(std::vector<KbEntry> entries, Bm25Params params) : params_(params) {
    std::set<std::string> ids;
    for (const auto& e : entries) {
        e.validate();
        if (!ids.insert(e.id).second) throw std::invalid_argument("duplicate knowledge entry id " + e.id);
    }
    entries_ = std::move(entries);
    reindex();
}

void Corpus::add(KbEntry entry) {
    entry.validate();
    for (const auto& e : entries_) {
        if (e.id == entry.id) throw std::invalid_argument("duplicate knowledge entry id " + entry.id);
    }
    entries_.push_back(std::move(entry));
    reindex();
}

bool Corpus::remove(std::string_view id) {
    auto it = std::find_if(entries_.begin(), entries_.end(), [&](const KbEntry& e) { return e.id == id; });
    if (it == entries_.end()) return false;
    entries_.erase(it);
    reindex();
    return true;
}

std::string Corpus::indexed_text(const KbEntry& e) { return e.question.text + "\n" + e.question.sql; }

void Corpus::reindex() {
    std::vector<std::vector<std::string>> docs;
    docs.reserve(entries_.size());
    for (const auto& e : entries_) docs.push_back(tokenize(indexed_text(e)));
    index_ = Bm25Index(docs, params_);
}

std::vector<Scored> Corpus::retrieve(std::string_view query, std::size_t k, std::optional<Category> category,
                                     bool drop_zero) const {
    if (entries_.empty() || k == 0) return {};
    const auto scores = index_.score(tokenize(query));
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (category && entries_[i].category != *category) continue;
        if (drop_zero && !(scores[i] > 0.0)) continue;
        order.push_back(i);
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return entries_[a].id < entries_[b].id;
    });
    if (order.size() > k) order.resize(k);
    std::vector<Scored> out;
    out.reserve(order.size());
    for (std::size_t i : order) out.push_back({entries_[i], scores[i]});
    return out;
}

nlohmann::json to_json(const KbEntry& e) {
    nlohmann::json j{
        {"schema_version", kSchemaVersion},
        {"id", e.id},
        {"question", {{"text_que", e.question.text}, {"sql_que", e.question.sql}}},
        {"answer", {{"text_ans", e.answer.text}, {"sql_ans", e.answer.sql}}},
        {"category", to_string(e.category)},
        {"provenance", to_string(e.provenance)},
        {"quality", {{"likes", e.quality.likes}, {"dislikes", e.quality.dislikes}, {"consensus", e.quality.consensus}}},
    };
    if (!e.summary.empty()) j["summary"] = e.summary;
    if (e.enhancement_failed) j["enhancement_failed"] = true;
    return j;
}

KbEntry entry_from_json(const nlohmann::json& j) {
    const int version = j.value("schema_version", 0);
    if (version != kSchemaVersion) {
        throw std::invalid_argument(fmt::format("unsupported knowledge schema version {}", version));
    }
    KbEntry e;
    e.id = j.at("id").get<std::string>();
    e.question.text = j.at("question").at("text_que").get<std::string>();
    e.question.sql = j.at("question").at("sql_que").get<std::string>();
    e.answer.text = j.at("answer").at("text_ans").get<std::string>();
    e.answer.sql = j.at("answer").at("sql_ans").get<std::string>();
    const auto cat = category_from_string(j.at("category").get<std::string>());
    if (!cat) throw std::invalid_argument("entry " + e.id + " has an unknown category");
    e.category = *cat;
    const auto prov = provenance_from_string(j.value("provenance", std::string("fixture")));
    if (!prov) throw std::invalid_argument("entry " + e.id + " has an unknown provenance");
    e.provenance = *prov;
    if (j.contains("quality")) {
        const auto& q = j["quality"];
        e.quality = {q.value("likes", 0), q.value("dislikes", 0), q.value("consensus", false)};
    }
    e.summary = j.value("summary", std::string());
    e.enhancement_failed = j.value("enhancement_failed", false);
    e.validate();
    return e;
}

void Corpus::save_jsonl(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write corpus " + path.string());
    for (const auto& e : entries_) out << to_json(e).dump() << '\n';
}

Corpus Corpus::load_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read corpus " + path.string());
    std::vector<KbEntry> entries;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            entries.push_back(entry_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw std::invalid_argument(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
        }
    }
    return Corpus(std::move(entries));
}

// ---------------------------------------------------------------------------
// Ingestion and filtering

KbCandidate parse_unit(const nlohmann::json& unit) {
    if (!unit.is_object()) throw MalformedUnit("unit is not a JSON object");
    KbCandidate c;
    try {
        c.id = unit.at("id").get<std::string>();
        const auto& q = unit.at("question");
        c.question.text = trim(q.at("text").get<std::string>());
        c.question.sql = trim(q.value("sql", std::string()));
        if (unit.contains("source")) {
            auto p = provenance_from_string(unit["source"].get<std::string>());
            if (!p) throw MalformedUnit("unknown source " + unit["source"].get<std::string>());
            c.provenance = *p;
        }
        for (const auto& a : unit.at("answers")) {
            RawAnswer r;
            r.text = trim(a.at("text").get<std::string>());
            r.sql = trim(a.value("sql", std::string()));
            r.likes = a.value("likes", 0);
            r.dislikes = a.value("dislikes", 0);
            if (r.likes < 0 || r.dislikes < 0) throw MalformedUnit("negative vote count");
            c.answers.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw MalformedUnit(std::string("missing or mistyped field: ") + e.what());
    }
    if (c.id.empty()) throw MalformedUnit("empty id");
    if (c.question.text.empty()) throw MalformedUnit("empty question text");
    if (c.question.sql.empty()) throw MalformedUnit("question carries no SQL");
    return c;
}

IngestResult ingest(const std::vector<nlohmann::json>& raw_units) {
    IngestResult out;
    for (std::size_t i = 0; i < raw_units.size(); ++i) {
        const auto& raw = raw_units[i];
        const std::string label = raw.is_object() && raw.contains("id") && raw["id"].is_string()
                                      ? raw["id"].get<std::string>()
                                      : fmt::format("#{}", i);
        try {
            KbCandidate c = parse_unit(raw);
            std::erase_if(c.answers, [](const RawAnswer& a) { return a.text.empty() || a.sql.empty(); });
            if (c.answers.empty()) {
                out.skipped.push_back({label, "no usable answer"});
                spdlog::info("skipping unit {}: no usable answer", label);
                continue;
            }
            out.candidates.push_back(std::move(c));
        } catch (const MalformedUnit& e) {
            out.skipped.push_back({label, std::string("malformed: ") + e.what()});
            spdlog::warn("skipping malformed unit {}: {}", label, e.what());
        }
    }
    return out;
}

IngestResult ingest_directory(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const auto ext = entry.path().extension();
        if (entry.is_regular_file() && (ext == ".jsonl" || ext == ".json")) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<nlohmann::json> units;
    IngestResult parse_failures;
    for (const auto& f : files) {
        std::ifstream in(f);
        if (f.extension() == ".json") {
            try {
                auto doc = nlohmann::json::parse(in);
                if (doc.is_array()) {
                    for (auto& u : doc) units.push_back(std::move(u));
                } else {
                    units.push_back(std::move(doc));
                }
            } catch (const nlohmann::json::exception& e) {
                parse_failures.skipped.push_back({f.filename().string(), std::string("malformed: ") + e.what()});
            }
            continue;
        }
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (trim(line).empty()) continue;
            try {
                units.push_back(nlohmann::json::parse(line));
            } catch (const nlohmann::json::exception& e) {
                const auto label = fmt::format("{}:{}", f.filename().string(), lineno);
                parse_failures.skipped.push_back({label, std::string("malformed: ") + e.what()});
                spdlog::warn("skipping malformed unit {}: {}", label, e.what());
            }
        }
    }
    IngestResult out = ingest(units);
    out.skipped.insert(out.skipped.begin(), parse_failures.skipped.begin(), parse_failures.skipped.end());
    return out;
}

namespace {

std::string render_answers(const std::vector<RawAnswer>& answers) {
    std::string out;
    for (std::size_t i = 0; i < answers.size(); ++i) {
        out += fmt::format("### Answer {} (likes {}, dislikes {})\n{}\n```sql\n{}\n```\n\n", i + 1, answers[i].likes,
                           answers[i].dislikes, answers[i].text, answers[i].sql);
    }
    return out;
}

std::size_t best_by_net_likes(const std::vector<RawAnswer>& answers) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < answers.size(); ++i) {
        if (answers[i].likes - answers[i].dislikes > answers[best].likes - answers[best].dislikes) best = i;
    }
    return best;
}

KbEntry make_entry(const KbCandidate& c, const RawAnswer& a, bool consensus) {
    KbEntry e;
    e.id = c.id;
    e.question = c.question;
    e.answer = {a.text, a.sql};
    e.provenance = c.provenance;
    e.quality = {a.likes, a.dislikes, consensus};
    return e;
}

}  // namespace

FilterResult filter(const std::vector<KbCandidate>& candidates, const llm::Binding* llm) {
    FilterResult out;
    for (const auto& c : candidates) {
        std::vector<RawAnswer> trusted;
        for (const auto& a : c.answers) {
            if (a.dislikes <= a.likes) trusted.push_back(a);
        }
        if (trusted.empty()) {
            out.dropped.push_back({c.id, "every answer has more dislikes than likes"});
            continue;
        }
        if (trusted.size() == 1) {
            out.kept.push_back(make_entry(c, trusted.front(), true));
            continue;
        }
        if (!llm) {
            out.kept.push_back(make_entry(c, trusted[best_by_net_likes(trusted)], false));
            continue;
        }
        try {
            const std::map<std::string, std::string> vars{{"question", c.question.text + "\n```sql\n" + c.question.sql + "\n```"},
                                                          {"answers", render_answers(trusted)}};
            const auto consensus_reply = llm->ask("", prompts::fill("kb_consensus", vars));
            const bool consensus = sql::to_upper(llm::tagged_line(consensus_reply, "CONSENSUS").value_or("")) == "YES";

            std::vector<std::size_t> votes(trusted.size(), 0);
            for (int round = 0; round < 3; ++round) {
                const auto reply = llm->ask("", prompts::fill("kb_vote", vars));
                const auto value = llm::tagged_line(reply, "ANSWER");
                if (!value) continue;
                const int n = std::atoi(value->c_str());
                if (n >= 1 && static_cast<std::size_t>(n) <= trusted.size()) ++votes[static_cast<std::size_t>(n - 1)];
            }
            const std::size_t top = *std::max_element(votes.begin(), votes.end());
            std::size_t winner;
            if (top == 0) {
                winner = best_by_net_likes(trusted);
            } else {
                // Highest vote count; net likes, then position, break ties.
                winner = trusted.size();
                for (std::size_t i = 0; i < trusted.size(); ++i) {
                    if (votes[i] != top) continue;
                    if (winner == trusted.size() || trusted[i].likes - trusted[i].dislikes >
                                                        trusted[winner].likes - trusted[winner].dislikes) {
                        winner = i;
                    }
                }
            }
            out.kept.push_back(make_entry(c, trusted[winner], consensus));
        } catch (const std::exception& e) {
            out.dropped.push_back({c.id, std::string("llm failure: ") + e.what()});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Enhancement

HashingEmbedder::HashingEmbedder(Eigen::Index dimension) : dimension_(dimension) {
    if (dimension_ <= 0) throw std::invalid_argument("embedding dimension must be positive");
}

Eigen::VectorXd HashingEmbedder::embed(std::string_view text) const {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(dimension_);
    for (const auto& token : tokenize(text)) {
        std::uint64_t h = 1469598103934665603ULL;
        for (unsigned char c : token) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        const auto bucket = static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(dimension_));
        v[bucket] += (h >> 63) ? -1.0 : 1.0;
    }
    const double norm = v.norm();
    if (norm > 0.0) v /= norm;
    return v;
}

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (a.size() != b.size()) throw std::invalid_argument("embedding dimensions differ");
    const double denom = a.norm() * b.norm();
    return denom > 0.0 ? a.dot(b) / denom : 0.0;
}

void DocPointIndex::add(std::string id, std::string text, const Embedder& embedder) {
    Eigen::VectorXd v = embedder.embed(text);
    points_.push_back({std::move(id), std::move(text), std::move(v)});
}

DocPointIndex DocPointIndex::load_jsonl(const std::filesystem::path& path, const Embedder& embedder) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read doc points " + path.string());
    DocPointIndex index;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const auto j = nlohmann::json::parse(line);
        index.add(j.at("id").get<std::string>(), j.at("text").get<std::string>(), embedder);
    }
    return index;
}

std::vector<std::pair<const DocPoint*, double>> DocPointIndex::nearest(const Eigen::VectorXd& query,
                                                                       std::size_t k) const {
    std::vector<std::pair<const DocPoint*, double>> scored;
    scored.reserve(points_.size());
    for (const auto& p : points_) scored.emplace_back(&p, cosine_similarity(query, p.embedding));
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    if (scored.size() > k) scored.resize(k);
    return scored;
}

KbEntry enhance(KbEntry entry, const DocPointIndex& docs, const Embedder& embedder, const llm::Binding& llm) {
    const std::map<std::string, std::string> vars{
        {"question", entry.question.text + "\n```sql\n" + entry.question.sql + "\n```"},
        {"answer", entry.answer.text + "\n```sql\n" + entry.answer.sql + "\n```"}};
    entry.summary = trim(llm::split_reasoning(llm.ask("", prompts::fill("kb_summary", vars))).answer);
    if (entry.summary.empty()) entry.summary = entry.question.text;
    if (docs.empty()) return entry;

    std::vector<std::pair<const DocPoint*, double>> top;
    try {
        top = docs.nearest(embedder.embed(entry.summary + "\n" + entry.answer.text), 3);
    } catch (const std::exception& e) {
        spdlog::warn("embedding failed for {}: {}", entry.id, e.what());
        entry.enhancement_failed = true;
        return entry;
    }
    std::string points;
    for (std::size_t i = 0; i < top.size(); ++i) points += fmt::format("{}. {}\n", i + 1, top[i].first->text);
    const auto reply = llm.ask("", prompts::fill("kb_confirm", {{"summary", entry.summary}, {"points", points}}));
    const auto confirmed = llm::tagged_line(reply, "CONFIRMED");
    if (!confirmed) return entry;

    std::vector<std::size_t> chosen;
    for (const auto& tok : tokenize(*confirmed)) {
        if (tok == "none") return entry;
        const int n = std::atoi(tok.c_str());
        if (n >= 1 && static_cast<std::size_t>(n) <= top.size() &&
            std::find(chosen.begin(), chosen.end(), static_cast<std::size_t>(n - 1)) == chosen.end()) {
            chosen.push_back(static_cast<std::size_t>(n - 1));
        }
    }
    if (chosen.empty()) return entry;
    std::sort(chosen.begin(), chosen.end());
    entry.answer.text += "\n\nSupporting documentation:";
    for (std::size_t i : chosen) entry.answer.text += "\n- " + top[i].first->text;
    return entry;
}

// ---------------------------------------------------------------------------
// Classification

Category classify_heuristic(const KbEntry& entry) {
    const auto words = tokenize(entry.question.text + " " + entry.answer.text + " " + entry.summary);
    auto has = [&](std::initializer_list<std::string_view> needles) {
        return std::any_of(words.begin(), words.end(), [&](const std::string& w) {
            return std::any_of(needles.begin(), needles.end(), [&](std::string_view n) { return w == n; });
        });
    };
    auto has_prefix = [&](std::string_view prefix) {
        return std::any_of(words.begin(), words.end(), [&](const std::string& w) { return w.starts_with(prefix); });
    };
    if (has({"join", "joins", "joined", "joining"})) return Category::join_optimization;

    static const std::regex arithmetic(R"(\b\d+(\.\d+)?\s*[-+*/]\s*\d+(\.\d+)?\b)");
    if (has({"constant", "constants", "arithmetic", "fold", "folding", "folded"}) ||
        std::regex_search(entry.question.sql, arithmetic)) {
        return Category::constant_folding;
    }
    if (has({"where", "predicate", "predicates", "condition", "conditions", "filter", "filters"}) ||
        has_prefix("simplif") || has_prefix("redundan")) {
        return Category::predicate_simplification;
    }
    return Category::other;
}

Category classify(const KbEntry& entry, const llm::Binding* llm) {
    if (!llm) return classify_heuristic(entry);
    const auto reply = llm->ask(
        "", prompts::fill("kb_classify", {{"question", entry.question.text + "\n```sql\n" + entry.question.sql + "\n```"},
                                          {"answer", entry.answer.text + "\n```sql\n" + entry.answer.sql + "\n```"}}));
    if (auto value = llm::tagged_line(reply, "CATEGORY")) {
        if (auto c = category_from_string(*value)) return *c;
    }
    return Category::other;
}

BuildReport build_corpus(const std::filesystem::path& raw_dir, const DocPointIndex* docs, const Embedder& embedder,
                         const llm::Binding* llm) {
    BuildReport report;
    IngestResult ingested = ingest_directory(raw_dir);
    report.skipped = std::move(ingested.skipped);
    FilterResult filtered = filter(ingested.candidates, llm);
    report.dropped = std::move(filtered.dropped);
    for (auto& e : filtered.kept) {
        if (docs && llm) e = enhance(std::move(e), *docs, embedder, *llm);
        e.category = classify(e, llm);
        report.corpus.add(std::move(e));
    }
    return report;
}

}  // namespace quite::kb
