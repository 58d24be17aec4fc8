#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

#include "quite/llm.hpp"

namespace quite::kb {

enum class Category { join_optimization, constant_folding, predicate_simplification, other };
enum class Provenance { official_docs, community, fixture };

std::string_view to_string(Category c) noexcept;
std::string_view to_string(Provenance p) noexcept;
std::optional<Category> category_from_string(std::string_view s);
std::optional<Provenance> provenance_from_string(std::string_view s);

inline constexpr Category kAllCategories[] = {Category::join_optimization, Category::constant_folding,
                                              Category::predicate_simplification, Category::other};

struct Quality {
    int likes = 0;
    int dislikes = 0;
    bool consensus = false;

    friend bool operator==(const Quality&, const Quality&) = default;
};

struct KbEntry {
    struct Question {
        std::string text;
        std::string sql;
        friend bool operator==(const Question&, const Question&) = default;
    };
    struct Answer {
        std::string text;
        std::string sql;
        friend bool operator==(const Answer&, const Answer&) = default;
    };

    std::string id;
    Question question;
    Answer answer;
    Category category = Category::other;
    Provenance provenance = Provenance::fixture;
    Quality quality;
    std::string summary;
    bool enhancement_failed = false;

    /// Throws std::invalid_argument unless id and all four halves are non-empty.
    void validate() const;

    friend bool operator==(const KbEntry&, const KbEntry&) = default;
};

// ---------------------------------------------------------------------------
// BM25

/// Lower-cases and splits on anything outside [a-z0-9_]. No stemming.
[[nodiscard]] std::vector<std::string> tokenize(std::string_view text);

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

/// ln(1 + (N - df + 0.5) / (df + 0.5)); never negative.
[[nodiscard]] double bm25_idf(std::size_t n_docs, std::size_t doc_freq) noexcept;

/// Inverted index over tokenized documents.
class Bm25Index {
public:
    Bm25Index() = default;
    Bm25Index(const std::vector<std::vector<std::string>>& docs, Bm25Params params = {});

    /// Score of every document; query terms are deduplicated in order of first
    /// occurrence.
    [[nodiscard]] std::vector<double> score(const std::vector<std::string>& query_terms) const;

    [[nodiscard]] std::size_t size() const noexcept { return doc_length_.size(); }
    [[nodiscard]] double average_length() const noexcept { return avgdl_; }
    [[nodiscard]] std::size_t doc_freq(const std::string& term) const;
    [[nodiscard]] const Bm25Params& params() const noexcept { return params_; }

private:
    struct Posting {
        std::size_t doc;
        std::size_t tf;
    };
    Bm25Params params_;
    std::map<std::string, std::vector<Posting>, std::less<>> postings_;
    std::vector<std::size_t> doc_length_;
    double avgdl_ = 0.0;
};

struct Scored {
    KbEntry entry;
    double score = 0.0;
};

/// A knowledge base 𝒦: entries plus a BM25 index kept in sync on every mutation.
class Corpus {
public:
    Corpus() = default;
    explicit Corpus(std::vector<KbEntry> entries, Bm25Params params = {});

    /// Throws std::invalid_argument on an invalid entry or a duplicate id.
    void add(KbEntry entry);
    bool remove(std::string_view id);

    [[nodiscard]] const std::vector<KbEntry>& entries() const noexcept { return entries_; }
    [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
    [[nodiscard]] bool empty() const noexcept { return entries_.empty(); }
    [[nodiscard]] const Bm25Index& index() const noexcept { return index_; }

    /// Top-k by BM25 descending, ties by id ascending. With `category` only
    /// entries of that category compete; corpus statistics stay global.
    [[nodiscard]] std::vector<Scored> retrieve(std::string_view query, std::size_t k = 3,
                                               std::optional<Category> category = std::nullopt,
                                               bool drop_zero = true) const;

    /// Text an entry is indexed under: question text plus question SQL.
    [[nodiscard]] static std::string indexed_text(const KbEntry& e);

    void save_jsonl(const std::filesystem::path& path) const;
    [[nodiscard]] static Corpus load_jsonl(const std::filesystem::path& path);

private:
    std::vector<KbEntry> entries_;
    Bm25Params params_;
    Bm25Index index_;

    void reindex();
};

inline constexpr int kSchemaVersion = 1;

[[nodiscard]] nlohmann::json to_json(const KbEntry& e);
[[nodiscard]] KbEntry entry_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Offline construction pipeline: ingest -> filter -> enhance -> classify

class MalformedUnit : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RawAnswer {
    std::string text;
    std::string sql;
    int likes = 0;
    int dislikes = 0;
};

/// One collected Q&A unit before filtering; may carry several answers.
struct KbCandidate {
    std::string id;
    KbEntry::Question question;
    std::vector<RawAnswer> answers;
    Provenance provenance = Provenance::community;
};

struct SkipRecord {
    std::string unit_id;
    std::string reason;
};

struct IngestResult {
    std::vector<KbCandidate> candidates;
    std::vector<SkipRecord> skipped;
};

/// Parses one raw unit. Throws MalformedUnit.
[[nodiscard]] KbCandidate parse_unit(const nlohmann::json& unit);

/// Parses units, skipping (and logging) malformed ones and units without answers.
[[nodiscard]] IngestResult ingest(const std::vector<nlohmann::json>& raw_units);

/// Reads every *.jsonl (one unit per line) and *.json (one unit or an array)
/// file under `dir`, in path order.
[[nodiscard]] IngestResult ingest_directory(const std::filesystem::path& dir);

struct FilterResult {
    std::vector<KbEntry> kept;
    std::vector<SkipRecord> dropped;
};

/// Drops answers with more dislikes than likes and units left without any.
/// Multi-answer units get one consensus question and three votes from `llm`;
/// the majority answer wins. Without an LLM the highest net-likes answer wins.
[[nodiscard]] FilterResult filter(const std::vector<KbCandidate>& candidates, const llm::Binding* llm);

/// Deterministic text embedder interface.
class Embedder {
public:
    virtual ~Embedder() = default;
    [[nodiscard]] virtual Eigen::VectorXd embed(std::string_view text) const = 0;
};

/// Hashed bag of words: FNV-1a bucket per token with a hashed sign, L2-normalised.
class HashingEmbedder final : public Embedder {
public:
    explicit HashingEmbedder(Eigen::Index dimension = 256);
    [[nodiscard]] Eigen::VectorXd embed(std::string_view text) const override;

private:
    Eigen::Index dimension_;
};

struct DocPoint {
    std::string id;
    std::string text;
    Eigen::VectorXd embedding;
};

/// Key points distilled from official documentation, pre-embedded.
class DocPointIndex {
public:
    void add(std::string id, std::string text, const Embedder& embedder);
    /// One `{"id", "text"}` object per line.
    [[nodiscard]] static DocPointIndex load_jsonl(const std::filesystem::path& path, const Embedder& embedder);

    /// Top-k by cosine similarity, ties by insertion order.
    [[nodiscard]] std::vector<std::pair<const DocPoint*, double>> nearest(const Eigen::VectorXd& query,
                                                                          std::size_t k) const;
    [[nodiscard]] std::size_t size() const noexcept { return points_.size(); }
    [[nodiscard]] bool empty() const noexcept { return points_.empty(); }

private:
    std::vector<DocPoint> points_;
};

[[nodiscard]] double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Summarises the entry, retrieves the three closest doc points and appends
/// the ones the LLM confirms to the answer text. An embedder failure returns
/// the entry with `enhancement_failed` set.
[[nodiscard]] KbEntry enhance(KbEntry entry, const DocPointIndex& docs, const Embedder& embedder,
                              const llm::Binding& llm);

/// Keyword rules: join, then constant arithmetic, then WHERE/predicate
/// simplification, else other.
[[nodiscard]] Category classify_heuristic(const KbEntry& entry);

/// Asks the LLM for a category; unparseable answers map to `other`. A null
/// binding uses the keyword rules.
[[nodiscard]] Category classify(const KbEntry& entry, const llm::Binding* llm);

struct BuildReport {
    Corpus corpus;
    std::vector<SkipRecord> skipped;
    std::vector<SkipRecord> dropped;
};

/// The four steps end to end. Enhancement runs only with both docs and an LLM.
[[nodiscard]] BuildReport build_corpus(const std::filesystem::path& raw_dir, const DocPointIndex* docs,
                                       const Embedder& embedder, const llm::Binding* llm);

}  // namespace quite::kb
