#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "quite/core.hpp"
#include "quite/db.hpp"

namespace quite::bench {

/// Nearest-rank percentile: the ceil(p/100 * n)-th smallest value. `p` in
/// (0, 100]. Throws std::invalid_argument on an empty sample.
[[nodiscard]] double percentile(std::vector<double> values, double p);

struct LatencyStats {
    double mean = 0.0;
    double median = 0.0;
    double p75 = 0.0;
    double p95 = 0.0;

    friend bool operator==(const LatencyStats&, const LatencyStats&) = default;
};

[[nodiscard]] LatencyStats latency_stats(const std::vector<double>& values);

/// A rewrite counts as improved when it is equivalent and its mean latency is
/// at most this fraction of the original's.
inline constexpr double kImprovementRatio = 0.9;

struct RunRecord {
    std::string query_id;
    double orig_mean_s = 0.0;
    double rw_mean_s = 0.0;
    bool equivalent = false;
    bool improved = false;
    double speedup = 1.0;
    std::string note;

    friend bool operator==(const RunRecord& a, const RunRecord& b) {
        return a.query_id == b.query_id && a.orig_mean_s == b.orig_mean_s && a.rw_mean_s == b.rw_mean_s &&
               a.equivalent == b.equivalent && a.improved == b.improved && a.speedup == b.speedup;
    }
};

/// Fills improved and speedup from the other fields.
void classify(RunRecord& r);

struct BenchSummary {
    LatencyStats original;
    LatencyStats rewritten;
    double equivalence_rate = 0.0;
    double improvement_rate = 0.0;
    std::size_t queries = 0;

    friend bool operator==(const BenchSummary&, const BenchSummary&) = default;
};

[[nodiscard]] BenchSummary summarize(const std::vector<RunRecord>& records);

/// Columns: query_id, orig_mean_s, rw_mean_s, equivalent, improved, speedup.
/// Reals are written with 17 significant digits so a read-back is exact.
void write_csv(const std::filesystem::path& path, const std::vector<RunRecord>& records);
[[nodiscard]] std::vector<RunRecord> read_csv(const std::filesystem::path& path);

[[nodiscard]] std::string format_summary(const BenchSummary& s);

struct WorkloadQuery {
    std::string id;
    SqlQuery sql;
};

/// Every *.sql file in `dir`, sorted by name; the id is the file stem.
[[nodiscard]] std::vector<WorkloadQuery> load_workload(const std::filesystem::path& dir);

/// Produces the rewritten query; may throw, which is recorded as a failed
/// (non-equivalent) rewrite.
using Rewriter = std::function<SqlQuery(const WorkloadQuery&)>;

struct BenchConfig {
    int warmups = 1;
    int runs = 3;
    db::Seconds cap{300.0};
};

/// Times each original, rewrites it, compares outputs and times the rewrite.
/// Non-equivalent or failed rewrites are charged the original's time; a
/// byte-identical rewrite reuses the original's measurement.
[[nodiscard]] std::vector<RunRecord> run(const std::vector<WorkloadQuery>& workload, db::Database& db,
                                         const Rewriter& rewriter, const BenchConfig& config = {});

}  // namespace quite::bench
