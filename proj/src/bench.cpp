#include "quite/bench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace quite::bench {

double percentile(std::vector<double> values, double p) {
    if (values.empty()) throw std::invalid_argument("percentile of an empty sample");
    if (!(p > 0.0 && p <= 100.0)) throw std::invalid_argument("percentile rank must be in (0, 100]");
    std::sort(values.begin(), values.end());
    const auto n = static_cast<double>(values.size());
    auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * n));
    rank = std::clamp<std::size_t>(rank, 1, values.size());
    return values[rank - 1];
}

LatencyStats latency_stats(const std::vector<double>& values) {
    if (values.empty()) return {};
    LatencyStats s;
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    s.median = percentile(values, 50.0);
    s.p75 = percentile(values, 75.0);
    s.p95 = percentile(values, 95.0);
    return s;
}

void classify(RunRecord& r) {
    r.improved = r.equivalent && r.orig_mean_s > 0.0 && r.rw_mean_s <= kImprovementRatio * r.orig_mean_s;
    r.speedup = r.rw_mean_s > 0.0 ? r.orig_mean_s / r.rw_mean_s : 1.0;
}

BenchSummary summarize(const std::vector<RunRecord>& records) {
    BenchSummary s;
    s.queries = records.size();
    if (records.empty()) return s;
    std::vector<double> orig;
    std::vector<double> rw;
    std::size_t eq = 0;
    std::size_t imp = 0;
    for (const auto& r : records) {
        orig.push_back(r.orig_mean_s);
        rw.push_back(r.rw_mean_s);
        eq += r.equivalent;
        imp += r.improved;
    }
    s.original = latency_stats(orig);
    s.rewritten = latency_stats(rw);
    s.equivalence_rate = static_cast<double>(eq) / static_cast<double>(records.size());
    s.improvement_rate = static_cast<double>(imp) / static_cast<double>(records.size());
    return s;
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw std::invalid_argument("bad boolean in CSV: " + s);
}

}  // namespace

void write_csv(const std::filesystem::path& path, const std::vector<RunRecord>& records) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "query_id,orig_mean_s,rw_mean_s,equivalent,improved,speedup\n";
    for (const auto& r : records) {
        out << fmt::format("{},{},{},{},{},{}\n", csv_field(r.query_id), fmt::format("{:.17g}", r.orig_mean_s),
                           fmt::format("{:.17g}", r.rw_mean_s), r.equivalent ? "true" : "false",
                           r.improved ? "true" : "false", fmt::format("{:.17g}", r.speedup));
    }
}

std::vector<RunRecord> read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line) || split_csv_line(line).size() != 6) throw std::invalid_argument("missing CSV header");
    std::vector<RunRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 6) throw std::invalid_argument("CSV row with " + std::to_string(f.size()) + " fields");
        RunRecord r;
        r.query_id = f[0];
        r.orig_mean_s = std::stod(f[1]);
        r.rw_mean_s = std::stod(f[2]);
        r.equivalent = parse_bool(f[3]);
        r.improved = parse_bool(f[4]);
        r.speedup = std::stod(f[5]);
        out.push_back(std::move(r));
    }
    return out;
}

std::string format_summary(const BenchSummary& s) {
    return fmt::format(
        "queries: {}\n"
        "equivalence_rate: {:.4f}\n"
        "improvement_rate: {:.4f}\n"
        "original  mean {:.6f}s median {:.6f}s p75 {:.6f}s p95 {:.6f}s\n"
        "rewritten mean {:.6f}s median {:.6f}s p75 {:.6f}s p95 {:.6f}s\n",
        s.queries, s.equivalence_rate, s.improvement_rate, s.original.mean, s.original.median, s.original.p75,
        s.original.p95, s.rewritten.mean, s.rewritten.median, s.rewritten.p75, s.rewritten.p95);
}

std::vector<WorkloadQuery> load_workload(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".sql") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<WorkloadQuery> out;
    for (const auto& f : files) {
        std::ifstream in(f);
        std::stringstream ss;
        ss << in.rdbuf();
        auto text = ss.str();
        while (!text.empty() && (text.back() == '\n' || text.back() == ' ' || text.back() == '\r')) text.pop_back();
        if (text.empty()) {
            spdlog::warn("skipping empty workload file {}", f.string());
            continue;
        }
        out.push_back({f.stem().string(), SqlQuery(std::move(text))});
    }
    return out;
}

namespace {

double mean_latency(const std::vector<db::TimedRun>& runs) {
    if (runs.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& r : runs) sum += r.latency_seconds;
    return sum / static_cast<double>(runs.size());
}

}  // namespace

std::vector<RunRecord> run(const std::vector<WorkloadQuery>& workload, db::Database& db, const Rewriter& rewriter,
                           const BenchConfig& config) {
    std::vector<RunRecord> out;
    for (const auto& wq : workload) {
        RunRecord r;
        r.query_id = wq.id;
        try {
            r.orig_mean_s = mean_latency(db.timed_execute(wq.sql, config.warmups, config.runs, config.cap));
        } catch (const db::ConnectionError&) {
            throw;
        } catch (const db::DbError& e) {
            spdlog::warn("{}: original failed to execute: {}", wq.id, e.what());
            r.note = std::string("original failed: ") + e.what();
            r.rw_mean_s = r.orig_mean_s;
            classify(r);
            out.push_back(std::move(r));
            continue;
        }

        std::optional<SqlQuery> rewritten;
        try {
            rewritten = rewriter(wq);
        } catch (const db::ConnectionError&) {
            throw;
        } catch (const std::exception& e) {
            r.note = std::string("rewrite failed: ") + e.what();
        }

        if (!rewritten) {
            r.rw_mean_s = r.orig_mean_s;
        } else if (rewritten->text() == wq.sql.text()) {
            r.equivalent = true;
            r.rw_mean_s = r.orig_mean_s;
            r.note = "unchanged";
        } else {
            auto eq = db.results_equal(wq.sql, *rewritten);
            r.equivalent = eq.equal;
            if (!eq) {
                r.note = "not equivalent: " + eq.reason;
                r.rw_mean_s = r.orig_mean_s;
            } else {
                try {
                    r.rw_mean_s = mean_latency(db.timed_execute(*rewritten, config.warmups, config.runs, config.cap));
                } catch (const db::ConnectionError&) {
                    throw;
                } catch (const db::DbError& e) {
                    r.equivalent = false;
                    r.note = std::string("rewrite failed to execute: ") + e.what();
                    r.rw_mean_s = r.orig_mean_s;
                }
            }
        }
        classify(r);
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace quite::bench
