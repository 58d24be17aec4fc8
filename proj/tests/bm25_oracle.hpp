#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

// Brute-force BM25: rescans every document for every query term.
namespace quite::test {

struct OracleDoc {
    std::string id;
    std::vector<std::string> terms;
};

inline std::vector<double> oracle_scores(const std::vector<OracleDoc>& docs, const std::vector<std::string>& query,
                                         double k1 = 1.2, double b = 0.75) {
    const double n = static_cast<double>(docs.size());
    double total = 0;
    for (const auto& d : docs) total += static_cast<double>(d.terms.size());
    const double avgdl = docs.empty() ? 0.0 : total / n;

    std::vector<std::string> unique;
    for (const auto& t : query) {
        if (std::find(unique.begin(), unique.end(), t) == unique.end()) unique.push_back(t);
    }
    std::vector<double> scores;
    for (const auto& d : docs) {
        double s = 0.0;
        for (const auto& t : unique) {
            const auto tf = static_cast<double>(std::count(d.terms.begin(), d.terms.end(), t));
            if (tf == 0) continue;
            double df = 0;
            for (const auto& other : docs) df += std::find(other.terms.begin(), other.terms.end(), t) != other.terms.end();
            const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
            s += idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * static_cast<double>(d.terms.size()) / avgdl));
        }
        scores.push_back(s);
    }
    return scores;
}

/// Ids of the top-k documents: score descending, id ascending, zero scores dropped.
inline std::vector<std::string> oracle_rank(const std::vector<OracleDoc>& docs, const std::vector<std::string>& query,
                                            std::size_t k) {
    const auto scores = oracle_scores(docs, query);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        if (scores[i] > 0) idx.push_back(i);
    }
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t c) {
        return scores[a] != scores[c] ? scores[a] > scores[c] : docs[a].id < docs[c].id;
    });
    std::vector<std::string> out;
    for (std::size_t i = 0; i < idx.size() && i < k; ++i) out.push_back(docs[idx[i]].id);
    return out;
}

}  // namespace quite::test
