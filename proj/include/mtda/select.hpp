#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include "mtda/corpus.hpp"
#include "mtda/embed.hpp"
#include "mtda/error.hpp"

namespace mtda {

inline constexpr std::size_t default_top_n = 6;

struct RankedMatch {
    std::size_t query_id = 0;
    std::size_t entry_id = 0;
    double score = 0.0;
    /// 1 = best match of its query.
    std::size_t rank = 0;

    bool operator==(const RankedMatch&) const = default;
};

namespace detail {

inline double dot(std::span<const float> a, std::span<const float> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    }
    return acc;
}

inline double norm(std::span<const float> a) { return std::sqrt(dot(a, a)); }

} // namespace detail

/// a.b / (|a||b|), clamped to [-1, 1].
inline double cosine(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) {
        throw UsageError("cosine: dimension mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
    const double na = detail::norm(a);
    const double nb = detail::norm(b);
    if (na == 0.0 || nb == 0.0) {
        throw DataError("cosine: undefined for a zero vector");
    }
    return std::clamp(detail::dot(a, b) / (na * nb), -1.0, 1.0);
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw UsageError("cosine: dimension mismatch");
    }
    double ab = 0.0;
    double aa = 0.0;
    double bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0.0 || bb == 0.0) {
        throw DataError("cosine: undefined for a zero vector");
    }
    return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

struct RankOptions {
    std::size_t n = default_top_n;
    unsigned workers = 1;
    /// Zero vectors become errors instead of being skipped.
    bool strict = false;
    /// Entries scored per block.
    std::size_t entry_tile = 1024;
};

struct RankResult {
    std::vector<RankedMatch> matches;
    std::vector<std::size_t> skipped_queries;
    std::vector<std::size_t> skipped_entries;
};

/// Exact top-n cosine search: every query against every entry. Matches are
/// ordered by query, then rank; within a query scores are non-increasing and
/// equal scores are ordered by ascending entry id. Zero rows are skipped and
/// reported (or rejected in strict mode).
inline RankResult rank_topn(const EmbeddingMatrix& queries, const EmbeddingMatrix& entries,
                            const RankOptions& opts = {}) {
    if (queries.dims() != entries.dims()) {
        throw UsageError("rank_topn: query dims " + std::to_string(queries.dims()) + " != entry dims " +
                         std::to_string(entries.dims()));
    }
    if (opts.n == 0) {
        throw UsageError("rank_topn: n must be >= 1");
    }
    if (opts.n > entries.rows()) {
        throw UsageError("rank_topn: n=" + std::to_string(opts.n) + " exceeds entry count " +
                         std::to_string(entries.rows()));
    }
    RankResult result;
    std::vector<double> entry_norm(entries.rows());
    std::vector<std::size_t> live_entries;
    live_entries.reserve(entries.rows());
    for (std::size_t e = 0; e < entries.rows(); ++e) {
        entry_norm[e] = detail::norm(entries.row(e));
        if (entry_norm[e] == 0.0) {
            if (opts.strict) {
                throw DataError("rank_topn: entry " + std::to_string(e) + " is a zero vector");
            }
            result.skipped_entries.push_back(e);
        } else {
            live_entries.push_back(e);
        }
    }
    std::vector<double> query_norm(queries.rows());
    for (std::size_t q = 0; q < queries.rows(); ++q) {
        query_norm[q] = detail::norm(queries.row(q));
        if (query_norm[q] == 0.0) {
            if (opts.strict) {
                throw DataError("rank_topn: query " + std::to_string(q) + " is a zero vector");
            }
            result.skipped_queries.push_back(q);
        }
    }

    const std::size_t n = opts.n;
    struct Hit {
        double score;
        std::size_t id;
    };
    const auto better = [](const Hit& a, const Hit& b) { return a.score > b.score || (a.score == b.score && a.id < b.id); };
    std::vector<std::vector<Hit>> best(queries.rows());

    // Queries are split across workers; each query's list only ever sees
    // its own scores, so the output does not depend on the split.
    const auto run = [&](std::size_t q_begin, std::size_t q_end) {
        constexpr std::size_t query_tile = 16;
        for (std::size_t q0 = q_begin; q0 < q_end; q0 += query_tile) {
            const std::size_t q1 = std::min(q_end, q0 + query_tile);
            for (std::size_t e0 = 0; e0 < live_entries.size(); e0 += opts.entry_tile) {
                const std::size_t e1 = std::min(live_entries.size(), e0 + opts.entry_tile);
                for (std::size_t q = q0; q < q1; ++q) {
                    if (query_norm[q] == 0.0) {
                        continue;
                    }
                    const auto qv = queries.row(q);
                    auto& list = best[q];
                    for (std::size_t i = e0; i < e1; ++i) {
                        const std::size_t e = live_entries[i];
                        const double s =
                            std::clamp(detail::dot(qv, entries.row(e)) / (query_norm[q] * entry_norm[e]), -1.0, 1.0);
                        const Hit h{s, e};
                        if (list.size() == n && !better(h, list.back())) {
                            continue;
                        }
                        list.insert(std::upper_bound(list.begin(), list.end(), h, better), h);
                        if (list.size() > n) {
                            list.pop_back();
                        }
                    }
                }
            }
        }
    };
    const unsigned workers = std::max(1u, std::min<unsigned>(opts.workers, static_cast<unsigned>(std::max<std::size_t>(1, queries.rows()))));
    if (workers == 1) {
        run(0, queries.rows());
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (queries.rows() + workers - 1) / workers;
        for (unsigned w = 0; w < workers; ++w) {
            const std::size_t begin = std::min(queries.rows(), w * chunk);
            pool.emplace_back(run, begin, std::min(queries.rows(), begin + chunk));
        }
        for (auto& t : pool) {
            t.join();
        }
    }

    for (std::size_t q = 0; q < best.size(); ++q) {
        for (std::size_t r = 0; r < best[q].size(); ++r) {
            result.matches.push_back({q, best[q][r].id, best[q][r].score, r + 1});
        }
    }
    return result;
}

struct SubCorpus {
    std::size_t level = 0;
    std::vector<SentencePair> pairs;
};

struct SubCorpora {
    /// raw[k-1]: the rank-k selection of every query (duplicates kept).
    std::vector<SubCorpus> raw;
    /// stacked[k-1]: layers 1..k merged, keeping the first occurrence of each
    /// (src, tgt) in layer order.
    std::vector<SubCorpus> stacked;
};

/// Entry ids are row positions in `ood` (as produced by rank_topn).
inline SubCorpora build_subcorpora(std::span<const RankedMatch> matches, const Corpus& ood, std::size_t n) {
    std::vector<RankedMatch> ordered(matches.begin(), matches.end());
    std::stable_sort(ordered.begin(), ordered.end(), [](const RankedMatch& a, const RankedMatch& b) {
        return a.rank < b.rank || (a.rank == b.rank && a.query_id < b.query_id);
    });

    SubCorpora out;
    out.raw.resize(n);
    out.stacked.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        out.raw[k].level = k + 1;
        out.stacked[k].level = k + 1;
    }
    for (const auto& m : ordered) {
        if (m.rank < 1 || m.rank > n) {
            throw UsageError("build_subcorpora: rank " + std::to_string(m.rank) + " outside 1.." + std::to_string(n));
        }
        if (m.entry_id >= ood.size()) {
            throw DataError("build_subcorpora: entry id " + std::to_string(m.entry_id) + " not in corpus '" +
                            ood.name + "'");
        }
        out.raw[m.rank - 1].pairs.push_back(ood.pairs[m.entry_id]);
    }
    std::set<std::pair<std::string_view, std::string_view>> seen;
    std::vector<SentencePair> acc;
    for (std::size_t k = 0; k < n; ++k) {
        for (const auto& p : out.raw[k].pairs) {
            if (seen.emplace(p.src, p.tgt).second) {
                acc.push_back(p);
            }
        }
        out.stacked[k].pairs = acc;
    }
    return out;
}

/// Arithmetic mean of the rows.
inline std::vector<double> centroid(const EmbeddingMatrix& m) {
    if (m.rows() == 0) {
        throw UsageError("centroid: empty matrix");
    }
    std::vector<double> c(m.dims(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto row = m.row(r);
        for (std::size_t j = 0; j < m.dims(); ++j) {
            c[j] += row[j];
        }
    }
    for (double& v : c) {
        v /= static_cast<double>(m.rows());
    }
    return c;
}

inline double centroid_similarity(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
    if (a.dims() != b.dims()) {
        throw UsageError("centroid_similarity: dimension mismatch");
    }
    const auto ca = centroid(a);
    const auto cb = centroid(b);
    return cosine(std::span<const double>(ca), std::span<const double>(cb));
}

// ---------------------------------------------------------------------------
// CSV output: Query, top1_src, top1_trg, top1_score, ..., topN_score

inline std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\r\n") == std::string_view::npos) {
        return std::string(s);
    }
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') {
            out += '"';
        }
        out += c;
    }
    out += '"';
    return out;
}

inline void write_selection_csv(std::ostream& out, const Corpus& queries, const Corpus& ood,
                                std::span<const RankedMatch> matches, std::size_t n) {
    out << "Query";
    for (std::size_t k = 1; k <= n; ++k) {
        out << ",top" << k << "_src,top" << k << "_trg,top" << k << "_score";
    }
    out << '\n';
    std::vector<std::vector<const RankedMatch*>> by_query(queries.size());
    for (const auto& m : matches) {
        if (m.query_id >= queries.size()) {
            throw DataError("selection csv: query id " + std::to_string(m.query_id) + " out of range");
        }
        by_query[m.query_id].push_back(&m);
    }
    for (std::size_t q = 0; q < queries.size(); ++q) {
        auto& row = by_query[q];
        std::sort(row.begin(), row.end(), [](const RankedMatch* a, const RankedMatch* b) { return a->rank < b->rank; });
        out << csv_field(queries.pairs[q].src);
        for (std::size_t k = 0; k < n; ++k) {
            if (k < row.size()) {
                const auto& p = ood.pairs.at(row[k]->entry_id);
                char score[32];
                std::snprintf(score, sizeof score, "%.6f", row[k]->score);
                out << ',' << csv_field(p.src) << ',' << csv_field(p.tgt) << ',' << score;
            } else {
                out << ",,,";
            }
        }
        out << '\n';
    }
}

} // namespace mtda
