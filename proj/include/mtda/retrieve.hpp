#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include "mtda/corpus.hpp"
#include "mtda/error.hpp"
#include "mtda/rng.hpp"
#include "mtda/tokenize.hpp"

namespace mtda {

struct Bm25Params {
    double k1 = 1.5;
    double b = 0.75;
    /// Lowercase before tokenizing (documents and queries alike).
    bool lowercase = true;
};

struct ScoredDoc {
    std::size_t doc_id = 0;
    double score = 0.0;

    bool operator==(const ScoredDoc&) const = default;
};

/// Okapi BM25 over word-tokenized documents. Doc ids are positions in the
/// input list, which line up with corpus ids.
class Bm25Index {
  public:
    static Bm25Index build(std::span<const std::string> docs, const Bm25Params& params = {}) {
        if (docs.empty()) {
            throw UsageError("bm25: cannot index an empty document list");
        }
        Bm25Index idx;
        idx.params_ = params;
        idx.doc_tokens_.reserve(docs.size());
        std::size_t total_len = 0;
        for (std::size_t d = 0; d < docs.size(); ++d) {
            std::vector<std::uint32_t> ids;
            for (const auto& tok : word_tokenize(docs[d], params.lowercase)) {
                auto [it, fresh] = idx.term_ids_.emplace(tok, static_cast<std::uint32_t>(idx.terms_.size()));
                if (fresh) {
                    idx.terms_.push_back(tok);
                    idx.postings_.emplace_back();
                }
                ids.push_back(it->second);
            }
            std::map<std::uint32_t, std::uint32_t> tf;
            for (auto t : ids) {
                ++tf[t];
            }
            for (const auto& [t, f] : tf) {
                idx.postings_[t].push_back({static_cast<std::uint32_t>(d), f});
            }
            total_len += ids.size();
            idx.doc_len_.push_back(static_cast<double>(ids.size()));
            idx.doc_tokens_.push_back(std::move(ids));
        }
        idx.avg_doc_len_ = static_cast<double>(total_len) / static_cast<double>(docs.size());
        return idx;
    }

    std::size_t doc_count() const { return doc_len_.size(); }
    double avg_doc_len() const { return avg_doc_len_; }
    const Bm25Params& params() const { return params_; }
    std::size_t vocabulary_size() const { return terms_.size(); }

    std::size_t doc_freq(std::string_view term) const {
        const auto id = lookup(term);
        return id ? postings_[*id].size() : 0;
    }

    std::size_t term_freq(std::size_t doc, std::string_view term) const {
        const auto id = lookup(term);
        if (!id) {
            return 0;
        }
        const auto& list = postings_[*id];
        const auto it = std::lower_bound(list.begin(), list.end(), static_cast<std::uint32_t>(doc),
                                         [](const Posting& p, std::uint32_t d) { return p.doc < d; });
        return (it != list.end() && it->doc == doc) ? it->tf : 0;
    }

    double doc_len(std::size_t doc) const { return doc_len_.at(doc); }

    /// ln((N - df + 0.5) / (df + 0.5) + 1); never negative.
    double idf(std::size_t df) const {
        const double n = static_cast<double>(doc_count());
        const double f = static_cast<double>(df);
        return std::log((n - f + 0.5) / (f + 0.5) + 1.0);
    }

    std::vector<std::string> tokenize(std::string_view text) const { return word_tokenize(text, params_.lowercase); }

    /// Every query token contributes once per occurrence. Docs scoring 0 are
    /// dropped; ties are ordered by ascending doc id.
    std::vector<ScoredDoc> topk(std::string_view query, std::size_t k) const {
        if (k == 0) {
            throw UsageError("bm25: K must be >= 1");
        }
        std::vector<double> score(doc_count(), 0.0);
        std::vector<std::uint32_t> touched;
        for (const auto& tok : tokenize(query)) {
            const auto id = lookup(tok);
            if (!id) {
                continue;
            }
            const auto& list = postings_[*id];
            const double w = idf(list.size());
            for (const auto& p : list) {
                const double tf = p.tf;
                const double len = doc_len_[p.doc];
                if (score[p.doc] == 0.0) {
                    touched.push_back(p.doc);
                }
                score[p.doc] += w * tf * (params_.k1 + 1.0) /
                                (tf + params_.k1 * (1.0 - params_.b + params_.b * len / avg_doc_len_));
            }
        }
        std::vector<ScoredDoc> hits;
        hits.reserve(touched.size());
        for (auto d : touched) {
            if (score[d] > 0.0) {
                hits.push_back({d, score[d]});
            }
        }
        const auto order = [](const ScoredDoc& a, const ScoredDoc& b) {
            return a.score > b.score || (a.score == b.score && a.doc_id < b.doc_id);
        };
        if (hits.size() > k) {
            std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), order);
            hits.resize(k);
        } else {
            std::sort(hits.begin(), hits.end(), order);
        }
        return hits;
    }

    /// Term ids of a document, in order.
    std::span<const std::uint32_t> doc_terms(std::size_t doc) const { return doc_tokens_.at(doc); }

    /// Term id of `term`, or a value that matches no document term.
    std::int64_t term_id(std::string_view term) const {
        const auto id = lookup(term);
        return id ? static_cast<std::int64_t>(*id) : -1;
    }

  private:
    struct Posting {
        std::uint32_t doc;
        std::uint32_t tf;
    };

    std::optional<std::uint32_t> lookup(std::string_view term) const {
        const auto it = term_ids_.find(std::string(term));
        if (it == term_ids_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    Bm25Params params_;
    std::unordered_map<std::string, std::uint32_t> term_ids_;
    std::vector<std::string> terms_;
    std::vector<std::vector<Posting>> postings_;
    std::vector<double> doc_len_;
    std::vector<std::vector<std::uint32_t>> doc_tokens_;
    double avg_doc_len_ = 0.0;
};

inline Bm25Index build_index(std::span<const std::string> docs, double k1 = 1.5, double b = 0.75) {
    return Bm25Index::build(docs, Bm25Params{k1, b, true});
}

// ---------------------------------------------------------------------------
// R-BM25 coverage re-ranking

struct RerankOptions {
    std::size_t max_order = 4;
    std::size_t k = 16;
    /// Weight multiplier applied to an n-gram once a selected example covers it.
    double discount = 0.0;
};

inline constexpr std::size_t default_rerank_pool = 100;

/// Greedy coverage selection. Every occurrence of a query n-gram (orders
/// 1..max_order) starts with weight 1. Each step picks the candidate whose
/// distinct n-grams carry the most remaining weight (earlier candidates win
/// ties), then multiplies the weight of the n-grams it covers by `discount`.
/// Stops after K picks or when no candidate adds weight.
inline std::vector<std::size_t> rbm25_rerank(const Bm25Index& index, std::string_view query,
                                             std::span<const std::size_t> candidates,
                                             const RerankOptions& opts = {}) {
    if (opts.max_order == 0) {
        throw UsageError("rbm25: max_order must be >= 1");
    }
    using Gram = std::vector<std::int64_t>;
    std::vector<std::int64_t> q;
    std::int64_t unknown = -1;
    for (const auto& tok : index.tokenize(query)) {
        const auto id = index.term_id(tok);
        // unseen words never occur in a candidate; give each a distinct id
        q.push_back(id >= 0 ? id : unknown--);
    }
    std::map<Gram, std::size_t> gram_index;
    std::vector<double> weight;
    for (std::size_t n = 1; n <= opts.max_order; ++n) {
        for (std::size_t i = 0; i + n <= q.size(); ++i) {
            Gram g(q.begin() + static_cast<std::ptrdiff_t>(i), q.begin() + static_cast<std::ptrdiff_t>(i + n));
            auto [it, fresh] = gram_index.emplace(std::move(g), weight.size());
            if (fresh) {
                weight.push_back(0.0);
            }
            weight[it->second] += 1.0;
        }
    }

    struct Cand {
        std::size_t doc;
        std::vector<std::size_t> grams;
    };
    std::vector<Cand> pool;
    std::set<std::size_t> seen_docs;
    for (std::size_t doc : candidates) {
        if (doc >= index.doc_count()) {
            throw DataError("rbm25: candidate doc id " + std::to_string(doc) + " not in index");
        }
        if (!seen_docs.insert(doc).second) {
            continue;
        }
        const auto terms = index.doc_terms(doc);
        std::set<std::size_t> covered;
        for (std::size_t n = 1; n <= opts.max_order; ++n) {
            for (std::size_t i = 0; i + n <= terms.size(); ++i) {
                const Gram g(terms.begin() + static_cast<std::ptrdiff_t>(i),
                             terms.begin() + static_cast<std::ptrdiff_t>(i + n));
                if (const auto it = gram_index.find(g); it != gram_index.end()) {
                    covered.insert(it->second);
                }
            }
        }
        pool.push_back({doc, std::vector<std::size_t>(covered.begin(), covered.end())});
    }

    std::vector<std::size_t> picked;
    std::vector<bool> used(pool.size(), false);
    while (picked.size() < opts.k) {
        double best_gain = 0.0;
        std::size_t best = pool.size();
        for (std::size_t c = 0; c < pool.size(); ++c) {
            if (used[c]) {
                continue;
            }
            double gain = 0.0;
            for (auto g : pool[c].grams) {
                gain += weight[g];
            }
            if (gain > best_gain) {
                best_gain = gain;
                best = c;
            }
        }
        if (best == pool.size()) {
            break;
        }
        used[best] = true;
        picked.push_back(pool[best].doc);
        for (auto g : pool[best].grams) {
            weight[g] *= opts.discount;
        }
    }
    return picked;
}

// ---------------------------------------------------------------------------
// Random and task-level baselines

/// Scores a candidate ICE set on the dev sources; higher is better.
using QualityOracle = std::function<double(std::span<const SentencePair> ices, std::span<const std::string> dev_sources)>;

struct RandomSelection {
    std::vector<SentencePair> pairs;
    std::size_t trial = 0;
    double score = 0.0;
};

/// Each trial draws p distinct pool entries (stream derived from (seed,
/// trial)) and is scored by the oracle; the best trial wins, earlier trials
/// on ties. trials=1 is the random baseline, trials=100 the task-level one.
inline RandomSelection random_select(const Corpus& pool, std::size_t p, std::size_t trials,
                                     std::span<const std::string> dev_sources, const QualityOracle& oracle,
                                     std::uint64_t seed, unsigned workers = 1) {
    if (p > pool.size()) {
        throw UsageError("random_select: p=" + std::to_string(p) + " exceeds pool size " + std::to_string(pool.size()));
    }
    if (trials == 0) {
        throw UsageError("random_select: trials must be >= 1");
    }
    std::vector<std::vector<SentencePair>> sets(trials);
    std::vector<double> scores(trials, 0.0);
    std::vector<std::exception_ptr> failures(trials);
    const auto run = [&](std::size_t begin, std::size_t end) {
        for (std::size_t t = begin; t < end; ++t) {
            Rng rng = Rng::stream(seed, t);
            for (auto i : rng.sample_indices(pool.size(), p)) {
                sets[t].push_back(pool.pairs[i]);
            }
            if (trials == 1) {
                continue;
            }
            try {
                scores[t] = oracle(sets[t], dev_sources);
            } catch (...) {
                failures[t] = std::current_exception();
            }
        }
    };
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(trials)));
    if (workers == 1) {
        run(0, trials);
    } else {
        std::vector<std::thread> threads;
        const std::size_t chunk = (trials + workers - 1) / workers;
        for (unsigned w = 0; w < workers; ++w) {
            const std::size_t begin = std::min(trials, w * chunk);
            threads.emplace_back(run, begin, std::min(trials, begin + chunk));
        }
        for (auto& t : threads) {
            t.join();
        }
    }
    for (std::size_t t = 0; t < trials; ++t) {
        if (!failures[t]) {
            continue;
        }
        const std::string where = "random_select trial " + std::to_string(t) + ": ";
        try {
            std::rethrow_exception(failures[t]);
        } catch (const BackendError& e) {
            throw BackendError(e.reason(), where + e.what());
        } catch (const std::exception& e) {
            throw DataError(where + e.what());
        }
    }
    std::size_t best = 0;
    for (std::size_t t = 1; t < trials; ++t) {
        if (scores[t] > scores[best]) {
            best = t;
        }
    }
    return {std::move(sets[best]), best, scores[best]};
}

} // namespace mtda
