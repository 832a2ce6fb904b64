#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mtda/backend.hpp"
#include "mtda/corpus.hpp"
#include "mtda/error.hpp"
#include "mtda/metrics.hpp"
#include "mtda/tokenize.hpp"
#include "mtda/utf8.hpp"

namespace mtda {

struct IceCandidate {
    std::string src;
    std::string tgt;
    std::size_t retriever_rank = 1;
    double retriever_score = 0.0;

    bool operator==(const IceCandidate&) const = default;
};

enum class SearchMode {
    /// QE-scored, candidates in retriever order.
    qe_bm25_order,
    /// QE-scored, candidates reordered by unigram overlap with the source.
    qe_unigram_order,
    /// Sentence BLEU against the reference replaces the estimator.
    reference_bleu,
};

enum class StopReason { patience, exhausted, terminate_score, prompt_too_long };

inline const char* stop_reason_name(StopReason r) {
    switch (r) {
    case StopReason::patience:
        return "patience";
    case StopReason::exhausted:
        return "exhausted";
    case StopReason::terminate_score:
        return "terminate_score";
    case StopReason::prompt_too_long:
        return "prompt_too_long";
    }
    return "?";
}

inline SearchMode parse_search_mode(std::string_view s) {
    if (s == "qe_bm25_order" || s == "1") {
        return SearchMode::qe_bm25_order;
    }
    if (s == "qe_unigram_order" || s == "2") {
        return SearchMode::qe_unigram_order;
    }
    if (s == "reference_bleu" || s == "3") {
        return SearchMode::reference_bleu;
    }
    throw UsageError("unknown search mode '" + std::string(s) + "'");
}

struct SearchConfig {
    std::size_t patience = 8;
    std::size_t max_candidates = 16;
    SearchMode mode = SearchMode::qe_bm25_order;
    double terminate_score = 100.0;
    /// Prompt budget in Unicode code points.
    std::size_t max_prompt_units = 8192;
    /// Take candidate (iteration mod remaining) instead of the next one.
    bool cyclic_selection = false;
};

struct SearchStep {
    std::size_t prefix_len = 0;
    double score = 0.0;
    std::string translation;
};

struct SearchResult {
    std::vector<IceCandidate> selected;
    double best_score = 0.0;
    std::string translation;
    std::size_t iterations_run = 0;
    StopReason stop_reason = StopReason::exhausted;
    /// Every scored prefix, in evaluation order.
    std::vector<SearchStep> trace;
};

/// "{src} = {tgt} </s>" per example, one per line, then "{source} = " with the
/// completion left blank.
inline std::string build_prompt(std::span<const IceCandidate> ices, std::string_view source) {
    std::string out;
    for (const auto& ice : ices) {
        out += ice.src;
        out += " = ";
        out += ice.tgt;
        out += " </s>\n";
    }
    out += source;
    out += " = ";
    return out;
}

/// Stable sort by the number of distinct source words shared with the query,
/// most first; equal overlaps keep retriever rank order.
inline std::vector<IceCandidate> reorder_unigram_overlap(std::span<const IceCandidate> ices, std::string_view source) {
    const auto q = word_tokenize(source, true);
    const std::set<std::string> query_words(q.begin(), q.end());
    std::vector<std::pair<std::size_t, IceCandidate>> keyed;
    keyed.reserve(ices.size());
    for (const auto& ice : ices) {
        const auto t = word_tokenize(ice.src, true);
        const std::set<std::string> words(t.begin(), t.end());
        std::size_t shared = 0;
        for (const auto& w : words) {
            shared += query_words.count(w);
        }
        keyed.emplace_back(shared, ice);
    }
    std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
        return a.first > b.first || (a.first == b.first && a.second.retriever_rank < b.second.retriever_rank);
    });
    std::vector<IceCandidate> out;
    out.reserve(keyed.size());
    for (auto& [_, ice] : keyed) {
        out.push_back(std::move(ice));
    }
    return out;
}

namespace detail {

inline std::size_t prompt_units(std::string_view prompt) { return utf8::decode(prompt).size(); }

[[noreturn]] inline void rethrow_at_iteration(std::size_t iteration) {
    const std::string where = "iteration " + std::to_string(iteration) + ": ";
    try {
        throw;
    } catch (const BackendError& e) {
        throw BackendError(e.reason(), where + e.what());
    } catch (const Error& e) {
        throw Error(e.kind(), where + e.what());
    } catch (const std::exception& e) {
        throw BackendError(BackendError::Reason::protocol, where + e.what());
    }
}

} // namespace detail

/// QE-guided ICE search. Iteration i adds the next candidate to the prefix,
/// translates the resulting prompt and scores the output. The best prefix so
/// far is tracked; a score that does not strictly beat it bumps the patience
/// counter, a strict improvement resets it. The loop ends when patience runs
/// out, candidates run out, a score reaches `terminate_score`, or the prompt
/// exceeds the budget (the backend rejecting it as too long counts the same).
///
/// `reference` is required in reference_bleu mode and ignored otherwise.
inline SearchResult search(std::string_view source, std::span<const IceCandidate> candidates,
                           const TranslateFn& translate, const EstimateFn& estimate, const SearchConfig& cfg,
                           const std::optional<std::string>& reference = std::nullopt) {
    if (cfg.patience == 0 || cfg.max_candidates == 0) {
        throw UsageError("search: patience and max_candidates must be >= 1");
    }
    if (cfg.mode == SearchMode::reference_bleu && !reference) {
        throw UsageError("search: reference_bleu mode needs a reference translation");
    }
    std::vector<IceCandidate> pool(candidates.begin(),
                                   candidates.begin() + static_cast<std::ptrdiff_t>(std::min(candidates.size(), cfg.max_candidates)));
    if (cfg.mode == SearchMode::qe_unigram_order) {
        pool = reorder_unigram_overlap(pool, source);
    }
    const std::string src(source);
    const auto score_of = [&](const std::string& translation) {
        if (cfg.mode == SearchMode::reference_bleu) {
            return sentence_bleu(translation, *reference);
        }
        return estimate(src, translation);
    };

    SearchResult res;
    if (pool.empty()) {
        const std::string prompt = build_prompt({}, source);
        if (detail::prompt_units(prompt) > cfg.max_prompt_units) {
            res.stop_reason = StopReason::prompt_too_long;
            return res;
        }
        try {
            res.translation = translate(prompt);
            res.best_score = score_of(res.translation);
        } catch (const BackendError& e) {
            if (e.reason() == BackendError::Reason::too_long) {
                res.translation.clear();
                res.stop_reason = StopReason::prompt_too_long;
                return res;
            }
            detail::rethrow_at_iteration(0);
        } catch (...) {
            detail::rethrow_at_iteration(0);
        }
        res.trace.push_back({0, res.best_score, res.translation});
        res.stop_reason = StopReason::exhausted;
        return res;
    }

    std::vector<IceCandidate> picked;
    std::vector<IceCandidate> remaining = pool;
    double best = -std::numeric_limits<double>::infinity();
    std::size_t best_len = 0;
    std::size_t patience_counter = 0;
    res.stop_reason = StopReason::exhausted;
    for (std::size_t itr = 0;; ++itr) {
        if (patience_counter >= cfg.patience) {
            res.stop_reason = StopReason::patience;
            break;
        }
        if (remaining.empty()) {
            res.stop_reason = StopReason::exhausted;
            break;
        }
        const std::size_t pick = cfg.cyclic_selection ? itr % remaining.size() : 0;
        picked.push_back(remaining[pick]);
        remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(pick));

        const std::string prompt = build_prompt(picked, source);
        if (detail::prompt_units(prompt) > cfg.max_prompt_units) {
            res.stop_reason = StopReason::prompt_too_long;
            break;
        }
        std::string translation;
        double score = 0.0;
        try {
            translation = translate(prompt);
            score = score_of(translation);
        } catch (const BackendError& e) {
            if (e.reason() == BackendError::Reason::too_long) {
                res.stop_reason = StopReason::prompt_too_long;
                break;
            }
            detail::rethrow_at_iteration(itr);
        } catch (...) {
            detail::rethrow_at_iteration(itr);
        }
        ++res.iterations_run;
        res.trace.push_back({picked.size(), score, translation});
        if (score > best) {
            best = score;
            best_len = picked.size();
            res.translation = std::move(translation);
            patience_counter = 0;
        } else {
            ++patience_counter;
        }
        if (score >= cfg.terminate_score) {
            res.stop_reason = StopReason::terminate_score;
            break;
        }
    }
    if (res.iterations_run > 0) {
        res.best_score = best;
        res.selected.assign(picked.begin(), picked.begin() + static_cast<std::ptrdiff_t>(best_len));
    }
    return res;
}

// ---------------------------------------------------------------------------
// Test-set runs

struct SourceOutcome {
    std::size_t id = 0;
    std::optional<SearchResult> result;
    std::string error;
};

struct IceCountSummary {
    std::size_t min = 0;
    double mean = 0.0;
    std::size_t max = 0;
};

struct TestsetReport {
    std::vector<SourceOutcome> outcomes;
    std::size_t failures = 0;
    /// Corpus BLEU of the chosen translations, when every source has a reference.
    std::optional<double> corpus_bleu;
    IceCountSummary ice_counts;
};

inline IceCountSummary summarize_ice_counts(std::span<const SourceOutcome> outcomes) {
    IceCountSummary s;
    std::size_t n = 0;
    std::size_t total = 0;
    for (const auto& o : outcomes) {
        if (!o.result) {
            continue;
        }
        const std::size_t k = o.result->selected.size();
        s.min = n == 0 ? k : std::min(s.min, k);
        s.max = std::max(s.max, k);
        total += k;
        ++n;
    }
    s.mean = n == 0 ? 0.0 : static_cast<double>(total) / static_cast<double>(n);
    return s;
}

inline nlohmann::ordered_json outcome_to_json(const SourceOutcome& o, std::string_view source) {
    nlohmann::ordered_json j;
    j["id"] = o.id;
    j["source"] = source;
    if (!o.result) {
        j["error"] = o.error;
        return j;
    }
    const auto& r = *o.result;
    j["translation"] = r.translation;
    j["best_score"] = r.best_score;
    j["n_selected"] = r.selected.size();
    j["iterations_run"] = r.iterations_run;
    j["stop_reason"] = stop_reason_name(r.stop_reason);
    nlohmann::ordered_json sel = nlohmann::ordered_json::array();
    for (const auto& ice : r.selected) {
        sel.push_back({{"src", ice.src}, {"tgt", ice.tgt}, {"rank", ice.retriever_rank}, {"score", ice.retriever_score}});
    }
    j["selected"] = std::move(sel);
    return j;
}

/// Runs `search` for every test source (sources are spread over `workers`
/// threads; backends must tolerate concurrent calls). Failures are recorded
/// per source and do not stop the run.
inline TestsetReport run_testset(const Corpus& testset, std::span<const std::vector<IceCandidate>> candidates,
                                 const TranslateFn& translate, const EstimateFn& estimate, const SearchConfig& cfg,
                                 unsigned workers = 1) {
    if (testset.empty()) {
        throw UsageError("run_testset: empty test set");
    }
    if (candidates.size() != testset.size()) {
        throw UsageError("run_testset: candidate lists for " + std::to_string(candidates.size()) + " of " +
                         std::to_string(testset.size()) + " sources");
    }
    TestsetReport report;
    report.outcomes.resize(testset.size());
    const auto run = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const auto& pair = testset.pairs[i];
            auto& out = report.outcomes[i];
            out.id = pair.id;
            std::optional<std::string> ref;
            if (!pair.tgt.empty()) {
                ref = pair.tgt;
            }
            try {
                out.result = search(pair.src, candidates[i], translate, estimate, cfg, ref);
            } catch (const std::exception& e) {
                out.error = e.what();
            }
        }
    };
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(testset.size())));
    if (workers == 1) {
        run(0, testset.size());
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (testset.size() + workers - 1) / workers;
        for (unsigned w = 0; w < workers; ++w) {
            const std::size_t begin = std::min(testset.size(), w * chunk);
            pool.emplace_back(run, begin, std::min(testset.size(), begin + chunk));
        }
        for (auto& t : pool) {
            t.join();
        }
    }

    std::vector<std::string> hyps;
    std::vector<std::string> refs;
    bool all_refs = true;
    for (std::size_t i = 0; i < testset.size(); ++i) {
        const auto& o = report.outcomes[i];
        if (!o.result) {
            ++report.failures;
            continue;
        }
        if (testset.pairs[i].tgt.empty()) {
            all_refs = false;
        }
        hyps.push_back(o.result->translation);
        refs.push_back(testset.pairs[i].tgt);
    }
    if (all_refs && !hyps.empty()) {
        report.corpus_bleu = bleu(hyps, refs).value;
    }
    report.ice_counts = summarize_ice_counts(report.outcomes);
    return report;
}

inline std::string format_testset_jsonl(const Corpus& testset, const TestsetReport& report) {
    std::string out;
    for (std::size_t i = 0; i < report.outcomes.size(); ++i) {
        out += outcome_to_json(report.outcomes[i], testset.pairs[i].src).dump();
        out += '\n';
    }
    return out;
}

/// Groups retriever JSONL rows {query_id, doc_id, rank, score} into
/// per-query candidate lists (ordered by rank) drawing text from `pool`.
inline std::vector<std::vector<IceCandidate>> parse_candidates(const std::vector<std::string>& lines,
                                                               const Corpus& pool, std::size_t queries) {
    std::vector<std::vector<IceCandidate>> out(queries);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(lines[i]);
            const auto q = j.at("query_id").get<std::size_t>();
            const auto d = j.at("doc_id").get<std::size_t>();
            if (q >= queries) {
                throw DataError("query_id " + std::to_string(q) + " out of range");
            }
            if (d >= pool.size()) {
                throw DataError("doc_id " + std::to_string(d) + " not in pool");
            }
            out[q].push_back({pool.pairs[d].src, pool.pairs[d].tgt, j.at("rank").get<std::size_t>(),
                              j.value("score", 0.0)});
        } catch (const nlohmann::json::exception& e) {
            throw DataError("candidates line " + std::to_string(i + 1) + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError("candidates line " + std::to_string(i + 1) + ": " + e.what());
        }
    }
    for (auto& list : out) {
        std::stable_sort(list.begin(), list.end(),
                         [](const IceCandidate& a, const IceCandidate& b) { return a.retriever_rank < b.retriever_rank; });
    }
    return out;
}

} // namespace mtda
