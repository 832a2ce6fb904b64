#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include "mtda/error.hpp"
#include "mtda/rng.hpp"
#include "mtda/tokenize.hpp"
#include "mtda/utf8.hpp"

namespace mtda {

enum class Metric { bleu, chrf2, ter, pearson };

inline const char* metric_name(Metric m) {
    switch (m) {
    case Metric::bleu:
        return "bleu";
    case Metric::chrf2:
        return "chrf2";
    case Metric::ter:
        return "ter";
    case Metric::pearson:
        return "pearson";
    }
    return "?";
}

inline Metric parse_metric(std::string_view s) {
    if (s == "bleu") {
        return Metric::bleu;
    }
    if (s == "chrf2" || s == "chrf") {
        return Metric::chrf2;
    }
    if (s == "ter") {
        return Metric::ter;
    }
    if (s == "pearson") {
        return Metric::pearson;
    }
    throw UsageError("unknown metric '" + std::string(s) + "'");
}

/// Higher is better for every metric except TER.
constexpr bool higher_is_better(Metric m) { return m != Metric::ter; }

struct MetricScore {
    double value = 0.0;
    Metric metric = Metric::bleu;
};

namespace detail {

inline void check_parallel(std::size_t hyps, std::size_t refs) {
    if (hyps != refs) {
        throw UsageError("hypothesis/reference count mismatch: " + std::to_string(hyps) + " vs " +
                         std::to_string(refs));
    }
    if (hyps == 0) {
        throw UsageError("at least one segment is required");
    }
}

inline DataError empty_reference(std::size_t segment) {
    return DataError("empty reference at segment " + std::to_string(segment));
}

template <typename Key>
using Counts = std::map<Key, double>;

inline Counts<std::vector<std::string>> word_ngrams(const std::vector<std::string>& toks, std::size_t n) {
    Counts<std::vector<std::string>> out;
    for (std::size_t i = 0; i + n <= toks.size(); ++i) {
        out[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                     toks.begin() + static_cast<std::ptrdiff_t>(i + n))] += 1.0;
    }
    return out;
}

template <typename Key>
double clipped_matches(const Counts<Key>& hyp, const Counts<Key>& ref) {
    double m = 0.0;
    for (const auto& [gram, count] : hyp) {
        if (auto it = ref.find(gram); it != ref.end()) {
            m += std::min(count, it->second);
        }
    }
    return m;
}

} // namespace detail

// ---------------------------------------------------------------------------
// BLEU

inline constexpr std::size_t bleu_max_order = 4;

/// Sufficient statistics of one or more segments; corpus BLEU sums these.
struct BleuStats {
    std::array<double, bleu_max_order> matches{};
    std::array<double, bleu_max_order> totals{};
    double hyp_len = 0.0;
    double ref_len = 0.0;

    BleuStats& operator+=(const BleuStats& o) {
        for (std::size_t n = 0; n < bleu_max_order; ++n) {
            matches[n] += o.matches[n];
            totals[n] += o.totals[n];
        }
        hyp_len += o.hyp_len;
        ref_len += o.ref_len;
        return *this;
    }
};

inline BleuStats bleu_stats(std::string_view hyp, std::string_view ref, bool case_sensitive = false) {
    const auto h = word_tokenize(hyp, !case_sensitive);
    const auto r = word_tokenize(ref, !case_sensitive);
    BleuStats s;
    s.hyp_len = static_cast<double>(h.size());
    s.ref_len = static_cast<double>(r.size());
    for (std::size_t n = 1; n <= bleu_max_order; ++n) {
        const auto hg = detail::word_ngrams(h, n);
        const auto rg = detail::word_ngrams(r, n);
        s.totals[n - 1] = h.size() >= n ? static_cast<double>(h.size() - n + 1) : 0.0;
        s.matches[n - 1] = detail::clipped_matches(hg, rg);
    }
    return s;
}

/// BLEU on the 0-100 scale from pooled statistics. Orders for which the
/// hypothesis side has no n-grams at all are left out of the geometric mean
/// (so a corpus of short segments can still reach 100). With `smooth`, a zero
/// match count at order n is floored to a precision of 1 / (2 * total_n).
inline double bleu_from_stats(const BleuStats& s, bool smooth = false) {
    if (s.hyp_len <= 0.0) {
        return 0.0;
    }
    double log_sum = 0.0;
    std::size_t orders = 0;
    for (std::size_t n = 0; n < bleu_max_order; ++n) {
        if (s.totals[n] <= 0.0) {
            continue;
        }
        double p = s.matches[n] / s.totals[n];
        if (s.matches[n] <= 0.0) {
            if (!smooth) {
                return 0.0;
            }
            p = 1.0 / (2.0 * s.totals[n]);
        }
        log_sum += std::log(p);
        ++orders;
    }
    const double bp = s.hyp_len < s.ref_len ? std::exp(1.0 - s.ref_len / s.hyp_len) : 1.0;
    return 100.0 * bp * std::exp(log_sum / static_cast<double>(orders));
}

/// Corpus-level BLEU, orders 1..4, brevity penalty over total lengths.
inline MetricScore bleu(std::span<const std::string> hyps, std::span<const std::string> refs,
                        bool case_sensitive = false) {
    detail::check_parallel(hyps.size(), refs.size());
    BleuStats total;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        const BleuStats s = bleu_stats(hyps[i], refs[i], case_sensitive);
        if (s.ref_len == 0.0) {
            throw detail::empty_reference(i);
        }
        total += s;
    }
    return {bleu_from_stats(total), Metric::bleu};
}

/// Smoothed sentence-level BLEU (0-100), used for QE labels and as the
/// reference oracle of the ICE search.
inline double sentence_bleu(std::string_view hyp, std::string_view ref, bool case_sensitive = false) {
    return bleu_from_stats(bleu_stats(hyp, ref, case_sensitive), true);
}

// ---------------------------------------------------------------------------
// chrF2

inline constexpr std::size_t chrf_max_order = 6;
inline constexpr double chrf_beta = 2.0;

struct ChrfStats {
    std::array<double, chrf_max_order> matches{};
    std::array<double, chrf_max_order> hyp_total{};
    std::array<double, chrf_max_order> ref_total{};

    ChrfStats& operator+=(const ChrfStats& o) {
        for (std::size_t n = 0; n < chrf_max_order; ++n) {
            matches[n] += o.matches[n];
            hyp_total[n] += o.hyp_total[n];
            ref_total[n] += o.ref_total[n];
        }
        return *this;
    }
};

namespace detail {

inline std::u32string chrf_chars(std::string_view text, bool case_sensitive) {
    std::u32string out;
    for (char32_t cp : utf8::decode(text)) {
        if (!is_space(cp)) {
            out.push_back(case_sensitive ? cp : to_lower(cp));
        }
    }
    return out;
}

inline Counts<std::u32string> char_ngrams(const std::u32string& s, std::size_t n) {
    Counts<std::u32string> out;
    for (std::size_t i = 0; i + n <= s.size(); ++i) {
        out[s.substr(i, n)] += 1.0;
    }
    return out;
}

} // namespace detail

inline ChrfStats chrf_stats(std::string_view hyp, std::string_view ref, bool case_sensitive = false) {
    const auto h = detail::chrf_chars(hyp, case_sensitive);
    const auto r = detail::chrf_chars(ref, case_sensitive);
    ChrfStats s;
    for (std::size_t n = 1; n <= chrf_max_order; ++n) {
        const auto hg = detail::char_ngrams(h, n);
        const auto rg = detail::char_ngrams(r, n);
        s.hyp_total[n - 1] = h.size() >= n ? static_cast<double>(h.size() - n + 1) : 0.0;
        s.ref_total[n - 1] = r.size() >= n ? static_cast<double>(r.size() - n + 1) : 0.0;
        s.matches[n - 1] = detail::clipped_matches(hg, rg);
    }
    return s;
}

/// Per-order F-beta (beta = 2) from pooled counts, averaged over orders that
/// have n-grams on at least one side; 0-100 scale.
inline double chrf_from_stats(const ChrfStats& s) {
    const double b2 = chrf_beta * chrf_beta;
    double sum = 0.0;
    std::size_t orders = 0;
    for (std::size_t n = 0; n < chrf_max_order; ++n) {
        if (s.hyp_total[n] <= 0.0 && s.ref_total[n] <= 0.0) {
            continue;
        }
        ++orders;
        const double p = s.hyp_total[n] > 0.0 ? s.matches[n] / s.hyp_total[n] : 0.0;
        const double r = s.ref_total[n] > 0.0 ? s.matches[n] / s.ref_total[n] : 0.0;
        if (p + r > 0.0) {
            sum += (1.0 + b2) * p * r / (b2 * p + r);
        }
    }
    return orders == 0 ? 0.0 : 100.0 * sum / static_cast<double>(orders);
}

inline MetricScore chrf2(std::span<const std::string> hyps, std::span<const std::string> refs,
                         bool case_sensitive = false) {
    detail::check_parallel(hyps.size(), refs.size());
    ChrfStats total;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        const ChrfStats s = chrf_stats(hyps[i], refs[i], case_sensitive);
        if (s.ref_total[0] == 0.0) {
            throw detail::empty_reference(i);
        }
        total += s;
    }
    return {chrf_from_stats(total), Metric::chrf2};
}

// ---------------------------------------------------------------------------
// TER

inline constexpr std::size_t ter_max_shift_size = 10;

struct TerStats {
    double edits = 0.0;
    double ref_len = 0.0;

    TerStats& operator+=(const TerStats& o) {
        edits += o.edits;
        ref_len += o.ref_len;
        return *this;
    }
};

namespace detail {

/// Word-level Levenshtein distance with unit costs.
inline int edit_distance(std::span<const int> hyp, std::span<const int> ref) {
    std::vector<int> prev(ref.size() + 1);
    std::vector<int> cur(ref.size() + 1);
    std::iota(prev.begin(), prev.end(), 0);
    for (std::size_t i = 1; i <= hyp.size(); ++i) {
        cur[0] = static_cast<int>(i);
        for (std::size_t j = 1; j <= ref.size(); ++j) {
            const int sub = prev[j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
            cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
        }
        std::swap(prev, cur);
    }
    return prev[ref.size()];
}

inline bool occurs_in(std::span<const int> needle, std::span<const int> hay) {
    return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

} // namespace detail

/// Number of edits (insertions, deletions, substitutions, block shifts) that
/// turn `hyp` into `ref`. Shifts are found greedily: each round tries every
/// hypothesis block of up to ten words that also occurs in the reference, at
/// every destination, and applies the one that lowers the edit distance the
/// most (first found on ties). The search ends when no shift lowers it.
inline TerStats ter_stats(std::string_view hyp, std::string_view ref, bool case_sensitive = false) {
    const auto h_tok = word_tokenize(hyp, !case_sensitive);
    const auto r_tok = word_tokenize(ref, !case_sensitive);
    std::unordered_map<std::string, int> ids;
    const auto intern = [&ids](const std::vector<std::string>& toks) {
        std::vector<int> out;
        out.reserve(toks.size());
        for (const auto& t : toks) {
            out.push_back(ids.emplace(t, static_cast<int>(ids.size())).first->second);
        }
        return out;
    };
    std::vector<int> cur = intern(h_tok);
    const std::vector<int> r = intern(r_tok);

    int cur_ed = detail::edit_distance(cur, r);
    int shifts = 0;
    std::vector<int> cand(cur.size());
    std::vector<int> best;
    while (cur_ed > 0) {
        int best_gain = 0;
        const std::size_t n = cur.size();
        for (std::size_t start = 0; start < n; ++start) {
            for (std::size_t len = 1; len <= ter_max_shift_size && start + len <= n; ++len) {
                const std::span<const int> phrase(cur.data() + start, len);
                if (!detail::occurs_in(phrase, r)) {
                    break;
                }
                // `rest` is cur with the phrase removed; insert the phrase
                // before rest[dest].
                for (std::size_t dest = 0; dest + len <= n; ++dest) {
                    if (dest == start) {
                        continue;
                    }
                    std::size_t k = 0;
                    std::size_t src = 0;
                    const auto copy_rest = [&](std::size_t count) {
                        while (count > 0) {
                            if (src == start) {
                                src += len;
                            }
                            cand[k++] = cur[src++];
                            --count;
                        }
                    };
                    copy_rest(dest);
                    for (std::size_t p = 0; p < len; ++p) {
                        cand[k++] = phrase[p];
                    }
                    copy_rest(n - len - dest);
                    const int gain = cur_ed - detail::edit_distance(cand, r);
                    if (gain > best_gain) {
                        best_gain = gain;
                        best = cand;
                    }
                }
            }
        }
        if (best_gain <= 0) {
            break;
        }
        cur = best;
        cur_ed -= best_gain;
        ++shifts;
    }
    return {static_cast<double>(cur_ed + shifts), static_cast<double>(r.size())};
}

inline double ter_from_stats(const TerStats& s) { return s.ref_len > 0.0 ? 100.0 * s.edits / s.ref_len : 0.0; }

/// Sentence-level TER (0-100+, lower is better).
inline double sentence_ter(std::string_view hyp, std::string_view ref, bool case_sensitive = false) {
    const TerStats s = ter_stats(hyp, ref, case_sensitive);
    if (s.ref_len == 0.0) {
        throw detail::empty_reference(0);
    }
    return ter_from_stats(s);
}

/// Corpus TER: total edits over total reference words, times 100.
inline MetricScore ter(std::span<const std::string> hyps, std::span<const std::string> refs,
                       bool case_sensitive = false) {
    detail::check_parallel(hyps.size(), refs.size());
    TerStats total;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        const TerStats s = ter_stats(hyps[i], refs[i], case_sensitive);
        if (s.ref_len == 0.0) {
            throw detail::empty_reference(i);
        }
        total += s;
    }
    return {ter_from_stats(total), Metric::ter};
}

inline MetricScore score_corpus(Metric m, std::span<const std::string> hyps, std::span<const std::string> refs,
                                bool case_sensitive = false) {
    switch (m) {
    case Metric::bleu:
        return bleu(hyps, refs, case_sensitive);
    case Metric::chrf2:
        return chrf2(hyps, refs, case_sensitive);
    case Metric::ter:
        return ter(hyps, refs, case_sensitive);
    case Metric::pearson:
        break;
    }
    throw UsageError("pearson is not a reference-based corpus metric");
}

// ---------------------------------------------------------------------------
// Pearson

/// Sample Pearson correlation in [-1, 1].
inline MetricScore pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw UsageError("pearson: length mismatch");
    }
    if (x.size() < 2) {
        throw UsageError("pearson: at least two points are required");
    }
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) {
        throw DataError("pearson: zero variance, correlation undefined");
    }
    return {std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0), Metric::pearson};
}

// ---------------------------------------------------------------------------
// Paired bootstrap resampling

struct BootstrapResult {
    std::size_t iterations = 0;
    std::size_t sample_size = 0;
    std::size_t wins_a = 0;
    std::size_t wins_b = 0;
    std::size_t ties = 0;
    /// The system with more wins won at least 95% of the iterations.
    bool significant = false;
    double score_a = 0.0;
    double score_b = 0.0;
    /// 95% percentile intervals of the per-sample scores.
    std::array<double, 2> interval_a{};
    std::array<double, 2> interval_b{};
};

namespace detail {

/// Per-segment statistics for one metric, summable over any index sample.
class SegmentScorer {
  public:
    SegmentScorer(Metric metric, std::span<const std::string> hyps, std::span<const std::string> refs,
                  bool case_sensitive)
        : metric_(metric) {
        for (std::size_t i = 0; i < hyps.size(); ++i) {
            switch (metric) {
            case Metric::bleu:
                bleu_.push_back(bleu_stats(hyps[i], refs[i], case_sensitive));
                if (bleu_.back().ref_len == 0.0) {
                    throw empty_reference(i);
                }
                break;
            case Metric::chrf2:
                chrf_.push_back(chrf_stats(hyps[i], refs[i], case_sensitive));
                if (chrf_.back().ref_total[0] == 0.0) {
                    throw empty_reference(i);
                }
                break;
            case Metric::ter:
                ter_.push_back(ter_stats(hyps[i], refs[i], case_sensitive));
                if (ter_.back().ref_len == 0.0) {
                    throw empty_reference(i);
                }
                break;
            case Metric::pearson:
                throw UsageError("bootstrap supports bleu, chrf2 and ter");
            }
        }
    }

    double score(std::span<const std::size_t> sample) const {
        switch (metric_) {
        case Metric::bleu: {
            BleuStats s;
            for (std::size_t i : sample) {
                s += bleu_[i];
            }
            return bleu_from_stats(s);
        }
        case Metric::chrf2: {
            ChrfStats s;
            for (std::size_t i : sample) {
                s += chrf_[i];
            }
            return chrf_from_stats(s);
        }
        case Metric::ter: {
            TerStats s;
            for (std::size_t i : sample) {
                s += ter_[i];
            }
            return ter_from_stats(s);
        }
        case Metric::pearson:
            break;
        }
        return 0.0;
    }

  private:
    Metric metric_;
    std::vector<BleuStats> bleu_;
    std::vector<ChrfStats> chrf_;
    std::vector<TerStats> ter_;
};

inline double percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    return v[lo] + (v[hi] - v[lo]) * (pos - static_cast<double>(lo));
}

} // namespace detail

/// Paired bootstrap: each iteration draws `sample_size` segment indices with
/// replacement (stream derived from (seed, iteration)), scores both systems on
/// that sample and records which one is better. Ties are counted separately.
inline BootstrapResult paired_bootstrap(std::span<const std::string> hyps_a, std::span<const std::string> hyps_b,
                                        std::span<const std::string> refs, Metric metric, std::size_t iterations,
                                        std::size_t sample_size, std::uint64_t seed, bool case_sensitive = false,
                                        unsigned workers = 1) {
    detail::check_parallel(hyps_a.size(), refs.size());
    detail::check_parallel(hyps_b.size(), refs.size());
    if (iterations == 0) {
        throw UsageError("bootstrap needs at least one iteration");
    }
    if (sample_size == 0 || sample_size > refs.size()) {
        throw UsageError("bootstrap sample size must be in [1, " + std::to_string(refs.size()) + "]");
    }
    const detail::SegmentScorer a(metric, hyps_a, refs, case_sensitive);
    const detail::SegmentScorer b(metric, hyps_b, refs, case_sensitive);

    std::vector<double> sa(iterations);
    std::vector<double> sb(iterations);
    const auto run = [&](std::size_t begin, std::size_t end) {
        std::vector<std::size_t> sample(sample_size);
        for (std::size_t it = begin; it < end; ++it) {
            Rng rng = Rng::stream(seed, it);
            for (auto& idx : sample) {
                idx = static_cast<std::size_t>(rng.below(refs.size()));
            }
            sa[it] = a.score(sample);
            sb[it] = b.score(sample);
        }
    };
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(iterations)));
    if (workers == 1) {
        run(0, iterations);
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (iterations + workers - 1) / workers;
        for (unsigned w = 0; w < workers; ++w) {
            const std::size_t begin = std::min(iterations, w * chunk);
            const std::size_t end = std::min(iterations, begin + chunk);
            pool.emplace_back(run, begin, end);
        }
        for (auto& t : pool) {
            t.join();
        }
    }

    BootstrapResult res;
    res.iterations = iterations;
    res.sample_size = sample_size;
    const bool higher = higher_is_better(metric);
    for (std::size_t it = 0; it < iterations; ++it) {
        if (sa[it] == sb[it]) {
            ++res.ties;
        } else if ((sa[it] > sb[it]) == higher) {
            ++res.wins_a;
        } else {
            ++res.wins_b;
        }
    }
    const double best = static_cast<double>(std::max(res.wins_a, res.wins_b));
    res.significant = best / static_cast<double>(iterations) >= 0.95;

    std::vector<std::size_t> all(refs.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    res.score_a = a.score(all);
    res.score_b = b.score(all);
    res.interval_a = {detail::percentile(sa, 0.025), detail::percentile(sa, 0.975)};
    res.interval_b = {detail::percentile(sb, 0.025), detail::percentile(sb, 0.975)};
    return res;
}

// ---------------------------------------------------------------------------
// Two-sample Kolmogorov-Smirnov

struct KsResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

/// Survival function of the Kolmogorov distribution, Q(lambda) = P(K > lambda).
inline double kolmogorov_survival(double lambda) {
    if (lambda <= 0.0) {
        return 1.0;
    }
    constexpr double pi = 3.14159265358979323846;
    double q = 0.0;
    if (lambda < 1.18) {
        // small-lambda series for the CDF converges fast here
        const double y = std::exp(-pi * pi / (8.0 * lambda * lambda));
        const double cdf = std::sqrt(2.0 * pi) / lambda * (y + std::pow(y, 9) + std::pow(y, 25) + std::pow(y, 49));
        q = 1.0 - cdf;
    } else {
        const double x = std::exp(-2.0 * lambda * lambda);
        q = 2.0 * (x - std::pow(x, 4) + std::pow(x, 9) - std::pow(x, 16));
    }
    return std::clamp(q, 0.0, 1.0);
}

/// Statistic is the largest absolute ECDF gap over the pooled sample; the
/// p-value is asymptotic, Q(sqrt(n_a n_b / (n_a + n_b)) * D).
inline KsResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) {
        throw UsageError("ks_two_sample: both samples must be non-empty");
    }
    std::vector<double> xs(a.begin(), a.end());
    std::vector<double> ys(b.begin(), b.end());
    std::sort(xs.begin(), xs.end());
    std::sort(ys.begin(), ys.end());
    const double na = static_cast<double>(xs.size());
    const double nb = static_cast<double>(ys.size());
    std::size_t i = 0;
    std::size_t j = 0;
    double d = 0.0;
    while (i < xs.size() && j < ys.size()) {
        const double v = std::min(xs[i], ys[j]);
        while (i < xs.size() && xs[i] == v) {
            ++i;
        }
        while (j < ys.size() && ys[j] == v) {
            ++j;
        }
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    const double ne = na * nb / (na + nb);
    return {d, kolmogorov_survival(std::sqrt(ne) * d)};
}

} // namespace mtda
