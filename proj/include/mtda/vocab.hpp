#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <queue>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mtda/error.hpp"
#include "mtda/io.hpp"
#include "mtda/tokenize.hpp"
#include "mtda/utf8.hpp"

namespace mtda {

inline constexpr std::string_view default_eow_marker = "</w>";

struct BpeModel {
    std::vector<std::pair<std::string, std::string>> merges;
    std::string end_of_word_marker{default_eow_marker};

    bool operator==(const BpeModel&) const = default;
};

namespace detail {

/// Characters of `word`, the marker glued to the last one.
inline std::vector<std::string> word_symbols(std::string_view word, std::string_view marker) {
    auto syms = utf8::chars(word);
    if (!syms.empty()) {
        syms.back() += marker;
    }
    return syms;
}

} // namespace detail

/// Classic BPE learning over whitespace-separated words. Pair frequencies are
/// weighted by word counts; the most frequent pair is merged each round, equal
/// frequencies going to the lexicographically smallest (left, right). Stops
/// after `num_merges` rounds or when no pair occurs at least twice.
inline BpeModel learn_bpe(std::span<const std::string> lines, std::size_t num_merges,
                          std::string_view marker = default_eow_marker) {
    if (lines.empty()) {
        throw UsageError("learn_bpe: empty corpus");
    }
    std::map<std::string, std::uint64_t> word_counts;
    for (const auto& line : lines) {
        for (auto& w : split_whitespace(line)) {
            ++word_counts[std::move(w)];
        }
    }

    std::vector<std::string> symbol_text;
    std::unordered_map<std::string, std::uint32_t> symbol_id;
    const auto intern = [&](const std::string& s) {
        auto [it, fresh] = symbol_id.emplace(s, static_cast<std::uint32_t>(symbol_text.size()));
        if (fresh) {
            symbol_text.push_back(s);
        }
        return it->second;
    };
    struct Word {
        std::vector<std::uint32_t> syms;
        std::int64_t count;
    };
    std::vector<Word> words;
    words.reserve(word_counts.size());
    for (const auto& [w, c] : word_counts) {
        Word word{{}, static_cast<std::int64_t>(c)};
        for (const auto& s : detail::word_symbols(w, marker)) {
            word.syms.push_back(intern(s));
        }
        words.push_back(std::move(word));
    }

    const auto key = [](std::uint32_t a, std::uint32_t b) { return (static_cast<std::uint64_t>(a) << 32) | b; };
    std::unordered_map<std::uint64_t, std::int64_t> pair_count;
    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> pair_words;
    for (std::uint32_t wi = 0; wi < words.size(); ++wi) {
        const auto& s = words[wi].syms;
        for (std::size_t i = 0; i + 1 < s.size(); ++i) {
            const auto k = key(s[i], s[i + 1]);
            pair_count[k] += words[wi].count;
            pair_words[k].push_back(wi);
        }
    }

    // Max-heap with lazy invalidation: entries whose count no longer matches
    // pair_count are skipped when they surface.
    struct Entry {
        std::int64_t count;
        std::uint64_t pair;
    };
    const auto worse = [&](const Entry& x, const Entry& y) {
        if (x.count != y.count) {
            return x.count < y.count;
        }
        const auto& xl = symbol_text[x.pair >> 32];
        const auto& yl = symbol_text[y.pair >> 32];
        if (xl != yl) {
            return xl > yl;
        }
        return symbol_text[x.pair & 0xFFFFFFFFU] > symbol_text[y.pair & 0xFFFFFFFFU];
    };
    std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> heap(worse);
    for (const auto& [k, c] : pair_count) {
        heap.push({c, k});
    }

    BpeModel model;
    model.end_of_word_marker = std::string(marker);
    std::vector<std::uint32_t> merged;
    while (model.merges.size() < num_merges && !heap.empty()) {
        const Entry top = heap.top();
        heap.pop();
        const auto it = pair_count.find(top.pair);
        if (it == pair_count.end() || it->second != top.count) {
            continue;
        }
        if (top.count < 2) {
            break;
        }
        const std::uint32_t left = static_cast<std::uint32_t>(top.pair >> 32);
        const std::uint32_t right = static_cast<std::uint32_t>(top.pair & 0xFFFFFFFFU);
        model.merges.emplace_back(symbol_text[left], symbol_text[right]);
        const std::uint32_t joined = intern(symbol_text[left] + symbol_text[right]);

        std::vector<std::uint32_t> affected = std::move(pair_words[top.pair]);
        pair_words.erase(top.pair);
        std::sort(affected.begin(), affected.end());
        affected.erase(std::unique(affected.begin(), affected.end()), affected.end());
        std::set<std::uint64_t> changed;
        for (const auto wi : affected) {
            auto& w = words[wi];
            bool present = false;
            for (std::size_t i = 0; i + 1 < w.syms.size(); ++i) {
                if (w.syms[i] == left && w.syms[i + 1] == right) {
                    present = true;
                    break;
                }
            }
            if (!present) {
                continue;
            }
            for (std::size_t i = 0; i + 1 < w.syms.size(); ++i) {
                const auto k = key(w.syms[i], w.syms[i + 1]);
                pair_count[k] -= w.count;
                changed.insert(k);
            }
            merged.clear();
            for (std::size_t i = 0; i < w.syms.size();) {
                if (i + 1 < w.syms.size() && w.syms[i] == left && w.syms[i + 1] == right) {
                    merged.push_back(joined);
                    i += 2;
                } else {
                    merged.push_back(w.syms[i]);
                    ++i;
                }
            }
            w.syms = merged;
            for (std::size_t i = 0; i + 1 < w.syms.size(); ++i) {
                const auto k = key(w.syms[i], w.syms[i + 1]);
                pair_count[k] += w.count;
                pair_words[k].push_back(wi);
                changed.insert(k);
            }
        }
        for (const auto k : changed) {
            const auto c = pair_count[k];
            if (c > 0) {
                heap.push({c, k});
            } else {
                pair_count.erase(k);
            }
        }
    }
    return model;
}

/// Applies a model word by word. Per word, the adjacent pair with the
/// earliest merge rank is merged at every non-overlapping position from the
/// left, and this repeats until no adjacent pair has a merge. Results are
/// cached per word, so one encoder should not be shared between threads.
class BpeEncoder {
  public:
    explicit BpeEncoder(BpeModel model) : model_(std::move(model)) {
        for (std::size_t r = 0; r < model_.merges.size(); ++r) {
            rank_.emplace(model_.merges[r].first + '\x1f' + model_.merges[r].second, r);
        }
    }

    const BpeModel& model() const { return model_; }

    const std::vector<std::string>& encode_word(const std::string& word) {
        if (const auto it = cache_.find(word); it != cache_.end()) {
            return it->second;
        }
        auto syms = detail::word_symbols(word, model_.end_of_word_marker);
        for (;;) {
            std::size_t best_rank = static_cast<std::size_t>(-1);
            for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
                if (const auto it = rank_.find(syms[i] + '\x1f' + syms[i + 1]); it != rank_.end()) {
                    best_rank = std::min(best_rank, it->second);
                }
            }
            if (best_rank == static_cast<std::size_t>(-1)) {
                break;
            }
            const auto& [l, r] = model_.merges[best_rank];
            std::vector<std::string> next;
            next.reserve(syms.size());
            for (std::size_t i = 0; i < syms.size();) {
                if (i + 1 < syms.size() && syms[i] == l && syms[i + 1] == r) {
                    next.push_back(syms[i] + syms[i + 1]);
                    i += 2;
                } else {
                    next.push_back(std::move(syms[i]));
                    ++i;
                }
            }
            syms = std::move(next);
        }
        return cache_.emplace(word, std::move(syms)).first->second;
    }

    std::vector<std::string> encode(std::string_view text) {
        std::vector<std::string> out;
        for (const auto& w : split_whitespace(text)) {
            const auto& toks = encode_word(w);
            out.insert(out.end(), toks.begin(), toks.end());
        }
        return out;
    }

  private:
    BpeModel model_;
    std::unordered_map<std::string, std::size_t> rank_;
    std::unordered_map<std::string, std::vector<std::string>> cache_;
};

inline std::vector<std::string> apply_bpe(const BpeModel& model, std::string_view text) {
    BpeEncoder enc(model);
    return enc.encode(text);
}

/// Joins subword tokens, turning each end-of-word marker into a space.
inline std::string detokenize(std::span<const std::string> tokens, std::string_view marker = default_eow_marker) {
    std::string out;
    for (const auto& t : tokens) {
        if (t.size() >= marker.size() && std::string_view(t).substr(t.size() - marker.size()) == marker) {
            out.append(t, 0, t.size() - marker.size());
            out += ' ';
        } else {
            out += t;
        }
    }
    if (!out.empty() && out.back() == ' ') {
        out.pop_back();
    }
    return out;
}

inline std::string format_bpe(const BpeModel& model) {
    std::string out = "#bpe-v1 marker=" + model.end_of_word_marker + "\n";
    for (const auto& [l, r] : model.merges) {
        out += l;
        out += ' ';
        out += r;
        out += '\n';
    }
    return out;
}

inline BpeModel parse_bpe(const std::vector<std::string>& lines) {
    constexpr std::string_view header = "#bpe-v1 marker=";
    if (lines.empty() || !lines[0].starts_with(header)) {
        throw DataError("bpe model: missing '#bpe-v1 marker=...' header");
    }
    BpeModel m;
    m.end_of_word_marker = lines[0].substr(header.size());
    std::set<std::pair<std::string, std::string>> seen;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) {
            continue;
        }
        const auto sp = lines[i].find(' ');
        if (sp == std::string::npos || sp == 0 || sp + 1 >= lines[i].size() ||
            lines[i].find(' ', sp + 1) != std::string::npos) {
            throw DataError("bpe model line " + std::to_string(i + 1) + ": expected 'left right'");
        }
        std::pair<std::string, std::string> merge{lines[i].substr(0, sp), lines[i].substr(sp + 1)};
        if (!seen.insert(merge).second) {
            throw DataError("bpe model line " + std::to_string(i + 1) + ": duplicate merge");
        }
        m.merges.push_back(std::move(merge));
    }
    return m;
}

inline void save_bpe(const std::filesystem::path& path, const BpeModel& model) {
    io::write_file_atomic(path, format_bpe(model));
}

inline BpeModel load_bpe(const std::filesystem::path& path) { return parse_bpe(io::read_lines(path)); }

/// 8K merges below 100K lines, 30K up to 1M lines, 50K above.
constexpr std::size_t merge_ops_for_size(std::size_t line_count) {
    if (line_count < 100'000) {
        return 8'000;
    }
    if (line_count <= 1'000'000) {
        return 30'000;
    }
    return 50'000;
}

// ---------------------------------------------------------------------------
// Vocabularies

struct Vocabulary {
    std::map<std::string, std::uint64_t> entries;

    std::size_t size() const { return entries.size(); }
    bool empty() const { return entries.empty(); }
    bool contains(const std::string& t) const { return entries.count(t) != 0; }

    std::uint64_t total() const {
        std::uint64_t s = 0;
        for (const auto& [_, c] : entries) {
            s += c;
        }
        return s;
    }

    bool operator==(const Vocabulary&) const = default;
};

template <typename Range>
Vocabulary build_vocab(const Range& tokens) {
    Vocabulary v;
    for (const auto& t : tokens) {
        ++v.entries[std::string(t)];
    }
    return v;
}

/// "token count" lines, most frequent first, ties by token.
inline std::string format_vocab(const Vocabulary& v) {
    std::vector<std::pair<std::string, std::uint64_t>> rows(v.entries.begin(), v.entries.end());
    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::string out;
    for (const auto& [t, c] : rows) {
        out += t;
        out += ' ';
        out += std::to_string(c);
        out += '\n';
    }
    return out;
}

inline Vocabulary parse_vocab(const std::vector<std::string>& lines) {
    Vocabulary v;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].empty()) {
            continue;
        }
        const auto sp = lines[i].rfind(' ');
        if (sp == std::string::npos || sp == 0) {
            throw DataError("vocab line " + std::to_string(i + 1) + ": expected 'token count'");
        }
        std::uint64_t count = 0;
        try {
            std::size_t used = 0;
            count = std::stoull(lines[i].substr(sp + 1), &used);
            if (used != lines[i].size() - sp - 1) {
                throw std::invalid_argument("trailing characters");
            }
        } catch (const std::exception&) {
            throw DataError("vocab line " + std::to_string(i + 1) + ": bad count");
        }
        if (count == 0) {
            throw DataError("vocab line " + std::to_string(i + 1) + ": count must be >= 1");
        }
        v.entries[lines[i].substr(0, sp)] += count;
    }
    return v;
}

inline void save_vocab(const std::filesystem::path& path, const Vocabulary& v) {
    io::write_file_atomic(path, format_vocab(v));
}

inline Vocabulary load_vocab(const std::filesystem::path& path) { return parse_vocab(io::read_lines(path)); }

// ---------------------------------------------------------------------------
// Fine-tuning configurations

/// D: generic (out-of-domain) data, E: in-domain data, DE: both combined.
enum class DataSource { D, E, DE };

inline const char* source_name(DataSource s) {
    switch (s) {
    case DataSource::D:
        return "D";
    case DataSource::E:
        return "E";
    case DataSource::DE:
        return "D+E";
    }
    return "?";
}

struct FtConfig {
    std::string id;
    DataSource bpe_source = DataSource::D;
    DataSource vocab_source = DataSource::D;

    bool operator==(const FtConfig&) const = default;
};

/// Every (BPE model, vocabulary source) combination except a combined-data
/// BPE model with a single-source vocabulary: C1..C7.
inline std::vector<FtConfig> enumerate_configs() {
    std::vector<FtConfig> out;
    for (DataSource bpe : {DataSource::D, DataSource::E, DataSource::DE}) {
        for (DataSource voc : {DataSource::D, DataSource::DE, DataSource::E}) {
            if (bpe == DataSource::DE && voc != DataSource::DE) {
                continue;
            }
            out.push_back({"C" + std::to_string(out.size() + 1), bpe, voc});
        }
    }
    return out;
}

inline std::string format_configs(std::span<const FtConfig> configs) {
    std::string out = "config\tbpe\tvocab\n";
    for (const auto& c : configs) {
        out += c.id;
        out += '\t';
        out += source_name(c.bpe_source);
        out += "_BPE\t";
        out += source_name(c.vocab_source);
        out += '\n';
    }
    return out;
}

struct OverlapReport {
    double src_overlap_pct = 0.0;
    double tgt_overlap_pct = 0.0;
    std::size_t new_src_tokens = 0;
    std::size_t new_tgt_tokens = 0;
};

struct SideOverlap {
    double overlap_pct = 0.0;
    std::size_t new_tokens = 0;
};

/// Share of the base vocabulary's total frequency carried by tokens the
/// config vocabulary also has, and the number of config tokens the base
/// lacks (raw set difference, no filtering).
inline SideOverlap side_overlap(const Vocabulary& config, const Vocabulary& base) {
    if (base.empty()) {
        throw UsageError("overlap: base vocabulary is empty");
    }
    double shared = 0.0;
    double total = 0.0;
    for (const auto& [tok, count] : base.entries) {
        total += static_cast<double>(count);
        if (config.contains(tok)) {
            shared += static_cast<double>(count);
        }
    }
    std::size_t fresh = 0;
    for (const auto& [tok, _] : config.entries) {
        fresh += base.contains(tok) ? 0 : 1;
    }
    return {100.0 * shared / total, fresh};
}

inline OverlapReport overlap_report(const Vocabulary& config_src, const Vocabulary& config_tgt,
                                    const Vocabulary& base_src, const Vocabulary& base_tgt) {
    const auto s = side_overlap(config_src, base_src);
    const auto t = side_overlap(config_tgt, base_tgt);
    return {s.overlap_pct, t.overlap_pct, s.new_tokens, t.new_tokens};
}

} // namespace mtda
