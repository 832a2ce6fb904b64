#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mtda/error.hpp"
#include "mtda/io.hpp"
#include "mtda/rng.hpp"
#include "mtda/tokenize.hpp"
#include "mtda/utf8.hpp"

namespace mtda {

struct SentencePair {
    std::uint64_t id = 0;
    std::string src;
    std::string tgt;
    std::optional<std::string> tag;

    bool operator==(const SentencePair&) const = default;
};

struct Corpus {
    std::string name;
    std::vector<SentencePair> pairs;
    std::optional<std::string> domain_tag;

    std::size_t size() const { return pairs.size(); }
    bool empty() const { return pairs.empty(); }

    std::vector<std::string> sources() const {
        std::vector<std::string> out;
        out.reserve(pairs.size());
        for (const auto& p : pairs) {
            out.push_back(p.src);
        }
        return out;
    }

    std::vector<std::string> targets() const {
        std::vector<std::string> out;
        out.reserve(pairs.size());
        for (const auto& p : pairs) {
            out.push_back(p.tgt);
        }
        return out;
    }

    bool operator==(const Corpus&) const = default;
};

/// tsv: "src<TAB>tgt" per line. jsonl: {"src", "tgt", optional "id", "tag"}.
/// text: one source sentence per line, empty target (monolingual side).
enum class CorpusFormat { tsv, jsonl, text };

inline CorpusFormat parse_corpus_format(std::string_view s) {
    if (s == "tsv") {
        return CorpusFormat::tsv;
    }
    if (s == "jsonl") {
        return CorpusFormat::jsonl;
    }
    if (s == "text" || s == "txt") {
        return CorpusFormat::text;
    }
    throw UsageError("unknown corpus format '" + std::string(s) + "'");
}

/// Guesses the format from the file extension; TSV otherwise.
inline CorpusFormat corpus_format_for(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".jsonl" || ext == ".json") {
        return CorpusFormat::jsonl;
    }
    if (ext == ".txt") {
        return CorpusFormat::text;
    }
    return CorpusFormat::tsv;
}

namespace detail {

inline DataError corpus_error(const std::filesystem::path& path, std::size_t line_no, const std::string& what) {
    return DataError(path.string() + ":" + std::to_string(line_no) + ": " + what);
}

inline bool blank(std::string_view s) { return trim(s).empty(); }

} // namespace detail

/// Parses corpus rows from in-memory lines. `origin` only labels errors.
inline Corpus parse_corpus(const std::vector<std::string>& lines, CorpusFormat format,
                           const std::filesystem::path& origin = "<input>") {
    Corpus c;
    c.name = origin.stem().string();
    std::uint64_t next_id = 0;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::size_t line_no = i + 1;
        const std::string& line = lines[i];
        if (utf8::find_invalid(line) != utf8::npos) {
            throw detail::corpus_error(origin, line_no, "invalid UTF-8");
        }
        SentencePair p;
        switch (format) {
        case CorpusFormat::tsv: {
            const auto tab = line.find('\t');
            if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
                const auto cols = std::count(line.begin(), line.end(), '\t') + 1;
                throw detail::corpus_error(origin, line_no,
                                           "expected 2 tab-separated columns, got " + std::to_string(cols));
            }
            p.src = line.substr(0, tab);
            p.tgt = line.substr(tab + 1);
            p.id = next_id;
            break;
        }
        case CorpusFormat::text:
            p.src = line;
            p.id = next_id;
            break;
        case CorpusFormat::jsonl: {
            if (detail::blank(line)) {
                continue;
            }
            nlohmann::json row;
            try {
                row = nlohmann::json::parse(line);
            } catch (const nlohmann::json::parse_error& e) {
                throw detail::corpus_error(origin, line_no, std::string("malformed JSON: ") + e.what());
            }
            if (!row.is_object() || !row.contains("src") || !row["src"].is_string()) {
                throw detail::corpus_error(origin, line_no, "missing string field \"src\"");
            }
            if (!row.contains("tgt") || !row["tgt"].is_string()) {
                throw detail::corpus_error(origin, line_no, "missing string field \"tgt\"");
            }
            p.src = row["src"].get<std::string>();
            p.tgt = row["tgt"].get<std::string>();
            p.id = next_id;
            if (row.contains("id")) {
                if (!row["id"].is_number_unsigned()) {
                    throw detail::corpus_error(origin, line_no, "\"id\" must be a non-negative integer");
                }
                p.id = row["id"].get<std::uint64_t>();
                if (!c.pairs.empty() && p.id <= c.pairs.back().id) {
                    throw detail::corpus_error(origin, line_no, "ids must be strictly increasing");
                }
            }
            if (row.contains("tag")) {
                if (!row["tag"].is_string()) {
                    throw detail::corpus_error(origin, line_no, "\"tag\" must be a string");
                }
                p.tag = row["tag"].get<std::string>();
            }
            break;
        }
        }
        if (detail::blank(p.src)) {
            throw detail::corpus_error(origin, line_no, "empty source sentence");
        }
        next_id = p.id + 1;
        c.pairs.push_back(std::move(p));
    }
    return c;
}

inline Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format) {
    return parse_corpus(io::read_lines(path), format, path);
}

inline Corpus load_corpus(const std::filesystem::path& path) { return load_corpus(path, corpus_format_for(path)); }

inline std::string format_corpus(const Corpus& c, CorpusFormat format) {
    std::string out;
    for (const auto& p : c.pairs) {
        switch (format) {
        case CorpusFormat::tsv:
            out += p.src;
            out += '\t';
            out += p.tgt;
            break;
        case CorpusFormat::text:
            out += p.src;
            break;
        case CorpusFormat::jsonl: {
            nlohmann::ordered_json row;
            row["id"] = p.id;
            row["src"] = p.src;
            row["tgt"] = p.tgt;
            if (p.tag) {
                row["tag"] = *p.tag;
            }
            out += row.dump();
            break;
        }
        }
        out += '\n';
    }
    return out;
}

inline void write_corpus(const std::filesystem::path& path, const Corpus& c, CorpusFormat format) {
    io::write_file_atomic(path, format_corpus(c, format));
}

inline void renumber(Corpus& c) {
    std::uint64_t id = 0;
    for (auto& p : c.pairs) {
        p.id = id++;
    }
}

/// Keeps the first occurrence of every (src, tgt); ids are reassigned densely.
inline Corpus dedup(const Corpus& c) {
    Corpus out;
    out.name = c.name;
    out.domain_tag = c.domain_tag;
    std::set<std::pair<std::string_view, std::string_view>> seen;
    for (const auto& p : c.pairs) {
        if (seen.emplace(p.src, p.tgt).second) {
            out.pairs.push_back(p);
        }
    }
    renumber(out);
    return out;
}

struct SplitSpec {
    double train_frac = 0.98;
    double dev_frac = 0.01;
    double test_frac = 0.01;
    std::uint64_t seed = 8;
};

struct CorpusSplits {
    Corpus train;
    Corpus dev;
    Corpus test;
};

/// Seeded shuffle, then partition. dev and test get floor(frac * n) pairs and
/// train takes the remainder. Each split keeps the shuffled order and is
/// renumbered from 0.
inline CorpusSplits split(const Corpus& c, const SplitSpec& spec) {
    if (c.empty()) {
        throw UsageError("cannot split an empty corpus");
    }
    for (double f : {spec.train_frac, spec.dev_frac, spec.test_frac}) {
        if (!(f >= 0.0 && f <= 1.0)) {
            throw UsageError("split fractions must lie in [0, 1]");
        }
    }
    if (std::abs(spec.train_frac + spec.dev_frac + spec.test_frac - 1.0) > 1e-9) {
        throw UsageError("split fractions must sum to 1");
    }
    const std::size_t n = c.size();
    const auto part = [n](double frac) {
        return static_cast<std::size_t>(std::floor(frac * static_cast<double>(n) + 1e-9));
    };
    const std::size_t n_dev = part(spec.dev_frac);
    const std::size_t n_test = part(spec.test_frac);
    const std::size_t n_train = n - n_dev - n_test;

    std::vector<SentencePair> shuffled = c.pairs;
    Rng rng(spec.seed);
    rng.shuffle(shuffled);

    CorpusSplits out;
    for (Corpus* s : {&out.train, &out.dev, &out.test}) {
        s->domain_tag = c.domain_tag;
    }
    out.train.name = c.name + ".train";
    out.dev.name = c.name + ".dev";
    out.test.name = c.name + ".test";
    auto it = shuffled.begin();
    out.train.pairs.assign(it, it + static_cast<std::ptrdiff_t>(n_train));
    it += static_cast<std::ptrdiff_t>(n_train);
    out.dev.pairs.assign(it, it + static_cast<std::ptrdiff_t>(n_dev));
    it += static_cast<std::ptrdiff_t>(n_dev);
    out.test.pairs.assign(it, shuffled.end());
    renumber(out.train);
    renumber(out.dev);
    renumber(out.test);
    return out;
}

} // namespace mtda
