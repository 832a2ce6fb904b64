#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mtda/backend.hpp"
#include "mtda/corpus.hpp"
#include "mtda/error.hpp"
#include "mtda/metrics.hpp"
#include "mtda/rng.hpp"

namespace mtda {

struct QeTriplet {
    std::string src;
    std::string mt;
    double label = 0.0;
    std::optional<std::string> ref;

    bool operator==(const QeTriplet&) const = default;
};

enum class LabelMetric { ter, bleu };

inline LabelMetric parse_label_metric(std::string_view s) {
    if (s == "ter") {
        return LabelMetric::ter;
    }
    if (s == "bleu") {
        return LabelMetric::bleu;
    }
    throw UsageError("label metric must be 'ter' or 'bleu', got '" + std::string(s) + "'");
}

/// Sentence TER, or smoothed sentence BLEU, of `mt` against `ref`.
inline double triplet_label(LabelMetric metric, std::string_view mt, std::string_view ref) {
    return metric == LabelMetric::ter ? sentence_ter(mt, ref) : sentence_bleu(mt, ref);
}

/// Synthetic QE data: the corpus is cut into two halves (the first half is
/// what the external MT system trains on), `portion` pairs are sampled from
/// the second half, their sources are translated and labelled against the
/// target side. Output order follows the sample order regardless of how many
/// translation requests are in flight.
inline std::vector<QeTriplet> make_triplets(const Corpus& parallel, const TranslateFn& translate,
                                            std::size_t portion, LabelMetric label_metric, std::uint64_t seed,
                                            unsigned workers = 1) {
    const std::size_t half_begin = parallel.size() / 2;
    const std::size_t half_size = parallel.size() - half_begin;
    if (portion > half_size) {
        throw UsageError("make_triplets: portion " + std::to_string(portion) + " exceeds half size " +
                         std::to_string(half_size));
    }
    Rng rng(seed);
    const auto picks = rng.sample_indices(half_size, portion);
    std::vector<QeTriplet> out(portion);
    std::vector<std::exception_ptr> failures(portion);
    const auto run = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const auto& pair = parallel.pairs[half_begin + picks[i]];
            try {
                QeTriplet t;
                t.src = pair.src;
                t.mt = translate(pair.src);
                t.ref = pair.tgt;
                t.label = triplet_label(label_metric, t.mt, pair.tgt);
                out[i] = std::move(t);
            } catch (...) {
                failures[i] = std::current_exception();
            }
        }
    };
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(portion, 1))));
    if (workers == 1) {
        run(0, portion);
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (portion + workers - 1) / workers;
        for (unsigned w = 0; w < workers; ++w) {
            const std::size_t begin = std::min(portion, w * chunk);
            pool.emplace_back(run, begin, std::min(portion, begin + chunk));
        }
        for (auto& t : pool) {
            t.join();
        }
    }
    for (std::size_t i = 0; i < portion; ++i) {
        if (!failures[i]) {
            continue;
        }
        const std::string where = "make_triplets sample " + std::to_string(i) + ": ";
        try {
            std::rethrow_exception(failures[i]);
        } catch (const BackendError& e) {
            throw BackendError(e.reason(), where + e.what());
        } catch (const Error& e) {
            throw Error(e.kind(), where + e.what());
        } catch (const std::exception& e) {
            throw BackendError(BackendError::Reason::protocol, where + e.what());
        }
    }
    return out;
}

inline std::string format_triplet(const QeTriplet& t) {
    nlohmann::ordered_json j;
    j["src"] = t.src;
    j["mt"] = t.mt;
    // labels are serialized with 6 decimals
    j["label"] = std::round(t.label * 1e6) / 1e6;
    if (t.ref) {
        j["ref"] = *t.ref;
    }
    return j.dump();
}

// ---------------------------------------------------------------------------
// Domain-tagged inputs

enum class DomainTag { ID, OOD };

inline const char* tag_name(DomainTag t) { return t == DomainTag::ID ? "ID" : "OOD"; }

inline DomainTag parse_domain_tag(std::string_view s) {
    if (s == "ID") {
        return DomainTag::ID;
    }
    if (s == "OOD") {
        return DomainTag::OOD;
    }
    throw UsageError("domain tag must be ID or OOD, got '" + std::string(s) + "'");
}

struct TaggedExample {
    std::string text;
    DomainTag tag = DomainTag::ID;
};

inline bool contains_tag_markers(std::string_view s) {
    for (std::string_view m : {"<s>", "</s>", "<ID>", "<OOD>"}) {
        if (s.find(m) != std::string_view::npos) {
            return true;
        }
    }
    return false;
}

/// "<s> {src} </s> {trg} <{tag}> </s>". Strict mode rejects text that already
/// contains one of the markers, since it could not be parsed back.
inline TaggedExample format_tagged(std::string_view src, std::string_view trg, DomainTag tag, bool strict = false) {
    if (strict && (contains_tag_markers(src) || contains_tag_markers(trg))) {
        throw DataError("format_tagged: input contains a reserved marker");
    }
    std::string text = "<s> ";
    text += src;
    text += " </s> ";
    text += trg;
    text += " <";
    text += tag_name(tag);
    text += "> </s>";
    return {std::move(text), tag};
}

struct ParsedTagged {
    std::string src;
    std::string trg;
    DomainTag tag = DomainTag::ID;
};

inline ParsedTagged parse_tagged(std::string_view text) {
    constexpr std::string_view head = "<s> ";
    constexpr std::string_view sep = " </s> ";
    if (!text.starts_with(head)) {
        throw DataError("tagged example must start with '<s> '");
    }
    DomainTag tag{};
    std::string_view tail;
    if (text.ends_with(" <ID> </s>")) {
        tag = DomainTag::ID;
        tail = " <ID> </s>";
    } else if (text.ends_with(" <OOD> </s>")) {
        tag = DomainTag::OOD;
        tail = " <OOD> </s>";
    } else {
        throw DataError("tagged example must end with ' <ID> </s>' or ' <OOD> </s>'");
    }
    const std::string_view body = text.substr(head.size(), text.size() - head.size() - tail.size());
    const auto cut = body.find(sep);
    if (cut == std::string_view::npos) {
        // an empty target leaves "SRC </s>" with nothing after the separator
        if (body.ends_with(" </s>")) {
            return {std::string(body.substr(0, body.size() - 5)), "", tag};
        }
        throw DataError("tagged example lacks the ' </s> ' separator");
    }
    return {std::string(body.substr(0, cut)), std::string(body.substr(cut + sep.size())), tag};
}

// ---------------------------------------------------------------------------
// Oversampling and concatenation

enum class MixMode {
    /// Seeded OOD subset of round(fraction * |ID|), plus all ID.
    subsample_ood,
    /// ID replicated up to |OOD| (whole copies plus a seeded remainder), plus all OOD.
    replicate_id,
};

inline MixMode parse_mix_mode(std::string_view s) {
    if (s == "subsample_ood") {
        return MixMode::subsample_ood;
    }
    if (s == "replicate_id") {
        return MixMode::replicate_id;
    }
    throw UsageError("mix mode must be subsample_ood or replicate_id");
}

template <typename T>
std::vector<T> mix_oversample(std::span<const T> ood, std::span<const T> id, double ood_fraction, std::uint64_t seed,
                              MixMode mode = MixMode::subsample_ood) {
    if (ood.empty() || id.empty()) {
        throw UsageError("mix_oversample: both inputs must be non-empty");
    }
    Rng rng(seed);
    std::vector<T> out;
    if (mode == MixMode::subsample_ood) {
        if (!(ood_fraction > 0.0 && ood_fraction <= 1.0)) {
            throw UsageError("mix_oversample: ood_fraction must be in (0, 1]");
        }
        const auto take = static_cast<std::size_t>(std::llround(ood_fraction * static_cast<double>(id.size())));
        if (take == 0) {
            throw UsageError("mix_oversample: OOD subset size rounds to 0");
        }
        if (take > ood.size()) {
            throw UsageError("mix_oversample: OOD subset of " + std::to_string(take) + " exceeds OOD size " +
                             std::to_string(ood.size()));
        }
        for (auto i : rng.sample_indices(ood.size(), take)) {
            out.push_back(ood[i]);
        }
        out.insert(out.end(), id.begin(), id.end());
    } else {
        out.assign(ood.begin(), ood.end());
        const std::size_t copies = ood.size() / id.size();
        for (std::size_t c = 0; c < std::max<std::size_t>(copies, 1); ++c) {
            out.insert(out.end(), id.begin(), id.end());
        }
        if (copies >= 1) {
            for (auto i : rng.sample_indices(id.size(), ood.size() - copies * id.size())) {
                out.push_back(id[i]);
            }
        }
    }
    rng.shuffle(out);
    return out;
}

template <typename T>
struct LanguagePairItem {
    std::string language_pair;
    T item;
};

/// Concatenates per-language-pair lists in order, labelling each item.
template <typename T>
std::vector<LanguagePairItem<T>> concat_multilingual(std::span<const std::pair<std::string, std::vector<T>>> corpora) {
    if (corpora.empty()) {
        throw UsageError("concat_multilingual: at least one corpus is required");
    }
    std::vector<LanguagePairItem<T>> out;
    for (const auto& [lp, items] : corpora) {
        for (const auto& it : items) {
            out.push_back({lp, it});
        }
    }
    return out;
}

} // namespace mtda
