#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "mtda/utf8.hpp"

namespace mtda {

/// Unicode White_Space property.
constexpr bool is_space(char32_t cp) {
    return (cp >= 0x09 && cp <= 0x0D) || cp == 0x20 || cp == 0x85 || cp == 0xA0 || cp == 0x1680 ||
           (cp >= 0x2000 && cp <= 0x200A) || cp == 0x2028 || cp == 0x2029 || cp == 0x202F ||
           cp == 0x205F || cp == 0x3000;
}

/// ASCII punctuation and symbols, Latin-1 punctuation, General Punctuation,
/// CJK Symbols and Punctuation, and the full-width ASCII punctuation forms.
constexpr bool is_punct(char32_t cp) {
    if (cp < 0x80) {
        return (cp >= 0x21 && cp <= 0x2F) || (cp >= 0x3A && cp <= 0x40) || (cp >= 0x5B && cp <= 0x60) ||
               (cp >= 0x7B && cp <= 0x7E);
    }
    return (cp >= 0xA1 && cp <= 0xBF && cp != 0xAA && cp != 0xB2 && cp != 0xB3 && cp != 0xB5 &&
            cp != 0xB9 && cp != 0xBA && cp != 0xBC && cp != 0xBD && cp != 0xBE) ||
           cp == 0xD7 || cp == 0xF7 || (cp >= 0x2010 && cp <= 0x2027) || (cp >= 0x2030 && cp <= 0x205E) ||
           (cp >= 0x3001 && cp <= 0x3003) || (cp >= 0x3008 && cp <= 0x3011) ||
           (cp >= 0x3014 && cp <= 0x301F) || (cp >= 0xFF01 && cp <= 0xFF0F) ||
           (cp >= 0xFF1A && cp <= 0xFF20) || (cp >= 0xFF3B && cp <= 0xFF40) || (cp >= 0xFF5B && cp <= 0xFF65);
}

/// Simple (1:1) lowercase mapping for ASCII, Latin-1, Latin Extended-A,
/// Greek and Cyrillic. Other scripts pass through unchanged.
constexpr char32_t to_lower(char32_t cp) {
    if (cp >= U'A' && cp <= U'Z') {
        return cp + 32;
    }
    if (cp < 0xC0) {
        return cp;
    }
    if ((cp >= 0xC0 && cp <= 0xDE) && cp != 0xD7) {
        return cp + 32;
    }
    if (cp >= 0x100 && cp <= 0x17F) {
        // Latin Extended-A alternates upper/lower, with the parity flipped in
        // 0x139..0x148 and 0x179..0x17E.
        if (cp == 0x130 || cp == 0x131 || cp == 0x138 || cp == 0x149 || cp == 0x17F) {
            return cp == 0x130 ? char32_t{0x69} : cp;
        }
        const bool odd_upper = (cp >= 0x139 && cp <= 0x148) || (cp >= 0x179 && cp <= 0x17E);
        if (cp == 0x178) {
            return 0xFF;
        }
        return ((cp % 2 == 1) == odd_upper) ? cp + 1 : cp;
    }
    if (cp >= 0x391 && cp <= 0x3AB && cp != 0x3A2) {
        return cp + 32;
    }
    if (cp >= 0x410 && cp <= 0x42F) {
        return cp + 32;
    }
    if (cp >= 0x400 && cp <= 0x40F) {
        return cp + 80;
    }
    return cp;
}

inline std::string lowercase(std::string_view text) {
    std::u32string cps = utf8::decode(text);
    for (char32_t& cp : cps) {
        cp = to_lower(cp);
    }
    return utf8::encode(cps);
}

/// Word tokenizer shared by BLEU, TER, BM25 and the overlap heuristics:
/// optional lowercasing, split on Unicode whitespace, then leading and
/// trailing punctuation characters become tokens of their own. Punctuation
/// inside a word ("don't", "3.5") stays attached.
inline std::vector<std::string> word_tokenize(std::string_view text, bool lower = false) {
    std::u32string cps = utf8::decode(text);
    if (lower) {
        for (char32_t& cp : cps) {
            cp = to_lower(cp);
        }
    }
    std::vector<std::string> tokens;
    std::size_t i = 0;
    const std::size_t n = cps.size();
    while (i < n) {
        while (i < n && is_space(cps[i])) {
            ++i;
        }
        std::size_t j = i;
        while (j < n && !is_space(cps[j])) {
            ++j;
        }
        if (j == i) {
            break;
        }
        std::size_t lo = i;
        std::size_t hi = j;
        while (lo < hi && is_punct(cps[lo])) {
            tokens.push_back(utf8::encode(std::u32string_view(&cps[lo], 1)));
            ++lo;
        }
        std::size_t trail = hi;
        while (trail > lo && is_punct(cps[trail - 1])) {
            --trail;
        }
        if (trail > lo) {
            tokens.push_back(utf8::encode(std::u32string_view(&cps[lo], trail - lo)));
        }
        for (std::size_t k = trail; k < hi; ++k) {
            tokens.push_back(utf8::encode(std::u32string_view(&cps[k], 1)));
        }
        i = j;
    }
    return tokens;
}

/// Splits on Unicode whitespace only.
inline std::vector<std::string> split_whitespace(std::string_view text) {
    const std::u32string cps = utf8::decode(text);
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < cps.size()) {
        while (i < cps.size() && is_space(cps[i])) {
            ++i;
        }
        std::size_t j = i;
        while (j < cps.size() && !is_space(cps[j])) {
            ++j;
        }
        if (j > i) {
            out.push_back(utf8::encode(std::u32string_view(&cps[i], j - i)));
        }
        i = j;
    }
    return out;
}

inline std::string trim(std::string_view text) {
    const std::u32string cps = utf8::decode(text);
    std::size_t lo = 0;
    std::size_t hi = cps.size();
    while (lo < hi && is_space(cps[lo])) {
        ++lo;
    }
    while (hi > lo && is_space(cps[hi - 1])) {
        --hi;
    }
    return utf8::encode(std::u32string_view(cps).substr(lo, hi - lo));
}

} // namespace mtda
