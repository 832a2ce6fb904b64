#include <gtest/gtest.h>

#include <map>

#include "mtda/rng.hpp"
#include "mtda/vocab.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace mtda;

namespace {

using Merge = std::pair<std::string, std::string>;

std::vector<std::string> chars_with_marker(const std::string& w) {
    auto c = utf8::chars(w);
    c.back() += "</w>";
    return c;
}

// Recounts every pair after each merge. Quadratic, but obviously right.
std::vector<Merge> naive_bpe(const std::vector<std::string>& lines, std::size_t n) {
    std::map<std::string, int> freq;
    for (const auto& l : lines) {
        for (const auto& w : oracle::words(l)) {
            ++freq[w];
        }
    }
    std::vector<std::pair<std::vector<std::string>, int>> words;
    for (const auto& [w, c] : freq) {
        words.push_back({chars_with_marker(w), c});
    }
    std::vector<Merge> merges;
    while (merges.size() < n) {
        std::map<Merge, int> counts;
        for (const auto& [s, c] : words) {
            for (std::size_t i = 0; i + 1 < s.size(); ++i) {
                counts[{s[i], s[i + 1]}] += c;
            }
        }
        const Merge* best = nullptr;
        int best_count = 1;
        for (const auto& [p, c] : counts) {
            if (c > best_count) { // map order gives the smallest pair on ties
                best = &p;
                best_count = c;
            }
        }
        if (!best) {
            break;
        }
        const Merge m = *best;
        merges.push_back(m);
        for (auto& [s, c] : words) {
            std::vector<std::string> next;
            for (std::size_t i = 0; i < s.size(); ++i) {
                if (i + 1 < s.size() && s[i] == m.first && s[i + 1] == m.second) {
                    next.push_back(s[i] + s[i + 1]);
                    ++i;
                } else {
                    next.push_back(s[i]);
                }
            }
            s = std::move(next);
        }
    }
    return merges;
}

std::vector<std::string> random_lines(std::size_t n, std::uint64_t seed, std::size_t alphabet) {
    static const std::vector<std::string> letters{"a", "b", "c", "d", "é", "ß", "я", "ж", "中", "文", "🙂", "ع"};
    Rng rng(seed);
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::string line;
        const auto words = 1 + rng.below(8);
        for (std::size_t w = 0; w < words; ++w) {
            if (w) {
                line += ' ';
            }
            const auto len = 1 + rng.below(6);
            for (std::size_t k = 0; k < len; ++k) {
                line += letters[rng.below(std::min(alphabet, letters.size()))];
            }
        }
        out.push_back(line);
    }
    return out;
}

} // namespace

TEST(Bpe, MarkerGluedToLastCharacter) {
    const std::vector<std::string> lines{"aa aa aa"};
    const auto m = learn_bpe(lines, 10);
    EXPECT_EQ(m.merges, (std::vector<Merge>{{"a", "a</w>"}}));
    EXPECT_EQ(apply_bpe(m, "aa aaa a"), (std::vector<std::string>{"aa</w>", "a", "aa</w>", "a</w>"}));
}

// Counts: ab=2 (a,b</w>), abc=2 (a,b,c</w>). All three pairs tie at 2.
//   1: (a,b) sorts before (a,b</w>) -> abc becomes ab,c</w>
//   2: (a,b</w>) and (ab,c</w>) tie; "a" < "ab"
//   3: (ab,c</w>)
TEST(Bpe, TiesGoToTheSmallestPair) {
    const std::vector<std::string> lines{"ab ab", "abc abc"};
    EXPECT_EQ(learn_bpe(lines, 10).merges,
              (std::vector<Merge>{{"a", "b"}, {"a", "b</w>"}, {"ab", "c</w>"}}));
    EXPECT_EQ(learn_bpe(lines, 2).merges.size(), 2u);
}

TEST(Bpe, StopsWhenNoPairRepeats) {
    const std::vector<std::string> lines{"ab ab ab abc"};
    EXPECT_EQ(learn_bpe(lines, 100).merges, (std::vector<Merge>{{"a", "b</w>"}}));
    EXPECT_THROW(learn_bpe(std::vector<std::string>{}, 5), UsageError);
}

TEST(Bpe, MatchesNaiveLearnerOnRandomCorpora) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const auto lines = random_lines(60, seed, 3 + seed % 10);
        ASSERT_EQ(learn_bpe(lines, 40).merges, naive_bpe(lines, 40)) << "seed " << seed;
    }
}

TEST(Bpe, RoundTripOnMixedUnicode) {
    const auto lines = random_lines(10'000, 99, 12);
    const auto model = learn_bpe(std::span<const std::string>(lines.data(), 2000), 300);
    ASSERT_GT(model.merges.size(), 50u);
    BpeEncoder enc(model);
    std::size_t subwords = 0, words = 0;
    for (const auto& l : lines) {
        const auto toks = enc.encode(l);
        subwords += toks.size();
        words += oracle::words(l).size();
        ASSERT_EQ(detokenize(toks), l);
    }
    EXPECT_GE(subwords, words);
}

TEST(Bpe, UnseenCharactersStayAsSymbols) {
    const std::vector<std::string> lines{"ab ab"};
    const auto m = learn_bpe(lines, 5);
    EXPECT_EQ(apply_bpe(m, "xab"), (std::vector<std::string>{"x", "ab</w>"}));
    EXPECT_EQ(apply_bpe(m, "abx"), (std::vector<std::string>{"a", "b", "x</w>"}));
    EXPECT_EQ(apply_bpe(m, "ab"), (std::vector<std::string>{"ab</w>"}));
    EXPECT_EQ(detokenize(apply_bpe(m, "  xab \t ab ")), "xab ab");
}

TEST(BpeFile, RoundTripAndErrors) {
    const std::vector<std::string> lines{"ab ab", "abc abc"};
    const auto m = learn_bpe(lines, 10);
    EXPECT_EQ(format_bpe(m), "#bpe-v1 marker=</w>\na b\na b</w>\nab c</w>\n");
    fixture::TempDir dir("bpe");
    save_bpe(dir / "m.bpe", m);
    EXPECT_EQ(load_bpe(dir / "m.bpe"), m);
    EXPECT_THROW(parse_bpe({"a b"}), DataError);
    EXPECT_THROW(parse_bpe({"#bpe-v1 marker=</w>", "a b", "a b"}), DataError);
    EXPECT_THROW(parse_bpe({"#bpe-v1 marker=</w>", "a b c"}), DataError);
    EXPECT_THROW(parse_bpe({"#bpe-v1 marker=</w>", "ab"}), DataError);
}

TEST(BpeFile, MergeBudgetBySize) {
    EXPECT_EQ(merge_ops_for_size(99'999), 8'000u);
    EXPECT_EQ(merge_ops_for_size(100'000), 30'000u);
    EXPECT_EQ(merge_ops_for_size(1'000'000), 30'000u);
    EXPECT_EQ(merge_ops_for_size(1'000'001), 50'000u);
}

TEST(VocabFile, FormatParse) {
    const std::vector<std::string> toks{"b", "a", "c", "a", "b", "a"};
    const auto v = build_vocab(toks);
    EXPECT_EQ(v.total(), 6u);
    EXPECT_EQ(format_vocab(v), "a 3\nb 2\nc 1\n");
    EXPECT_EQ(parse_vocab({"a 3", "b 2", "", "c 1"}), v);
    EXPECT_EQ(parse_vocab({"x y 2"}).entries.at("x y"), 2u);
    EXPECT_THROW(parse_vocab({"a"}), DataError);
    EXPECT_THROW(parse_vocab({"a 0"}), DataError);
    EXPECT_THROW(parse_vocab({"a 2x"}), DataError);
}

TEST(Configs, SevenCombinations) {
    const auto c = enumerate_configs();
    EXPECT_EQ(format_configs(c), "config\tbpe\tvocab\n"
                                 "C1\tD_BPE\tD\n"
                                 "C2\tD_BPE\tD+E\n"
                                 "C3\tD_BPE\tE\n"
                                 "C4\tE_BPE\tD\n"
                                 "C5\tE_BPE\tD+E\n"
                                 "C6\tE_BPE\tE\n"
                                 "C7\tD+E_BPE\tD+E\n");
}

TEST(Overlap, IdenticalVocabularies) {
    const auto v = build_vocab(std::vector<std::string>{"a", "b", "b", "c"});
    const auto r = overlap_report(v, v, v, v);
    EXPECT_EQ(r.src_overlap_pct, 100.0);
    EXPECT_EQ(r.tgt_overlap_pct, 100.0);
    EXPECT_EQ(r.new_src_tokens, 0u);
    EXPECT_EQ(r.new_tgt_tokens, 0u);
}

TEST(Overlap, FrequencyWeighted) {
    Vocabulary base, config;
    base.entries = {{"a", 3}, {"b", 1}};
    config.entries = {{"a", 5}, {"c", 2}};
    const auto s = side_overlap(config, base);
    EXPECT_NEAR(s.overlap_pct, 75.0, 1e-9);
    EXPECT_EQ(s.new_tokens, 1u);

    Vocabulary base2, config2;
    base2.entries = {{"x", 1}, {"y", 2}, {"z", 4}};
    config2.entries = {{"y", 1}, {"z", 1}, {"p", 1}, {"q", 1}};
    const auto t = side_overlap(config2, base2);
    EXPECT_NEAR(t.overlap_pct, 600.0 / 7.0, 1e-9);
    EXPECT_EQ(t.new_tokens, 2u);
    EXPECT_THROW(side_overlap(config, Vocabulary{}), UsageError);
}
