#include <gtest/gtest.h>

#include <set>

#include "mtda/corpus.hpp"
#include "mtda/io.hpp"
#include "mtda/rng.hpp"
#include "mtda/tokenize.hpp"
#include "mtda/utf8.hpp"
#include "support/fixtures.hpp"

using namespace mtda;

TEST(Utf8, DecodeEncodeRoundTrip) {
    const std::string s = "añ€😀Ωж";
    const auto cps = utf8::decode(s);
    ASSERT_EQ(cps.size(), 6u);
    EXPECT_EQ(cps[3], U'\U0001F600');
    EXPECT_EQ(utf8::encode(cps), s);
    EXPECT_EQ(utf8::chars(s).size(), 6u);
}

TEST(Utf8, RejectsMalformedSequences) {
    EXPECT_TRUE(utf8::valid("plain"));
    EXPECT_FALSE(utf8::valid("\xC3"));         // truncated
    EXPECT_FALSE(utf8::valid("\xC0\xAF"));     // overlong
    EXPECT_FALSE(utf8::valid("\xED\xA0\x80")); // surrogate
    EXPECT_EQ(utf8::find_invalid("ab\xFF"), 2u);
}

TEST(Tokenize, SplitsOuterPunctuation) {
    const std::vector<std::string> want{"\"", "Hello", ",", "world", "!", "\""};
    EXPECT_EQ(word_tokenize("\"Hello, world!\""), want);
    const std::vector<std::string> inner{"don't", "3.5", "mg", "."};
    EXPECT_EQ(word_tokenize("don't 3.5 mg."), inner);
}

TEST(Tokenize, LowercasesSeveralScripts) {
    EXPECT_EQ(lowercase("ÀÉÎ ĀĐ ΑΒΓ АБВ Ё"), "àéî āđ αβγ абв ё");
    const std::vector<std::string> want{"straße", "ωμέγα"};
    EXPECT_EQ(word_tokenize("STRAßE ΩΜέΓΑ", true), want);
}

TEST(Tokenize, UnicodeWhitespace) {
    const std::vector<std::string> want{"a", "b", "c"};
    EXPECT_EQ(split_whitespace("a b　c "), want);
    EXPECT_EQ(trim("  x y \t"), "x y");
}

TEST(Rng, StreamsAreDeterministicAndDistinct) {
    Rng a = Rng::stream(8, 0), b = Rng::stream(8, 0), c = Rng::stream(8, 1);
    const auto x = a.next();
    EXPECT_EQ(x, b.next());
    EXPECT_NE(x, c.next());
}

TEST(Rng, BelowStaysInRangeAndCoversIt) {
    Rng r(1);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 2000; ++i) {
        const auto v = r.below(7);
        ASSERT_LT(v, 7u);
        seen.insert(v);
    }
    EXPECT_EQ(seen.size(), 7u);
}

TEST(Rng, SampleWithoutReplacement) {
    Rng r(3);
    const auto s = r.sample_indices(100, 40);
    EXPECT_EQ(s.size(), 40u);
    EXPECT_EQ(std::set<std::size_t>(s.begin(), s.end()).size(), 40u);
}

TEST(Corpus, ParsesTsvAndReportsLine) {
    const auto c = parse_corpus({"a\tb", "c\td"}, CorpusFormat::tsv);
    ASSERT_EQ(c.size(), 2u);
    EXPECT_EQ(c.pairs[1].src, "c");
    EXPECT_EQ(c.pairs[1].id, 1u);
    try {
        parse_corpus({"a\tb", "c\td\te"}, CorpusFormat::tsv, "x.tsv");
        FAIL();
    } catch (const DataError& e) {
        EXPECT_STREQ(e.what(), "x.tsv:2: expected 2 tab-separated columns, got 3");
    }
    EXPECT_THROW(parse_corpus({"\tb"}, CorpusFormat::tsv), DataError);
    EXPECT_THROW(parse_corpus({"a\xFF\tb"}, CorpusFormat::tsv), DataError);
}

TEST(Corpus, ParsesJsonl) {
    const auto c = parse_corpus({R"({"id":3,"src":"a","tgt":"b","tag":"ID"})", "", R"({"src":"c","tgt":"d"})"},
                                CorpusFormat::jsonl);
    ASSERT_EQ(c.size(), 2u);
    EXPECT_EQ(c.pairs[0].id, 3u);
    EXPECT_EQ(c.pairs[1].id, 4u);
    EXPECT_EQ(c.pairs[0].tag, "ID");
    EXPECT_THROW(parse_corpus({R"({"id":3,"src":"a","tgt":"b"})", R"({"id":2,"src":"c","tgt":"d"})"},
                              CorpusFormat::jsonl),
                 DataError);
    EXPECT_THROW(parse_corpus({R"({"src":"a"})"}, CorpusFormat::jsonl), DataError);
    EXPECT_THROW(parse_corpus({"{nope"}, CorpusFormat::jsonl), DataError);
}

TEST(Corpus, FileRoundTrip) {
    fixture::TempDir dir("corpus");
    Corpus c;
    c.pairs = {{0, "héllo", "wörld", std::nullopt}, {1, "x \"q\"", "y", std::string("OOD")}};
    for (auto fmt : {CorpusFormat::tsv, CorpusFormat::jsonl}) {
        const auto p = dir / (fmt == CorpusFormat::tsv ? "c.tsv" : "c.jsonl");
        write_corpus(p, c, fmt);
        const Corpus back = load_corpus(p);
        ASSERT_EQ(back.size(), 2u);
        EXPECT_EQ(back.pairs[0].src, "héllo");
        EXPECT_EQ(back.pairs[1].tgt, "y");
        if (fmt == CorpusFormat::jsonl) {
            EXPECT_EQ(back.pairs[1].tag, "OOD");
        }
    }
    EXPECT_FALSE(std::filesystem::exists(dir / "c.tsv.tmp"));
}

TEST(Corpus, AtomicWriterLeavesNothingWhenAbandoned) {
    fixture::TempDir dir("atomic");
    {
        io::AtomicWriter w(dir / "out.txt");
        w.stream() << "partial";
    }
    EXPECT_FALSE(std::filesystem::exists(dir / "out.txt"));
    EXPECT_FALSE(std::filesystem::exists(dir / "out.txt.tmp"));
}

TEST(Corpus, MissingFileIsDataError) { EXPECT_THROW(load_corpus("/nonexistent/x.tsv"), DataError); }

namespace {

Corpus random_corpus(std::uint64_t seed, std::size_t n) {
    Rng r(seed);
    Corpus c;
    for (std::size_t i = 0; i < n; ++i) {
        c.pairs.push_back({i, "s" + std::to_string(r.below(n / 2 + 1)), "t" + std::to_string(r.below(3)), std::nullopt});
    }
    return c;
}

} // namespace

TEST(Corpus, DedupIsIdempotentAndKeepsFirst) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const Corpus c = random_corpus(seed, 60);
        const Corpus d = dedup(c);
        EXPECT_EQ(dedup(d), d);
        std::set<std::pair<std::string, std::string>> uniq;
        for (const auto& p : c.pairs) {
            uniq.emplace(p.src, p.tgt);
        }
        EXPECT_EQ(d.size(), uniq.size());
        for (std::size_t i = 0; i < d.size(); ++i) {
            EXPECT_EQ(d.pairs[i].id, i);
        }
    }
    Corpus c;
    c.pairs = {{0, "a", "b", {}}, {1, "a", "c", {}}, {2, "a", "b", {}}};
    const Corpus d = dedup(c);
    ASSERT_EQ(d.size(), 2u);
    EXPECT_EQ(d.pairs[1].tgt, "c");
}

TEST(Corpus, SplitIsSeededPartition) {
    Corpus c;
    for (std::size_t i = 0; i < 1000; ++i) {
        c.pairs.push_back({i, "s" + std::to_string(i), "t", std::nullopt});
    }
    const auto a = split(c, SplitSpec{});
    EXPECT_EQ(a.dev.size(), 10u);
    EXPECT_EQ(a.test.size(), 10u);
    EXPECT_EQ(a.train.size(), 980u);
    std::multiset<std::string> all;
    for (const Corpus* s : {&a.train, &a.dev, &a.test}) {
        for (const auto& p : s->pairs) {
            all.insert(p.src);
        }
    }
    EXPECT_EQ(all.size(), 1000u);
    EXPECT_EQ(std::set<std::string>(all.begin(), all.end()).size(), 1000u);

    const auto b = split(c, SplitSpec{});
    EXPECT_EQ(a.test, b.test);
    SplitSpec other;
    other.seed = 9;
    EXPECT_NE(split(c, other).test, a.test);

    EXPECT_THROW(split(c, SplitSpec{0.5, 0.2, 0.2, 1}), UsageError);
    EXPECT_THROW(split(Corpus{}, SplitSpec{}), UsageError);
}

TEST(Corpus, SplitOfSmallCorpusGivesTrainOnly) {
    Corpus c;
    for (std::size_t i = 0; i < 50; ++i) {
        c.pairs.push_back({i, "s" + std::to_string(i), "t", std::nullopt});
    }
    const auto s = split(c, SplitSpec{});
    EXPECT_EQ(s.train.size(), 50u);
    EXPECT_TRUE(s.dev.empty());
}
