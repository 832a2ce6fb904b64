#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "mtda/corpus.hpp"
#include "mtda/io.hpp"
#include "mtda/retrieve.hpp"
#include "support/fixtures.hpp"

using nlohmann::json;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = mtda::cli::dispatch(args, out, err);
    return {code, out.str(), err.str()};
}

const std::string mock_translator = R"(while IFS= read -r l; do echo '{"translation":"the house is small"}'; done)";
const std::string mock_estimator = R"(while IFS= read -r l; do echo '{"score":42.5}'; done)";

} // namespace

TEST(Cli, ConfigsTable) {
    const auto r = run({"configs"});
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(r.out, "config\tbpe\tvocab\nC1\tD_BPE\tD\nC2\tD_BPE\tD+E\nC3\tD_BPE\tE\nC4\tE_BPE\tD\n"
                     "C5\tE_BPE\tD+E\nC6\tE_BPE\tE\nC7\tD+E_BPE\tD+E\n");
}

TEST(Cli, UsageErrorsExitOne) {
    auto r = run({"bogus"});
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(r.err, "mtda: error: unknown subcommand 'bogus' (run with --help for usage)\n");
    EXPECT_EQ(run({}).code, 1);
    EXPECT_EQ(run({"metrics", "--nope"}).code, 1);
    r = run({"metrics", "--ref", "x"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("--hyp is required"), std::string::npos);
    EXPECT_EQ(run({"--seed", "abc", "configs"}).code, 1);
}

TEST(Cli, DataErrorsExitTwo) {
    fixture::TempDir dir("cli");
    dir.write("h.txt", "a b\n");
    EXPECT_EQ(run({"metrics", "--hyp", dir / "h.txt", "--ref", dir / "missing.txt"}).code, 2);
    dir.write("r.txt", "a b\nc\n");
    EXPECT_EQ(run({"metrics", "--hyp", dir / "h.txt", "--ref", dir / "r.txt"}).code, 2);
}

TEST(Cli, VersionAndHelp) {
    const auto v = run({"--version"});
    EXPECT_EQ(v.code, 0);
    EXPECT_EQ(v.out, "mtda 1.0.0\n");
    const auto h = run({"--help"});
    EXPECT_EQ(h.code, 0);
    EXPECT_NE(h.out.find("ice-search"), std::string::npos);
}

TEST(Cli, HelpSnapshots) {
    const bool update = std::getenv("MTDA_UPDATE_SNAPSHOTS") != nullptr;
    for (const std::string sub :
         {"configs", "metrics", "bootstrap", "ks", "hash-embed", "pca-fit", "pca-apply", "select", "bm25", "rbm25",
          "ice-search", "qe-triplets", "tag", "mix", "split", "dedup", "bpe-learn", "bpe-apply", "vocab",
          "vocab-overlap"}) {
        const auto r = run({sub, "--help"});
        ASSERT_EQ(r.code, 0) << sub;
        const std::string path = std::string(MTDA_SNAPSHOT_DIR) + "/help-" + sub + ".txt";
        if (update) {
            std::ofstream(path) << r.out;
            continue;
        }
        EXPECT_EQ(r.out, fixture::slurp(path)) << sub << " (set MTDA_UPDATE_SNAPSHOTS=1 to refresh)";
    }
}

TEST(Cli, MetricsOnIdenticalFiles) {
    fixture::TempDir dir("cli");
    dir.write("h.txt", "the cat sat on the mat\na dog barked loudly\n");
    const auto r = run({"metrics", "--metric", "all", "--hyp", dir / "h.txt", "--ref", dir / "h.txt"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = json::parse(r.out);
    ASSERT_EQ(j.size(), 3u);
    EXPECT_EQ(j[0]["metric"], "bleu");
    EXPECT_DOUBLE_EQ(j[0]["value"].get<double>(), 100.0);
    EXPECT_DOUBLE_EQ(j[1]["value"].get<double>(), 100.0);
    EXPECT_DOUBLE_EQ(j[2]["value"].get<double>(), 0.0);
    EXPECT_EQ(j[2]["n_segments"], 2);
}

TEST(Cli, PearsonReportsScaledAndRaw) {
    fixture::TempDir dir("cli");
    dir.write("x.txt", "1\n2\n3\n");
    dir.write("y.txt", "2\n4\n6.5\n");
    const auto r = run({"metrics", "--metric", "pearson", "--hyp", dir / "x.txt", "--ref", dir / "y.txt"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = json::parse(r.out);
    EXPECT_NEAR(j["value"].get<double>(), 100.0 * j["r"].get<double>(), 1e-12);
    EXPECT_GT(j["r"].get<double>(), 0.99);
    dir.write("bad.txt", "1\nx\n3\n");
    EXPECT_EQ(run({"metrics", "--metric", "pearson", "--hyp", dir / "bad.txt", "--ref", dir / "y.txt"}).code, 2);
}

TEST(Cli, ConfigFileOverlay) {
    fixture::TempDir dir("cli");
    dir.write("h.txt", "a b c d\n");
    dir.write("r.txt", "a b c e\n");
    dir.write("cfg.json", json{{"metrics", {{"hyp", dir / "h.txt"}, {"ref", dir / "r.txt"}, {"metric", "ter"}}}}.dump());
    auto r = run({"--config", dir / "cfg.json", "metrics"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(json::parse(r.out)["metric"], "ter");
    EXPECT_DOUBLE_EQ(json::parse(r.out)["value"].get<double>(), 25.0);
    // the flag wins over the file
    r = run({"--config", dir / "cfg.json", "metrics", "--metric", "chrf2"});
    EXPECT_EQ(json::parse(r.out)["metric"], "chrf2");

    dir.write("extra.json", json{{"colour", "red"}, {"metrics", {{"hyp", dir / "h.txt"}, {"ref", dir / "r.txt"}}}}.dump());
    r = run({"--config", dir / "extra.json", "metrics"});
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.err.find("ignoring unknown key 'colour'"), std::string::npos);
    EXPECT_EQ(run({"--strict", "--config", dir / "extra.json", "metrics"}).code, 1);
    dir.write("strict.json", json{{"strict", true}, {"nosuch", {{"a", 1}}}}.dump());
    EXPECT_EQ(run({"--config", dir / "strict.json", "configs"}).code, 1);
    dir.write("broken.json", "{");
    EXPECT_EQ(run({"--config", dir / "broken.json", "configs"}).code, 1);
}

TEST(Cli, JsonLogLines) {
    const auto r = run({"--log-json", "metrics", "--hyp", "/nonexistent/h", "--ref", "/nonexistent/r"});
    EXPECT_EQ(r.code, 2);
    const auto j = json::parse(r.err.substr(0, r.err.find('\n')));
    EXPECT_EQ(j["level"], "error");
    EXPECT_TRUE(j.contains("timestamp"));
    EXPECT_TRUE(j.contains("message"));
}

TEST(Cli, SeededSplitIsReproducible) {
    fixture::TempDir dir("cli");
    std::string corpus;
    for (int i = 0; i < 100; ++i) {
        corpus += "s" + std::to_string(i) + "\tt" + std::to_string(i) + "\n";
    }
    dir.write("c.tsv", corpus);
    const auto split = [&](const std::string& seed, const std::string& prefix) {
        const auto r = run({"--seed", seed, "split", "--input", dir / "c.tsv", "--train", "0.8", "--dev", "0.1",
                            "--test", "0.1", "--prefix", dir / prefix});
        EXPECT_EQ(r.code, 0) << r.err;
        return fixture::slurp(dir / (prefix + ".train.tsv"));
    };
    const auto a = split("3", "a");
    EXPECT_EQ(a, split("3", "b"));
    EXPECT_NE(a, split("4", "c"));
    EXPECT_EQ(mtda::io::read_lines(dir / "a.train.tsv").size(), 80u);
}

TEST(Cli, SelectWritesCsvAndSubcorpora) {
    fixture::TempDir dir("cli");
    std::string pool, queries;
    for (int i = 0; i < 300; ++i) {
        pool += "pool sentence number " + std::to_string(i) + " word" + std::to_string(i % 17) + "\tziel " +
                std::to_string(i) + "\n";
    }
    for (int i = 0; i < 20; ++i) {
        queries += "query word" + std::to_string(i % 17) + " number " + std::to_string(i) + "\t\n";
    }
    dir.write("pool.tsv", pool);
    dir.write("q.tsv", queries);
    const auto r = run({"--workers", "3", "select", "--queries", dir / "q.tsv", "--pool", dir / "pool.tsv", "--pca-k",
                        "16", "--output", dir / "sel.csv", "--subcorpora-dir", dir / "sub"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = json::parse(r.out);
    EXPECT_EQ(j["matches"], 120);
    EXPECT_EQ(j["centroid_similarity"].size(), 6u);
    const auto csv = mtda::io::read_lines(dir / "sel.csv");
    ASSERT_EQ(csv.size(), 21u);
    EXPECT_EQ(csv[0], "Query,top1_src,top1_trg,top1_score,top2_src,top2_trg,top2_score,top3_src,top3_trg,top3_score,"
                      "top4_src,top4_trg,top4_score,top5_src,top5_trg,top5_score,top6_src,top6_trg,top6_score");
    EXPECT_EQ(mtda::io::read_lines(dir / "sub/top1.tsv").size(), 20u);
    const auto sizes = j["stacked_sizes"];
    for (std::size_t k = 1; k < sizes.size(); ++k) {
        EXPECT_GE(sizes[k].get<int>(), sizes[k - 1].get<int>());
    }
    // one worker gives the same file
    const auto one = run({"--workers", "1", "select", "--queries", dir / "q.tsv", "--pool", dir / "pool.tsv", "--pca-k",
                          "16", "--output", dir / "sel1.csv"});
    ASSERT_EQ(one.code, 0);
    EXPECT_EQ(fixture::slurp(dir / "sel1.csv"), fixture::slurp(dir / "sel.csv"));
}

TEST(Cli, Bm25MatchesLibrary) {
    fixture::TempDir dir("cli");
    dir.write("pool.tsv", "the red house\tdas rote haus\nthe small dog\tder kleine hund\na red dog\tein roter hund\n");
    dir.write("q.txt", "red dog\n");
    const auto r = run({"bm25", "--pool", dir / "pool.tsv", "--queries", dir / "q.txt", "--k", "2"});
    ASSERT_EQ(r.code, 0) << r.err;
    const std::vector<std::string> docs{"the red house", "the small dog", "a red dog"};
    const auto want = mtda::Bm25Index::build(docs).topk("red dog", 2);
    std::istringstream lines(r.out);
    std::string line;
    std::size_t i = 0;
    while (std::getline(lines, line)) {
        const auto j = json::parse(line);
        ASSERT_LT(i, want.size());
        EXPECT_EQ(j["doc_id"], want[i].doc_id);
        EXPECT_EQ(j["rank"], i + 1);
        EXPECT_DOUBLE_EQ(j["score"].get<double>(), want[i].score);
        ++i;
    }
    EXPECT_EQ(i, 2u);
    const auto rr = run({"rbm25", "--pool", dir / "pool.tsv", "--queries", dir / "q.txt", "--k", "2"});
    EXPECT_EQ(rr.code, 0) << rr.err;
}

TEST(Cli, IceSearchWithSubprocessBackends) {
    fixture::TempDir dir("cli");
    dir.write("pool.tsv", "the house\tdas haus\nthe small house\tdas kleine haus\nthe dog\tder hund\n");
    dir.write("test.tsv", "the house is small\t\nthe dog\t\n");
    const auto bm = run({"bm25", "--pool", dir / "pool.tsv", "--queries", dir / "test.tsv", "--output",
                         dir / "cands.jsonl"});
    ASSERT_EQ(bm.code, 0) << bm.err;
    const auto r = run({"ice-search", "--test", dir / "test.tsv", "--pool", dir / "pool.tsv", "--candidates",
                        dir / "cands.jsonl", "--translator-cmd", mock_translator, "--estimator-cmd", mock_estimator,
                        "--patience", "2", "--out", dir / "ice.jsonl"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto summary = json::parse(r.out);
    EXPECT_EQ(summary["sources"], 2);
    EXPECT_EQ(summary["failures"], 0);
    const auto rows = mtda::io::read_lines(dir / "ice.jsonl");
    ASSERT_EQ(rows.size(), 2u);
    const auto first = json::parse(rows[0]);
    EXPECT_EQ(first["translation"], "the house is small");
    EXPECT_DOUBLE_EQ(first["best_score"].get<double>(), 42.5);
    // constant scores never improve, so only the first pick is kept
    EXPECT_EQ(first["n_selected"], 1);
}

TEST(Cli, IceSearchBackendFailureExitsThree) {
    fixture::TempDir dir("cli");
    dir.write("pool.tsv", "a b\tc d\n");
    dir.write("test.tsv", "a b\t\n");
    const auto r = run({"ice-search", "--test", dir / "test.tsv", "--pool", dir / "pool.tsv", "--translator-cmd",
                        "true", "--estimator-cmd", mock_estimator, "--retries", "0", "--out", dir / "ice.jsonl"});
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.err.find("source 0"), std::string::npos);
    EXPECT_EQ(run({"ice-search", "--test", dir / "test.tsv", "--pool", dir / "pool.tsv"}).code, 1);
}

TEST(Cli, BpeAndVocabulary) {
    fixture::TempDir dir("cli");
    dir.write("c.txt", "lower lowest low\nnewer newest new\nlow new\n");
    auto r = run({"bpe-learn", "--input", dir / "c.txt", "--merges", "20", "--output", dir / "m.bpe"});
    ASSERT_EQ(r.code, 0) << r.err;
    r = run({"bpe-apply", "--model", dir / "m.bpe", "--input", dir / "c.txt", "--output", dir / "c.bpe"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(mtda::io::read_lines(dir / "c.bpe").size(), 3u);
    r = run({"vocab", "--input", dir / "c.bpe", "--output", dir / "v.txt"});
    ASSERT_EQ(r.code, 0) << r.err;
    r = run({"vocab-overlap", "--config-src", dir / "v.txt", "--config-tgt", dir / "v.txt", "--base-src",
             dir / "v.txt", "--base-tgt", dir / "v.txt"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = json::parse(r.out);
    EXPECT_DOUBLE_EQ(j["src_overlap_pct"].get<double>(), 100.0);
    EXPECT_EQ(j["new_tgt_tokens"], 0);
}

TEST(Cli, TagMixDedup) {
    fixture::TempDir dir("cli");
    dir.write("id.tsv", "a\tb\nc\td\n");
    dir.write("ood.tsv", "e\tf\ng\th\ni\tj\nk\tl\ne\tf\n");
    auto r = run({"tag", "--input", dir / "id.tsv", "--tag", "ID"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out, "<s> a </s> b <ID> </s>\n<s> c </s> d <ID> </s>\n");
    EXPECT_EQ(run({"tag", "--input", dir / "id.tsv", "--tag", "XX"}).code, 1);
    r = run({"mix", "--ood", dir / "ood.tsv", "--id", dir / "id.tsv", "--fraction", "1", "--output", dir / "mix.tsv"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(mtda::io::read_lines(dir / "mix.tsv").size(), 4u);
    r = run({"dedup", "--input", dir / "ood.tsv", "--output", dir / "d.tsv"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(mtda::io::read_lines(dir / "d.tsv").size(), 4u);
}

TEST(Cli, OutDirResolvesRelativeOutputs) {
    fixture::TempDir dir("cli");
    dir.write("id.tsv", "a\tb\n");
    const auto r = run({"--out-dir", dir / "outs", "tag", "--input", dir / "id.tsv", "--tag", "OOD", "--output",
                        "tagged.txt"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(fixture::slurp(dir / "outs/tagged.txt"), "<s> a </s> b <OOD> </s>\n");
}
