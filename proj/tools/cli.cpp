#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <functional>
#include <memory>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "mtda/backend.hpp"
#include "mtda/corpus.hpp"
#include "mtda/embed.hpp"
#include "mtda/error.hpp"
#include "mtda/icesearch.hpp"
#include "mtda/io.hpp"
#include "mtda/metrics.hpp"
#include "mtda/qedata.hpp"
#include "mtda/retrieve.hpp"
#include "mtda/select.hpp"
#include "mtda/vocab.hpp"

namespace mtda::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

// Owns option storage for one dispatch call; lambdas bind to these by reference.
class Arena {
  public:
    template <typename T>
    T& keep(T init = T{}) {
        auto holder = std::make_shared<T>(std::move(init));
        T& ref = *holder;
        items_.push_back(std::move(holder));
        return ref;
    }

  private:
    std::vector<std::shared_ptr<void>> items_;
};

class Log {
  public:
    Log(std::ostream& err, const bool& as_json) : err_(err), json_(as_json) {}

    void info(const std::string& msg) const { write("info", msg); }
    void warn(const std::string& msg) const { write("warn", msg); }
    void error(const std::string& msg) const { write("error", msg); }

  private:
    void write(const char* level, const std::string& msg) const {
        if (json_) {
            const auto now = std::chrono::system_clock::now();
            const auto t = std::chrono::system_clock::to_time_t(now);
            const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
            char stamp[64];
            std::tm tm{};
            gmtime_r(&t, &tm);
            std::snprintf(stamp, sizeof stamp, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                          tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
            ordered_json j;
            j["level"] = level;
            j["timestamp"] = stamp;
            j["message"] = msg;
            err_ << j.dump() << '\n';
        } else {
            err_ << "mtda: " << (std::string(level) == "info" ? "" : std::string(level) + ": ") << msg << '\n';
        }
    }

    std::ostream& err_;
    const bool& json_;
};

std::vector<double> read_numbers(const fs::path& path) {
    std::vector<double> out;
    const auto lines = io::read_lines(path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) {
            continue;
        }
        try {
            std::size_t used = 0;
            const std::string t = trim(lines[i]);
            out.push_back(std::stod(t, &used));
            if (used != t.size()) {
                throw std::invalid_argument("trailing characters");
            }
        } catch (const std::exception&) {
            throw DataError(path.string() + ":" + std::to_string(i + 1) + ": not a number");
        }
    }
    return out;
}

std::vector<std::string> corpus_side(const Corpus& c, const std::string& side) {
    if (side == "src") {
        return c.sources();
    }
    if (side == "tgt") {
        return c.targets();
    }
    throw UsageError("--side must be src or tgt");
}

void require(const std::string& value, const char* flag) {
    if (value.empty()) {
        throw UsageError(std::string(flag) + " is required");
    }
}

// Input files that pair up line by line; a mismatch is bad data, not bad usage.
void same_length(std::size_t a, std::size_t b, const std::string& what) {
    if (a != b) {
        throw DataError(what + ": " + std::to_string(a) + " vs " + std::to_string(b) + " lines");
    }
}

std::string json_scalar(const json& v) {
    if (v.is_string()) {
        return v.get<std::string>();
    }
    if (v.is_boolean()) {
        return v.get<bool>() ? "true" : "false";
    }
    return v.dump();
}

} // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) {
        args.emplace_back(argv[i]);
    }
    return dispatch(args, out, err);
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Corpus tools for MT domain adaptation: data selection, retrieval, ICE search, QE data, BPE "
                 "vocabularies and MT metrics.",
                 "mtda"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1, 1);
    app.fallthrough();
    app.set_version_flag("--version", "mtda 1.0.0");

    // Shared settings; a JSON config file can supply any of them as well as
    // any subcommand flag (command-line flags win).
    std::string config_path;
    std::uint64_t seed = 8;
    unsigned workers = 0;
    bool strict = false;
    bool log_json = false;
    std::string out_dir;
    app.add_option("--config", config_path, "JSON run configuration (flags override it)");
    app.add_option("--seed", seed, "Seed for every randomized step");
    app.add_option("--workers", workers, "Parallel workers (0 = all cores)");
    app.add_flag("--strict", strict, "Turn skips into errors and reject unknown config keys");
    app.add_flag("--log-json", log_json, "Log as line-delimited JSON");
    app.add_option("--out-dir", out_dir, "Directory for relative output paths");

    const Log log(err, log_json);
    Arena arena;
    const auto n_workers = [&] {
        return workers != 0 ? workers : std::max(1u, std::thread::hardware_concurrency());
    };
    const auto out_path = [&](const std::string& p) {
        fs::path path(p);
        if (!out_dir.empty() && path.is_relative()) {
            path = fs::path(out_dir) / path;
        }
        if (path.has_parent_path()) {
            fs::create_directories(path.parent_path());
        }
        return path;
    };
    const auto emit = [&](const ordered_json& j) { out << j.dump(2) << '\n'; };

    std::vector<std::pair<CLI::App*, std::function<void()>>> handlers;
    const auto command = [&](const char* name, const char* desc) {
        CLI::App* sub = app.add_subcommand(name, desc);
        sub->fallthrough();
        return sub;
    };

    // configs ---------------------------------------------------------------
    {
        auto* sub = command("configs", "List the valid fine-tuning (BPE model, vocabulary) configurations");
        handlers.emplace_back(sub, [&] {
            const auto configs = enumerate_configs();
            out << format_configs(configs);
        });
    }

    // metrics ---------------------------------------------------------------
    {
        auto* sub = command("metrics", "Score hypotheses against references (one segment per line)");
        auto& hyp = arena.keep<std::string>();
        auto& ref = arena.keep<std::string>();
        auto& metric = arena.keep<std::string>("bleu");
        auto& case_sensitive = arena.keep<bool>(false);
        sub->add_option("--hyp", hyp, "Hypothesis file");
        sub->add_option("--ref", ref, "Reference file");
        sub->add_option("--metric", metric, "bleu, chrf2, ter, all, or pearson (files of numbers)");
        sub->add_flag("--case-sensitive", case_sensitive, "Do not lowercase before scoring");
        handlers.emplace_back(sub, [&] {
            require(hyp, "--hyp");
            require(ref, "--ref");
            if (metric == "pearson") {
                const auto x = read_numbers(hyp);
                const auto y = read_numbers(ref);
                same_length(x.size(), y.size(), "--hyp/--ref");
                const double r = pearson(x, y).value;
                ordered_json j;
                j["metric"] = "pearson";
                j["value"] = 100.0 * r;
                j["r"] = r;
                j["n_segments"] = x.size();
                emit(j);
                return;
            }
            const auto hyps = io::read_lines(hyp);
            const auto refs = io::read_lines(ref);
            same_length(hyps.size(), refs.size(), "--hyp/--ref");
            std::vector<Metric> which;
            if (metric == "all") {
                which = {Metric::bleu, Metric::chrf2, Metric::ter};
            } else {
                which = {parse_metric(metric)};
            }
            ordered_json reports = ordered_json::array();
            for (Metric m : which) {
                ordered_json j;
                j["metric"] = metric_name(m);
                j["value"] = score_corpus(m, hyps, refs, case_sensitive).value;
                j["n_segments"] = hyps.size();
                reports.push_back(j);
            }
            emit(reports.size() == 1 ? reports[0] : reports);
        });
    }

    // bootstrap -------------------------------------------------------------
    {
        auto* sub = command("bootstrap", "Paired bootstrap resampling significance test");
        auto& hyp_a = arena.keep<std::string>();
        auto& hyp_b = arena.keep<std::string>();
        auto& ref = arena.keep<std::string>();
        auto& metric = arena.keep<std::string>("bleu");
        auto& iterations = arena.keep<std::size_t>(1000);
        auto& sample_size = arena.keep<std::size_t>(200);
        auto& case_sensitive = arena.keep<bool>(false);
        sub->add_option("--hyp-a", hyp_a, "System A hypotheses");
        sub->add_option("--hyp-b", hyp_b, "System B hypotheses");
        sub->add_option("--ref", ref, "References");
        sub->add_option("--metric", metric, "bleu, chrf2 or ter");
        sub->add_option("--iterations", iterations, "Resampling iterations");
        sub->add_option("--sample-size", sample_size, "Segments drawn per iteration");
        sub->add_flag("--case-sensitive", case_sensitive, "Do not lowercase before scoring");
        handlers.emplace_back(sub, [&] {
            require(hyp_a, "--hyp-a");
            require(hyp_b, "--hyp-b");
            require(ref, "--ref");
            const auto a = io::read_lines(hyp_a);
            const auto b = io::read_lines(hyp_b);
            const auto r = io::read_lines(ref);
            same_length(a.size(), r.size(), "--hyp-a/--ref");
            same_length(b.size(), r.size(), "--hyp-b/--ref");
            const auto res = paired_bootstrap(a, b, r, parse_metric(metric), iterations, sample_size, seed,
                                              case_sensitive, n_workers());
            ordered_json j;
            j["metric"] = metric;
            j["iterations"] = res.iterations;
            j["sample_size"] = res.sample_size;
            j["wins_a"] = res.wins_a;
            j["wins_b"] = res.wins_b;
            j["ties"] = res.ties;
            j["significant"] = res.significant;
            j["score_a"] = res.score_a;
            j["score_b"] = res.score_b;
            j["interval_a"] = res.interval_a;
            j["interval_b"] = res.interval_b;
            emit(j);
        });
    }

    // ks --------------------------------------------------------------------
    {
        auto* sub = command("ks", "Two-sample Kolmogorov-Smirnov test");
        auto& a_path = arena.keep<std::string>();
        auto& b_path = arena.keep<std::string>();
        auto& lengths = arena.keep<bool>(false);
        sub->add_option("--a", a_path, "First sample (one number per line)");
        sub->add_option("--b", b_path, "Second sample (one number per line)");
        sub->add_flag("--lengths", lengths, "Treat lines as text and compare their token counts");
        handlers.emplace_back(sub, [&] {
            require(a_path, "--a");
            require(b_path, "--b");
            const auto load = [&](const std::string& p) {
                if (!lengths) {
                    return read_numbers(p);
                }
                std::vector<double> v;
                for (const auto& line : io::read_lines(p)) {
                    v.push_back(static_cast<double>(word_tokenize(line).size()));
                }
                return v;
            };
            const auto res = ks_two_sample(load(a_path), load(b_path));
            ordered_json j;
            j["statistic"] = res.statistic;
            j["p_value"] = res.p_value;
            emit(j);
        });
    }

    // hash-embed ------------------------------------------------------------
    {
        auto* sub = command("hash-embed", "Deterministic feature-hash sentence embeddings (testing stand-in)");
        auto& input = arena.keep<std::string>();
        auto& output = arena.keep<std::string>();
        auto& side = arena.keep<std::string>("src");
        auto& dims = arena.keep<std::size_t>(256);
        sub->add_option("--input", input, "Corpus (.tsv, .jsonl or .txt)");
        sub->add_option("--output", output, "Embedding file (.emb binary or .jsonl)");
        sub->add_option("--side", side, "src or tgt");
        sub->add_option("--dims", dims, "Vector size");
        handlers.emplace_back(sub, [&] {
            require(input, "--input");
            require(output, "--output");
            const auto texts = corpus_side(load_corpus(input), side);
            save_embeddings(out_path(output), hash_embed(texts, dims, seed));
        });
    }

    // pca-fit / pca-apply ---------------------------------------------------
    {
        auto* sub = command("pca-fit", "Fit a PCA model on a sample of embedding rows");
        auto& input = arena.keep<std::string>();
        auto& output = arena.keep<std::string>();
        auto& k = arena.keep<std::size_t>(default_pca_components);
        auto& sample = arena.keep<std::size_t>(default_pca_sample);
        sub->add_option("--embeddings", input, "Embedding file");
        sub->add_option("--output", output, "PCA model (JSON)");
        sub->add_option("--k", k, "Components to keep");
        sub->add_option("--sample-size", sample, "Rows sampled for fitting");
        handlers.emplace_back(sub, [&] {
            require(input, "--embeddings");
            require(output, "--output");
            const auto model = fit_pca(load_embeddings(input), k, sample, seed);
            save_pca(out_path(output), model);
            double kept = 0.0;
            for (double v : model.explained_variance) {
                kept += v;
            }
            log.info("pca-fit: k=" + std::to_string(model.k()) + " explained variance " + std::to_string(kept));
        });
    }
    {
        auto* sub = command("pca-apply", "Project embeddings with a fitted PCA model");
        auto& model_path = arena.keep<std::string>();
        auto& input = arena.keep<std::string>();
        auto& output = arena.keep<std::string>();
        sub->add_option("--model", model_path, "PCA model (JSON)");
        sub->add_option("--embeddings", input, "Embedding file");
        sub->add_option("--output", output, "Projected embedding file");
        handlers.emplace_back(sub, [&] {
            require(model_path, "--model");
            require(input, "--embeddings");
            require(output, "--output");
            save_embeddings(out_path(output), apply_pca(load_pca(model_path), load_embeddings(input), n_workers()));
        });
    }

    // select ----------------------------------------------------------------
    {
        auto* sub = command("select", "Rank generic-corpus pairs against in-domain queries and write the top-n CSV");
        auto& queries_path = arena.keep<std::string>();
        auto& pool_path = arena.keep<std::string>();
        auto& q_emb = arena.keep<std::string>();
        auto& p_emb = arena.keep<std::string>();
        auto& output = arena.keep<std::string>("selection.csv");
        auto& subcorpora_dir = arena.keep<std::string>();
        auto& n = arena.keep<std::size_t>(default_top_n);
        auto& pca_k = arena.keep<std::size_t>(default_pca_components);
        auto& pca_sample = arena.keep<std::size_t>(default_pca_sample);
        auto& hash_dims = arena.keep<std::size_t>(256);
        sub->add_option("--queries", queries_path, "In-domain corpus (.tsv, .jsonl or .txt)");
        sub->add_option("--pool", pool_path, "Out-of-domain parallel corpus");
        sub->add_option("--query-embeddings", q_emb, "Embeddings of the queries (default: hash-embed)");
        sub->add_option("--pool-embeddings", p_emb, "Embeddings of the pool sources (default: hash-embed)");
        sub->add_option("--hash-dims", hash_dims, "Vector size when hash-embedding");
        sub->add_option("--pca-k", pca_k, "PCA components (0 disables PCA)");
        sub->add_option("--pca-sample", pca_sample, "Rows sampled for fitting PCA");
        sub->add_option("--n", n, "Selections per query");
        sub->add_option("--output", output, "CSV output");
        sub->add_option("--subcorpora-dir", subcorpora_dir, "Also write raw and stacked top-k TSV sub-corpora here");
        handlers.emplace_back(sub, [&] {
            require(queries_path, "--queries");
            require(pool_path, "--pool");
            const Corpus queries = load_corpus(queries_path);
            const Corpus pool = load_corpus(pool_path);
            EmbeddingMatrix qm = q_emb.empty() ? hash_embed(queries.sources(), hash_dims, seed) : load_embeddings(q_emb);
            EmbeddingMatrix pm = p_emb.empty() ? hash_embed(pool.sources(), hash_dims, seed) : load_embeddings(p_emb);
            if (qm.rows() != queries.size() || pm.rows() != pool.size()) {
                throw DataError("select: embedding rows do not match corpus sizes");
            }
            if (pca_k > 0) {
                const PcaModel model = fit_pca(pm, pca_k, pca_sample, seed);
                qm = apply_pca(model, qm, n_workers());
                pm = apply_pca(model, pm, n_workers());
            }
            RankOptions opts;
            opts.n = n;
            opts.workers = n_workers();
            opts.strict = strict;
            const RankResult ranked = rank_topn(qm, pm, opts);
            if (!ranked.skipped_queries.empty() || !ranked.skipped_entries.empty()) {
                log.warn("select: skipped " + std::to_string(ranked.skipped_queries.size()) + " zero-vector queries and " +
                         std::to_string(ranked.skipped_entries.size()) + " zero-vector entries");
            }
            io::AtomicWriter csv(out_path(output));
            write_selection_csv(csv.stream(), queries, pool, ranked.matches, n);
            csv.commit();

            ordered_json j;
            j["queries"] = queries.size();
            j["entries"] = pool.size();
            j["n"] = n;
            j["matches"] = ranked.matches.size();
            j["skipped_queries"] = ranked.skipped_queries;
            j["skipped_entries"] = ranked.skipped_entries;
            ordered_json closeness = ordered_json::array();
            for (std::size_t level = 1; level <= n; ++level) {
                std::vector<float> rows;
                std::size_t count = 0;
                for (const auto& m : ranked.matches) {
                    if (m.rank == level) {
                        const auto r = pm.row(m.entry_id);
                        rows.insert(rows.end(), r.begin(), r.end());
                        ++count;
                    }
                }
                if (count == 0 || qm.rows() == 0) {
                    closeness.push_back(nullptr);
                    continue;
                }
                try {
                    closeness.push_back(centroid_similarity(qm, EmbeddingMatrix(count, pm.dims(), std::move(rows))));
                } catch (const DataError&) {
                    closeness.push_back(nullptr);
                }
            }
            j["centroid_similarity"] = closeness;
            if (!subcorpora_dir.empty()) {
                const SubCorpora sc = build_subcorpora(ranked.matches, pool, n);
                const fs::path dir = out_path(subcorpora_dir);
                fs::create_directories(dir);
                ordered_json sizes = ordered_json::array();
                for (std::size_t k = 0; k < n; ++k) {
                    Corpus raw{"top" + std::to_string(k + 1), sc.raw[k].pairs, std::nullopt};
                    Corpus stacked{"stacked" + std::to_string(k + 1), sc.stacked[k].pairs, std::nullopt};
                    write_corpus(dir / ("top" + std::to_string(k + 1) + ".tsv"), raw, CorpusFormat::tsv);
                    write_corpus(dir / ("stacked" + std::to_string(k + 1) + ".tsv"), stacked, CorpusFormat::tsv);
                    sizes.push_back(sc.stacked[k].pairs.size());
                }
                j["stacked_sizes"] = sizes;
            }
            emit(j);
        });
    }

    // bm25 / rbm25 ----------------------------------------------------------
    auto& r_pool = arena.keep<std::string>();
    auto& r_queries = arena.keep<std::string>();
    auto& r_output = arena.keep<std::string>();
    auto& r_k = arena.keep<std::size_t>(16);
    auto& r_pool_size = arena.keep<std::size_t>(default_rerank_pool);
    auto& r_max_order = arena.keep<std::size_t>(4);
    auto& r_k1 = arena.keep<double>(1.5);
    auto& r_b = arena.keep<double>(0.75);
    auto& r_discount = arena.keep<double>(0.0);
    const auto retrieval_flags = [&](CLI::App* sub) {
        sub->add_option("--pool", r_pool, "Example pool (parallel corpus)");
        sub->add_option("--queries", r_queries, "Query corpus (.tsv, .jsonl or .txt)");
        sub->add_option("--output", r_output, "Candidate JSONL (default: stdout)");
        sub->add_option("--k", r_k, "Candidates per query");
        sub->add_option("--k1", r_k1, "BM25 k1");
        sub->add_option("--b", r_b, "BM25 b");
    };
    const auto run_retrieval = [&](bool rerank) {
        require(r_pool, "--pool");
        require(r_queries, "--queries");
        const Corpus pool = load_corpus(r_pool);
        const Corpus queries = load_corpus(r_queries);
        const auto docs = pool.sources();
        const Bm25Index index = Bm25Index::build(docs, Bm25Params{r_k1, r_b, true});
        std::string lines;
        for (std::size_t q = 0; q < queries.size(); ++q) {
            const auto& text = queries.pairs[q].src;
            std::vector<ScoredDoc> hits = index.topk(text, rerank ? std::max(r_pool_size, r_k) : r_k);
            if (rerank && !hits.empty()) {
                std::vector<std::size_t> ids;
                for (const auto& h : hits) {
                    ids.push_back(h.doc_id);
                }
                const auto picked = rbm25_rerank(index, text, ids, RerankOptions{r_max_order, r_k, r_discount});
                std::vector<ScoredDoc> reranked;
                for (auto d : picked) {
                    reranked.push_back(*std::find_if(hits.begin(), hits.end(), [d](const ScoredDoc& h) { return h.doc_id == d; }));
                }
                hits = std::move(reranked);
            }
            for (std::size_t r = 0; r < hits.size(); ++r) {
                ordered_json j;
                j["query_id"] = q;
                j["doc_id"] = hits[r].doc_id;
                j["rank"] = r + 1;
                j["score"] = hits[r].score;
                lines += j.dump();
                lines += '\n';
            }
        }
        if (r_output.empty()) {
            out << lines;
        } else {
            io::write_file_atomic(out_path(r_output), lines);
        }
    };
    {
        auto* sub = command("bm25", "Retrieve in-context example candidates with Okapi BM25");
        retrieval_flags(sub);
        handlers.emplace_back(sub, [&] { run_retrieval(false); });
    }
    {
        auto* sub = command("rbm25", "BM25 retrieval followed by n-gram coverage re-ranking");
        retrieval_flags(sub);
        sub->add_option("--pool-size", r_pool_size, "BM25 candidates considered for re-ranking");
        sub->add_option("--max-order", r_max_order, "Largest n-gram order for coverage");
        sub->add_option("--discount", r_discount, "Weight multiplier for covered n-grams");
        handlers.emplace_back(sub, [&] { run_retrieval(true); });
    }

    // ice-search ------------------------------------------------------------
    {
        auto* sub = command("ice-search", "QE-guided in-context example search over a test set");
        auto& test_path = arena.keep<std::string>();
        auto& pool_path = arena.keep<std::string>();
        auto& cand_path = arena.keep<std::string>();
        auto& mode = arena.keep<std::string>("qe_bm25_order");
        auto& translator_url = arena.keep<std::string>();
        auto& translator_cmd = arena.keep<std::string>();
        auto& estimator_url = arena.keep<std::string>();
        auto& estimator_cmd = arena.keep<std::string>();
        auto& output = arena.keep<std::string>("ice_search.jsonl");
        auto& patience = arena.keep<std::size_t>(8);
        auto& max_candidates = arena.keep<std::size_t>(16);
        auto& max_prompt = arena.keep<std::size_t>(8192);
        auto& terminate = arena.keep<double>(100.0);
        auto& timeout_ms = arena.keep<long>(30000);
        auto& retries = arena.keep<int>(2);
        auto& cyclic = arena.keep<bool>(false);
        sub->add_option("--test", test_path, "Test corpus; a non-empty target is the reference");
        sub->add_option("--pool", pool_path, "Example pool the candidate doc ids refer to");
        sub->add_option("--candidates", cand_path, "Retriever JSONL (default: BM25 over the pool)");
        sub->add_option("--patience", patience, "Non-improving iterations tolerated");
        sub->add_option("--max-candidates", max_candidates, "Candidates considered per source");
        sub->add_option("--mode", mode, "qe_bm25_order, qe_unigram_order or reference_bleu");
        sub->add_option("--translator-url", translator_url, "Translation backend base URL");
        sub->add_option("--translator-cmd", translator_cmd, "Translation backend command (JSON lines)");
        sub->add_option("--estimator-url", estimator_url, "QE backend base URL");
        sub->add_option("--estimator-cmd", estimator_cmd, "QE backend command (JSON lines)");
        sub->add_option("--terminate-score", terminate, "Stop once a score reaches this value");
        sub->add_option("--max-prompt-chars", max_prompt, "Prompt budget in characters");
        sub->add_option("--timeout-ms", timeout_ms, "Backend request timeout");
        sub->add_option("--retries", retries, "Backend retries on transport errors");
        sub->add_flag("--cyclic", cyclic, "Pick candidate (iteration mod remaining) instead of the next one");
        sub->add_option("--out", output, "Per-source results (JSONL)");
        handlers.emplace_back(sub, [&] {
            require(test_path, "--test");
            require(pool_path, "--pool");
            SearchConfig cfg;
            cfg.patience = patience;
            cfg.max_candidates = max_candidates;
            cfg.mode = parse_search_mode(mode);
            cfg.terminate_score = terminate;
            cfg.max_prompt_units = max_prompt;
            cfg.cyclic_selection = cyclic;
            const Corpus test = load_corpus(test_path);
            const Corpus pool = load_corpus(pool_path);
            std::vector<std::vector<IceCandidate>> cands;
            if (!cand_path.empty()) {
                cands = parse_candidates(io::read_lines(cand_path), pool, test.size());
            } else {
                const auto docs = pool.sources();
                const Bm25Index index = Bm25Index::build(docs);
                for (const auto& p : test.pairs) {
                    std::vector<IceCandidate> list;
                    const auto hits = index.topk(p.src, max_candidates);
                    for (std::size_t r = 0; r < hits.size(); ++r) {
                        const auto& d = pool.pairs[hits[r].doc_id];
                        list.push_back({d.src, d.tgt, r + 1, hits[r].score});
                    }
                    cands.push_back(std::move(list));
                }
            }
            const std::chrono::milliseconds timeout(timeout_ms);
            const TranslateFn translate = make_translator({translator_url, translator_cmd, timeout, retries});
            EstimateFn estimate = [](const std::string&, const std::string&) -> double {
                throw UsageError("no estimator configured");
            };
            if (cfg.mode != SearchMode::reference_bleu) {
                estimate = make_estimator({estimator_url, estimator_cmd, timeout, retries});
            }
            const TestsetReport report = run_testset(test, cands, translate, estimate, cfg, n_workers());
            io::write_file_atomic(out_path(output), format_testset_jsonl(test, report));
            ordered_json j;
            j["sources"] = test.size();
            j["failures"] = report.failures;
            j["corpus_bleu"] = report.corpus_bleu ? ordered_json(*report.corpus_bleu) : ordered_json(nullptr);
            j["ice_min"] = report.ice_counts.min;
            j["ice_mean"] = report.ice_counts.mean;
            j["ice_max"] = report.ice_counts.max;
            emit(j);
            for (const auto& o : report.outcomes) {
                if (!o.result) {
                    log.error("source " + std::to_string(o.id) + ": " + o.error);
                }
            }
            if (report.failures > 0) {
                throw BackendError(BackendError::Reason::protocol,
                                   std::to_string(report.failures) + " source(s) failed");
            }
        });
    }

    // qe-triplets -----------------------------------------------------------
    {
        auto* sub = command("qe-triplets", "Generate synthetic (src, mt, label) QE training triplets");
        auto& corpus_path = arena.keep<std::string>();
        auto& translator_url = arena.keep<std::string>();
        auto& translator_cmd = arena.keep<std::string>();
        auto& label = arena.keep<std::string>("ter");
        auto& output = arena.keep<std::string>("triplets.jsonl");
        auto& portion = arena.keep<std::size_t>(7000);
        auto& timeout_ms = arena.keep<long>(30000);
        auto& retries = arena.keep<int>(2);
        sub->add_option("--corpus", corpus_path, "Parallel corpus");
        sub->add_option("--translator-url", translator_url, "MT backend base URL");
        sub->add_option("--translator-cmd", translator_cmd, "MT backend command (JSON lines)");
        sub->add_option("--portion", portion, "Samples drawn from the second half of the corpus");
        sub->add_option("--label", label, "ter or bleu");
        sub->add_option("--timeout-ms", timeout_ms, "Backend request timeout");
        sub->add_option("--retries", retries, "Backend retries on transport errors");
        sub->add_option("--output", output, "Triplet JSONL");
        handlers.emplace_back(sub, [&] {
            require(corpus_path, "--corpus");
            const Corpus c = load_corpus(corpus_path);
            const TranslateFn mt = make_translator(
                {translator_url, translator_cmd, std::chrono::milliseconds(timeout_ms), retries});
            const auto triplets = make_triplets(c, mt, portion, parse_label_metric(label), seed, n_workers());
            std::string lines;
            for (const auto& t : triplets) {
                lines += format_triplet(t);
                lines += '\n';
            }
            io::write_file_atomic(out_path(output), lines);
            log.info("qe-triplets: wrote " + std::to_string(triplets.size()) + " triplets");
        });
    }

    // tag -------------------------------------------------------------------
    {
        auto* sub = command("tag", "Format pairs as '<s> SRC </s> TRG <Tag> </s>' lines");
        auto& input = arena.keep<std::string>();
        auto& output = arena.keep<std::string>();
        auto& tag = arena.keep<std::string>("ID");
        sub->add_option("--input", input, "Parallel corpus");
        sub->add_option("--tag", tag, "ID or OOD");
        sub->add_option("--output", output, "Output file (default: stdout)");
        handlers.emplace_back(sub, [&] {
            require(input, "--input");
            const DomainTag t = parse_domain_tag(tag);
            std::string lines;
            for (const auto& p : load_corpus(input).pairs) {
                lines += format_tagged(p.src, p.tgt, t, strict).text;
                lines += '\n';
            }
            if (output.empty()) {
                out << lines;
            } else {
                io::write_file_atomic(out_path(output), lines);
            }
        });
    }

    // mix -------------------------------------------------------------------
    {
        auto* sub = command("mix", "Balance out-of-domain and in-domain data and shuffle them together");
        auto& ood_path = arena.keep<std::string>();
        auto& id_path = arena.keep<std::string>();
        auto& output = arena.keep<std::string>();
        auto& mode = arena.keep<std::string>("subsample_ood");
        auto& fraction = arena.keep<double>(1.0);
        sub->add_option("--ood", ood_path, "Out-of-domain corpus");
        sub->add_option("--id", id_path, "In-domain corpus");
        sub->add_option("--fraction", fraction, "OOD subset size as a fraction of |ID| (subsample_ood)");
        sub->add_option("--mode", mode, "subsample_ood or replicate_id");
        sub->add_option("--output", output, "Mixed corpus (format from extension)");
        handlers.emplace_back(sub, [&] {
            require(ood_path, "--ood");
            require(id_path, "--id");
            require(output, "--output");
            const Corpus ood = load_corpus(ood_path);
            const Corpus id = load_corpus(id_path);
            Corpus mixed;
            mixed.name = "mix";
            mixed.pairs = mix_oversample<SentencePair>(ood.pairs, id.pairs, fraction, seed, parse_mix_mode(mode));
            renumber(mixed);
            const fs::path path = out_path(output);
            write_corpus(path, mixed, corpus_format_for(path));
            log.info("mix: wrote " + std::to_string(mixed.size()) + " pairs");
        });
    }

    // split / dedup ---------------------------------------------------------
    {
        auto* sub = command("split", "Seeded train/dev/test split");
        auto& input = arena.keep<std::string>();
        auto& prefix = arena.keep<std::string>();
        auto& train = arena.keep<double>(0.98);
        auto& dev = arena.keep<double>(0.01);
        auto& test = arena.keep<double>(0.01);
        sub->add_option("--input", input, "Corpus");
        sub->add_option("--train", train, "Train fraction");
        sub->add_option("--dev", dev, "Dev fraction");
        sub->add_option("--test", test, "Test fraction");
        sub->add_option("--prefix", prefix, "Output prefix (writes <prefix>.{train,dev,test}.tsv)");
        handlers.emplace_back(sub, [&] {
            require(input, "--input");
            require(prefix, "--prefix");
            const auto parts = split(load_corpus(input), SplitSpec{train, dev, test, seed});
            write_corpus(out_path(prefix + ".train.tsv"), parts.train, CorpusFormat::tsv);
            write_corpus(out_path(prefix + ".dev.tsv"), parts.dev, CorpusFormat::tsv);
            write_corpus(out_path(prefix + ".test.tsv"), parts.test, CorpusFormat::tsv);
            ordered_json j;
            j["train"] = parts.train.size();
            j["dev"] = parts.dev.size();
            j["test"] = parts.test.size();
            emit(j);
        });
    }
    {
        auto* sub = command("dedup", "Drop repeated (src, tgt) pairs, keeping first occurrences");
        auto& input = arena.keep<std::string>();
        auto& output = arena.keep<std::string>();
        sub->add_option("--input", input, "Corpus");
        sub->add_option("--output", output, "Deduplicated corpus (format from extension)");
        handlers.emplace_back(sub, [&] {
            require(input, "--input");
            require(output, "--output");
            const Corpus c = load_corpus(input);
            const Corpus d = dedup(c);
            const fs::path path = out_path(output);
            write_corpus(path, d, corpus_format_for(path));
            log.info("dedup: " + std::to_string(c.size()) + " -> " + std::to_string(d.size()) + " pairs");
        });
    }

    // bpe-learn / bpe-apply -------------------------------------------------
    {
        auto* sub = command("bpe-learn", "Learn a BPE merge list from one side of a corpus");
        auto& input = arena.keep<std::string>();
        auto& output = arena.keep<std::string>();
        auto& side = arena.keep<std::string>("src");
        auto& merges = arena.keep<std::size_t>(0);
        sub->add_option("--input", input, "Corpus (.tsv, .jsonl) or plain text (.txt)");
        sub->add_option("--side", side, "src or tgt");
        sub->add_option("--merges", merges, "Merge operations (0 = by corpus size: 8K/30K/50K)");
        sub->add_option("--output", output, "BPE model file");
        handlers.emplace_back(sub, [&] {
            require(input, "--input");
            require(output, "--output");
            const auto lines = corpus_side(load_corpus(input), side);
            const std::size_t count = merges != 0 ? merges : merge_ops_for_size(lines.size());
            const BpeModel model = learn_bpe(lines, count);
            save_bpe(out_path(output), model);
            log.info("bpe-learn: " + std::to_string(model.merges.size()) + " merges");
        });
    }
    {
        auto* sub = command("bpe-apply", "Segment text with a BPE model (tokens joined by spaces)");
        auto& model_path = arena.keep<std::string>();
        auto& input = arena.keep<std::string>();
        auto& output = arena.keep<std::string>();
        auto& side = arena.keep<std::string>("src");
        sub->add_option("--model", model_path, "BPE model file");
        sub->add_option("--input", input, "Corpus (.tsv, .jsonl) or plain text (.txt)");
        sub->add_option("--side", side, "src or tgt");
        sub->add_option("--output", output, "Output file (default: stdout)");
        handlers.emplace_back(sub, [&] {
            require(model_path, "--model");
            require(input, "--input");
            BpeEncoder enc(load_bpe(model_path));
            std::string lines;
            for (const auto& line : corpus_side(load_corpus(input), side)) {
                const auto toks = enc.encode(line);
                for (std::size_t i = 0; i < toks.size(); ++i) {
                    lines += i ? " " : "";
                    lines += toks[i];
                }
                lines += '\n';
            }
            if (output.empty()) {
                out << lines;
            } else {
                io::write_file_atomic(out_path(output), lines);
            }
        });
    }

    // vocab / vocab-overlap -------------------------------------------------
    {
        auto* sub = command("vocab", "Count tokens of whitespace-tokenized text");
        auto& input = arena.keep<std::string>();
        auto& output = arena.keep<std::string>();
        sub->add_option("--input", input, "Tokenized text, one segment per line");
        sub->add_option("--output", output, "Vocabulary file (default: stdout)");
        handlers.emplace_back(sub, [&] {
            require(input, "--input");
            std::vector<std::string> tokens;
            for (const auto& line : io::read_lines(input)) {
                for (auto& t : split_whitespace(line)) {
                    tokens.push_back(std::move(t));
                }
            }
            const std::string text = format_vocab(build_vocab(tokens));
            if (output.empty()) {
                out << text;
            } else {
                io::write_file_atomic(out_path(output), text);
            }
        });
    }
    {
        auto* sub = command("vocab-overlap", "Frequency-weighted overlap of a configuration's vocabularies with the base");
        auto& cfg_src = arena.keep<std::string>();
        auto& cfg_tgt = arena.keep<std::string>();
        auto& base_src = arena.keep<std::string>();
        auto& base_tgt = arena.keep<std::string>();
        sub->add_option("--config-src", cfg_src, "Configuration source vocabulary");
        sub->add_option("--config-tgt", cfg_tgt, "Configuration target vocabulary");
        sub->add_option("--base-src", base_src, "Baseline source vocabulary");
        sub->add_option("--base-tgt", base_tgt, "Baseline target vocabulary");
        handlers.emplace_back(sub, [&] {
            require(cfg_src, "--config-src");
            require(cfg_tgt, "--config-tgt");
            require(base_src, "--base-src");
            require(base_tgt, "--base-tgt");
            const auto r = overlap_report(load_vocab(cfg_src), load_vocab(cfg_tgt), load_vocab(base_src),
                                          load_vocab(base_tgt));
            ordered_json j;
            j["src_overlap_pct"] = r.src_overlap_pct;
            j["tgt_overlap_pct"] = r.tgt_overlap_pct;
            j["new_src_tokens"] = r.new_src_tokens;
            j["new_tgt_tokens"] = r.new_tgt_tokens;
            j["new_token_filter"] = "none (raw set difference)";
            emit(j);
        });
    }

    std::vector<const char*> argv{"mtda"};
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::Success& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        std::string msg = e.what();
        if (app.get_subcommands().empty()) {
            // Name the stray word rather than reporting a missing subcommand.
            for (std::size_t i = 0; i < args.size(); ++i) {
                const auto& a = args[i];
                if (a.rfind("-", 0) == 0) {
                    const bool takes_value = a == "--config" || a == "--seed" || a == "--workers" || a == "--out-dir";
                    i += takes_value ? 1 : 0;
                    continue;
                }
                msg = "unknown subcommand '" + a + "'";
                break;
            }
        }
        log.error(msg + " (run with --help for usage)");
        return static_cast<int>(ErrorKind::usage);
    }

    try {
        CLI::App* active = app.get_subcommands().front();
        if (!config_path.empty()) {
            json cfg;
            try {
                cfg = json::parse(io::read_file(config_path));
            } catch (const json::parse_error& e) {
                throw UsageError(config_path + ": " + e.what());
            }
            if (!cfg.is_object()) {
                throw UsageError(config_path + ": expected a JSON object");
            }
            const auto apply = [&](CLI::App* scope, const std::string& key, const json& value) {
                CLI::Option* opt = scope->get_option_no_throw("--" + key);
                if (opt == nullptr || key == "config") {
                    if (strict) {
                        throw UsageError("config: unknown key '" + key + "'");
                    }
                    log.warn("config: ignoring unknown key '" + key + "'");
                    return;
                }
                if (opt->count() > 0) {
                    return;
                }
                if (value.is_array()) {
                    for (const auto& v : value) {
                        opt->add_result(json_scalar(v));
                    }
                } else {
                    opt->add_result(json_scalar(value));
                }
                opt->run_callback();
            };
            // Global keys first, so a config-level "strict" governs the rest.
            for (const auto& [key, value] : cfg.items()) {
                if (!value.is_object()) {
                    apply(&app, std::string(key), value);
                }
            }
            for (const auto& [key, value] : cfg.items()) {
                if (!value.is_object()) {
                    continue;
                }
                CLI::App* scope = nullptr;
                for (auto* s : app.get_subcommands({})) {
                    if (s->get_name() == key) {
                        scope = s;
                    }
                }
                if (scope == nullptr) {
                    if (strict) {
                        throw UsageError("config: unknown section '" + key + "'");
                    }
                    log.warn("config: ignoring unknown section '" + key + "'");
                    continue;
                }
                if (scope != active) {
                    continue;
                }
                for (const auto& [k, v] : value.items()) {
                    apply(scope, std::string(k), v);
                }
            }
        }
        for (auto& [sub, handler] : handlers) {
            if (sub == active) {
                handler();
                break;
            }
        }
    } catch (const Error& e) {
        log.error(e.what());
        return static_cast<int>(e.kind());
    } catch (const CLI::ParseError& e) {
        log.error(e.what());
        return static_cast<int>(ErrorKind::usage);
    } catch (const std::exception& e) {
        log.error(e.what());
        return static_cast<int>(ErrorKind::data);
    }
    return 0;
}

} // namespace mtda::cli
