#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mtda/error.hpp"
#include "mtda/io.hpp"
#include "mtda/rng.hpp"
#include "mtda/tokenize.hpp"

namespace mtda {

/// Dense row-major float matrix; row i belongs to corpus id i.
class EmbeddingMatrix {
  public:
    EmbeddingMatrix() = default;

    EmbeddingMatrix(std::size_t rows, std::size_t dims) : rows_(rows), dims_(dims), data_(rows * dims, 0.0F) {}

    EmbeddingMatrix(std::size_t rows, std::size_t dims, std::vector<float> data)
        : rows_(rows), dims_(dims), data_(std::move(data)) {
        if (data_.size() != rows_ * dims_) {
            throw DataError("embedding data length " + std::to_string(data_.size()) + " != rows*dims " +
                            std::to_string(rows_ * dims_));
        }
        for (std::size_t i = 0; i < data_.size(); ++i) {
            if (!std::isfinite(data_[i])) {
                throw DataError("non-finite embedding value at row " + std::to_string(i / std::max<std::size_t>(dims_, 1)));
            }
        }
    }

    std::size_t rows() const { return rows_; }
    std::size_t dims() const { return dims_; }
    std::span<const float> data() const { return data_; }

    std::span<const float> row(std::size_t i) const { return {data_.data() + i * dims_, dims_}; }
    std::span<float> row(std::size_t i) { return {data_.data() + i * dims_, dims_}; }

    bool operator==(const EmbeddingMatrix&) const = default;

  private:
    std::size_t rows_ = 0;
    std::size_t dims_ = 0;
    std::vector<float> data_;
};

enum class EmbeddingFormat { binary, jsonl };

inline EmbeddingFormat embedding_format_for(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    return (ext == ".jsonl" || ext == ".json") ? EmbeddingFormat::jsonl : EmbeddingFormat::binary;
}

namespace detail {

inline constexpr std::array<char, 4> emb_magic{'E', 'M', 'B', '1'};

template <typename T>
void put_le(std::string& out, T value) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    auto bits = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<char>(bits & 0xFF));
        bits >>= 8;
    }
}

template <typename T>
T get_le(const unsigned char* p) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    U bits = 0;
    for (std::size_t i = sizeof(T); i > 0; --i) {
        bits = (bits << 8) | p[i - 1];
    }
    return std::bit_cast<T>(bits);
}

} // namespace detail

/// Binary layout: "EMB1", rows (u64 LE), dims (u32 LE), rows*dims f32 LE.
inline std::string encode_embeddings(const EmbeddingMatrix& m) {
    std::string out(detail::emb_magic.begin(), detail::emb_magic.end());
    out.reserve(16 + m.data().size() * 4);
    detail::put_le<std::uint64_t>(out, m.rows());
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.dims()));
    for (float v : m.data()) {
        detail::put_le<float>(out, v);
    }
    return out;
}

inline EmbeddingMatrix decode_embeddings(std::string_view bytes) {
    constexpr std::size_t header = 16;
    if (bytes.size() < header || !std::equal(detail::emb_magic.begin(), detail::emb_magic.end(), bytes.begin())) {
        throw DataError("not an EMB1 embedding file");
    }
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const auto rows = detail::get_le<std::uint64_t>(p + 4);
    const auto dims = detail::get_le<std::uint32_t>(p + 12);
    const std::size_t expected = header + static_cast<std::size_t>(rows) * dims * 4;
    if (bytes.size() != expected) {
        throw DataError("embedding file size " + std::to_string(bytes.size()) + " does not match header (" +
                        std::to_string(rows) + " x " + std::to_string(dims) + ")");
    }
    std::vector<float> data(static_cast<std::size_t>(rows) * dims);
    for (std::size_t i = 0; i < data.size(); ++i) {
        data[i] = detail::get_le<float>(p + header + 4 * i);
        if (!std::isfinite(data[i])) {
            throw DataError("non-finite embedding value at row " + std::to_string(i / dims));
        }
    }
    return {static_cast<std::size_t>(rows), dims, std::move(data)};
}

/// One JSON array of numbers per line; every row must have the same length.
inline EmbeddingMatrix parse_embeddings_jsonl(const std::vector<std::string>& lines) {
    std::vector<float> data;
    std::size_t dims = 0;
    std::size_t rows = 0;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) {
            continue;
        }
        nlohmann::json row;
        try {
            row = nlohmann::json::parse(lines[i]);
        } catch (const nlohmann::json::parse_error&) {
            throw DataError("embedding row " + std::to_string(rows) + ": malformed JSON");
        }
        if (!row.is_array()) {
            throw DataError("embedding row " + std::to_string(rows) + ": expected a JSON array");
        }
        if (rows == 0) {
            dims = row.size();
        } else if (row.size() != dims) {
            throw DataError("embedding row " + std::to_string(rows) + ": has " + std::to_string(row.size()) +
                            " values, expected " + std::to_string(dims));
        }
        for (const auto& v : row) {
            if (!v.is_number()) {
                throw DataError("embedding row " + std::to_string(rows) + ": non-numeric value");
            }
            const double d = v.get<double>();
            if (!std::isfinite(d)) {
                throw DataError("embedding row " + std::to_string(rows) + ": non-finite value");
            }
            data.push_back(static_cast<float>(d));
        }
        ++rows;
    }
    return {rows, dims, std::move(data)};
}

inline std::string format_embeddings_jsonl(const EmbeddingMatrix& m) {
    std::string out;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (float v : m.row(i)) {
            row.push_back(v);
        }
        out += row.dump();
        out += '\n';
    }
    return out;
}

inline EmbeddingMatrix load_embeddings(const std::filesystem::path& path, EmbeddingFormat format) {
    if (format == EmbeddingFormat::jsonl) {
        return parse_embeddings_jsonl(io::read_lines(path));
    }
    return decode_embeddings(io::read_file(path));
}

inline EmbeddingMatrix load_embeddings(const std::filesystem::path& path) {
    return load_embeddings(path, embedding_format_for(path));
}

inline void save_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& m, EmbeddingFormat format) {
    io::write_file_atomic(path, format == EmbeddingFormat::jsonl ? format_embeddings_jsonl(m) : encode_embeddings(m));
}

inline void save_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& m) {
    save_embeddings(path, m, embedding_format_for(path));
}

// ---------------------------------------------------------------------------
// PCA

inline constexpr std::size_t default_pca_components = 32;
inline constexpr std::size_t default_pca_sample = 500000;

struct PcaModel {
    std::vector<double> mean;
    /// k x d, row-major; rows are unit principal directions, largest variance first.
    std::vector<double> components;
    std::vector<double> explained_variance;

    std::size_t dims() const { return mean.size(); }
    std::size_t k() const { return explained_variance.size(); }

    std::span<const double> component(std::size_t i) const { return {components.data() + i * dims(), dims()}; }
};

struct SymmetricEigen {
    std::vector<double> values;
    /// Column j of this n x n row-major matrix is the eigenvector of values[j].
    std::vector<double> vectors;
};

/// Cyclic Jacobi eigendecomposition of a symmetric n x n row-major matrix.
inline SymmetricEigen jacobi_eigen(std::vector<double> a, std::size_t n, std::size_t max_sweeps = 100) {
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        v[i * n + i] = 1.0;
    }
    const auto at = [&a, n](std::size_t r, std::size_t c) -> double& { return a[r * n + c]; };

    double total = 0.0;
    for (double x : a) {
        total += x * x;
    }
    for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                off += at(p, q) * at(p, q);
            }
        }
        if (off <= 1e-30 * total || off == 0.0) {
            break;
        }
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = at(p, q);
                if (apq == 0.0) {
                    continue;
                }
                const double app = at(p, p);
                const double aqq = at(q, q);
                if (std::abs(apq) <= 1e-18 * std::sqrt(std::abs(app * aqq))) {
                    at(p, q) = 0.0;
                    at(q, p) = 0.0;
                    continue;
                }
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = at(k, p);
                    const double akq = at(k, q);
                    at(k, p) = c * akp - s * akq;
                    at(k, q) = s * akp + c * akq;
                }
                double* rp = &a[p * n];
                double* rq = &a[q * n];
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = rp[k];
                    const double aqk = rq[k];
                    rp[k] = c * apk - s * aqk;
                    rq[k] = s * apk + c * aqk;
                }
                at(p, q) = 0.0;
                at(q, p) = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    double& vkp = v[k * n + p];
                    double& vkq = v[k * n + q];
                    const double x = vkp;
                    const double y = vkq;
                    vkp = c * x - s * y;
                    vkq = s * x + c * y;
                }
            }
        }
    }
    SymmetricEigen out;
    out.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.values[i] = at(i, i);
    }
    out.vectors = std::move(v);
    return out;
}

/// PCA on a seeded uniform sample (without replacement) of `sample_size`
/// rows, or all rows when the matrix is smaller. Covariance uses 1/(n-1).
/// Each component's largest-magnitude entry is made positive.
inline PcaModel fit_pca(const EmbeddingMatrix& m, std::size_t k = default_pca_components,
                        std::size_t sample_size = default_pca_sample, std::uint64_t seed = 8) {
    const std::size_t d = m.dims();
    if (k > d) {
        throw UsageError("pca: k=" + std::to_string(k) + " exceeds dims=" + std::to_string(d));
    }
    if (sample_size < k) {
        throw UsageError("pca: sample size must be at least k");
    }
    std::vector<std::size_t> rows;
    if (sample_size >= m.rows()) {
        rows.resize(m.rows());
        std::iota(rows.begin(), rows.end(), std::size_t{0});
    } else {
        Rng rng(seed);
        rows = rng.sample_indices(m.rows(), sample_size);
        std::sort(rows.begin(), rows.end());
    }
    if (rows.size() < 2) {
        throw DataError("pca: need at least two sample rows for a covariance estimate");
    }

    PcaModel model;
    model.mean.assign(d, 0.0);
    for (std::size_t r : rows) {
        const auto x = m.row(r);
        for (std::size_t j = 0; j < d; ++j) {
            model.mean[j] += x[j];
        }
    }
    for (double& v : model.mean) {
        v /= static_cast<double>(rows.size());
    }

    std::vector<double> cov(d * d, 0.0);
    std::vector<double> centered(d);
    for (std::size_t r : rows) {
        const auto x = m.row(r);
        for (std::size_t j = 0; j < d; ++j) {
            centered[j] = x[j] - model.mean[j];
        }
        for (std::size_t i = 0; i < d; ++i) {
            const double ci = centered[i];
            double* out = &cov[i * d];
            for (std::size_t j = i; j < d; ++j) {
                out[j] += ci * centered[j];
            }
        }
    }
    const double norm = 1.0 / static_cast<double>(rows.size() - 1);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i; j < d; ++j) {
            cov[i * d + j] *= norm;
            cov[j * d + i] = cov[i * d + j];
        }
    }

    const SymmetricEigen eig = jacobi_eigen(std::move(cov), d);
    std::vector<std::size_t> order(d);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return eig.values[a] > eig.values[b]; });

    model.components.assign(k * d, 0.0);
    model.explained_variance.resize(k);
    for (std::size_t c = 0; c < k; ++c) {
        const std::size_t col = order[c];
        model.explained_variance[c] = std::max(0.0, eig.values[col]);
        double* out = &model.components[c * d];
        std::size_t arg = 0;
        for (std::size_t j = 0; j < d; ++j) {
            out[j] = eig.vectors[j * d + col];
            if (std::abs(out[j]) > std::abs(out[arg])) {
                arg = j;
            }
        }
        if (out[arg] < 0.0) {
            for (std::size_t j = 0; j < d; ++j) {
                out[j] = -out[j];
            }
        }
    }
    return model;
}

/// (row - mean) . components^T for every row; output has k dims.
inline EmbeddingMatrix apply_pca(const PcaModel& model, const EmbeddingMatrix& m, unsigned workers = 1) {
    const std::size_t d = model.dims();
    const std::size_t k = model.k();
    if (m.dims() != d) {
        throw DataError("pca: input has " + std::to_string(m.dims()) + " dims, model expects " + std::to_string(d));
    }
    std::vector<float> out(m.rows() * k);
    const auto run = [&](std::size_t begin, std::size_t end) {
        std::vector<double> centered(d);
        for (std::size_t r = begin; r < end; ++r) {
            const auto x = m.row(r);
            for (std::size_t j = 0; j < d; ++j) {
                centered[j] = x[j] - model.mean[j];
            }
            for (std::size_t c = 0; c < k; ++c) {
                const auto comp = model.component(c);
                double acc = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    acc += centered[j] * comp[j];
                }
                out[r * k + c] = static_cast<float>(acc);
            }
        }
    };
    workers = std::max(1u, workers);
    if (workers == 1 || m.rows() < 1024) {
        run(0, m.rows());
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (m.rows() + workers - 1) / workers;
        for (unsigned w = 0; w < workers; ++w) {
            const std::size_t begin = std::min(m.rows(), w * chunk);
            pool.emplace_back(run, begin, std::min(m.rows(), begin + chunk));
        }
        for (auto& t : pool) {
            t.join();
        }
    }
    return {m.rows(), k, std::move(out)};
}

inline nlohmann::json pca_to_json(const PcaModel& model) {
    nlohmann::ordered_json j;
    j["format"] = "mtda-pca-v1";
    j["dims"] = model.dims();
    j["k"] = model.k();
    j["mean"] = model.mean;
    j["explained_variance"] = model.explained_variance;
    nlohmann::json comps = nlohmann::json::array();
    for (std::size_t c = 0; c < model.k(); ++c) {
        const auto row = model.component(c);
        comps.push_back(std::vector<double>(row.begin(), row.end()));
    }
    j["components"] = std::move(comps);
    return nlohmann::json(j);
}

inline PcaModel pca_from_json(const nlohmann::json& j) {
    try {
        if (j.value("format", std::string()) != "mtda-pca-v1") {
            throw DataError("pca model: expected format \"mtda-pca-v1\"");
        }
        PcaModel m;
        m.mean = j.at("mean").get<std::vector<double>>();
        m.explained_variance = j.at("explained_variance").get<std::vector<double>>();
        const auto& comps = j.at("components");
        if (comps.size() != m.explained_variance.size()) {
            throw DataError("pca model: component count does not match explained_variance");
        }
        for (const auto& row : comps) {
            auto r = row.get<std::vector<double>>();
            if (r.size() != m.mean.size()) {
                throw DataError("pca model: component length does not match mean");
            }
            m.components.insert(m.components.end(), r.begin(), r.end());
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("pca model: ") + e.what());
    }
}

inline void save_pca(const std::filesystem::path& path, const PcaModel& model) {
    io::write_file_atomic(path, pca_to_json(model).dump() + "\n");
}

inline PcaModel load_pca(const std::filesystem::path& path) {
    try {
        return pca_from_json(nlohmann::json::parse(io::read_file(path)));
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Deterministic stand-in embedder

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Signed feature hashing of lowercased word tokens, L2-normalized. Empty
/// texts map to the zero vector.
inline EmbeddingMatrix hash_embed(std::span<const std::string> texts, std::size_t dims, std::uint64_t seed = 0) {
    if (dims == 0) {
        throw UsageError("hash_embed: dims must be >= 1");
    }
    EmbeddingMatrix m(texts.size(), dims);
    std::vector<double> acc(dims);
    for (std::size_t i = 0; i < texts.size(); ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (const auto& tok : word_tokenize(texts[i], true)) {
            const std::uint64_t h = Rng::splitmix64(fnv1a64(tok) ^ seed);
            acc[h % dims] += (h >> 63) != 0 ? -1.0 : 1.0;
        }
        double norm = 0.0;
        for (double v : acc) {
            norm += v * v;
        }
        norm = std::sqrt(norm);
        auto row = m.row(i);
        for (std::size_t j = 0; j < dims; ++j) {
            row[j] = norm > 0.0 ? static_cast<float>(acc[j] / norm) : 0.0F;
        }
    }
    return m;
}

} // namespace mtda
