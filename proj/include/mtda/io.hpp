#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mtda/error.hpp"

namespace mtda::io {

/// Strips trailing CR/LF only.
inline std::string_view chomp(std::string_view line) {
    while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) {
        line.remove_suffix(1);
    }
    return line;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Lines of a text file, CR/LF stripped. A trailing newline does not produce
/// an extra empty line.
inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        lines.emplace_back(chomp(line));
    }
    return lines;
}

/// Output file that only appears under its final name after commit(): data
/// goes to "<path>.tmp" and is renamed into place. Destroying an uncommitted
/// writer removes the temporary file.
class AtomicWriter {
  public:
    explicit AtomicWriter(std::filesystem::path path)
        : path_(std::move(path)), tmp_(path_.string() + ".tmp"), out_(tmp_, std::ios::binary | std::ios::trunc) {
        if (!out_) {
            throw DataError("cannot write " + tmp_.string());
        }
    }

    AtomicWriter(const AtomicWriter&) = delete;
    AtomicWriter& operator=(const AtomicWriter&) = delete;

    ~AtomicWriter() {
        if (!committed_) {
            out_.close();
            std::error_code ec;
            std::filesystem::remove(tmp_, ec);
        }
    }

    std::ostream& stream() { return out_; }

    template <typename T>
    AtomicWriter& operator<<(const T& value) {
        out_ << value;
        return *this;
    }

    void commit() {
        out_.flush();
        if (!out_) {
            throw DataError("write failed for " + tmp_.string());
        }
        out_.close();
        std::filesystem::rename(tmp_, path_);
        committed_ = true;
    }

  private:
    std::filesystem::path path_;
    std::filesystem::path tmp_;
    std::ofstream out_;
    bool committed_ = false;
};

inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
    AtomicWriter w(path);
    w.stream().write(content.data(), static_cast<std::streamsize>(content.size()));
    w.commit();
}

} // namespace mtda::io
