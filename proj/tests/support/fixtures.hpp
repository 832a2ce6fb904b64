#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace fixture {

// 25 hand-written segments: exact copies, reorderings, drops, insertions,
// substitutions, one-word and empty hypotheses. Lowercase, single spaces,
// no punctuation, so whitespace splitting equals the library tokenizer.
inline const std::vector<std::string>& hyps25() {
    static const std::vector<std::string> v{
        "the cat sat on the mat",
        "a dog barked at the mailman",
        "mat the on sat cat the",
        "the patient was given two tablets daily",
        "take one tablet every morning with water",
        "the results show a significant increase",
        "increase significant a show results the",
        "please read the leaflet",
        "the the the the",
        "side effects include headache and nausea",
        "do not exceed the stated dose",
        "store below twenty five degrees",
        "keep out of the sight and reach of children",
        "hello",
        "",
        "the model was trained on medical text for three days",
        "we evaluate on the test set and report bleu",
        "this medicine is for oral use only",
        "consult your doctor before use",
        "tablets should be swallowed whole with water",
        "the trial enrolled patients over two years",
        "adverse reactions were mild and transient",
        "use the smallest dose that works",
        "a b c d e f g h i j k l",
        "l k j i h g f e d c b a",
    };
    return v;
}

inline const std::vector<std::string>& refs25() {
    static const std::vector<std::string> v{
        "the cat sat on the mat",
        "the dog barked at the postman",
        "the cat sat on the mat",
        "the patient received two tablets each day",
        "take one tablet each morning with a glass of water",
        "the results show a significant increase",
        "the results show a significant increase",
        "please read the package leaflet carefully",
        "the cat",
        "side effects may include headache nausea and dizziness",
        "do not take more than the stated dose",
        "store below 25 degrees",
        "keep this medicine out of the sight and reach of children",
        "hello world",
        "nothing was produced",
        "the model was trained for three days on medical text",
        "we report bleu on the test set",
        "this medicine is for oral use",
        "talk to your doctor before using this medicine",
        "swallow the tablets whole with water",
        "over two years the trial enrolled patients",
        "adverse reactions were mild",
        "use the lowest dose that works",
        "a b c d e f g h i j k l",
        "a b c d e f g h i j k l",
    };
    return v;
}

inline std::vector<std::vector<float>> random_vectors(std::size_t rows, std::size_t dims, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<float> nd(0.0f, 1.0f);
    std::vector<std::vector<float>> out(rows, std::vector<float>(dims));
    for (auto& r : out) {
        for (auto& x : r) {
            x = nd(gen);
        }
    }
    return out;
}

class TempDir {
  public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("mtda-" + tag + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

    std::filesystem::path write(const std::string& name, const std::string& content) const {
        const auto p = path_ / name;
        std::ofstream(p, std::ios::binary) << content;
        return p;
    }

  private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace fixture
