#pragma once

// Shared test helpers: independent oracles, a finite-difference harness, the
// synthetic second-order Markov grammar, and scratch-directory plumbing.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sept/common.hpp"
#include "sept/tensor.hpp"

namespace testutil {

inline std::filesystem::path scratch_dir(const std::string& name) {
    std::filesystem::path dir = std::filesystem::temp_directory_path() / "sept_tests" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
    std::ofstream out(path, std::ios::binary);
    for (const std::string& l : lines) out << l << '\n';
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// ---------------------------------------------------------------------------
// oracles

/// Naive triple-loop matrix product in double.
inline std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                         int64_t m, int64_t k, int64_t n) {
    std::vector<double> c(static_cast<size_t>(m * n), 0.0);
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p) {
                acc += a[static_cast<size_t>(i * k + p)] * b[static_cast<size_t>(p * n + j)];
            }
            c[static_cast<size_t>(i * n + j)] = acc;
        }
    }
    return c;
}

inline double relative_error(double got, double want) {
    double scale = std::max({std::abs(got), std::abs(want), 1e-8});
    return std::abs(got - want) / scale;
}

/// Central finite difference through an arbitrary loss closure. The closure
/// must recompute the loss from current parameter values on every call.
template <typename LossFn>
double finite_difference(std::vector<double>& param_data, size_t index, double h, LossFn&& loss) {
    double orig = param_data[index];
    param_data[index] = orig + h;
    double lp = loss();
    param_data[index] = orig - h;
    double lm = loss();
    param_data[index] = orig;
    return (lp - lm) / (2.0 * h);
}

// ---------------------------------------------------------------------------
// synthetic grammar: a second-order Markov chain over word types w0..w{W-1}.
// The transition table is a pure function of (seed, history); roughly a third
// of histories have exactly one continuation, which cloze probes exploit.

class Grammar {
public:
    Grammar(int32_t words, uint64_t seed) : words_(words), seed_(seed) {}

    int32_t words() const { return words_; }

    std::vector<int32_t> continuations(int32_t a, int32_t b) const {
        uint64_t h = sept::derive_seed(seed_, "grammar", static_cast<uint64_t>(a),
                                       static_cast<uint64_t>(b));
        int count = 1 + static_cast<int>(h % 3);  // 1..3 candidates
        std::vector<int32_t> out;
        for (int j = 0; j < count; ++j) {
            uint64_t hj = sept::splitmix64(h + static_cast<uint64_t>(j) + 1);
            int32_t w = static_cast<int32_t>(hj % static_cast<uint64_t>(words_));
            bool dup = false;
            for (int32_t seen : out) dup = dup || seen == w;
            if (!dup) out.push_back(w);
        }
        return out;
    }

    bool deterministic(int32_t a, int32_t b) const { return continuations(a, b).size() == 1; }

    std::vector<int32_t> sample_ids(sept::Rng& rng, int min_len, int max_len) const {
        int len = min_len + static_cast<int>(rng.uniform_int(max_len - min_len + 1));
        std::vector<int32_t> ids;
        ids.push_back(static_cast<int32_t>(rng.uniform_int(words_)));
        ids.push_back(static_cast<int32_t>(rng.uniform_int(words_)));
        while (static_cast<int>(ids.size()) < len) {
            std::vector<int32_t> cands =
                continuations(ids[ids.size() - 2], ids[ids.size() - 1]);
            // weights 1/(j+1): first candidate dominates
            double total = 0.0;
            for (size_t j = 0; j < cands.size(); ++j) total += 1.0 / static_cast<double>(j + 1);
            double u = rng.uniform() * total;
            size_t pick = 0;
            for (; pick + 1 < cands.size(); ++pick) {
                u -= 1.0 / static_cast<double>(pick + 1);
                if (u < 0.0) break;
            }
            ids.push_back(cands[pick]);
        }
        return ids;
    }

    std::string word(int32_t id) const { return "w" + std::to_string(id); }

    std::string sample_sentence(sept::Rng& rng, int min_len, int max_len) const {
        std::vector<int32_t> ids = sample_ids(rng, min_len, max_len);
        std::string out;
        for (size_t i = 0; i < ids.size(); ++i) {
            if (i) out += ' ';
            out += word(ids[i]);
        }
        return out;
    }

    std::vector<std::string> sample_corpus(uint64_t rng_seed, int64_t sentences, int min_len,
                                           int max_len) const {
        sept::Rng rng(rng_seed);
        std::vector<std::string> out;
        out.reserve(static_cast<size_t>(sentences));
        for (int64_t i = 0; i < sentences; ++i) {
            out.push_back(sample_sentence(rng, min_len, max_len));
        }
        return out;
    }

private:
    int32_t words_;
    uint64_t seed_;
};

}  // namespace testutil
