#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sept/corpus.hpp"
#include "sept/tensor.hpp"

namespace sept {

struct ModelConfig {
    int64_t vocab_size = 8000;
    int64_t hidden = 128;
    int64_t layers = 4;
    int64_t heads = 4;
    int64_t ffn = 512;
    int64_t max_seq_len = 128;
    double dropout = 0.1;
    uint64_t seed = 0;

    void validate() const;
};

/// Named tensors with a stable iteration order; serialization and optimizer
/// moments index into this order.
template <typename T>
class ParameterStoreT {
public:
    void add(std::string name, TensorT<T> t) {
        if (index_.count(name)) throw UsageError("parameter store: duplicate name " + name);
        index_[name] = items_.size();
        items_.emplace_back(std::move(name), std::move(t));
    }

    TensorT<T>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw UsageError("parameter store: unknown name " + name);
        return items_[it->second].second;
    }
    const TensorT<T>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw UsageError("parameter store: unknown name " + name);
        return items_[it->second].second;
    }
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    size_t size() const { return items_.size(); }

    std::vector<std::pair<std::string, TensorT<T>>>& items() { return items_; }
    const std::vector<std::pair<std::string, TensorT<T>>>& items() const { return items_; }

    /// Frozen snapshot: fresh nodes, copied values, no graph, grads dropped.
    ParameterStoreT deep_copy() const {
        ParameterStoreT out;
        for (const auto& [name, t] : items_) {
            TensorT<T> copy(t.shape(), t.data(), t.requires_grad());
            out.add(name, std::move(copy));
        }
        return out;
    }

    void zero_grad() {
        for (auto& [name, t] : items_) t.zero_grad();
    }

private:
    std::vector<std::pair<std::string, TensorT<T>>> items_;
    std::unordered_map<std::string, size_t> index_;
};

using ParameterStore = ParameterStoreT<float>;

enum class ParamInit { kTruncNormal, kZero, kOne };

struct ParamSpec {
    std::string name;
    std::vector<int64_t> shape;
    ParamInit init;
};

/// Parameter names and shapes in their canonical (serialization) order.
std::vector<ParamSpec> parameter_layout(const ModelConfig& cfg);

enum class RunMode { kTrain, kEval };

struct ForwardOptions {
    RunMode mode = RunMode::kEval;
    Rng* dropout_rng = nullptr;  // consumed only in train mode with dropout > 0
    bool capture_attention = false;
};

template <typename T>
struct EncoderOutputT {
    TensorT<T> hidden;  // [B*L, d] final hidden states
    int64_t rows = 0;   // B
    int64_t cols = 0;   // L
    std::vector<TensorT<T>> attention;  // per layer [B*heads, L, L], if captured
};

using EncoderOutput = EncoderOutputT<float>;

// ---------------------------------------------------------------------------
// init

inline constexpr double kInitStd = 0.02;

template <typename T>
ParameterStoreT<T> init_params(const ModelConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    ParameterStoreT<T> store;
    for (const ParamSpec& spec : parameter_layout(cfg)) {
        TensorT<T> t(spec.shape, T(0), /*requires_grad=*/true);
        switch (spec.init) {
            case ParamInit::kOne:
                std::fill(t.data().begin(), t.data().end(), T(1));
                break;
            case ParamInit::kZero:
                break;
            case ParamInit::kTruncNormal:
                for (T& v : t.data()) {
                    v = static_cast<T>(rng.truncated_normal(kInitStd, 2.0 * kInitStd));
                }
                break;
        }
        store.add(spec.name, std::move(t));
    }
    return store;
}

// ---------------------------------------------------------------------------
// forward

namespace detail {

template <typename T>
TensorT<T> split_heads(const TensorT<T>& x, int64_t batch, int64_t seq, int64_t heads,
                       int64_t head_dim) {
    // [B*L, d] -> [B*heads, L, head_dim]
    TensorT<T> r = reshape(x, {batch, seq, heads, head_dim});
    TensorT<T> p = transpose(r, {0, 2, 1, 3});
    return reshape(p, {batch * heads, seq, head_dim});
}

template <typename T>
TensorT<T> merge_heads(const TensorT<T>& x, int64_t batch, int64_t seq, int64_t heads,
                       int64_t head_dim) {
    // [B*heads, L, head_dim] -> [B*L, d]
    TensorT<T> r = reshape(x, {batch, heads, seq, head_dim});
    TensorT<T> p = transpose(r, {0, 2, 1, 3});
    return reshape(p, {batch * seq, heads * head_dim});
}

/// Additive key mask: 0 on attendable positions, -1e9 on PAD. After the
/// softmax max-shift the PAD weights underflow to exactly zero.
template <typename T>
TensorT<T> attention_bias(const Batch& batch, int64_t heads) {
    int64_t b = batch.rows, l = batch.cols;
    TensorT<T> bias({b * heads, l, l}, T(0));
    for (int64_t r = 0; r < b; ++r) {
        const float* att = batch.attention.data() + r * l;
        for (int64_t h = 0; h < heads; ++h) {
            T* plane = bias.data().data() + ((r * heads + h) * l * l);
            for (int64_t q = 0; q < l; ++q) {
                T* row = plane + q * l;
                for (int64_t k = 0; k < l; ++k) {
                    if (att[k] == 0.0f) row[k] = T(-1e9);
                }
            }
        }
    }
    return bias;
}

}  // namespace detail

/// Pre-norm transformer encoder pass. Eval mode is a pure function of
/// (params, batch); train mode consumes opts.dropout_rng.
template <typename T>
EncoderOutputT<T> forward(const ParameterStoreT<T>& params, const ModelConfig& cfg,
                          const Batch& batch, const ForwardOptions& opts = {}) {
    if (batch.cols > cfg.max_seq_len) {
        throw UsageError("forward: batch length " + std::to_string(batch.cols) +
                         " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    }
    for (int32_t id : batch.ids) {
        if (id < 0 || id >= cfg.vocab_size) {
            throw UsageError("forward: token id " + std::to_string(id) + " out of range");
        }
    }
    const bool train = opts.mode == RunMode::kTrain;
    const double drop = train ? cfg.dropout : 0.0;
    if (drop > 0.0 && opts.dropout_rng == nullptr) {
        throw UsageError("forward: train mode with dropout requires an rng");
    }
    const int64_t b = batch.rows, l = batch.cols, d = cfg.hidden;
    const int64_t heads = cfg.heads, hd = d / heads;

    auto maybe_drop = [&](TensorT<T> x) {
        return drop > 0.0 ? dropout(x, drop, *opts.dropout_rng) : x;
    };

    std::vector<int32_t> pos_ids(static_cast<size_t>(b * l));
    for (int64_t r = 0; r < b; ++r) {
        for (int64_t c = 0; c < l; ++c) pos_ids[static_cast<size_t>(r * l + c)] = static_cast<int32_t>(c);
    }

    TensorT<T> x = add(embedding_gather(params.at("embed.tok"), batch.ids),
                       embedding_gather(params.at("embed.pos"), pos_ids));
    x = maybe_drop(x);

    TensorT<T> attn_bias = detail::attention_bias<T>(batch, heads);
    EncoderOutputT<T> out;
    out.rows = b;
    out.cols = l;
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

    for (int64_t layer = 0; layer < cfg.layers; ++layer) {
        std::string p = "layer" + std::to_string(layer) + ".";
        TensorT<T> a = layer_norm(x, params.at(p + "ln1.gain"), params.at(p + "ln1.bias"));
        TensorT<T> q = detail::split_heads(
            add_bias(matmul(a, params.at(p + "attn.wq")), params.at(p + "attn.bq")), b, l, heads, hd);
        TensorT<T> k = detail::split_heads(
            add_bias(matmul(a, params.at(p + "attn.wk")), params.at(p + "attn.bk")), b, l, heads, hd);
        TensorT<T> v = detail::split_heads(
            add_bias(matmul(a, params.at(p + "attn.wv")), params.at(p + "attn.bv")), b, l, heads, hd);
        TensorT<T> scores = add(scale(matmul_nt(q, k), inv_sqrt_hd), attn_bias);
        TensorT<T> probs = softmax_rows(scores);
        if (opts.capture_attention) out.attention.push_back(probs);
        TensorT<T> ctx = matmul(maybe_drop(probs), v);
        TensorT<T> merged = detail::merge_heads(ctx, b, l, heads, hd);
        TensorT<T> attn_out =
            maybe_drop(add_bias(matmul(merged, params.at(p + "attn.wo")), params.at(p + "attn.bo")));
        x = add(x, attn_out);

        TensorT<T> a2 = layer_norm(x, params.at(p + "ln2.gain"), params.at(p + "ln2.bias"));
        TensorT<T> h = gelu(add_bias(matmul(a2, params.at(p + "ffn.w1")), params.at(p + "ffn.b1")));
        h = maybe_drop(add_bias(matmul(h, params.at(p + "ffn.w2")), params.at(p + "ffn.b2")));
        x = add(x, h);
    }
    out.hidden = layer_norm(x, params.at("final_ln.gain"), params.at("final_ln.bias"));
    return out;
}

/// Logits at the given flat row positions of the hidden matrix, projected
/// through the tied token embedding plus output bias: H_m E^T + b.
template <typename T>
TensorT<T> logits_at(const ParameterStoreT<T>& params, const EncoderOutputT<T>& enc,
                     const std::vector<int64_t>& flat_positions) {
    TensorT<T> rows = gather_rows(enc.hidden, flat_positions);
    return add_bias(matmul_nt(rows, params.at("embed.tok")), params.at("out.bias"));
}

/// (row, token-position) pair in record coordinates; the framing offset to
/// the CLS-shifted batch column happens internally.
using BatchPosition = std::pair<int64_t, int64_t>;

inline int64_t flat_position(const Batch& batch, const BatchPosition& pos) {
    auto [row, tok] = pos;
    if (row < 0 || row >= batch.rows) throw UsageError("position: row out of range");
    if (tok < 0 || tok >= batch.lengths[static_cast<size_t>(row)]) {
        throw UsageError("position: token offset " + std::to_string(tok) +
                         " outside true length of row " + std::to_string(row));
    }
    return row * batch.cols + (tok + 1);
}

/// Per-position next-token probability vectors from an eval pass on the
/// (uncorrupted) batch. Rows sum to 1 within 1e-6.
template <typename T>
std::vector<std::vector<T>> predict_distributions(const ParameterStoreT<T>& params,
                                                  const ModelConfig& cfg, const Batch& batch,
                                                  const std::vector<BatchPosition>& positions) {
    NoGradGuard ng;
    if (positions.empty()) return {};
    std::vector<int64_t> flats;
    flats.reserve(positions.size());
    for (const auto& pos : positions) flats.push_back(flat_position(batch, pos));
    EncoderOutputT<T> enc = forward(params, cfg, batch, {});
    TensorT<T> probs = softmax_rows(logits_at(params, enc, flats));
    std::vector<std::vector<T>> out(positions.size());
    int64_t v = cfg.vocab_size;
    for (size_t i = 0; i < positions.size(); ++i) {
        const T* row = probs.data().data() + static_cast<int64_t>(i) * v;
        out[i].assign(row, row + v);
    }
    return out;
}

// ---------------------------------------------------------------------------
// checkpoint io (float storage; layout documented in README)

struct LoadedCheckpoint {
    ParameterStore params;
    ModelConfig config;
    std::vector<std::pair<std::string, Tensor>> extra;  // "opt."-prefixed tensors
};

void save_checkpoint(const ParameterStore& params, const ModelConfig& cfg,
                     const std::vector<std::pair<std::string, Tensor>>& extra,
                     const std::filesystem::path& path);

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Widens a float store to the 64-bit verification dtype.
inline ParameterStoreT<double> widen(const ParameterStore& params) {
    ParameterStoreT<double> out;
    for (const auto& [name, t] : params.items()) {
        std::vector<double> data(t.data().begin(), t.data().end());
        out.add(name, Tensor64(t.shape(), std::move(data), t.requires_grad()));
    }
    return out;
}

}  // namespace sept
