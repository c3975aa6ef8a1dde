#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sept/tensor.hpp"

namespace sept {

enum class TargetKind { kOneHot, kUniformLs, kTls };

/// Per-masked-position training target. Materialized vectors are built in
/// double and sum to 1 within 1e-9.
struct TargetDistribution {
    TargetKind kind = TargetKind::kOneHot;
    int32_t gold_id = 0;
    double lambda = 0.0;
    int64_t vocab_size = 0;
    std::vector<double> reference;  // TLS only; treated as a constant teacher

    std::vector<double> materialize() const;
};

enum class SmoothingMode { kNone, kUniform, kTls };
enum class ReferenceSource { kCurrent, kSnapshot };

struct SmoothingConfig {
    SmoothingMode mode = SmoothingMode::kTls;
    double lambda = 0.1;
    ReferenceSource reference = ReferenceSource::kCurrent;

    void validate() const;
};

TargetDistribution one_hot_target(int32_t gold_id, int64_t vocab_size);

/// y' = (1-lambda) * one_hot(gold) + lambda * uniform(V); the uniform
/// component includes the gold index.
TargetDistribution uniform_smooth(int32_t gold_id, double lambda, int64_t vocab_size);

/// y~ = (1-lambda) * one_hot(gold) + lambda * r, with r the model's own
/// clean-input prediction. r must sum to 1 within 1e-6.
TargetDistribution tls_smooth(int32_t gold_id, double lambda, std::vector<double> reference);
TargetDistribution tls_smooth(int32_t gold_id, double lambda, const std::vector<float>& reference);

/// Stacks materialized targets into a constant [m, V] tensor (no gradient
/// ever flows into targets; the teacher is detached by construction).
template <typename T>
TensorT<T> targets_tensor(const std::vector<TargetDistribution>& targets) {
    if (targets.empty()) throw UsageError("targets_tensor: no targets");
    int64_t v = targets[0].vocab_size;
    int64_t m = static_cast<int64_t>(targets.size());
    std::vector<T> data;
    data.reserve(static_cast<size_t>(m * v));
    for (const TargetDistribution& t : targets) {
        if (t.vocab_size != v) throw DimensionError("targets_tensor: mixed vocab sizes");
        for (double x : t.materialize()) data.push_back(static_cast<T>(x));
    }
    return TensorT<T>({m, v}, std::move(data));
}

/// Mean masked-token cross-entropy against one-hot labels.
template <typename T>
TensorT<T> mlm_loss(const std::vector<int32_t>& gold_ids, const TensorT<T>& preds) {
    if (gold_ids.empty()) throw UsageError("mlm_loss: no masked positions (skip empty plans)");
    detail::check(preds.rank() == 2, "mlm_loss: preds must be [m, V]");
    detail::check(static_cast<int64_t>(gold_ids.size()) == preds.dim(0),
                  "mlm_loss: target/pred count mismatch");
    std::vector<TargetDistribution> targets;
    targets.reserve(gold_ids.size());
    for (int32_t g : gold_ids) targets.push_back(one_hot_target(g, preds.dim(1)));
    return cross_entropy_rows_mean(targets_tensor<T>(targets), preds);
}

/// Mean masked-token cross-entropy against smoothed targets.
template <typename T>
TensorT<T> se_loss(const std::vector<TargetDistribution>& targets, const TensorT<T>& preds) {
    if (targets.empty()) throw UsageError("se_loss: no masked positions (skip empty plans)");
    detail::check(preds.rank() == 2, "se_loss: preds must be [m, V]");
    detail::check(static_cast<int64_t>(targets.size()) == preds.dim(0),
                  "se_loss: target/pred count mismatch");
    detail::check(targets[0].vocab_size == preds.dim(1), "se_loss: vocab size mismatch");
    return cross_entropy_rows_mean(targets_tensor<T>(targets), preds);
}

/// Both sides of the uniform-label-smoothing decomposition
///   CE(y', p) = (1-lambda) * H(y,p) + lambda * (H(u) + KL(u||p))
/// evaluated independently in compensated 64-bit arithmetic.
struct LsDecomposition {
    double lhs = 0.0;
    double rhs = 0.0;
    double gap = 0.0;
};

LsDecomposition ls_decomposition_check(int32_t gold_id, double lambda,
                                       const std::vector<double>& pred);

}  // namespace sept
