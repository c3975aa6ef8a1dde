#include "sept/smoothing.hpp"

#include <cmath>

namespace sept {

void SmoothingConfig::validate() const {
    if (lambda < 0.0 || lambda > 1.0) {
        throw UsageError("smoothing config: lambda must be in [0,1]");
    }
}

std::vector<double> TargetDistribution::materialize() const {
    std::vector<double> out(static_cast<size_t>(vocab_size), 0.0);
    switch (kind) {
        case TargetKind::kOneHot:
            out[static_cast<size_t>(gold_id)] = 1.0;
            break;
        case TargetKind::kUniformLs: {
            double u = lambda / static_cast<double>(vocab_size);
            std::fill(out.begin(), out.end(), u);
            out[static_cast<size_t>(gold_id)] += 1.0 - lambda;
            break;
        }
        case TargetKind::kTls:
            for (size_t v = 0; v < out.size(); ++v) out[v] = lambda * reference[v];
            out[static_cast<size_t>(gold_id)] += 1.0 - lambda;
            break;
    }
    return out;
}

namespace {

void check_gold(int32_t gold_id, int64_t vocab_size, const char* op) {
    if (gold_id < 0 || gold_id >= vocab_size) {
        throw UsageError(std::string(op) + ": gold id " + std::to_string(gold_id) +
                         " out of range [0," + std::to_string(vocab_size) + ")");
    }
}

void check_lambda(double lambda, const char* op) {
    if (lambda < 0.0 || lambda > 1.0) {
        throw UsageError(std::string(op) + ": lambda " + std::to_string(lambda) +
                         " outside [0,1]");
    }
}

}  // namespace

TargetDistribution one_hot_target(int32_t gold_id, int64_t vocab_size) {
    check_gold(gold_id, vocab_size, "one_hot_target");
    TargetDistribution t;
    t.kind = TargetKind::kOneHot;
    t.gold_id = gold_id;
    t.lambda = 0.0;
    t.vocab_size = vocab_size;
    return t;
}

TargetDistribution uniform_smooth(int32_t gold_id, double lambda, int64_t vocab_size) {
    check_gold(gold_id, vocab_size, "uniform_smooth");
    check_lambda(lambda, "uniform_smooth");
    TargetDistribution t;
    t.kind = TargetKind::kUniformLs;
    t.gold_id = gold_id;
    t.lambda = lambda;
    t.vocab_size = vocab_size;
    return t;
}

TargetDistribution tls_smooth(int32_t gold_id, double lambda, std::vector<double> reference) {
    int64_t v = static_cast<int64_t>(reference.size());
    check_gold(gold_id, v, "tls_smooth");
    check_lambda(lambda, "tls_smooth");
    KahanSum sum;
    for (double r : reference) {
        if (r < 0.0) throw UsageError("tls_smooth: reference has negative entries");
        sum.add(r);
    }
    if (std::abs(sum.value() - 1.0) > 1e-6) {
        throw UsageError("tls_smooth: reference not normalized (sum " + fmt_float(sum.value()) +
                         ")");
    }
    TargetDistribution t;
    t.kind = TargetKind::kTls;
    t.gold_id = gold_id;
    t.lambda = lambda;
    t.vocab_size = v;
    t.reference = std::move(reference);
    return t;
}

TargetDistribution tls_smooth(int32_t gold_id, double lambda, const std::vector<float>& reference) {
    return tls_smooth(gold_id, lambda, std::vector<double>(reference.begin(), reference.end()));
}

LsDecomposition ls_decomposition_check(int32_t gold_id, double lambda,
                                       const std::vector<double>& pred) {
    int64_t v = static_cast<int64_t>(pred.size());
    check_gold(gold_id, v, "ls_decomposition_check");
    check_lambda(lambda, "ls_decomposition_check");

    auto log_clamped = [](double p) { return std::log(std::max(p, kProbFloor)); };

    // left side: CE of the materialized smoothed label
    std::vector<double> smoothed = uniform_smooth(gold_id, lambda, v).materialize();
    KahanSum lhs;
    for (int64_t j = 0; j < v; ++j) {
        double t = smoothed[static_cast<size_t>(j)];
        if (t != 0.0) lhs.add(-t * log_clamped(pred[static_cast<size_t>(j)]));
    }

    // right side: (1-lambda) H(y,p) + lambda (H(u) + KL(u||p))
    double h_y_p = -log_clamped(pred[static_cast<size_t>(gold_id)]);
    double u = 1.0 / static_cast<double>(v);
    KahanSum h_u;
    KahanSum kl_u_p;
    for (int64_t j = 0; j < v; ++j) {
        h_u.add(-u * std::log(u));
        kl_u_p.add(u * (std::log(u) - log_clamped(pred[static_cast<size_t>(j)])));
    }
    double rhs = (1.0 - lambda) * h_y_p + lambda * (h_u.value() + kl_u_p.value());

    LsDecomposition out;
    out.lhs = lhs.value();
    out.rhs = rhs;
    out.gap = std::abs(out.lhs - out.rhs);
    return out;
}

}  // namespace sept
