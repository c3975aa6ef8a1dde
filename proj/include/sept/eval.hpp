#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sept/corpus.hpp"
#include "sept/masking.hpp"
#include "sept/model.hpp"

namespace sept {

struct EvalReport {
    double mean_loss = 0.0;       // nats over masked positions
    double top1_accuracy = 0.0;
    double mean_entropy = 0.0;
    int64_t positions = 0;
    bool has_hard = false;        // restricted variants below, when a selection was supplied
    double hard_mean_loss = 0.0;
    double hard_top1_accuracy = 0.0;
    double hard_mean_entropy = 0.0;
    int64_t hard_positions = 0;

    void write_csv(const std::filesystem::path& path) const;
    std::string to_csv() const;
};

/// Masks the heldout corpus with a fixed-seed random selection (pure [MASK]
/// replacement) and aggregates loss / top-1 accuracy / entropy. When a
/// selection map is supplied, the hard_* fields evaluate exactly those
/// positions instead.
EvalReport evaluate(const ParameterStore& params, const ModelConfig& cfg,
                    const std::vector<SentenceRecord>& heldout, double mask_rate, uint64_t seed,
                    const SelectionMap* hard_set = nullptr, int64_t batch_size = 32);

struct ClozeSlot {
    int64_t position = 0;  // token offset in the framed input
    std::vector<std::pair<std::string, double>> topk;  // (token, probability), descending
};

struct ClozeCase {
    std::string text;
    std::vector<ClozeSlot> slots;
};

/// Fills each literal [MASK] slot with the model's top-k predictions. The
/// cloze text is the only place raw input may contain a special token.
ClozeCase cloze(const ParameterStore& params, const ModelConfig& cfg, const Vocab& vocab,
                const std::string& text, int64_t k = 5);

struct OverlapReport {
    double js = 0.0;       // Jensen-Shannon divergence, natural log, in [0, ln 2]
    double kl_p2_p1 = 0.0;  // KL(P2 || P1)
    double kl_p1_p2 = 0.0;  // KL(P1 || P2)
    int64_t support_size_p1 = 0;
    int64_t support_size_p2 = 0;

    void write_csv(const std::filesystem::path& path) const;
    std::string to_csv() const;
};

/// Divergences between two token-frequency distributions given as counts;
/// built over the union support with add-eps (1e-10) smoothing.
OverlapReport divergence_from_counts(const std::map<std::string, int64_t>& counts_p1,
                                     const std::map<std::string, int64_t>& counts_p2);

/// Token-frequency overlap between two persisted selection CSVs.
OverlapReport selection_overlap(const std::filesystem::path& sel_p1,
                                const std::filesystem::path& sel_p2);

/// Heldout loss along theta(alpha) = (1-alpha) A + alpha D for alpha evenly
/// spaced over [-0.5, 1.5]. D is a second checkpoint or a random-direction
/// endpoint from random_direction_endpoint().
std::vector<std::pair<double, double>> loss_interpolation_1d(
    const ParameterStore& a, const ParameterStore& d, const ModelConfig& cfg,
    const std::vector<SentenceRecord>& heldout, double mask_rate, uint64_t eval_seed,
    int64_t points = 25, int64_t batch_size = 32);

/// A + delta with delta a seeded Gaussian direction, each row rescaled to the
/// norm of the corresponding row of A (rows of rank-1 tensors are the whole
/// tensor).
ParameterStore random_direction_endpoint(const ParameterStore& a, uint64_t seed);

void write_interpolation_csv(const std::filesystem::path& path,
                             const std::vector<std::pair<double, double>>& curve);

}  // namespace sept
