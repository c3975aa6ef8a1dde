#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "sept/corpus.hpp"
#include "sept/model.hpp"

namespace sept {

// All plan positions are record-token coordinates (0-based, before CLS
// framing); specials and PAD are never scoreable or maskable.

enum class MaskAction : uint8_t { kMask, kRandom, kKeep };

struct MaskedToken {
    int32_t position = 0;
    int32_t gold_id = 0;         // pre-corruption id
    MaskAction action = MaskAction::kMask;
    int32_t replacement_id = 0;  // meaningful only for kRandom
};

struct MaskPlan {
    std::vector<MaskedToken> tokens;  // positions strictly increasing
    bool empty() const { return tokens.empty(); }
    size_t size() const { return tokens.size(); }
};

/// Per-token scores from one frozen scoring pass over the clean sentence.
struct TokenScores {
    int64_t line_index = 0;
    std::vector<double> loss;     // l_i, nats
    std::vector<double> entropy;  // e_i, nats, clamped to [0, ln V]
    std::string snapshot_id;
};

enum class SelectionMetric { kCorrectness, kConfidence, kRandom };

struct SelectionConfig {
    SelectionMetric metric = SelectionMetric::kCorrectness;
    double loss_threshold = 0.1;     // T_l
    double entropy_threshold = 1.0;  // T_e
    double fallback_rate = 0.15;
    double max_mask_fraction = 0.5;

    void validate() const;
};

enum class SelectionBranch { kThreshold, kCapped, kFallback, kRandomMetric };

struct Selection {
    std::vector<int32_t> positions;  // ascending
    SelectionBranch branch = SelectionBranch::kThreshold;
    int64_t threshold_count = 0;  // metric-selected count after cap; 0 when fallback engaged
};

struct PmiTable {
    std::unordered_map<std::string, double> scores;  // key: ids joined by ','
    std::unordered_map<int32_t, int64_t> unigram_counts;
    int64_t total_tokens = 0;

    static std::string key(const int32_t* ids, int n);
    /// Smallest PMI still inside the corpus-wide top quantile.
    double quantile_threshold(double top_quantile) const;

    void save(const std::filesystem::path& path) const;
    static PmiTable load(const std::filesystem::path& path);
};

// ---------------------------------------------------------------------------
// plan builders. effective_len is the number of leading tokens that survive
// batch truncation (min(n, max_seq_len-2)); plans never touch positions
// beyond it.

MaskPlan random_mask(const SentenceRecord& rec, int64_t effective_len, double rate, uint64_t seed,
                     int32_t vocab_size, bool pure_mask = false);

MaskPlan span_mask(const SentenceRecord& rec, int64_t effective_len, double geometric_p,
                   int32_t max_span, double budget, uint64_t seed, int32_t vocab_size,
                   bool pure_mask = false);

PmiTable compute_pmi_table(const std::vector<SentenceRecord>& records, int64_t min_count = 5);

MaskPlan pmi_mask(const SentenceRecord& rec, int64_t effective_len, const PmiTable& table,
                  double top_quantile, double budget, uint64_t seed, int32_t vocab_size,
                  bool pure_mask = false);

MaskPlan entity_mask(const SentenceRecord& rec, int64_t effective_len,
                     const std::vector<EntityAnnotation>& spans, double budget, uint64_t seed,
                     int32_t vocab_size, bool pure_mask = false);

/// Applies the standard corruption draw to already-chosen positions.
MaskPlan plan_from_selection(const SentenceRecord& rec, const std::vector<int32_t>& positions,
                             uint64_t seed, int32_t vocab_size, bool pure_mask = false);

/// Geometric(p) span length conditioned on <= max_span (redraw truncation).
/// Exposed for the Monte-Carlo distribution check.
int32_t sample_span_length(Rng& rng, double p, int32_t max_span);

/// Bernoulli(rate) per position with the forced-nonempty rule: one resample
/// pass, then the single max-draw position.
std::vector<int32_t> random_positions(int64_t n, double rate, Rng& rng);

// ---------------------------------------------------------------------------
// scoring and selection

/// Scores every maskable position of the batch rows against the gold ids
/// using the clean (uncorrupted) input; gradients never flow.
std::vector<TokenScores> score_tokens(const ParameterStore& params, const ModelConfig& cfg,
                                      const Batch& batch, const std::string& snapshot_id = "");

/// Sequential full-corpus scoring pass in line order.
std::vector<TokenScores> score_corpus(const ParameterStore& params, const ModelConfig& cfg,
                                      const std::vector<SentenceRecord>& records,
                                      int64_t batch_size, int64_t max_seq_len,
                                      const std::string& snapshot_id = "");

/// Threshold filter per the configured metric, with the max-fraction cap
/// (keep highest scores, ties to the lower position) and the empty-selection
/// fallback to a random draw at fallback_rate.
Selection select_hard_tokens(const TokenScores& scores, const SelectionConfig& cfg, uint64_t seed);

// ---------------------------------------------------------------------------
// selection report csv

struct SelectionRow {
    int64_t line_index = 0;
    int32_t position = 0;
    std::string token;
    double loss = 0.0;
    double entropy = 0.0;
    std::string selected_by;
};

void write_selection_csv(const std::filesystem::path& path, const std::vector<SelectionRow>& rows);
std::vector<SelectionRow> read_selection_csv(const std::filesystem::path& path);

using SelectionMap = std::unordered_map<int64_t, std::vector<int32_t>>;  // line -> positions

SelectionMap selection_map(const std::vector<SelectionRow>& rows);

// ---------------------------------------------------------------------------
// plan application

struct PlannedBatch {
    Batch corrupted;
    std::vector<int64_t> flat_positions;            // into [B*L, ...] hidden rows
    std::vector<int32_t> gold_ids;                  // aligned with flat_positions
    std::vector<BatchPosition> record_positions;    // aligned, record coords
};

/// Applies one plan per batch row; masked columns are the plan positions
/// shifted past CLS. Throws if a plan touches CLS/SEP/PAD territory.
PlannedBatch apply_plans(const Batch& batch, const std::vector<MaskPlan>& plans);

}  // namespace sept
