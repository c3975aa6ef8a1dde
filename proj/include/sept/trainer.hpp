#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sept/corpus.hpp"
#include "sept/masking.hpp"
#include "sept/model.hpp"
#include "sept/smoothing.hpp"

namespace sept {

struct TrainConfig {
    int64_t steps = 0;   // total optimizer steps; when 0, epochs decides
    int64_t epochs = 0;  // when both 0, callers supply a default
    int64_t batch_size = 32;
    double lr = 1e-3;
    int64_t warmup_steps = 0;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double adam_eps = 1e-6;
    double clip_norm = 1.0;
    uint64_t seed = 0;
    double continued_lr_divisor = 10.0;
    int64_t checkpoint_interval = 0;  // 0: final checkpoint only
    int64_t log_interval = 50;
    bool log_timing = false;  // when false the CSV seconds column is 0 (reproducible logs)

    void validate() const;
    int64_t resolve_steps(int64_t batches_per_epoch, int64_t default_epochs) const;
};

struct OptimizerState {
    std::vector<std::vector<float>> m;  // aligned with the parameter store order
    std::vector<std::vector<float>> v;
    int64_t step = 0;

    static OptimizerState init(const ParameterStore& params);
    std::vector<std::pair<std::string, Tensor>> to_tensors(const ParameterStore& params) const;
    static OptimizerState from_tensors(const ParameterStore& params,
                                       const std::vector<std::pair<std::string, Tensor>>& extra);
};

struct StepLog {
    int64_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    int64_t selected_tokens = 0;
    double seconds = 0.0;
};

struct TrainReport {
    std::vector<StepLog> rows;
    std::filesystem::path final_checkpoint;
    std::filesystem::path metrics_csv;

    void write_csv(const std::filesystem::path& path) const;
};

/// Linear warmup to base, then linear decay to zero at total_steps.
double lr_schedule(int64_t step, double base_lr, int64_t warmup_steps, int64_t total_steps);

/// One AdamW update: global grad-norm clip, bias-corrected moments, decoupled
/// weight decay. Non-finite gradients abort before anything is mutated.
void adamw_step(ParameterStore& params, OptimizerState& state, double lr, const TrainConfig& cfg);

enum class MaskStrategyKind { kRandom, kSpan, kPmi, kEntity, kSelfQuestioning };

MaskStrategyKind parse_strategy(const std::string& name);

struct MaskingConfig {
    MaskStrategyKind kind = MaskStrategyKind::kRandom;
    double rate = 0.15;  // Bernoulli rate / fallback rate for selection plans
    double geometric_p = 0.2;
    int32_t max_span = 10;
    double budget = 0.15;
    double top_quantile = 0.1;
    int64_t pmi_min_count = 5;
    bool pure_mask = false;
    bool masked_scoring = false;  // score with [MASK]-corrupted inputs instead of clean ones
    SelectionConfig selection;    // self-questioning / stage-2 selection knobs
};

/// Everything one training phase needs besides the parameters themselves.
struct TrainJob {
    TrainConfig train;
    MaskingConfig masking;
    SmoothingConfig smoothing;  // mode kNone trains against one-hot labels
    std::filesystem::path out_dir;
    std::string tag;
    double lr_scale = 1.0;            // continued phases pass 1/continued_lr_divisor
    int64_t default_epochs = 2;       // used when steps==0 and epochs==0
    const SelectionMap* selection = nullptr;
    const PmiTable* pmi = nullptr;
    const AnnotationMap* annotations = nullptr;
    const ParameterStore* reference_snapshot = nullptr;  // r_i source in snapshot mode
};

/// Core optimization loop shared by the baseline and SE phases.
TrainReport run_training(ParameterStore& params, const ModelConfig& mcfg,
                         const std::vector<SentenceRecord>& records, const Vocab& vocab,
                         const TrainJob& job);

/// Vanilla MLM continued pretraining with a selectable masking strategy.
/// The self-questioning strategy runs a stage-1 scoring pass against the
/// starting parameters and then trains on the selected tokens with one-hot
/// labels. pmi/annotations may be supplied (e.g. from a cache); a missing
/// PMI table is computed from the corpus.
TrainReport train_mlm_baseline(ParameterStore& params, const ModelConfig& mcfg,
                               const std::vector<SentenceRecord>& records, const Vocab& vocab,
                               const TrainConfig& tcfg, const MaskingConfig& masking,
                               const std::filesystem::path& out_dir, const std::string& tag,
                               const PmiTable* pmi = nullptr,
                               const AnnotationMap* annotations = nullptr);

struct SERunConfig {
    int64_t iterations = 1;  // N
    SelectionConfig selection;
    SmoothingConfig smoothing;
    MaskingConfig masking;  // fallback rate, pure_mask, masked_scoring
    TrainConfig train;      // per-iteration; 2 epochs when steps/epochs unset

    void validate() const;
};

struct SEIterationResult {
    TrainReport report;
    std::filesystem::path selection_csv;
    int64_t selected_tokens = 0;
};

/// One self-evolution iteration: freeze a snapshot, score the whole corpus,
/// select hard tokens (persisted as sel_iter<k>.csv), then continue training
/// on the selected plans with smoothed targets at lr/continued_lr_divisor.
SEIterationResult se_iteration(ParameterStore& params, const ModelConfig& mcfg,
                               const std::vector<SentenceRecord>& records, const Vocab& vocab,
                               const SERunConfig& cfg, int64_t iteration,
                               const std::filesystem::path& out_dir);

/// Chains N iterations; iteration k scores with the model evolved by k-1.
std::vector<SEIterationResult> run_se(ParameterStore& params, const ModelConfig& mcfg,
                                      const std::vector<SentenceRecord>& records,
                                      const Vocab& vocab, const SERunConfig& cfg,
                                      const std::filesystem::path& out_dir);

/// Stage-1 scoring + selection, persisted as a selection CSV. Shared by
/// se_iteration and the self-questioning baseline strategy.
std::vector<SelectionRow> build_selection(const ParameterStore& frozen, const ModelConfig& mcfg,
                                          const std::vector<SentenceRecord>& records,
                                          const Vocab& vocab, const SelectionConfig& sel_cfg,
                                          int64_t batch_size, uint64_t seed,
                                          const std::string& snapshot_id);

}  // namespace sept
