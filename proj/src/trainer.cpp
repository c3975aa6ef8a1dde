#include "sept/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_map>

namespace sept {

void TrainConfig::validate() const {
    if (batch_size < 1) throw UsageError("train config: batch_size must be >= 1");
    if (lr <= 0.0) throw UsageError("train config: lr must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0)) {
        throw UsageError("train config: betas must be in (0,1)");
    }
    if (adam_eps <= 0.0) throw UsageError("train config: adam_eps must be positive");
    if (weight_decay < 0.0) throw UsageError("train config: weight_decay must be >= 0");
    if (clip_norm < 0.0) throw UsageError("train config: clip_norm must be >= 0");
    if (warmup_steps < 0 || steps < 0 || epochs < 0) {
        throw UsageError("train config: counts must be >= 0");
    }
    if (log_interval < 1) throw UsageError("train config: log_interval must be >= 1");
    if (continued_lr_divisor <= 0.0) {
        throw UsageError("train config: continued_lr_divisor must be positive");
    }
}

int64_t TrainConfig::resolve_steps(int64_t batches_per_epoch, int64_t default_epochs) const {
    if (steps > 0) return steps;
    int64_t e = epochs > 0 ? epochs : default_epochs;
    if (e <= 0) throw UsageError("train config: steps or epochs required");
    return e * batches_per_epoch;
}

void SERunConfig::validate() const {
    if (iterations < 1) throw UsageError("se config: iterations must be >= 1");
    selection.validate();
    smoothing.validate();
    train.validate();
}

OptimizerState OptimizerState::init(const ParameterStore& params) {
    OptimizerState s;
    for (const auto& [name, t] : params.items()) {
        s.m.emplace_back(t.data().size(), 0.0f);
        s.v.emplace_back(t.data().size(), 0.0f);
    }
    return s;
}

std::vector<std::pair<std::string, Tensor>> OptimizerState::to_tensors(
    const ParameterStore& params) const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("opt.step", Tensor({1}, std::vector<float>{static_cast<float>(step)}));
    const auto& items = params.items();
    for (size_t i = 0; i < items.size(); ++i) {
        out.emplace_back("opt.m." + items[i].first, Tensor(items[i].second.shape(), m[i]));
        out.emplace_back("opt.v." + items[i].first, Tensor(items[i].second.shape(), v[i]));
    }
    return out;
}

OptimizerState OptimizerState::from_tensors(
    const ParameterStore& params, const std::vector<std::pair<std::string, Tensor>>& extra) {
    std::unordered_map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : extra) by_name[name] = &t;
    OptimizerState s;
    auto it = by_name.find("opt.step");
    if (it == by_name.end()) throw FormatError("optimizer state: missing opt.step");
    s.step = static_cast<int64_t>(it->second->data()[0]);
    for (const auto& [name, t] : params.items()) {
        auto mi = by_name.find("opt.m." + name);
        auto vi = by_name.find("opt.v." + name);
        if (mi == by_name.end() || vi == by_name.end()) {
            throw FormatError("optimizer state: missing moments for " + name);
        }
        if (mi->second->shape() != t.shape() || vi->second->shape() != t.shape()) {
            throw FormatError("optimizer state: moment shape mismatch for " + name);
        }
        s.m.push_back(mi->second->data());
        s.v.push_back(vi->second->data());
    }
    return s;
}

void TrainReport::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("train report: cannot write " + path.string());
    out << "step,loss,lr,selected_tokens,seconds\n";
    for (const StepLog& r : rows) {
        out << r.step << ',' << fmt_float(r.loss) << ',' << fmt_float(r.lr) << ','
            << r.selected_tokens << ',' << fmt_float(r.seconds) << '\n';
    }
    if (!out) throw IoError("train report: write failed for " + path.string());
}

double lr_schedule(int64_t step, double base_lr, int64_t warmup_steps, int64_t total_steps) {
    if (step < 0) throw UsageError("lr_schedule: step must be >= 0");
    if (warmup_steps > 0 && step < warmup_steps) {
        return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    }
    if (step >= total_steps || total_steps <= warmup_steps) return 0.0;
    return base_lr * static_cast<double>(total_steps - step) /
           static_cast<double>(total_steps - warmup_steps);
}

void adamw_step(ParameterStore& params, OptimizerState& state, double lr, const TrainConfig& cfg) {
    auto& items = params.items();
    if (state.m.size() != items.size() || state.v.size() != items.size()) {
        throw UsageError("adamw_step: optimizer state not aligned with parameters");
    }
    // reject the step before mutating anything
    double sq_norm = 0.0;
    for (auto& [name, t] : items) {
        for (float g : t.grad()) {
            double d = static_cast<double>(g);
            if (!std::isfinite(d)) {
                throw NumericError("adamw_step: non-finite gradient in " + name);
            }
            sq_norm += d * d;
        }
    }
    double norm = std::sqrt(sq_norm);
    double clip = 1.0;
    if (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) clip = cfg.clip_norm / norm;

    state.step += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < items.size(); ++i) {
        Tensor& t = items[i].second;
        float* p = t.data().data();
        const float* g = t.grad().data();
        float* m = state.m[i].data();
        float* v = state.v[i].data();
        for (size_t j = 0; j < t.data().size(); ++j) {
            // element math in double; storage stays f32
            double gj = static_cast<double>(g[j]) * clip;
            double mj = cfg.beta1 * static_cast<double>(m[j]) + (1.0 - cfg.beta1) * gj;
            double vj = cfg.beta2 * static_cast<double>(v[j]) + (1.0 - cfg.beta2) * gj * gj;
            m[j] = static_cast<float>(mj);
            v[j] = static_cast<float>(vj);
            double update = (mj / bc1) / (std::sqrt(vj / bc2) + cfg.adam_eps);
            double pj = static_cast<double>(p[j]);
            p[j] = static_cast<float>(pj - lr * (update + cfg.weight_decay * pj));
        }
    }
}

MaskStrategyKind parse_strategy(const std::string& name) {
    if (name == "random") return MaskStrategyKind::kRandom;
    if (name == "span") return MaskStrategyKind::kSpan;
    if (name == "pmi") return MaskStrategyKind::kPmi;
    if (name == "entity") return MaskStrategyKind::kEntity;
    if (name == "self-questioning") return MaskStrategyKind::kSelfQuestioning;
    throw UsageError("unknown masking strategy '" + name +
                     "' (expected random|span|pmi|entity|self-questioning)");
}

namespace {

std::string checkpoint_name(const std::string& tag, int64_t step) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06lld", static_cast<long long>(step));
    return "ckpt_" + tag + "_step" + buf + ".sept";
}

MaskPlan plan_for_row(const SentenceRecord& rec, int64_t effective_len, const TrainJob& job,
                      int32_t vocab_size, uint64_t plan_seed) {
    const MaskingConfig& mc = job.masking;
    switch (mc.kind) {
        case MaskStrategyKind::kRandom:
            return random_mask(rec, effective_len, mc.rate, plan_seed, vocab_size, mc.pure_mask);
        case MaskStrategyKind::kSpan:
            return span_mask(rec, effective_len, mc.geometric_p, mc.max_span, mc.budget, plan_seed,
                             vocab_size, mc.pure_mask);
        case MaskStrategyKind::kPmi:
            if (!job.pmi) throw UsageError("pmi strategy requires a PMI table");
            return pmi_mask(rec, effective_len, *job.pmi, mc.top_quantile, mc.budget, plan_seed,
                            vocab_size, mc.pure_mask);
        case MaskStrategyKind::kEntity: {
            static const std::vector<EntityAnnotation> kNone;
            if (!job.annotations) throw UsageError("entity strategy requires annotations");
            auto it = job.annotations->find(rec.line_index);
            const auto& spans = it == job.annotations->end() ? kNone : it->second;
            return entity_mask(rec, effective_len, spans, mc.budget, plan_seed, vocab_size,
                               mc.pure_mask);
        }
        case MaskStrategyKind::kSelfQuestioning: {
            if (!job.selection) throw UsageError("selection-driven training requires a selection");
            std::vector<int32_t> positions;
            auto it = job.selection->find(rec.line_index);
            if (it != job.selection->end()) {
                for (int32_t p : it->second) {
                    if (p < effective_len) positions.push_back(p);
                }
            }
            if (positions.empty()) {
                // selection emptied by truncation or absent line: fallback plan
                return random_mask(rec, effective_len, mc.selection.fallback_rate, plan_seed,
                                   vocab_size, mc.pure_mask);
            }
            return plan_from_selection(rec, positions, plan_seed, vocab_size, mc.pure_mask);
        }
    }
    throw UsageError("plan_for_row: unreachable strategy");
}

}  // namespace

TrainReport run_training(ParameterStore& params, const ModelConfig& mcfg,
                         const std::vector<SentenceRecord>& records, const Vocab& vocab,
                         const TrainJob& job) {
    job.train.validate();
    job.smoothing.validate();
    if (records.empty()) throw UsageError("run_training: empty corpus");
    if (vocab.size() != mcfg.vocab_size) {
        throw UsageError("run_training: vocab size " + std::to_string(vocab.size()) +
                         " does not match model vocab_size " + std::to_string(mcfg.vocab_size));
    }
    if (job.smoothing.mode == SmoothingMode::kTls &&
        job.smoothing.reference == ReferenceSource::kSnapshot && !job.reference_snapshot) {
        throw UsageError("run_training: snapshot reference mode without a snapshot");
    }
    std::filesystem::create_directories(job.out_dir);

    std::unordered_map<int64_t, size_t> by_line;
    for (size_t i = 0; i < records.size(); ++i) by_line[records[i].line_index] = i;

    BatchIterator it(records, job.train.batch_size, mcfg.max_seq_len, job.train.seed);
    const int64_t total_steps = job.train.resolve_steps(it.batches_per_epoch(), job.default_epochs);
    const double base_lr = job.train.lr * job.lr_scale;
    const int32_t vocab_size = vocab.size();
    OptimizerState opt = OptimizerState::init(params);

    TrainReport report;
    auto t0 = std::chrono::steady_clock::now();
    for (int64_t step = 1; step <= total_steps; ++step) {
        Batch batch = it.next();
        int64_t epoch = it.epoch();

        std::vector<MaskPlan> plans;
        plans.reserve(static_cast<size_t>(batch.rows));
        for (int64_t r = 0; r < batch.rows; ++r) {
            int64_t line = batch.lines[static_cast<size_t>(r)];
            const SentenceRecord& rec = records[by_line.at(line)];
            uint64_t plan_seed = derive_seed(job.train.seed, "mask", static_cast<uint64_t>(epoch),
                                             static_cast<uint64_t>(line));
            plans.push_back(plan_for_row(rec, batch.lengths[static_cast<size_t>(r)], job,
                                         vocab_size, plan_seed));
        }
        PlannedBatch planned = apply_plans(batch, plans);

        Rng drop_rng(derive_seed(job.train.seed, "dropout", static_cast<uint64_t>(step)));
        ForwardOptions fo;
        fo.mode = RunMode::kTrain;
        fo.dropout_rng = &drop_rng;
        EncoderOutput enc = forward(params, mcfg, planned.corrupted, fo);
        Tensor preds = softmax_rows(logits_at(params, enc, planned.flat_positions));

        Tensor loss;
        if (job.smoothing.mode == SmoothingMode::kNone) {
            loss = mlm_loss(planned.gold_ids, preds);
        } else {
            std::vector<TargetDistribution> targets;
            targets.reserve(planned.gold_ids.size());
            if (job.smoothing.mode == SmoothingMode::kUniform) {
                for (int32_t g : planned.gold_ids) {
                    targets.push_back(uniform_smooth(g, job.smoothing.lambda, vocab_size));
                }
            } else {
                const ParameterStore& ref = job.smoothing.reference == ReferenceSource::kSnapshot
                                                ? *job.reference_snapshot
                                                : params;
                // reference probabilities from the clean sentence, detached
                std::vector<std::vector<float>> refs =
                    predict_distributions(ref, mcfg, batch, planned.record_positions);
                for (size_t i = 0; i < planned.gold_ids.size(); ++i) {
                    targets.push_back(
                        tls_smooth(planned.gold_ids[i], job.smoothing.lambda, refs[i]));
                }
            }
            loss = se_loss(targets, preds);
        }
        double loss_value = static_cast<double>(loss.item());
        if (!std::isfinite(loss_value)) {
            throw NumericError("run_training: loss not finite at step " + std::to_string(step));
        }
        params.zero_grad();
        backward(loss);
        double lr = lr_schedule(step, base_lr, job.train.warmup_steps, total_steps);
        adamw_step(params, opt, lr, job.train);

        if (step % job.train.log_interval == 0 || step == total_steps) {
            double elapsed =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            StepLog row;
            row.step = step;
            row.loss = loss_value;
            row.lr = lr;
            row.selected_tokens = static_cast<int64_t>(planned.gold_ids.size());
            row.seconds = job.train.log_timing ? elapsed : 0.0;
            report.rows.push_back(row);
            std::fprintf(stderr, "[%s] step %lld/%lld loss %.4f lr %.2e (%.1fs)\n",
                         job.tag.c_str(), static_cast<long long>(step),
                         static_cast<long long>(total_steps), loss_value, lr, elapsed);
        }
        bool cadence = job.train.checkpoint_interval > 0 &&
                       step % job.train.checkpoint_interval == 0;
        if (cadence || step == total_steps) {
            std::filesystem::path ckpt = job.out_dir / checkpoint_name(job.tag, step);
            save_checkpoint(params, mcfg, opt.to_tensors(params), ckpt);
            report.final_checkpoint = ckpt;
        }
    }
    report.metrics_csv = job.out_dir / ("metrics_" + job.tag + ".csv");
    report.write_csv(report.metrics_csv);
    return report;
}

std::vector<SelectionRow> build_selection(const ParameterStore& frozen, const ModelConfig& mcfg,
                                          const std::vector<SentenceRecord>& records,
                                          const Vocab& vocab, const SelectionConfig& sel_cfg,
                                          int64_t batch_size, uint64_t seed,
                                          const std::string& snapshot_id) {
    std::vector<TokenScores> scores =
        score_corpus(frozen, mcfg, records, batch_size, mcfg.max_seq_len, snapshot_id);
    const char* metric_label = sel_cfg.metric == SelectionMetric::kCorrectness ? "correctness"
                               : sel_cfg.metric == SelectionMetric::kConfidence ? "confidence"
                                                                                : "random";
    std::vector<SelectionRow> rows;
    for (size_t i = 0; i < records.size(); ++i) {
        const SentenceRecord& rec = records[i];
        Selection sel = select_hard_tokens(scores[i], sel_cfg,
                                           derive_seed(seed, "fallback",
                                                       static_cast<uint64_t>(rec.line_index)));
        const char* label =
            sel.branch == SelectionBranch::kFallback ? "fallback" : metric_label;
        for (int32_t pos : sel.positions) {
            SelectionRow row;
            row.line_index = rec.line_index;
            row.position = pos;
            row.token = vocab.token_of(rec.ids[static_cast<size_t>(pos)]);
            row.loss = scores[i].loss[static_cast<size_t>(pos)];
            row.entropy = scores[i].entropy[static_cast<size_t>(pos)];
            row.selected_by = label;
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

TrainReport train_mlm_baseline(ParameterStore& params, const ModelConfig& mcfg,
                               const std::vector<SentenceRecord>& records, const Vocab& vocab,
                               const TrainConfig& tcfg, const MaskingConfig& masking,
                               const std::filesystem::path& out_dir, const std::string& tag,
                               const PmiTable* pmi, const AnnotationMap* annotations) {
    TrainJob job;
    job.train = tcfg;
    job.masking = masking;
    job.smoothing.mode = SmoothingMode::kNone;
    job.out_dir = out_dir;
    job.tag = tag;
    job.annotations = annotations;

    PmiTable local_pmi;
    SelectionMap selmap;
    if (masking.kind == MaskStrategyKind::kPmi) {
        if (pmi) {
            job.pmi = pmi;
        } else {
            local_pmi = compute_pmi_table(records, masking.pmi_min_count);
            job.pmi = &local_pmi;
        }
    }
    if (masking.kind == MaskStrategyKind::kSelfQuestioning) {
        std::filesystem::create_directories(out_dir);
        std::vector<SelectionRow> rows =
            build_selection(params, mcfg, records, vocab, masking.selection, tcfg.batch_size,
                            derive_seed(tcfg.seed, "select", 0), tag);
        write_selection_csv(out_dir / ("sel_" + tag + ".csv"), rows);
        selmap = selection_map(rows);
        job.selection = &selmap;
    }
    return run_training(params, mcfg, records, vocab, job);
}

SEIterationResult se_iteration(ParameterStore& params, const ModelConfig& mcfg,
                               const std::vector<SentenceRecord>& records, const Vocab& vocab,
                               const SERunConfig& cfg, int64_t iteration,
                               const std::filesystem::path& out_dir) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);

    // stage 1: freeze, score, select, persist
    ParameterStore snapshot = params.deep_copy();
    std::vector<SelectionRow> rows = build_selection(
        snapshot, mcfg, records, vocab, cfg.selection, cfg.train.batch_size,
        derive_seed(cfg.train.seed, "select", static_cast<uint64_t>(iteration)),
        "iter" + std::to_string(iteration));
    std::filesystem::path sel_csv = out_dir / ("sel_iter" + std::to_string(iteration) + ".csv");
    write_selection_csv(sel_csv, rows);
    SelectionMap selmap = selection_map(rows);

    // stage 2: continued training on the selected plans at base_lr / divisor
    TrainJob job;
    job.train = cfg.train;
    job.train.seed = derive_seed(cfg.train.seed, "se_train", static_cast<uint64_t>(iteration));
    job.masking = cfg.masking;
    job.masking.kind = MaskStrategyKind::kSelfQuestioning;
    job.masking.selection = cfg.selection;
    job.smoothing = cfg.smoothing;
    job.out_dir = out_dir;
    job.tag = "se_iter" + std::to_string(iteration);
    job.lr_scale = 1.0 / cfg.train.continued_lr_divisor;
    job.default_epochs = 2;
    job.selection = &selmap;
    job.reference_snapshot = &snapshot;

    SEIterationResult result;
    result.report = run_training(params, mcfg, records, vocab, job);
    result.selection_csv = sel_csv;
    result.selected_tokens = static_cast<int64_t>(rows.size());
    return result;
}

std::vector<SEIterationResult> run_se(ParameterStore& params, const ModelConfig& mcfg,
                                      const std::vector<SentenceRecord>& records,
                                      const Vocab& vocab, const SERunConfig& cfg,
                                      const std::filesystem::path& out_dir) {
    cfg.validate();
    std::vector<SEIterationResult> results;
    for (int64_t k = 1; k <= cfg.iterations; ++k) {
        results.push_back(se_iteration(params, mcfg, records, vocab, cfg, k, out_dir));
    }
    return results;
}

}  // namespace sept
