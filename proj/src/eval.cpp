#include "sept/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace sept {

namespace {

struct Accumulator {
    KahanSum loss;
    KahanSum entropy;
    int64_t correct = 0;
    int64_t count = 0;

    void add(const std::vector<float>& p, int32_t gold) {
        double lp = std::max(static_cast<double>(p[static_cast<size_t>(gold)]), kProbFloor);
        loss.add(-std::log(lp));
        double e = 0.0;
        size_t argmax = 0;
        for (size_t v = 0; v < p.size(); ++v) {
            double d = static_cast<double>(p[v]);
            if (d > 0.0) e -= d * std::log(d);
            if (p[v] > p[argmax]) argmax = v;
        }
        entropy.add(e);
        if (static_cast<int32_t>(argmax) == gold) ++correct;
        ++count;
    }
};

/// Evaluates CE/accuracy/entropy over explicit masked positions of a batch.
void eval_positions(const ParameterStore& params, const ModelConfig& cfg, const Batch& clean,
                    const std::vector<MaskPlan>& plans, Accumulator& acc) {
    PlannedBatch planned = apply_plans(clean, plans);
    if (planned.gold_ids.empty()) return;
    NoGradGuard ng;
    EncoderOutput enc = forward(params, cfg, planned.corrupted, {});
    Tensor probs = softmax_rows(logits_at(params, enc, planned.flat_positions));
    int64_t v = cfg.vocab_size;
    std::vector<float> row(static_cast<size_t>(v));
    for (size_t i = 0; i < planned.gold_ids.size(); ++i) {
        const float* src = probs.data().data() + static_cast<int64_t>(i) * v;
        row.assign(src, src + v);
        acc.add(row, planned.gold_ids[i]);
    }
}

}  // namespace

EvalReport evaluate(const ParameterStore& params, const ModelConfig& cfg,
                    const std::vector<SentenceRecord>& heldout, double mask_rate, uint64_t seed,
                    const SelectionMap* hard_set, int64_t batch_size) {
    if (heldout.empty()) throw UsageError("evaluate: empty heldout corpus");
    if (batch_size < 1) throw UsageError("evaluate: batch_size must be >= 1");

    Accumulator overall;
    Accumulator hard;
    for (size_t start = 0; start < heldout.size(); start += static_cast<size_t>(batch_size)) {
        size_t end = std::min(heldout.size(), start + static_cast<size_t>(batch_size));
        std::vector<size_t> which;
        for (size_t i = start; i < end; ++i) which.push_back(i);
        Batch batch = make_batch(heldout, which, cfg.max_seq_len);

        std::vector<MaskPlan> plans;
        for (int64_t r = 0; r < batch.rows; ++r) {
            const SentenceRecord& rec = heldout[which[static_cast<size_t>(r)]];
            plans.push_back(random_mask(
                rec, batch.lengths[static_cast<size_t>(r)], mask_rate,
                derive_seed(seed, "evalmask", static_cast<uint64_t>(rec.line_index)),
                cfg.vocab_size, /*pure_mask=*/true));
        }
        eval_positions(params, cfg, batch, plans, overall);

        if (hard_set) {
            std::vector<MaskPlan> hard_plans(static_cast<size_t>(batch.rows));
            for (int64_t r = 0; r < batch.rows; ++r) {
                const SentenceRecord& rec = heldout[which[static_cast<size_t>(r)]];
                auto it = hard_set->find(rec.line_index);
                if (it == hard_set->end()) continue;
                std::vector<int32_t> positions;
                for (int32_t p : it->second) {
                    if (p < batch.lengths[static_cast<size_t>(r)]) positions.push_back(p);
                }
                if (positions.empty()) continue;
                hard_plans[static_cast<size_t>(r)] =
                    plan_from_selection(rec, positions, 0, cfg.vocab_size, /*pure_mask=*/true);
            }
            eval_positions(params, cfg, batch, hard_plans, hard);
        }
    }

    EvalReport report;
    report.positions = overall.count;
    if (overall.count > 0) {
        report.mean_loss = overall.loss.value() / static_cast<double>(overall.count);
        report.top1_accuracy =
            static_cast<double>(overall.correct) / static_cast<double>(overall.count);
        report.mean_entropy = overall.entropy.value() / static_cast<double>(overall.count);
    }
    if (hard_set) {
        report.has_hard = true;
        report.hard_positions = hard.count;
        if (hard.count > 0) {
            report.hard_mean_loss = hard.loss.value() / static_cast<double>(hard.count);
            report.hard_top1_accuracy =
                static_cast<double>(hard.correct) / static_cast<double>(hard.count);
            report.hard_mean_entropy = hard.entropy.value() / static_cast<double>(hard.count);
        }
    }
    return report;
}

std::string EvalReport::to_csv() const {
    std::ostringstream out;
    out << "metric,value\n";
    out << "mean_loss," << fmt_float(mean_loss) << '\n';
    out << "top1_accuracy," << fmt_float(top1_accuracy) << '\n';
    out << "mean_entropy," << fmt_float(mean_entropy) << '\n';
    out << "positions," << positions << '\n';
    if (has_hard) {
        out << "hard_mean_loss," << fmt_float(hard_mean_loss) << '\n';
        out << "hard_top1_accuracy," << fmt_float(hard_top1_accuracy) << '\n';
        out << "hard_mean_entropy," << fmt_float(hard_mean_entropy) << '\n';
        out << "hard_positions," << hard_positions << '\n';
    }
    return out.str();
}

void EvalReport::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("eval report: cannot write " + path.string());
    out << to_csv();
}

ClozeCase cloze(const ParameterStore& params, const ModelConfig& cfg, const Vocab& vocab,
                const std::string& text, int64_t k) {
    if (k < 1) throw UsageError("cloze: k must be >= 1");
    std::istringstream iss(text);
    std::string raw;
    std::vector<int32_t> ids;
    std::vector<int64_t> slot_positions;
    while (iss >> raw) {
        if (raw == "[MASK]") {
            slot_positions.push_back(static_cast<int64_t>(ids.size()));
            ids.push_back(kMaskId);
        } else {
            std::string low = raw;
            for (char& c : low) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            ids.push_back(vocab.id_of(low));
        }
    }
    if (slot_positions.empty()) throw UsageError("cloze: text contains no [MASK] slot");
    if (static_cast<int64_t>(ids.size()) > cfg.max_seq_len - 2) {
        throw UsageError("cloze: text longer than max_seq_len-2 tokens");
    }

    // frame by hand: the record already carries a special ([MASK])
    Batch batch;
    batch.rows = 1;
    batch.cols = static_cast<int64_t>(ids.size()) + 2;
    batch.ids.assign(static_cast<size_t>(batch.cols), kPadId);
    batch.attention.assign(static_cast<size_t>(batch.cols), 1.0f);
    batch.lengths = {static_cast<int32_t>(ids.size())};
    batch.lines = {0};
    batch.ids[0] = kClsId;
    for (size_t i = 0; i < ids.size(); ++i) batch.ids[i + 1] = ids[i];
    batch.ids[ids.size() + 1] = kSepId;

    NoGradGuard ng;
    EncoderOutput enc = forward(params, cfg, batch, {});
    std::vector<int64_t> flats;
    for (int64_t p : slot_positions) flats.push_back(p + 1);
    Tensor probs = softmax_rows(logits_at(params, enc, flats));

    int64_t kk = std::min<int64_t>(k, cfg.vocab_size);
    ClozeCase out;
    out.text = text;
    for (size_t s = 0; s < slot_positions.size(); ++s) {
        const float* row = probs.data().data() + static_cast<int64_t>(s) * cfg.vocab_size;
        std::vector<int32_t> order(static_cast<size_t>(cfg.vocab_size));
        for (int32_t v = 0; v < cfg.vocab_size; ++v) order[static_cast<size_t>(v)] = v;
        std::partial_sort(order.begin(), order.begin() + kk, order.end(),
                          [row](int32_t a, int32_t b) {
                              float pa = row[a], pb = row[b];
                              if (pa != pb) return pa > pb;
                              return a < b;
                          });
        ClozeSlot slot;
        slot.position = slot_positions[s];
        for (int64_t i = 0; i < kk; ++i) {
            int32_t v = order[static_cast<size_t>(i)];
            slot.topk.emplace_back(vocab.token_of(v), static_cast<double>(row[v]));
        }
        out.slots.push_back(std::move(slot));
    }
    return out;
}

OverlapReport divergence_from_counts(const std::map<std::string, int64_t>& counts_p1,
                                     const std::map<std::string, int64_t>& counts_p2) {
    if (counts_p1.empty() || counts_p2.empty()) {
        throw UsageError("selection_overlap: empty selection");
    }
    constexpr double kEps = 1e-10;

    std::map<std::string, std::pair<int64_t, int64_t>> merged;
    int64_t total1 = 0, total2 = 0;
    for (const auto& [token, c] : counts_p1) {
        merged[token].first += c;
        total1 += c;
    }
    for (const auto& [token, c] : counts_p2) {
        merged[token].second += c;
        total2 += c;
    }
    size_t u = merged.size();
    double denom = 1.0 + static_cast<double>(u) * kEps;

    std::vector<double> p(u), q(u);
    size_t i = 0;
    for (const auto& [token, cs] : merged) {
        p[i] = (static_cast<double>(cs.first) / static_cast<double>(total1) + kEps) / denom;
        q[i] = (static_cast<double>(cs.second) / static_cast<double>(total2) + kEps) / denom;
        ++i;
    }

    KahanSum kl_pq, kl_qp, js_p, js_q;
    for (size_t j = 0; j < u; ++j) {
        double m = 0.5 * (p[j] + q[j]);
        kl_pq.add(p[j] * std::log(p[j] / q[j]));
        kl_qp.add(q[j] * std::log(q[j] / p[j]));
        js_p.add(p[j] * std::log(p[j] / m));
        js_q.add(q[j] * std::log(q[j] / m));
    }
    OverlapReport rep;
    rep.js = 0.5 * js_p.value() + 0.5 * js_q.value();
    rep.kl_p1_p2 = kl_pq.value();  // KL(P1 || P2)
    rep.kl_p2_p1 = kl_qp.value();  // KL(P2 || P1)
    rep.support_size_p1 = static_cast<int64_t>(counts_p1.size());
    rep.support_size_p2 = static_cast<int64_t>(counts_p2.size());
    return rep;
}

OverlapReport selection_overlap(const std::filesystem::path& sel_p1,
                                const std::filesystem::path& sel_p2) {
    auto count_tokens = [](const std::filesystem::path& path) {
        std::map<std::string, int64_t> counts;
        for (const SelectionRow& row : read_selection_csv(path)) ++counts[row.token];
        if (counts.empty()) throw UsageError("selection_overlap: no rows in " + path.string());
        return counts;
    };
    return divergence_from_counts(count_tokens(sel_p1), count_tokens(sel_p2));
}

std::string OverlapReport::to_csv() const {
    std::ostringstream out;
    out << "metric,value\n";
    out << "js," << fmt_float(js) << '\n';
    out << "kl_p2_p1," << fmt_float(kl_p2_p1) << '\n';
    out << "kl_p1_p2," << fmt_float(kl_p1_p2) << '\n';
    out << "support_size_p1," << support_size_p1 << '\n';
    out << "support_size_p2," << support_size_p2 << '\n';
    return out.str();
}

void OverlapReport::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("overlap report: cannot write " + path.string());
    out << to_csv();
}

ParameterStore random_direction_endpoint(const ParameterStore& a, uint64_t seed) {
    Rng rng(derive_seed(seed, "direction"));
    ParameterStore out;
    for (const auto& [name, t] : a.items()) {
        std::vector<float> delta(t.data().size());
        for (float& v : delta) v = static_cast<float>(rng.normal());
        // filter normalization: rescale each dim-0 row to the norm of A's row
        int64_t rows = t.rank() >= 2 ? t.dim(0) : 1;
        int64_t row_len = t.numel() / rows;
        for (int64_t r = 0; r < rows; ++r) {
            const float* ar = t.data().data() + r * row_len;
            float* dr = delta.data() + r * row_len;
            double an = 0.0, dn = 0.0;
            for (int64_t j = 0; j < row_len; ++j) {
                an += static_cast<double>(ar[j]) * ar[j];
                dn += static_cast<double>(dr[j]) * dr[j];
            }
            double scale = dn > 0.0 ? std::sqrt(an / dn) : 0.0;
            for (int64_t j = 0; j < row_len; ++j) {
                dr[j] = static_cast<float>(ar[j] + dr[j] * scale);
            }
        }
        out.add(name, Tensor(t.shape(), std::move(delta)));
    }
    return out;
}

std::vector<std::pair<double, double>> loss_interpolation_1d(
    const ParameterStore& a, const ParameterStore& d, const ModelConfig& cfg,
    const std::vector<SentenceRecord>& heldout, double mask_rate, uint64_t eval_seed,
    int64_t points, int64_t batch_size) {
    if (points < 2) throw UsageError("loss_interpolation_1d: need at least 2 points");
    if (a.size() != d.size()) {
        throw FormatError("loss_interpolation_1d: parameter sets differ in size");
    }
    for (const auto& [name, ta] : a.items()) {
        if (!d.has(name) || d.at(name).shape() != ta.shape()) {
            throw FormatError("loss_interpolation_1d: endpoint shape mismatch at " + name);
        }
    }
    std::vector<std::pair<double, double>> curve;
    for (int64_t i = 0; i < points; ++i) {
        double alpha = -0.5 + 2.0 * static_cast<double>(i) / static_cast<double>(points - 1);
        ParameterStore blend;
        for (const auto& [name, ta] : a.items()) {
            const Tensor& td = d.at(name);
            std::vector<float> data(ta.data().size());
            for (size_t j = 0; j < data.size(); ++j) {
                data[j] = static_cast<float>((1.0 - alpha) * static_cast<double>(ta.data()[j]) +
                                             alpha * static_cast<double>(td.data()[j]));
            }
            blend.add(name, Tensor(ta.shape(), std::move(data)));
        }
        EvalReport rep = evaluate(blend, cfg, heldout, mask_rate, eval_seed, nullptr, batch_size);
        curve.emplace_back(alpha, rep.mean_loss);
    }
    return curve;
}

void write_interpolation_csv(const std::filesystem::path& path,
                             const std::vector<std::pair<double, double>>& curve) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("interpolation: cannot write " + path.string());
    out << "alpha,loss\n";
    for (const auto& [alpha, loss] : curve) {
        out << fmt_float(alpha) << ',' << fmt_float(loss) << '\n';
    }
}

}  // namespace sept
