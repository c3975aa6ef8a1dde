#include "sept/masking.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace sept {

void SelectionConfig::validate() const {
    if (loss_threshold < 0.0 || entropy_threshold < 0.0) {
        throw UsageError("selection config: thresholds must be >= 0");
    }
    if (!(fallback_rate > 0.0 && fallback_rate <= max_mask_fraction && max_mask_fraction <= 1.0)) {
        throw UsageError("selection config: need 0 < fallback_rate <= max_mask_fraction <= 1");
    }
}

namespace {

int64_t clamp_effective(const SentenceRecord& rec, int64_t effective_len) {
    int64_t n = static_cast<int64_t>(rec.ids.size());
    if (effective_len <= 0 || effective_len > n) effective_len = n;
    return effective_len;
}

int32_t draw_replacement(Rng& rng, int32_t vocab_size) {
    // 10% random replacement draws from the non-special vocabulary
    return kNumSpecials + static_cast<int32_t>(rng.uniform_int(vocab_size - kNumSpecials));
}

MaskAction draw_action(Rng& rng, bool pure_mask) {
    if (pure_mask) return MaskAction::kMask;
    double u = rng.uniform();
    if (u < 0.8) return MaskAction::kMask;
    if (u < 0.9) return MaskAction::kRandom;
    return MaskAction::kKeep;
}

/// Builds plan entries for ascending positions with per-position actions.
MaskPlan assemble_plan(const SentenceRecord& rec, const std::vector<int32_t>& positions, Rng& rng,
                       int32_t vocab_size, bool pure_mask) {
    MaskPlan plan;
    plan.tokens.reserve(positions.size());
    for (int32_t pos : positions) {
        MaskedToken t;
        t.position = pos;
        t.gold_id = rec.ids[static_cast<size_t>(pos)];
        t.action = draw_action(rng, pure_mask);
        t.replacement_id = t.action == MaskAction::kRandom ? draw_replacement(rng, vocab_size) : 0;
        plan.tokens.push_back(t);
    }
    return plan;
}

/// Same but one shared action kind per span (replacements still per token).
void append_span(MaskPlan& plan, const SentenceRecord& rec, int32_t start, int32_t len, Rng& rng,
                 int32_t vocab_size, bool pure_mask) {
    MaskAction action = draw_action(rng, pure_mask);
    for (int32_t j = 0; j < len; ++j) {
        MaskedToken t;
        t.position = start + j;
        t.gold_id = rec.ids[static_cast<size_t>(t.position)];
        t.action = action;
        t.replacement_id = action == MaskAction::kRandom ? draw_replacement(rng, vocab_size) : 0;
        plan.tokens.push_back(t);
    }
}

void sort_plan(MaskPlan& plan) {
    std::sort(plan.tokens.begin(), plan.tokens.end(),
              [](const MaskedToken& a, const MaskedToken& b) { return a.position < b.position; });
}

int64_t budget_target(int64_t n, double budget) {
    return std::max<int64_t>(1, static_cast<int64_t>(std::ceil(budget * static_cast<double>(n) - 1e-9)));
}

/// Uniform fill from the unselected positions until `target` are covered.
void random_fill(std::vector<int32_t>& selected, std::vector<bool>& taken, int64_t n,
                 int64_t target, Rng& rng) {
    std::vector<int32_t> free_pos;
    for (int64_t i = 0; i < n; ++i) {
        if (!taken[static_cast<size_t>(i)]) free_pos.push_back(static_cast<int32_t>(i));
    }
    rng.shuffle(free_pos);
    for (int32_t p : free_pos) {
        if (static_cast<int64_t>(selected.size()) >= target) break;
        selected.push_back(p);
        taken[static_cast<size_t>(p)] = true;
    }
}

}  // namespace

std::vector<int32_t> random_positions(int64_t n, double rate, Rng& rng) {
    std::vector<int32_t> out;
    for (int64_t i = 0; i < n; ++i) {
        if (rng.uniform() < rate) out.push_back(static_cast<int32_t>(i));
    }
    if (!out.empty()) return out;
    // resample once, then take the single max-draw position
    std::vector<double> draws(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        draws[static_cast<size_t>(i)] = rng.uniform();
        if (draws[static_cast<size_t>(i)] < rate) out.push_back(static_cast<int32_t>(i));
    }
    if (!out.empty()) return out;
    int64_t best = 0;
    for (int64_t i = 1; i < n; ++i) {
        if (draws[static_cast<size_t>(i)] > draws[static_cast<size_t>(best)]) best = i;
    }
    out.push_back(static_cast<int32_t>(best));
    return out;
}

MaskPlan random_mask(const SentenceRecord& rec, int64_t effective_len, double rate, uint64_t seed,
                     int32_t vocab_size, bool pure_mask) {
    if (rec.ids.empty()) throw UsageError("random_mask: empty record");
    int64_t n = clamp_effective(rec, effective_len);
    Rng rng(seed);
    std::vector<int32_t> positions = random_positions(n, rate, rng);
    return assemble_plan(rec, positions, rng, vocab_size, pure_mask);
}

int32_t sample_span_length(Rng& rng, double p, int32_t max_span) {
    if (p <= 0.0 || p >= 1.0) throw UsageError("sample_span_length: p must be in (0,1)");
    if (max_span < 1) throw UsageError("sample_span_length: max_span must be >= 1");
    for (;;) {
        double u = rng.uniform();
        int32_t k = 1 + static_cast<int32_t>(std::floor(std::log1p(-u) / std::log1p(-p)));
        if (k >= 1 && k <= max_span) return k;
    }
}

MaskPlan span_mask(const SentenceRecord& rec, int64_t effective_len, double geometric_p,
                   int32_t max_span, double budget, uint64_t seed, int32_t vocab_size,
                   bool pure_mask) {
    if (rec.ids.empty()) throw UsageError("span_mask: empty record");
    int64_t n = clamp_effective(rec, effective_len);
    Rng rng(seed);
    int64_t target = budget_target(n, budget);
    std::vector<bool> taken(static_cast<size_t>(n), false);
    MaskPlan plan;
    int64_t covered = 0;
    int64_t attempts = 0;
    const int64_t max_attempts = 50 * n + 50;
    while (covered < target && attempts < max_attempts) {
        ++attempts;
        int32_t len = std::min<int32_t>(sample_span_length(rng, geometric_p, max_span),
                                        static_cast<int32_t>(n));
        int32_t start = static_cast<int32_t>(rng.uniform_int(n - len + 1));
        bool overlap = false;
        for (int32_t j = 0; j < len; ++j) {
            if (taken[static_cast<size_t>(start + j)]) {
                overlap = true;
                break;
            }
        }
        if (overlap) continue;
        for (int32_t j = 0; j < len; ++j) taken[static_cast<size_t>(start + j)] = true;
        append_span(plan, rec, start, len, rng, vocab_size, pure_mask);
        covered += len;
    }
    // degenerate gaps: finish with singleton spans left to right
    for (int64_t i = 0; i < n && covered < target; ++i) {
        if (taken[static_cast<size_t>(i)]) continue;
        taken[static_cast<size_t>(i)] = true;
        append_span(plan, rec, static_cast<int32_t>(i), 1, rng, vocab_size, pure_mask);
        ++covered;
    }
    sort_plan(plan);
    return plan;
}

std::string PmiTable::key(const int32_t* ids, int n) {
    std::string k = std::to_string(ids[0]);
    for (int i = 1; i < n; ++i) {
        k += ',';
        k += std::to_string(ids[i]);
    }
    return k;
}

PmiTable compute_pmi_table(const std::vector<SentenceRecord>& records, int64_t min_count) {
    if (records.empty()) throw UsageError("compute_pmi_table: empty corpus");
    PmiTable table;
    std::unordered_map<std::string, int64_t> ngram_counts;
    for (const SentenceRecord& rec : records) {
        int64_t n = static_cast<int64_t>(rec.ids.size());
        for (int64_t i = 0; i < n; ++i) {
            ++table.unigram_counts[rec.ids[static_cast<size_t>(i)]];
            ++table.total_tokens;
        }
        for (int len = 2; len <= 3; ++len) {
            for (int64_t i = 0; i + len <= n; ++i) {
                ++ngram_counts[PmiTable::key(rec.ids.data() + i, len)];
            }
        }
    }
    double t = static_cast<double>(table.total_tokens);
    for (const auto& [key, count] : ngram_counts) {
        if (count < min_count) continue;
        // PMI(w1..wn) = ln( count(ngram) * T^(n-1) / prod count(wi) )
        double denom = 1.0;
        int parts = 0;
        std::istringstream iss(key);
        std::string piece;
        while (std::getline(iss, piece, ',')) {
            denom *= static_cast<double>(table.unigram_counts.at(std::stoi(piece)));
            ++parts;
        }
        double pmi = std::log(static_cast<double>(count) * std::pow(t, parts - 1) / denom);
        table.scores[key] = pmi;
    }
    return table;
}

double PmiTable::quantile_threshold(double top_quantile) const {
    if (scores.empty()) return std::numeric_limits<double>::infinity();
    std::vector<double> vals;
    vals.reserve(scores.size());
    for (const auto& [k, v] : scores) vals.push_back(v);
    std::sort(vals.begin(), vals.end(), std::greater<>());
    size_t keep = std::max<size_t>(1, static_cast<size_t>(std::floor(
                                          top_quantile * static_cast<double>(vals.size()))));
    keep = std::min(keep, vals.size());
    return vals[keep - 1];
}

void PmiTable::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("pmi save: cannot write " + path.string());
    out << "total\t" << total_tokens << '\n';
    std::vector<std::pair<int32_t, int64_t>> unis(unigram_counts.begin(), unigram_counts.end());
    std::sort(unis.begin(), unis.end());
    for (const auto& [id, c] : unis) out << "uni\t" << id << '\t' << c << '\n';
    std::vector<std::pair<std::string, double>> items(scores.begin(), scores.end());
    std::sort(items.begin(), items.end());
    for (const auto& [k, v] : items) out << "pmi\t" << k << '\t' << fmt_float(v) << '\n';
}

PmiTable PmiTable::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("pmi load: cannot read " + path.string());
    PmiTable table;
    std::string line;
    int64_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::istringstream iss(line);
        std::string kind;
        if (!std::getline(iss, kind, '\t')) {
            throw FormatError("pmi load: malformed row " + std::to_string(row));
        }
        try {
            if (kind == "total") {
                std::string v;
                std::getline(iss, v);
                table.total_tokens = std::stoll(v);
            } else if (kind == "uni") {
                std::string id, c;
                std::getline(iss, id, '\t');
                std::getline(iss, c);
                table.unigram_counts[std::stoi(id)] = std::stoll(c);
            } else if (kind == "pmi") {
                std::string key, v;
                std::getline(iss, key, '\t');
                std::getline(iss, v);
                table.scores[key] = std::stod(v);
            } else {
                throw FormatError("pmi load: unknown row kind '" + kind + "' at row " +
                                  std::to_string(row));
            }
        } catch (const FormatError&) {
            throw;
        } catch (const std::exception&) {
            throw FormatError("pmi load: malformed row " + std::to_string(row));
        }
    }
    return table;
}

MaskPlan pmi_mask(const SentenceRecord& rec, int64_t effective_len, const PmiTable& table,
                  double top_quantile, double budget, uint64_t seed, int32_t vocab_size,
                  bool pure_mask) {
    if (rec.ids.empty()) throw UsageError("pmi_mask: empty record");
    int64_t n = clamp_effective(rec, effective_len);
    Rng rng(seed);
    int64_t target = budget_target(n, budget);
    double threshold = table.quantile_threshold(top_quantile);

    struct Candidate {
        double pmi;
        int32_t start;
        int32_t len;
    };
    std::vector<Candidate> candidates;
    for (int len = 2; len <= 3; ++len) {
        for (int64_t i = 0; i + len <= n; ++i) {
            auto it = table.scores.find(PmiTable::key(rec.ids.data() + i, len));
            if (it == table.scores.end() || it->second < threshold) continue;
            candidates.push_back({it->second, static_cast<int32_t>(i), static_cast<int32_t>(len)});
        }
    }
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        if (a.pmi != b.pmi) return a.pmi > b.pmi;
        if (a.start != b.start) return a.start < b.start;
        return a.len < b.len;
    });

    std::vector<bool> taken(static_cast<size_t>(n), false);
    std::vector<int32_t> selected;
    MaskPlan plan;
    for (const Candidate& c : candidates) {
        if (static_cast<int64_t>(selected.size()) + c.len > target) continue;
        bool overlap = false;
        for (int32_t j = 0; j < c.len; ++j) {
            if (taken[static_cast<size_t>(c.start + j)]) {
                overlap = true;
                break;
            }
        }
        if (overlap) continue;
        for (int32_t j = 0; j < c.len; ++j) {
            taken[static_cast<size_t>(c.start + j)] = true;
            selected.push_back(c.start + j);
        }
        append_span(plan, rec, c.start, c.len, rng, vocab_size, pure_mask);
    }
    size_t span_selected = selected.size();
    random_fill(selected, taken, n, target, rng);
    for (size_t i = span_selected; i < selected.size(); ++i) {
        append_span(plan, rec, selected[i], 1, rng, vocab_size, pure_mask);
    }
    sort_plan(plan);
    return plan;
}

MaskPlan entity_mask(const SentenceRecord& rec, int64_t effective_len,
                     const std::vector<EntityAnnotation>& spans, double budget, uint64_t seed,
                     int32_t vocab_size, bool pure_mask) {
    if (rec.ids.empty()) throw UsageError("entity_mask: empty record");
    int64_t n = clamp_effective(rec, effective_len);
    Rng rng(seed);
    int64_t target = budget_target(n, budget);

    std::vector<size_t> order(spans.size());
    for (size_t i = 0; i < spans.size(); ++i) order[i] = i;
    rng.shuffle(order);

    std::vector<bool> taken(static_cast<size_t>(n), false);
    std::vector<int32_t> selected;
    MaskPlan plan;
    for (size_t oi : order) {
        if (static_cast<int64_t>(selected.size()) >= target) break;
        const EntityAnnotation& a = spans[oi];
        int32_t start = a.start;
        int32_t end = std::min<int32_t>(a.end, static_cast<int32_t>(n - 1));
        if (start > end) continue;
        // span prefix up to the remaining budget
        int64_t room = target - static_cast<int64_t>(selected.size());
        int32_t len = std::min<int32_t>(end - start + 1, static_cast<int32_t>(room));
        bool overlap = false;
        for (int32_t j = 0; j < len; ++j) {
            if (taken[static_cast<size_t>(start + j)]) {
                overlap = true;
                break;
            }
        }
        if (overlap) continue;
        for (int32_t j = 0; j < len; ++j) {
            taken[static_cast<size_t>(start + j)] = true;
            selected.push_back(start + j);
        }
        append_span(plan, rec, start, len, rng, vocab_size, pure_mask);
    }
    size_t span_selected = selected.size();
    random_fill(selected, taken, n, target, rng);
    for (size_t i = span_selected; i < selected.size(); ++i) {
        append_span(plan, rec, selected[i], 1, rng, vocab_size, pure_mask);
    }
    sort_plan(plan);
    return plan;
}

MaskPlan plan_from_selection(const SentenceRecord& rec, const std::vector<int32_t>& positions,
                             uint64_t seed, int32_t vocab_size, bool pure_mask) {
    Rng rng(seed);
    std::vector<int32_t> sorted = positions;
    std::sort(sorted.begin(), sorted.end());
    for (int32_t p : sorted) {
        if (p < 0 || p >= static_cast<int32_t>(rec.ids.size())) {
            throw UsageError("plan_from_selection: position " + std::to_string(p) +
                             " out of range for line " + std::to_string(rec.line_index));
        }
    }
    return assemble_plan(rec, sorted, rng, vocab_size, pure_mask);
}

std::vector<TokenScores> score_tokens(const ParameterStore& params, const ModelConfig& cfg,
                                      const Batch& batch, const std::string& snapshot_id) {
    NoGradGuard ng;
    std::vector<BatchPosition> positions;
    for (int64_t r = 0; r < batch.rows; ++r) {
        for (int64_t i = 0; i < batch.lengths[static_cast<size_t>(r)]; ++i) {
            positions.emplace_back(r, i);
        }
    }
    std::vector<std::vector<float>> probs = predict_distributions(params, cfg, batch, positions);
    double max_entropy = std::log(static_cast<double>(cfg.vocab_size));

    std::vector<TokenScores> out(static_cast<size_t>(batch.rows));
    for (int64_t r = 0; r < batch.rows; ++r) {
        out[static_cast<size_t>(r)].line_index = batch.lines[static_cast<size_t>(r)];
        out[static_cast<size_t>(r)].snapshot_id = snapshot_id;
    }
    for (size_t k = 0; k < positions.size(); ++k) {
        auto [r, i] = positions[k];
        const std::vector<float>& p = probs[k];
        int32_t gold = batch.id_at(r, i + 1);
        double l = -std::log(std::max(static_cast<double>(p[static_cast<size_t>(gold)]), kProbFloor));
        double e = 0.0;
        for (float pv : p) {
            double d = static_cast<double>(pv);
            if (d > 0.0) e -= d * std::log(d);
        }
        // float accumulation slack can push a uniform row epsilon past ln V
        e = std::clamp(e, 0.0, max_entropy);
        out[static_cast<size_t>(r)].loss.push_back(l);
        out[static_cast<size_t>(r)].entropy.push_back(e);
    }
    return out;
}

std::vector<TokenScores> score_corpus(const ParameterStore& params, const ModelConfig& cfg,
                                      const std::vector<SentenceRecord>& records,
                                      int64_t batch_size, int64_t max_seq_len,
                                      const std::string& snapshot_id) {
    if (batch_size < 1) throw UsageError("score_corpus: batch_size must be >= 1");
    std::vector<TokenScores> out;
    out.reserve(records.size());
    for (size_t start = 0; start < records.size(); start += static_cast<size_t>(batch_size)) {
        size_t end = std::min(records.size(), start + static_cast<size_t>(batch_size));
        std::vector<size_t> which;
        for (size_t i = start; i < end; ++i) which.push_back(i);
        Batch batch = make_batch(records, which, max_seq_len);
        for (TokenScores& s : score_tokens(params, cfg, batch, snapshot_id)) {
            out.push_back(std::move(s));
        }
    }
    return out;
}

Selection select_hard_tokens(const TokenScores& scores, const SelectionConfig& cfg, uint64_t seed) {
    cfg.validate();
    if (scores.loss.size() != scores.entropy.size()) {
        throw UsageError("select_hard_tokens: loss/entropy score lengths differ");
    }
    int64_t n = static_cast<int64_t>(scores.loss.size());
    if (n == 0) throw UsageError("select_hard_tokens: empty scores");
    Rng rng(seed);
    Selection sel;

    if (cfg.metric == SelectionMetric::kRandom) {
        int64_t count = std::max<int64_t>(
            1, static_cast<int64_t>(std::llround(cfg.fallback_rate * static_cast<double>(n))));
        count = std::min(count, n);
        std::vector<int32_t> all(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) all[static_cast<size_t>(i)] = static_cast<int32_t>(i);
        rng.shuffle(all);
        sel.positions.assign(all.begin(), all.begin() + count);
        std::sort(sel.positions.begin(), sel.positions.end());
        sel.branch = SelectionBranch::kRandomMetric;
        sel.threshold_count = count;
        return sel;
    }

    const std::vector<double>& metric =
        cfg.metric == SelectionMetric::kCorrectness ? scores.loss : scores.entropy;
    double threshold = cfg.metric == SelectionMetric::kCorrectness ? cfg.loss_threshold
                                                                   : cfg.entropy_threshold;
    std::vector<int32_t> picked;
    for (int64_t i = 0; i < n; ++i) {
        if (metric[static_cast<size_t>(i)] > threshold) picked.push_back(static_cast<int32_t>(i));
    }
    int64_t cap =
        static_cast<int64_t>(std::floor(cfg.max_mask_fraction * static_cast<double>(n)));
    sel.branch = SelectionBranch::kThreshold;
    if (static_cast<int64_t>(picked.size()) > cap) {
        // keep the highest-scoring cap positions, ties to the lower position
        std::sort(picked.begin(), picked.end(), [&](int32_t a, int32_t b) {
            double sa = metric[static_cast<size_t>(a)], sb = metric[static_cast<size_t>(b)];
            if (sa != sb) return sa > sb;
            return a < b;
        });
        picked.resize(static_cast<size_t>(std::max<int64_t>(cap, 0)));
        std::sort(picked.begin(), picked.end());
        sel.branch = SelectionBranch::kCapped;
    }
    if (picked.empty()) {
        sel.positions = random_positions(n, cfg.fallback_rate, rng);
        sel.branch = SelectionBranch::kFallback;
        sel.threshold_count = 0;
        return sel;
    }
    sel.positions = std::move(picked);
    sel.threshold_count = static_cast<int64_t>(sel.positions.size());
    return sel;
}

void write_selection_csv(const std::filesystem::path& path,
                         const std::vector<SelectionRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("selection csv: cannot write " + path.string());
    out << "line_index,position,token,l_i,e_i,selected_by\n";
    for (const SelectionRow& r : rows) {
        out << r.line_index << ',' << r.position << ',' << r.token << ',' << fmt_float(r.loss)
            << ',' << fmt_float(r.entropy) << ',' << r.selected_by << '\n';
    }
    if (!out) throw IoError("selection csv: write failed for " + path.string());
}

std::vector<SelectionRow> read_selection_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("selection csv: cannot read " + path.string());
    std::vector<SelectionRow> rows;
    std::string line;
    bool first = true;
    int64_t rownum = 0;
    while (std::getline(in, line)) {
        ++rownum;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (first) {
            first = false;
            if (line.rfind("line_index,", 0) == 0) continue;
        }
        // token may itself contain commas: split 2 fields from the left,
        // 3 from the right, the middle is the token
        size_t c1 = line.find(',');
        size_t c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
        size_t c5 = line.rfind(',');
        size_t c4 = c5 == std::string::npos || c5 == 0 ? std::string::npos : line.rfind(',', c5 - 1);
        size_t c3 = c4 == std::string::npos || c4 == 0 ? std::string::npos : line.rfind(',', c4 - 1);
        if (c1 == std::string::npos || c2 == std::string::npos || c3 == std::string::npos ||
            c3 < c2) {
            throw FormatError("selection csv " + path.string() + ": malformed row " +
                              std::to_string(rownum));
        }
        SelectionRow r;
        try {
            r.line_index = std::stoll(line.substr(0, c1));
            r.position = std::stoi(line.substr(c1 + 1, c2 - c1 - 1));
            r.token = line.substr(c2 + 1, c3 - c2 - 1);
            r.loss = std::stod(line.substr(c3 + 1, c4 - c3 - 1));
            r.entropy = std::stod(line.substr(c4 + 1, c5 - c4 - 1));
            r.selected_by = line.substr(c5 + 1);
        } catch (const std::exception&) {
            throw FormatError("selection csv " + path.string() + ": malformed row " +
                              std::to_string(rownum));
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

SelectionMap selection_map(const std::vector<SelectionRow>& rows) {
    SelectionMap map;
    for (const SelectionRow& r : rows) map[r.line_index].push_back(r.position);
    for (auto& [line, positions] : map) std::sort(positions.begin(), positions.end());
    return map;
}

PlannedBatch apply_plans(const Batch& batch, const std::vector<MaskPlan>& plans) {
    if (static_cast<int64_t>(plans.size()) != batch.rows) {
        throw UsageError("apply_plans: need exactly one plan per batch row");
    }
    PlannedBatch out;
    out.corrupted = batch;
    for (int64_t r = 0; r < batch.rows; ++r) {
        int32_t len = batch.lengths[static_cast<size_t>(r)];
        int32_t prev = -1;
        for (const MaskedToken& t : plans[static_cast<size_t>(r)].tokens) {
            if (t.position <= prev) throw UsageError("apply_plans: positions not strictly increasing");
            prev = t.position;
            if (t.position < 0 || t.position >= len) {
                throw UsageError("apply_plans: position " + std::to_string(t.position) +
                                 " outside true length " + std::to_string(len));
            }
            int64_t col = t.position + 1;  // CLS offset
            size_t flat = static_cast<size_t>(r * batch.cols + col);
            if (batch.ids[flat] != t.gold_id) {
                throw UsageError("apply_plans: gold id mismatch at line " +
                                 std::to_string(batch.lines[static_cast<size_t>(r)]) +
                                 " position " + std::to_string(t.position));
            }
            switch (t.action) {
                case MaskAction::kMask:
                    out.corrupted.ids[flat] = kMaskId;
                    break;
                case MaskAction::kRandom:
                    out.corrupted.ids[flat] = t.replacement_id;
                    break;
                case MaskAction::kKeep:
                    break;
            }
            out.flat_positions.push_back(r * batch.cols + col);
            out.gold_ids.push_back(t.gold_id);
            out.record_positions.emplace_back(r, t.position);
        }
    }
    return out;
}

}  // namespace sept
