#include "sept/runconfig.hpp"

#include <fstream>
#include <sstream>

namespace sept {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

int64_t to_int(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        int64_t x = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw UsageError("config key \"" + key + "\": expected an integer, got \"" + v + "\"");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw UsageError("config key \"" + key + "\": expected a number, got \"" + v + "\"");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw UsageError("config key \"" + key + "\": expected a boolean, got \"" + v + "\"");
}

SelectionMetric to_metric(const std::string& key, const std::string& v) {
    if (v == "correctness") return SelectionMetric::kCorrectness;
    if (v == "confidence") return SelectionMetric::kConfidence;
    if (v == "random") return SelectionMetric::kRandom;
    throw UsageError("config key \"" + key + "\": expected correctness|confidence|random");
}

SmoothingMode to_smoothing(const std::string& key, const std::string& v) {
    if (v == "none") return SmoothingMode::kNone;
    if (v == "uniform") return SmoothingMode::kUniform;
    if (v == "tls") return SmoothingMode::kTls;
    throw UsageError("config key \"" + key + "\": expected none|uniform|tls");
}

ReferenceSource to_reference(const std::string& key, const std::string& v) {
    if (v == "current") return ReferenceSource::kCurrent;
    if (v == "snapshot") return ReferenceSource::kSnapshot;
    throw UsageError("config key \"" + key + "\": expected current|snapshot");
}

}  // namespace

void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "seed") {
        cfg.seed = static_cast<uint64_t>(to_int(key, value));
    } else if (key == "paths.corpus") {
        cfg.corpus = value;
    } else if (key == "paths.heldout") {
        cfg.heldout = value;
    } else if (key == "paths.vocab") {
        cfg.vocab = value;
    } else if (key == "paths.out_dir") {
        cfg.out_dir = value;
    } else if (key == "paths.annotations") {
        cfg.annotations = value;
    } else if (key == "paths.pmi_cache") {
        cfg.pmi_cache = value;
    } else if (key == "paths.init_checkpoint") {
        cfg.init_checkpoint = value;
    } else if (key == "model.hidden") {
        cfg.model.hidden = to_int(key, value);
    } else if (key == "model.layers") {
        cfg.model.layers = to_int(key, value);
    } else if (key == "model.heads") {
        cfg.model.heads = to_int(key, value);
    } else if (key == "model.ffn") {
        cfg.model.ffn = to_int(key, value);
    } else if (key == "model.max_seq_len") {
        cfg.model.max_seq_len = to_int(key, value);
    } else if (key == "model.dropout") {
        cfg.model.dropout = to_double(key, value);
    } else if (key == "train.steps") {
        cfg.train.steps = to_int(key, value);
    } else if (key == "train.epochs") {
        cfg.train.epochs = to_int(key, value);
    } else if (key == "train.batch_size") {
        cfg.train.batch_size = to_int(key, value);
    } else if (key == "train.lr") {
        cfg.train.lr = to_double(key, value);
    } else if (key == "train.warmup_steps") {
        cfg.train.warmup_steps = to_int(key, value);
    } else if (key == "train.weight_decay") {
        cfg.train.weight_decay = to_double(key, value);
    } else if (key == "train.beta1") {
        cfg.train.beta1 = to_double(key, value);
    } else if (key == "train.beta2") {
        cfg.train.beta2 = to_double(key, value);
    } else if (key == "train.adam_eps") {
        cfg.train.adam_eps = to_double(key, value);
    } else if (key == "train.clip_norm") {
        cfg.train.clip_norm = to_double(key, value);
    } else if (key == "train.continued_lr_divisor") {
        cfg.train.continued_lr_divisor = to_double(key, value);
    } else if (key == "train.checkpoint_interval") {
        cfg.train.checkpoint_interval = to_int(key, value);
    } else if (key == "train.log_interval") {
        cfg.train.log_interval = to_int(key, value);
    } else if (key == "train.log_timing") {
        cfg.train.log_timing = to_bool(key, value);
    } else if (key == "mask.strategy") {
        cfg.strategy = value;
        cfg.masking.kind = parse_strategy(value);
    } else if (key == "mask.rate") {
        cfg.masking.rate = to_double(key, value);
    } else if (key == "mask.geometric_p") {
        cfg.masking.geometric_p = to_double(key, value);
    } else if (key == "mask.max_span") {
        cfg.masking.max_span = static_cast<int32_t>(to_int(key, value));
    } else if (key == "mask.budget") {
        cfg.masking.budget = to_double(key, value);
    } else if (key == "mask.top_quantile") {
        cfg.masking.top_quantile = to_double(key, value);
    } else if (key == "mask.pmi_min_count") {
        cfg.masking.pmi_min_count = to_int(key, value);
    } else if (key == "mask.pure_mask") {
        cfg.masking.pure_mask = to_bool(key, value);
    } else if (key == "mask.masked_scoring") {
        cfg.masking.masked_scoring = to_bool(key, value);
    } else if (key == "select.metric") {
        cfg.masking.selection.metric = to_metric(key, value);
    } else if (key == "select.loss_threshold") {
        cfg.masking.selection.loss_threshold = to_double(key, value);
    } else if (key == "select.entropy_threshold") {
        cfg.masking.selection.entropy_threshold = to_double(key, value);
    } else if (key == "select.fallback_rate") {
        cfg.masking.selection.fallback_rate = to_double(key, value);
    } else if (key == "select.max_mask_fraction") {
        cfg.masking.selection.max_mask_fraction = to_double(key, value);
    } else if (key == "smooth.mode") {
        cfg.smoothing.mode = to_smoothing(key, value);
    } else if (key == "smooth.lambda") {
        cfg.smoothing.lambda = to_double(key, value);
    } else if (key == "smooth.reference") {
        cfg.smoothing.reference = to_reference(key, value);
    } else if (key == "se.iterations") {
        cfg.se_iterations = to_int(key, value);
    } else {
        throw UsageError("unknown config key \"" + key + "\"");
    }
    cfg.present.insert(key);
}

RunConfig parse_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("config: cannot read " + path.string());
    RunConfig cfg;
    std::string line;
    int64_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw UsageError("config " + path.string() + " line " + std::to_string(row) +
                             ": expected key = value");
        }
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (key.empty()) {
            throw UsageError("config " + path.string() + " line " + std::to_string(row) +
                             ": empty key");
        }
        apply_config_entry(cfg, key, value);
    }
    if (!cfg.heldout.empty() && cfg.heldout == cfg.corpus) {
        throw UsageError("config: paths.heldout must differ from paths.corpus");
    }
    return cfg;
}

void write_resolved_config(const RunConfig& cfg, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("resolved config: cannot write " + path.string());
    auto emit = [&](const std::string& key, const std::string& value) {
        out << key << " = " << value << '\n';
    };
    emit("seed", std::to_string(cfg.seed));
    emit("paths.corpus", cfg.corpus.string());
    emit("paths.heldout", cfg.heldout.string());
    emit("paths.vocab", cfg.vocab.string());
    emit("paths.out_dir", cfg.out_dir.string());
    emit("paths.annotations", cfg.annotations.string());
    emit("paths.pmi_cache", cfg.pmi_cache.string());
    emit("paths.init_checkpoint", cfg.init_checkpoint.string());
    emit("model.hidden", std::to_string(cfg.model.hidden));
    emit("model.layers", std::to_string(cfg.model.layers));
    emit("model.heads", std::to_string(cfg.model.heads));
    emit("model.ffn", std::to_string(cfg.model.ffn));
    emit("model.max_seq_len", std::to_string(cfg.model.max_seq_len));
    emit("model.dropout", fmt_float(cfg.model.dropout));
    emit("train.steps", std::to_string(cfg.train.steps));
    emit("train.epochs", std::to_string(cfg.train.epochs));
    emit("train.batch_size", std::to_string(cfg.train.batch_size));
    emit("train.lr", fmt_float(cfg.train.lr));
    emit("train.warmup_steps", std::to_string(cfg.train.warmup_steps));
    emit("train.weight_decay", fmt_float(cfg.train.weight_decay));
    emit("train.beta1", fmt_float(cfg.train.beta1));
    emit("train.beta2", fmt_float(cfg.train.beta2));
    emit("train.adam_eps", fmt_float(cfg.train.adam_eps));
    emit("train.clip_norm", fmt_float(cfg.train.clip_norm));
    emit("train.continued_lr_divisor", fmt_float(cfg.train.continued_lr_divisor));
    emit("train.checkpoint_interval", std::to_string(cfg.train.checkpoint_interval));
    emit("train.log_interval", std::to_string(cfg.train.log_interval));
    emit("train.log_timing", cfg.train.log_timing ? "true" : "false");
    emit("mask.strategy", cfg.strategy);
    emit("mask.rate", fmt_float(cfg.masking.rate));
    emit("mask.geometric_p", fmt_float(cfg.masking.geometric_p));
    emit("mask.max_span", std::to_string(cfg.masking.max_span));
    emit("mask.budget", fmt_float(cfg.masking.budget));
    emit("mask.top_quantile", fmt_float(cfg.masking.top_quantile));
    emit("mask.pmi_min_count", std::to_string(cfg.masking.pmi_min_count));
    emit("mask.pure_mask", cfg.masking.pure_mask ? "true" : "false");
    emit("mask.masked_scoring", cfg.masking.masked_scoring ? "true" : "false");
    const SelectionConfig& sel = cfg.masking.selection;
    emit("select.metric", sel.metric == SelectionMetric::kCorrectness  ? "correctness"
                          : sel.metric == SelectionMetric::kConfidence ? "confidence"
                                                                       : "random");
    emit("select.loss_threshold", fmt_float(sel.loss_threshold));
    emit("select.entropy_threshold", fmt_float(sel.entropy_threshold));
    emit("select.fallback_rate", fmt_float(sel.fallback_rate));
    emit("select.max_mask_fraction", fmt_float(sel.max_mask_fraction));
    emit("smooth.mode", cfg.smoothing.mode == SmoothingMode::kNone      ? "none"
                        : cfg.smoothing.mode == SmoothingMode::kUniform ? "uniform"
                                                                        : "tls");
    emit("smooth.lambda", fmt_float(cfg.smoothing.lambda));
    emit("smooth.reference",
         cfg.smoothing.reference == ReferenceSource::kCurrent ? "current" : "snapshot");
    emit("se.iterations", std::to_string(cfg.se_iterations));
}

}  // namespace sept
