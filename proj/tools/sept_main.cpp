// sept: a desk-scale MLM pretraining toolkit with self-evolution continued
// training. Subcommands wire corpus -> training -> analysis; see README.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "sept/eval.hpp"
#include "sept/runconfig.hpp"

namespace {

using namespace sept;

ModelConfig model_config_for(const RunConfig& cfg, const Vocab& vocab) {
    ModelConfig mcfg = cfg.model;
    mcfg.vocab_size = vocab.size();
    mcfg.seed = cfg.seed;
    mcfg.validate();
    return mcfg;
}

LoadedCheckpoint load_for_vocab(const std::filesystem::path& path, const Vocab& vocab) {
    LoadedCheckpoint ckpt = load_checkpoint(path);
    if (ckpt.config.vocab_size != vocab.size()) {
        throw FormatError("checkpoint " + path.string() + ": vocab_size " +
                          std::to_string(ckpt.config.vocab_size) + " does not match vocab of " +
                          std::to_string(vocab.size()) + " entries");
    }
    return ckpt;
}

SelectionMap load_selection(const std::filesystem::path& path) {
    return selection_map(read_selection_csv(path));
}

int cmd_build_vocab(const std::string& corpus, const std::string& out, int64_t max_vocab,
                    int64_t min_freq) {
    Vocab vocab = Vocab::build(corpus, max_vocab, min_freq);
    vocab.save(out);
    std::cout << "vocab " << out << " " << vocab.size() << " entries\n";
    return 0;
}

int cmd_pretrain(const std::string& config_path,
                 const std::vector<std::pair<std::string, std::string>>& overrides) {
    RunConfig cfg = parse_config_file(config_path);
    for (const auto& [key, value] : overrides) apply_config_entry(cfg, key, value);
    cfg.require("paths.corpus");
    cfg.require("paths.vocab");
    cfg.require("paths.out_dir");
    cfg.require("train.lr");
    if (!cfg.has("train.steps") && !cfg.has("train.epochs")) {
        throw UsageError("missing config key \"train.steps\" (or \"train.epochs\")");
    }
    cfg.train.seed = cfg.seed;

    Vocab vocab = Vocab::load(cfg.vocab);
    std::vector<SentenceRecord> records = load_corpus(cfg.corpus, vocab);

    ParameterStore params;
    ModelConfig mcfg;
    if (!cfg.init_checkpoint.empty()) {
        LoadedCheckpoint ckpt = load_for_vocab(cfg.init_checkpoint, vocab);
        params = std::move(ckpt.params);
        mcfg = ckpt.config;
        mcfg.seed = cfg.seed;
    } else {
        mcfg = model_config_for(cfg, vocab);
        params = init_params<float>(mcfg);
    }

    PmiTable pmi;
    const PmiTable* pmi_ptr = nullptr;
    if (cfg.masking.kind == MaskStrategyKind::kPmi) {
        if (!cfg.pmi_cache.empty() && std::filesystem::exists(cfg.pmi_cache)) {
            pmi = PmiTable::load(cfg.pmi_cache);
        } else {
            pmi = compute_pmi_table(records, cfg.masking.pmi_min_count);
            if (!cfg.pmi_cache.empty()) pmi.save(cfg.pmi_cache);
        }
        pmi_ptr = &pmi;
    }
    AnnotationMap annotations;
    const AnnotationMap* ann_ptr = nullptr;
    if (cfg.masking.kind == MaskStrategyKind::kEntity) {
        cfg.require("paths.annotations");
        annotations = annotation_map(load_annotations(cfg.annotations, records));
        ann_ptr = &annotations;
    }

    std::filesystem::create_directories(cfg.out_dir);
    write_resolved_config(cfg, cfg.out_dir / "resolved_config.txt");
    TrainReport report = train_mlm_baseline(params, mcfg, records, vocab, cfg.train, cfg.masking,
                                            cfg.out_dir, "pretrain", pmi_ptr, ann_ptr);
    std::cout << "final_checkpoint," << report.final_checkpoint.string() << "\n";
    std::cout << "metrics," << report.metrics_csv.string() << "\n";
    return 0;
}

int cmd_se_train(const std::string& config_path,
                 const std::vector<std::pair<std::string, std::string>>& overrides) {
    RunConfig cfg = parse_config_file(config_path);
    for (const auto& [key, value] : overrides) apply_config_entry(cfg, key, value);
    cfg.require("paths.corpus");
    cfg.require("paths.vocab");
    cfg.require("paths.out_dir");
    cfg.require("paths.init_checkpoint");
    cfg.require("train.lr");
    cfg.train.seed = cfg.seed;

    Vocab vocab = Vocab::load(cfg.vocab);
    std::vector<SentenceRecord> records = load_corpus(cfg.corpus, vocab);
    LoadedCheckpoint ckpt = load_for_vocab(cfg.init_checkpoint, vocab);

    SERunConfig se_cfg;
    se_cfg.iterations = cfg.se_iterations;
    se_cfg.selection = cfg.masking.selection;
    se_cfg.smoothing = cfg.smoothing;
    se_cfg.masking = cfg.masking;
    se_cfg.train = cfg.train;

    std::filesystem::create_directories(cfg.out_dir);
    write_resolved_config(cfg, cfg.out_dir / "resolved_config.txt");
    std::vector<SEIterationResult> results =
        run_se(ckpt.params, ckpt.config, records, vocab, se_cfg, cfg.out_dir);
    for (size_t k = 0; k < results.size(); ++k) {
        std::cout << "iteration," << (k + 1) << ",selected," << results[k].selected_tokens
                  << ",selection_csv," << results[k].selection_csv.string() << ",checkpoint,"
                  << results[k].report.final_checkpoint.string() << "\n";
    }
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& heldout, const std::string& vocab_path,
             const std::string& selection, double mask_rate, uint64_t seed,
             const std::string& out) {
    Vocab vocab = Vocab::load(vocab_path);
    LoadedCheckpoint ckpt = load_for_vocab(checkpoint, vocab);
    std::vector<SentenceRecord> records = load_corpus(heldout, vocab);
    SelectionMap hard;
    const SelectionMap* hard_ptr = nullptr;
    if (!selection.empty()) {
        hard = load_selection(selection);
        hard_ptr = &hard;
    }
    EvalReport report = evaluate(ckpt.params, ckpt.config, records, mask_rate, seed, hard_ptr);
    std::cout << report.to_csv();
    if (!out.empty()) report.write_csv(out);
    std::fprintf(stderr, "heldout: %lld positions, loss %.4f nats, top-1 %.3f, entropy %.4f\n",
                 static_cast<long long>(report.positions), report.mean_loss, report.top1_accuracy,
                 report.mean_entropy);
    if (report.has_hard) {
        std::fprintf(stderr, "hard set: %lld positions, loss %.4f nats, top-1 %.3f\n",
                     static_cast<long long>(report.hard_positions), report.hard_mean_loss,
                     report.hard_top1_accuracy);
    }
    return 0;
}

int cmd_cloze(const std::string& checkpoint, const std::string& vocab_path, const std::string& text,
              int64_t k) {
    Vocab vocab = Vocab::load(vocab_path);
    LoadedCheckpoint ckpt = load_for_vocab(checkpoint, vocab);
    ClozeCase result = cloze(ckpt.params, ckpt.config, vocab, text, k);
    std::cout << "slot,rank,token,prob\n";
    for (size_t s = 0; s < result.slots.size(); ++s) {
        const ClozeSlot& slot = result.slots[s];
        for (size_t r = 0; r < slot.topk.size(); ++r) {
            std::cout << s << ',' << (r + 1) << ',' << slot.topk[r].first << ','
                      << fmt_float(slot.topk[r].second) << '\n';
        }
    }
    return 0;
}

int cmd_overlap(const std::string& sel_a, const std::string& sel_b, const std::string& out) {
    OverlapReport report = selection_overlap(sel_a, sel_b);
    std::cout << report.to_csv();
    if (!out.empty()) report.write_csv(out);
    return 0;
}

int cmd_interpolate(const std::string& a_path, const std::string& b_path, int64_t random_dir_seed,
                    bool use_random_dir, const std::string& heldout,
                    const std::string& vocab_path, int64_t points, double mask_rate,
                    uint64_t seed, const std::string& out) {
    Vocab vocab = Vocab::load(vocab_path);
    LoadedCheckpoint a = load_for_vocab(a_path, vocab);
    ParameterStore d;
    if (use_random_dir) {
        d = random_direction_endpoint(a.params, static_cast<uint64_t>(random_dir_seed));
    } else {
        if (b_path.empty()) {
            throw UsageError("interpolate: provide --b or --random-dir");
        }
        LoadedCheckpoint b = load_for_vocab(b_path, vocab);
        d = std::move(b.params);
    }
    std::vector<SentenceRecord> records = load_corpus(heldout, vocab);
    auto curve =
        loss_interpolation_1d(a.params, d, a.config, records, mask_rate, seed, points);
    std::cout << "alpha,loss\n";
    for (const auto& [alpha, loss] : curve) {
        std::cout << fmt_float(alpha) << ',' << fmt_float(loss) << '\n';
    }
    if (!out.empty()) write_interpolation_csv(out, curve);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sept: small-scale MLM pretraining with self-evolution continued training"};
    app.require_subcommand(1);

    // build-vocab
    auto* sc_vocab = app.add_subcommand("build-vocab", "Build a word-level vocabulary dump");
    std::string bv_corpus, bv_out;
    int64_t bv_max_vocab = 8000, bv_min_freq = 1;
    sc_vocab->add_option("--corpus", bv_corpus, "one-sentence-per-line UTF-8 corpus")->required();
    sc_vocab->add_option("--out", bv_out, "vocab dump path")->required();
    sc_vocab->add_option("--max-vocab", bv_max_vocab, "vocabulary cap including specials");
    sc_vocab->add_option("--min-freq", bv_min_freq, "minimum token frequency");

    // pretrain / se-train share config + overrides
    std::string pt_config, se_config;
    std::string pt_strategy, pt_seed, pt_steps;
    std::string se_iterations, se_seed;

    auto* sc_pretrain = app.add_subcommand("pretrain", "Baseline MLM training from a config file");
    sc_pretrain->add_option("--config", pt_config, "key = value config file")->required();
    sc_pretrain->add_option("--strategy", pt_strategy,
                            "masking strategy override: random|span|pmi|entity|self-questioning");
    sc_pretrain->add_option("--seed", pt_seed, "seed override");
    sc_pretrain->add_option("--steps", pt_steps, "train.steps override");

    auto* sc_se = app.add_subcommand("se-train", "Self-evolution continued training");
    sc_se->add_option("--config", se_config, "key = value config file")->required();
    sc_se->add_option("--iterations", se_iterations, "number of SE iterations (N)");
    sc_se->add_option("--seed", se_seed, "seed override");

    // eval
    auto* sc_eval = app.add_subcommand("eval", "Masked-token metrics on a heldout corpus");
    std::string ev_ckpt, ev_heldout, ev_vocab, ev_selection, ev_out;
    double ev_rate = 0.15;
    uint64_t ev_seed = 0;
    sc_eval->add_option("--checkpoint", ev_ckpt)->required();
    sc_eval->add_option("--heldout", ev_heldout)->required();
    sc_eval->add_option("--vocab", ev_vocab)->required();
    sc_eval->add_option("--selection", ev_selection, "selection CSV for hard-set metrics");
    sc_eval->add_option("--mask-rate", ev_rate);
    sc_eval->add_option("--seed", ev_seed);
    sc_eval->add_option("--out", ev_out, "also write the CSV here");

    // cloze
    auto* sc_cloze = app.add_subcommand("cloze", "Top-k predictions for [MASK] slots");
    std::string cl_ckpt, cl_vocab, cl_text;
    int64_t cl_k = 5;
    sc_cloze->add_option("--checkpoint", cl_ckpt)->required();
    sc_cloze->add_option("--vocab", cl_vocab)->required();
    sc_cloze->add_option("--text", cl_text, "input containing [MASK] slots")->required();
    sc_cloze->add_option("-k,--topk", cl_k, "predictions per slot");

    // overlap
    auto* sc_overlap = app.add_subcommand("overlap", "JS/KL between two selection CSVs");
    std::string ov_a, ov_b, ov_out;
    sc_overlap->add_option("--sel-a", ov_a, "selection CSV (P1)")->required();
    sc_overlap->add_option("--sel-b", ov_b, "selection CSV (P2)")->required();
    sc_overlap->add_option("--out", ov_out);

    // interpolate
    auto* sc_interp = app.add_subcommand("interpolate", "1-D heldout loss curve between points");
    std::string ip_a, ip_b, ip_heldout, ip_vocab, ip_out;
    int64_t ip_points = 25, ip_random_dir = -1;
    double ip_rate = 0.15;
    uint64_t ip_seed = 0;
    sc_interp->add_option("--a", ip_a, "checkpoint A")->required();
    sc_interp->add_option("--b", ip_b, "checkpoint B (segment endpoint)");
    sc_interp->add_option("--random-dir", ip_random_dir,
                          "seed for a filter-normalized random direction instead of --b");
    sc_interp->add_option("--heldout", ip_heldout)->required();
    sc_interp->add_option("--vocab", ip_vocab)->required();
    sc_interp->add_option("--points", ip_points);
    sc_interp->add_option("--mask-rate", ip_rate);
    sc_interp->add_option("--seed", ip_seed);
    sc_interp->add_option("--out", ip_out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*sc_vocab) return cmd_build_vocab(bv_corpus, bv_out, bv_max_vocab, bv_min_freq);
        if (*sc_pretrain) {
            std::vector<std::pair<std::string, std::string>> overrides;
            if (!pt_strategy.empty()) overrides.emplace_back("mask.strategy", pt_strategy);
            if (!pt_seed.empty()) overrides.emplace_back("seed", pt_seed);
            if (!pt_steps.empty()) overrides.emplace_back("train.steps", pt_steps);
            return cmd_pretrain(pt_config, overrides);
        }
        if (*sc_se) {
            std::vector<std::pair<std::string, std::string>> overrides;
            if (!se_iterations.empty()) overrides.emplace_back("se.iterations", se_iterations);
            if (!se_seed.empty()) overrides.emplace_back("seed", se_seed);
            return cmd_se_train(se_config, overrides);
        }
        if (*sc_eval) {
            return cmd_eval(ev_ckpt, ev_heldout, ev_vocab, ev_selection, ev_rate, ev_seed, ev_out);
        }
        if (*sc_cloze) return cmd_cloze(cl_ckpt, cl_vocab, cl_text, cl_k);
        if (*sc_overlap) return cmd_overlap(ov_a, ov_b, ov_out);
        if (*sc_interp) {
            bool random_dir = sc_interp->count("--random-dir") > 0;
            return cmd_interpolate(ip_a, ip_b, ip_random_dir, random_dir, ip_heldout, ip_vocab,
                                   ip_points, ip_rate, ip_seed, ip_out);
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
