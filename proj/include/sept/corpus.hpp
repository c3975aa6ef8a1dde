#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "sept/common.hpp"

namespace sept {

// Fixed special ids; everything downstream (masking eligibility, checkpoint
// compatibility, cloze slot handling) relies on this layout.
inline constexpr int32_t kPadId = 0;
inline constexpr int32_t kUnkId = 1;
inline constexpr int32_t kMaskId = 2;
inline constexpr int32_t kClsId = 3;
inline constexpr int32_t kSepId = 4;
inline constexpr int32_t kNumSpecials = 5;

/// Word-level vocabulary: specials first, then corpus tokens by descending
/// frequency (ties broken lexicographically).
class Vocab {
public:
    static Vocab build(const std::filesystem::path& corpus_path, int64_t max_vocab,
                       int64_t min_freq);
    static Vocab load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    /// Token id, or UNK when absent. Raw text can never map to a special.
    int32_t id_of(const std::string& token) const;
    const std::string& token_of(int32_t id) const;
    int64_t freq_of(int32_t id) const;
    int32_t size() const { return static_cast<int32_t>(id_to_token_.size()); }

private:
    Vocab() = default;
    void push(const std::string& token, int64_t freq);

    std::vector<std::string> id_to_token_;
    std::vector<int64_t> freqs_;
    std::unordered_map<std::string, int32_t> token_to_id_;
};

struct SentenceRecord {
    std::vector<int32_t> ids;             // length n, never specials
    int64_t line_index = 0;               // original (0-based) corpus line
    std::vector<std::string> raw_tokens;  // post-lowercase surface forms
};

/// Whitespace split + ASCII lowercase + OOV->UNK. Returns nullopt for lines
/// that are empty after splitting (skip signal, not an error).
std::optional<SentenceRecord> tokenize(const std::string& line, const Vocab& vocab,
                                       int64_t line_index);

/// Inverse of tokenize over in-vocab text (space-joined token surface forms).
std::string detokenize(const std::vector<int32_t>& ids, const Vocab& vocab);

/// Reads a one-sentence-per-line UTF-8 corpus; empty lines skipped.
std::vector<SentenceRecord> load_corpus(const std::filesystem::path& path, const Vocab& vocab);

struct Batch {
    int64_t rows = 0;
    int64_t cols = 0;                 // CLS + tokens + SEP + PAD fill
    std::vector<int32_t> ids;         // rows*cols, row-major
    std::vector<float> attention;     // 1 exactly on non-PAD positions
    std::vector<int32_t> lengths;     // true token counts (without CLS/SEP)
    std::vector<int64_t> lines;       // source line_index per row

    int32_t id_at(int64_t r, int64_t c) const { return ids[static_cast<size_t>(r * cols + c)]; }
};

/// Frames a set of records into one padded batch. Records longer than
/// max_seq_len-2 are truncated to leave room for CLS/SEP.
Batch make_batch(const std::vector<SentenceRecord>& records, const std::vector<size_t>& which,
                 int64_t max_seq_len);

/// Endless epoch-shuffled batch stream; deterministic for a fixed seed.
class BatchIterator {
public:
    BatchIterator(const std::vector<SentenceRecord>& records, int64_t batch_size,
                  int64_t max_seq_len, uint64_t seed);

    Batch next();
    int64_t epoch() const { return epoch_; }
    int64_t batches_per_epoch() const;

private:
    void start_epoch();

    const std::vector<SentenceRecord>* records_;
    int64_t batch_size_;
    int64_t max_seq_len_;
    uint64_t seed_;
    int64_t epoch_ = -1;
    size_t cursor_ = 0;
    std::vector<size_t> order_;
};

struct EntityAnnotation {
    int64_t line_index = 0;
    int32_t start = 0;  // token offsets, end inclusive
    int32_t end = 0;
};

using AnnotationMap = std::unordered_map<int64_t, std::vector<EntityAnnotation>>;

/// Parses TSV rows "line_index<TAB>start<TAB>end" and validates each span
/// against the referenced record. Malformed or out-of-range rows are
/// rejected with their 1-based row number.
std::vector<EntityAnnotation> load_annotations(const std::filesystem::path& path,
                                               const std::vector<SentenceRecord>& records);

AnnotationMap annotation_map(const std::vector<EntityAnnotation>& annotations);

}  // namespace sept
