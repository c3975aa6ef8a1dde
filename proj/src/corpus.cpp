#include "sept/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace sept {

namespace {

const char* kSpecialTokens[kNumSpecials] = {"[PAD]", "[UNK]", "[MASK]", "[CLS]", "[SEP]"};

std::string lowercase_ascii(std::string s) {
    for (char& c : s) {
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return s;
}

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream iss(line);
    std::string tok;
    while (iss >> tok) out.push_back(tok);
    return out;
}

std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

}  // namespace

void Vocab::push(const std::string& token, int64_t freq) {
    token_to_id_[token] = static_cast<int32_t>(id_to_token_.size());
    id_to_token_.push_back(token);
    freqs_.push_back(freq);
}

Vocab Vocab::build(const std::filesystem::path& corpus_path, int64_t max_vocab, int64_t min_freq) {
    if (max_vocab < kNumSpecials + 1) {
        throw UsageError("build_vocab: max_vocab must be at least " +
                         std::to_string(kNumSpecials + 1));
    }
    std::ifstream in(corpus_path);
    if (!in) throw IoError("build_vocab: cannot read corpus file " + corpus_path.string());

    // std::map gives the lexicographic tie order for free
    std::map<std::string, int64_t> counts;
    std::string line;
    int64_t total = 0;
    while (std::getline(in, line)) {
        for (const std::string& raw : split_ws(strip_cr(line))) {
            ++counts[lowercase_ascii(raw)];
            ++total;
        }
    }
    if (total == 0) throw UsageError("build_vocab: corpus has no tokens: " + corpus_path.string());

    std::vector<std::pair<std::string, int64_t>> items(counts.begin(), counts.end());
    std::stable_sort(items.begin(), items.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    Vocab v;
    for (int i = 0; i < kNumSpecials; ++i) v.push(kSpecialTokens[i], 0);
    for (const auto& [token, freq] : items) {
        if (freq < min_freq) continue;
        if (v.size() >= max_vocab) break;
        v.push(token, freq);
    }
    return v;
}

void Vocab::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("vocab save: cannot write " + path.string());
    for (int32_t id = 0; id < size(); ++id) {
        out << id_to_token_[static_cast<size_t>(id)] << '\t' << id << '\t'
            << freqs_[static_cast<size_t>(id)] << '\n';
    }
    if (!out) throw IoError("vocab save: write failed for " + path.string());
}

Vocab Vocab::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("vocab load: cannot read " + path.string());
    Vocab v;
    std::string line;
    int64_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        line = strip_cr(line);
        if (line.empty()) continue;
        size_t t1 = line.find('\t');
        size_t t2 = line.find('\t', t1 == std::string::npos ? t1 : t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos) {
            throw FormatError("vocab load: malformed row " + std::to_string(row) + " in " +
                              path.string());
        }
        std::string token = line.substr(0, t1);
        int64_t id = 0, freq = 0;
        try {
            id = std::stoll(line.substr(t1 + 1, t2 - t1 - 1));
            freq = std::stoll(line.substr(t2 + 1));
        } catch (const std::exception&) {
            throw FormatError("vocab load: malformed row " + std::to_string(row) + " in " +
                              path.string());
        }
        if (id != v.size()) {
            throw FormatError("vocab load: non-contiguous id " + std::to_string(id) + " at row " +
                              std::to_string(row));
        }
        v.push(token, freq);
    }
    if (v.size() < kNumSpecials) throw FormatError("vocab load: missing special tokens");
    for (int i = 0; i < kNumSpecials; ++i) {
        if (v.id_to_token_[static_cast<size_t>(i)] != kSpecialTokens[i]) {
            throw FormatError(std::string("vocab load: special id ") + std::to_string(i) +
                              " must be " + kSpecialTokens[i]);
        }
    }
    return v;
}

int32_t Vocab::id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    if (it == token_to_id_.end() || it->second < kNumSpecials) return kUnkId;
    return it->second;
}

const std::string& Vocab::token_of(int32_t id) const {
    if (id < 0 || id >= size()) throw UsageError("token_of: id out of range");
    return id_to_token_[static_cast<size_t>(id)];
}

int64_t Vocab::freq_of(int32_t id) const {
    if (id < 0 || id >= size()) throw UsageError("freq_of: id out of range");
    return freqs_[static_cast<size_t>(id)];
}

std::optional<SentenceRecord> tokenize(const std::string& line, const Vocab& vocab,
                                       int64_t line_index) {
    std::vector<std::string> raw = split_ws(strip_cr(line));
    if (raw.empty()) return std::nullopt;
    SentenceRecord rec;
    rec.line_index = line_index;
    rec.ids.reserve(raw.size());
    rec.raw_tokens.reserve(raw.size());
    for (std::string& tok : raw) {
        std::string low = lowercase_ascii(std::move(tok));
        rec.ids.push_back(vocab.id_of(low));
        rec.raw_tokens.push_back(std::move(low));
    }
    return rec;
}

std::string detokenize(const std::vector<int32_t>& ids, const Vocab& vocab) {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += vocab.token_of(ids[i]);
    }
    return out;
}

std::vector<SentenceRecord> load_corpus(const std::filesystem::path& path, const Vocab& vocab) {
    std::ifstream in(path);
    if (!in) throw IoError("load_corpus: cannot read " + path.string());
    std::vector<SentenceRecord> records;
    std::string line;
    int64_t line_index = 0;
    while (std::getline(in, line)) {
        if (auto rec = tokenize(line, vocab, line_index)) records.push_back(std::move(*rec));
        ++line_index;
    }
    if (records.empty()) throw UsageError("load_corpus: no non-empty sentences in " + path.string());
    return records;
}

Batch make_batch(const std::vector<SentenceRecord>& records, const std::vector<size_t>& which,
                 int64_t max_seq_len) {
    if (which.empty()) throw UsageError("make_batch: empty index set");
    if (max_seq_len < 3) throw UsageError("make_batch: max_seq_len must be >= 3");
    int64_t max_tokens = max_seq_len - 2;
    int64_t longest = 0;
    for (size_t idx : which) {
        int64_t n = std::min<int64_t>(static_cast<int64_t>(records[idx].ids.size()), max_tokens);
        longest = std::max(longest, n);
    }
    Batch b;
    b.rows = static_cast<int64_t>(which.size());
    b.cols = longest + 2;
    b.ids.assign(static_cast<size_t>(b.rows * b.cols), kPadId);
    b.attention.assign(static_cast<size_t>(b.rows * b.cols), 0.0f);
    b.lengths.resize(which.size());
    b.lines.resize(which.size());
    for (int64_t r = 0; r < b.rows; ++r) {
        const SentenceRecord& rec = records[which[static_cast<size_t>(r)]];
        int64_t n = std::min<int64_t>(static_cast<int64_t>(rec.ids.size()), max_tokens);
        int32_t* row = b.ids.data() + r * b.cols;
        float* att = b.attention.data() + r * b.cols;
        row[0] = kClsId;
        for (int64_t j = 0; j < n; ++j) row[1 + j] = rec.ids[static_cast<size_t>(j)];
        row[1 + n] = kSepId;
        for (int64_t j = 0; j < n + 2; ++j) att[j] = 1.0f;
        b.lengths[static_cast<size_t>(r)] = static_cast<int32_t>(n);
        b.lines[static_cast<size_t>(r)] = rec.line_index;
    }
    return b;
}

BatchIterator::BatchIterator(const std::vector<SentenceRecord>& records, int64_t batch_size,
                             int64_t max_seq_len, uint64_t seed)
    : records_(&records), batch_size_(batch_size), max_seq_len_(max_seq_len), seed_(seed) {
    if (batch_size < 1) throw UsageError("batch_iterator: batch_size must be >= 1");
    if (records.empty()) throw UsageError("batch_iterator: no records");
    order_.resize(records.size());
    start_epoch();
}

void BatchIterator::start_epoch() {
    ++epoch_;
    cursor_ = 0;
    for (size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    Rng rng(derive_seed(seed_, "shuffle", static_cast<uint64_t>(epoch_)));
    rng.shuffle(order_);
}

int64_t BatchIterator::batches_per_epoch() const {
    int64_t n = static_cast<int64_t>(records_->size());
    return (n + batch_size_ - 1) / batch_size_;
}

Batch BatchIterator::next() {
    if (cursor_ >= order_.size()) start_epoch();
    size_t end = std::min(cursor_ + static_cast<size_t>(batch_size_), order_.size());
    std::vector<size_t> which(order_.begin() + static_cast<int64_t>(cursor_),
                              order_.begin() + static_cast<int64_t>(end));
    cursor_ = end;
    return make_batch(*records_, which, max_seq_len_);
}

std::vector<EntityAnnotation> load_annotations(const std::filesystem::path& path,
                                               const std::vector<SentenceRecord>& records) {
    std::ifstream in(path);
    if (!in) throw IoError("load_annotations: cannot read " + path.string());
    std::unordered_map<int64_t, int64_t> length_by_line;
    for (const SentenceRecord& rec : records) {
        length_by_line[rec.line_index] = static_cast<int64_t>(rec.ids.size());
    }
    std::vector<EntityAnnotation> out;
    std::string line;
    int64_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        line = strip_cr(line);
        if (line.empty()) continue;
        std::istringstream iss(line);
        int64_t li = 0;
        int64_t start = 0, end = 0;
        if (!(iss >> li >> start >> end) || !(iss >> std::ws).eof()) {
            throw FormatError("load_annotations: malformed row " + std::to_string(row) + " in " +
                              path.string());
        }
        auto it = length_by_line.find(li);
        if (it == length_by_line.end()) {
            throw FormatError("load_annotations: row " + std::to_string(row) + ": line index " +
                              std::to_string(li) + " out of range");
        }
        if (start < 0 || end < start || end >= it->second) {
            throw FormatError("load_annotations: row " + std::to_string(row) + ": span [" +
                              std::to_string(start) + "," + std::to_string(end) +
                              "] invalid for sentence of length " + std::to_string(it->second));
        }
        out.push_back({li, static_cast<int32_t>(start), static_cast<int32_t>(end)});
    }
    return out;
}

AnnotationMap annotation_map(const std::vector<EntityAnnotation>& annotations) {
    AnnotationMap map;
    for (const EntityAnnotation& a : annotations) map[a.line_index].push_back(a);
    return map;
}

}  // namespace sept
