#include "sept/model.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace sept {

void ModelConfig::validate() const {
    if (vocab_size < kNumSpecials + 1) {
        throw UsageError("model config: vocab_size must be at least " +
                         std::to_string(kNumSpecials + 1));
    }
    if (hidden < 1 || layers < 1 || heads < 1 || ffn < 1 || max_seq_len < 3) {
        throw UsageError("model config: all counts must be positive (max_seq_len >= 3)");
    }
    if (hidden % heads != 0) {
        throw UsageError("model config: hidden " + std::to_string(hidden) +
                         " not divisible by heads " + std::to_string(heads));
    }
    if (dropout < 0.0 || dropout >= 1.0) {
        throw UsageError("model config: dropout must be in [0,1)");
    }
}

std::vector<ParamSpec> parameter_layout(const ModelConfig& cfg) {
    std::vector<ParamSpec> out;
    auto w = [&](std::string name, std::vector<int64_t> shape) {
        out.push_back({std::move(name), std::move(shape), ParamInit::kTruncNormal});
    };
    auto z = [&](std::string name, std::vector<int64_t> shape) {
        out.push_back({std::move(name), std::move(shape), ParamInit::kZero});
    };
    auto one = [&](std::string name, std::vector<int64_t> shape) {
        out.push_back({std::move(name), std::move(shape), ParamInit::kOne});
    };
    int64_t d = cfg.hidden;
    w("embed.tok", {cfg.vocab_size, d});
    w("embed.pos", {cfg.max_seq_len, d});
    for (int64_t i = 0; i < cfg.layers; ++i) {
        std::string p = "layer" + std::to_string(i) + ".";
        one(p + "ln1.gain", {d});
        z(p + "ln1.bias", {d});
        w(p + "attn.wq", {d, d});
        z(p + "attn.bq", {d});
        w(p + "attn.wk", {d, d});
        z(p + "attn.bk", {d});
        w(p + "attn.wv", {d, d});
        z(p + "attn.bv", {d});
        w(p + "attn.wo", {d, d});
        z(p + "attn.bo", {d});
        one(p + "ln2.gain", {d});
        z(p + "ln2.bias", {d});
        w(p + "ffn.w1", {d, cfg.ffn});
        z(p + "ffn.b1", {cfg.ffn});
        w(p + "ffn.w2", {cfg.ffn, d});
        z(p + "ffn.b2", {d});
    }
    one("final_ln.gain", {d});
    z("final_ln.bias", {d});
    z("out.bias", {cfg.vocab_size});
    return out;
}

namespace {

constexpr char kMagic[4] = {'S', 'E', 'P', 'T'};
constexpr uint32_t kVersion = 1;
constexpr uint8_t kMaxRank = 8;
const char* kHyperName = "meta.hyper";

void put_u16(std::string& buf, uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}
void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& buf, uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f32(std::string& buf, float v) { put_u32(buf, std::bit_cast<uint32_t>(v)); }

class Reader {
public:
    Reader(std::ifstream& in, std::string path) : in_(in), path_(std::move(path)) {}

    void read(void* dst, size_t n, const std::string& what) {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(in_.gcount()) != n) {
            throw FormatError("checkpoint " + path_ + ": unexpected end of file reading " + what);
        }
    }
    uint16_t u16(const std::string& what) {
        uint8_t b[2];
        read(b, 2, what);
        return static_cast<uint16_t>(b[0] | (b[1] << 8));
    }
    uint32_t u32(const std::string& what) {
        uint8_t b[4];
        read(b, 4, what);
        return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
               (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    }
    uint64_t u64(const std::string& what) {
        uint8_t b[8];
        read(b, 8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
        return v;
    }
    uint8_t u8(const std::string& what) {
        uint8_t b;
        read(&b, 1, what);
        return b;
    }

private:
    std::ifstream& in_;
    std::string path_;
};

void append_tensor(std::string& buf, const std::string& name, const Tensor& t) {
    if (name.size() > 0xffff) throw UsageError("checkpoint: tensor name too long: " + name);
    if (t.rank() > kMaxRank) throw UsageError("checkpoint: tensor rank too large: " + name);
    put_u16(buf, static_cast<uint16_t>(name.size()));
    buf.append(name);
    buf.push_back(static_cast<char>(t.rank()));
    for (int64_t dim : t.shape()) put_u64(buf, static_cast<uint64_t>(dim));
    for (float v : t.data()) put_f32(buf, v);
}

}  // namespace

void save_checkpoint(const ParameterStore& params, const ModelConfig& cfg,
                     const std::vector<std::pair<std::string, Tensor>>& extra,
                     const std::filesystem::path& path) {
    std::string buf;
    buf.append(kMagic, 4);
    put_u32(buf, kVersion);
    uint32_t count = static_cast<uint32_t>(1 + params.size() + extra.size());
    put_u32(buf, count);

    Tensor hyper({7}, std::vector<float>{
                          static_cast<float>(cfg.vocab_size), static_cast<float>(cfg.hidden),
                          static_cast<float>(cfg.layers), static_cast<float>(cfg.heads),
                          static_cast<float>(cfg.ffn), static_cast<float>(cfg.max_seq_len),
                          static_cast<float>(cfg.dropout)});
    append_tensor(buf, kHyperName, hyper);
    for (const auto& [name, t] : params.items()) append_tensor(buf, name, t);
    for (const auto& [name, t] : extra) append_tensor(buf, name, t);

    // atomic write: temp file in the same directory, then rename
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("checkpoint save: cannot open " + tmp.string());
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!out) throw IoError("checkpoint save: write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("checkpoint save: rename to " + path.string() + " failed: " + ec.message());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint load: cannot read " + path.string());
    Reader r(in, path.string());

    char magic[4];
    r.read(magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError("checkpoint " + path.string() + ": bad magic");
    }
    uint32_t version = r.u32("version");
    if (version != kVersion) {
        throw FormatError("checkpoint " + path.string() + ": unsupported version " +
                          std::to_string(version));
    }
    uint32_t count = r.u32("tensor count");

    std::vector<std::pair<std::string, Tensor>> tensors;
    tensors.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t name_len = r.u16("name length");
        std::string name(name_len, '\0');
        r.read(name.data(), name_len, "name");
        uint8_t rank = r.u8("rank of " + name);
        if (rank > kMaxRank) {
            throw FormatError("checkpoint " + path.string() + ": tensor " + name +
                              " has invalid rank " + std::to_string(rank));
        }
        std::vector<int64_t> shape(rank);
        uint64_t numel = 1;
        for (uint8_t d = 0; d < rank; ++d) {
            uint64_t dim = r.u64("dims of " + name);
            if (dim == 0 || dim > (1ull << 32) || numel > (1ull << 34) / std::max<uint64_t>(dim, 1)) {
                throw FormatError("checkpoint " + path.string() + ": tensor " + name +
                                  " has invalid shape");
            }
            shape[d] = static_cast<int64_t>(dim);
            numel *= dim;
        }
        std::vector<uint8_t> raw(numel * 4);
        r.read(raw.data(), raw.size(), "data of " + name);
        std::vector<float> data(numel);
        for (uint64_t j = 0; j < numel; ++j) {
            uint32_t bits = static_cast<uint32_t>(raw[4 * j]) |
                            (static_cast<uint32_t>(raw[4 * j + 1]) << 8) |
                            (static_cast<uint32_t>(raw[4 * j + 2]) << 16) |
                            (static_cast<uint32_t>(raw[4 * j + 3]) << 24);
            float v = std::bit_cast<float>(bits);
            if (!std::isfinite(v)) {
                throw FormatError("checkpoint " + path.string() + ": tensor " + name +
                                  " contains non-finite values");
            }
            data[j] = v;
        }
        tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }

    // reconstruct config from meta.hyper, then verify the parameter set
    const Tensor* hyper = nullptr;
    for (const auto& [name, t] : tensors) {
        if (name == kHyperName) hyper = &t;
    }
    if (!hyper || hyper->numel() != 7) {
        throw FormatError("checkpoint " + path.string() + ": missing or malformed " + kHyperName);
    }
    LoadedCheckpoint loaded;
    const auto& h = hyper->data();
    loaded.config.vocab_size = static_cast<int64_t>(h[0]);
    loaded.config.hidden = static_cast<int64_t>(h[1]);
    loaded.config.layers = static_cast<int64_t>(h[2]);
    loaded.config.heads = static_cast<int64_t>(h[3]);
    loaded.config.ffn = static_cast<int64_t>(h[4]);
    loaded.config.max_seq_len = static_cast<int64_t>(h[5]);
    loaded.config.dropout = static_cast<double>(h[6]);
    loaded.config.validate();

    std::unordered_map<std::string, Tensor*> by_name;
    for (auto& [name, t] : tensors) by_name[name] = &t;
    for (const ParamSpec& spec : parameter_layout(loaded.config)) {
        auto it = by_name.find(spec.name);
        if (it == by_name.end()) {
            throw FormatError("checkpoint " + path.string() + ": missing tensor " + spec.name);
        }
        if (it->second->shape() != spec.shape) {
            throw FormatError("checkpoint " + path.string() + ": tensor " + spec.name +
                              " has wrong shape");
        }
        Tensor t = *it->second;
        t.set_requires_grad(true);
        loaded.params.add(spec.name, std::move(t));
        by_name.erase(it);
    }
    for (auto& [name, t] : tensors) {
        if (name == kHyperName || loaded.params.has(name)) continue;
        if (name.rfind("opt.", 0) == 0) {
            loaded.extra.emplace_back(name, t);
        } else {
            throw FormatError("checkpoint " + path.string() + ": unexpected tensor " + name);
        }
    }
    return loaded;
}

}  // namespace sept
