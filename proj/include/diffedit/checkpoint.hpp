#ifndef DIFFEDIT_CHECKPOINT_HPP
#define DIFFEDIT_CHECKPOINT_HPP

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "diffedit/denoiser.hpp"
#include "diffedit/first_stage.hpp"
#include "diffedit/toyworld.hpp"
#include "diffedit/util.hpp"

namespace diffedit {

// Human-readable text header followed by a little-endian 64-bit-real blob.
// load(save(params)) is bit-identical: the blob is copied raw.
struct CheckpointMeta {
    std::string module;
    std::string config_hash;
    uint64_t seed = 0;
    std::map<std::string, std::string> extra;
};

namespace detail {

// header fields are whitespace-delimited; empty strings get a sentinel
inline std::string field(const std::string& s) { return s.empty() ? "-" : s; }
inline std::string unfield(const std::string& s) { return s == "-" ? "" : s; }

}  // namespace detail

inline void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                            const ParamList& params) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::io, "save_checkpoint: cannot open " + path);
    int64_t total = 0;
    f << "diffedit-checkpoint v1\n";
    f << "module " << detail::field(meta.module) << "\n";
    f << "config_hash " << detail::field(meta.config_hash) << "\n";
    f << "seed " << meta.seed << "\n";
    for (const auto& [k, v] : meta.extra) f << "meta " << k << " " << detail::field(v) << "\n";
    f << "tensors " << params.size() << "\n";
    for (const auto& p : params) {
        f << p.name << " " << p.tensor->ndim();
        for (int64_t e : p.tensor->shape) f << " " << e;
        f << " " << total << "\n";
        total += p.tensor->numel();
    }
    f << "blob " << total << "\n";
    for (const auto& p : params)
        f.write(reinterpret_cast<const char*>(p.tensor->data.data()),
                static_cast<std::streamsize>(p.tensor->data.size() * sizeof(double)));
    require(f.good(), ErrorKind::io, "save_checkpoint: write failed for " + path);
}

// Fills the caller's parameter tensors; names and shapes must line up with
// what was saved.
inline CheckpointMeta load_checkpoint(const std::string& path, const ParamList& params) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::io, "load_checkpoint: cannot open " + path);
    std::string magic, version;
    f >> magic >> version;
    require(magic == "diffedit-checkpoint" && version == "v1", ErrorKind::io,
            "load_checkpoint: bad header in " + path);
    CheckpointMeta meta;
    std::string key;
    f >> key >> meta.module;
    meta.module = detail::unfield(meta.module);
    f >> key >> meta.config_hash;
    meta.config_hash = detail::unfield(meta.config_hash);
    f >> key >> meta.seed;
    f >> key;
    while (key == "meta") {
        std::string k, v;
        f >> k >> v;
        meta.extra[k] = detail::unfield(v);
        f >> key;
    }
    require(key == "tensors", ErrorKind::io, "load_checkpoint: missing tensor manifest");
    size_t n = 0;
    f >> n;
    require(n == params.size(), ErrorKind::io,
            "load_checkpoint: tensor count mismatch in " + path);
    int64_t total = 0;
    for (size_t i = 0; i < n; ++i) {
        std::string name;
        int ndim = 0;
        f >> name >> ndim;
        require(name == params[i].name, ErrorKind::io,
                "load_checkpoint: tensor name mismatch, expected " + params[i].name + " got " + name);
        std::vector<int64_t> shape(static_cast<size_t>(ndim));
        for (auto& e : shape) f >> e;
        int64_t offset = 0;
        f >> offset;
        require(shape == params[i].tensor->shape, ErrorKind::io,
                "load_checkpoint: shape mismatch for " + name);
        require(offset == total, ErrorKind::io, "load_checkpoint: bad offset for " + name);
        total += params[i].tensor->numel();
    }
    int64_t blob = 0;
    f >> key >> blob;
    require(key == "blob" && blob == total, ErrorKind::io,
            "load_checkpoint: blob length does not match manifest total");
    f.get();  // newline before raw data
    for (const auto& p : params) {
        f.read(reinterpret_cast<char*>(p.tensor->data.data()),
               static_cast<std::streamsize>(p.tensor->data.size() * sizeof(double)));
    }
    require(f.good(), ErrorKind::io, "load_checkpoint: truncated blob in " + path);
    for (const auto& p : params)
        require_finite(*p.tensor, "load_checkpoint(" + p.name + ")");
    return meta;
}

inline CheckpointMeta read_checkpoint_meta(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::io, "read_checkpoint_meta: cannot open " + path);
    std::string magic, version, key;
    f >> magic >> version;
    require(magic == "diffedit-checkpoint" && version == "v1", ErrorKind::io,
            "read_checkpoint_meta: bad header in " + path);
    CheckpointMeta meta;
    f >> key >> meta.module;
    meta.module = detail::unfield(meta.module);
    f >> key >> meta.config_hash;
    meta.config_hash = detail::unfield(meta.config_hash);
    f >> key >> meta.seed;
    f >> key;
    while (key == "meta") {
        std::string k, v;
        f >> k >> v;
        meta.extra[k] = detail::unfield(v);
        f >> key;
    }
    return meta;
}

inline void expect_meta(const CheckpointMeta& meta, const std::string& key,
                        const std::string& value) {
    auto it = meta.extra.find(key);
    require(it != meta.extra.end() && it->second == value, ErrorKind::staleness,
            "checkpoint meta mismatch for '" + key + "': expected " + value + ", found " +
                (it == meta.extra.end() ? std::string("<missing>") : it->second));
}

// ---- module-specific wrappers --------------------------------------------------

inline void save_denoiser(const std::string& path, DenoiserParams& p, CheckpointMeta meta) {
    meta.module = "denoiser";
    meta.extra["input_dim"] = std::to_string(p.input_dim);
    meta.extra["width"] = std::to_string(p.width);
    meta.extra["blocks"] = std::to_string(p.num_blocks);
    meta.extra["num_classes"] = std::to_string(p.num_classes);
    meta.extra["d_cls"] = std::to_string(p.d_cls);
    meta.extra["time_dim"] = std::to_string(p.time_dim);
    save_checkpoint(path, meta, p.named_params());
}

inline DenoiserParams load_denoiser(const std::string& path, CheckpointMeta* meta_out = nullptr) {
    CheckpointMeta meta = read_checkpoint_meta(path);
    require(meta.module == "denoiser", ErrorKind::io, "load_denoiser: not a denoiser checkpoint");
    DenoiserParams p = DenoiserParams::init(
        std::stoi(meta.extra.at("input_dim")), std::stoi(meta.extra.at("num_classes")),
        std::stoi(meta.extra.at("width")), std::stoi(meta.extra.at("blocks")), RngStream(0, 0));
    CheckpointMeta loaded = load_checkpoint(path, p.named_params());
    if (meta_out) *meta_out = loaded;
    return p;
}

inline void save_first_stage(const std::string& path, FirstStageParams& p, CheckpointMeta meta) {
    meta.module = "first_stage";
    meta.extra["mode"] = to_string(p.mode);
    meta.extra["f"] = std::to_string(p.f);
    meta.extra["c"] = std::to_string(p.c);
    meta.extra["hidden"] = std::to_string(p.hidden);
    meta.extra["codebook"] = std::to_string(p.codebook.K());
    save_checkpoint(path, meta, p.named_params());
}

inline FirstStageParams load_first_stage(const std::string& path,
                                         CheckpointMeta* meta_out = nullptr) {
    CheckpointMeta meta = read_checkpoint_meta(path);
    require(meta.module == "first_stage", ErrorKind::io,
            "load_first_stage: not a first_stage checkpoint");
    FirstStageMode mode = first_stage_mode_from(meta.extra.at("mode"));
    FirstStageParams p;
    if (mode != FirstStageMode::identity)
        p = FirstStageParams::init(mode, std::stoi(meta.extra.at("f")),
                                   std::stoi(meta.extra.at("c")), std::stoi(meta.extra.at("hidden")),
                                   std::max(2, static_cast<int>(std::stol(meta.extra.at("codebook")))),
                                   RngStream(0, 0));
    if (mode == FirstStageMode::ae) p.codebook = Codebook{};
    CheckpointMeta loaded = load_checkpoint(path, p.named_params());
    if (meta_out) *meta_out = loaded;
    return p;
}

inline ParamList oracle_params(EmotionOracle& o) {
    ParamList out = o.net.named_params();
    out.push_back({"prototypes", &o.prototypes});
    return out;
}

inline void save_oracle(const std::string& path, EmotionOracle& o, CheckpointMeta meta) {
    meta.module = "emotion_oracle";
    meta.extra["input_dim"] = std::to_string(o.net.input_dim);
    meta.extra["feat_dim"] = std::to_string(o.net.feat_dim);
    save_checkpoint(path, meta, oracle_params(o));
}

inline EmotionOracle load_oracle(const std::string& path) {
    CheckpointMeta meta = read_checkpoint_meta(path);
    require(meta.module == "emotion_oracle", ErrorKind::io, "load_oracle: wrong module");
    EmotionOracle o;
    o.net = FeatureNet::init(std::stoi(meta.extra.at("input_dim")), 64,
                             std::stoi(meta.extra.at("feat_dim")), kNumEmotions, RngStream(0, 0));
    o.prototypes = Tensor({kNumEmotions, o.net.feat_dim});
    load_checkpoint(path, oracle_params(o));
    return o;
}

inline void save_identity_embedder(const std::string& path, IdentityEmbedder& e,
                                   CheckpointMeta meta) {
    meta.module = "identity_embedder";
    meta.extra["input_dim"] = std::to_string(e.net.input_dim);
    meta.extra["feat_dim"] = std::to_string(e.net.feat_dim);
    save_checkpoint(path, meta, e.net.named_params());
}

inline IdentityEmbedder load_identity_embedder(const std::string& path) {
    CheckpointMeta meta = read_checkpoint_meta(path);
    require(meta.module == "identity_embedder", ErrorKind::io,
            "load_identity_embedder: wrong module");
    IdentityEmbedder e;
    e.net = FeatureNet::init(std::stoi(meta.extra.at("input_dim")), 64,
                             std::stoi(meta.extra.at("feat_dim")), kIdentityDims, RngStream(0, 0));
    load_checkpoint(path, e.net.named_params());
    return e;
}

}  // namespace diffedit

#endif  // DIFFEDIT_CHECKPOINT_HPP
