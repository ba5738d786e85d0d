#pragma once

#include <array>
#include <optional>

#include "sftnet/adam.hpp"
#include "sftnet/sfea.hpp"
#include "sftnet/swin.hpp"
#include "sftnet/tensor_io.hpp"

namespace sft {

// ---------------------------------------------------------------------------
// Swin-SFTNet: patch embed -> 3 encoder stages (swin unit + merge) ->
// bottleneck unit -> 3 decoder stages (expand + SFEA-concat + reduce + unit)
// -> final 4x expand -> 1x1 conv head -> sigmoid.
// ---------------------------------------------------------------------------

struct ModelConfig {
    int64_t h = 256, w = 256;
    int64_t c = 128;
    int64_t window = 8;
    std::array<int64_t, 4> heads{4, 8, 16, 32};
    double mlp_ratio = 4.0;
    std::array<int64_t, 3> sfea_channels{128, 256, 512};
    int64_t out_channels = 1;
    bool use_rel_pos_bias = true;
    int64_t final_cout = 32;
    bool use_gelu_tanh = false;

    bool operator==(const ModelConfig&) const = default;
};

// Fills the derived fields from the four leading knobs.
inline ModelConfig make_config(int64_t h, int64_t w, int64_t c, int64_t window) {
    ModelConfig cfg;
    cfg.h = h;
    cfg.w = w;
    cfg.c = c;
    cfg.window = window;
    cfg.sfea_channels = {c, 2 * c, 4 * c};
    cfg.final_cout = std::max<int64_t>(1, c / 4);
    return cfg;
}

// Per-stage geometry. The window is clamped to the grid side when the grid
// is no larger than one window, in which case the shifted sub-block runs
// unshifted (there is nothing to shift across).
struct StagePlan {
    int64_t grid = 0;
    int64_t tokens = 0;
    int64_t channels = 0;
    int64_t window = 0;
    int64_t shift = 0;
    int64_t heads = 0;
    int64_t mlp_hidden = 0;
};

inline std::array<StagePlan, 4> stage_plans(const ModelConfig& cfg) {
    std::array<StagePlan, 4> plans;
    for (int s = 0; s < 4; ++s) {
        StagePlan p;
        p.grid = (cfg.h / 4) >> s;
        p.tokens = p.grid * p.grid;
        p.channels = cfg.c << s;
        p.window = std::min(cfg.window, p.grid);
        p.shift = p.window < p.grid ? p.window / 2 : 0;
        p.heads = cfg.heads[size_t(s)];
        p.mlp_hidden = int64_t(cfg.mlp_ratio * double(p.channels));
        plans[size_t(s)] = p;
    }
    return plans;
}

struct SfeaLevelPlan {
    int64_t side = 0;      // spatial side after the 4x4 expansion
    int64_t channels = 0;  // skip channel count C_l
    int64_t quarter = 0;   // C_l / 4
};

inline std::array<SfeaLevelPlan, 3> sfea_plans(const ModelConfig& cfg) {
    auto plans = stage_plans(cfg);
    std::array<SfeaLevelPlan, 3> out;
    for (int l = 0; l < 3; ++l)
        out[size_t(l)] = {4 * plans[size_t(l)].grid, plans[size_t(l)].channels,
                          plans[size_t(l)].channels / 4};
    return out;
}

inline void validate_config(const ModelConfig& cfg) {
    auto fail = [](const std::string& m) { throw ConfigError("invalid model config: " + m); };
    if (cfg.h != cfg.w) fail("H and W must be equal (square token grids), got " +
                             std::to_string(cfg.h) + "x" + std::to_string(cfg.w));
    if (cfg.h < 32 || cfg.h % 32 != 0)
        fail("H=" + std::to_string(cfg.h) + " must be a positive multiple of 32");
    if (cfg.c < 4 || cfg.c % 4 != 0)
        fail("C=" + std::to_string(cfg.c) + " must be a positive multiple of 4");
    if (cfg.window < 1) fail("window must be >= 1");
    if (cfg.mlp_ratio <= 0.0) fail("mlp_ratio must be positive");
    if (cfg.out_channels < 1) fail("out_channels must be >= 1");
    if (cfg.final_cout < 1) fail("final_cout must be >= 1");
    auto plans = stage_plans(cfg);
    for (int s = 0; s < 4; ++s) {
        const StagePlan& p = plans[size_t(s)];
        if (p.grid % p.window != 0)
            fail("stage " + std::to_string(s + 1) + " grid " + std::to_string(p.grid) +
                 " not divisible by window " + std::to_string(p.window));
        if (p.heads < 1 || p.channels % p.heads != 0)
            fail("stage " + std::to_string(s + 1) + " heads " + std::to_string(p.heads) +
                 " must divide channels " + std::to_string(p.channels));
        if (p.mlp_hidden < 1) fail("mlp hidden width must be >= 1");
    }
    for (int l = 0; l < 3; ++l)
        if (cfg.sfea_channels[size_t(l)] != plans[size_t(l)].channels)
            fail("sfea_channels[" + std::to_string(l) + "]=" +
                 std::to_string(cfg.sfea_channels[size_t(l)]) + " must equal the skip width " +
                 std::to_string(plans[size_t(l)].channels));
}

// ---------------------------------------------------------------------------
// Parameter table. Everything about the parameter set (names, shapes, init,
// ordering) derives from this one enumeration, so build, checkpoints and the
// audit cannot drift apart.
// ---------------------------------------------------------------------------

enum class Init { TruncNormal, Zeros, Ones, HeConv };

struct ParamInfo {
    std::string name;
    Shape shape;
    Init init = Init::TruncNormal;
    bool trainable = true;
};

inline std::vector<ParamInfo> enumerate_parameters(const ModelConfig& cfg) {
    validate_config(cfg);
    auto plans = stage_plans(cfg);
    std::vector<ParamInfo> out;
    auto dense = [&](const std::string& n, int64_t in, int64_t mid) {
        out.push_back({n + ".w", {in, mid}, Init::TruncNormal, true});
        out.push_back({n + ".b", {mid}, Init::Zeros, true});
    };
    auto unit = [&](const std::string& prefix, const StagePlan& p) {
        for (int sub = 1; sub <= 2; ++sub) {
            const std::string b = prefix + ".b" + std::to_string(sub);
            out.push_back({b + ".ln1.gamma", {p.channels}, Init::Ones, true});
            out.push_back({b + ".ln1.beta", {p.channels}, Init::Zeros, true});
            dense(b + ".qkv", p.channels, 3 * p.channels);
            dense(b + ".proj", p.channels, p.channels);
            if (cfg.use_rel_pos_bias)
                out.push_back({b + ".relpos",
                               {(2 * p.window - 1) * (2 * p.window - 1), p.heads},
                               Init::Zeros, true});
            out.push_back({b + ".ln2.gamma", {p.channels}, Init::Ones, true});
            out.push_back({b + ".ln2.beta", {p.channels}, Init::Zeros, true});
            dense(b + ".mlp.fc1", p.channels, p.mlp_hidden);
            dense(b + ".mlp.fc2", p.mlp_hidden, p.channels);
        }
    };
    dense("patch_embed", 48, cfg.c);
    for (int s = 0; s < 3; ++s) {
        unit("enc" + std::to_string(s + 1), plans[size_t(s)]);
        dense("merge" + std::to_string(s + 1), 4 * plans[size_t(s)].channels,
              2 * plans[size_t(s)].channels);
    }
    unit("bottleneck", plans[3]);
    for (int i = 0; i < 3; ++i) {
        const StagePlan& src = plans[size_t(3 - i)];  // stage feeding the expand
        const StagePlan& dst = plans[size_t(2 - i)];  // stage after the expand
        const std::string d = "dec" + std::to_string(i + 1);
        dense(d + ".expand", src.channels, 2 * src.channels);
        dense(d + ".reduce", 2 * dst.channels, dst.channels);
        unit(d, dst);
    }
    for (int l = 0; l < 3; ++l) {
        const int64_t cl = cfg.sfea_channels[size_t(l)], cq = cl / 4;
        const std::string s = "sfea" + std::to_string(l + 1);
        dense(s + ".expand", cl, 4 * cl);
        for (int k = 1; k <= 2; ++k) {
            const std::string c = s + ".conv" + std::to_string(k);
            out.push_back({c + ".w", {3, 3, cq, cq}, Init::HeConv, true});
            out.push_back({c + ".b", {cq}, Init::Zeros, true});
            const std::string bn = s + ".bn" + std::to_string(k);
            out.push_back({bn + ".gamma", {cq}, Init::Ones, true});
            out.push_back({bn + ".beta", {cq}, Init::Zeros, true});
            out.push_back({bn + ".rmean", {cq}, Init::Zeros, false});
            out.push_back({bn + ".rvar", {cq}, Init::Ones, false});
        }
        dense(s + ".embed", 4 * cl, cl);
    }
    dense("final_expand", cfg.c, 16 * cfg.final_cout);
    out.push_back({"head.w", {1, 1, cfg.final_cout, cfg.out_channels}, Init::HeConv, true});
    out.push_back({"head.b", {cfg.out_channels}, Init::Zeros, true});
    return out;
}

inline int64_t parameter_count(const ModelConfig& cfg) {
    int64_t n = 0;
    for (const auto& p : enumerate_parameters(cfg))
        if (p.trainable) n += numel(p.shape);
    return n;
}

template <class T>
struct Model {
    ModelConfig cfg;
    ParamStore<T> store;

    Tensor<T> patch_embed_w, patch_embed_b;
    std::array<SwinBlockParams<T>, 3> enc;
    std::array<Tensor<T>, 3> merge_w, merge_b;
    SwinBlockParams<T> bottleneck;
    std::array<Tensor<T>, 3> dec_expand_w, dec_expand_b, dec_reduce_w, dec_reduce_b;
    std::array<SwinBlockParams<T>, 3> dec;
    std::array<SfeaParams<T>, 3> sfea;
    Tensor<T> final_w, final_b, head_w, head_b;
};

namespace detail {
template <class T>
Tensor<T>& fetch(ParamStore<T>& store, const std::string& name) {
    Tensor<T>* t = store.find(name);
    if (!t) throw InternalError("parameter missing from store: " + name);
    return *t;
}

template <class T>
void wire_unit(Model<T>& m, SwinBlockParams<T>& u, const std::string& prefix) {
    auto& st = m.store;
    for (int sub = 1; sub <= 2; ++sub) {
        SwinSubBlockParams<T>& s = sub == 1 ? u.sub1 : u.sub2;
        const std::string b = prefix + ".b" + std::to_string(sub);
        s.ln1_gamma = fetch(st, b + ".ln1.gamma");
        s.ln1_beta = fetch(st, b + ".ln1.beta");
        s.attn.qkv_w = fetch(st, b + ".qkv.w");
        s.attn.qkv_b = fetch(st, b + ".qkv.b");
        s.attn.proj_w = fetch(st, b + ".proj.w");
        s.attn.proj_b = fetch(st, b + ".proj.b");
        if (m.cfg.use_rel_pos_bias) s.attn.rel_bias = fetch(st, b + ".relpos");
        s.ln2_gamma = fetch(st, b + ".ln2.gamma");
        s.ln2_beta = fetch(st, b + ".ln2.beta");
        s.mlp_w1 = fetch(st, b + ".mlp.fc1.w");
        s.mlp_b1 = fetch(st, b + ".mlp.fc1.b");
        s.mlp_w2 = fetch(st, b + ".mlp.fc2.w");
        s.mlp_b2 = fetch(st, b + ".mlp.fc2.b");
    }
}

template <class T>
void wire(Model<T>& m) {
    auto& st = m.store;
    m.patch_embed_w = fetch(st, "patch_embed.w");
    m.patch_embed_b = fetch(st, "patch_embed.b");
    for (int s = 0; s < 3; ++s) {
        wire_unit(m, m.enc[size_t(s)], "enc" + std::to_string(s + 1));
        m.merge_w[size_t(s)] = fetch(st, "merge" + std::to_string(s + 1) + ".w");
        m.merge_b[size_t(s)] = fetch(st, "merge" + std::to_string(s + 1) + ".b");
    }
    wire_unit(m, m.bottleneck, "bottleneck");
    for (int i = 0; i < 3; ++i) {
        const std::string d = "dec" + std::to_string(i + 1);
        m.dec_expand_w[size_t(i)] = fetch(st, d + ".expand.w");
        m.dec_expand_b[size_t(i)] = fetch(st, d + ".expand.b");
        m.dec_reduce_w[size_t(i)] = fetch(st, d + ".reduce.w");
        m.dec_reduce_b[size_t(i)] = fetch(st, d + ".reduce.b");
        wire_unit(m, m.dec[size_t(i)], d);
    }
    for (int l = 0; l < 3; ++l) {
        const std::string s = "sfea" + std::to_string(l + 1);
        SfeaParams<T>& p = m.sfea[size_t(l)];
        p.expand_w = fetch(st, s + ".expand.w");
        p.expand_b = fetch(st, s + ".expand.b");
        p.conv1_w = fetch(st, s + ".conv1.w");
        p.conv1_b = fetch(st, s + ".conv1.b");
        p.bn1 = {fetch(st, s + ".bn1.gamma"), fetch(st, s + ".bn1.beta"),
                 fetch(st, s + ".bn1.rmean"), fetch(st, s + ".bn1.rvar"), 0.9, 1e-5};
        p.conv2_w = fetch(st, s + ".conv2.w");
        p.conv2_b = fetch(st, s + ".conv2.b");
        p.bn2 = {fetch(st, s + ".bn2.gamma"), fetch(st, s + ".bn2.beta"),
                 fetch(st, s + ".bn2.rmean"), fetch(st, s + ".bn2.rvar"), 0.9, 1e-5};
        p.embed_w = fetch(st, s + ".embed.w");
        p.embed_b = fetch(st, s + ".embed.b");
    }
    m.final_w = fetch(st, "final_expand.w");
    m.final_b = fetch(st, "final_expand.b");
    m.head_w = fetch(st, "head.w");
    m.head_b = fetch(st, "head.b");
}
}  // namespace detail

// Deterministic build: a single PRNG stream consumed in enumeration order,
// so one seed always yields the same ParamStore bit for bit.
template <class T>
Model<T> build(const ModelConfig& cfg, uint64_t seed) {
    Model<T> m;
    m.cfg = cfg;
    Prng rng(splitmix64(seed));
    for (const auto& info : enumerate_parameters(cfg)) {
        const int64_t n = numel(info.shape);
        std::vector<T> v(size_t(n));
        switch (info.init) {
            case Init::Zeros:
                break;
            case Init::Ones:
                std::fill(v.begin(), v.end(), T(1));
                break;
            case Init::TruncNormal:
                for (auto& x : v) x = T(rng.trunc_normal(0.02));
                break;
            case Init::HeConv: {
                const double fan_in = double(info.shape[0] * info.shape[1] * info.shape[2]);
                const double std_dev = std::sqrt(2.0 / fan_in);
                for (auto& x : v) x = T(rng.normal() * std_dev);
                break;
            }
        }
        m.store.add(info.name, Tensor<T>::from_data(Shape(info.shape), std::move(v)),
                    info.trainable);
    }
    detail::wire(m);
    return m;
}

// Encoder/decoder embedding pairs (index j pairs encoder stage j+1 with the
// decoder expand output at the same dims) plus the segmentation head output.
template <class T>
struct ForwardTrace {
    std::array<Tensor<T>, 3> encoder_embeddings;
    std::array<Tensor<T>, 3> decoder_embeddings;
    Tensor<T> logits;  // (B, H, W, out_channels)
    Tensor<T> probs;   // sigmoid(logits)
};

template <class T>
ForwardTrace<T> forward(Model<T>& m, const Tensor<T>& x, RunMode mode = RunMode::Eval) {
    const ModelConfig& cfg = m.cfg;
    if (x.rank() != 4 || x.shape()[1] != cfg.h || x.shape()[2] != cfg.w || x.shape()[3] != 3)
        throw DimensionError("forward input " + shape_str(x.shape()) + " does not match config " +
                             std::to_string(cfg.h) + "x" + std::to_string(cfg.w) + "x3");
    auto plans = stage_plans(cfg);
    auto grid_of = [&](const StagePlan& p, int64_t ch) { return PatchGrid{p.grid, p.grid, 4, ch}; };
    auto spec_of = [&](const StagePlan& p) { return WindowSpec{p.window, p.shift, p.heads}; };

    ForwardTrace<T> trace;
    Tensor<T> h = patch_embed(x, m.patch_embed_w, m.patch_embed_b, 4);
    for (int s = 0; s < 3; ++s) {
        const StagePlan& p = plans[size_t(s)];
        h = swin_block(h, m.enc[size_t(s)], spec_of(p), grid_of(p, p.channels), cfg.use_gelu_tanh);
        trace.encoder_embeddings[size_t(s)] = h;
        h = patch_merge(h, grid_of(p, p.channels), m.merge_w[size_t(s)], m.merge_b[size_t(s)]);
    }
    h = swin_block(h, m.bottleneck, spec_of(plans[3]), grid_of(plans[3], plans[3].channels),
                   cfg.use_gelu_tanh);
    for (int i = 0; i < 3; ++i) {
        const StagePlan& src = plans[size_t(3 - i)];
        const StagePlan& dst = plans[size_t(2 - i)];
        h = patch_expand(h, grid_of(src, src.channels), m.dec_expand_w[size_t(i)],
                         m.dec_expand_b[size_t(i)]);
        trace.decoder_embeddings[size_t(2 - i)] = h;
        Tensor<T> skip = sfea_forward(trace.encoder_embeddings[size_t(2 - i)],
                                      m.sfea[size_t(2 - i)], mode);
        h = concat_with_decoder(skip, h);
        h = linear(h, m.dec_reduce_w[size_t(i)], m.dec_reduce_b[size_t(i)]);
        h = swin_block(h, m.dec[size_t(i)], spec_of(dst), grid_of(dst, dst.channels),
                       cfg.use_gelu_tanh);
    }
    Tensor<T> spatial = final_patch_expand(h, grid_of(plans[0], cfg.c), m.final_w, m.final_b,
                                           cfg.final_cout);
    trace.logits = conv2d(spatial, m.head_w, m.head_b, 1, Padding::Same);
    trace.probs = sigmoid(trace.logits);
    return trace;
}

// ---------------------------------------------------------------------------
// Checkpoint format "SFTC" (all integers little-endian):
//   magic `SFTC`, u16 version (= 1),
//   config block: h,w,c,window u32; heads 4xu32; mlp_ratio f64;
//                 sfea_channels 3xu32; out_channels u32; use_rel_pos_bias u8;
//                 final_cout u32; use_gelu_tanh u8,
//   u32 entry count, entries of (u16 name length, name, SFT1 tensor),
//   u8 has_adam; when set: f64 alpha,beta1,beta2,eps; u64 t; u32 slot count,
//                slots of (u16 name length, name, SFT1 m, SFT1 v),
//   u64 seed.
// ---------------------------------------------------------------------------

namespace detail {
template <class V>
void put(std::ostream& o, V v) {
    o.write(reinterpret_cast<const char*>(&v), sizeof(V));
}
template <class V>
V get(std::istream& i, int64_t offset, const char* what) {
    V v{};
    read_exact(i, reinterpret_cast<char*>(&v), sizeof(V), offset, what);
    return v;
}
inline void put_name(std::ostream& o, const std::string& n) {
    put<uint16_t>(o, uint16_t(n.size()));
    o.write(n.data(), std::streamsize(n.size()));
}
inline std::string get_name(std::istream& i) {
    const auto len = get<uint16_t>(i, int64_t(i.tellg()), "name length");
    std::string n(len, '\0');
    read_exact(i, n.data(), len, int64_t(i.tellg()), "name");
    return n;
}
inline void write_config(std::ostream& o, const ModelConfig& c) {
    put<uint32_t>(o, uint32_t(c.h));
    put<uint32_t>(o, uint32_t(c.w));
    put<uint32_t>(o, uint32_t(c.c));
    put<uint32_t>(o, uint32_t(c.window));
    for (int64_t h : c.heads) put<uint32_t>(o, uint32_t(h));
    put<double>(o, c.mlp_ratio);
    for (int64_t s : c.sfea_channels) put<uint32_t>(o, uint32_t(s));
    put<uint32_t>(o, uint32_t(c.out_channels));
    put<uint8_t>(o, c.use_rel_pos_bias ? 1 : 0);
    put<uint32_t>(o, uint32_t(c.final_cout));
    put<uint8_t>(o, c.use_gelu_tanh ? 1 : 0);
}
inline ModelConfig read_config(std::istream& i) {
    ModelConfig c;
    auto u32 = [&](const char* w) { return int64_t(get<uint32_t>(i, int64_t(i.tellg()), w)); };
    c.h = u32("config h");
    c.w = u32("config w");
    c.c = u32("config c");
    c.window = u32("config window");
    for (auto& h : c.heads) h = u32("config heads");
    c.mlp_ratio = get<double>(i, int64_t(i.tellg()), "config mlp_ratio");
    for (auto& s : c.sfea_channels) s = u32("config sfea");
    c.out_channels = u32("config out_channels");
    c.use_rel_pos_bias = get<uint8_t>(i, int64_t(i.tellg()), "config relpos flag") != 0;
    c.final_cout = u32("config final_cout");
    c.use_gelu_tanh = get<uint8_t>(i, int64_t(i.tellg()), "config gelu flag") != 0;
    return c;
}
}  // namespace detail

template <class T>
void save_checkpoint(const std::string& path, const Model<T>& m, const AdamState<T>* adam,
                     uint64_t seed) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint for write: " + path);
    f.write("SFTC", 4);
    detail::put<uint16_t>(f, 1);
    detail::write_config(f, m.cfg);
    detail::put<uint32_t>(f, uint32_t(m.store.entries.size()));
    for (const auto& e : m.store.entries) {
        detail::put_name(f, e.name);
        save_sft1(f, e.tensor);
    }
    detail::put<uint8_t>(f, adam ? 1 : 0);
    if (adam) {
        detail::put<double>(f, adam->alpha);
        detail::put<double>(f, adam->beta1);
        detail::put<double>(f, adam->beta2);
        detail::put<double>(f, adam->eps);
        detail::put<uint64_t>(f, uint64_t(adam->t));
        detail::put<uint32_t>(f, uint32_t(adam->slots.size()));
        for (const auto& s : adam->slots) {
            detail::put_name(f, s.name);
            save_sft1(f, Tensor<T>::from_data({int64_t(s.m.size())}, std::vector<T>(s.m)));
            save_sft1(f, Tensor<T>::from_data({int64_t(s.v.size())}, std::vector<T>(s.v)));
        }
    }
    detail::put<uint64_t>(f, seed);
    if (!f) throw IoError("checkpoint write failed: " + path);
}

template <class T>
struct Checkpoint {
    ModelConfig cfg;
    std::vector<std::pair<std::string, Tensor<T>>> tensors;
    std::optional<AdamState<T>> adam;
    uint64_t seed = 0;
};

template <class T>
Checkpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint for read: " + path);
    char magic[4];
    detail::read_exact(f, magic, 4, 0, "checkpoint magic");
    if (std::memcmp(magic, "SFTC", 4) != 0) throw FormatError("bad checkpoint magic at offset 0");
    const auto version = detail::get<uint16_t>(f, 4, "checkpoint version");
    if (version != 1) throw FormatError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint<T> ck;
    ck.cfg = detail::read_config(f);
    const auto n = detail::get<uint32_t>(f, int64_t(f.tellg()), "entry count");
    for (uint32_t i = 0; i < n; ++i) {
        std::string name = detail::get_name(f);
        ck.tensors.emplace_back(std::move(name), load_sft1<T>(f, int64_t(f.tellg())));
    }
    const auto has_adam = detail::get<uint8_t>(f, int64_t(f.tellg()), "adam flag");
    if (has_adam) {
        AdamState<T> a;
        a.alpha = detail::get<double>(f, int64_t(f.tellg()), "adam alpha");
        a.beta1 = detail::get<double>(f, int64_t(f.tellg()), "adam beta1");
        a.beta2 = detail::get<double>(f, int64_t(f.tellg()), "adam beta2");
        a.eps = detail::get<double>(f, int64_t(f.tellg()), "adam eps");
        a.t = int64_t(detail::get<uint64_t>(f, int64_t(f.tellg()), "adam t"));
        const auto k = detail::get<uint32_t>(f, int64_t(f.tellg()), "adam slot count");
        for (uint32_t i = 0; i < k; ++i) {
            typename AdamState<T>::Slot s;
            s.name = detail::get_name(f);
            s.m = load_sft1<T>(f, int64_t(f.tellg())).values();
            s.v = load_sft1<T>(f, int64_t(f.tellg())).values();
            a.slots.push_back(std::move(s));
        }
        ck.adam = std::move(a);
    }
    ck.seed = detail::get<uint64_t>(f, int64_t(f.tellg()), "seed");
    return ck;
}

// Names the first differing field; used before resuming training.
inline void require_same_config(const ModelConfig& expected, const ModelConfig& actual) {
    auto differ = [](const std::string& f, auto a, auto b) {
        std::ostringstream os;
        os << "checkpoint config mismatch at field " << f << ": " << a << " != " << b;
        throw ConfigError(os.str());
    };
    if (expected.h != actual.h) differ("h", actual.h, expected.h);
    if (expected.w != actual.w) differ("w", actual.w, expected.w);
    if (expected.c != actual.c) differ("c", actual.c, expected.c);
    if (expected.window != actual.window) differ("window", actual.window, expected.window);
    for (int i = 0; i < 4; ++i)
        if (expected.heads[size_t(i)] != actual.heads[size_t(i)])
            differ("heads[" + std::to_string(i) + "]", actual.heads[size_t(i)],
                   expected.heads[size_t(i)]);
    if (expected.mlp_ratio != actual.mlp_ratio) differ("mlp_ratio", actual.mlp_ratio, expected.mlp_ratio);
    for (int i = 0; i < 3; ++i)
        if (expected.sfea_channels[size_t(i)] != actual.sfea_channels[size_t(i)])
            differ("sfea_channels[" + std::to_string(i) + "]", actual.sfea_channels[size_t(i)],
                   expected.sfea_channels[size_t(i)]);
    if (expected.out_channels != actual.out_channels)
        differ("out_channels", actual.out_channels, expected.out_channels);
    if (expected.use_rel_pos_bias != actual.use_rel_pos_bias)
        differ("use_rel_pos_bias", actual.use_rel_pos_bias, expected.use_rel_pos_bias);
    if (expected.final_cout != actual.final_cout) differ("final_cout", actual.final_cout, expected.final_cout);
    if (expected.use_gelu_tanh != actual.use_gelu_tanh)
        differ("use_gelu_tanh", actual.use_gelu_tanh, expected.use_gelu_tanh);
}

// Rebuilds a model from a checkpoint, verifying the stored tensor list
// matches the config's parameter table exactly.
template <class T>
Model<T> restore_model(const Checkpoint<T>& ck) {
    Model<T> m = build<T>(ck.cfg, ck.seed);
    if (ck.tensors.size() != m.store.entries.size())
        throw FormatError("checkpoint holds " + std::to_string(ck.tensors.size()) +
                          " tensors, config expects " + std::to_string(m.store.entries.size()));
    for (size_t i = 0; i < ck.tensors.size(); ++i) {
        auto& e = m.store.entries[i];
        const auto& [name, t] = ck.tensors[i];
        if (name != e.name)
            throw FormatError("checkpoint tensor '" + name + "' where '" + e.name + "' expected");
        if (t.shape() != e.tensor.shape())
            throw ConfigError("checkpoint config mismatch at tensor '" + name + "': extent " +
                              shape_str(t.shape()) + " != " + shape_str(e.tensor.shape()));
        e.tensor.values() = t.values();
    }
    return m;
}

// ---------------------------------------------------------------------------
// Dimension audit: the stage and SFEA ladders plus the parameter count,
// computed from config arithmetic alone (no activations are allocated).
// ---------------------------------------------------------------------------

inline std::string audit_report(const ModelConfig& cfg) {
    validate_config(cfg);
    auto plans = stage_plans(cfg);
    auto sfea = sfea_plans(cfg);
    std::ostringstream os;
    os << "swin-sftnet dimension audit\n";
    os << "input: " << cfg.h << "x" << cfg.w << "x3, patch 4, C=" << cfg.c << ", window "
       << cfg.window << "\n";
    os << "encoder:\n";
    for (int s = 0; s < 3; ++s) {
        const auto& p = plans[size_t(s)];
        os << "  stage" << s + 1 << ": tokens " << p.tokens << "x" << p.channels << " (grid "
           << p.grid << ", window " << p.window << ", shift " << p.shift << ", heads " << p.heads
           << ")\n";
    }
    os << "  bottleneck: tokens " << plans[3].tokens << "x" << plans[3].channels << " (grid "
       << plans[3].grid << ", window " << plans[3].window << ", shift " << plans[3].shift
       << ", heads " << plans[3].heads << ")\n";
    os << "decoder:\n";
    for (int i = 0; i < 3; ++i) {
        const auto& p = plans[size_t(2 - i)];
        os << "  stage" << i + 1 << ": tokens " << p.tokens << "x" << p.channels << "\n";
    }
    os << "sfea:\n";
    for (int l = 0; l < 3; ++l)
        os << "  level" << l + 1 << ": " << sfea[size_t(l)].side << "x" << sfea[size_t(l)].side
           << "x" << sfea[size_t(l)].quarter << "\n";
    os << "output: " << cfg.h << "x" << cfg.w << "x" << cfg.out_channels << " (final expand depth "
       << cfg.final_cout << ")\n";
    os << "parameters: " << parameter_count(cfg) << "\n";
    return os.str();
}

}  // namespace sft
