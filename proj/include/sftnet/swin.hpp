#pragma once

#include "sftnet/ops.hpp"
#include "sftnet/patch_ops.hpp"

namespace sft {

// Window-based multi-head self-attention over token grids, with the
// shifted-window variant: cyclic shift by `shift`, per-window attention with
// a mask that excludes token pairs originating from different pre-shift
// regions, then the inverse shift.

struct WindowSpec {
    int64_t window = 8;
    int64_t shift = 0;  // 0 for W-MSA, window/2 for SW-MSA
    int64_t heads = 1;

    void validate(int64_t channels, int64_t grid) const {
        if (window < 1 || shift < 0 || shift >= window)
            throw ParameterError("window spec requires 0 <= shift < window");
        if (heads < 1 || channels % heads != 0)
            throw ParameterError("head count " + std::to_string(heads) + " must divide channels " +
                                 std::to_string(channels));
        if (grid % window != 0)
            throw DimensionError("grid side " + std::to_string(grid) + " not divisible by window " +
                                 std::to_string(window));
    }
};

template <class T>
struct AttnParams {
    Tensor<T> qkv_w;   // (C, 3C)
    Tensor<T> qkv_b;   // (3C)
    Tensor<T> proj_w;  // (C, C)
    Tensor<T> proj_b;  // (C)
    Tensor<T> rel_bias;  // ((2w-1)^2, heads), undefined when bias is disabled
};

// One attention-or-MLP pair of Eq-style sub-block parameters.
template <class T>
struct SwinSubBlockParams {
    Tensor<T> ln1_gamma, ln1_beta;
    AttnParams<T> attn;
    Tensor<T> ln2_gamma, ln2_beta;
    Tensor<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

// The full transformer unit: W-MSA sub-block followed by SW-MSA sub-block.
template <class T>
struct SwinBlockParams {
    SwinSubBlockParams<T> sub1;
    SwinSubBlockParams<T> sub2;
};

// (B, L, C) -> (B * nw, window^2, C); exact permutation.
template <class T>
Tensor<T> window_partition(const Tensor<T>& x, const PatchGrid& grid, int64_t window) {
    detail::check_seq(x, grid, "window_partition");
    const int64_t G = grid.h_patches;
    if (grid.w_patches != G) throw DimensionError("window_partition expects a square grid");
    if (G % window != 0)
        throw DimensionError("grid side " + std::to_string(G) + " not divisible by window " +
                             std::to_string(window));
    const int64_t B = x.shape()[0], C = x.shape()[2], n = G / window;
    Tensor<T> t = reshape(x, {B, n, window, n, window, C});
    t = permute(t, {0, 1, 3, 2, 4, 5});
    return reshape(t, {B * n * n, window * window, C});
}

template <class T>
Tensor<T> window_reverse(const Tensor<T>& wins, const PatchGrid& grid, int64_t window) {
    const int64_t G = grid.h_patches;
    const int64_t n = G / window;
    if (wins.rank() != 3 || wins.shape()[1] != window * window || wins.shape()[0] % (n * n) != 0)
        throw DimensionError("window_reverse: shape " + shape_str(wins.shape()) + " does not match grid");
    const int64_t B = wins.shape()[0] / (n * n), C = wins.shape()[2];
    Tensor<T> t = reshape(wins, {B, n, n, window, window, C});
    t = permute(t, {0, 1, 3, 2, 4, 5});
    return reshape(t, {B, G * G, C});
}

// Relative-position pair index for a window: dy,dx in (-w, w) mapped to rows
// of the (2w-1)^2 bias table.
inline std::vector<int> rel_pos_index(int64_t window) {
    const int64_t S = window * window;
    std::vector<int> idx(size_t(S * S));
    for (int64_t i = 0; i < S; ++i)
        for (int64_t j = 0; j < S; ++j) {
            const int64_t dy = i / window - j / window + window - 1;
            const int64_t dx = i % window - j % window + window - 1;
            idx[size_t(i * S + j)] = int(dy * (2 * window - 1) + dx);
        }
    return idx;
}

// Attention keep-mask for the shifted layout: position (i, j) of the shifted
// grid belongs to region r(i)*3 + r(j) where r cuts at G-window and G-shift;
// a pair may attend only when both tokens share a region (the window then
// never spans a wrap-around seam between them).
inline std::vector<uint8_t> shift_attention_mask(int64_t grid, int64_t window, int64_t shift) {
    const int64_t n = grid / window;
    const int64_t S = window * window;
    auto region = [&](int64_t v) {
        if (v < grid - window) return 0;
        if (v < grid - shift) return 1;
        return 2;
    };
    std::vector<int> id(size_t(grid * grid));
    for (int64_t y = 0; y < grid; ++y)
        for (int64_t x = 0; x < grid; ++x) id[size_t(y * grid + x)] = region(y) * 3 + region(x);
    std::vector<uint8_t> keep(size_t(n * n * S * S));
    for (int64_t wy = 0; wy < n; ++wy)
        for (int64_t wx = 0; wx < n; ++wx) {
            const int64_t w = wy * n + wx;
            for (int64_t i = 0; i < S; ++i)
                for (int64_t j = 0; j < S; ++j) {
                    const int64_t yi = wy * window + i / window, xi = wx * window + i % window;
                    const int64_t yj = wy * window + j / window, xj = wx * window + j % window;
                    keep[size_t((w * S + i) * S + j)] =
                        id[size_t(yi * grid + xi)] == id[size_t(yj * grid + xj)] ? 1 : 0;
                }
        }
    return keep;
}

// Debug capture of the post-softmax attention probabilities.
template <class T>
struct AttnDebug {
    Tensor<T> probs;  // (B*nw, heads, S, S)
};

// Per-window scaled dot-product attention on a (B, L, C) sequence.
template <class T>
Tensor<T> window_attention(const Tensor<T>& x, const AttnParams<T>& p, const WindowSpec& spec,
                           const PatchGrid& grid, AttnDebug<T>* debug = nullptr) {
    detail::check_seq(x, grid, "window_attention");
    const int64_t B = x.shape()[0], C = x.shape()[2];
    const int64_t G = grid.h_patches;
    spec.validate(C, G);
    const int64_t w = spec.window, S = w * w, heads = spec.heads, d = C / heads;
    const int64_t n = G / w, nw = n * n;

    Tensor<T> t = x;
    if (spec.shift > 0) {
        t = reshape(t, {B, G, G, C});
        t = roll_hw(t, -spec.shift, -spec.shift);
        t = reshape(t, {B, G * G, C});
    }
    PatchGrid g2{G, G, grid.patch_size, C};
    Tensor<T> wins = window_partition(t, g2, w);  // (B*nw, S, C)

    Tensor<T> qkv = linear(wins, p.qkv_w, p.qkv_b);          // (B*nw, S, 3C)
    auto split_heads = [&](Tensor<T> part) {
        part = reshape(part, {B * nw, S, heads, d});
        return permute(part, {0, 2, 1, 3});                  // (B*nw, heads, S, d)
    };
    Tensor<T> q = split_heads(narrow(qkv, 2, 0, C));
    Tensor<T> k = split_heads(narrow(qkv, 2, C, C));
    Tensor<T> v = split_heads(narrow(qkv, 2, 2 * C, C));

    Tensor<T> scores = scale(matmul(q, k, /*transpose_b=*/true), 1.0 / std::sqrt(double(d)));
    if (p.rel_bias.defined()) {
        Tensor<T> bias = gather_rel_bias(p.rel_bias, rel_pos_index(w), S);  // (heads, S, S)
        scores = add(scores, bias);
    }
    Tensor<T> probs;
    if (spec.shift > 0) {
        probs = masked_softmax_window(scores, shift_attention_mask(G, w, spec.shift), nw);
    } else {
        probs = softmax_lastdim(scores);
    }
    if (debug) debug->probs = probs;

    Tensor<T> ctx = matmul(probs, v);                        // (B*nw, heads, S, d)
    ctx = permute(ctx, {0, 2, 1, 3});
    ctx = reshape(ctx, {B * nw, S, C});
    Tensor<T> out = linear(ctx, p.proj_w, p.proj_b);
    out = window_reverse(out, g2, w);
    if (spec.shift > 0) {
        out = reshape(out, {B, G, G, C});
        out = roll_hw(out, spec.shift, spec.shift);
        out = reshape(out, {B, G * G, C});
    }
    return out;
}

// One pre-norm sub-block: x + Attn(LN(x)), then x + MLP(LN(x)).
template <class T>
Tensor<T> swin_sub_block(const Tensor<T>& x, const SwinSubBlockParams<T>& p, const WindowSpec& spec,
                         const PatchGrid& grid, bool gelu_tanh = false, double ln_eps = 1e-5) {
    Tensor<T> h = add(x, window_attention(layer_norm(x, p.ln1_gamma, p.ln1_beta, ln_eps), p.attn,
                                          spec, grid));
    Tensor<T> m = linear(layer_norm(h, p.ln2_gamma, p.ln2_beta, ln_eps), p.mlp_w1, p.mlp_b1);
    m = linear(gelu(m, gelu_tanh), p.mlp_w2, p.mlp_b2);
    return add(h, m);
}

// The full unit: W-MSA sub-block then SW-MSA sub-block (shift from spec).
template <class T>
Tensor<T> swin_block(const Tensor<T>& x, const SwinBlockParams<T>& p, const WindowSpec& spec,
                     const PatchGrid& grid, bool gelu_tanh = false) {
    WindowSpec first = spec;
    first.shift = 0;
    Tensor<T> h = swin_sub_block(x, p.sub1, first, grid, gelu_tanh);
    return swin_sub_block(h, p.sub2, spec, grid, gelu_tanh);
}

}  // namespace sft
