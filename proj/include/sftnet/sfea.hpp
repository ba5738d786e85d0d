#pragma once

#include "sftnet/ops.hpp"
#include "sftnet/patch_ops.hpp"

namespace sft {

// Spatial feature expansion and aggregation over a skip connection:
// a (B, D, C) sequence is expanded to a (side, side, C/4) spatial map via a
// 4x4 patch expansion, refined by two conv blocks whose residual additions
// both anchor to the expanded map, then re-linearized by a 4x4 patch
// extraction and an embedding projection back to (B, D, C).
//
//   E_PE = expand(skip)
//   E_C1 = BN(ReLU(Conv3x3(E_PE))) + E_PE
//   E_C2 = BN(ReLU(Conv3x3(E_C1))) + E_PE
//   out  = embed(extract(E_C2))

template <class T>
struct BatchNormParams {
    Tensor<T> gamma, beta;
    Tensor<T> running_mean, running_var;  // buffers, mutated in train mode
    double momentum = 0.9;
    double eps = 1e-5;
};

template <class T>
struct SfeaParams {
    Tensor<T> expand_w, expand_b;  // (C, 4C): 16 * (C/4) values per token
    Tensor<T> conv1_w, conv1_b;    // (3, 3, C/4, C/4)
    BatchNormParams<T> bn1;
    Tensor<T> conv2_w, conv2_b;
    BatchNormParams<T> bn2;
    Tensor<T> embed_w, embed_b;    // (4C, C)
};

enum class RunMode { Train, Eval };

template <class T>
Tensor<T> sfea_forward(const Tensor<T>& skip, SfeaParams<T>& p, RunMode mode) {
    if (skip.rank() != 3)
        throw DimensionError("sfea_forward expects (B,D,C), got " + shape_str(skip.shape()));
    const int64_t B = skip.shape()[0], D = skip.shape()[1], C = skip.shape()[2];
    if (C % 4 != 0) throw DimensionError("sfea_forward: channels must be divisible by 4");
    const int64_t grid_side = int64_t(std::llround(std::sqrt(double(D))));
    if (grid_side * grid_side != D)
        throw DimensionError("sfea_forward: sequence length " + std::to_string(D) + " is not square");
    if (p.expand_w.shape() != Shape{C, 4 * C})
        throw DimensionError("sfea expand projection " + shape_str(p.expand_w.shape()) +
                             " does not match channels " + std::to_string(C));

    const int64_t cq = C / 4;
    PatchGrid grid{grid_side, grid_side, 4, C};

    // 4x4 patch expansion into spatial form: (B, side, side, C/4)
    Tensor<T> e = linear(skip, p.expand_w, p.expand_b);      // (B, D, 16*(C/4))
    Tensor<T> e_pe = patch_unextract(e, grid_side, grid_side, 4, cq);

    const bool train = mode == RunMode::Train;
    Tensor<T> c1 = conv2d(e_pe, p.conv1_w, p.conv1_b, 1, Padding::Same);
    c1 = batch_norm(relu(c1), p.bn1.gamma, p.bn1.beta, p.bn1.running_mean, p.bn1.running_var,
                    p.bn1.momentum, p.bn1.eps, train);
    Tensor<T> e_c1 = add(c1, e_pe);

    Tensor<T> c2 = conv2d(e_c1, p.conv2_w, p.conv2_b, 1, Padding::Same);
    c2 = batch_norm(relu(c2), p.bn2.gamma, p.bn2.beta, p.bn2.running_mean, p.bn2.running_var,
                    p.bn2.momentum, p.bn2.eps, train);
    Tensor<T> e_c2 = add(c2, e_pe);

    Tensor<T> e_t = patch_extract(e_c2, 4);                  // (B, D, 4C)
    return linear(e_t, p.embed_w, p.embed_b);                // (B, D, C)
}

// Channel concatenation, SFEA channels first, then the decoder's.
template <class T>
Tensor<T> concat_with_decoder(const Tensor<T>& sfea_out, const Tensor<T>& dec_out) {
    if (sfea_out.shape() != dec_out.shape())
        throw DimensionError("concat_with_decoder shape mismatch: " + shape_str(sfea_out.shape()) +
                             " vs " + shape_str(dec_out.shape()));
    return concat(sfea_out, dec_out, 2);
}

}  // namespace sft
