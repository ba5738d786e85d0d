#pragma once

#include "sftnet/ops.hpp"

namespace sft {

// Sequence <-> spatial transforms. Layout conventions, used consistently so
// constructed-weight tests are portable:
//   - spatial tensors are (B, H, W, C) row-major, sequences are (B, L, C)
//     with L enumerated in (row, col) raster order;
//   - a flattened patch orders its values (row, col, channel);
//   - patch_merge concatenates the 2x2 neighborhood in raster order
//     (0,0), (0,1), (1,0), (1,1), channels last.

struct PatchGrid {
    int64_t h_patches = 0;
    int64_t w_patches = 0;
    int64_t patch_size = 1;
    int64_t channels = 0;

    int64_t tokens() const { return h_patches * w_patches; }
};

namespace detail {
template <class T>
void check_seq(const Tensor<T>& x, const PatchGrid& grid, const char* op) {
    if (x.rank() != 3)
        throw DimensionError(std::string(op) + " expects (B,L,C), got " + shape_str(x.shape()));
    if (x.shape()[1] != grid.tokens())
        throw DimensionError(std::string(op) + ": sequence length " + std::to_string(x.shape()[1]) +
                             " does not match grid " + std::to_string(grid.h_patches) + "x" +
                             std::to_string(grid.w_patches));
    if (grid.channels > 0 && x.shape()[2] != grid.channels)
        throw DimensionError(std::string(op) + ": channel count " + std::to_string(x.shape()[2]) +
                             " does not match grid channels " + std::to_string(grid.channels));
}
}  // namespace detail

// (B,H,W,C) -> (B, (H/p)(W/p), p*p*C), pure rearrangement.
template <class T>
Tensor<T> patch_extract(const Tensor<T>& x, int64_t patch = 4) {
    if (x.rank() != 4)
        throw DimensionError("patch_extract expects (B,H,W,C), got " + shape_str(x.shape()));
    const int64_t B = x.shape()[0], H = x.shape()[1], W = x.shape()[2], C = x.shape()[3];
    if (patch < 1 || H % patch != 0 || W % patch != 0)
        throw DimensionError("patch_extract: extents " + shape_str(x.shape()) +
                             " not divisible by patch " + std::to_string(patch));
    const int64_t gh = H / patch, gw = W / patch;
    Tensor<T> t = reshape(x, {B, gh, patch, gw, patch, C});
    t = permute(t, {0, 1, 3, 2, 4, 5});
    return reshape(t, {B, gh * gw, patch * patch * C});
}

// Inverse of patch_extract: (B, L, p*p*C) -> (B, H, W, C).
template <class T>
Tensor<T> patch_unextract(const Tensor<T>& x, int64_t gh, int64_t gw, int64_t patch, int64_t C) {
    if (x.rank() != 3 || x.shape()[1] != gh * gw || x.shape()[2] != patch * patch * C)
        throw DimensionError("patch_unextract: shape " + shape_str(x.shape()) + " does not match grid");
    const int64_t B = x.shape()[0];
    Tensor<T> t = reshape(x, {B, gh, gw, patch, patch, C});
    t = permute(t, {0, 1, 3, 2, 4, 5});
    return reshape(t, {B, gh * patch, gw * patch, C});
}

// (B,H,W,Cin) -> (B, (H/p)(W/p), C): flatten patches then project with the
// learned (p*p*Cin, C) map.
template <class T>
Tensor<T> patch_embed(const Tensor<T>& img, const Tensor<T>& w, const Tensor<T>& b, int64_t patch = 4) {
    Tensor<T> tokens = patch_extract(img, patch);
    if (w.rank() != 2 || w.shape()[0] != tokens.shape()[2])
        throw DimensionError("patch_embed projection " + shape_str(w.shape()) + " does not accept " +
                             std::to_string(tokens.shape()[2]) + "-wide patches");
    return linear(tokens, w, b);
}

// (B,L,C) -> (B, L/4, 2C): concatenate each 2x2 token neighborhood (4C wide)
// and project with the learned (4C, 2C) map. Halves each grid side.
template <class T>
Tensor<T> patch_merge(const Tensor<T>& x, const PatchGrid& grid, const Tensor<T>& w, const Tensor<T>& b) {
    detail::check_seq(x, grid, "patch_merge");
    if (grid.h_patches % 2 != 0 || grid.w_patches % 2 != 0)
        throw DimensionError("patch_merge: grid " + std::to_string(grid.h_patches) + "x" +
                             std::to_string(grid.w_patches) + " has an odd side");
    const int64_t B = x.shape()[0], C = x.shape()[2];
    const int64_t gh = grid.h_patches, gw = grid.w_patches;
    Tensor<T> t = reshape(x, {B, gh / 2, 2, gw / 2, 2, C});
    t = permute(t, {0, 1, 3, 2, 4, 5});
    t = reshape(t, {B, gh * gw / 4, 4 * C});
    if (w.rank() != 2 || w.shape()[0] != 4 * C)
        throw DimensionError("patch_merge projection " + shape_str(w.shape()) + " must be (4C,2C)");
    return linear(t, w, b);
}

// (B,L,C) -> (B, 4L, C/2): project C -> 2C then scatter each token into a
// 2x2 spatial block of depth C/2. Doubles each grid side.
template <class T>
Tensor<T> patch_expand(const Tensor<T>& x, const PatchGrid& grid, const Tensor<T>& w, const Tensor<T>& b) {
    detail::check_seq(x, grid, "patch_expand");
    const int64_t B = x.shape()[0], C = x.shape()[2];
    if (C % 2 != 0)
        throw DimensionError("patch_expand: channel count " + std::to_string(C) + " must be even");
    if (w.rank() != 2 || w.shape()[0] != C || w.shape()[1] != 2 * C)
        throw DimensionError("patch_expand projection " + shape_str(w.shape()) + " must be (C,2C)");
    const int64_t gh = grid.h_patches, gw = grid.w_patches;
    Tensor<T> t = linear(x, w, b);                      // (B, L, 2C)
    t = reshape(t, {B, gh, gw, 2, 2, C / 2});
    t = permute(t, {0, 1, 3, 2, 4, 5});                 // (B, gh, 2, gw, 2, C/2)
    return reshape(t, {B, 4 * gh * gw, C / 2});
}

// (B,L,C') -> (B, H, W, C_out): project C' -> 16*C_out then scatter each
// token into a 4x4 spatial block. Restores full resolution (H = 4*gh).
template <class T>
Tensor<T> final_patch_expand(const Tensor<T>& x, const PatchGrid& grid, const Tensor<T>& w,
                             const Tensor<T>& b, int64_t c_out) {
    detail::check_seq(x, grid, "final_patch_expand");
    const int64_t B = x.shape()[0], C = x.shape()[2];
    const int64_t gh = grid.h_patches, gw = grid.w_patches;
    if (w.rank() != 2 || w.shape()[0] != C || w.shape()[1] != 16 * c_out)
        throw DimensionError("final_patch_expand projection " + shape_str(w.shape()) +
                             " must be (C,16*C_out)");
    Tensor<T> t = linear(x, w, b);                      // (B, L, 16*C_out)
    t = reshape(t, {B, gh, gw, 4, 4, c_out});
    t = permute(t, {0, 1, 3, 2, 4, 5});
    return reshape(t, {B, 4 * gh, 4 * gw, c_out});
}

}  // namespace sft
