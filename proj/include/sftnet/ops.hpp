#pragma once

#include <cmath>
#include <cstring>

#include "sftnet/tensor.hpp"

namespace sft {

// ---------------------------------------------------------------------------
// Dense kernels. Loops are ordered so the inner dimension is contiguous and
// vectorizable; the reduction order is fixed, which keeps results bitwise
// reproducible run to run.
// ---------------------------------------------------------------------------

namespace detail {

// C(M,N) += or = A(M,K) * B(K,N)
template <class T>
void mm_nn(T* c, const T* a, const T* b, int64_t M, int64_t K, int64_t N, bool accumulate) {
    if (!accumulate) std::memset(c, 0, size_t(M * N) * sizeof(T));
    for (int64_t i = 0; i < M; ++i) {
        const T* arow = a + i * K;
        T* crow = c + i * N;
        for (int64_t k = 0; k < K; ++k) {
            const T av = arow[k];
            const T* brow = b + k * N;
            for (int64_t j = 0; j < N; ++j) crow[j] += av * brow[j];
        }
    }
}

// C(M,N) += or = A(M,K) * B(N,K)^T
template <class T>
void mm_nt(T* c, const T* a, const T* b, int64_t M, int64_t K, int64_t N, bool accumulate) {
    for (int64_t i = 0; i < M; ++i) {
        const T* arow = a + i * K;
        T* crow = c + i * N;
        for (int64_t j = 0; j < N; ++j) {
            const T* brow = b + j * K;
            T acc = accumulate ? crow[j] : T(0);
            for (int64_t k = 0; k < K; ++k) acc += arow[k] * brow[k];
            crow[j] = acc;
        }
    }
}

// C(K,N) += A(M,K)^T * B(M,N)
template <class T>
void mm_tn_acc(T* c, const T* a, const T* b, int64_t M, int64_t K, int64_t N) {
    for (int64_t m = 0; m < M; ++m) {
        const T* arow = a + m * K;
        const T* brow = b + m * N;
        for (int64_t k = 0; k < K; ++k) {
            const T av = arow[k];
            T* crow = c + k * N;
            for (int64_t j = 0; j < N; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace detail

// Batched matrix product. a is (..., M, K); b is either rank-2 (K, N) shared
// across the batch, or has identical leading dims. transpose_b treats b as
// (..., N, K).
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false) {
    if (a.rank() < 2 || b.rank() < 2)
        throw DimensionError("matmul requires rank >= 2: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const int64_t M = sa[sa.size() - 2], K = sa[sa.size() - 1];
    const int64_t bK = transpose_b ? sb[sb.size() - 1] : sb[sb.size() - 2];
    const int64_t N = transpose_b ? sb[sb.size() - 2] : sb[sb.size() - 1];
    if (K != bK)
        throw DimensionError("matmul inner extents differ: " + shape_str(sa) + " vs " + shape_str(sb));
    const bool shared_b = b.rank() == 2;
    int64_t batch = 1;
    for (size_t i = 0; i + 2 < sa.size(); ++i) batch *= sa[i];
    if (!shared_b) {
        if (sb.size() != sa.size())
            throw DimensionError("matmul batch rank mismatch: " + shape_str(sa) + " vs " + shape_str(sb));
        for (size_t i = 0; i + 2 < sa.size(); ++i)
            if (sa[i] != sb[i])
                throw DimensionError("matmul batch extents differ: " + shape_str(sa) + " vs " +
                                     shape_str(sb));
    }
    Shape out_shape(sa.begin(), sa.end() - 2);
    out_shape.push_back(M);
    out_shape.push_back(N);

    std::vector<T> out(size_t(batch * M * N));
    const T* ap = a.values().data();
    const T* bp = b.values().data();
    const int64_t b_sz = K * N;
    for (int64_t g = 0; g < batch; ++g) {
        const T* bg = shared_b ? bp : bp + g * b_sz;
        if (transpose_b)
            detail::mm_nt(out.data() + g * M * N, ap + g * M * K, bg, M, K, N, false);
        else
            detail::mm_nn(out.data() + g * M * N, ap + g * M * K, bg, M, K, N, false);
    }

    auto bw = [batch, M, K, N, shared_b, transpose_b](Node<T>& node) {
        auto& pa = *node.parents[0];
        auto& pb = *node.parents[1];
        if (pa.requires_grad) pa.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        const T* g = node.grad.data();
        for (int64_t q = 0; q < batch; ++q) {
            const T* gq = g + q * M * N;
            const T* aq = pa.value.data() + q * M * K;
            const T* bq = pb.value.data() + (shared_b ? 0 : q * K * N);
            T* daq = pa.requires_grad ? pa.grad.data() + q * M * K : nullptr;
            T* dbq = pb.requires_grad ? pb.grad.data() + (shared_b ? 0 : q * K * N) : nullptr;
            if (!transpose_b) {
                // dA += G * B^T ; dB += A^T * G
                if (daq) detail::mm_nt(daq, gq, bq, M, N, K, true);
                if (dbq) detail::mm_tn_acc(dbq, aq, gq, M, K, N);
            } else {
                // out = A * B^T with B (N,K): dA += G * B ; dB += G^T * A
                if (daq) detail::mm_nn(daq, gq, bq, M, N, K, true);
                if (dbq) detail::mm_tn_acc(dbq, gq, aq, M, N, K);
            }
        }
    };
    return make_op<T>("matmul", std::move(out_shape), std::move(out), {a, b}, bw);
}

// x (..., In) * w (In, Out) + b (Out). Pass an undefined bias to skip it.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
    if (w.rank() != 2) throw DimensionError("linear weight must be rank 2, got " + shape_str(w.shape()));
    if (x.shape().back() != w.shape()[0])
        throw DimensionError("linear input width " + shape_str(x.shape()) + " vs weight " +
                             shape_str(w.shape()));
    Shape flat{x.size() / x.shape().back(), x.shape().back()};
    Tensor<T> y = matmul(reshape(x, flat), w);
    Shape out_shape = x.shape();
    out_shape.back() = w.shape()[1];
    y = reshape(y, out_shape);
    if (bias.defined()) {
        if (bias.shape() != Shape{w.shape()[1]})
            throw DimensionError("linear bias shape " + shape_str(bias.shape()));
        y = add(y, bias);
    }
    return y;
}

// ---------------------------------------------------------------------------
// Softmax over the last dim, max-stabilized. Masked variant excludes entries
// outright (exact zero probability), which is how the shifted-window mask is
// realized without materializing -inf values.
// ---------------------------------------------------------------------------

namespace detail {
template <class T>
void softmax_rows(const T* x, T* p, int64_t rows, int64_t n, const uint8_t* keep,
                  int64_t mask_period) {
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = x + r * n;
        T* pr = p + r * n;
        const uint8_t* kr = keep ? keep + (r % mask_period) * n : nullptr;
        T mx = -std::numeric_limits<T>::infinity();
        for (int64_t j = 0; j < n; ++j)
            if (!kr || kr[j]) mx = std::max(mx, xr[j]);
        if (!std::isfinite(double(mx))) throw InternalError("softmax row fully masked");
        T z = T(0);
        for (int64_t j = 0; j < n; ++j) {
            const T e = (!kr || kr[j]) ? std::exp(xr[j] - mx) : T(0);
            pr[j] = e;
            z += e;
        }
        for (int64_t j = 0; j < n; ++j) pr[j] /= z;
    }
}

template <class T>
void softmax_rows_backward(const T* p, const T* g, T* dx, int64_t rows, int64_t n) {
    for (int64_t r = 0; r < rows; ++r) {
        const T* pr = p + r * n;
        const T* gr = g + r * n;
        T* dr = dx + r * n;
        T dot = T(0);
        for (int64_t j = 0; j < n; ++j) dot += pr[j] * gr[j];
        for (int64_t j = 0; j < n; ++j) dr[j] += pr[j] * (gr[j] - dot);
    }
}
}  // namespace detail

template <class T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
    if (x.rank() < 1 || x.shape().back() < 1)
        throw DimensionError("softmax requires a non-empty last dim, got " + shape_str(x.shape()));
    const int64_t n = x.shape().back();
    const int64_t rows = x.size() / n;
    std::vector<T> out(size_t(x.size()));
    detail::softmax_rows(x.values().data(), out.data(), rows, n, nullptr, 1);
    auto bw = [rows, n](Node<T>& node) {
        auto& p = *node.parents[0];
        p.ensure_grad();
        detail::softmax_rows_backward(node.value.data(), node.grad.data(), p.grad.data(), rows, n);
    };
    return make_op<T>("softmax", Shape(x.shape()), std::move(out), {x}, bw);
}

// scores: (G, heads, S, S) with G a multiple of n_windows; keep: (n_windows, S, S)
// booleans selecting which key positions each query may attend to. Window w of
// the mask applies to score batch g when g % n_windows == w... rows are
// (g, head, query) and mask rows repeat with period n_windows*S after folding
// heads, so the mapping is done explicitly below.
template <class T>
Tensor<T> masked_softmax_window(const Tensor<T>& scores, const std::vector<uint8_t>& keep,
                                int64_t n_windows) {
    if (scores.rank() != 4)
        throw DimensionError("masked softmax expects (G,heads,S,S), got " + shape_str(scores.shape()));
    const int64_t G = scores.shape()[0], H = scores.shape()[1], S = scores.shape()[2];
    if (scores.shape()[3] != S || G % n_windows != 0 ||
        int64_t(keep.size()) != n_windows * S * S)
        throw DimensionError("masked softmax mask/scores mismatch for " + shape_str(scores.shape()));
    std::vector<T> out(size_t(scores.size()));
    const T* x = scores.values().data();
    for (int64_t g = 0; g < G; ++g) {
        const uint8_t* kw = keep.data() + (g % n_windows) * S * S;
        for (int64_t h = 0; h < H; ++h) {
            const int64_t base = (g * H + h) * S * S;
            detail::softmax_rows(x + base, out.data() + base, S, S, kw, S);
        }
    }
    const int64_t rows = G * H * S;
    auto bw = [rows, S](Node<T>& node) {
        auto& p = *node.parents[0];
        p.ensure_grad();
        detail::softmax_rows_backward(node.value.data(), node.grad.data(), p.grad.data(), rows, S);
    };
    return make_op<T>("masked_softmax", Shape(scores.shape()), std::move(out), {scores}, bw);
}

// ---------------------------------------------------------------------------
// Layer norm over the last dim.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps) {
    if (eps <= 0.0) throw ParameterError("layer_norm eps must be positive");
    const int64_t C = x.shape().back();
    if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
        throw DimensionError("layer_norm affine params must have shape (" + std::to_string(C) +
                             "), got " + shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
    const int64_t rows = x.size() / C;
    std::vector<T> out(size_t(x.size()));
    std::vector<T> xhat(size_t(x.size()));
    std::vector<T> inv_std(size_t(rows));
    const T* xp = x.values().data();
    const T* gp = gamma.values().data();
    const T* bp = beta.values().data();
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = xp + r * C;
        T mean = T(0);
        for (int64_t j = 0; j < C; ++j) mean += xr[j];
        mean /= T(C);
        T var = T(0);
        for (int64_t j = 0; j < C; ++j) {
            const T d = xr[j] - mean;
            var += d * d;
        }
        var /= T(C);
        const T is = T(1) / std::sqrt(var + T(eps));
        inv_std[size_t(r)] = is;
        for (int64_t j = 0; j < C; ++j) {
            const T xh = (xr[j] - mean) * is;
            xhat[size_t(r * C + j)] = xh;
            out[size_t(r * C + j)] = gp[j] * xh + bp[j];
        }
    }
    auto bw = [rows, C, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& node) {
        auto& px = *node.parents[0];
        auto& pg = *node.parents[1];
        auto& pb = *node.parents[2];
        if (px.requires_grad) px.ensure_grad();
        if (pg.requires_grad) pg.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        const T* g = node.grad.data();
        const T* gamma = pg.value.data();
        for (int64_t r = 0; r < rows; ++r) {
            const T* gr = g + r * C;
            const T* xh = xhat.data() + size_t(r * C);
            if (pg.requires_grad)
                for (int64_t j = 0; j < C; ++j) pg.grad[size_t(j)] += gr[j] * xh[j];
            if (pb.requires_grad)
                for (int64_t j = 0; j < C; ++j) pb.grad[size_t(j)] += gr[j];
            if (px.requires_grad) {
                T m1 = T(0), m2 = T(0);  // mean(g*gamma), mean(g*gamma*xhat)
                for (int64_t j = 0; j < C; ++j) {
                    const T gg = gr[j] * gamma[j];
                    m1 += gg;
                    m2 += gg * xh[j];
                }
                m1 /= T(C);
                m2 /= T(C);
                const T is = inv_std[size_t(r)];
                for (int64_t j = 0; j < C; ++j)
                    px.grad[size_t(r * C + j)] += (gr[j] * gamma[j] - m1 - xh[j] * m2) * is;
            }
        }
    };
    return make_op<T>("layer_norm", Shape(x.shape()), std::move(out), {x, gamma, beta}, bw);
}

// ---------------------------------------------------------------------------
// GELU. Exact erf form by default; tanh approximation available.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> gelu(const Tensor<T>& x, bool tanh_approx = false) {
    if (!tanh_approx) {
        constexpr double inv_sqrt2 = 0.7071067811865476;
        constexpr double inv_sqrt_2pi = 0.3989422804014327;
        return unary_op<T>(
            "gelu", x,
            [](T v) { return T(0.5) * v * (T(1) + T(std::erf(double(v) * inv_sqrt2))); },
            [](T g, T v, T) {
                const double phi = 0.5 * (1.0 + std::erf(double(v) * inv_sqrt2));
                const double pdf = inv_sqrt_2pi * std::exp(-0.5 * double(v) * double(v));
                return g * T(phi + double(v) * pdf);
            });
    }
    constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
    return unary_op<T>(
        "gelu_tanh", x,
        [](T v) {
            const double u = k * (double(v) + 0.044715 * double(v) * double(v) * double(v));
            return T(0.5 * double(v) * (1.0 + std::tanh(u)));
        },
        [](T g, T v, T) {
            const double x3 = double(v) * double(v) * double(v);
            const double u = k * (double(v) + 0.044715 * x3);
            const double th = std::tanh(u);
            const double du = k * (1.0 + 3.0 * 0.044715 * double(v) * double(v));
            return g * T(0.5 * (1.0 + th) + 0.5 * double(v) * (1.0 - th * th) * du);
        });
}

// ---------------------------------------------------------------------------
// 2-D convolution (cross-correlation), NHWC x (kh,kw,Cin,Cout).
// ---------------------------------------------------------------------------

enum class Padding { Same, Valid };

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int64_t stride,
                 Padding padding) {
    if (x.rank() != 4) throw DimensionError("conv2d input must be (B,H,W,Cin), got " + shape_str(x.shape()));
    if (w.rank() != 4) throw DimensionError("conv2d kernel must be (kh,kw,Cin,Cout), got " + shape_str(w.shape()));
    if (stride < 1) throw ParameterError("conv2d stride must be >= 1");
    const int64_t B = x.shape()[0], H = x.shape()[1], W = x.shape()[2], Cin = x.shape()[3];
    const int64_t kh = w.shape()[0], kw = w.shape()[1], Cout = w.shape()[3];
    if (w.shape()[2] != Cin)
        throw DimensionError("conv2d channel mismatch: input " + shape_str(x.shape()) + " vs kernel " +
                             shape_str(w.shape()));
    if (bias.defined() && bias.shape() != Shape{Cout})
        throw DimensionError("conv2d bias shape " + shape_str(bias.shape()));
    if (padding == Padding::Same && (kh % 2 == 0 || kw % 2 == 0))
        throw ParameterError("conv2d same-padding requires odd kernel extents");

    int64_t OH, OW, ph, pw;
    if (padding == Padding::Same) {
        OH = (H + stride - 1) / stride;
        OW = (W + stride - 1) / stride;
        ph = (kh - 1) / 2;
        pw = (kw - 1) / 2;
    } else {
        if (H < kh || W < kw) throw DimensionError("conv2d valid padding: kernel larger than input");
        OH = (H - kh) / stride + 1;
        OW = (W - kw) / stride + 1;
        ph = pw = 0;
    }

    std::vector<T> out(size_t(B * OH * OW * Cout), T(0));
    const T* xp = x.values().data();
    const T* wp = w.values().data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t oy = 0; oy < OH; ++oy)
            for (int64_t ox = 0; ox < OW; ++ox) {
                T* orow = out.data() + ((b * OH + oy) * OW + ox) * Cout;
                for (int64_t ky = 0; ky < kh; ++ky) {
                    const int64_t iy = oy * stride - ph + ky;
                    if (iy < 0 || iy >= H) continue;
                    for (int64_t kx = 0; kx < kw; ++kx) {
                        const int64_t ix = ox * stride - pw + kx;
                        if (ix < 0 || ix >= W) continue;
                        const T* xrow = xp + ((b * H + iy) * W + ix) * Cin;
                        const T* wrow = wp + (ky * kw + kx) * Cin * Cout;
                        for (int64_t ci = 0; ci < Cin; ++ci) {
                            const T xv = xrow[ci];
                            const T* wc = wrow + ci * Cout;
                            for (int64_t co = 0; co < Cout; ++co) orow[co] += xv * wc[co];
                        }
                    }
                }
            }
    const bool has_bias = bias.defined();
    if (has_bias) {
        const T* bp = bias.values().data();
        for (int64_t i = 0; i < B * OH * OW; ++i) {
            T* orow = out.data() + i * Cout;
            for (int64_t co = 0; co < Cout; ++co) orow[co] += bp[co];
        }
    }

    std::vector<Tensor<T>> parents{x, w};
    if (has_bias) parents.push_back(bias);
    auto bw = [B, H, W, Cin, kh, kw, Cout, OH, OW, stride, ph, pw, has_bias](Node<T>& node) {
        auto& px = *node.parents[0];
        auto& pw_ = *node.parents[1];
        Node<T>* pb = has_bias ? node.parents[2].get() : nullptr;
        if (px.requires_grad) px.ensure_grad();
        if (pw_.requires_grad) pw_.ensure_grad();
        if (pb && pb->requires_grad) pb->ensure_grad();
        const T* g = node.grad.data();
        const T* xp = px.value.data();
        const T* wp = pw_.value.data();
        for (int64_t b = 0; b < B; ++b)
            for (int64_t oy = 0; oy < OH; ++oy)
                for (int64_t ox = 0; ox < OW; ++ox) {
                    const T* grow = g + ((b * OH + oy) * OW + ox) * Cout;
                    if (pb && pb->requires_grad)
                        for (int64_t co = 0; co < Cout; ++co) pb->grad[size_t(co)] += grow[co];
                    for (int64_t ky = 0; ky < kh; ++ky) {
                        const int64_t iy = oy * stride - ph + ky;
                        if (iy < 0 || iy >= H) continue;
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            const int64_t ix = ox * stride - pw + kx;
                            if (ix < 0 || ix >= W) continue;
                            const int64_t xoff = ((b * H + iy) * W + ix) * Cin;
                            const int64_t woff = (ky * kw + kx) * Cin * Cout;
                            for (int64_t ci = 0; ci < Cin; ++ci) {
                                const T* wc = wp + woff + ci * Cout;
                                if (px.requires_grad) {
                                    T acc = T(0);
                                    for (int64_t co = 0; co < Cout; ++co) acc += grow[co] * wc[co];
                                    px.grad[size_t(xoff + ci)] += acc;
                                }
                                if (pw_.requires_grad) {
                                    const T xv = xp[xoff + ci];
                                    T* dwc = pw_.grad.data() + woff + ci * Cout;
                                    for (int64_t co = 0; co < Cout; ++co) dwc[co] += grow[co] * xv;
                                }
                            }
                        }
                    }
                }
    };
    return make_op<T>("conv2d", Shape{B, OH, OW, Cout}, std::move(out), parents, bw);
}

// ---------------------------------------------------------------------------
// Batch norm over (B,H,W) per channel. Train mode normalizes with batch
// statistics (biased variance) and updates the running buffers in place:
//   running = momentum * running + (1 - momentum) * batch.
// Eval mode is a pure function of the stored stats.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, double momentum, double eps,
                     bool training) {
    if (eps <= 0.0) throw ParameterError("batch_norm eps must be positive");
    if (x.rank() != 4) throw DimensionError("batch_norm expects (B,H,W,C), got " + shape_str(x.shape()));
    const int64_t C = x.shape()[3];
    const int64_t N = x.size() / C;
    for (const Tensor<T>* t : {&gamma, &beta, &running_mean, &running_var})
        if (t->shape() != Shape{C})
            throw DimensionError("batch_norm per-channel params must have shape (" + std::to_string(C) + ")");

    const T* xp = x.values().data();
    std::vector<T> mean(size_t(C), T(0)), var(size_t(C), T(0));
    if (training) {
        for (int64_t i = 0; i < N; ++i)
            for (int64_t c = 0; c < C; ++c) mean[size_t(c)] += xp[i * C + c];
        for (int64_t c = 0; c < C; ++c) mean[size_t(c)] /= T(N);
        for (int64_t i = 0; i < N; ++i)
            for (int64_t c = 0; c < C; ++c) {
                const T d = xp[i * C + c] - mean[size_t(c)];
                var[size_t(c)] += d * d;
            }
        for (int64_t c = 0; c < C; ++c) var[size_t(c)] /= T(N);
        auto& rm = running_mean.values();
        auto& rv = running_var.values();
        for (int64_t c = 0; c < C; ++c) {
            rm[size_t(c)] = T(momentum) * rm[size_t(c)] + T(1.0 - momentum) * mean[size_t(c)];
            rv[size_t(c)] = T(momentum) * rv[size_t(c)] + T(1.0 - momentum) * var[size_t(c)];
        }
    } else {
        mean = running_mean.values();
        var = running_var.values();
    }

    std::vector<T> inv_std(size_t(C));
    for (int64_t c = 0; c < C; ++c) inv_std[size_t(c)] = T(1) / std::sqrt(var[size_t(c)] + T(eps));
    std::vector<T> out(size_t(x.size()));
    std::vector<T> xhat(size_t(x.size()));
    const T* gp = gamma.values().data();
    const T* bp = beta.values().data();
    for (int64_t i = 0; i < N; ++i)
        for (int64_t c = 0; c < C; ++c) {
            const T xh = (xp[i * C + c] - mean[size_t(c)]) * inv_std[size_t(c)];
            xhat[size_t(i * C + c)] = xh;
            out[size_t(i * C + c)] = gp[c] * xh + bp[c];
        }

    auto bw = [N, C, training, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& node) {
        auto& px = *node.parents[0];
        auto& pg = *node.parents[1];
        auto& pb = *node.parents[2];
        if (px.requires_grad) px.ensure_grad();
        if (pg.requires_grad) pg.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        const T* g = node.grad.data();
        const T* gamma = pg.value.data();
        std::vector<T> sum_g(size_t(C), T(0)), sum_gx(size_t(C), T(0));
        for (int64_t i = 0; i < N; ++i)
            for (int64_t c = 0; c < C; ++c) {
                sum_g[size_t(c)] += g[i * C + c];
                sum_gx[size_t(c)] += g[i * C + c] * xhat[size_t(i * C + c)];
            }
        if (pg.requires_grad)
            for (int64_t c = 0; c < C; ++c) pg.grad[size_t(c)] += sum_gx[size_t(c)];
        if (pb.requires_grad)
            for (int64_t c = 0; c < C; ++c) pb.grad[size_t(c)] += sum_g[size_t(c)];
        if (px.requires_grad) {
            if (training) {
                for (int64_t i = 0; i < N; ++i)
                    for (int64_t c = 0; c < C; ++c)
                        px.grad[size_t(i * C + c)] +=
                            gamma[c] * inv_std[size_t(c)] *
                            (g[i * C + c] - sum_g[size_t(c)] / T(N) -
                             xhat[size_t(i * C + c)] * sum_gx[size_t(c)] / T(N));
            } else {
                for (int64_t i = 0; i < N; ++i)
                    for (int64_t c = 0; c < C; ++c)
                        px.grad[size_t(i * C + c)] += g[i * C + c] * gamma[c] * inv_std[size_t(c)];
            }
        }
    };
    return make_op<T>("batch_norm", Shape(x.shape()), std::move(out), {x, gamma, beta}, bw);
}

// Gathers the relative-position bias table ((2w-1)^2, heads) into a
// (heads, S, S) tensor using the precomputed pair index map.
template <class T>
Tensor<T> gather_rel_bias(const Tensor<T>& table, const std::vector<int>& index, int64_t S) {
    if (table.rank() != 2) throw DimensionError("bias table must be rank 2, got " + shape_str(table.shape()));
    if (int64_t(index.size()) != S * S) throw DimensionError("bias index size mismatch");
    const int64_t R = table.shape()[0], H = table.shape()[1];
    for (int i : index)
        if (i < 0 || int64_t(i) >= R) throw DimensionError("bias index out of range");
    std::vector<T> out(size_t(H * S * S));
    const T* tp = table.values().data();
    for (int64_t h = 0; h < H; ++h)
        for (int64_t ij = 0; ij < S * S; ++ij) out[size_t(h * S * S + ij)] = tp[index[size_t(ij)] * H + h];
    auto idx = index;
    auto bw = [idx, S, H](Node<T>& node) {
        auto& p = *node.parents[0];
        p.ensure_grad();
        for (int64_t h = 0; h < H; ++h)
            for (int64_t ij = 0; ij < S * S; ++ij)
                p.grad[size_t(idx[size_t(ij)] * H + h)] += node.grad[size_t(h * S * S + ij)];
    };
    return make_op<T>("rel_bias", Shape{H, S, S}, std::move(out), {table}, bw);
}

}  // namespace sft
