#pragma once

#include "sftnet/model.hpp"
#include "sftnet/tensor.hpp"

namespace sft {

struct LossWeights {
    double lambda_bce = 0.4;
    double lambda_dice = 0.6;
    double lambda_emb = 0.01;

    void validate() const {
        for (double l : {lambda_bce, lambda_dice, lambda_emb})
            if (!(l >= 0.0) || !std::isfinite(l))
                throw ParameterError("loss weights must be finite and >= 0");
    }
};

// Mean binary cross-entropy over all elements; probabilities are clamped to
// [1e-7, 1 - 1e-7] so the loss stays finite for hard 0/1 predictions.
template <class T>
Tensor<T> bce_loss(const Tensor<T>& p, const Tensor<T>& y) {
    if (p.shape() != y.shape())
        throw DimensionError("bce_loss shape mismatch: " + shape_str(p.shape()) + " vs " +
                             shape_str(y.shape()));
    const Tensor<T> pc = clamp(p, 1e-7, 1.0 - 1e-7);
    Tensor<T> pos = mul(y, log_op(pc));
    Tensor<T> neg_ = mul(add_scalar(sft::neg(y), 1.0), log_op(add_scalar(sft::neg(pc), 1.0)));
    return sft::neg(mean_all(add(pos, neg_)));
}

// 1 - (2*sum(p*y) + eps) / (sum(p) + sum(y) + eps), over all elements of a
// single sample.
template <class T>
Tensor<T> dice_loss(const Tensor<T>& p, const Tensor<T>& y, double epsilon = 1.0) {
    if (p.shape() != y.shape())
        throw DimensionError("dice_loss shape mismatch: " + shape_str(p.shape()) + " vs " +
                             shape_str(y.shape()));
    Tensor<T> num = add_scalar(scale(sum_all(mul(p, y)), 2.0), epsilon);
    Tensor<T> den = add_scalar(add(sum_all(p), sum_all(y)), epsilon);
    return add_scalar(sft::neg(div(num, den)), 1.0);
}

// Per-sample dice averaged over the leading batch dim.
template <class T>
Tensor<T> dice_loss_batched(const Tensor<T>& p, const Tensor<T>& y, double epsilon = 1.0) {
    if (p.shape() != y.shape())
        throw DimensionError("dice_loss shape mismatch: " + shape_str(p.shape()) + " vs " +
                             shape_str(y.shape()));
    if (p.rank() < 2) return dice_loss(p, y, epsilon);
    const int64_t B = p.shape()[0];
    Tensor<T> acc = Tensor<T>::scalar(T(0));
    for (int64_t b = 0; b < B; ++b)
        acc = add(acc, dice_loss(narrow(p, 0, b, 1), narrow(y, 0, b, 1), epsilon));
    return scale(acc, 1.0 / double(B));
}

// Sum over the k embedding pairs of the mean absolute difference (the L1
// norm scaled by 1/Q with Q the pair's element count).
template <class T>
Tensor<T> embedding_loss(const ForwardTrace<T>& trace) {
    Tensor<T> acc = Tensor<T>::scalar(T(0));
    for (size_t i = 0; i < trace.encoder_embeddings.size(); ++i) {
        const Tensor<T>& e = trace.encoder_embeddings[i];
        const Tensor<T>& d = trace.decoder_embeddings[i];
        if (e.shape() != d.shape())
            throw DimensionError("embedding pair " + std::to_string(i + 1) + " shape mismatch: " +
                                 shape_str(e.shape()) + " vs " + shape_str(d.shape()));
        acc = add(acc, mean_all(abs_op(sub(e, d))));
    }
    return acc;
}

template <class T>
struct LossBreakdown {
    Tensor<T> bce, dice, emb, total;
};

template <class T>
LossBreakdown<T> total_loss(const Tensor<T>& p, const Tensor<T>& y, const ForwardTrace<T>& trace,
                            const LossWeights& w) {
    w.validate();
    LossBreakdown<T> out;
    out.bce = bce_loss(p, y);
    out.dice = dice_loss_batched(p, y);
    out.emb = embedding_loss(trace);
    out.total = add(add(scale(out.dice, w.lambda_dice), scale(out.bce, w.lambda_bce)),
                    scale(out.emb, w.lambda_emb));
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation metrics from confusion counts. A zero denominator means the
// quantity is vacuous for this image; it scores 1 when the prediction also
// leaves nothing to get wrong, else 0.
// ---------------------------------------------------------------------------

struct ConfusionCounts {
    int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    int64_t total() const { return tp + fp + fn + tn; }
};

struct SegMetrics {
    double dice = 0, miou = 0, sen = 0, spe = 0;
    ConfusionCounts counts;
};

inline SegMetrics metrics_from_counts(const ConfusionCounts& c) {
    SegMetrics m;
    m.counts = c;
    m.dice = (2 * c.tp + c.fp + c.fn) > 0 ? double(2 * c.tp) / double(2 * c.tp + c.fp + c.fn) : 1.0;
    m.miou = (c.tp + c.fp + c.fn) > 0 ? double(c.tp) / double(c.tp + c.fp + c.fn) : 1.0;
    m.sen = (c.tp + c.fn) > 0 ? double(c.tp) / double(c.tp + c.fn) : (c.fp == 0 ? 1.0 : 0.0);
    m.spe = (c.tn + c.fp) > 0 ? double(c.tn) / double(c.tn + c.fp) : (c.fn == 0 ? 1.0 : 0.0);
    return m;
}

template <class T>
SegMetrics seg_metrics(const Tensor<T>& pred_mask, const Tensor<T>& y) {
    if (pred_mask.shape() != y.shape())
        throw DimensionError("seg_metrics shape mismatch: " + shape_str(pred_mask.shape()) + " vs " +
                             shape_str(y.shape()));
    ConfusionCounts c;
    const auto& p = pred_mask.values();
    const auto& g = y.values();
    for (size_t i = 0; i < p.size(); ++i) {
        if ((p[i] != T(0) && p[i] != T(1)) || (g[i] != T(0) && g[i] != T(1)))
            throw ParameterError("seg_metrics requires binary masks");
        const bool pp = p[i] == T(1), gg = g[i] == T(1);
        if (pp && gg) ++c.tp;
        else if (pp && !gg) ++c.fp;
        else if (!pp && gg) ++c.fn;
        else ++c.tn;
    }
    return metrics_from_counts(c);
}

}  // namespace sft
