#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sftnet/tensor.hpp"

namespace sft {

// Named, ordered collection of model tensors. Trainable entries receive
// gradients and Adam updates; buffers (batch-norm running stats) are carried
// along for checkpointing only. Registration order is the canonical order
// everywhere (init, checkpoints, audits).
template <class T>
struct ParamStore {
    struct Entry {
        std::string name;
        Tensor<T> tensor;
        bool trainable = true;
    };
    std::vector<Entry> entries;

    Tensor<T>& add(const std::string& name, Tensor<T> t, bool trainable = true) {
        for (const auto& e : entries)
            if (e.name == name) throw ParameterError("duplicate parameter name: " + name);
        t.set_requires_grad(trainable);
        entries.push_back({name, std::move(t), trainable});
        return entries.back().tensor;
    }

    Tensor<T>* find(const std::string& name) {
        for (auto& e : entries)
            if (e.name == name) return &e.tensor;
        return nullptr;
    }

    void zero_grad() {
        for (auto& e : entries)
            if (e.trainable) e.tensor.zero_grad();
    }

    int64_t trainable_count() const {
        int64_t n = 0;
        for (const auto& e : entries)
            if (e.trainable) n += e.tensor.size();
        return n;
    }
};

// Adam with bias correction. Moment buffers are kept per parameter in store
// order; t is the shared step count.
template <class T>
struct AdamState {
    double alpha = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t t = 0;
    struct Slot {
        std::string name;
        std::vector<T> m;
        std::vector<T> v;
    };
    std::vector<Slot> slots;

    static AdamState init(const ParamStore<T>& params, double alpha = 1e-4, double beta1 = 0.9,
                          double beta2 = 0.999, double eps = 1e-8) {
        AdamState s;
        s.alpha = alpha;
        s.beta1 = beta1;
        s.beta2 = beta2;
        s.eps = eps;
        for (const auto& e : params.entries)
            if (e.trainable)
                s.slots.push_back({e.name, std::vector<T>(size_t(e.tensor.size()), T(0)),
                                   std::vector<T>(size_t(e.tensor.size()), T(0))});
        return s;
    }
};

template <class T>
void adam_step(ParamStore<T>& params, AdamState<T>& state) {
    size_t si = 0;
    state.t += 1;
    const T b1 = T(state.beta1), b2 = T(state.beta2);
    const T bc1 = T(1) - T(std::pow(state.beta1, double(state.t)));
    const T bc2 = T(1) - T(std::pow(state.beta2, double(state.t)));
    const T lr = T(state.alpha), eps = T(state.eps);
    for (auto& e : params.entries) {
        if (!e.trainable) continue;
        if (si >= state.slots.size() || state.slots[si].name != e.name)
            throw ParameterError("adam state does not match parameter store at '" + e.name + "'");
        auto& slot = state.slots[si++];
        if (!e.tensor.has_grad())
            throw ParameterError("missing gradient for parameter '" + e.name + "'");
        const auto& g = e.tensor.grad();
        auto& w = e.tensor.values();
        if (slot.m.size() != g.size())
            throw ParameterError("adam moment size mismatch for '" + e.name + "'");
        for (size_t i = 0; i < w.size(); ++i) {
            slot.m[i] = b1 * slot.m[i] + (T(1) - b1) * g[i];
            slot.v[i] = b2 * slot.v[i] + (T(1) - b2) * g[i] * g[i];
            const T mhat = slot.m[i] / bc1;
            const T vhat = slot.v[i] / bc2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
        check_finite("adam_step", w);
    }
}

}  // namespace sft
