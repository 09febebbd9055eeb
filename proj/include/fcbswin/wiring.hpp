#pragma once

#include <string>
#include <unordered_map>

#include "fcbswin/params.hpp"
#include "fcbswin/tape.hpp"

namespace fcbswin {

inline int64_t pick_groups(int64_t channels, int64_t desired = 32) {
    int64_t g = std::min(desired, channels);
    while (channels % g != 0) --g;
    return g;
}

/// Bridges a ParamStore and a Tape for one forward/backward pass: parameters
/// become leaf vars on first use; write_back_grads() accumulates tape
/// gradients into the store's gradient slots.
template <typename T>
class ParamVars {
public:
    ParamVars(Tape<T>& tape, ParamStore<T>& store, bool trainable)
        : tape_(tape), store_(store), trainable_(trainable) {}

    typename Tape<T>::Var operator()(const std::string& name) {
        auto it = vars_.find(name);
        if (it != vars_.end()) return it->second;
        auto v = tape_.leaf(store_.at(name).value, trainable_);
        vars_.emplace(name, v);
        return v;
    }

    void write_back_grads() {
        for (auto& [name, v] : vars_) {
            if (!tape_.has_grad(v)) continue;
            auto& entry = store_.at(name);
            if (entry.grad.numel() != entry.value.numel())
                entry.grad = Tensor<T>::zeros(entry.value.shape);
            Tensor<T>& dst = entry.grad;
            const Tensor<T>& src = tape_.grad(v);
            for (int64_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
        }
    }

    Tape<T>& tape() { return tape_; }

private:
    Tape<T>& tape_;
    ParamStore<T>& store_;
    bool trainable_;
    std::unordered_map<std::string, typename Tape<T>::Var> vars_;
};

// ---- shared parameter construction ----

template <typename T>
void init_linear(ParamStore<T>& store, const std::string& prefix, int64_t in, int64_t out,
                 Rng& rng) {
    store.add(prefix + ".weight", trunc_normal_init<T>({in, out}, rng));
    store.add(prefix + ".bias", Tensor<T>::zeros({out}));
}

template <typename T>
void init_conv(ParamStore<T>& store, const std::string& prefix, int64_t out, int64_t in,
               int64_t k, Rng& rng, bool bias = true) {
    store.add(prefix + ".weight", trunc_normal_init<T>({out, in, k, k}, rng));
    if (bias) store.add(prefix + ".bias", Tensor<T>::zeros({out}));
}

template <typename T>
void init_norm(ParamStore<T>& store, const std::string& prefix, int64_t dim) {
    store.add(prefix + ".gamma", Tensor<T>::full({dim}, T(1)));
    store.add(prefix + ".beta", Tensor<T>::zeros({dim}));
}

}  // namespace fcbswin
