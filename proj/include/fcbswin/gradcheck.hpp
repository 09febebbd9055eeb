#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "fcbswin/rng.hpp"
#include "fcbswin/tensor.hpp"

namespace fcbswin {

/// One tensor participating in a finite-difference check: the storage the
/// forward closure reads from, and the analytic gradient to compare against.
struct GradCheckSlot {
    Tensor<double>* value;
    const Tensor<double>* analytic;
};

/// Central-difference gradient check. Re-evaluates `forward` (which must
/// rebuild its tape from the current tensor contents) with +-h bumps on a
/// deterministic sample of coordinates, and returns
/// ||analytic - numeric||_2 / max(||numeric||_2, tiny) over the sample.
inline double gradcheck_rel_error(const std::vector<GradCheckSlot>& slots,
                                  const std::function<double()>& forward, double h = 1e-5,
                                  int64_t max_coords_per_tensor = 32, uint64_t sample_seed = 7) {
    double num_sq = 0, diff_sq = 0;
    Rng rng = Rng::keyed({sample_seed});
    for (const auto& slot : slots) {
        Tensor<double>& x = *slot.value;
        int64_t n = x.numel();
        std::vector<int64_t> coords;
        if (n <= max_coords_per_tensor) {
            coords.resize(n);
            for (int64_t i = 0; i < n; ++i) coords[i] = i;
        } else {
            for (int64_t k = 0; k < max_coords_per_tensor; ++k)
                coords.push_back(static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(n))));
        }
        for (int64_t i : coords) {
            double orig = x[i];
            x[i] = orig + h;
            double fp = forward();
            x[i] = orig - h;
            double fm = forward();
            x[i] = orig;
            double numeric = (fp - fm) / (2 * h);
            double analytic = (*slot.analytic)[i];
            num_sq += numeric * numeric;
            double d = analytic - numeric;
            diff_sq += d * d;
        }
    }
    return std::sqrt(diff_sq) / std::max(std::sqrt(num_sq), 1e-12);
}

struct GradCheckCase {
    std::string name;
    double rel_error;
    double tolerance;
    bool passed() const { return rel_error < tolerance; }
};

}  // namespace fcbswin

#include "fcbswin/model.hpp"

namespace fcbswin {

namespace detail {

inline Tensor<double> gc_randn(Shape s, uint64_t seed) {
    Rng rng = Rng::keyed({0x6c, seed});
    Tensor<double> t(std::move(s));
    for (auto& v : t.data) v = rng.normal();
    return t;
}

/// Gradient-checks a module: all parameters in `store` plus `input`,
/// scalarized with fixed random weights over the module output.
inline double module_gradcheck(
    ParamStore<double>& store, Tensor<double>& input,
    const std::function<Tape<double>::Var(ParamVars<double>&, Tape<double>::Var)>& run,
    int64_t max_coords, double h = 1e-5) {
    std::shared_ptr<Tensor<double>> wts;
    auto forward = [&]() {
        Tape<double> t;
        ParamVars<double> P(t, store, true);
        auto in = t.leaf(input, true);
        auto out = run(P, in);
        if (!wts) wts = std::make_shared<Tensor<double>>(gc_randn(t.val(out).shape, 1234));
        double s = 0;
        const auto& ov = t.val(out);
        for (int64_t i = 0; i < ov.numel(); ++i) s += ov[i] * (*wts)[i];
        return s;
    };
    // analytic pass
    Tape<double> t;
    ParamVars<double> P(t, store, true);
    auto in = t.leaf(input, true);
    auto out = run(P, in);
    if (!wts) wts = std::make_shared<Tensor<double>>(gc_randn(t.val(out).shape, 1234));
    auto loss = t.dot_const(out, wts);
    t.backward(loss);
    store.zero_grads();
    P.write_back_grads();
    Tensor<double> input_grad = t.grad(in);

    std::vector<GradCheckSlot> slots;
    for (auto& e : store.entries()) slots.push_back({&e.value, &e.grad});
    slots.push_back({&input, &input_grad});
    return gradcheck_rel_error(slots, forward, h, max_coords);
}

}  // namespace detail

/// The finite-difference suite over toy module configurations (64-bit).
/// Shared by the unit tests, the acceptance run and the `gradcheck` CLI.
inline std::vector<GradCheckCase> gradcheck_suite(bool include_end_to_end = true) {
    using detail::gc_randn;
    using detail::module_gradcheck;
    std::vector<GradCheckCase> cases;
    Rng rng = Rng::keyed({0xbead});

    {
        ParamStore<double> store;
        init_attention(store, "attn", 8, 2, 2, rng);
        auto x = gc_randn({2, 4, 8}, 2);
        double e = module_gradcheck(
            store, x,
            [](ParamVars<double>& P, Tape<double>::Var in) {
                return cosine_window_attention(P, "attn", in, 2, 2, 0.01);
            },
            32);
        cases.push_back({"cosine_window_attention", e, 1e-4});
    }
    {
        ParamStore<double> store;
        init_swin_block(store, "blk", 8, 2, 2, 4.0, rng);
        auto x = gc_randn({1, 4, 4, 8}, 3);
        double e = module_gradcheck(
            store, x,
            [](ParamVars<double>& P, Tape<double>::Var in) {
                return swinv2_block(P, "blk", in, 2, 2, true, 0.01);
            },
            24);
        cases.push_back({"swinv2_block", e, 1e-4});
    }
    {
        ParamStore<double> store;
        init_norm(store, "merge.norm", 16);
        init_linear(store, "merge.reduction", 16, 8, rng);
        auto x = gc_randn({1, 4, 4, 4}, 4);
        double e = module_gradcheck(
            store, x,
            [](ParamVars<double>& P, Tape<double>::Var in) {
                return patch_merge(P, "merge", in);
            },
            32);
        cases.push_back({"patch_merge", e, 1e-4});
    }
    {
        ParamStore<double> store;
        init_scse(store, "scse", 4, 2, rng);
        auto x = gc_randn({1, 4, 3, 3}, 5);
        double e = module_gradcheck(
            store, x,
            [](ParamVars<double>& P, Tape<double>::Var in) { return scse(P, "scse", in); },
            32);
        cases.push_back({"scse", e, 1e-4});
    }
    {
        ParamStore<double> store;
        init_residual_block(store, "rb", 4, 4, rng);
        auto x = gc_randn({1, 4, 5, 5}, 6);
        double e = module_gradcheck(
            store, x,
            [](ParamVars<double>& P, Tape<double>::Var in) {
                return residual_block_postnorm(P, "rb", in, 2);
            },
            32);
        cases.push_back({"residual_block_postnorm", e, 1e-4});
    }
    {
        ParamStore<double> store;
        init_decoder_block(store, "dec", 12, 8, 2, rng);
        auto prev = gc_randn({1, 8, 4, 4}, 7);
        auto skip = gc_randn({1, 4, 8, 8}, 8);
        double e = module_gradcheck(
            store, prev,
            [&skip](ParamVars<double>& P, Tape<double>::Var in) {
                auto sk = P.tape().leaf(skip, false);
                return decoder_block(P, "dec", in, sk);
            },
            16);
        cases.push_back({"decoder_block", e, 1e-4});
    }
    {
        // BCE + dice on a 2x2 toy
        Tensor<double> z = gc_randn({1, 1, 2, 2}, 9);
        auto target =
            std::make_shared<const Tensor<double>>(Tensor<double>({1, 1, 2, 2}, {1, 0, 0, 1}));
        auto forward = [&]() {
            Tape<double> t;
            auto v = t.leaf(z, true);
            auto loss = t.add(t.bce_with_logits_mean(v, target), t.dice_loss(v, target));
            return t.val(loss)[0];
        };
        Tape<double> t;
        auto v = t.leaf(z, true);
        auto loss = t.add(t.bce_with_logits_mean(v, target), t.dice_loss(v, target));
        t.backward(loss);
        Tensor<double> g = t.grad(v);
        double e = gradcheck_rel_error({{&z, &g}}, forward);
        cases.push_back({"bce_dice_loss", e, 1e-6});
    }
    if (include_end_to_end) {
        ModelConfig cfg = ModelConfig::toy(64);
        ParamStore<double> store;
        init_model_params(store, cfg, 11);
        // The training init (sigma 0.02, unit gammas) leaves branch outputs so
        // close to zero that the normalization layers are extremely curved and
        // central differences at h=1e-5 are meaningless noise. The check is of
        // the backward pass, not of the init, so redraw every parameter at a
        // well-conditioned scale.
        Rng redraw = Rng::keyed({0x5ca1e});
        for (auto& e : store.entries())
            for (auto& v : e.value.data) v = redraw.normal() * 0.3;
        auto img = gc_randn({1, 3, 64, 64}, 10);
        double e = module_gradcheck(
            store, img,
            [&cfg](ParamVars<double>& P, Tape<double>::Var in) {
                // scalarized again by module_gradcheck; mean(logits^2) via
                // explicit op keeps the loss the contract states
                return P.tape().mean_of_squares(model_forward(P, in, cfg));
            },
            4);
        cases.push_back({"end_to_end_toy_model", e, 1e-3});
    }
    return cases;
}

}  // namespace fcbswin
