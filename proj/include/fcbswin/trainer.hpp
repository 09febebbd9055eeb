#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fcbswin/augment.hpp"
#include "fcbswin/evalkit.hpp"
#include "fcbswin/model.hpp"

namespace fcbswin {

struct TrainConfig {
    int64_t epochs = 200;
    int64_t batch_size = 2;
    double lr0 = 1e-5;
    double plateau_factor = 0.6;
    int64_t plateau_patience = 10;
    double plateau_delta = 1e-8;
    double weight_decay = 1e-2;
    uint64_t global_seed = 0;
    AugmentConfig augment;

    void validate() const {
        check(epochs >= 1, "epochs must be >= 1");
        check(batch_size >= 1, "batch_size must be >= 1");
        check(plateau_factor > 0.0 && plateau_factor < 1.0, "plateau_factor must be in (0,1)");
        check(plateau_patience >= 1, "plateau_patience must be >= 1");
        check(lr0 > 0.0, "lr0 must be positive");
        augment.validate();
    }
};

// ---- AdamW ----

template <typename T>
struct AdamWState {
    std::vector<Tensor<T>> m, v;  // parallel to the store's entry order
    int64_t step = 0;

    explicit AdamWState(const ParamStore<T>& store) {
        for (const auto& e : store.entries()) {
            m.push_back(Tensor<T>::zeros(e.value.shape));
            v.push_back(Tensor<T>::zeros(e.value.shape));
        }
    }
};

/// One AdamW update from the gradients accumulated in the store. Weight decay
/// is decoupled (applied directly to the parameters, not through the moments).
template <typename T>
void adamw_step(ParamStore<T>& store, AdamWState<T>& state, double lr, double weight_decay,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    check(state.m.size() == store.size(), "optimizer state does not match the store");
    state.step += 1;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (size_t p = 0; p < store.size(); ++p) {
        auto& e = store.entries()[p];
        if (e.value.shape != state.m[p].shape)
            throw ShapeMismatch("adamw_step: state vs parameter " + e.name);
        if (e.grad.numel() != e.value.numel()) e.grad = Tensor<T>::zeros(e.value.shape);
        for (int64_t i = 0; i < e.value.numel(); ++i) {
            double g = static_cast<double>(e.grad[i]);
            double m = beta1 * static_cast<double>(state.m[p][i]) + (1.0 - beta1) * g;
            double v = beta2 * static_cast<double>(state.v[p][i]) + (1.0 - beta2) * g * g;
            state.m[p][i] = static_cast<T>(m);
            state.v[p][i] = static_cast<T>(v);
            double theta = static_cast<double>(e.value[i]);
            theta -= lr * weight_decay * theta;
            theta -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
            e.value[i] = static_cast<T>(theta);
        }
    }
}

// ---- plateau schedule ----

struct PlateauState {
    double lr;
    double best_loss = std::numeric_limits<double>::infinity();
    int64_t epochs_since_improvement = 0;
    int64_t reductions = 0;

    explicit PlateauState(double lr0) : lr(lr0) {}
};

/// Once-per-epoch step of reduce-on-plateau: an epoch improves when its loss
/// drops below best - delta; `patience` consecutive non-improving epochs
/// multiply the lr by `factor` and reset the counter.
inline void plateau_schedule(PlateauState& state, double epoch_train_loss, double factor,
                             int64_t patience, double delta = 1e-8) {
    if (epoch_train_loss < state.best_loss - delta) {
        state.best_loss = epoch_train_loss;
        state.epochs_since_improvement = 0;
        return;
    }
    state.epochs_since_improvement += 1;
    if (state.epochs_since_improvement >= patience) {
        state.lr *= factor;
        state.reductions += 1;
        state.epochs_since_improvement = 0;
    }
}

// ---- data plumbing ----

/// Loads one sample by filename: (HxWx3 image in [0,1], HxW binary mask) at
/// native resolution. Keeps image decoding out of the core.
template <typename T>
using SampleLoader = std::function<std::pair<Tensor<T>, Tensor<T>>(const std::string&)>;

namespace detail {

template <typename T>
void hwc_into_nchw(const Tensor<T>& hwc, Tensor<T>& batch, int64_t b) {
    int64_t h = hwc.shape[0], w = hwc.shape[1], c = hwc.shape[2];
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                batch.data[((b * c + ch) * h + y) * w + x] = hwc.data[(y * w + x) * c + ch];
}

}  // namespace detail

// ---- evaluation ----

/// resize -> normalize -> forward -> binarize -> per-image metrics, one image
/// at a time; aggregates with unweighted means.
template <typename T>
MetricsReport evaluate(ParamStore<T>& store, const ModelConfig& cfg,
                       const std::vector<std::string>& names, const SampleLoader<T>& loader,
                       double threshold = 0.5) {
    if (names.empty()) throw EmptySplit("evaluate");
    std::vector<PerImageMetrics> per_image;
    for (const auto& name : names) {
        auto [img, mask] = loader(name);
        auto [ri, rm] = resize_pair(img, mask, cfg.img_size, cfg.img_size);
        Tensor<T> input({1, 3, cfg.img_size, cfg.img_size});
        detail::hwc_into_nchw(normalize(ri), input, 0);
        Tape<T> tape;
        ParamVars<T> P(tape, store, false);
        const Tensor<T>& logits = tape.val(model_forward(P, tape.leaf(input), cfg));
        Tensor<T> pred = binarize(logits).reshaped({cfg.img_size, cfg.img_size});
        per_image.push_back({name, image_metrics(pred, rm)});
    }
    return aggregate(std::move(per_image), threshold);
}

// ---- training loop ----

struct EpochLog {
    int64_t epoch;  // 1-based
    double train_loss;
    double val_mdice;
    double lr;
};

struct TrainResult {
    std::vector<EpochLog> log;
    std::vector<int64_t> checkpoint_epochs;
    double best_val_dice = 0.0;
    std::string best_checkpoint;
};

inline void write_train_log(const std::vector<EpochLog>& log, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    check(static_cast<bool>(out), "cannot write " + path.string());
    out << "epoch,train_loss,val_mdice,lr\n";
    out.precision(17);
    for (const auto& row : log)
        out << row.epoch << "," << row.train_loss << "," << row.val_mdice << "," << row.lr << "\n";
}

/// The full optimization loop: per-epoch seeded shuffle, augment -> forward ->
/// BCE+dice -> backward -> AdamW; end of epoch evaluates val mDice, saves a
/// checkpoint on strict improvement and applies the plateau schedule.
template <typename T>
TrainResult train(ParamStore<T>& store, const ModelConfig& mcfg, const TrainConfig& tcfg,
                  const std::vector<std::string>& train_names,
                  const std::vector<std::string>& val_names, const SampleLoader<T>& loader,
                  const std::filesystem::path& out_dir) {
    tcfg.validate();
    if (train_names.empty()) throw EmptyPartition("train split is empty");
    if (val_names.empty()) throw EmptyPartition("val split is empty");
    std::filesystem::create_directories(out_dir);

    AdamWState<T> opt(store);
    PlateauState sched(tcfg.lr0);
    TrainResult result;
    result.best_checkpoint = (out_dir / "best.weights").string();

    for (int64_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
        // deterministic order: indices shuffled by a (seed, epoch)-keyed stream
        std::vector<size_t> order(train_names.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng = Rng::keyed({tcfg.global_seed, static_cast<uint64_t>(epoch), 0x04de4});
        shuffle_rng.shuffle(order);

        double loss_sum = 0;
        int64_t batches = 0;
        for (size_t start = 0; start < order.size(); start += tcfg.batch_size) {
            size_t bsz = std::min<size_t>(tcfg.batch_size, order.size() - start);
            Tensor<T> input({static_cast<int64_t>(bsz), 3, mcfg.img_size, mcfg.img_size});
            Tensor<T> target({static_cast<int64_t>(bsz), 1, mcfg.img_size, mcfg.img_size});
            for (size_t b = 0; b < bsz; ++b) {
                size_t idx = order[start + b];
                auto [img, mask] = loader(train_names[idx]);
                auto [ri, rm] = resize_pair(img, mask, mcfg.img_size, mcfg.img_size);
                Rng rng = sample_rng(tcfg.global_seed, static_cast<uint64_t>(epoch),
                                     static_cast<uint64_t>(idx));
                auto [ai, am] = augment_train_pair(ri, rm, rng, tcfg.augment);
                detail::hwc_into_nchw(ai, input, static_cast<int64_t>(b));
                std::copy(am.data.begin(), am.data.end(),
                          target.data.begin() +
                              static_cast<int64_t>(b) * mcfg.img_size * mcfg.img_size);
            }
            Tape<T> tape;
            ParamVars<T> P(tape, store, true);
            auto logits = model_forward(P, tape.leaf(input), mcfg);
            auto loss = bce_dice_loss(tape, logits,
                                      std::make_shared<const Tensor<T>>(std::move(target)));
            double loss_val = static_cast<double>(tape.val(loss)[0]);
            if (!std::isfinite(loss_val))
                throw NonFiniteLoss("epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(batches));
            tape.backward(loss);
            store.zero_grads();
            P.write_back_grads();
            adamw_step(store, opt, sched.lr, tcfg.weight_decay);
            loss_sum += loss_val;
            batches += 1;
        }
        double train_loss = loss_sum / static_cast<double>(batches);

        double val_mdice = evaluate(store, mcfg, val_names, loader).mdice;
        if (val_mdice > result.best_val_dice) {  // strict improvement only
            result.best_val_dice = val_mdice;
            result.checkpoint_epochs.push_back(epoch);
            save_weights(store, result.best_checkpoint);
            nlohmann::json sidecar{{"epoch", epoch},
                                   {"val_mdice", val_mdice},
                                   {"config_hash", config_hash(mcfg)}};
            std::ofstream side(result.best_checkpoint + ".json", std::ios::binary);
            side << sidecar.dump(2) << "\n";
        }
        double lr_logged = sched.lr;
        plateau_schedule(sched, train_loss, tcfg.plateau_factor, tcfg.plateau_patience,
                         tcfg.plateau_delta);
        result.log.push_back({epoch, train_loss, val_mdice, lr_logged});
    }
    write_train_log(result.log, out_dir / "train_log.csv");
    return result;
}

}  // namespace fcbswin
