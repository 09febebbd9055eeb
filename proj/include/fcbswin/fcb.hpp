#pragma once

#include <string>
#include <vector>

#include "fcbswin/wiring.hpp"

namespace fcbswin {

/// Fully convolutional branch: resolution-preserving encoder-decoder built
/// from residual blocks with post-branch group normalization.
struct FcbConfig {
    // widths[0] is the full-resolution width; each later stage halves the
    // spatial dims via a strided conv
    std::vector<int64_t> widths = {32, 64, 128, 256};
    int64_t blocks_per_stage = 1;
    int64_t groups = 32;
    int64_t out_channels = 64;

    int64_t stages() const { return static_cast<int64_t>(widths.size()); }

    void validate() const {
        check(widths.size() >= 2, "fcb needs at least two stages");
        check(blocks_per_stage >= 1, "blocks_per_stage >= 1");
        check(out_channels >= 1, "out_channels >= 1");
    }
};

template <typename T>
void init_residual_block(ParamStore<T>& store, const std::string& prefix, int64_t in_ch,
                         int64_t out_ch, Rng& rng) {
    init_conv(store, prefix + ".conv1", out_ch, in_ch, 3, rng);
    init_conv(store, prefix + ".conv2", out_ch, out_ch, 3, rng);
    init_norm(store, prefix + ".gn", out_ch);
    if (in_ch != out_ch) init_conv(store, prefix + ".proj", out_ch, in_ch, 1, rng, false);
}

/// y = proj(x) + GN(conv2(relu(conv1(relu(x))))) — residual post-norm.
template <typename T>
typename Tape<T>::Var residual_block_postnorm(ParamVars<T>& P, const std::string& prefix,
                                              typename Tape<T>::Var x, int64_t groups) {
    auto& t = P.tape();
    int64_t in_ch = t.val(x).dim(1);
    const auto& w1 = t.val(P(prefix + ".conv1.weight"));
    if (w1.dim(1) != in_ch)
        throw ChannelMismatch(prefix + ": got " + std::to_string(in_ch) + " channels, expected " +
                              std::to_string(w1.dim(1)));
    int64_t out_ch = w1.dim(0);
    auto b = t.relu(x);
    b = t.conv2d(b, P(prefix + ".conv1.weight"), P(prefix + ".conv1.bias"), 1, 1);
    b = t.relu(b);
    b = t.conv2d(b, P(prefix + ".conv2.weight"), P(prefix + ".conv2.bias"), 1, 1);
    b = t.groupnorm(b, P(prefix + ".gn.gamma"), P(prefix + ".gn.beta"),
                    pick_groups(out_ch, groups));
    auto shortcut =
        in_ch == out_ch
            ? x
            : t.conv2d(x, P(prefix + ".proj.weight"), typename Tape<T>::Var{}, 1, 0);
    return t.add(shortcut, b);
}

template <typename T>
void init_fcb_params(ParamStore<T>& store, const FcbConfig& cfg, Rng& rng) {
    cfg.validate();
    init_conv(store, "fcb.stem", cfg.widths[0], 3, 3, rng);
    for (int64_t i = 0; i < cfg.stages(); ++i) {
        std::string sp = "fcb.enc" + std::to_string(i);
        if (i > 0) init_conv(store, sp + ".down", cfg.widths[i], cfg.widths[i - 1], 3, rng);
        for (int64_t j = 0; j < cfg.blocks_per_stage; ++j)
            init_residual_block(store, sp + ".rb" + std::to_string(j), cfg.widths[i],
                                cfg.widths[i], rng);
    }
    // decoder stage i upsamples from widths[i] and concats the widths[i-1] skip
    for (int64_t i = cfg.stages() - 1; i >= 1; --i) {
        std::string sp = "fcb.dec" + std::to_string(i);
        int64_t out_ch = i == 1 ? cfg.out_channels : cfg.widths[i - 1];
        // input: previous decoder output (or bottleneck), both widths[i], plus the skip
        int64_t in_ch = cfg.widths[i] + cfg.widths[i - 1];
        for (int64_t j = 0; j < cfg.blocks_per_stage; ++j) {
            init_residual_block(store, sp + ".rb" + std::to_string(j), j == 0 ? in_ch : out_ch,
                                out_ch, rng);
        }
    }
}

/// [B,3,H,W] -> [B,out_channels,H,W]
template <typename T>
typename Tape<T>::Var fcb_forward(ParamVars<T>& P, typename Tape<T>::Var image,
                                  const FcbConfig& cfg) {
    auto& t = P.tape();
    auto x = t.conv2d(image, P("fcb.stem.weight"), P("fcb.stem.bias"), 1, 1);
    std::vector<typename Tape<T>::Var> skips;
    for (int64_t i = 0; i < cfg.stages(); ++i) {
        std::string sp = "fcb.enc" + std::to_string(i);
        if (i > 0) x = t.conv2d(x, P(sp + ".down.weight"), P(sp + ".down.bias"), 2, 1);
        for (int64_t j = 0; j < cfg.blocks_per_stage; ++j)
            x = residual_block_postnorm(P, sp + ".rb" + std::to_string(j), x, cfg.groups);
        skips.push_back(x);
    }
    for (int64_t i = cfg.stages() - 1; i >= 1; --i) {
        std::string sp = "fcb.dec" + std::to_string(i);
        const auto& ss = t.val(skips[i - 1]).shape;
        x = t.bilinear(x, ss[2], ss[3]);
        x = t.concat_ch(x, skips[i - 1]);
        for (int64_t j = 0; j < cfg.blocks_per_stage; ++j)
            x = residual_block_postnorm(P, sp + ".rb" + std::to_string(j), x, cfg.groups);
    }
    return x;
}

}  // namespace fcbswin
