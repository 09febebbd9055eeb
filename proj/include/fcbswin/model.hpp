#pragma once

#include <nlohmann/json.hpp>
#include <string>

#include "fcbswin/fcb.hpp"
#include "fcbswin/swin.hpp"

namespace fcbswin {

/// Whole dual-branch model: TB || FCB, channel-concat fusion at full
/// resolution, residual prediction head ending in a 1x1 conv.
struct ModelConfig {
    SwinConfig swin;
    FcbConfig fcb;
    int64_t head_channels = 64;
    int64_t head_blocks = 2;
    int64_t img_size = 384;

    void validate() const {
        swin.validate();
        fcb.validate();
        if (swin.img_size != img_size)
            throw ConfigMismatch("swin.img_size != img_size");
        if (swin.tb_out_channels() != fcb.out_channels)
            throw ConfigMismatch("TB out channels (" + std::to_string(swin.tb_out_channels()) +
                                 ") must equal FCB out channels (" +
                                 std::to_string(fcb.out_channels) + ")");
        check(head_blocks >= 1, "head_blocks >= 1");
    }

    /// Small configuration for desk-scale tests: 64x64 input, two stages.
    static ModelConfig toy(int64_t img = 64) {
        ModelConfig cfg;
        cfg.img_size = img;
        cfg.swin.img_size = img;
        cfg.swin.embed_dim = 8;
        cfg.swin.depths = {1, 1};
        cfg.swin.num_heads = {2, 2};
        cfg.swin.window_size = 4;
        cfg.swin.decoder_channels = {16};
        cfg.swin.scse_reduction = 4;
        cfg.fcb.widths = {8, 16};
        cfg.fcb.out_channels = 16;
        cfg.fcb.groups = 4;
        cfg.head_channels = 8;
        return cfg;
    }
};

inline void to_json(nlohmann::json& j, const SwinConfig& c) {
    j = {{"img_size", c.img_size},        {"patch_size", c.patch_size},
         {"embed_dim", c.embed_dim},      {"depths", c.depths},
         {"num_heads", c.num_heads},      {"window_size", c.window_size},
         {"mlp_ratio", c.mlp_ratio},      {"tau_min", c.tau_min},
         {"decoder_channels", c.decoder_channels}, {"scse_reduction", c.scse_reduction}};
}
inline void from_json(const nlohmann::json& j, SwinConfig& c) {
    c.img_size = j.value("img_size", c.img_size);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.depths = j.value("depths", c.depths);
    c.num_heads = j.value("num_heads", c.num_heads);
    c.window_size = j.value("window_size", c.window_size);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.tau_min = j.value("tau_min", c.tau_min);
    c.decoder_channels = j.value("decoder_channels", c.decoder_channels);
    c.scse_reduction = j.value("scse_reduction", c.scse_reduction);
}
inline void to_json(nlohmann::json& j, const FcbConfig& c) {
    j = {{"widths", c.widths},
         {"blocks_per_stage", c.blocks_per_stage},
         {"groups", c.groups},
         {"out_channels", c.out_channels}};
}
inline void from_json(const nlohmann::json& j, FcbConfig& c) {
    c.widths = j.value("widths", c.widths);
    c.blocks_per_stage = j.value("blocks_per_stage", c.blocks_per_stage);
    c.groups = j.value("groups", c.groups);
    c.out_channels = j.value("out_channels", c.out_channels);
}
inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"swin", c.swin},
         {"fcb", c.fcb},
         {"head_channels", c.head_channels},
         {"head_blocks", c.head_blocks},
         {"img_size", c.img_size}};
}
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    if (j.contains("swin")) j.at("swin").get_to(c.swin);
    if (j.contains("fcb")) j.at("fcb").get_to(c.fcb);
    c.head_channels = j.value("head_channels", c.head_channels);
    c.head_blocks = j.value("head_blocks", c.head_blocks);
    c.img_size = j.value("img_size", c.img_size);
}

/// FNV-1a over the canonical config JSON; recorded in checkpoint sidecars.
inline uint64_t config_hash(const ModelConfig& cfg) {
    std::string s = nlohmann::json(cfg).dump();
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

template <typename T>
void init_model_params(ParamStore<T>& store, const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng = Rng::keyed({seed, 0xf0cb});
    init_swin_params(store, cfg.swin, rng);
    init_fcb_params(store, cfg.fcb, rng);
    int64_t fused = 2 * cfg.fcb.out_channels;
    for (int64_t i = 0; i < cfg.head_blocks; ++i)
        init_residual_block(store, "head.rb" + std::to_string(i), i == 0 ? fused : cfg.head_channels,
                            cfg.head_channels, rng);
    init_conv(store, "head.conv_out", 1, cfg.head_channels, 1, rng);
}

/// [B,3,S,S] normalized image -> [B,1,S,S] logits.
template <typename T>
typename Tape<T>::Var model_forward(ParamVars<T>& P, typename Tape<T>::Var image,
                                    const ModelConfig& cfg) {
    auto& t = P.tape();
    const auto& shp = t.val(image).shape;
    if (shp.size() != 4 || shp[1] != 3 || shp[2] != cfg.img_size || shp[3] != cfg.img_size)
        throw ConfigMismatch("model_forward: input " + shape_str(shp) + " vs img_size " +
                             std::to_string(cfg.img_size));
    auto tb = tb_forward(P, image, cfg.swin);
    auto tb_up = t.bilinear(tb, cfg.img_size, cfg.img_size);
    auto fcb = fcb_forward(P, image, cfg.fcb);
    auto x = t.concat_ch(tb_up, fcb);
    for (int64_t i = 0; i < cfg.head_blocks; ++i)
        x = residual_block_postnorm(P, "head.rb" + std::to_string(i), x, cfg.fcb.groups);
    return t.conv2d(x, P("head.conv_out.weight"), P("head.conv_out.bias"), 1, 0);
}

}  // namespace fcbswin
