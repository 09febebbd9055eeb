#pragma once

#include <memory>
#include <string>
#include <vector>

#include "fcbswin/wiring.hpp"

namespace fcbswin {

/// SwinV2-UNET transformer branch: hierarchical encoder with residual
/// post-norm blocks and scaled cosine window attention, plus an SCSE decoder.
struct SwinConfig {
    int64_t img_size = 384;
    int64_t patch_size = 4;
    int64_t embed_dim = 128;
    std::vector<int64_t> depths = {2, 2, 18, 2};
    std::vector<int64_t> num_heads = {4, 8, 16, 32};
    int64_t window_size = 12;
    double mlp_ratio = 4.0;
    double tau_min = 0.01;
    // decoder output channels, deepest stage first; size() == depths.size()-1
    std::vector<int64_t> decoder_channels = {512, 256, 64};
    int64_t scse_reduction = 16;

    int64_t stages() const { return static_cast<int64_t>(depths.size()); }
    int64_t tb_out_channels() const { return decoder_channels.back(); }
    int64_t stage_dim(int64_t i) const { return embed_dim << i; }
    int64_t grid() const { return img_size / patch_size; }

    void validate() const {
        check(img_size % patch_size == 0, "img_size not divisible by patch_size");
        check(depths.size() == num_heads.size(), "depths/num_heads length mismatch");
        check(!depths.empty(), "need at least one stage");
        check(static_cast<int64_t>(decoder_channels.size()) == stages() - 1,
              "decoder_channels must have stages-1 entries");
        int64_t g = grid();
        for (int64_t i = 0; i < stages(); ++i) {
            if (g % window_size != 0 && g > window_size)
                throw IndivisibleFeatureMap("stage " + std::to_string(i) + " grid " +
                                            std::to_string(g) + " vs window " +
                                            std::to_string(window_size));
            check(stage_dim(i) % num_heads[i] == 0, "stage dim not divisible by heads");
            g /= 2;
        }
    }
};

// ---- index map builders ----

namespace swin_maps {

using IndexMap = std::shared_ptr<const std::vector<int64_t>>;

/// [B,H,W,C] -> [B*(H/M)*(W/M), M*M, C]
inline IndexMap window_partition(int64_t B, int64_t H, int64_t W, int64_t C, int64_t M) {
    if (H % M != 0 || W % M != 0) throw IndivisibleFeatureMap("window_partition");
    auto m = std::make_shared<std::vector<int64_t>>(B * H * W * C);
    int64_t nW = W / M;
    int64_t o = 0;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t wy = 0; wy < H / M; ++wy)
            for (int64_t wx = 0; wx < nW; ++wx)
                for (int64_t my = 0; my < M; ++my)
                    for (int64_t mx = 0; mx < M; ++mx) {
                        int64_t src = ((b * H + wy * M + my) * W + wx * M + mx) * C;
                        for (int64_t c = 0; c < C; ++c) (*m)[o++] = src + c;
                    }
    return m;
}

/// inverse of window_partition
inline IndexMap window_reverse(int64_t B, int64_t H, int64_t W, int64_t C, int64_t M) {
    if (H % M != 0 || W % M != 0) throw IndivisibleFeatureMap("window_reverse");
    auto m = std::make_shared<std::vector<int64_t>>(B * H * W * C);
    int64_t nW = W / M;
    int64_t o = 0;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                int64_t w = (b * (H / M) + y / M) * nW + x / M;
                int64_t tkn = (y % M) * M + x % M;
                int64_t src = (w * M * M + tkn) * C;
                for (int64_t c = 0; c < C; ++c) (*m)[o++] = src + c;
            }
    return m;
}

/// cyclic shift on [B,H,W,C]: out[y,x] = in[(y+sy) mod H, (x+sx) mod W]
inline IndexMap roll(int64_t B, int64_t H, int64_t W, int64_t C, int64_t sy, int64_t sx) {
    auto m = std::make_shared<std::vector<int64_t>>(B * H * W * C);
    auto mod = [](int64_t a, int64_t n) { return ((a % n) + n) % n; };
    int64_t o = 0;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                int64_t src = ((b * H + mod(y + sy, H)) * W + mod(x + sx, W)) * C;
                for (int64_t c = 0; c < C; ++c) (*m)[o++] = src + c;
            }
    return m;
}

/// [Nw, M2, C] -> [Nw*heads, M2, C/heads]
inline IndexMap head_split(int64_t Nw, int64_t M2, int64_t heads, int64_t C) {
    auto m = std::make_shared<std::vector<int64_t>>(Nw * M2 * C);
    int64_t d = C / heads;
    int64_t o = 0;
    for (int64_t w = 0; w < Nw; ++w)
        for (int64_t h = 0; h < heads; ++h)
            for (int64_t t = 0; t < M2; ++t)
                for (int64_t k = 0; k < d; ++k) (*m)[o++] = (w * M2 + t) * C + h * d + k;
    return m;
}

/// [Nw*heads, M2, C/heads] -> [Nw, M2, C]
inline IndexMap head_merge(int64_t Nw, int64_t M2, int64_t heads, int64_t C) {
    auto m = std::make_shared<std::vector<int64_t>>(Nw * M2 * C);
    int64_t d = C / heads;
    int64_t o = 0;
    for (int64_t w = 0; w < Nw; ++w)
        for (int64_t t = 0; t < M2; ++t)
            for (int64_t h = 0; h < heads; ++h)
                for (int64_t k = 0; k < d; ++k) (*m)[o++] = ((w * heads + h) * M2 + t) * d + k;
    return m;
}

/// [B,3,H,W] -> [B, (H/p)*(W/p), 3*p*p], patch flattened in (c, dy, dx) order
inline IndexMap patch_flatten(int64_t B, int64_t Cin, int64_t H, int64_t W, int64_t p) {
    if (H % p != 0 || W % p != 0) throw IndivisibleInput("patch_flatten");
    auto m = std::make_shared<std::vector<int64_t>>(B * Cin * H * W);
    int64_t o = 0;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t py = 0; py < H / p; ++py)
            for (int64_t px = 0; px < W / p; ++px)
                for (int64_t c = 0; c < Cin; ++c)
                    for (int64_t dy = 0; dy < p; ++dy)
                        for (int64_t dx = 0; dx < p; ++dx)
                            (*m)[o++] = ((b * Cin + c) * H + py * p + dy) * W + px * p + dx;
    return m;
}

/// [B,H,W,C] -> [B, (H/2)*(W/2), 4C]; 2x2 neighborhood order
/// (y,x), (y+1,x), (y,x+1), (y+1,x+1)
inline IndexMap patch_merge(int64_t B, int64_t H, int64_t W, int64_t C) {
    if (H % 2 != 0 || W % 2 != 0) throw OddDimensions("patch_merge");
    auto m = std::make_shared<std::vector<int64_t>>(B * H * W * C);
    const int64_t off[4][2] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
    int64_t o = 0;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t y = 0; y < H / 2; ++y)
            for (int64_t x = 0; x < W / 2; ++x)
                for (const auto& d : off) {
                    int64_t src = ((b * H + 2 * y + d[0]) * W + 2 * x + d[1]) * C;
                    for (int64_t c = 0; c < C; ++c) (*m)[o++] = src + c;
                }
    return m;
}

/// [B,H,W,C] -> [B,C,H,W]
inline IndexMap bhwc_to_nchw(int64_t B, int64_t H, int64_t W, int64_t C) {
    auto m = std::make_shared<std::vector<int64_t>>(B * H * W * C);
    int64_t o = 0;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x) (*m)[o++] = ((b * H + y) * W + x) * C + c;
    return m;
}

/// relative position index within an MxM window: [M2*M2] into a (2M-1)^2 table
inline IndexMap rel_pos_index(int64_t M) {
    auto m = std::make_shared<std::vector<int64_t>>(M * M * M * M);
    int64_t o = 0;
    for (int64_t yi = 0; yi < M; ++yi)
        for (int64_t xi = 0; xi < M; ++xi)
            for (int64_t yj = 0; yj < M; ++yj)
                for (int64_t xj = 0; xj < M; ++xj)
                    (*m)[o++] = (yi - yj + M - 1) * (2 * M - 1) + (xi - xj + M - 1);
    return m;
}

/// Additive mask for SW-MSA windows after a cyclic shift of `s`:
/// [ (H/M)*(W/M), M2, M2 ], 0 within a region, -1e4 across wrap boundaries.
template <typename T>
std::shared_ptr<const Tensor<T>> shift_mask(int64_t H, int64_t W, int64_t M, int64_t s) {
    std::vector<int64_t> region(H * W);
    auto bounds = [&](int64_t n) {
        return std::array<std::pair<int64_t, int64_t>, 3>{
            std::pair<int64_t, int64_t>{0, n - M}, {n - M, n - s}, {n - s, n}};
    };
    int64_t cnt = 0;
    for (const auto& [y0, y1] : bounds(H)) {
        for (const auto& [x0, x1] : bounds(W)) {
            for (int64_t y = y0; y < y1; ++y)
                for (int64_t x = x0; x < x1; ++x) region[y * W + x] = cnt;
            ++cnt;
        }
    }
    int64_t nH = H / M, nW = W / M, M2 = M * M;
    auto mask = std::make_shared<Tensor<T>>(Shape{nH * nW, M2, M2});
    for (int64_t wy = 0; wy < nH; ++wy)
        for (int64_t wx = 0; wx < nW; ++wx) {
            int64_t w = wy * nW + wx;
            for (int64_t i = 0; i < M2; ++i)
                for (int64_t j = 0; j < M2; ++j) {
                    int64_t ri = region[(wy * M + i / M) * W + wx * M + i % M];
                    int64_t rj = region[(wy * M + j / M) * W + wx * M + j % M];
                    (*mask)[(w * M2 + i) * M2 + j] = ri == rj ? T(0) : T(-1e4);
                }
        }
    return mask;
}

}  // namespace swin_maps

// ---- parameter construction ----

template <typename T>
void init_scse(ParamStore<T>& store, const std::string& prefix, int64_t C, int64_t reduction,
               Rng& rng) {
    if (C < reduction) throw ChannelTooSmall(prefix + ": C=" + std::to_string(C) + " < r=" +
                                             std::to_string(reduction));
    int64_t Cr = std::max<int64_t>(1, C / reduction);
    init_linear(store, prefix + ".cse_fc1", C, Cr, rng);
    init_linear(store, prefix + ".cse_fc2", Cr, C, rng);
    init_conv(store, prefix + ".sse_conv", 1, C, 1, rng);
}

template <typename T>
void init_attention(ParamStore<T>& store, const std::string& prefix, int64_t C, int64_t heads,
                    int64_t M, Rng& rng) {
    init_linear(store, prefix + ".wq", C, C, rng);
    init_linear(store, prefix + ".wk", C, C, rng);
    init_linear(store, prefix + ".wv", C, C, rng);
    init_linear(store, prefix + ".proj", C, C, rng);
    // tau = 0.1 at init; stored as log-temperature
    store.add(prefix + ".log_tau", Tensor<T>::full({heads}, T(std::log(0.1))));
    store.add(prefix + ".rel_bias",
              trunc_normal_init<T>({(2 * M - 1) * (2 * M - 1), heads}, rng));
}

template <typename T>
void init_swin_block(ParamStore<T>& store, const std::string& prefix, int64_t C, int64_t heads,
                     int64_t M, double mlp_ratio, Rng& rng) {
    init_attention(store, prefix + ".attn", C, heads, M, rng);
    init_norm(store, prefix + ".norm1", C);
    int64_t hidden = static_cast<int64_t>(C * mlp_ratio);
    init_linear(store, prefix + ".mlp.fc1", C, hidden, rng);
    init_linear(store, prefix + ".mlp.fc2", hidden, C, rng);
    init_norm(store, prefix + ".norm2", C);
}

template <typename T>
void init_decoder_block(ParamStore<T>& store, const std::string& prefix, int64_t in_ch,
                        int64_t out_ch, int64_t scse_reduction, Rng& rng) {
    init_conv(store, prefix + ".conv1", out_ch, in_ch, 3, rng);
    init_norm(store, prefix + ".gn1", out_ch);
    init_conv(store, prefix + ".conv2", out_ch, out_ch, 3, rng);
    init_norm(store, prefix + ".gn2", out_ch);
    init_scse(store, prefix + ".scse", out_ch, scse_reduction, rng);
}

template <typename T>
void init_swin_params(ParamStore<T>& store, const SwinConfig& cfg, Rng& rng) {
    cfg.validate();
    init_linear(store, "swin.patch_embed", 3 * cfg.patch_size * cfg.patch_size, cfg.embed_dim,
                rng);
    for (int64_t i = 0; i < cfg.stages(); ++i) {
        int64_t C = cfg.stage_dim(i);
        for (int64_t j = 0; j < cfg.depths[i]; ++j)
            init_swin_block(store,
                            "swin.stage" + std::to_string(i) + ".block" + std::to_string(j), C,
                            cfg.num_heads[i], cfg.window_size, cfg.mlp_ratio, rng);
        if (i + 1 < cfg.stages()) {
            std::string p = "swin.merge" + std::to_string(i);
            init_norm(store, p + ".norm", 4 * C);
            init_linear(store, p + ".reduction", 4 * C, 2 * C, rng);
        }
    }
    // decoder block k consumes (prev_ch + skip_ch); prev of block 0 is the bottleneck
    int64_t prev_ch = cfg.stage_dim(cfg.stages() - 1);
    for (int64_t k = 0; k < cfg.stages() - 1; ++k) {
        int64_t skip_ch = cfg.stage_dim(cfg.stages() - 2 - k);
        int64_t out_ch = cfg.decoder_channels[k];
        init_decoder_block(store, "swin.decoder" + std::to_string(k), prev_ch + skip_ch, out_ch,
                           cfg.scse_reduction, rng);
        prev_ch = out_ch;
    }
}

// ---- forward ----

template <typename T>
typename Tape<T>::Var linear_fwd(ParamVars<T>& P, const std::string& prefix,
                                 typename Tape<T>::Var x) {
    auto& t = P.tape();
    return t.add_bias(t.matmul(x, P(prefix + ".weight")), P(prefix + ".bias"));
}

/// Attention probabilities from per-head queries/keys [Nw*heads, M2, d]:
/// softmax over cos(q,k)/tau + B (+ mask). Exposed separately so the
/// row-sum and scale-invariance properties can be probed directly.
template <typename T>
typename Tape<T>::Var cosine_attention_probs(Tape<T>& t, typename Tape<T>::Var q,
                                             typename Tape<T>::Var k,
                                             typename Tape<T>::Var log_tau,
                                             typename Tape<T>::Var rel_bias, int64_t heads,
                                             int64_t M, double tau_min,
                                             std::shared_ptr<const Tensor<T>> mask = nullptr) {
    auto logits = t.bmm(t.l2norm_last(q), t.l2norm_last(k), true);
    logits = t.scale_per_head(logits, log_tau, heads, T(tau_min));
    logits = t.add_rel_bias(logits, rel_bias, heads, swin_maps::rel_pos_index(M));
    if (mask) logits = t.add_attn_mask(logits, mask, heads);
    return t.softmax_last(logits);
}

/// Scaled cosine window attention over [Nw, M2, C] windows.
template <typename T>
typename Tape<T>::Var cosine_window_attention(ParamVars<T>& P, const std::string& prefix,
                                              typename Tape<T>::Var win, int64_t heads,
                                              int64_t M, double tau_min,
                                              std::shared_ptr<const Tensor<T>> mask = nullptr) {
    auto& t = P.tape();
    const auto& shp = t.val(win).shape;
    int64_t Nw = shp[0], M2 = shp[1], C = shp[2];
    if (C % heads != 0) throw HeadDivisibility("C=" + std::to_string(C) + " heads=" +
                                               std::to_string(heads));
    int64_t d = C / heads;
    auto split = swin_maps::head_split(Nw, M2, heads, C);
    auto q = t.remap(linear_fwd(P, prefix + ".wq", win), {Nw * heads, M2, d}, split);
    auto k = t.remap(linear_fwd(P, prefix + ".wk", win), {Nw * heads, M2, d}, split);
    auto v = t.remap(linear_fwd(P, prefix + ".wv", win), {Nw * heads, M2, d}, split);
    auto probs = cosine_attention_probs(t, q, k, P(prefix + ".log_tau"),
                                        P(prefix + ".rel_bias"), heads, M, tau_min, mask);
    auto out = t.bmm(probs, v);
    out = t.remap(out, {Nw, M2, C}, swin_maps::head_merge(Nw, M2, heads, C));
    return linear_fwd(P, prefix + ".proj", out);
}

/// One SwinV2 block (residual post-norm) on a [B,H,W,C] token grid.
template <typename T>
typename Tape<T>::Var swinv2_block(ParamVars<T>& P, const std::string& prefix,
                                   typename Tape<T>::Var x, int64_t heads, int64_t M,
                                   bool shifted, double tau_min) {
    auto& t = P.tape();
    const auto& shp = t.val(x).shape;
    int64_t B = shp[0], H = shp[1], W = shp[2], C = shp[3];
    int64_t Mw = std::min({M, H, W});  // degenerate: one window covers the grid
    if (H % Mw != 0 || W % Mw != 0) throw IndivisibleFeatureMap("swinv2_block");
    int64_t s = (shifted && H > Mw && W > Mw) ? Mw / 2 : 0;

    auto a = x;
    if (s > 0) a = t.remap(a, {B, H, W, C}, swin_maps::roll(B, H, W, C, s, s));
    int64_t Nw = B * (H / Mw) * (W / Mw);
    a = t.remap(a, {Nw, Mw * Mw, C}, swin_maps::window_partition(B, H, W, C, Mw));
    std::shared_ptr<const Tensor<T>> mask =
        s > 0 ? swin_maps::shift_mask<T>(H, W, Mw, s) : nullptr;
    a = cosine_window_attention(P, prefix + ".attn", a, heads, Mw, tau_min, mask);
    a = t.remap(a, {B, H, W, C}, swin_maps::window_reverse(B, H, W, C, Mw));
    if (s > 0) a = t.remap(a, {B, H, W, C}, swin_maps::roll(B, H, W, C, -s, -s));
    x = t.add(x, t.layernorm(a, P(prefix + ".norm1.gamma"), P(prefix + ".norm1.beta")));

    auto m = t.gelu(linear_fwd(P, prefix + ".mlp.fc1", x));
    m = linear_fwd(P, prefix + ".mlp.fc2", m);
    return t.add(x, t.layernorm(m, P(prefix + ".norm2.gamma"), P(prefix + ".norm2.beta")));
}

/// 2x2 merge: concat -> LN -> linear 4C->2C. [B,H,W,C] -> [B,H/2,W/2,2C]
template <typename T>
typename Tape<T>::Var patch_merge(ParamVars<T>& P, const std::string& prefix,
                                  typename Tape<T>::Var x) {
    auto& t = P.tape();
    const auto& shp = t.val(x).shape;
    int64_t B = shp[0], H = shp[1], W = shp[2], C = shp[3];
    auto m = t.remap(x, {B, (H / 2) * (W / 2), 4 * C}, swin_maps::patch_merge(B, H, W, C));
    m = t.layernorm(m, P(prefix + ".norm.gamma"), P(prefix + ".norm.beta"));
    m = linear_fwd(P, prefix + ".reduction", m);
    return t.reshape(m, {B, H / 2, W / 2, 2 * C});
}

template <typename T>
typename Tape<T>::Var patch_embed(ParamVars<T>& P, typename Tape<T>::Var image,
                                  const SwinConfig& cfg) {
    auto& t = P.tape();
    const auto& shp = t.val(image).shape;
    int64_t B = shp[0], H = shp[2], W = shp[3];
    if (H % cfg.patch_size != 0 || W % cfg.patch_size != 0)
        throw IndivisibleInput("patch_embed: " + shape_str(shp));
    int64_t p = cfg.patch_size;
    auto x = t.remap(image, {B, (H / p) * (W / p), 3 * p * p},
                     swin_maps::patch_flatten(B, 3, H, W, p));
    return linear_fwd(P, "swin.patch_embed", x);
}

template <typename T>
struct SwinEncoderOut {
    std::vector<typename Tape<T>::Var> skips;  // per-stage [B,H,W,C] outputs
};

template <typename T>
SwinEncoderOut<T> swin_encoder_forward(ParamVars<T>& P, typename Tape<T>::Var image,
                                       const SwinConfig& cfg) {
    auto& t = P.tape();
    const auto& shp = t.val(image).shape;
    int64_t B = shp[0];
    int64_t g = shp[2] / cfg.patch_size;
    auto x = patch_embed(P, image, cfg);
    x = t.reshape(x, {B, g, g, cfg.embed_dim});
    SwinEncoderOut<T> out;
    for (int64_t i = 0; i < cfg.stages(); ++i) {
        for (int64_t j = 0; j < cfg.depths[i]; ++j)
            x = swinv2_block(P, "swin.stage" + std::to_string(i) + ".block" + std::to_string(j),
                             x, cfg.num_heads[i], cfg.window_size, j % 2 == 1, cfg.tau_min);
        out.skips.push_back(x);
        if (i + 1 < cfg.stages()) x = patch_merge(P, "swin.merge" + std::to_string(i), x);
    }
    return out;
}

/// Concurrent spatial & channel squeeze-excitation on [B,C,H,W].
template <typename T>
typename Tape<T>::Var scse(ParamVars<T>& P, const std::string& prefix,
                           typename Tape<T>::Var x) {
    auto& t = P.tape();
    auto z = t.relu(linear_fwd(P, prefix + ".cse_fc1", t.gap(x)));
    auto gate_c = t.sigmoid(linear_fwd(P, prefix + ".cse_fc2", z));
    auto gate_s = t.sigmoid(
        t.conv2d(x, P(prefix + ".sse_conv.weight"), P(prefix + ".sse_conv.bias"), 1, 0));
    return t.add(t.mul_channel(x, gate_c), t.mul_spatial(x, gate_s));
}

/// Decoder block on NCHW: upsample prev to the skip resolution, concat,
/// two conv-GN-relu stages, SCSE.
template <typename T>
typename Tape<T>::Var decoder_block(ParamVars<T>& P, const std::string& prefix,
                                    typename Tape<T>::Var prev, typename Tape<T>::Var skip) {
    auto& t = P.tape();
    const auto& ps = t.val(prev).shape;
    const auto& ss = t.val(skip).shape;
    if (!(ss[2] == ps[2] || ss[2] == 2 * ps[2]) || !(ss[3] == ps[3] || ss[3] == 2 * ps[3]))
        throw IncompatibleSkip("prev " + shape_str(ps) + " vs skip " + shape_str(ss));
    auto up = (ss[2] == ps[2] && ss[3] == ps[3]) ? prev : t.bilinear(prev, ss[2], ss[3]);
    auto x = t.concat_ch(up, skip);
    int64_t out_ch = t.val(P(prefix + ".conv1.weight")).dim(0);
    int64_t groups = pick_groups(out_ch);
    x = t.conv2d(x, P(prefix + ".conv1.weight"), P(prefix + ".conv1.bias"), 1, 1);
    x = t.relu(t.groupnorm(x, P(prefix + ".gn1.gamma"), P(prefix + ".gn1.beta"), groups));
    x = t.conv2d(x, P(prefix + ".conv2.weight"), P(prefix + ".conv2.bias"), 1, 1);
    x = t.relu(t.groupnorm(x, P(prefix + ".gn2.gamma"), P(prefix + ".gn2.beta"), groups));
    return scse(P, prefix + ".scse", x);
}

/// Full transformer branch: encoder, then decoder blocks consuming skips
/// deepest-first. Output: [B, C_tb, img/4, img/4].
template <typename T>
typename Tape<T>::Var tb_forward(ParamVars<T>& P, typename Tape<T>::Var image,
                                 const SwinConfig& cfg) {
    auto& t = P.tape();
    auto enc = swin_encoder_forward(P, image, cfg);
    auto to_nchw = [&](typename Tape<T>::Var v) {
        const auto& s = t.val(v).shape;
        return t.remap(v, {s[0], s[3], s[1], s[2]},
                       swin_maps::bhwc_to_nchw(s[0], s[1], s[2], s[3]));
    };
    auto x = to_nchw(enc.skips.back());
    for (int64_t k = 0; k < cfg.stages() - 1; ++k) {
        auto skip = to_nchw(enc.skips[cfg.stages() - 2 - k]);
        x = decoder_block(P, "swin.decoder" + std::to_string(k), x, skip);
    }
    return x;
}

}  // namespace fcbswin
