#include <catch2/catch_amalgamated.hpp>

#include "fcbswin/gradcheck.hpp"
#include "fcbswin/swin.hpp"

using namespace fcbswin;
using D = double;
using TapeD = Tape<D>;
using VarD = TapeD::Var;

namespace {
Tensor<D> randn(Shape s, uint64_t seed) {
    Rng rng = Rng::keyed({seed});
    Tensor<D> t(std::move(s));
    for (auto& v : t.data) v = rng.normal();
    return t;
}
}  // namespace

TEST_CASE("patch_embed token counts") {
    SwinConfig cfg;
    cfg.img_size = 16;
    cfg.embed_dim = 8;
    cfg.depths = {1};
    cfg.num_heads = {2};
    cfg.window_size = 4;
    cfg.decoder_channels = {};

    ParamStore<D> store;
    Rng rng = Rng::keyed({1});
    init_linear(store, "swin.patch_embed", 48, 8, rng);

    TapeD t;
    ParamVars<D> P(t, store, false);
    auto img = t.leaf(randn({1, 3, 16, 16}, 2));
    auto tokens = patch_embed(P, img, cfg);
    REQUIRE(t.val(tokens).shape == Shape{1, 16, 8});

    SECTION("zero image with zero bias gives zero tokens") {
        TapeD t2;
        ParamVars<D> P2(t2, store, false);
        auto z = t2.leaf(Tensor<D>::zeros({1, 3, 16, 16}));
        auto tok = patch_embed(P2, z, cfg);
        REQUIRE(t2.val(tok).max_abs() == 0.0);
    }
    SECTION("indivisible input rejected") {
        TapeD t2;
        ParamVars<D> P2(t2, store, false);
        auto bad = t2.leaf(randn({1, 3, 18, 18}, 3));
        REQUIRE_THROWS_AS(patch_embed(P2, bad, cfg), IndivisibleInput);
    }
}

TEST_CASE("window partition/reverse round trip") {
    auto x = randn({2, 8, 8, 3}, 4);
    TapeD t;
    auto v = t.leaf(x);
    auto win = t.remap(v, {2 * 4, 16, 3}, swin_maps::window_partition(2, 8, 8, 3, 4));
    auto back = t.remap(win, {2, 8, 8, 3}, swin_maps::window_reverse(2, 8, 8, 3, 4));
    for (int64_t i = 0; i < x.numel(); ++i) REQUIRE(t.val(back)[i] == x[i]);

    SECTION("96x96 grid with M=12 gives 64 windows of 144 tokens") {
        auto m = swin_maps::window_partition(1, 96, 96, 1, 12);
        REQUIRE(static_cast<int64_t>(m->size()) == 96 * 96);
        // 64 windows x 144 tokens indexes the full grid exactly once
        std::vector<int> hits(96 * 96, 0);
        for (auto i : *m) hits[i]++;
        for (int h : hits) REQUIRE(h == 1);
    }
    SECTION("M == H == W is a single window") {
        auto m = swin_maps::window_partition(1, 4, 4, 2, 4);
        auto x1 = randn({1, 4, 4, 2}, 5);
        TapeD t2;
        auto w1 = t2.remap(t2.leaf(x1), {1, 16, 2}, m);
        REQUIRE(t2.val(w1).dim(0) == 1);
    }
    SECTION("indivisible grid rejected") {
        REQUIRE_THROWS_AS(swin_maps::window_partition(1, 6, 6, 1, 4), IndivisibleFeatureMap);
    }
}

TEST_CASE("cosine attention basics") {
    Rng rng = Rng::keyed({6});
    ParamStore<D> store;
    init_attention(store, "attn", 8, 2, 2, rng);

    SECTION("single-token window reduces to out_proj(v)") {
        ParamStore<D> s1;
        Rng r1 = Rng::keyed({7});
        init_attention(s1, "attn", 4, 2, 1, r1);
        auto x = randn({3, 1, 4}, 8);
        TapeD t;
        ParamVars<D> P(t, s1, false);
        auto win = t.leaf(x);
        auto out = cosine_window_attention(P, "attn", win, 2, 1, 0.01);
        // expected: proj(v) with attention weight exactly 1
        TapeD t2;
        ParamVars<D> P2(t2, s1, false);
        auto v = linear_fwd(P2, "attn.wv", t2.leaf(x));
        auto expect = linear_fwd(P2, "attn.proj", v);
        for (int64_t i = 0; i < x.numel(); ++i)
            REQUIRE(t.val(out)[i] == Catch::Approx(t2.val(expect)[i]).margin(1e-12));
    }

    SECTION("rows sum to 1 and query scaling is a no-op") {
        auto q = randn({4, 4, 4}, 9);
        auto k = randn({4, 4, 4}, 10);
        auto q3 = q;
        for (int64_t f = 0; f < 4; ++f) q3.at({1, 2, f}) *= 3.0;  // scale one query vector

        auto probs_of = [&](const Tensor<D>& qq) {
            TapeD t;
            ParamVars<D> P(t, store, false);
            auto pr = cosine_attention_probs(t, t.leaf(qq), t.leaf(k), P("attn.log_tau"),
                                             P("attn.rel_bias"), 2, 2, 0.01);
            return t.val(pr);
        };
        auto p1 = probs_of(q);
        auto p3 = probs_of(q3);
        for (int64_t r = 0; r < 4 * 4; ++r) {
            D sum = 0;
            for (int64_t j = 0; j < 4; ++j) sum += p1[r * 4 + j];
            REQUIRE(sum == Catch::Approx(1.0).margin(1e-6));
        }
        for (int64_t i = 0; i < p1.numel(); ++i)
            REQUIRE(p1[i] == Catch::Approx(p3[i]).margin(1e-6));
    }

    SECTION("identical keys get identical attention weights") {
        auto q = randn({2, 4, 4}, 11);
        auto k = randn({2, 4, 4}, 12);
        for (int64_t f = 0; f < 4; ++f) k.at({0, 2, f}) = k.at({0, 1, f});
        ParamStore<D> s0;
        Rng r0 = Rng::keyed({13});
        init_attention(s0, "attn", 4, 2, 2, r0);
        // zero relative bias so symmetry is exact
        auto& tb = s0.at("attn.rel_bias").value;
        std::fill(tb.data.begin(), tb.data.end(), 0.0);
        TapeD t;
        ParamVars<D> P(t, s0, false);
        auto pr = cosine_attention_probs(t, t.leaf(q), t.leaf(k), P("attn.log_tau"),
                                         P("attn.rel_bias"), 2, 2, 0.01);
        const auto& p = t.val(pr);
        for (int64_t i = 0; i < 4; ++i)
            REQUIRE(p.at({0, i, 1}) == Catch::Approx(p.at({0, i, 2})).margin(1e-12));
    }

    SECTION("head divisibility enforced") {
        TapeD t;
        ParamVars<D> P(t, store, false);
        auto win = t.leaf(randn({1, 4, 8}, 14));
        REQUIRE_THROWS_AS(cosine_window_attention(P, "attn", win, 3, 2, 0.01),
                          HeadDivisibility);
    }
}

TEST_CASE("swinv2 block") {
    Rng rng = Rng::keyed({15});
    ParamStore<D> store;
    init_swin_block(store, "blk", 8, 2, 4, 4.0, rng);
    auto x = randn({1, 4, 4, 8}, 16);

    SECTION("zero-branch post-norm identity is exact") {
        ParamStore<D> s0;
        Rng r0 = Rng::keyed({17});
        init_swin_block(s0, "blk", 8, 2, 4, 4.0, r0);
        for (const char* n : {"blk.attn.proj.weight", "blk.attn.proj.bias",
                              "blk.mlp.fc2.weight", "blk.mlp.fc2.bias"}) {
            auto& v = s0.at(n).value;
            std::fill(v.data.begin(), v.data.end(), 0.0);
        }
        TapeD t;
        ParamVars<D> P(t, s0, false);
        auto out = swinv2_block(P, "blk", t.leaf(x), 2, 4, false, 0.01);
        for (int64_t i = 0; i < x.numel(); ++i) REQUIRE(t.val(out)[i] == x[i]);
    }

    SECTION("shift disabled when the window covers the grid") {
        TapeD t1, t2;
        ParamVars<D> P1(t1, store, false), P2(t2, store, false);
        auto a = swinv2_block(P1, "blk", t1.leaf(x), 2, 4, false, 0.01);
        auto b = swinv2_block(P2, "blk", t2.leaf(x), 2, 4, true, 0.01);
        for (int64_t i = 0; i < x.numel(); ++i) REQUIRE(t1.val(a)[i] == t2.val(b)[i]);
    }
}

TEST_CASE("patch merge") {
    Rng rng = Rng::keyed({18});

    SECTION("shape halves per axis, channels double") {
        ParamStore<D> store;
        init_norm(store, "m.norm", 16);
        init_linear(store, "m.reduction", 16, 8, rng);
        TapeD t;
        ParamVars<D> P(t, store, false);
        auto out = patch_merge(P, "m", t.leaf(randn({1, 4, 4, 4}, 19)));
        REQUIRE(t.val(out).shape == Shape{1, 2, 2, 8});
    }
    SECTION("the merged token sees all four neighborhood values") {
        auto m = swin_maps::patch_merge(1, 2, 2, 1);
        REQUIRE(*m == std::vector<int64_t>({0, 2, 1, 3}));
    }
    SECTION("odd dims rejected") {
        REQUIRE_THROWS_AS(swin_maps::patch_merge(1, 3, 4, 1), OddDimensions);
    }
}

TEST_CASE("scse gating") {
    Rng rng = Rng::keyed({20});
    ParamStore<D> store;
    init_scse(store, "g", 4, 2, rng);
    auto x = randn({1, 4, 3, 3}, 21);

    SECTION("gates forced to ~1 give ~2x") {
        ParamStore<D> s1;
        Rng r1 = Rng::keyed({22});
        init_scse(s1, "g", 4, 2, r1);
        std::fill(s1.at("g.cse_fc2.weight").value.data.begin(),
                  s1.at("g.cse_fc2.weight").value.data.end(), 0.0);
        std::fill(s1.at("g.cse_fc2.bias").value.data.begin(),
                  s1.at("g.cse_fc2.bias").value.data.end(), 50.0);
        std::fill(s1.at("g.sse_conv.weight").value.data.begin(),
                  s1.at("g.sse_conv.weight").value.data.end(), 0.0);
        std::fill(s1.at("g.sse_conv.bias").value.data.begin(),
                  s1.at("g.sse_conv.bias").value.data.end(), 50.0);
        TapeD t;
        ParamVars<D> P(t, s1, false);
        auto out = scse(P, "g", t.leaf(x));
        for (int64_t i = 0; i < x.numel(); ++i)
            REQUIRE(t.val(out)[i] == Catch::Approx(2.0 * x[i]).margin(1e-6));
    }
    SECTION("zero input gives zero output") {
        TapeD t;
        ParamVars<D> P(t, store, false);
        auto out = scse(P, "g", t.leaf(Tensor<D>::zeros({1, 4, 3, 3})));
        REQUIRE(t.val(out).max_abs() == 0.0);
    }
    SECTION("channels below the reduction rejected") {
        ParamStore<D> s2;
        Rng r2 = Rng::keyed({23});
        REQUIRE_THROWS_AS(init_scse(s2, "g", 4, 8, r2), ChannelTooSmall);
    }
}

TEST_CASE("decoder block shapes") {
    Rng rng = Rng::keyed({24});
    ParamStore<D> store;
    init_decoder_block(store, "d", 12, 8, 2, rng);
    TapeD t;
    ParamVars<D> P(t, store, false);
    auto prev = t.leaf(randn({1, 8, 4, 4}, 25));
    auto skip = t.leaf(randn({1, 4, 8, 8}, 26));
    auto out = decoder_block(P, "d", prev, skip);
    REQUIRE(t.val(out).shape == Shape{1, 8, 8, 8});

    SECTION("incompatible skip resolution rejected") {
        auto bad = t.leaf(randn({1, 4, 12, 12}, 27));
        REQUIRE_THROWS_AS(decoder_block(P, "d", prev, bad), IncompatibleSkip);
    }
}

TEST_CASE("toy encoder and TB shapes") {
    ModelConfig cfg = ModelConfig::toy(64);
    ParamStore<D> store;
    Rng rng = Rng::keyed({28});
    init_swin_params(store, cfg.swin, rng);

    TapeD t;
    ParamVars<D> P(t, store, false);
    auto img = t.leaf(randn({1, 3, 64, 64}, 29));
    auto enc = swin_encoder_forward(P, img, cfg.swin);
    REQUIRE(enc.skips.size() == 2);
    REQUIRE(t.val(enc.skips[0]).shape == Shape{1, 16, 16, 8});
    REQUIRE(t.val(enc.skips[1]).shape == Shape{1, 8, 8, 16});

    TapeD t2;
    ParamVars<D> P2(t2, store, false);
    auto tb = tb_forward(P2, t2.leaf(randn({1, 3, 64, 64}, 30)), cfg.swin);
    REQUIRE(t2.val(tb).shape == Shape{1, 16, 16, 16});
}

TEST_CASE("batch independence of TB") {
    ModelConfig cfg = ModelConfig::toy(64);
    ParamStore<D> store;
    Rng rng = Rng::keyed({31});
    init_swin_params(store, cfg.swin, rng);

    auto one = randn({1, 3, 64, 64}, 32);
    Tensor<D> two({2, 3, 64, 64});
    std::copy(one.data.begin(), one.data.end(), two.data.begin());
    std::copy(one.data.begin(), one.data.end(), two.data.begin() + one.numel());

    TapeD t;
    ParamVars<D> P(t, store, false);
    auto out = tb_forward(P, t.leaf(two), cfg.swin);
    const auto& o = t.val(out);
    int64_t half = o.numel() / 2;
    for (int64_t i = 0; i < half; ++i) REQUIRE(o[i] == o[half + i]);
}

TEST_CASE("module gradient checks (attention, block, merge, scse, decoder)") {
    for (auto& c : gradcheck_suite(false)) {
        INFO(c.name << " rel_error=" << c.rel_error);
        CHECK(c.passed());
    }
}
