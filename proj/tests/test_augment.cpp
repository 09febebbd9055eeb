#include <catch2/catch_amalgamated.hpp>

#include "fcbswin/augment.hpp"

using namespace fcbswin;
using T = float;

namespace {
Tensor<T> random_image(int64_t h, int64_t w, uint64_t seed) {
    Rng rng = Rng::keyed({0x1ead, seed});
    Tensor<T> img({h, w, 3});
    for (auto& v : img.data) v = static_cast<T>(rng.uniform());
    return img;
}

Tensor<T> random_mask(int64_t h, int64_t w, uint64_t seed) {
    Rng rng = Rng::keyed({0x3a5c, seed});
    Tensor<T> m({h, w});
    for (auto& v : m.data) v = rng.bernoulli(0.4) ? T(1) : T(0);
    return m;
}
}  // namespace

TEST_CASE("geometric_augment") {
    auto img = random_image(16, 20, 1);
    auto mask = random_mask(16, 20, 2);

    SECTION("identity parameters reproduce the input exactly") {
        Rng rng = sample_rng(1, 2, 3);
        auto [oi, om] = geometric_augment(img, mask, rng, AugmentConfig::identity());
        for (int64_t i = 0; i < img.numel(); ++i) REQUIRE(oi[i] == img[i]);
        for (int64_t i = 0; i < mask.numel(); ++i) REQUIRE(om[i] == mask[i]);
    }

    SECTION("flips are involutions") {
        AugmentConfig cfg = AugmentConfig::identity();
        cfg.flip_prob = 1.0;  // forces both flips on every draw
        Rng r1 = sample_rng(4, 0, 0);
        auto [fi, fm] = geometric_augment(img, mask, r1, cfg);
        Rng r2 = sample_rng(4, 0, 1);
        auto [oi, om] = geometric_augment(fi, fm, r2, cfg);
        for (int64_t i = 0; i < img.numel(); ++i) REQUIRE(oi[i] == img[i]);
        for (int64_t i = 0; i < mask.numel(); ++i) REQUIRE(om[i] == mask[i]);
    }

    SECTION("mask stays binary over 100 random draws") {
        AugmentConfig cfg;  // full default ranges
        cfg.translate_px = {-6.0, 6.0};
        for (uint64_t draw = 0; draw < 100; ++draw) {
            Rng rng = sample_rng(9, 0, draw);
            auto [oi, om] = geometric_augment(img, mask, rng, cfg);
            for (int64_t i = 0; i < om.numel(); ++i)
                REQUIRE((om[i] == T(0) || om[i] == T(1)));
        }
    }

    SECTION("shape mismatch rejected") {
        Rng rng = sample_rng(1, 1, 1);
        AugmentConfig cfg;
        REQUIRE_THROWS_AS(geometric_augment(img, random_mask(8, 8, 3), rng, cfg), ShapeMismatch);
        // wrong channel count
        REQUIRE_THROWS_AS(
            geometric_augment(random_mask(16, 20, 3).reshaped({16, 20, 1}), mask, rng, cfg),
            ShapeMismatch);
    }
}

TEST_CASE("color_augment") {
    auto img = random_image(12, 12, 5);

    SECTION("identity factors leave the image nearly untouched") {
        Rng rng = sample_rng(1, 0, 0);
        auto out = color_augment(img, rng, AugmentConfig::identity());
        T max_diff = 0;
        for (int64_t i = 0; i < img.numel(); ++i)
            max_diff = std::max(max_diff, std::abs(out[i] - img[i]));
        REQUIRE(max_diff < 1e-5f);
    }

    SECTION("brightness factor 0 blacks the image out") {
        AugmentConfig cfg = AugmentConfig::identity();
        cfg.brightness = {0.0, 0.0};
        Rng rng = sample_rng(2, 0, 0);
        auto out = color_augment(img, rng, cfg);
        REQUIRE(out.max_abs() == T(0));
    }

    SECTION("sigma=2 blur preserves the mass of a centered hot pixel") {
        AugmentConfig cfg = AugmentConfig::identity();
        cfg.blur_sigma = {2.0, 2.0};
        Tensor<T> hot = Tensor<T>::zeros({51, 51, 3});
        for (int64_t c = 0; c < 3; ++c) hot.at({25, 25, c}) = T(1);
        Rng rng = sample_rng(3, 0, 0);
        auto out = color_augment(hot, rng, cfg);
        double sum = 0;
        for (auto v : out.data) sum += v;
        REQUIRE(sum == Catch::Approx(3.0).margin(1e-4));
    }

    SECTION("output stays in [0,1] under the full jitter ranges") {
        AugmentConfig cfg;
        for (uint64_t draw = 0; draw < 20; ++draw) {
            Rng rng = sample_rng(6, 0, draw);
            auto out = color_augment(img, rng, cfg);
            for (auto v : out.data) {
                REQUIRE(v >= T(0));
                REQUIRE(v <= T(1));
            }
        }
    }
}

TEST_CASE("normalize endpoints") {
    Tensor<T> img({1, 1, 3}, {0.0f, 1.0f, 0.5f});
    auto out = normalize(img);
    REQUIRE(out[0] == T(-1));
    REQUIRE(out[1] == T(1));
    REQUIRE(out[2] == T(0));
}

TEST_CASE("resize_pair") {
    SECTION("same-size resize is the identity") {
        auto img = random_image(10, 14, 7);
        auto mask = random_mask(10, 14, 8);
        auto [oi, om] = resize_pair(img, mask, 10, 14);
        for (int64_t i = 0; i < img.numel(); ++i) REQUIRE(oi[i] == img[i]);
        for (int64_t i = 0; i < mask.numel(); ++i) REQUIRE(om[i] == mask[i]);
    }
    SECTION("native 384x288 maps to 384x384") {
        auto img = random_image(288, 384, 9);
        auto mask = random_mask(288, 384, 10);
        auto [oi, om] = resize_pair(img, mask, 384, 384);
        REQUIRE(oi.shape == Shape{384, 384, 3});
        REQUIRE(om.shape == Shape{384, 384});
        for (int64_t i = 0; i < om.numel(); ++i) REQUIRE((om[i] == T(0) || om[i] == T(1)));
    }
    SECTION("2x2 checkerboard mask upscales by duplicated blocks") {
        Tensor<T> img = Tensor<T>::zeros({2, 2, 3});
        Tensor<T> mask({2, 2}, {1, 0, 0, 1});
        auto [oi, om] = resize_pair(img, mask, 4, 4);
        Tensor<T> want({4, 4}, {1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1});
        for (int64_t i = 0; i < 16; ++i) REQUIRE(om[i] == want[i]);
    }
    SECTION("zero target dimension rejected") {
        auto img = random_image(4, 4, 11);
        auto mask = random_mask(4, 4, 12);
        REQUIRE_THROWS_AS(resize_pair(img, mask, 0, 4), ZeroDimension);
    }
}

TEST_CASE("pipeline reproducibility and ordering") {
    auto img = random_image(16, 16, 13);
    auto mask = random_mask(16, 16, 14);
    AugmentConfig cfg;
    cfg.translate_px = {-4.0, 4.0};

    SECTION("identical (seed, epoch, index) keys give bitwise-identical pairs") {
        Rng r1 = sample_rng(5, 3, 17);
        Rng r2 = sample_rng(5, 3, 17);
        auto [i1, m1] = augment_train_pair(img, mask, r1, cfg);
        auto [i2, m2] = augment_train_pair(img, mask, r2, cfg);
        for (int64_t i = 0; i < i1.numel(); ++i) REQUIRE(i1[i] == i2[i]);
        for (int64_t i = 0; i < m1.numel(); ++i) REQUIRE(m1[i] == m2[i]);
    }
    SECTION("different keys give different pairs") {
        Rng r1 = sample_rng(5, 3, 17);
        Rng r2 = sample_rng(5, 3, 18);
        auto [i1, m1] = augment_train_pair(img, mask, r1, cfg);
        auto [i2, m2] = augment_train_pair(img, mask, r2, cfg);
        bool same = true;
        for (int64_t i = 0; i < i1.numel() && same; ++i) same = (i1[i] == i2[i]);
        REQUIRE_FALSE(same);
    }
    SECTION("normalization is applied last: outputs live in [-1,1]") {
        Rng rng = sample_rng(5, 0, 0);
        auto [oi, om] = augment_train_pair(img, mask, rng, cfg);
        for (auto v : oi.data) {
            REQUIRE(v >= T(-1));
            REQUIRE(v <= T(1));
        }
        for (int64_t i = 0; i < om.numel(); ++i) REQUIRE((om[i] == T(0) || om[i] == T(1)));
    }
}
