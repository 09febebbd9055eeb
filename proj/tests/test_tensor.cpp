#include <catch2/catch_amalgamated.hpp>

#include "fcbswin/tensor.hpp"

using namespace fcbswin;

TEST_CASE("tensor shape bookkeeping") {
    Tensor<float> t({2, 3, 4});
    REQUIRE(t.numel() == 24);
    REQUIRE(t.rank() == 3);
    t.at({1, 2, 3}) = 5.f;
    REQUIRE(t[23] == 5.f);

    auto r = t.reshaped({6, 4});
    REQUIRE(r.dim(0) == 6);
    REQUIRE(r[23] == 5.f);
    REQUIRE_THROWS_AS(t.reshaped({5, 5}), Error);
}

TEST_CASE("tensor fill and cast") {
    auto t = Tensor<double>::full({3}, 1.5);
    auto f = t.cast<float>();
    REQUIRE(f[2] == 1.5f);
    REQUIRE(Tensor<float>::zeros({2, 2}).max_abs() == 0.f);
}
