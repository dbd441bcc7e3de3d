#include "hifgo/lora.hpp"

#include <gtest/gtest.h>

#include <cstring>

#include "test_util.hpp"

using hifgo::BaseWeights;
using hifgo::DeltaStack;
using hifgo::LayerShape;
using hifgo::LoraAdapter;
using hifgo::LoraConfig;
using hifgo::Matrix;
using hifgo::RngStream;

namespace {

std::vector<LayerShape> two_layer_arch() { return {{4, 6}, {3, 4}}; }

LoraAdapter seeded_adapter(std::uint64_t seed, double scale = 1.0) {
    LoraConfig cfg;
    cfg.rank = 2;
    cfg.scale = scale;
    LoraAdapter ad = hifgo::init_adapter(two_layer_arch(), cfg, RngStream(seed));
    RngStream rng(seed + 1);
    for (auto& b : ad.b) b = hifgo::gaussian_matrix(rng, b.rows(), b.cols(), 1.0);
    for (auto& a : ad.a) a = hifgo::gaussian_matrix(rng, a.rows(), a.cols(), 1.0);
    return ad;
}

}  // namespace

TEST(InitAdapter, EffectiveDeltaStartsAtZero) {
    LoraConfig cfg;
    cfg.rank = 2;
    const LoraAdapter ad = hifgo::init_adapter(two_layer_arch(), cfg, RngStream(4));
    for (const auto& d : hifgo::effective_delta(ad)) {
        for (double v : d.data()) EXPECT_EQ(v, 0.0);
    }
}

TEST(InitAdapter, DeterministicPerSeed) {
    LoraConfig cfg;
    const LoraAdapter x = hifgo::init_adapter(two_layer_arch(), cfg, RngStream(9));
    const LoraAdapter y = hifgo::init_adapter(two_layer_arch(), cfg, RngStream(9));
    for (std::size_t l = 0; l < x.a.size(); ++l) {
        EXPECT_EQ(std::memcmp(x.a[l].data().data(), y.a[l].data().data(),
                              x.a[l].size() * sizeof(double)),
                  0);
    }
}

TEST(InitAdapter, FactorShapesFollowRank) {
    LoraConfig cfg;
    cfg.rank = 2;
    const LoraAdapter ad = hifgo::init_adapter({{4, 6}}, cfg, RngStream(1));
    EXPECT_EQ(ad.b[0].rows(), 4u);
    EXPECT_EQ(ad.b[0].cols(), 2u);
    EXPECT_EQ(ad.a[0].rows(), 2u);
    EXPECT_EQ(ad.a[0].cols(), 6u);
}

TEST(InitAdapter, RankTooLargeIsConfigError) {
    LoraConfig cfg;
    cfg.rank = 5;
    EXPECT_THROW(hifgo::init_adapter({{4, 6}}, cfg, RngStream(1)), hifgo::ConfigError);
}

TEST(EffectiveDelta, ScalarCase) {
    LoraAdapter ad;
    ad.rank = 1;
    ad.scale = 1.0;
    ad.b = {Matrix::from_rows({{2}})};
    ad.a = {Matrix::from_rows({{3}})};
    EXPECT_DOUBLE_EQ(hifgo::effective_delta(ad)[0](0, 0), 6.0);
}

TEST(EffectiveDelta, OuterProductAndScaleLinearity) {
    LoraAdapter ad;
    ad.rank = 1;
    ad.scale = 1.0;
    ad.b = {Matrix::from_rows({{1}, {2}})};
    ad.a = {Matrix::from_rows({{3, 4}})};
    const Matrix full = hifgo::effective_delta(ad)[0];
    const Matrix want = Matrix::from_rows({{3, 4}, {6, 8}});
    EXPECT_LT(testutil::rel_error(full, want), 1e-15);

    ad.scale = 0.5;
    const Matrix half = hifgo::effective_delta(ad)[0];
    const Matrix want_half = Matrix::from_rows({{1.5, 2}, {3, 4}});
    EXPECT_LT(testutil::rel_error(half, want_half), 1e-15);
}

TEST(EffectiveDelta, RankBoundHoldsOnRandomAdapters) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const LoraAdapter ad = seeded_adapter(seed);
        for (const auto& d : hifgo::effective_delta(ad)) {
            EXPECT_LE(testutil::numeric_rank(d), static_cast<int>(ad.rank));
        }
    }
}

TEST(Merge, EmptyStackNoAdapterIsBase) {
    RngStream rng(31);
    BaseWeights base;
    base.w0 = {hifgo::gaussian_matrix(rng, 4, 6, 1.0),
               hifgo::gaussian_matrix(rng, 3, 4, 1.0)};
    const auto merged = hifgo::merge(base, DeltaStack{});
    for (std::size_t l = 0; l < merged.size(); ++l) {
        EXPECT_LT(testutil::rel_error(merged[l], base.w0[l]), 1e-16);
    }
}

TEST(Merge, ZeroAdapterIsBase) {
    RngStream rng(32);
    BaseWeights base;
    base.w0 = {hifgo::gaussian_matrix(rng, 4, 6, 1.0),
               hifgo::gaussian_matrix(rng, 3, 4, 1.0)};
    LoraConfig cfg;
    const LoraAdapter ad = hifgo::init_adapter(two_layer_arch(), cfg, RngStream(7));
    const auto merged = hifgo::merge(base, DeltaStack{}, &ad);
    for (std::size_t l = 0; l < merged.size(); ++l) {
        EXPECT_LT(testutil::rel_error(merged[l], base.w0[l]), 1e-16);
    }
}

TEST(Merge, MatchesElementwiseSumReference) {
    RngStream rng(33);
    BaseWeights base;
    base.w0 = {hifgo::gaussian_matrix(rng, 4, 6, 1.0),
               hifgo::gaussian_matrix(rng, 3, 4, 1.0)};
    DeltaStack stack;
    stack = hifgo::freeze_delta(seeded_adapter(1), stack);
    stack = hifgo::freeze_delta(seeded_adapter(2), stack);
    const LoraAdapter current = seeded_adapter(3);
    const auto merged = hifgo::merge(base, stack, &current);

    const auto cur_delta = hifgo::effective_delta(current);
    for (std::size_t l = 0; l < merged.size(); ++l) {
        for (std::size_t i = 0; i < merged[l].rows(); ++i) {
            for (std::size_t j = 0; j < merged[l].cols(); ++j) {
                const double want = base.w0[l](i, j) + stack.entries[0][l](i, j) +
                                    stack.entries[1][l](i, j) + cur_delta[l](i, j);
                EXPECT_DOUBLE_EQ(merged[l](i, j), want);
            }
        }
    }
}

TEST(Merge, StackFoldMatchesIteratedSinglesBitwise) {
    RngStream rng(34);
    BaseWeights base;
    base.w0 = {hifgo::gaussian_matrix(rng, 4, 6, 1.0),
               hifgo::gaussian_matrix(rng, 3, 4, 1.0)};
    DeltaStack stack;
    for (std::uint64_t s = 0; s < 3; ++s) stack = hifgo::freeze_delta(seeded_adapter(s), stack);

    const auto all_at_once = hifgo::merge(base, stack);
    BaseWeights rolling = base;
    for (const auto& entry : stack.entries) {
        DeltaStack one;
        one.entries = {entry};
        rolling.w0 = hifgo::merge(rolling, one);
    }
    for (std::size_t l = 0; l < all_at_once.size(); ++l) {
        EXPECT_EQ(std::memcmp(all_at_once[l].data().data(),
                              rolling.w0[l].data().data(),
                              all_at_once[l].size() * sizeof(double)),
                  0);
    }
}

TEST(Merge, ShapeMismatchThrows) {
    BaseWeights base;
    base.w0 = {Matrix(4, 6)};
    DeltaStack stack;
    stack.entries.push_back({Matrix(3, 6)});
    EXPECT_THROW(hifgo::merge(base, stack), hifgo::DimError);
}

TEST(AdapterNormSq, ZeroForZeroB) {
    LoraConfig cfg;
    const LoraAdapter ad = hifgo::init_adapter(two_layer_arch(), cfg, RngStream(2));
    EXPECT_DOUBLE_EQ(hifgo::adapter_norm_sq(ad), 0.0);
}

TEST(AdapterNormSq, HandValue) {
    LoraAdapter ad;
    ad.rank = 1;
    ad.scale = 1.0;
    ad.b = {Matrix::from_rows({{1}})};
    ad.a = {Matrix::from_rows({{3, 4}})};
    EXPECT_DOUBLE_EQ(hifgo::adapter_norm_sq(ad), 25.0);
}

TEST(AdapterNormSq, EqualsPerLayerFrobeniusSumExactly) {
    const LoraAdapter ad = seeded_adapter(8, 0.7);
    double want = 0.0;
    for (const auto& d : hifgo::effective_delta(ad)) {
        want += hifgo::frobenius_inner(d, d);
    }
    EXPECT_EQ(hifgo::adapter_norm_sq(ad), want);
}

TEST(FreezeDelta, AppendsWithoutMutatingInputs) {
    LoraConfig cfg;
    const LoraAdapter zero = hifgo::init_adapter(two_layer_arch(), cfg, RngStream(3));
    DeltaStack empty;
    const DeltaStack one = hifgo::freeze_delta(zero, empty);
    EXPECT_EQ(empty.size(), 0u);
    ASSERT_EQ(one.size(), 1u);
    for (const auto& m : one.entries[0]) {
        for (double v : m.data()) EXPECT_EQ(v, 0.0);
    }
    const DeltaStack two = hifgo::freeze_delta(seeded_adapter(4), one);
    EXPECT_EQ(one.size(), 1u);
    EXPECT_EQ(two.size(), 2u);
}

TEST(FreezeDelta, MergeBeforeAndAfterFreezingAgree) {
    RngStream rng(35);
    BaseWeights base;
    base.w0 = {hifgo::gaussian_matrix(rng, 4, 6, 1.0),
               hifgo::gaussian_matrix(rng, 3, 4, 1.0)};
    DeltaStack stack = hifgo::freeze_delta(seeded_adapter(5), DeltaStack{});
    const LoraAdapter ad = seeded_adapter(6);

    const auto live = hifgo::merge(base, stack, &ad);
    const auto frozen = hifgo::merge(base, hifgo::freeze_delta(ad, stack));
    for (std::size_t l = 0; l < live.size(); ++l) {
        EXPECT_EQ(std::memcmp(live[l].data().data(), frozen[l].data().data(),
                              live[l].size() * sizeof(double)),
                  0);
    }
}
