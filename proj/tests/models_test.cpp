#include "hifgo/models.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using hifgo::Batch;
using hifgo::LayerMats;
using hifgo::Matrix;
using hifgo::ModelSpec;
using hifgo::RngStream;

namespace {

Batch random_classification(RngStream& rng, std::size_t n, std::size_t dim,
                            std::size_t classes) {
    Batch b;
    b.inputs = hifgo::gaussian_matrix(rng, n, dim, 1.0);
    b.labels.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        b.labels.push_back(static_cast<int>(rng.next_below(classes)));
    }
    return b;
}

Batch random_regression(RngStream& rng, std::size_t n, std::size_t dim,
                        std::size_t out) {
    Batch b;
    b.inputs = hifgo::gaussian_matrix(rng, n, dim, 1.0);
    b.targets = hifgo::gaussian_matrix(rng, n, out, 1.0);
    return b;
}

LayerMats random_weights(RngStream& rng, const ModelSpec& spec, double std = 0.5) {
    LayerMats w;
    for (const auto& l : spec.layers) {
        w.push_back(hifgo::gaussian_matrix(rng, l.rows, l.cols, std));
    }
    return w;
}

Batch batch_for(RngStream& rng, const ModelSpec& spec, std::size_t n) {
    return spec.loss == hifgo::LossKind::cross_entropy
               ? random_classification(rng, n, spec.input_dim(), spec.output_dim())
               : random_regression(rng, n, spec.input_dim(), spec.output_dim());
}

// Flattened finite-difference gradient over all layers.
LayerMats fd_weight_grads(const ModelSpec& spec, const LayerMats& w, const Batch& b) {
    LayerMats out;
    for (std::size_t l = 0; l < w.size(); ++l) {
        LayerMats probe = w;
        out.push_back(hifgo::finite_diff_grad(
            [&](const Matrix& m) {
                probe[l] = m;
                return hifgo::forward_loss(spec, probe, b);
            },
            w[l]));
        probe[l] = w[l];
    }
    return out;
}

std::vector<ModelSpec> all_specs() {
    return {ModelSpec::linear_regression(4, 2), ModelSpec::linear_softmax(4, 3),
            ModelSpec::mlp_1h(4, 5, 3)};
}

}  // namespace

TEST(ForwardLoss, UniformLogitsGiveLogC) {
    const ModelSpec spec = ModelSpec::linear_softmax(3, 4);
    const LayerMats w = {Matrix(4, 3)};  // zero weights, all logits equal
    RngStream rng(2);
    const Batch b = random_classification(rng, 16, 3, 4);
    EXPECT_NEAR(hifgo::forward_loss(spec, w, b), std::log(4.0), 1e-12);
}

TEST(ForwardLoss, InterpolatingRegressorHasZeroLoss) {
    const ModelSpec spec = ModelSpec::linear_regression(3, 2);
    RngStream rng(3);
    const LayerMats w = random_weights(rng, spec, 1.0);
    Batch b;
    b.inputs = hifgo::gaussian_matrix(rng, 10, 3, 1.0);
    b.targets = hifgo::matmul(b.inputs, hifgo::transpose(w[0]));
    EXPECT_NEAR(hifgo::forward_loss(spec, w, b), 0.0, 1e-24);
}

TEST(ForwardLoss, MatchesPerSampleLogSoftmaxLoop) {
    const ModelSpec spec = ModelSpec::linear_softmax(5, 2);
    RngStream rng(4);
    const LayerMats w = random_weights(rng, spec);
    const Batch b = random_classification(rng, 8, 5, 2);

    double want = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) {
        double z0 = 0.0, z1 = 0.0;
        for (std::size_t j = 0; j < 5; ++j) {
            z0 += w[0](0, j) * b.inputs(i, j);
            z1 += w[0](1, j) * b.inputs(i, j);
        }
        const double zy = b.labels[i] == 0 ? z0 : z1;
        want += std::log(std::exp(z0) + std::exp(z1)) - zy;
    }
    want /= static_cast<double>(b.size());
    EXPECT_NEAR(hifgo::forward_loss(spec, w, b), want, 1e-12);
}

TEST(ForwardLoss, LossesAreNonNegative) {
    RngStream rng(6);
    for (const auto& spec : all_specs()) {
        for (int t = 0; t < 5; ++t) {
            const LayerMats w = random_weights(rng, spec);
            const Batch b = batch_for(rng, spec, 12);
            EXPECT_GE(hifgo::forward_loss(spec, w, b), 0.0);
        }
    }
}

TEST(GradMerged, HandComputedScalarCase) {
    const ModelSpec spec = ModelSpec::linear_regression(1, 1);
    const LayerMats w = {Matrix::from_rows({{1}})};
    Batch b;
    b.inputs = Matrix::from_rows({{2}});
    b.targets = Matrix::from_rows({{0}});
    const auto rep = hifgo::grad_wrt_merged(spec, w, b);
    EXPECT_DOUBLE_EQ(rep.weight_grads[0](0, 0), 4.0);  // residual 2 times input 2
}

TEST(GradMerged, ZeroAtStationaryPoint) {
    const ModelSpec spec = ModelSpec::linear_regression(3, 2);
    RngStream rng(7);
    const LayerMats w = random_weights(rng, spec, 1.0);
    Batch b;
    b.inputs = hifgo::gaussian_matrix(rng, 10, 3, 1.0);
    b.targets = hifgo::matmul(b.inputs, hifgo::transpose(w[0]));
    const auto rep = hifgo::grad_wrt_merged(spec, w, b);
    for (const auto& g : rep.weight_grads) {
        EXPECT_LE(hifgo::frobenius_norm(g), 1e-8);
    }
}

TEST(GradMerged, MatchesFiniteDifferencesAt20SeededPointsPerKind) {
    RngStream rng(8);
    for (const auto& spec : all_specs()) {
        for (int t = 0; t < 20; ++t) {
            const LayerMats w = random_weights(rng, spec);
            const Batch b = batch_for(rng, spec, 6);
            const auto rep = hifgo::grad_wrt_merged(spec, w, b);
            const auto fd = fd_weight_grads(spec, w, b);
            EXPECT_LT(testutil::rel_error(testutil::flatten(rep.weight_grads),
                                          testutil::flatten(fd)),
                      1e-5);
        }
    }
}

TEST(GradFactors, ZeroBGivesZeroAGradExactly) {
    const ModelSpec spec = ModelSpec::linear_softmax(4, 3);
    hifgo::BaseWeights base;
    base.w0 = {Matrix(3, 4)};
    hifgo::LoraConfig cfg;
    cfg.rank = 2;
    const auto ad = hifgo::init_adapter(base.shapes(), cfg, RngStream(10));
    RngStream rng(11);
    const Batch b = random_classification(rng, 8, 4, 3);
    const auto rep = hifgo::grad_wrt_factors(spec, base, hifgo::DeltaStack{}, ad, b);
    for (double v : rep.a_grads[0].data()) EXPECT_EQ(v, 0.0);
    EXPECT_GT(hifgo::frobenius_norm(rep.b_grads[0]), 0.0);
}

TEST(GradFactors, DoublingScaleDoublesGradsAtZeroDelta) {
    const ModelSpec spec = ModelSpec::linear_softmax(4, 3);
    hifgo::BaseWeights base;
    RngStream wrng(12);
    base.w0 = {hifgo::gaussian_matrix(wrng, 3, 4, 0.5)};
    hifgo::LoraConfig cfg;
    cfg.rank = 2;
    auto ad = hifgo::init_adapter(base.shapes(), cfg, RngStream(13));
    RngStream rng(14);
    const Batch b = random_classification(rng, 8, 4, 3);

    ad.scale = 1.0;
    const auto r1 = hifgo::grad_wrt_factors(spec, base, hifgo::DeltaStack{}, ad, b);
    ad.scale = 2.0;
    const auto r2 = hifgo::grad_wrt_factors(spec, base, hifgo::DeltaStack{}, ad, b);
    for (std::size_t i = 0; i < r1.b_grads[0].size(); ++i) {
        EXPECT_DOUBLE_EQ(r2.b_grads[0].data()[i], 2.0 * r1.b_grads[0].data()[i]);
    }
}

TEST(GradFactors, MatchesFiniteDifferencesOverFactorEntries) {
    const ModelSpec spec = ModelSpec::mlp_1h(4, 5, 3);
    hifgo::BaseWeights base;
    RngStream wrng(15);
    base.w0 = {hifgo::gaussian_matrix(wrng, 5, 4, 0.5),
               hifgo::gaussian_matrix(wrng, 3, 5, 0.5)};
    hifgo::LoraConfig cfg;
    cfg.rank = 2;
    auto ad = hifgo::init_adapter(base.shapes(), cfg, RngStream(16));
    RngStream frng(17);
    for (auto& m : ad.b) m = hifgo::gaussian_matrix(frng, m.rows(), m.cols(), 0.5);
    for (auto& m : ad.a) m = hifgo::gaussian_matrix(frng, m.rows(), m.cols(), 0.5);
    RngStream rng(18);
    const Batch b = random_classification(rng, 8, 4, 3);

    const auto rep = hifgo::grad_wrt_factors(spec, base, hifgo::DeltaStack{}, ad, b);
    EXPECT_NEAR(rep.loss,
                hifgo::forward_loss(
                    spec, hifgo::merge(base, hifgo::DeltaStack{}, &ad), b),
                1e-14);

    for (std::size_t l = 0; l < 2; ++l) {
        hifgo::LoraAdapter probe = ad;
        const Matrix fd_b = hifgo::finite_diff_grad(
            [&](const Matrix& m) {
                probe.b[l] = m;
                return hifgo::forward_loss(
                    spec, hifgo::merge(base, hifgo::DeltaStack{}, &probe), b);
            },
            ad.b[l]);
        probe.b[l] = ad.b[l];
        const Matrix fd_a = hifgo::finite_diff_grad(
            [&](const Matrix& m) {
                probe.a[l] = m;
                return hifgo::forward_loss(
                    spec, hifgo::merge(base, hifgo::DeltaStack{}, &probe), b);
            },
            ad.a[l]);
        EXPECT_LT(testutil::rel_error(rep.b_grads[l], fd_b), 1e-5);
        EXPECT_LT(testutil::rel_error(rep.a_grads[l], fd_a), 1e-5);
    }
}

TEST(GradFactors, ChainRuleDirectionalConsistency) {
    const ModelSpec spec = ModelSpec::linear_softmax(4, 3);
    hifgo::BaseWeights base;
    RngStream wrng(19);
    base.w0 = {hifgo::gaussian_matrix(wrng, 3, 4, 0.5)};
    hifgo::LoraConfig cfg;
    cfg.rank = 2;
    auto ad = hifgo::init_adapter(base.shapes(), cfg, RngStream(20));
    RngStream frng(21);
    for (auto& m : ad.b) m = hifgo::gaussian_matrix(frng, m.rows(), m.cols(), 0.5);
    for (auto& m : ad.a) m = hifgo::gaussian_matrix(frng, m.rows(), m.cols(), 0.5);
    RngStream rng(22);
    const Batch b = random_classification(rng, 10, 4, 3);

    const Matrix db = hifgo::gaussian_matrix(rng, 3, 2, 1.0);
    const Matrix da = hifgo::gaussian_matrix(rng, 2, 4, 1.0);

    const auto rep = hifgo::grad_wrt_factors(spec, base, hifgo::DeltaStack{}, ad, b);
    const double factor_dir = hifgo::frobenius_inner(rep.b_grads[0], db) +
                              hifgo::frobenius_inner(rep.a_grads[0], da);

    // Induced merged direction: s * (dB A + B dA).
    Matrix merged_dir = hifgo::matmul(db, ad.a[0]) + hifgo::matmul(ad.b[0], da);
    merged_dir *= ad.scale;
    const double merged_dirderiv =
        hifgo::frobenius_inner(rep.weight_grads[0], merged_dir);
    EXPECT_NEAR(factor_dir, merged_dirderiv, 1e-10 * std::abs(factor_dir) + 1e-12);

    // And against the numeric directional derivative of the loss.
    const double h = 1e-6;
    hifgo::LoraAdapter plus = ad, minus = ad;
    Matrix hdb = db, hda = da;
    hdb *= h;
    hda *= h;
    plus.b[0] += hdb;
    plus.a[0] += hda;
    minus.b[0] -= hdb;
    minus.a[0] -= hda;
    const double numeric =
        (hifgo::forward_loss(spec, hifgo::merge(base, hifgo::DeltaStack{}, &plus), b) -
         hifgo::forward_loss(spec, hifgo::merge(base, hifgo::DeltaStack{}, &minus), b)) /
        (2.0 * h);
    EXPECT_NEAR(factor_dir, numeric, 1e-6 * std::max(1.0, std::abs(numeric)));
}

TEST(HessianVector, LinearRegressionClosedForm) {
    const ModelSpec spec = ModelSpec::linear_regression(3, 2);
    RngStream rng(23);
    const LayerMats w = random_weights(rng, spec);
    const Batch b = random_regression(rng, 12, 3, 2);
    const LayerMats v = {hifgo::gaussian_matrix(rng, 2, 3, 1.0)};

    const LayerMats hv = hifgo::hessian_vector(spec, w, b, v);
    Matrix gram = testutil::ref_matmul(hifgo::transpose(b.inputs), b.inputs);
    gram *= 1.0 / static_cast<double>(b.size());
    const Matrix want = testutil::ref_matmul(v[0], gram);
    EXPECT_LT(testutil::rel_error(hv[0], want), 1e-12);
}

TEST(HessianVector, RejectsVanishingDirection) {
    const ModelSpec spec = ModelSpec::linear_regression(2, 1);
    RngStream rng(24);
    const LayerMats w = random_weights(rng, spec);
    const Batch b = random_regression(rng, 4, 2, 1);
    LayerMats v = {Matrix(1, 2)};
    v[0](0, 0) = 1e-13;
    EXPECT_THROW(hifgo::hessian_vector(spec, w, b, v), hifgo::InputError);
}

TEST(HessianVector, SymmetricBilinearFormOnMlp) {
    const ModelSpec spec = ModelSpec::mlp_1h(3, 4, 2);
    RngStream rng(25);
    const LayerMats w = random_weights(rng, spec);
    const Batch b = random_classification(rng, 10, 3, 2);
    LayerMats u, v;
    for (const auto& l : spec.layers) {
        u.push_back(hifgo::gaussian_matrix(rng, l.rows, l.cols, 1.0));
        v.push_back(hifgo::gaussian_matrix(rng, l.rows, l.cols, 1.0));
    }
    const LayerMats hv = hifgo::hessian_vector(spec, w, b, v);
    const LayerMats hu = hifgo::hessian_vector(spec, w, b, u);
    double uhv = 0.0, vhu = 0.0;
    for (std::size_t l = 0; l < u.size(); ++l) {
        uhv += hifgo::frobenius_inner(u[l], hv[l]);
        vhu += hifgo::frobenius_inner(v[l], hu[l]);
    }
    EXPECT_NEAR(uhv, vhu, 1e-4 * std::max(std::abs(uhv), 1.0));
}

TEST(HessianVector, LinearInDirection) {
    RngStream rng(26);
    for (const auto& spec : {ModelSpec::linear_regression(3, 2),
                             ModelSpec::mlp_1h(3, 4, 2)}) {
        const LayerMats w = random_weights(rng, spec);
        const Batch b = batch_for(rng, spec, 10);
        LayerMats u, v, uv;
        for (const auto& l : spec.layers) {
            u.push_back(hifgo::gaussian_matrix(rng, l.rows, l.cols, 1.0));
            v.push_back(hifgo::gaussian_matrix(rng, l.rows, l.cols, 1.0));
            uv.push_back(u.back() + v.back());
        }
        const auto hu = hifgo::hessian_vector(spec, w, b, u);
        const auto hv = hifgo::hessian_vector(spec, w, b, v);
        const auto huv = hifgo::hessian_vector(spec, w, b, uv);
        LayerMats sum;
        for (std::size_t l = 0; l < hu.size(); ++l) sum.push_back(hu[l] + hv[l]);
        EXPECT_LT(testutil::rel_error(testutil::flatten(huv), testutil::flatten(sum)),
                  1e-6);
    }
}

TEST(Evaluate, PerfectClassifierScores100) {
    const ModelSpec spec = ModelSpec::linear_softmax(2, 2);
    // Rows are class scores; x in class 0 has x0 > 0.
    const LayerMats w = {Matrix::from_rows({{1, 0}, {-1, 0}})};
    Batch b;
    b.inputs = Matrix::from_rows({{1, 0}, {2, 1}, {-1, 0}, {-3, 2}});
    b.labels = {0, 0, 1, 1};
    EXPECT_DOUBLE_EQ(hifgo::evaluate(spec, w, b), 100.0);
}

TEST(Evaluate, ConstantPredictorOnBalancedPairScores50) {
    const ModelSpec spec = ModelSpec::linear_softmax(2, 2);
    const LayerMats w = {Matrix(2, 2)};  // all logits equal, argmax picks class 0
    Batch b;
    b.inputs = Matrix::from_rows({{1, 0}, {0, 1}, {1, 1}, {0, 0}});
    b.labels = {0, 1, 0, 1};
    EXPECT_DOUBLE_EQ(hifgo::evaluate(spec, w, b), 50.0);
}

TEST(Evaluate, MatchesArgmaxLoop) {
    const ModelSpec spec = ModelSpec::linear_softmax(4, 3);
    RngStream rng(27);
    const LayerMats w = random_weights(rng, spec);
    const Batch b = random_classification(rng, 40, 4, 3);
    const Matrix z = hifgo::matmul(b.inputs, hifgo::transpose(w[0]));
    int correct = 0;
    for (std::size_t i = 0; i < b.size(); ++i) {
        int best = 0;
        for (int j = 1; j < 3; ++j) {
            if (z(i, static_cast<std::size_t>(j)) > z(i, static_cast<std::size_t>(best)))
                best = j;
        }
        if (best == b.labels[i]) ++correct;
    }
    EXPECT_DOUBLE_EQ(hifgo::evaluate(spec, w, b), 100.0 * correct / 40.0);
}

TEST(Evaluate, EmptyDatasetIsInputError) {
    const ModelSpec spec = ModelSpec::linear_softmax(2, 2);
    const LayerMats w = {Matrix(2, 2)};
    EXPECT_THROW(hifgo::evaluate(spec, w, Batch{}), hifgo::InputError);
}

TEST(Evaluate, RegressionScoreIsExpMappedLoss) {
    const ModelSpec spec = ModelSpec::linear_regression(2, 1);
    RngStream rng(28);
    const LayerMats w = random_weights(rng, spec);
    const Batch b = random_regression(rng, 10, 2, 1);
    const double loss = hifgo::forward_loss(spec, w, b);
    EXPECT_NEAR(hifgo::evaluate(spec, w, b), 100.0 * std::exp(-loss), 1e-12);
}
