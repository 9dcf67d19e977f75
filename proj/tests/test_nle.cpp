#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mind/degrade.hpp"
#include "mind/gradcheck.hpp"
#include "mind/nle.hpp"

using namespace mind;

namespace {
Image transpose(const Image& img) {
    Image out(img.width, img.height);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) out.at(c, r) = img.at(r, c);
    return out;
}
}  // namespace

TEST_CASE("gradient map of a constant image is zero", "[nle]") {
    Image img(16, 16, 0.42);
    for (auto op : {GradOperator::sobel, GradOperator::scharr}) {
        RealMap g = gradient_map(img, op);
        for (double v : g.values) REQUIRE(v == Catch::Approx(0.0).margin(1e-12));
    }
}

TEST_CASE("sobel response at a vertical step edge", "[nle]") {
    // hand convolution: columns ...0,0,1,1... -> Gx = (1+2+1)/sqrt(12) at the
    // columns adjacent to the step, Gy = 0
    Image img(9, 10, 0.0);
    for (int r = 0; r < 9; ++r)
        for (int c = 5; c < 10; ++c) img.at(r, c) = 1.0;
    RealMap g = gradient_map(img, GradOperator::sobel);
    const double expected = 4.0 / std::sqrt(12.0);
    CHECK(g.at(4, 4) == Catch::Approx(expected).epsilon(1e-12));
    CHECK(g.at(4, 5) == Catch::Approx(expected).epsilon(1e-12));
    CHECK(g.at(4, 2) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("gradient map commutes with transposition", "[nle][property]") {
    Rng rng(31);
    Image img(12, 17);
    for (auto& p : img.pix) p = rng.next_double();
    for (auto op : {GradOperator::sobel, GradOperator::scharr}) {
        RealMap g = gradient_map(img, op);
        RealMap gt = gradient_map(transpose(img), op);
        for (int r = 0; r < img.height; ++r)
            for (int c = 0; c < img.width; ++c)
                REQUIRE(g.at(r, c) == Catch::Approx(gt.at(c, r)).margin(1e-12));
    }
}

TEST_CASE("gradient map rejects tiny images", "[nle]") {
    Image img(2, 5, 0.5);
    CHECK_THROWS_AS(gradient_map(img), DimensionError);
}

TEST_CASE("normalized operators have unit noise gain", "[nle][statistical]") {
    // Monte-Carlo calibration oracle for the magnitude-to-sd constant: on
    // i.i.d. unit noise the two normalized axis responses satisfy
    // E[Gx^2 + Gy^2] = 2 in the interior.
    Rng rng(32);
    Image img(1000, 1000);
    for (auto& p : img.pix) p = rng.normal();
    for (auto op : {GradOperator::sobel, GradOperator::scharr}) {
        RealMap g = gradient_map(img, op);
        double mean_sq = 0;
        std::int64_t n = 0;
        for (int r = 2; r < img.height - 2; ++r)
            for (int c = 2; c < img.width - 2; ++c) {
                mean_sq += g.at(r, c) * g.at(r, c);
                ++n;
            }
        mean_sq /= double(n);
        CHECK(mean_sq == Catch::Approx(kGradMagnitudeGain2).epsilon(0.01));
    }
}

TEST_CASE("sigma map is zero when noisy equals coarse and both constant", "[nle]") {
    Image img(32, 32, 0.6);
    SigmaMap m = estimate_sigma_map(img, img, 15);
    for (double v : m.values) REQUIRE(v == 0.0);
}

TEST_CASE("sigma estimate is calibrated on gaussian noise", "[nle][statistical]") {
    // interior mean within [0.09, 0.11] for true sigma 0.10
    Image clean(128, 128, 0.5);
    NoiseSpec spec;
    spec.kind = NoiseKind::gaussian;
    spec.level = 0.10;
    spec.seed = 33;
    Image noisy = degrade(clean, spec);
    SigmaMap m = estimate_sigma_map(noisy, clean, 15);
    double mean = 0;
    std::int64_t n = 0;
    for (int r = 10; r < 118; ++r)
        for (int c = 10; c < 118; ++c) {
            mean += m.at(r, c);
            ++n;
        }
    mean /= double(n);
    CHECK(mean > 0.09);
    CHECK(mean < 0.11);
}

TEST_CASE("sigma estimates order with the true level", "[nle][statistical]") {
    // 20 seeds per level; mean estimates must strictly increase
    Image clean(64, 64, 0.5);
    double previous = -1.0;
    for (double level : {0.05, 0.10, 0.25}) {
        double mean = 0;
        for (std::uint64_t s = 0; s < 20; ++s) {
            NoiseSpec spec;
            spec.kind = NoiseKind::gaussian;
            spec.level = level;
            spec.seed = 100 + s;
            SigmaMap m = estimate_sigma_map(degrade(clean, spec), clean, 15);
            mean += sigma_scalar(m);
        }
        mean /= 20.0;
        REQUIRE(mean > previous);
        previous = mean;
    }
}

TEST_CASE("spatially varying noise orders the sigma map by region", "[nle]") {
    Image clean(64, 64, 0.5);
    SpatialProfile profile{64, 64, std::vector<double>(64 * 64, 0.2)};
    for (int r = 0; r < 64; ++r)
        for (int c = 32; c < 64; ++c) profile.values[size_t(r) * 64 + c] = 1.0;
    NoiseSpec spec;
    spec.kind = NoiseKind::gaussian;
    spec.level = 0.25;
    spec.seed = 34;
    spec.spatial_profile = profile;
    SigmaMap m = estimate_sigma_map(degrade(clean, spec), clean, 15);
    double left = 0, right = 0;
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 64; ++c) (c < 32 ? left : right) += m.at(r, c);
    CHECK(right / (64 * 32) > left / (64 * 32));
}

TEST_CASE("sigma map values are nonnegative", "[nle][property]") {
    Rng rng(35);
    Image noisy(32, 32), coarse(32, 32);
    for (auto& p : noisy.pix) p = rng.next_double();
    for (auto& p : coarse.pix) p = rng.next_double();
    SigmaMap m = estimate_sigma_map(noisy, coarse, 9);
    for (double v : m.values) REQUIRE(v >= 0.0);
}

TEST_CASE("estimator dimension checks", "[nle]") {
    Image a(16, 16, 0.5), b(16, 12, 0.5);
    CHECK_THROWS_AS(estimate_sigma_map(a, b, 15), DimensionError);
    CHECK_THROWS_AS(estimate_sigma_map(a, a, 14), DimensionError);
    CHECK_THROWS_AS(estimate_sigma_map(a, a, 17), DimensionError);
}

TEST_CASE("sigma_scalar is the arithmetic mean", "[nle]") {
    SigmaMap zero(4, 4, 0.0);
    CHECK(sigma_scalar(zero) == 0.0);
    SigmaMap constant(4, 4, 0.15);
    CHECK(sigma_scalar(constant) == Catch::Approx(0.15).epsilon(1e-15));
    SigmaMap half(2, 2);
    half.values = {0.1, 0.1, 0.2, 0.2};
    CHECK(sigma_scalar(half) == Catch::Approx(0.15).epsilon(1e-15));
}

TEST_CASE("zero-initialized mapper gives the identity modulation", "[nle]") {
    ParamSet<double> ps;
    MapperWeights<double> w = MapperWeights<double>::create(ps, 16, 1234);
    Rng rng(36);
    Tensor<double> sigma({1, 16, 16});
    for (auto& v : sigma.data) v = 0.2 * rng.next_double();
    auto mod = map_to_modulation(Var<double>::constant(sigma), w);
    for (double g : mod.gamma.val().data) REQUIRE(g == 1.0);
    for (double b : mod.beta.val().data) REQUIRE(b == 0.0);
}

TEST_CASE("modulation is transpose invariant under global pooling at zero init", "[nle]") {
    ParamSet<double> ps;
    MapperWeights<double> w = MapperWeights<double>::create(ps, 8, 99);
    // zero the convolutions too, leaving only pooling symmetry
    for (auto& v : w.conv1_w.n->val.data) v = 0;
    for (auto& v : w.conv2_w.n->val.data) v = 0;
    Rng rng(37);
    Tensor<double> sigma({1, 8, 12});
    for (auto& v : sigma.data) v = rng.next_double();
    Tensor<double> sigma_t({1, 12, 8});
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 12; ++c) sigma_t.data[size_t(c) * 8 + r] = sigma.data[size_t(r) * 12 + c];
    auto m1 = map_to_modulation(Var<double>::constant(sigma), w);
    auto m2 = map_to_modulation(Var<double>::constant(sigma_t), w);
    for (int c = 0; c < 8; ++c) {
        REQUIRE(m1.gamma.val().data[size_t(c)] == Catch::Approx(m2.gamma.val().data[size_t(c)]).margin(1e-15));
        REQUIRE(m1.beta.val().data[size_t(c)] == Catch::Approx(m2.beta.val().data[size_t(c)]).margin(1e-15));
    }
}

TEST_CASE("mapper gradients match finite differences", "[nle]") {
    // gamma > 0 by construction and differentiable end to end
    Rng rng(38);
    ParamSet<double> ps;
    MapperWeights<double> w = MapperWeights<double>::create(ps, 4, 55);
    gc_detail::randomize_zeros(ps, 0.05, 55);
    Tensor<double> sigma({1, 12, 12});
    for (auto& v : sigma.data) v = 0.3 * rng.next_double();
    auto sig = Var<double>::constant(sigma);
    auto rg = gc_detail::randn_tensor({4}, 1.0, rng);
    auto rb = gc_detail::randn_tensor({4}, 1.0, rng);
    auto res = gc_detail::check_params(ps, [&] {
        auto mod = map_to_modulation(sig, w);
        return add(dot_const(mod.gamma, rg), dot_const(mod.beta, rb));
    }, 1e-4);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("gamma stays positive for any head output", "[nle][property]") {
    Rng rng(39);
    ParamSet<double> ps;
    MapperWeights<double> w = MapperWeights<double>::create(ps, 8, 66);
    gc_detail::randomize_zeros(ps, 2.0, 66);  // exaggerated head weights
    Tensor<double> sigma({1, 16, 16});
    for (auto& v : sigma.data) v = rng.next_double();
    auto mod = map_to_modulation(Var<double>::constant(sigma), w);
    for (double g : mod.gamma.val().data) {
        REQUIRE(g > 0.0);
        REQUIRE(g < 2.0);
    }
}
