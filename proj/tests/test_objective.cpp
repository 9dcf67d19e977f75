#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mind/gradcheck.hpp"
#include "mind/objective.hpp"

using namespace mind;

namespace {
Var<double> const_image(int h, int w, double v) {
    return Var<double>::constant(Tensor<double>::full({1, h, w}, v));
}

Var<double> random_image(int h, int w, Rng& rng, double lo = 0.1, double hi = 0.9) {
    Tensor<double> t({1, h, w});
    for (auto& v : t.data) v = lo + (hi - lo) * rng.next_double();
    return Var<double>::constant(t);
}
}  // namespace

TEST_CASE("lambda weights at zero sigma equal the alphas", "[objective]") {
    LossWeightsConfig cfg;
    auto l = lambda_weights(0.0, cfg);
    CHECK(l[0] == 1.0);
    CHECK(l[1] == 0.8);
    CHECK(l[2] == 0.6);
    CHECK(l[3] == 0.4);
    CHECK(l[4] == 0.1);
}

TEST_CASE("lambda decay at sigma 10 percent units", "[objective]") {
    LossWeightsConfig cfg;
    auto l = lambda_weights(10.0, cfg);
    CHECK(l[0] == Catch::Approx(std::exp(-1.5)).epsilon(1e-12));
}

TEST_CASE("lambda is strictly decreasing in sigma", "[objective][property]") {
    LossWeightsConfig cfg;
    auto a = lambda_weights(5.0, cfg);
    auto b = lambda_weights(25.0, cfg);
    for (int i = 0; i < 5; ++i) REQUIRE(b[size_t(i)] < a[size_t(i)]);
}

TEST_CASE("lambda ratio is the exponential decay", "[objective][property]") {
    // lambda(s2)/lambda(s1) = exp(-beta (s2 - s1)) for each term
    LossWeightsConfig cfg;
    for (double s1 : {0.0, 3.0, 12.5}) {
        for (double s2 : {1.0, 7.0, 24.0}) {
            auto a = lambda_weights(s1, cfg);
            auto b = lambda_weights(s2, cfg);
            for (int i = 0; i < 5; ++i)
                REQUIRE(b[size_t(i)] / a[size_t(i)] ==
                        Catch::Approx(std::exp(-cfg.beta[size_t(i)] * (s2 - s1))).margin(1e-12));
        }
    }
}

TEST_CASE("shared decay preserves relative term ordering", "[objective][property]") {
    LossWeightsConfig cfg;
    for (double s : {0.0, 5.0, 15.0, 25.0}) {
        auto l = lambda_weights(s, cfg);
        REQUIRE(l[0] > l[1]);
        REQUIRE(l[1] > l[2]);
        REQUIRE(l[2] > l[3]);
        REQUIRE(l[3] > l[4]);
    }
}

TEST_CASE("negative sigma is rejected", "[objective]") {
    CHECK_THROWS_AS(lambda_weights(-1.0, LossWeightsConfig{}), ParameterError);
}

TEST_CASE("mse basics", "[objective]") {
    auto a = const_image(8, 8, 0.5);
    CHECK(loss_mse(a, a).val().data[0] == 0.0);
    auto b = const_image(8, 8, 0.6);
    CHECK(loss_mse(b, a).val().data[0] == Catch::Approx(0.01).epsilon(1e-12));
    CHECK_THROWS_AS(loss_mse(a, const_image(8, 9, 0.5)), DimensionError);
}

TEST_CASE("mse gradient is 2(xhat - x)/N", "[objective]") {
    Rng rng(61);
    ParamSet<double> ps;
    auto xh = ps.add("xhat", gc_detail::rand_tensor({1, 6, 6}, 0.1, 0.9, rng));
    auto x = random_image(6, 6, rng);
    auto loss = loss_mse(xh, x);
    backward(loss);
    for (size_t i = 0; i < xh.val().data.size(); ++i) {
        const double expect = 2.0 * (xh.val().data[i] - x.val().data[i]) / 36.0;
        REQUIRE(xh.grad().data[i] == Catch::Approx(expect).margin(1e-15));
    }
}

TEST_CASE("ssim of identical images is one", "[objective]") {
    Rng rng(62);
    auto a = random_image(16, 16, rng);
    CHECK(loss_ssim(a, a).val().data[0] == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("ssim of constant pair matches the closed form", "[objective]") {
    // luminance term only: (2*0.4*0.5 + 1e-4)/(0.16 + 0.25 + 1e-4)
    auto a = const_image(32, 32, 0.4);
    auto b = const_image(32, 32, 0.5);
    const double expected_ssim = (2 * 0.4 * 0.5 + 1e-4) / (0.16 + 0.25 + 1e-4);
    const double loss = loss_ssim(a, b).val().data[0];
    CHECK(1.0 - loss == Catch::Approx(expected_ssim).margin(1e-12));
    CHECK(std::fabs((1.0 - loss) - 0.97568) < 1e-4);
}

TEST_CASE("ssim is symmetric", "[objective][property]") {
    Rng rng(63);
    for (int t = 0; t < 5; ++t) {
        auto a = random_image(16, 16, rng);
        auto b = random_image(16, 16, rng);
        REQUIRE(loss_ssim(a, b).val().data[0] ==
                Catch::Approx(loss_ssim(b, a).val().data[0]).margin(1e-12));
    }
}

TEST_CASE("ssim rejects images smaller than the window", "[objective]") {
    auto a = const_image(10, 16, 0.5);
    CHECK_THROWS_AS(loss_ssim(a, a), DimensionError);
}

TEST_CASE("edge loss basics", "[objective]") {
    Rng rng(64);
    auto a = random_image(12, 12, rng);
    CHECK(loss_edge(a, a).val().data[0] == 0.0);
    // additive constants vanish under the gradient operator
    Tensor<double> shifted = a.val();
    for (auto& v : shifted.data) v += 0.07;
    CHECK(loss_edge(Var<double>::constant(shifted), a).val().data[0] ==
          Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("edge loss subgradient away from zero residual", "[objective]") {
    Rng rng(65);
    ParamSet<double> ps;
    auto xh = ps.add("xhat", gc_detail::rand_tensor({1, 10, 10}, 0.1, 0.9, rng));
    auto x = random_image(10, 10, rng);
    auto res = gc_detail::check_params(ps, [&] { return loss_edge(xh, x); }, 1e-6);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("perceptual loss is zero on identical inputs and frozen", "[objective]") {
    Rng rng(66);
    auto phi = PerceptualExtractor<double>::create(777);
    auto a = random_image(16, 16, rng);
    CHECK(loss_perceptual(a, a, phi).val().data[0] == 0.0);
    auto b = random_image(16, 16, rng);
    const double v1 = loss_perceptual(a, b, phi).val().data[0];
    auto phi2 = PerceptualExtractor<double>::create(777);
    const double v2 = loss_perceptual(a, b, phi2).val().data[0];
    REQUIRE(v1 == v2);
    auto phi3 = PerceptualExtractor<double>::create(778);
    REQUIRE(loss_perceptual(a, b, phi3).val().data[0] != v1);
    CHECK_THROWS_AS(loss_perceptual(const_image(12, 12, 0.5), const_image(12, 12, 0.5), phi),
                    DimensionError);
}

TEST_CASE("adversarial loss arithmetic", "[objective]") {
    ParamSet<double> ps;
    auto d = Discriminator<double>::create(ps, 88);
    // zero head: confidence is exactly 0.5 -> loss ln 2
    for (auto& v : d.head_w.n->val.data) v = 0;
    Rng rng(67);
    auto x = random_image(16, 16, rng);
    CHECK(loss_adversarial(x, d).val().data[0] == Catch::Approx(std::log(2.0)).margin(1e-12));

    // raising the confidence lowers the loss
    d.head_b.n->val.data[0] = 3.0;
    const double low = loss_adversarial(x, d).val().data[0];
    d.head_b.n->val.data[0] = -3.0;
    const double high = loss_adversarial(x, d).val().data[0];
    CHECK(low < std::log(2.0));
    CHECK(high > std::log(2.0));

    LossWeightsConfig cfg;  // adversarial disabled by default
    CHECK_THROWS_AS(loss_adversarial(x, d, cfg), ConfigError);
}

TEST_CASE("total loss vanishes on identical images", "[objective]") {
    Rng rng(68);
    auto phi = PerceptualExtractor<double>::create(999);
    auto x = random_image(16, 16, rng);
    LossWeightsConfig cfg;
    auto out = total_loss(x, x, 0.1, cfg, phi);
    CHECK(out.total.val().data[0] == Catch::Approx(0.0).margin(1e-12));
    CHECK(out.report.total == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("total loss at sigma zero uses the raw alphas", "[objective]") {
    Rng rng(69);
    auto phi = PerceptualExtractor<double>::create(999);
    auto a = random_image(16, 16, rng);
    auto b = random_image(16, 16, rng);
    LossWeightsConfig cfg;
    auto out = total_loss(a, b, 0.0, cfg, phi);
    const double expected = 1.0 * out.report.mse + 0.8 * out.report.ssim_loss +
                            0.6 * out.report.edge + 0.4 * out.report.perceptual;
    CHECK(out.report.total == Catch::Approx(expected).margin(1e-12));
    for (int i = 0; i < 4; ++i) REQUIRE(out.report.lambdas[size_t(i)] == cfg.alpha[size_t(i)]);
}

TEST_CASE("loss report recomputes its total", "[objective]") {
    Rng rng(70);
    auto phi = PerceptualExtractor<double>::create(999);
    auto a = random_image(16, 16, rng);
    auto b = random_image(16, 16, rng);
    auto out = total_loss(a, b, 0.12, LossWeightsConfig{}, phi);
    CHECK(std::fabs(out.report.total - out.report.recompute_total()) < 1e-9);
    CHECK(out.report.total >= 0.0);
}

TEST_CASE("loss report JSON round trip", "[objective]") {
    LossReport r;
    r.step = 3;
    r.epoch = 1;
    r.mse = 0.5;
    r.ssim_loss = 0.25;
    r.edge = 0.1;
    r.perceptual = 0.05;
    r.adversarial = 0;
    r.lambdas = {1, 0.8, 0.6, 0.4, 0.1};
    r.total = r.recompute_total();
    r.sigma_scalar = 0.07;
    r.lr = 1e-4;
    nlohmann::json j = r;
    LossReport back = j.get<LossReport>();
    CHECK(back.total == r.total);
    CHECK(back.lambdas == r.lambdas);
    CHECK(back.sigma_scalar == r.sigma_scalar);
}

TEST_CASE("per-term decay rates are accepted in config JSON", "[objective]") {
    nlohmann::json j = {{"alpha", {1.0, 0.8, 0.6, 0.4, 0.1}},
                        {"beta_decay", {0.1, 0.2, 0.3, 0.4, 0.5}},
                        {"adversarial_enabled", false}};
    LossWeightsConfig cfg = j.get<LossWeightsConfig>();
    CHECK(cfg.beta[0] == 0.1);
    CHECK(cfg.beta[4] == 0.5);
    auto l = lambda_weights(10.0, cfg);
    CHECK(l[4] == Catch::Approx(0.1 * std::exp(-5.0)).epsilon(1e-12));
}
