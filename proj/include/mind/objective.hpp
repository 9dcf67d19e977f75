#pragma once
#include <array>
#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "mind/autodiff.hpp"
#include "mind/nle.hpp"

namespace mind {

/// Term order everywhere: mse, ssim, edge, perceptual, adversarial.
struct LossWeightsConfig {
    std::array<double, 5> alpha{1.0, 0.8, 0.6, 0.4, 0.1};
    std::array<double, 5> beta{0.15, 0.15, 0.15, 0.15, 0.15};
    bool adversarial_enabled = false;
};

inline void to_json(nlohmann::json& j, const LossWeightsConfig& c) {
    j = nlohmann::json{{"alpha", c.alpha}, {"adversarial_enabled", c.adversarial_enabled}};
    bool shared = true;
    for (double b : c.beta) shared = shared && b == c.beta[0];
    if (shared)
        j["beta_decay"] = c.beta[0];
    else
        j["beta_decay"] = c.beta;
}

inline void from_json(const nlohmann::json& j, LossWeightsConfig& c) {
    if (j.contains("alpha")) c.alpha = j.at("alpha").get<std::array<double, 5>>();
    if (j.contains("beta_decay")) {
        if (j["beta_decay"].is_array())
            c.beta = j["beta_decay"].get<std::array<double, 5>>();
        else
            c.beta.fill(j["beta_decay"].get<double>());
    }
    c.adversarial_enabled = j.value("adversarial_enabled", false);
}

/// lambda_i = alpha_i exp(-beta_i sigma); sigma in percent-of-range units.
inline std::array<double, 5> lambda_weights(double sigma_percent, const LossWeightsConfig& cfg) {
    if (sigma_percent < 0) throw ParameterError("lambda_weights: sigma must be nonnegative");
    std::array<double, 5> l{};
    for (int i = 0; i < 5; ++i) l[size_t(i)] = cfg.alpha[size_t(i)] * std::exp(-cfg.beta[size_t(i)] * sigma_percent);
    return l;
}

/// Pixel-sd sigma (in [0,1]-range units) to the percent units of the decay.
inline double sigma_to_percent(double sigma_pixel_sd) { return 100.0 * sigma_pixel_sd; }

// ---------------------------------------------------------------------------
// loss terms (differentiable in xhat; x enters as a constant)
// ---------------------------------------------------------------------------

template <class T>
inline Var<T> loss_mse(const Var<T>& xhat, const Var<T>& x) {
    if (xhat.shape() != x.shape()) throw DimensionError("loss_mse: dimension mismatch");
    return mean_all(square(sub(xhat, x)));
}

namespace obj_detail {

template <class T>
inline Tensor<T> gaussian_window(int size, double sigma) {
    Tensor<T> k({1, 1, size, size});
    const int r = size / 2;
    double sum = 0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double d2 = double((y - r) * (y - r) + (x - r) * (x - r));
            const double v = std::exp(-d2 / (2.0 * sigma * sigma));
            k.data[size_t(y) * size + x] = T(v);
            sum += v;
        }
    for (auto& v : k.data) v = T(double(v) / sum);
    return k;
}

}  // namespace obj_detail

/// 1 - mean SSIM, 11x11 Gaussian window sigma 1.5, C1 = 0.01^2, C2 = 0.03^2,
/// valid windows only (canonical formulation for a [0,1] range).
template <class T>
inline Var<T> loss_ssim(const Var<T>& xhat, const Var<T>& x) {
    if (xhat.shape() != x.shape()) throw DimensionError("loss_ssim: dimension mismatch");
    if (xhat.shape()[1] < 11 || xhat.shape()[2] < 11)
        throw DimensionError("loss_ssim: images must be at least 11x11");
    const T c1 = T(1e-4), c2 = T(9e-4);
    auto win = Var<T>::constant(obj_detail::gaussian_window<T>(11, 1.5));
    auto blur = [&](const Var<T>& v) { return conv2d(v, win, Var<T>(), 1, Pad::valid); };
    auto mu1 = blur(xhat);
    auto mu2 = blur(x);
    auto s11 = sub(blur(square(xhat)), square(mu1));
    auto s22 = sub(blur(square(x)), square(mu2));
    auto s12 = sub(blur(mul(xhat, x)), mul(mu1, mu2));
    auto num = mul(shift(scale(mul(mu1, mu2), T(2)), c1), shift(scale(s12, T(2)), c2));
    auto den = mul(shift(add(square(mu1), square(mu2)), c1), shift(add(s11, s22), c2));
    return shift(scale(mean_all(div_v(num, den)), T(-1)), T(1));
}

/// Mean absolute difference of gradient magnitudes.
template <class T>
inline Var<T> loss_edge(const Var<T>& xhat, const Var<T>& x,
                        GradOperator op = GradOperator::sobel) {
    if (xhat.shape() != x.shape()) throw DimensionError("loss_edge: dimension mismatch");
    return mean_all(abs_v(sub(gradient_map_var(xhat, op), gradient_map_var(x, op))));
}

/// Frozen seeded feature extractor standing in for a pretrained perceptual
/// network: conv stride 2 (1->16->32->32), ReLU between layers, never trained.
template <class T>
struct PerceptualExtractor {
    Var<T> w1, b1, w2, b2, w3, b3;
    std::uint64_t seed = 0;

    static PerceptualExtractor create(std::uint64_t seed) {
        PerceptualExtractor e;
        e.seed = seed;
        e.w1 = Var<T>::constant(randn_named<T>({16, 1, 3, 3}, std::sqrt(2.0 / 9.0), seed, "perc.w1"));
        e.b1 = Var<T>::constant(Tensor<T>::zeros({16}));
        e.w2 = Var<T>::constant(randn_named<T>({32, 16, 3, 3}, std::sqrt(2.0 / 144.0), seed, "perc.w2"));
        e.b2 = Var<T>::constant(Tensor<T>::zeros({32}));
        e.w3 = Var<T>::constant(randn_named<T>({32, 32, 3, 3}, std::sqrt(2.0 / 288.0), seed, "perc.w3"));
        e.b3 = Var<T>::constant(Tensor<T>::zeros({32}));
        return e;
    }

    Var<T> features(const Var<T>& img) const {
        auto f = relu(conv2d(img, w1, b1, 2, Pad::reflect));
        f = relu(conv2d(f, w2, b2, 2, Pad::reflect));
        return conv2d(f, w3, b3, 2, Pad::reflect);
    }
};

template <class T>
inline Var<T> loss_perceptual(const Var<T>& xhat, const Var<T>& x, const PerceptualExtractor<T>& phi) {
    if (xhat.shape() != x.shape()) throw DimensionError("loss_perceptual: dimension mismatch");
    if (xhat.shape()[1] % 8 || xhat.shape()[2] % 8)
        throw DimensionError("loss_perceptual: dimensions must be divisible by 8");
    return mean_all(square(sub(phi.features(xhat), phi.features(x))));
}

/// Small convolutional classifier, confidence in (0,1).
template <class T>
struct Discriminator {
    Var<T> w1, b1, w2, b2, w3, b3, head_w, head_b;

    static Discriminator create(ParamSet<T>& ps, std::uint64_t seed, const std::string& prefix = "disc") {
        Discriminator d;
        d.w1 = ps.add(prefix + ".w1", randn_named<T>({8, 1, 3, 3}, std::sqrt(2.0 / 9.0), seed, prefix + ".w1"));
        d.b1 = ps.add(prefix + ".b1", Tensor<T>::zeros({8}));
        d.w2 = ps.add(prefix + ".w2", randn_named<T>({16, 8, 3, 3}, std::sqrt(2.0 / 72.0), seed, prefix + ".w2"));
        d.b2 = ps.add(prefix + ".b2", Tensor<T>::zeros({16}));
        d.w3 = ps.add(prefix + ".w3", randn_named<T>({32, 16, 3, 3}, std::sqrt(2.0 / 144.0), seed, prefix + ".w3"));
        d.b3 = ps.add(prefix + ".b3", Tensor<T>::zeros({32}));
        d.head_w = ps.add(prefix + ".head.w", randn_named<T>({1, 32}, std::sqrt(1.0 / 32.0), seed, prefix + ".head.w"));
        d.head_b = ps.add(prefix + ".head.b", Tensor<T>::zeros({1}));
        return d;
    }

    /// Confidence that the image is real, strictly in (0,1).
    Var<T> confidence(const Var<T>& img) const {
        auto f = relu(conv2d(img, w1, b1, 2, Pad::reflect));
        f = relu(conv2d(f, w2, b2, 2, Pad::reflect));
        f = relu(conv2d(f, w3, b3, 2, Pad::reflect));
        auto z = reshape(global_mean_hw(f), {32, 1});
        auto logit = add(matmul(head_w, z), reshape(head_b, {1, 1}));
        return reshape(sigmoid_v(logit), {1});
    }
};

/// -log D(xhat) with the confidence clamped to [1e-7, 1-1e-7].
template <class T>
inline Var<T> loss_adversarial(const Var<T>& xhat, const Discriminator<T>& d) {
    auto conf = clamp_v(d.confidence(xhat), T(1e-7), T(1) - T(1e-7));
    return scale(log_v(conf), T(-1));
}

template <class T>
inline Var<T> loss_adversarial(const Var<T>& xhat, const Discriminator<T>& d,
                               const LossWeightsConfig& cfg) {
    if (!cfg.adversarial_enabled) throw ConfigError("adversarial loss is disabled in the configuration");
    return loss_adversarial(xhat, d);
}

// ---------------------------------------------------------------------------
// weighted total
// ---------------------------------------------------------------------------

struct LossReport {
    double mse = 0, ssim_loss = 0, edge = 0, perceptual = 0, adversarial = 0;
    std::array<double, 5> lambdas{};
    double total = 0;
    double sigma_scalar = 0;  // pixel-sd units
    int step = -1;
    int epoch = -1;
    double lr = 0;

    double recompute_total() const {
        return lambdas[0] * mse + lambdas[1] * ssim_loss + lambdas[2] * edge +
               lambdas[3] * perceptual + lambdas[4] * adversarial;
    }
};

inline void to_json(nlohmann::json& j, const LossReport& r) {
    j = nlohmann::json{{"step", r.step},          {"epoch", r.epoch},
                       {"mse", r.mse},            {"ssim_loss", r.ssim_loss},
                       {"edge", r.edge},          {"perceptual", r.perceptual},
                       {"adversarial", r.adversarial}, {"lambdas", r.lambdas},
                       {"total", r.total},        {"sigma_scalar", r.sigma_scalar},
                       {"lr", r.lr}};
}

inline void from_json(const nlohmann::json& j, LossReport& r) {
    r.step = j.value("step", -1);
    r.epoch = j.value("epoch", -1);
    r.mse = j.at("mse").get<double>();
    r.ssim_loss = j.at("ssim_loss").get<double>();
    r.edge = j.at("edge").get<double>();
    r.perceptual = j.at("perceptual").get<double>();
    r.adversarial = j.at("adversarial").get<double>();
    r.lambdas = j.at("lambdas").get<std::array<double, 5>>();
    r.total = j.at("total").get<double>();
    r.sigma_scalar = j.at("sigma_scalar").get<double>();
    r.lr = j.value("lr", 0.0);
}

template <class T>
struct TotalLoss {
    Var<T> total;
    LossReport report;
};

/// total = sum_i lambda_i(sigma) L_i. The lambdas act as a detached schedule:
/// sigma enters in pixel-sd units and is converted to percent internally.
/// The adversarial term contributes 0 when disabled.
template <class T>
inline TotalLoss<T> total_loss(const Var<T>& xhat, const Var<T>& x, double sigma_pixel_sd,
                               const LossWeightsConfig& cfg, const PerceptualExtractor<T>& phi,
                               const Discriminator<T>* disc = nullptr) {
    const auto lam = lambda_weights(sigma_to_percent(sigma_pixel_sd), cfg);
    std::array<Var<T>, 5> terms;
    terms[0] = loss_mse(xhat, x);
    terms[1] = loss_ssim(xhat, x);
    terms[2] = loss_edge(xhat, x);
    terms[3] = loss_perceptual(xhat, x, phi);
    if (cfg.adversarial_enabled) {
        if (!disc) throw ConfigError("adversarial loss enabled but no discriminator provided");
        terms[4] = loss_adversarial(xhat, *disc);
    }

    TotalLoss<T> out;
    out.report.sigma_scalar = sigma_pixel_sd;
    out.report.lambdas = lam;
    out.report.mse = double(terms[0].val().data[0]);
    out.report.ssim_loss = double(terms[1].val().data[0]);
    out.report.edge = double(terms[2].val().data[0]);
    out.report.perceptual = double(terms[3].val().data[0]);
    out.report.adversarial = cfg.adversarial_enabled ? double(terms[4].val().data[0]) : 0.0;

    Var<T> total = scale(terms[0], T(lam[0]));
    total = add(total, scale(terms[1], T(lam[1])));
    total = add(total, scale(terms[2], T(lam[2])));
    total = add(total, scale(terms[3], T(lam[3])));
    if (cfg.adversarial_enabled) total = add(total, scale(terms[4], T(lam[4])));
    out.total = total;
    out.report.total = out.report.recompute_total();
    return out;
}

}  // namespace mind
