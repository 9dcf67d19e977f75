#pragma once
#include <cmath>
#include <string>
#include <vector>

#include "mind/autodiff.hpp"
#include "mind/image.hpp"

namespace mind {

/// Image-shaped nonnegative real map (noise standard deviation per pixel).
struct RealMap {
    int height = 0;
    int width = 0;
    std::vector<double> values;

    RealMap() = default;
    RealMap(int h, int w, double fill = 0.0) : height(h), width(w), values(size_t(h) * w, fill) {}
    double& at(int r, int c) { return values[size_t(r) * width + c]; }
    double at(int r, int c) const { return values[size_t(r) * width + c]; }
};
using SigmaMap = RealMap;

enum class GradOperator { sobel, scharr };

inline GradOperator grad_operator_from_string(const std::string& s) {
    if (s == "sobel") return GradOperator::sobel;
    if (s == "scharr") return GradOperator::scharr;
    throw ParameterError("unknown gradient operator '" + s + "'");
}

namespace nle_detail {

// Kernels are divided by their noise gain sqrt(sum k^2), so unit-variance
// white noise yields unit-variance per-axis responses.
template <class T>
inline Tensor<T> grad_kernel_x(GradOperator op) {
    std::vector<double> k;
    if (op == GradOperator::sobel)
        k = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
    else
        k = {-3, 0, 3, -10, 0, 10, -3, 0, 3};
    double g2 = 0;
    for (double v : k) g2 += v * v;
    const double inv = 1.0 / std::sqrt(g2);
    Tensor<T> t({1, 1, 3, 3});
    for (int i = 0; i < 9; ++i) t.data[size_t(i)] = T(k[size_t(i)] * inv);
    return t;
}

template <class T>
inline Tensor<T> grad_kernel_y(GradOperator op) {
    Tensor<T> kx = grad_kernel_x<T>(op);
    Tensor<T> t({1, 1, 3, 3});
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) t.data[size_t(r) * 3 + c] = kx.data[size_t(c) * 3 + r];
    return t;
}

}  // namespace nle_detail

/// Magnitude-to-sd constant: the two normalized axis responses contribute
/// E[Gx^2 + Gy^2] = 2 sigma^2 on i.i.d. noise (verified by simulation in the
/// test suite), so estimates divide by sqrt(2).
inline constexpr double kGradMagnitudeGain2 = 2.0;

/// sqrt(Gx^2 + Gy^2) with reflect padding, noise-gain-normalized kernels.
template <class T>
inline Var<T> gradient_map_var(const Var<T>& img, GradOperator op = GradOperator::sobel) {
    if (img.shape().size() != 3 || img.shape()[0] != 1)
        throw DimensionError("gradient_map: [1,H,W] input expected");
    if (img.shape()[1] < 3 || img.shape()[2] < 3)
        throw DimensionError("gradient_map: image must be at least 3x3");
    auto kx = Var<T>::constant(nle_detail::grad_kernel_x<T>(op));
    auto ky = Var<T>::constant(nle_detail::grad_kernel_y<T>(op));
    auto gx = conv2d(img, kx, Var<T>(), 1, Pad::reflect);
    auto gy = conv2d(img, ky, Var<T>(), 1, Pad::reflect);
    return sqrt_v(add(square(gx), square(gy)));
}

/// Separable window mean with reflect padding (window odd).
template <class T>
inline Var<T> box_mean_var(const Var<T>& x, int window) {
    if (window < 3 || window % 2 == 0) throw DimensionError("box mean: window must be odd and >= 3");
    Tensor<T> kv({1, 1, window, 1});
    Tensor<T> kh({1, 1, 1, window});
    const T w = T(1) / T(window);
    for (int i = 0; i < window; ++i) {
        kv.data[size_t(i)] = w;
        kh.data[size_t(i)] = w;
    }
    auto t = conv2d(x, Var<T>::constant(kv), Var<T>(), 1, Pad::reflect);
    return conv2d(t, Var<T>::constant(kh), Var<T>(), 1, Pad::reflect);
}

/// sigma(i,j) = sqrt(max(0, mean_window[(grad Y)^2] - (grad Xhat)^2)) / sqrt(2).
/// Differentiable in `coarse`; never touches clean ground truth.
template <class T>
inline Var<T> estimate_sigma_map_var(const Var<T>& noisy, const Var<T>& coarse, int window,
                                     GradOperator op = GradOperator::sobel) {
    if (noisy.shape() != coarse.shape()) throw DimensionError("estimate_sigma_map: shape mismatch");
    const int h = noisy.shape()[1], w = noisy.shape()[2];
    if (window > std::min(h, w)) throw DimensionError("estimate_sigma_map: window exceeds image");
    auto e_noisy = box_mean_var(square(gradient_map_var(noisy, op)), window);
    auto s_coarse = square(gradient_map_var(coarse, op));
    auto rad = relu(sub(e_noisy, s_coarse));
    return scale(sqrt_v(rad), T(1.0 / std::sqrt(kGradMagnitudeGain2)));
}

namespace nle_detail {

template <class T>
inline Var<T> image_const(const Image& img) {
    Tensor<T> t({1, img.height, img.width});
    for (size_t i = 0; i < img.size(); ++i) t.data[i] = T(img.pix[i]);
    return Var<T>::constant(std::move(t));
}

inline RealMap map_from_tensor(const Tensor<double>& t) {
    RealMap m(t.shape[1], t.shape[2]);
    m.values = t.data;
    return m;
}

}  // namespace nle_detail

inline RealMap gradient_map(const Image& img, GradOperator op = GradOperator::sobel) {
    NoGradGuard ng;
    return nle_detail::map_from_tensor(gradient_map_var(nle_detail::image_const<double>(img), op).val());
}

inline SigmaMap estimate_sigma_map(const Image& noisy, const Image& coarse, int window,
                                   GradOperator op = GradOperator::sobel) {
    if (!noisy.same_shape(coarse)) throw DimensionError("estimate_sigma_map: dimension mismatch");
    if (window % 2 == 0 || window < 3) throw DimensionError("estimate_sigma_map: window must be odd >= 3");
    NoGradGuard ng;
    return nle_detail::map_from_tensor(estimate_sigma_map_var(nle_detail::image_const<double>(noisy),
                                                              nle_detail::image_const<double>(coarse),
                                                              window, op)
                                           .val());
}

/// Full-map arithmetic mean (the scalar noise level fed to the loss weights).
inline double sigma_scalar(const SigmaMap& m) {
    if (m.values.empty()) throw DimensionError("sigma_scalar: empty map");
    double s = 0;
    for (double v : m.values) s += v;
    return s / double(m.values.size());
}

// ---------------------------------------------------------------------------
// shallow mapper: sigma map -> per-channel modulation (gamma, beta)
// ---------------------------------------------------------------------------

template <class T>
struct ModulationParams {
    Var<T> gamma;  // [C], positive by construction: 1 + tanh(head)
    Var<T> beta;   // [C]
};

template <class T>
struct MapperWeights {
    Var<T> conv1_w, conv1_b;  // 1 -> 8
    Var<T> conv2_w, conv2_b;  // 8 -> 8
    Var<T> head_gamma_w, head_gamma_b;  // 8 -> C, zero-init
    Var<T> head_beta_w, head_beta_b;    // 8 -> C, zero-init
    int channels = 0;

    static MapperWeights create(ParamSet<T>& ps, int channels, std::uint64_t seed,
                                const std::string& prefix = "mapper") {
        MapperWeights w;
        w.channels = channels;
        const double s1 = std::sqrt(2.0 / 9.0), s2 = std::sqrt(2.0 / (8.0 * 9.0));
        w.conv1_w = ps.add(prefix + ".conv1.w", randn_named<T>({8, 1, 3, 3}, s1, seed, prefix + ".conv1.w"));
        w.conv1_b = ps.add(prefix + ".conv1.b", Tensor<T>::zeros({8}));
        w.conv2_w = ps.add(prefix + ".conv2.w", randn_named<T>({8, 8, 3, 3}, s2, seed, prefix + ".conv2.w"));
        w.conv2_b = ps.add(prefix + ".conv2.b", Tensor<T>::zeros({8}));
        w.head_gamma_w = ps.add(prefix + ".head_gamma.w", Tensor<T>::zeros({channels, 8}));
        w.head_gamma_b = ps.add(prefix + ".head_gamma.b", Tensor<T>::zeros({channels}));
        w.head_beta_w = ps.add(prefix + ".head_beta.w", Tensor<T>::zeros({channels, 8}));
        w.head_beta_b = ps.add(prefix + ".head_beta.b", Tensor<T>::zeros({channels}));
        return w;
    }
};

/// conv3x3 -> ReLU -> conv3x3 -> ReLU -> global mean pool -> two affine heads.
/// Zero-initialized heads give the identity modulation (gamma=1, beta=0).
template <class T>
inline ModulationParams<T> map_to_modulation(const Var<T>& sigma_map, const MapperWeights<T>& w) {
    auto f = relu(conv2d(sigma_map, w.conv1_w, w.conv1_b, 1, Pad::reflect));
    f = relu(conv2d(f, w.conv2_w, w.conv2_b, 1, Pad::reflect));
    auto pooled = reshape(global_mean_hw(f), {8, 1});  // [8,1]
    auto graw = add(matmul(w.head_gamma_w, pooled), reshape(w.head_gamma_b, {w.channels, 1}));
    auto braw = add(matmul(w.head_beta_w, pooled), reshape(w.head_beta_b, {w.channels, 1}));
    ModulationParams<T> m;
    m.gamma = reshape(shift(tanh_v(graw), T(1)), {w.channels});
    m.beta = reshape(braw, {w.channels});
    return m;
}

}  // namespace mind
