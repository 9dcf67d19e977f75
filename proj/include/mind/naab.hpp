#pragma once
#include <cmath>
#include <string>

#include "mind/autodiff.hpp"
#include "mind/nle.hpp"

namespace mind {

template <class T>
struct NaabWeights {
    Var<T> w1;         // [C/r, C]
    Var<T> w2;         // [C, C/r]
    Var<T> spatial_w;  // [1, 2, 7, 7]
    Var<T> spatial_b;  // [1]
    int channels = 0;
    int r = 4;

    static NaabWeights create(ParamSet<T>& ps, int channels, int r, std::uint64_t seed,
                              const std::string& prefix = "naab") {
        if (r < 1 || channels % r != 0)
            throw ParameterError("naab: compression ratio must divide channel count");
        NaabWeights w;
        w.channels = channels;
        w.r = r;
        const int hidden = channels / r;
        w.w1 = ps.add(prefix + ".w1",
                      randn_named<T>({hidden, channels}, std::sqrt(2.0 / channels), seed, prefix + ".w1"));
        w.w2 = ps.add(prefix + ".w2",
                      randn_named<T>({channels, hidden}, std::sqrt(2.0 / hidden), seed, prefix + ".w2"));
        w.spatial_w = ps.add(prefix + ".spatial.w",
                             randn_named<T>({1, 2, 7, 7}, std::sqrt(2.0 / (2.0 * 49.0)), seed,
                                            prefix + ".spatial.w"));
        w.spatial_b = ps.add(prefix + ".spatial.b", Tensor<T>::zeros({1}));
        return w;
    }
};

/// F'[c] = gamma[c] F[c] + beta[c].
template <class T>
inline Var<T> modulate(const Var<T>& f, const ModulationParams<T>& m) {
    if (f.shape().size() != 3) throw DimensionError("modulate: [C,H,W] input expected");
    if (m.gamma.shape() != std::vector<int>{f.shape()[0]} ||
        m.beta.shape() != std::vector<int>{f.shape()[0]})
        throw DimensionError("modulate: channel count mismatch");
    return affine_channel(f, m.gamma, m.beta);
}

/// alpha = sigmoid(W2 relu(W1 z)), z = per-channel global mean.
template <class T>
inline Var<T> channel_attention(const Var<T>& fprime, const NaabWeights<T>& w) {
    if (fprime.shape()[0] != w.channels) throw DimensionError("channel_attention: channel mismatch");
    auto z = reshape(global_mean_hw(fprime), {w.channels, 1});
    auto a = matmul(w.w2, relu(matmul(w.w1, z)));
    return reshape(sigmoid_v(a), {w.channels});
}

/// sigmoid(conv7x7(channel-mean || channel-max)), reflect padding.
template <class T>
inline Var<T> spatial_attention(const Var<T>& f, const NaabWeights<T>& w) {
    auto pooled = concat_channels(channel_mean(f), channel_max(f));
    return sigmoid_v(conv2d(pooled, w.spatial_w, w.spatial_b, 1, Pad::reflect));
}

template <class T>
struct NaabOut {
    Var<T> f_att;
    Var<T> alpha;    // [C]
    Var<T> spatial;  // [1,H,W]
};

/// F_att = F' (channel-gated by alpha) (spatially gated by A_spatial).
/// The channel branch reads the modulated F', the spatial branch reads F.
template <class T>
inline NaabOut<T> naab_forward_parts(const Var<T>& f, const ModulationParams<T>& m,
                                     const NaabWeights<T>& w) {
    NaabOut<T> out;
    auto fprime = modulate(f, m);
    out.alpha = channel_attention(fprime, w);
    out.spatial = spatial_attention(f, w);
    out.f_att = mul_spatial(mul_channel(fprime, out.alpha), out.spatial);
    return out;
}

template <class T>
inline Var<T> naab_forward(const Var<T>& f, const ModulationParams<T>& m, const NaabWeights<T>& w) {
    return naab_forward_parts(f, m, w).f_att;
}

}  // namespace mind
