#pragma once
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "mind/autodiff.hpp"
#include "mind/image.hpp"
#include "mind/naab.hpp"
#include "mind/nle.hpp"

namespace mind {

struct AblationFlags {
    bool use_naab = true;
    bool use_nle = true;
    bool use_multiscale = true;
    bool use_crossmodal = true;
};

struct ModelConfig {
    int scales = 3;
    int base_channels = 32;
    int embed_dim = 64;
    int patch = 4;
    int transformer_layers = 2;
    int r = 4;
    int window = 15;
    GradOperator grad_op = GradOperator::sobel;

    /// Input dimensions must be divisible by this.
    int required_multiple(const AblationFlags& flags) const {
        int m = 1;
        if (flags.use_multiscale)
            for (int s = 1; s < scales; ++s) m *= 2;
        if (flags.use_crossmodal) m = std::lcm(m, patch);
        return m;
    }
};

template <class T>
struct ConvParams {
    Var<T> w, b;
};

template <class T>
struct ResBlockWeights {
    ConvParams<T> c1, c2;  // x + c2(relu(c1(x)))
};

template <class T>
struct EncDecWeights {
    ConvParams<T> stem;                  // 1 -> C
    std::vector<ResBlockWeights<T>> enc; // one per scale
    std::vector<ConvParams<T>> down;     // scales-1, stride 2 (stride 1 when single-scale)
    std::vector<ConvParams<T>> up;       // scales-1, after x2 upsample
    std::vector<ResBlockWeights<T>> dec; // scales-1
    ConvParams<T> coarse_head;           // C -> 1, zero-init
};

template <class T>
struct TransformerLayerWeights {
    Var<T> wq, wk, wv, wo;              // [D,D]
    Var<T> ln1_g, ln1_b, ln2_g, ln2_b;  // [D]
    Var<T> ff1_w, ff1_b;                // [D, 2D], [2D]
    Var<T> ff2_w, ff2_b;                // [2D, D], [D]
};

template <class T>
struct FusionWeights {
    Var<T> embed_w;  // [p^2, D] shared across modalities
    Var<T> embed_b;  // [D]
    Var<T> tag_noisy, tag_coarse, tag_grad;  // [D] learned modality tags, zero-init
    std::vector<TransformerLayerWeights<T>> layers;
    Var<T> unpatch_w;  // [D, p^2 C] zero-init
    Var<T> unpatch_b;  // [p^2 C] zero-init
};

namespace bb_detail {

template <class T>
inline ConvParams<T> make_conv(ParamSet<T>& ps, const std::string& name, int cout, int cin, int k,
                               std::uint64_t seed, bool zero = false) {
    ConvParams<T> c;
    const double std = zero ? 0.0 : std::sqrt(2.0 / (double(cin) * k * k));
    c.w = ps.add(name + ".w", zero ? Tensor<T>::zeros({cout, cin, k, k})
                                   : randn_named<T>({cout, cin, k, k}, std, seed, name + ".w"));
    c.b = ps.add(name + ".b", Tensor<T>::zeros({cout}));
    return c;
}

template <class T>
inline ResBlockWeights<T> make_resblock(ParamSet<T>& ps, const std::string& name, int c,
                                        std::uint64_t seed) {
    ResBlockWeights<T> r;
    r.c1 = make_conv(ps, name + ".c1", c, c, 3, seed);
    // second conv initialized small so stacked blocks keep feature variance
    // near the stem's scale
    r.c2 = make_conv(ps, name + ".c2", c, c, 3, seed);
    for (auto& v : r.c2.w.n->val.data) v = T(0.25) * v;
    return r;
}

template <class T>
inline Var<T> resblock(const Var<T>& x, const ResBlockWeights<T>& w) {
    auto h = relu(conv2d(x, w.c1.w, w.c1.b, 1, Pad::reflect));
    return add(x, conv2d(h, w.c2.w, w.c2.b, 1, Pad::reflect));
}

/// Fixed 2-D sinusoidal positional terms for a gh x gw patch grid.
template <class T>
inline Tensor<T> sincos_positions(int gh, int gw, int d) {
    if (d % 4 != 0) throw DimensionError("embed_dim must be divisible by 4");
    const int q = d / 4;
    Tensor<T> t({gh * gw, d});
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx) {
            T* row = &t.data[size_t(gy * gw + gx) * d];
            for (int k = 0; k < q; ++k) {
                const double om = std::pow(10000.0, -double(k) / double(q));
                row[k] = T(std::sin(gx * om));
                row[q + k] = T(std::cos(gx * om));
                row[2 * q + k] = T(std::sin(gy * om));
                row[3 * q + k] = T(std::cos(gy * om));
            }
        }
    return t;
}

}  // namespace bb_detail

// ---------------------------------------------------------------------------
// transformer
// ---------------------------------------------------------------------------

template <class T>
struct AttentionOut {
    Var<T> tokens;
    Var<T> attn;  // [L,L] softmax matrix
};

/// Scaled dot-product self-attention followed by output projection, residual
/// + LayerNorm, and a two-layer feed-forward with its own residual + LayerNorm.
template <class T>
inline AttentionOut<T> self_attention_parts(const Var<T>& z, const TransformerLayerWeights<T>& w) {
    const int d = z.shape()[1];
    auto q = matmul(z, w.wq);
    auto k = matmul(z, w.wk);
    auto v = matmul(z, w.wv);
    auto scores = scale(matmul(q, k, false, true), T(1.0 / std::sqrt(double(d))));
    auto attn = softmax_rows(scores);
    auto ctx = matmul(attn, v);
    auto proj = matmul(ctx, w.wo);
    auto z1 = layernorm_rows(add(z, proj), w.ln1_g, w.ln1_b);
    auto h = relu(add_row_broadcast(matmul(z1, w.ff1_w), w.ff1_b));
    auto ff = add_row_broadcast(matmul(h, w.ff2_w), w.ff2_b);
    auto z2 = layernorm_rows(add(z1, ff), w.ln2_g, w.ln2_b);
    return {z2, attn};
}

template <class T>
inline Var<T> self_attention(const Var<T>& z, const TransformerLayerWeights<T>& w) {
    return self_attention_parts(z, w).tokens;
}

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

template <class T>
struct MindWeights {
    EncDecWeights<T> encdec;
    MapperWeights<T> mapper;   // present when use_nle
    NaabWeights<T> naab;       // present when use_naab
    FusionWeights<T> fusion;   // present when use_crossmodal
    ConvParams<T> final_head;  // C -> 1, zero-init
};

template <class T>
struct ForwardOut {
    Var<T> denoised;   // [1,H,W], clamped
    Var<T> residual;   // [1,H,W]
    Var<T> coarse;     // [1,H,W]
    Var<T> sigma_map;  // [1,H,W]
    Var<T> alpha;      // [C]
    Var<T> spatial;    // [1,H,W]
    Var<T> gamma, beta;
    Var<T> tokens;     // fused token sequence (empty when crossmodal off)
};

template <class T>
class MindModel {
public:
    ModelConfig cfg;
    AblationFlags flags;
    ParamSet<T> params;
    MindWeights<T> w;

    static MindModel create(const ModelConfig& cfg, const AblationFlags& flags, std::uint64_t seed) {
        MindModel m;
        m.cfg = cfg;
        m.flags = flags;
        const int c = cfg.base_channels, d = cfg.embed_dim, p = cfg.patch;
        auto& ps = m.params;
        m.w.encdec.stem = bb_detail::make_conv(ps, "encdec.stem", c, 1, 3, seed);
        for (int s = 0; s < cfg.scales; ++s)
            m.w.encdec.enc.push_back(bb_detail::make_resblock(ps, "encdec.enc" + std::to_string(s), c, seed));
        for (int s = 0; s + 1 < cfg.scales; ++s) {
            m.w.encdec.down.push_back(bb_detail::make_conv(ps, "encdec.down" + std::to_string(s), c, c, 3, seed));
            m.w.encdec.up.push_back(bb_detail::make_conv(ps, "encdec.up" + std::to_string(s), c, c, 3, seed));
            m.w.encdec.dec.push_back(bb_detail::make_resblock(ps, "encdec.dec" + std::to_string(s), c, seed));
        }
        m.w.encdec.coarse_head = bb_detail::make_conv(ps, "encdec.coarse", 1, c, 3, seed, /*zero=*/true);
        m.w.final_head = bb_detail::make_conv(ps, "final", 1, c, 3, seed, /*zero=*/true);
        if (flags.use_nle) m.w.mapper = MapperWeights<T>::create(ps, c, seed);
        if (flags.use_naab) m.w.naab = NaabWeights<T>::create(ps, c, cfg.r, seed);
        if (flags.use_crossmodal) {
            auto& f = m.w.fusion;
            f.embed_w = ps.add("fusion.embed.w", randn_named<T>({p * p, d}, std::sqrt(1.0 / (p * p)),
                                                                seed, "fusion.embed.w"));
            f.embed_b = ps.add("fusion.embed.b", Tensor<T>::zeros({d}));
            f.tag_noisy = ps.add("fusion.tag_noisy", Tensor<T>::zeros({d}));
            f.tag_coarse = ps.add("fusion.tag_coarse", Tensor<T>::zeros({d}));
            f.tag_grad = ps.add("fusion.tag_grad", Tensor<T>::zeros({d}));
            for (int l = 0; l < cfg.transformer_layers; ++l) {
                const std::string pre = "fusion.layer" + std::to_string(l);
                TransformerLayerWeights<T> tw;
                const double sa = std::sqrt(1.0 / d);
                tw.wq = ps.add(pre + ".wq", randn_named<T>({d, d}, sa, seed, pre + ".wq"));
                tw.wk = ps.add(pre + ".wk", randn_named<T>({d, d}, sa, seed, pre + ".wk"));
                tw.wv = ps.add(pre + ".wv", randn_named<T>({d, d}, sa, seed, pre + ".wv"));
                tw.wo = ps.add(pre + ".wo", randn_named<T>({d, d}, sa, seed, pre + ".wo"));
                tw.ln1_g = ps.add(pre + ".ln1.g", Tensor<T>::full({d}, T(1)));
                tw.ln1_b = ps.add(pre + ".ln1.b", Tensor<T>::zeros({d}));
                tw.ln2_g = ps.add(pre + ".ln2.g", Tensor<T>::full({d}, T(1)));
                tw.ln2_b = ps.add(pre + ".ln2.b", Tensor<T>::zeros({d}));
                tw.ff1_w = ps.add(pre + ".ff1.w", randn_named<T>({d, 2 * d}, std::sqrt(2.0 / d), seed, pre + ".ff1.w"));
                tw.ff1_b = ps.add(pre + ".ff1.b", Tensor<T>::zeros({2 * d}));
                tw.ff2_w = ps.add(pre + ".ff2.w", randn_named<T>({2 * d, d}, std::sqrt(1.0 / (2.0 * d)), seed, pre + ".ff2.w"));
                tw.ff2_b = ps.add(pre + ".ff2.b", Tensor<T>::zeros({d}));
                f.layers.push_back(tw);
            }
            f.unpatch_w = ps.add("fusion.unpatch.w", Tensor<T>::zeros({d, p * p * c}));
            f.unpatch_b = ps.add("fusion.unpatch.b", Tensor<T>::zeros({p * p * c}));
        }
        return m;
    }

    void check_dims(int h, int w_) const {
        const int mult = cfg.required_multiple(flags);
        if (h % mult || w_ % mult)
            throw DimensionError("input dimensions must be divisible by " + std::to_string(mult) +
                                 " (got " + std::to_string(h) + "x" + std::to_string(w_) + ")");
        if (h < 8 || w_ < 8) throw DimensionError("input must be at least 8x8");
    }

    /// Encoder-decoder branch; returns the coarse estimate and top features.
    std::pair<Var<T>, Var<T>> encode_decode(const Var<T>& noisy) const {
        check_dims(noisy.shape()[1], noisy.shape()[2]);
        auto& e = w.encdec;
        auto f = conv2d(noisy, e.stem.w, e.stem.b, 1, Pad::reflect);
        std::vector<Var<T>> skips;
        if (flags.use_multiscale) {
            auto x = bb_detail::resblock(f, e.enc[0]);
            skips.push_back(x);
            for (int s = 1; s < cfg.scales; ++s) {
                x = bb_detail::resblock(conv2d(x, e.down[size_t(s - 1)].w, e.down[size_t(s - 1)].b, 2, Pad::reflect),
                                        e.enc[size_t(s)]);
                if (s + 1 < cfg.scales) skips.push_back(x);
            }
            for (int s = cfg.scales - 2; s >= 0; --s) {
                auto u = conv2d(upsample_nearest2(x), e.up[size_t(s)].w, e.up[size_t(s)].b, 1, Pad::reflect);
                x = bb_detail::resblock(add(u, skips[size_t(s)]), e.dec[size_t(s)]);
            }
            f = x;
        } else {
            // single-scale stack with the same parameter shapes (stride 1, no resampling)
            auto x = bb_detail::resblock(f, e.enc[0]);
            for (int s = 1; s < cfg.scales; ++s)
                x = bb_detail::resblock(conv2d(x, e.down[size_t(s - 1)].w, e.down[size_t(s - 1)].b, 1, Pad::reflect),
                                        e.enc[size_t(s)]);
            for (int s = cfg.scales - 2; s >= 0; --s)
                x = bb_detail::resblock(conv2d(x, e.up[size_t(s)].w, e.up[size_t(s)].b, 1, Pad::reflect),
                                        e.dec[size_t(s)]);
            f = x;
        }
        auto res = conv2d(f, e.coarse_head.w, e.coarse_head.b, 1, Pad::reflect);
        auto coarse = clamp_v(sub(noisy, res), T(0), T(1));
        return {coarse, f};
    }

    /// Patch-embeds the three modalities with the shared projection, adds the
    /// learned modality tag and fixed sinusoidal positions, concatenates:
    /// L = 3 (H/p)(W/p).
    Var<T> fuse_modalities(const Var<T>& noisy, const Var<T>& coarse, const Var<T>& grad) const {
        if (noisy.shape() != coarse.shape() || noisy.shape() != grad.shape())
            throw DimensionError("fuse_modalities: modality dimensions differ");
        const int h = noisy.shape()[1], wd = noisy.shape()[2], p = cfg.patch;
        if (h % p || wd % p)
            throw DimensionError("fuse_modalities: dimensions must be divisible by patch size " +
                                 std::to_string(p));
        auto pos = Var<T>::constant(bb_detail::sincos_positions<T>(h / p, wd / p, cfg.embed_dim));
        auto& f = w.fusion;
        auto embed = [&](const Var<T>& img, const Var<T>& tag) {
            auto tok = add_row_broadcast(matmul(patchify(img, p), f.embed_w), f.embed_b);
            tok = add_row_broadcast(tok, tag);
            return add(tok, pos);
        };
        return concat_rows<T>({embed(noisy, f.tag_noisy), embed(coarse, f.tag_coarse), embed(grad, f.tag_grad)});
    }

    ForwardOut<T> forward(const Var<T>& noisy) const {
        const int c = cfg.base_channels, h = noisy.shape()[1], wd = noisy.shape()[2];
        ForwardOut<T> out;
        auto [coarse, feats] = encode_decode(noisy);
        out.coarse = coarse;

        Var<T> grad_map;
        {
            NoGradGuard ng;  // gradient map of the fixed input
            grad_map = gradient_map_var(Var<T>::constant(noisy.val()), cfg.grad_op);
        }

        if (flags.use_nle) {
            out.sigma_map = estimate_sigma_map_var(noisy, coarse, cfg.window, cfg.grad_op);
            auto mod = map_to_modulation(out.sigma_map, w.mapper);
            out.gamma = mod.gamma;
            out.beta = mod.beta;
        } else {
            out.sigma_map = Var<T>::constant(Tensor<T>::zeros({1, h, wd}));
            out.gamma = Var<T>::constant(Tensor<T>::full({c}, T(1)));
            out.beta = Var<T>::constant(Tensor<T>::zeros({c}));
        }

        Var<T> feats2 = feats;
        if (flags.use_crossmodal) {
            auto z = fuse_modalities(noisy, coarse, grad_map);
            for (const auto& layer : w.fusion.layers) z = self_attention(z, layer);
            out.tokens = z;
            auto m = mean_blocks(z, 3);
            auto u = add_row_broadcast(matmul(m, w.fusion.unpatch_w), w.fusion.unpatch_b);
            feats2 = add(feats, unpatchify(u, c, h, wd, cfg.patch));
        }

        if (flags.use_naab) {
            ModulationParams<T> mod{out.gamma, out.beta};
            auto nb = naab_forward_parts(feats2, mod, w.naab);
            out.alpha = nb.alpha;
            out.spatial = nb.spatial;
            feats2 = nb.f_att;
        } else {
            out.alpha = Var<T>::constant(Tensor<T>::full({c}, T(1)));
            out.spatial = Var<T>::constant(Tensor<T>::full({1, h, wd}, T(1)));
        }

        out.residual = conv2d(feats2, w.final_head.w, w.final_head.b, 1, Pad::reflect);
        out.denoised = clamp_v(sub(noisy, out.residual), T(0), T(1));
        return out;
    }
};

// ---------------------------------------------------------------------------
// image-level entry point
// ---------------------------------------------------------------------------

struct DenoiseDiagnostics {
    SigmaMap sigma;
    RealMap spatial;            // [H,W] attention map
    std::vector<double> alpha;  // [C]
    Image coarse;
    RealMap grad;
};

struct DenoiseResult {
    Image denoised;
    DenoiseDiagnostics diag;
};

/// Full pipeline on an image. The residual is subtracted from the input in
/// double precision, so a zero-initialized model reproduces its input bit-
/// exactly.
template <class T>
inline DenoiseResult mind_forward(const MindModel<T>& model, const Image& noisy) {
    NoGradGuard ng;
    Tensor<T> in({1, noisy.height, noisy.width});
    for (size_t i = 0; i < noisy.size(); ++i) in.data[i] = T(noisy.pix[i]);
    auto out = model.forward(Var<T>::constant(std::move(in)));

    DenoiseResult res;
    res.denoised = Image(noisy.height, noisy.width);
    for (size_t i = 0; i < noisy.size(); ++i) {
        const double v = noisy.pix[i] - double(out.residual.val().data[i]);
        res.denoised.pix[i] = std::min(1.0, std::max(0.0, v));
    }
    res.diag.sigma = RealMap(noisy.height, noisy.width);
    res.diag.spatial = RealMap(noisy.height, noisy.width);
    res.diag.coarse = Image(noisy.height, noisy.width);
    res.diag.grad = RealMap(noisy.height, noisy.width);
    for (size_t i = 0; i < noisy.size(); ++i) {
        res.diag.sigma.values[i] = double(out.sigma_map.val().data[i]);
        res.diag.spatial.values[i] = double(out.spatial.val().data[i]);
        res.diag.coarse.pix[i] = double(out.coarse.val().data[i]);
    }
    {
        NoGradGuard ng2;
        res.diag.grad = gradient_map(noisy, model.cfg.grad_op);
    }
    res.diag.alpha.resize(size_t(model.cfg.base_channels));
    for (size_t i = 0; i < res.diag.alpha.size(); ++i)
        res.diag.alpha[i] = double(out.alpha.val().data[i]);
    return res;
}

}  // namespace mind
