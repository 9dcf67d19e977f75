#pragma once
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mind/backbone.hpp"
#include "mind/objective.hpp"

// Central finite-difference verification of every differentiable component,
// in double precision. Relative error |a - f| / max(|a|, |f|, 1e-8), maximum
// over all parameters and inputs of the component.

namespace mind {

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0;
    std::string worst_param;
    double eps = 0;
    double threshold = 0;
    bool pass() const { return max_rel_err < threshold; }
};

namespace gc_detail {

template <class Builder>
inline GradCheckResult check_params(ParamSet<double>& ps, Builder&& scalar, double eps) {
    ps.zero_grads();
    auto root = scalar();
    backward(root);
    std::map<std::string, Tensor<double>> analytic;
    for (auto& [n, v] : ps.entries)
        analytic[n] = v.n->has_grad() ? v.grad() : Tensor<double>::zeros(v.val().shape);

    GradCheckResult res;
    res.eps = eps;
    for (auto& [n, v] : ps.entries) {
        for (size_t j = 0; j < v.n->val.data.size(); ++j) {
            const double orig = v.n->val.data[j];
            double fp, fm;
            {
                NoGradGuard ng;
                v.n->val.data[j] = orig + eps;
                fp = scalar().val().data[0];
                v.n->val.data[j] = orig - eps;
                fm = scalar().val().data[0];
                v.n->val.data[j] = orig;
            }
            const double fd = (fp - fm) / (2 * eps);
            const double a = analytic[n].data[j];
            const double rel = std::fabs(a - fd) / std::max({std::fabs(a), std::fabs(fd), 1e-8});
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_param = n + "[" + std::to_string(j) + "]";
            }
        }
    }
    return res;
}

inline Tensor<double> rand_tensor(std::vector<int> shape, double lo, double hi, Rng& rng) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

inline Tensor<double> randn_tensor(std::vector<int> shape, double std, Rng& rng) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.data) v = std * rng.normal();
    return t;
}

/// Replaces zero-initialized tensors with small random values so every path
/// carries gradient during the check.
template <class T>
inline void randomize_zeros(ParamSet<T>& ps, double std, std::uint64_t seed) {
    for (auto& [name, v] : ps.entries) {
        bool all_zero = true;
        for (T x : v.val().data) all_zero = all_zero && x == T(0);
        if (all_zero) v.n->val = randn_named<T>(v.val().shape, std, seed, "rnd." + name);
    }
}

}  // namespace gc_detail

struct GradCheckSpec {
    std::string name;
    double eps;
    double threshold;
    std::function<GradCheckResult(double)> run;
};

inline std::vector<GradCheckSpec> gradcheck_registry() {
    std::vector<GradCheckSpec> reg;

    reg.push_back({"modulate", 1e-3, 1e-6, [](double eps) {
        Rng rng(11);
        ParamSet<double> ps;
        auto f = ps.add("input.f", gc_detail::randn_tensor({4, 8, 8}, 1.0, rng));
        auto gamma = ps.add("gamma", gc_detail::rand_tensor({4}, 0.2, 1.8, rng));
        auto beta = ps.add("beta", gc_detail::randn_tensor({4}, 0.5, rng));
        auto r = gc_detail::randn_tensor({4, 8, 8}, 1.0, rng);
        return gc_detail::check_params(ps, [&] {
            ModulationParams<double> m{gamma, beta};
            return dot_const(modulate(f, m), r);
        }, eps);
    }});

    reg.push_back({"channel_attention", 1e-3, 1e-4, [](double eps) {
        Rng rng(12);
        ParamSet<double> ps;
        auto f = ps.add("input.fprime", gc_detail::randn_tensor({8, 6, 6}, 1.0, rng));
        NaabWeights<double> w = NaabWeights<double>::create(ps, 8, 4, 12345);
        auto r = gc_detail::randn_tensor({8}, 1.0, rng);
        return gc_detail::check_params(ps, [&] { return dot_const(channel_attention(f, w), r); }, eps);
    }});

    reg.push_back({"spatial_attention", 1e-3, 1e-4, [](double eps) {
        Rng rng(13);
        ParamSet<double> ps;
        auto f = ps.add("input.f", gc_detail::randn_tensor({4, 8, 8}, 1.0, rng));
        NaabWeights<double> w = NaabWeights<double>::create(ps, 4, 4, 999);
        auto r = gc_detail::randn_tensor({1, 8, 8}, 1.0, rng);
        return gc_detail::check_params(ps, [&] { return dot_const(spatial_attention(f, w), r); }, eps);
    }});

    reg.push_back({"naab_forward", 1e-3, 1e-4, [](double eps) {
        Rng rng(14);
        ParamSet<double> ps;
        auto f = ps.add("input.f", gc_detail::randn_tensor({4, 8, 8}, 1.0, rng));
        auto gamma = ps.add("gamma", gc_detail::rand_tensor({4}, 0.4, 1.6, rng));
        auto beta = ps.add("beta", gc_detail::randn_tensor({4}, 0.3, rng));
        NaabWeights<double> w = NaabWeights<double>::create(ps, 4, 4, 777);
        auto r = gc_detail::randn_tensor({4, 8, 8}, 1.0, rng);
        return gc_detail::check_params(ps, [&] {
            ModulationParams<double> m{gamma, beta};
            return dot_const(naab_forward(f, m, w), r);
        }, eps);
    }});

    reg.push_back({"self_attention", 1e-3, 1e-4, [](double eps) {
        Rng rng(15);
        ParamSet<double> ps;
        auto z = ps.add("input.z", gc_detail::randn_tensor({8, 16}, 1.0, rng));
        ModelConfig cfg;
        cfg.embed_dim = 16;
        cfg.transformer_layers = 1;
        cfg.base_channels = 8;
        MindModel<double> model = MindModel<double>::create(cfg, AblationFlags{}, 21);
        // reuse the model's first transformer layer
        const auto& w = model.w.fusion.layers[0];
        ParamSet<double> scan;
        scan.entries.emplace("input.z", z);
        for (auto& [n, v] : model.params.entries)
            if (n.rfind("fusion.layer0", 0) == 0) scan.entries.emplace(n, v);
        auto r = gc_detail::randn_tensor({8, 16}, 1.0, rng);
        return gc_detail::check_params(scan, [&] { return dot_const(self_attention(z, w), r); }, eps);
    }});

    reg.push_back({"loss_mse", 1e-1, 1e-10, [](double eps) {
        Rng rng(16);
        ParamSet<double> ps;
        auto xhat = ps.add("input.xhat", gc_detail::rand_tensor({1, 12, 12}, 0.1, 0.9, rng));
        auto x = Var<double>::constant(gc_detail::rand_tensor({1, 12, 12}, 0.1, 0.9, rng));
        return gc_detail::check_params(ps, [&] { return loss_mse(xhat, x); }, eps);
    }});

    reg.push_back({"loss_ssim", 1e-4, 1e-4, [](double eps) {
        Rng rng(17);
        ParamSet<double> ps;
        auto xhat = ps.add("input.xhat", gc_detail::rand_tensor({1, 16, 16}, 0.2, 0.8, rng));
        auto x = Var<double>::constant(gc_detail::rand_tensor({1, 16, 16}, 0.2, 0.8, rng));
        return gc_detail::check_params(ps, [&] { return loss_ssim(xhat, x); }, eps);
    }});

    reg.push_back({"loss_perceptual", 1e-5, 1e-4, [](double eps) {
        Rng rng(17);
        ParamSet<double> ps;
        auto xhat = ps.add("input.xhat", gc_detail::rand_tensor({1, 16, 16}, 0.2, 0.8, rng));
        auto x = Var<double>::constant(gc_detail::rand_tensor({1, 16, 16}, 0.2, 0.8, rng));
        auto phi = PerceptualExtractor<double>::create(4242);
        return gc_detail::check_params(ps, [&] { return loss_perceptual(xhat, x, phi); }, eps);
    }});

    reg.push_back({"total_loss", 1e-5, 1e-4, [](double eps) {
        Rng rng(19);
        ParamSet<double> ps;
        auto xhat = ps.add("input.xhat", gc_detail::rand_tensor({1, 16, 16}, 0.2, 0.8, rng));
        auto x = Var<double>::constant(gc_detail::rand_tensor({1, 16, 16}, 0.2, 0.8, rng));
        auto phi = PerceptualExtractor<double>::create(4242);
        LossWeightsConfig cfg;
        return gc_detail::check_params(
            ps, [&] { return total_loss(xhat, x, 0.07, cfg, phi).total; }, eps);
    }});

    reg.push_back({"encode_decode", 1e-6, 1e-3, [](double eps) {
        Rng rng(22);
        ModelConfig cfg;
        cfg.base_channels = 8;
        cfg.embed_dim = 16;
        cfg.transformer_layers = 1;
        AblationFlags flags;
        flags.use_crossmodal = false;
        flags.use_nle = false;
        flags.use_naab = false;
        MindModel<double> model = MindModel<double>::create(cfg, flags, 1022);
        gc_detail::randomize_zeros(model.params, 0.005, 1022);
        auto noisy = Var<double>::constant(gc_detail::rand_tensor({1, 16, 16}, 0.25, 0.75, rng));
        auto r1 = gc_detail::randn_tensor({1, 16, 16}, 0.01, rng);
        auto r2 = gc_detail::randn_tensor({8, 16, 16}, 0.01, rng);
        return gc_detail::check_params(model.params, [&] {
            auto [coarse, feats] = model.encode_decode(noisy);
            return add(dot_const(coarse, r1), dot_const(feats, r2));
        }, eps);
    }});

    reg.push_back({"mind_forward", 1e-5, 1e-3, [](double eps) {
        Rng rng(40);
        ModelConfig cfg;
        cfg.base_channels = 8;
        cfg.embed_dim = 16;
        cfg.transformer_layers = 1;
        MindModel<double> model = MindModel<double>::create(cfg, AblationFlags{}, 2040);
        gc_detail::randomize_zeros(model.params, 0.005, 2040);
        auto noisy = Var<double>::constant(gc_detail::rand_tensor({1, 16, 16}, 0.25, 0.75, rng));
        auto r = gc_detail::randn_tensor({1, 16, 16}, 0.01, rng);
        return gc_detail::check_params(model.params, [&] {
            return dot_const(model.forward(noisy).denoised, r);
        }, eps);
    }});

    return reg;
}

/// Runs one registered check; eps 0 means the component default.
inline GradCheckResult grad_check(const std::string& name, double eps = 0) {
    for (const auto& spec : gradcheck_registry()) {
        if (spec.name == name) {
            GradCheckResult r = spec.run(eps > 0 ? eps : spec.eps);
            r.name = spec.name;
            r.threshold = spec.threshold;
            return r;
        }
    }
    throw ParameterError("grad_check: unregistered component '" + name + "'");
}

}  // namespace mind
