#pragma once
#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mind/backbone.hpp"
#include "mind/degrade.hpp"
#include "mind/image_io.hpp"
#include "mind/objective.hpp"

namespace mind {

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

inline double mse_of(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw DimensionError("mse: dimension mismatch");
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a.pix[i] - b.pix[i];
        s += d * d;
    }
    return s / double(a.size());
}

/// 10 log10(1 / MSE) with peak 1.0; +inf sentinel for identical images.
inline double psnr(const Image& a, const Image& b) {
    const double m = mse_of(a, b);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / m);
}

inline double rmse(const Image& a, const Image& b) { return std::sqrt(mse_of(a, b)); }

/// Mean SSIM; shares the loss_ssim kernel (1 - loss).
inline double ssim(const Image& a, const Image& b) {
    NoGradGuard ng;
    auto av = nle_detail::image_const<double>(a);
    auto bv = nle_detail::image_const<double>(b);
    return 1.0 - loss_ssim(av, bv).val().data[0];
}

/// Feature-space distance through the frozen seeded extractor. Reported as
/// `perc_proxy`, never as LPIPS.
inline double perceptual_distance(const Image& a, const Image& b, std::uint64_t perc_seed) {
    NoGradGuard ng;
    auto phi = PerceptualExtractor<double>::create(perc_seed);
    auto av = nle_detail::image_const<double>(a);
    auto bv = nle_detail::image_const<double>(b);
    return loss_perceptual(av, bv, phi).val().data[0];
}

// ---------------------------------------------------------------------------
// classical baselines
// ---------------------------------------------------------------------------

/// Separable Gaussian blur, radius ceil(3 sigma), reflect padding.
inline Image gaussian_blur(const Image& img, double sigma_b) {
    if (!(sigma_b > 0)) throw ParameterError("gaussian_blur: sigma must be positive");
    const int radius = int(std::ceil(3.0 * sigma_b));
    std::vector<double> k(size_t(2 * radius + 1));
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        k[size_t(i + radius)] = std::exp(-double(i * i) / (2.0 * sigma_b * sigma_b));
        sum += k[size_t(i + radius)];
    }
    for (double& v : k) v /= sum;
    Image tmp(img.height, img.width), out(img.height, img.width);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
            double acc = 0;
            for (int i = -radius; i <= radius; ++i)
                acc += k[size_t(i + radius)] * img.at(r, detail::reflect_index(c + i, img.width));
            tmp.at(r, c) = acc;
        }
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
            double acc = 0;
            for (int i = -radius; i <= radius; ++i)
                acc += k[size_t(i + radius)] * tmp.at(detail::reflect_index(r + i, img.height), c);
            out.at(r, c) = acc;
        }
    return out;
}

/// k x k median with reflect padding; k odd.
inline Image median_filter(const Image& img, int k) {
    if (k < 1 || k % 2 == 0) throw ParameterError("median: kernel size must be odd");
    const int rad = k / 2;
    Image out(img.height, img.width);
    std::vector<double> window(size_t(k) * k);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
            size_t n = 0;
            for (int dy = -rad; dy <= rad; ++dy)
                for (int dx = -rad; dx <= rad; ++dx)
                    window[n++] = img.at(detail::reflect_index(r + dy, img.height),
                                         detail::reflect_index(c + dx, img.width));
            auto mid = window.begin() + std::ptrdiff_t(n / 2);
            std::nth_element(window.begin(), mid, window.begin() + std::ptrdiff_t(n));
            out.at(r, c) = *mid;
        }
    return out;
}

// ---------------------------------------------------------------------------
// paired t-test
// ---------------------------------------------------------------------------

namespace stats_detail {

// Regularized incomplete beta via Lentz continued fraction.
inline double betacf(double a, double b, double x) {
    const int kMaxIter = 300;
    const double kEps = 3e-16, kFpMin = 1e-300;
    const double qab = a + b, qap = a + 1, qam = a - 1;
    double c = 1, d = 1 - qab * x / qap;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    d = 1 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) break;
    }
    return h;
}

inline double reg_inc_beta(double a, double b, double x) {
    if (x <= 0) return 0;
    if (x >= 1) return 1;
    const double ln = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                      b * std::log(1 - x);
    const double bt = std::exp(ln);
    if (x < (a + 1) / (a + b + 2)) return bt * betacf(a, b, x) / a;
    return 1 - bt * betacf(b, a, 1 - x) / b;
}

}  // namespace stats_detail

/// Two-sided p for Student's t with df degrees of freedom.
inline double t_two_sided_p(double t, double df) {
    if (!std::isfinite(t)) return 0.0;
    return stats_detail::reg_inc_beta(df / 2.0, 0.5, df / (df + t * t));
}

struct TTestResult {
    int n = 0;
    double mean_diff = 0;
    double t = 0;
    double df = 0;
    double p = 1;
};

inline void to_json(nlohmann::json& j, const TTestResult& r) {
    j = nlohmann::json{{"n", r.n}, {"mean_diff", r.mean_diff}, {"t", r.t}, {"df", r.df}, {"p", r.p}, {"significant", r.p < 0.05}};
}

/// Paired t-test on a - b; sample sd (n-1). Degenerate conventions: all-zero
/// differences give t=0, p=1; zero sd with nonzero mean gives p=0.
inline TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw DimensionError("paired_t_test: length mismatch");
    const int n = int(a.size());
    if (n < 2) throw ParameterError("paired_t_test: need at least 2 pairs");
    std::vector<double> d(a.size());
    for (size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    double mean = 0;
    for (double v : d) mean += v;
    mean /= n;
    double ss = 0;
    for (double v : d) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (n - 1));
    TTestResult r;
    r.n = n;
    r.mean_diff = mean;
    r.df = n - 1;
    if (sd == 0.0) {
        if (mean == 0.0) {
            r.t = 0;
            r.p = 1;
        } else {
            r.t = mean > 0 ? std::numeric_limits<double>::infinity()
                           : -std::numeric_limits<double>::infinity();
            r.p = 0;
        }
        return r;
    }
    r.t = mean / (sd / std::sqrt(double(n)));
    r.p = t_two_sided_p(r.t, r.df);
    return r;
}

// ---------------------------------------------------------------------------
// evaluation runs
// ---------------------------------------------------------------------------

struct MethodSpec {
    std::string name;  // "mind" | "noisy" | "gaussian_blur" | "median"
    double blur_sigma = 1.2;
    int median_k = 3;
};

struct ImageMetrics {
    double psnr = 0, ssim = 0, rmse = 0, perc_proxy = 0;
};

inline void to_json(nlohmann::json& j, const ImageMetrics& m) {
    j = nlohmann::json{{"psnr", m.psnr}, {"ssim", m.ssim}, {"rmse", m.rmse}, {"perc_proxy", m.perc_proxy}};
}

struct MetricsReport {
    std::string method;
    nlohmann::json noise;  // serialized NoiseSpec (template; per-image seeds derived)
    std::uint64_t seed = 0;
    std::vector<ImageMetrics> per_image;
    ImageMetrics aggregate;
};

inline void to_json(nlohmann::json& j, const MetricsReport& r) {
    j = nlohmann::json{{"method", r.method},
                       {"noise", r.noise},
                       {"seed", r.seed},
                       {"per_image", r.per_image},
                       {"aggregate", r.aggregate}};
}

struct PairwiseTest {
    int spec_index = 0;
    std::string metric;  // "psnr" | "ssim"
    std::string method_a, method_b;
    TTestResult test;
};

inline void to_json(nlohmann::json& j, const PairwiseTest& p) {
    j = nlohmann::json{{"spec_index", p.spec_index},
                       {"metric", p.metric},
                       {"method_a", p.method_a},
                       {"method_b", p.method_b},
                       {"test", p.test}};
}

struct EvaluationResult {
    std::vector<MetricsReport> reports;       // |methods| x |noise specs|
    std::vector<PairwiseTest> tests;          // per-batch paired t-tests
    int batches = 0;
};

inline void to_json(nlohmann::json& j, const EvaluationResult& e) {
    j = nlohmann::json{{"reports", e.reports}, {"tests", e.tests}, {"batches", e.batches}};
}

template <class T>
inline Image apply_method(const MethodSpec& method, const MindModel<T>* model, const Image& noisy) {
    if (method.name == "noisy") return noisy;
    if (method.name == "gaussian_blur") return gaussian_blur(noisy, method.blur_sigma);
    if (method.name == "median") return median_filter(noisy, method.median_k);
    if (method.name == "mind") {
        if (!model) throw ParameterError("evaluate: mind method requires a checkpoint");
        return mind_forward(*model, noisy).denoised;
    }
    throw ParameterError("evaluate: unknown method '" + method.name + "'");
}

/// Degrades each held-out clean image with a seeded spec, runs every method,
/// computes per-image metrics and per-batch paired t-tests (Welchless,
/// classic paired design) between all method pairs on PSNR and SSIM.
template <class T>
inline EvaluationResult evaluate_run(const std::vector<Image>& clean_images,
                                     const MindModel<T>* model,
                                     const std::vector<NoiseSpec>& specs,
                                     const std::vector<MethodSpec>& methods, int batches,
                                     std::uint64_t seed, std::uint64_t perc_seed) {
    if (clean_images.empty()) throw DatasetError("evaluate: empty evaluation set");
    if (batches < 2) throw ParameterError("evaluate: need at least 2 batches");
    if (int(clean_images.size()) < batches)
        throw ParameterError("evaluate: fewer images than batches");

    EvaluationResult out;
    out.batches = batches;

    // batch membership: seeded shuffle, then round-robin split
    std::vector<int> order(clean_images.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
    Rng shuffle_rng = Rng::keyed(seed, 0x7368756646ULL);
    for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[shuffle_rng.uniform_below(i)]);

    for (size_t si = 0; si < specs.size(); ++si) {
        // degrade once per image, shared by all methods
        std::vector<Image> noisy(clean_images.size());
        for (size_t ii = 0; ii < clean_images.size(); ++ii) {
            NoiseSpec s = specs[si];
            s.seed = Rng::keyed(seed, (std::uint64_t(si) << 32) | std::uint64_t(ii)).next_u64();
            noisy[ii] = degrade(clean_images[ii], s);
        }
        std::vector<std::vector<ImageMetrics>> per_method(methods.size());
        for (size_t mi = 0; mi < methods.size(); ++mi) {
            MetricsReport rep;
            rep.method = methods[mi].name;
            rep.noise = specs[si];
            rep.seed = seed;
            for (size_t ii = 0; ii < clean_images.size(); ++ii) {
                const Image restored = apply_method(methods[mi], model, noisy[ii]);
                ImageMetrics m;
                m.psnr = psnr(restored, clean_images[ii]);
                m.ssim = ssim(restored, clean_images[ii]);
                m.rmse = rmse(restored, clean_images[ii]);
                m.perc_proxy = perceptual_distance(restored, clean_images[ii], perc_seed);
                rep.per_image.push_back(m);
            }
            const double n = double(rep.per_image.size());
            for (const auto& m : rep.per_image) {
                rep.aggregate.psnr += m.psnr / n;
                rep.aggregate.ssim += m.ssim / n;
                rep.aggregate.rmse += m.rmse / n;
                rep.aggregate.perc_proxy += m.perc_proxy / n;
            }
            per_method[mi] = rep.per_image;
            out.reports.push_back(std::move(rep));
        }
        // per-batch means, then pairwise paired t-tests
        auto batch_means = [&](size_t mi, bool use_psnr) {
            std::vector<double> means(size_t(batches), 0.0);
            std::vector<int> counts(size_t(batches), 0);
            for (size_t k = 0; k < order.size(); ++k) {
                const int bidx = int(k) % batches;
                const auto& m = per_method[mi][size_t(order[k])];
                means[size_t(bidx)] += use_psnr ? m.psnr : m.ssim;
                counts[size_t(bidx)] += 1;
            }
            for (int b = 0; b < batches; ++b) means[size_t(b)] /= std::max(1, counts[size_t(b)]);
            return means;
        };
        for (size_t ma = 0; ma < methods.size(); ++ma)
            for (size_t mb = ma + 1; mb < methods.size(); ++mb)
                for (const bool use_psnr : {true, false}) {
                    PairwiseTest t;
                    t.spec_index = int(si);
                    t.metric = use_psnr ? "psnr" : "ssim";
                    t.method_a = methods[ma].name;
                    t.method_b = methods[mb].name;
                    t.test = paired_t_test(batch_means(ma, use_psnr), batch_means(mb, use_psnr));
                    out.tests.push_back(std::move(t));
                }
    }
    return out;
}

// ---------------------------------------------------------------------------
// diagnostics emission
// ---------------------------------------------------------------------------

/// CSV of lambda(sigma) over [0, sigma_max] percent in steps of sigma_step.
/// Values use the shortest round-trip decimal form.
inline std::string lambda_curve_csv(const LossWeightsConfig& cfg, double sigma_max,
                                    double sigma_step) {
    if (!(sigma_step > 0) || sigma_max < 0) throw ParameterError("lambda curve: empty range");
    auto shortest = [](double v) {
        char buf[32];
        auto res = std::to_chars(buf, buf + sizeof buf, v);
        return std::string(buf, res.ptr);
    };
    std::ostringstream os;
    os << "sigma,lambda_mse,lambda_ssim,lambda_edge,lambda_perc,lambda_adv\n";
    for (double s = 0; s <= sigma_max + 1e-12; s += sigma_step) {
        const auto l = lambda_weights(s, cfg);
        os << shortest(s);
        for (double v : l) os << "," << shortest(v);
        os << "\n";
    }
    return os.str();
}

inline void emit_lambda_curve(const LossWeightsConfig& cfg, double sigma_max, double sigma_step,
                              const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << lambda_curve_csv(cfg, sigma_max, sigma_step);
}

inline Image map_to_image(const RealMap& m) {
    Image img(m.height, m.width);
    img.pix = m.values;
    return img;
}

/// Writes spatial.pfm, alpha.pfm (1 x C row) and sigma.pfm for one input.
template <class T>
inline void emit_attention_maps(const MindModel<T>& model, const Image& img,
                                const std::string& outdir) {
    namespace fs = std::filesystem;
    fs::create_directories(outdir);
    auto res = mind_forward(model, img);
    write_image(map_to_image(res.diag.spatial), (fs::path(outdir) / "spatial.pfm").string(),
                ImageFormat::pfm);
    Image alpha(1, int(res.diag.alpha.size()));
    alpha.pix = res.diag.alpha;
    write_image(alpha, (fs::path(outdir) / "alpha.pfm").string(), ImageFormat::pfm);
    write_image(map_to_image(res.diag.sigma), (fs::path(outdir) / "sigma.pfm").string(),
                ImageFormat::pfm);
}

}  // namespace mind
