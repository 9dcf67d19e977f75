#pragma once
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mind/image.hpp"
#include "mind/rng.hpp"

namespace mind {

enum class NoiseKind { gaussian, poisson, speckle, motion_blur };

inline std::string to_string(NoiseKind k) {
    switch (k) {
        case NoiseKind::gaussian: return "gaussian";
        case NoiseKind::poisson: return "poisson";
        case NoiseKind::speckle: return "speckle";
        case NoiseKind::motion_blur: return "motion_blur";
    }
    return "?";
}

inline NoiseKind noise_kind_from_string(const std::string& s) {
    if (s == "gaussian") return NoiseKind::gaussian;
    if (s == "poisson") return NoiseKind::poisson;
    if (s == "speckle") return NoiseKind::speckle;
    if (s == "motion_blur") return NoiseKind::motion_blur;
    throw ParameterError("unknown noise kind '" + s + "'");
}

/// Spatially varying multiplier on the additive noise component, in [0,1].
struct SpatialProfile {
    int height = 0;
    int width = 0;
    std::vector<double> values;
};

struct NoiseSpec {
    NoiseKind kind = NoiseKind::gaussian;
    double level = 0.1;     // gaussian sigma / speckle s / blur length px / poisson peak
    double angle = 0.0;     // motion blur only, radians
    std::uint64_t seed = 0;
    std::optional<SpatialProfile> spatial_profile;
};

/// Default Poisson peak photon count (variance scales with 1/peak).
inline constexpr double kDefaultPoissonPeak = 255.0;

// Levels the training protocol draws from, per family. Poisson has no stated
// range; any positive peak is accepted and kDefaultPoissonPeak is the draw.
inline std::pair<double, double> strict_level_range(NoiseKind k) {
    switch (k) {
        case NoiseKind::gaussian: return {0.05, 0.25};
        case NoiseKind::speckle: return {0.10, 0.30};
        case NoiseKind::motion_blur: return {5.0, 15.0};
        case NoiseKind::poisson: return {0.0, std::numeric_limits<double>::infinity()};
    }
    return {0.0, 0.0};
}

inline void validate(const NoiseSpec& spec, bool strict = false) {
    if (!(spec.level > 0.0)) {
        if (spec.kind == NoiseKind::poisson)
            throw ParameterError("poisson peak must be positive");
        throw ParameterError("noise level must be positive");
    }
    if (strict) {
        auto [lo, hi] = strict_level_range(spec.kind);
        if (spec.level < lo || spec.level > hi)
            throw ParameterError("level " + std::to_string(spec.level) + " outside strict range [" +
                                 std::to_string(lo) + ", " + std::to_string(hi) + "] for " +
                                 to_string(spec.kind));
    }
}

inline void to_json(nlohmann::json& j, const NoiseSpec& s) {
    j = nlohmann::json{{"kind", to_string(s.kind)},
                       {"level", s.level},
                       {"angle", s.angle},
                       {"seed", s.seed}};
    if (s.spatial_profile) {
        j["spatial_profile"] = {{"height", s.spatial_profile->height},
                                {"width", s.spatial_profile->width},
                                {"values", s.spatial_profile->values}};
    } else {
        j["spatial_profile"] = nullptr;
    }
}

inline void from_json(const nlohmann::json& j, NoiseSpec& s) {
    s.kind = noise_kind_from_string(j.at("kind").get<std::string>());
    s.level = j.at("level").get<double>();
    s.angle = j.value("angle", 0.0);
    s.seed = j.value("seed", std::uint64_t(0));
    s.spatial_profile.reset();
    if (j.contains("spatial_profile") && !j["spatial_profile"].is_null()) {
        SpatialProfile p;
        p.height = j["spatial_profile"].at("height").get<int>();
        p.width = j["spatial_profile"].at("width").get<int>();
        p.values = j["spatial_profile"].at("values").get<std::vector<double>>();
        s.spatial_profile = std::move(p);
    }
}

namespace detail {

// Mirror index without repeating the border sample (…, 2, 1 | 0, 1, 2, …).
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n - 2;
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

/// 1-pixel-wide line kernel of the given length/angle, antialiased by
/// bilinear deposition of supersampled points; weights sum to 1.
inline std::vector<std::vector<double>> motion_kernel(double length, double angle) {
    if (!(length > 0.0)) throw ParameterError("motion blur length must be positive");
    const double half = (length - 1.0) / 2.0;
    const int radius = std::max(0, int(std::ceil(std::fabs(half))) + 1);
    const int side = 2 * radius + 1;
    std::vector<std::vector<double>> k(side, std::vector<double>(side, 0.0));
    const int samples = std::max(1, int(std::ceil(length * 8.0)));
    const double cx = std::cos(angle), sy = std::sin(angle);
    for (int i = 0; i < samples; ++i) {
        const double t = samples == 1 ? 0.0 : -half + (2.0 * half) * double(i) / double(samples - 1);
        const double x = t * cx, y = t * sy;
        const int x0 = int(std::floor(x)), y0 = int(std::floor(y));
        const double fx = x - x0, fy = y - y0;
        const double w = 1.0 / double(samples);
        k[size_t(y0 + radius)][size_t(x0 + radius)] += w * (1 - fx) * (1 - fy);
        k[size_t(y0 + radius)][size_t(x0 + radius + 1)] += w * fx * (1 - fy);
        k[size_t(y0 + radius + 1)][size_t(x0 + radius)] += w * (1 - fx) * fy;
        k[size_t(y0 + radius + 1)][size_t(x0 + radius + 1)] += w * fx * fy;
    }
    double sum = 0.0;
    for (auto& row : k)
        for (double v : row) sum += v;
    for (auto& row : k)
        for (double& v : row) v /= sum;
    return k;
}

inline Image convolve_reflect(const Image& img, const std::vector<std::vector<double>>& kernel) {
    const int kh = int(kernel.size()), kw = int(kernel[0].size());
    const int ry = kh / 2, rx = kw / 2;
    Image out(img.height, img.width);
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c) {
            double acc = 0.0;
            for (int dy = 0; dy < kh; ++dy) {
                const int sr = reflect_index(r + dy - ry, img.height);
                for (int dx = 0; dx < kw; ++dx) {
                    const int sc = reflect_index(c + dx - rx, img.width);
                    acc += kernel[size_t(dy)][size_t(dx)] * img.at(sr, sc);
                }
            }
            out.at(r, c) = acc;
        }
    }
    return out;
}

}  // namespace detail

/// Applies the additive degradation model: the unclamped noise component is
/// scaled pointwise by the spatial profile (when present), then clamped.
/// Same (img, spec) gives bit-identical output on every run and thread count.
inline Image degrade(const Image& img, const NoiseSpec& spec, bool strict = false) {
    validate(spec, strict);
    if (spec.spatial_profile &&
        (spec.spatial_profile->height != img.height || spec.spatial_profile->width != img.width))
        throw DimensionError("spatial profile dimensions do not match image");

    Rng rng = Rng::keyed(spec.seed, 0x6e6f697365ULL);  // "noise"
    Image raw(img.height, img.width);                  // unclamped X + N
    switch (spec.kind) {
        case NoiseKind::gaussian:
            for (size_t i = 0; i < img.size(); ++i) raw.pix[i] = img.pix[i] + spec.level * rng.normal();
            break;
        case NoiseKind::speckle:
            for (size_t i = 0; i < img.size(); ++i)
                raw.pix[i] = img.pix[i] * (1.0 + spec.level * rng.normal());
            break;
        case NoiseKind::poisson: {
            const double peak = spec.level;
            for (size_t i = 0; i < img.size(); ++i)
                raw.pix[i] = double(rng.poisson(img.pix[i] * peak)) / peak;
            break;
        }
        case NoiseKind::motion_blur: {
            if (std::min(img.height, img.width) < 3)
                throw DimensionError("motion blur needs an image of at least 3x3");
            raw = detail::convolve_reflect(img, detail::motion_kernel(spec.level, spec.angle));
            break;
        }
    }
    Image out(img.height, img.width);
    for (size_t i = 0; i < img.size(); ++i) {
        double n = raw.pix[i] - img.pix[i];
        if (spec.spatial_profile) n *= spec.spatial_profile->values[i];
        out.pix[i] = img.pix[i] + n;
    }
    out.clamp01();
    return out;
}

}  // namespace mind
