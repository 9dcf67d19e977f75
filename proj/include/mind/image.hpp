#pragma once
#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "mind/common.hpp"
#include "mind/rng.hpp"

namespace mind {

/// Single-channel raster, row-major, values in [0,1] after any load or clamp.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> pix;

    Image() = default;
    Image(int h, int w, double fill = 0.0) : height(h), width(w), pix(size_t(h) * w, fill) {
        if (h < 1 || w < 1) throw DimensionError("image: dimensions must be positive");
    }

    double& at(int r, int c) { return pix[size_t(r) * width + c]; }
    double at(int r, int c) const { return pix[size_t(r) * width + c]; }
    size_t size() const { return pix.size(); }

    void clamp01() {
        for (double& p : pix) p = std::min(1.0, std::max(0.0, p));
    }

    bool same_shape(const Image& o) const { return height == o.height && width == o.width; }
};

struct PatchProvenance {
    std::string source_id;
    int row = 0;
    int col = 0;
};

struct PatchSet {
    std::vector<Image> patches;
    std::vector<PatchProvenance> provenance;
};

inline Image crop(const Image& img, int top, int left, int h, int w) {
    if (top < 0 || left < 0 || top + h > img.height || left + w > img.width)
        throw DimensionError("crop: window outside image bounds");
    Image out(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) out.at(r, c) = img.at(top + r, left + c);
    return out;
}

/// `count` square patches at seeded uniform offsets; same seed, same offsets.
inline PatchSet crop_patches(const Image& img, int size, int count, std::uint64_t seed,
                             const std::string& source_id = "") {
    if (size < 1 || size > std::min(img.height, img.width))
        throw DimensionError("crop_patches: size exceeds image dimensions");
    if (count < 1) throw ParameterError("crop_patches: count must be >= 1");
    Rng rng = Rng::keyed(seed, 0x63726f70ULL);  // "crop"
    PatchSet set;
    set.patches.reserve(count);
    for (int i = 0; i < count; ++i) {
        const int top = int(rng.uniform_below(std::uint64_t(img.height - size + 1)));
        const int left = int(rng.uniform_below(std::uint64_t(img.width - size + 1)));
        set.patches.push_back(crop(img, top, left, size, size));
        set.provenance.push_back({source_id, top, left});
    }
    return set;
}

}  // namespace mind
