#pragma once
#include <cmath>

#include "mind/image.hpp"
#include "mind/rng.hpp"

namespace mind {

/// Seeded texture/shape image: a smooth ramp background, low- and high-
/// frequency gratings, a fine checkerboard patch, and a handful of ellipses,
/// rectangles and bars with sharp or soft edges. The fine-scale content keeps
/// plain smoothing from being a competitive restoration. Intensities land
/// well inside (0,1).
inline Image synthetic_texture(int h, int w, std::uint64_t seed) {
    Rng rng = Rng::keyed(seed, 0x73796e7468ULL);  // "synth"
    Image img(h, w);

    const double base = rng.uniform(0.25, 0.6);
    const double gx = rng.uniform(-0.25, 0.25), gy = rng.uniform(-0.25, 0.25);
    const double freq = rng.uniform(2.0, 6.0), phase = rng.uniform(0.0, 6.283), amp = rng.uniform(0.03, 0.12);
    const double dir = rng.uniform(0.0, 3.1416);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double u = double(c) / w, v = double(r) / h;
            const double t = std::cos(dir) * u + std::sin(dir) * v;
            img.at(r, c) = base + gx * (u - 0.5) + gy * (v - 0.5) +
                           amp * std::sin(2.0 * 3.14159265358979 * freq * t + phase);
        }

    // fine grating over a random band
    {
        const double fdir = rng.uniform(0.0, 3.1416);
        const double fcyc = rng.uniform(0.18, 0.38);  // cycles per pixel
        const double famp = rng.uniform(0.08, 0.16);
        const double fphase = rng.uniform(0.0, 6.283);
        const double band_c = rng.uniform(0.2, 0.8), band_w = rng.uniform(0.25, 0.6);
        const double bdir = rng.uniform(0.0, 3.1416);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                const double u = double(c) / w, v = double(r) / h;
                const double band = std::cos(bdir) * u + std::sin(bdir) * v;
                if (std::fabs(band - band_c) > band_w / 2) continue;
                const double t = std::cos(fdir) * c + std::sin(fdir) * r;
                img.at(r, c) += famp * std::sin(2.0 * 3.14159265358979 * fcyc * t + fphase);
            }
    }

    // fine checkerboard patch
    {
        const int cell = 1 + int(rng.uniform_below(3));
        const double camp = rng.uniform(0.06, 0.14);
        const int pw = int(rng.uniform(0.25, 0.55) * w), ph = int(rng.uniform(0.25, 0.55) * h);
        const int top = int(rng.uniform_below(std::uint64_t(std::max(1, h - ph))));
        const int left = int(rng.uniform_below(std::uint64_t(std::max(1, w - pw))));
        for (int r = top; r < std::min(h, top + ph); ++r)
            for (int c = left; c < std::min(w, left + pw); ++c)
                img.at(r, c) += (((r / cell) + (c / cell)) % 2 ? camp : -camp);
    }

    const int shapes = 4 + int(rng.uniform_below(5));
    for (int s = 0; s < shapes; ++s) {
        const int kind = int(rng.uniform_below(3));
        const double val = rng.uniform(0.1, 0.9);
        const double cx = rng.uniform(0.1, 0.9) * w, cy = rng.uniform(0.1, 0.9) * h;
        if (kind == 0) {  // ellipse, optionally soft-edged
            const double ax = rng.uniform(0.05, 0.25) * w, ay = rng.uniform(0.05, 0.25) * h;
            const double soft = rng.next_double() < 0.4 ? rng.uniform(1.0, 3.0) : 0.0;
            for (int r = 0; r < h; ++r)
                for (int c = 0; c < w; ++c) {
                    const double d = std::pow((c - cx) / ax, 2) + std::pow((r - cy) / ay, 2);
                    if (soft > 0) {
                        const double wgt = 1.0 / (1.0 + std::exp((d - 1.0) * soft * 4.0));
                        img.at(r, c) = img.at(r, c) * (1 - wgt) + val * wgt;
                    } else if (d <= 1.0) {
                        img.at(r, c) = val;
                    }
                }
        } else if (kind == 1) {  // rectangle
            const int rw = 3 + int(rng.uniform_below(std::uint64_t(w / 3)));
            const int rh = 3 + int(rng.uniform_below(std::uint64_t(h / 3)));
            const int top = std::min(h - rh, int(rng.uniform_below(std::uint64_t(h))));
            const int left = std::min(w - rw, int(rng.uniform_below(std::uint64_t(w))));
            for (int r = std::max(0, top); r < std::min(h, top + rh); ++r)
                for (int c = std::max(0, left); c < std::min(w, left + rw); ++c) img.at(r, c) = val;
        } else {  // bar
            const double ang = rng.uniform(0.0, 3.1416);
            const double half_w = rng.uniform(1.0, 3.5);
            const double nx = -std::sin(ang), ny = std::cos(ang);
            for (int r = 0; r < h; ++r)
                for (int c = 0; c < w; ++c)
                    if (std::fabs((c - cx) * nx + (r - cy) * ny) <= half_w) img.at(r, c) = val;
        }
    }

    for (auto& p : img.pix) p = 0.05 + 0.9 * std::min(1.0, std::max(0.0, p));
    return img;
}

}  // namespace mind
