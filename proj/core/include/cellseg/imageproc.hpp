#pragma once

#include <cstdint>
#include <vector>

namespace cellseg {

// Plain row-major scalar grid used by the pixel-level routines.
struct Grid {
    int width = 0;
    int height = 0;
    std::vector<double> v;

    Grid() = default;
    Grid(int w, int h, double fill = 0.0)
        : width(w), height(h), v(static_cast<size_t>(w) * h, fill) {}
    double& at(int y, int x) { return v[static_cast<size_t>(y) * width + x]; }
    double at(int y, int x) const { return v[static_cast<size_t>(y) * width + x]; }
    size_t size() const { return v.size(); }
};

// Separable Gaussian blur, kernel radius ceil(3*sigma), replicated borders.
Grid gaussian_blur(const Grid& in, double sigma);

// Central-difference gradient magnitude with replicated borders.
Grid gradient_magnitude(const Grid& in);

// Binary erosion by a disk structuring element (dx^2 + dy^2 <= r^2).
// Input nonzero = foreground; pixels beyond the border count as background.
std::vector<uint8_t> erode_disk(const std::vector<uint8_t>& mask, int width, int height,
                                int radius);

// 8-connected component labelling; returns labels 1..n in discovery
// (row-major first-pixel) order and the component count.
int connected_components(const std::vector<uint8_t>& mask, int width, int height,
                         std::vector<int>& labels);

// Exact squared Euclidean distance to the nearest zero pixel (background),
// computed with the two-pass lower-envelope transform. Foreground = nonzero.
std::vector<double> squared_edt(const std::vector<uint8_t>& mask, int width, int height);

} // namespace cellseg
