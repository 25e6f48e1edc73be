#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace cellseg {

// Instance map: 0 = background, k = cell k. Producers keep labels contiguous
// 1..K and regions pairwise disjoint (each pixel holds one label).
struct LabeledMask {
    int width = 0;
    int height = 0;
    std::vector<int> labels; // row-major

    LabeledMask() = default;
    LabeledMask(int w, int h) : width(w), height(h), labels(static_cast<size_t>(w) * h, 0) {}

    int at(int y, int x) const { return labels[static_cast<size_t>(y) * width + x]; }
    int& at(int y, int x) { return labels[static_cast<size_t>(y) * width + x]; }

    // Highest label present (K for contiguous labelling, 0 when empty).
    int max_label() const;

    // Pixel count per label, index k-1.
    std::vector<long> areas() const;

    // Pixel-centre centroid (x, y) per label, index k-1.
    std::vector<std::pair<double, double>> centroids() const;

    // Foreground indicator (any label > 0).
    std::vector<uint8_t> foreground() const;

    // True when labels a and b share an 8-adjacent pixel pair.
    bool touching(int a, int b) const;

    // All touching label pairs (a < b).
    std::vector<std::pair<int, int>> touching_pairs() const;

    // Renumber to contiguous 1..K preserving first-appearance order.
    void compact();
};

} // namespace cellseg
