#include "cellseg/imageproc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>

namespace cellseg {

namespace {

std::vector<double> gaussian_kernel(double sigma) {
    if (sigma <= 0.0) throw std::invalid_argument("gaussian_blur: sigma must be positive");
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(static_cast<size_t>(2 * radius + 1));
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double w = std::exp(-0.5 * (i * i) / (sigma * sigma));
        k[static_cast<size_t>(i + radius)] = w;
        total += w;
    }
    for (double& w : k) w /= total;
    return k;
}

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

} // namespace

Grid gaussian_blur(const Grid& in, double sigma) {
    const std::vector<double> k = gaussian_kernel(sigma);
    const int radius = (static_cast<int>(k.size()) - 1) / 2;
    const int w = in.width, h = in.height;

    Grid tmp(w, h), out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += k[static_cast<size_t>(i + radius)] * in.at(y, clampi(x + i, 0, w - 1));
            tmp.at(y, x) = acc;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += k[static_cast<size_t>(i + radius)] * tmp.at(clampi(y + i, 0, h - 1), x);
            out.at(y, x) = acc;
        }
    return out;
}

Grid gradient_magnitude(const Grid& in) {
    const int w = in.width, h = in.height;
    Grid out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double gx = 0.5 * (in.at(y, clampi(x + 1, 0, w - 1)) -
                                     in.at(y, clampi(x - 1, 0, w - 1)));
            const double gy = 0.5 * (in.at(clampi(y + 1, 0, h - 1), x) -
                                     in.at(clampi(y - 1, 0, h - 1), x));
            out.at(y, x) = std::sqrt(gx * gx + gy * gy);
        }
    return out;
}

std::vector<uint8_t> erode_disk(const std::vector<uint8_t>& mask, int width, int height,
                                int radius) {
    std::vector<std::pair<int, int>> offsets;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            if (dx * dx + dy * dy <= radius * radius) offsets.emplace_back(dy, dx);

    std::vector<uint8_t> out(mask.size(), 0);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            bool keep = mask[static_cast<size_t>(y) * width + x] != 0;
            for (size_t i = 0; keep && i < offsets.size(); ++i) {
                const int yy = y + offsets[i].first, xx = x + offsets[i].second;
                if (yy < 0 || yy >= height || xx < 0 || xx >= width ||
                    mask[static_cast<size_t>(yy) * width + xx] == 0)
                    keep = false;
            }
            out[static_cast<size_t>(y) * width + x] = keep ? 1 : 0;
        }
    return out;
}

int connected_components(const std::vector<uint8_t>& mask, int width, int height,
                         std::vector<int>& labels) {
    labels.assign(mask.size(), 0);
    int next = 0;
    std::vector<size_t> stack;
    for (size_t start = 0; start < mask.size(); ++start) {
        if (mask[start] == 0 || labels[start] != 0) continue;
        ++next;
        stack.push_back(start);
        labels[start] = next;
        while (!stack.empty()) {
            const size_t p = stack.back();
            stack.pop_back();
            const int y = static_cast<int>(p) / width, x = static_cast<int>(p) % width;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= height || xx < 0 || xx >= width) continue;
                    const size_t q = static_cast<size_t>(yy) * width + xx;
                    if (mask[q] != 0 && labels[q] == 0) {
                        labels[q] = next;
                        stack.push_back(q);
                    }
                }
        }
    }
    return next;
}

namespace {

// 1-D squared distance transform (Felzenszwalb/Huttenlocher lower envelope).
void edt_1d(const std::vector<double>& f, std::vector<double>& d, int n) {
    static constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<int> v(static_cast<size_t>(n));
    std::vector<double> z(static_cast<size_t>(n) + 1);
    int k = 0;
    v[0] = 0;
    z[0] = -kInf;
    z[1] = kInf;
    for (int q = 1; q < n; ++q) {
        double s;
        while (true) {
            const int p = v[static_cast<size_t>(k)];
            s = ((f[static_cast<size_t>(q)] + q * q) - (f[static_cast<size_t>(p)] + p * p)) /
                (2.0 * q - 2.0 * p);
            if (s > z[static_cast<size_t>(k)]) break;
            --k;
        }
        ++k;
        v[static_cast<size_t>(k)] = q;
        z[static_cast<size_t>(k)] = s;
        z[static_cast<size_t>(k) + 1] = kInf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[static_cast<size_t>(k) + 1] < q) ++k;
        const int p = v[static_cast<size_t>(k)];
        d[static_cast<size_t>(q)] = (q - p) * (q - p) + f[static_cast<size_t>(p)];
    }
}

} // namespace

std::vector<double> squared_edt(const std::vector<uint8_t>& mask, int width, int height) {
    static constexpr double kInf = 1e18; // effectively infinite on a pixel grid
    std::vector<double> d(mask.size());
    for (size_t i = 0; i < mask.size(); ++i) d[i] = mask[i] ? kInf : 0.0;

    std::vector<double> f(static_cast<size_t>(std::max(width, height)));
    std::vector<double> o(static_cast<size_t>(std::max(width, height)));
    for (int x = 0; x < width; ++x) { // columns
        for (int y = 0; y < height; ++y) f[static_cast<size_t>(y)] = d[static_cast<size_t>(y) * width + x];
        edt_1d(f, o, height);
        for (int y = 0; y < height; ++y) d[static_cast<size_t>(y) * width + x] = o[static_cast<size_t>(y)];
    }
    for (int y = 0; y < height; ++y) { // rows
        for (int x = 0; x < width; ++x) f[static_cast<size_t>(x)] = d[static_cast<size_t>(y) * width + x];
        edt_1d(f, o, width);
        for (int x = 0; x < width; ++x) d[static_cast<size_t>(y) * width + x] = o[static_cast<size_t>(x)];
    }
    return d;
}

} // namespace cellseg
