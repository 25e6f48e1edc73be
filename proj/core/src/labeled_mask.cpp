#include "cellseg/labeled_mask.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace cellseg {

int LabeledMask::max_label() const {
    int m = 0;
    for (int l : labels) m = std::max(m, l);
    return m;
}

std::vector<long> LabeledMask::areas() const {
    std::vector<long> a(static_cast<size_t>(max_label()), 0);
    for (int l : labels)
        if (l > 0) ++a[static_cast<size_t>(l - 1)];
    return a;
}

std::vector<std::pair<double, double>> LabeledMask::centroids() const {
    const int k = max_label();
    std::vector<double> sx(static_cast<size_t>(k), 0.0), sy(static_cast<size_t>(k), 0.0);
    std::vector<long> n(static_cast<size_t>(k), 0);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const int l = at(y, x);
            if (l <= 0) continue;
            sx[static_cast<size_t>(l - 1)] += x + 0.5;
            sy[static_cast<size_t>(l - 1)] += y + 0.5;
            ++n[static_cast<size_t>(l - 1)];
        }
    std::vector<std::pair<double, double>> c(static_cast<size_t>(k), {0.0, 0.0});
    for (int i = 0; i < k; ++i)
        if (n[static_cast<size_t>(i)] > 0)
            c[static_cast<size_t>(i)] = {sx[static_cast<size_t>(i)] / n[static_cast<size_t>(i)],
                                         sy[static_cast<size_t>(i)] / n[static_cast<size_t>(i)]};
    return c;
}

std::vector<uint8_t> LabeledMask::foreground() const {
    std::vector<uint8_t> fg(labels.size());
    for (size_t i = 0; i < labels.size(); ++i) fg[i] = labels[i] > 0 ? 1 : 0;
    return fg;
}

bool LabeledMask::touching(int a, int b) const {
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            if (at(y, x) != a) continue;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= height || xx < 0 || xx >= width) continue;
                    if (at(yy, xx) == b) return true;
                }
        }
    return false;
}

std::vector<std::pair<int, int>> LabeledMask::touching_pairs() const {
    std::set<std::pair<int, int>> pairs;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const int a = at(y, x);
            if (a <= 0) continue;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= height || xx < 0 || xx >= width) continue;
                    const int b = at(yy, xx);
                    if (b > 0 && b != a) pairs.insert({std::min(a, b), std::max(a, b)});
                }
        }
    return {pairs.begin(), pairs.end()};
}

void LabeledMask::compact() {
    std::map<int, int> remap;
    for (int& l : labels) {
        if (l <= 0) continue;
        auto [it, inserted] = remap.emplace(l, static_cast<int>(remap.size()) + 1);
        l = it->second;
    }
}

} // namespace cellseg
