#include "cellseg/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "cellseg/errors.hpp"
#include "cellseg/imageproc.hpp"
#include "cellseg/rng.hpp"
#include "cellseg/trainer.hpp"

namespace cellseg {

namespace {

struct Blob {
    double cx = 0.0, cy = 0.0, r0 = 0.0;
    std::vector<int> k;        // harmonic orders
    std::vector<double> amp;   // absolute amplitudes (px)
    std::vector<double> phase;

    double radius_at(double theta) const {
        double r = r0;
        for (size_t i = 0; i < k.size(); ++i)
            r += amp[i] * std::cos(k[i] * theta + phase[i]);
        return r;
    }

    double max_radius() const {
        double a = 0.0;
        for (double v : amp) a += v;
        return r0 + a;
    }

    bool contains(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double d2 = dx * dx + dy * dy;
        const double rmax = max_radius();
        if (d2 > rmax * rmax) return false;
        const double r = radius_at(std::atan2(dy, dx));
        return d2 <= r * r;
    }
};

Blob draw_blob(Rng& rng, const SceneSpec& spec) {
    Blob b;
    b.r0 = rng.uniform(spec.radius_min, spec.radius_max);
    const int nh = rng.uniform_int(3, 6);
    std::vector<double> raw(static_cast<size_t>(nh));
    double total = 0.0;
    for (double& v : raw) {
        v = rng.uniform(0.3, 1.0);
        total += v;
    }
    const double budget = spec.perturb_amplitude * b.r0 * rng.uniform(0.6, 1.0);
    for (int i = 0; i < nh; ++i) {
        b.k.push_back(i + 2);
        b.amp.push_back(raw[static_cast<size_t>(i)] / total * budget);
        b.phase.push_back(rng.uniform(0.0, 2.0 * M_PI));
    }
    return b;
}

struct Layout {
    std::vector<Blob> blobs;
    std::vector<std::pair<int, int>> intended_touching;
};

// One placement attempt; empty optional-style failure signalled by ok=false.
bool place_blobs(Rng& rng, const SceneSpec& spec, int n_cells, Layout& out) {
    out.blobs.clear();
    out.intended_touching.clear();
    const double s = static_cast<double>(spec.image_size);
    for (int i = 0; i < n_cells; ++i) {
        Blob b = draw_blob(rng, spec);
        const double margin = b.max_radius() + 2.0;
        if (2.0 * margin >= s) return false;

        bool placed = false;
        for (int attempt = 0; attempt < 40 && !placed; ++attempt) {
            const bool want_touch = i > 0 && rng.bernoulli(spec.touch_probability);
            int partner = -1;
            if (want_touch) {
                partner = rng.uniform_int(0, i - 1);
                const Blob& p = out.blobs[static_cast<size_t>(partner)];
                const double dist = rng.uniform(spec.spacing_min, spec.spacing_max) * (p.r0 + b.r0);
                const double ang = rng.uniform(0.0, 2.0 * M_PI);
                b.cx = p.cx + dist * std::cos(ang);
                b.cy = p.cy + dist * std::sin(ang);
            } else {
                b.cx = rng.uniform(margin, s - margin);
                b.cy = rng.uniform(margin, s - margin);
            }
            if (b.cx < margin || b.cx > s - margin || b.cy < margin || b.cy > s - margin)
                continue;
            bool ok = true;
            for (int j = 0; j < i && ok; ++j) {
                if (j == partner) continue;
                const Blob& q = out.blobs[static_cast<size_t>(j)];
                const double dx = b.cx - q.cx, dy = b.cy - q.cy;
                const double d = std::sqrt(dx * dx + dy * dy);
                // non-partners stay clearly separated
                if (d < 1.05 * (b.max_radius() + q.max_radius()) + 1.0) ok = false;
            }
            if (!ok) continue;
            placed = true;
            if (want_touch) out.intended_touching.push_back({partner, i});
        }
        if (!placed) return false;
        out.blobs.push_back(b);
    }
    return true;
}

LabeledMask rasterize_instances(const Layout& layout, int size) {
    LabeledMask m(size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            int best = 0;
            double best_d2 = 0.0;
            for (size_t i = 0; i < layout.blobs.size(); ++i) {
                const Blob& b = layout.blobs[i];
                if (!b.contains(px, py)) continue;
                const double dx = px - b.cx, dy = py - b.cy;
                const double d2 = dx * dx + dy * dy;
                // overlaps split at the centroid bisector; earlier cell wins ties
                if (best == 0 || d2 < best_d2) {
                    best = static_cast<int>(i) + 1;
                    best_d2 = d2;
                }
            }
            m.at(y, x) = best;
        }
    return m;
}

bool layout_valid(const SceneSpec& spec, const Layout& layout, const LabeledMask& mask) {
    const double floor_area =
        0.5 * M_PI * std::pow(spec.radius_min * (1.0 - spec.perturb_amplitude), 2.0);
    std::vector<long> areas = mask.areas();
    if (static_cast<int>(areas.size()) != static_cast<int>(layout.blobs.size())) return false;
    for (long a : areas)
        if (static_cast<double>(a) < floor_area) return false;
    for (auto [a, b] : layout.intended_touching)
        if (!mask.touching(a + 1, b + 1)) return false;
    return true;
}

} // namespace

void validate(const SceneSpec& spec) {
    if (spec.image_size < 16) throw ConfigError("scene image_size must be >= 16");
    if (spec.cell_count_min < 0 || spec.cell_count_max < spec.cell_count_min)
        throw ConfigError("scene cell count range is invalid");
    if (spec.radius_min < 3.0) throw ConfigError("scene radius_min must be >= 3 px");
    if (spec.radius_max < spec.radius_min) throw ConfigError("scene radius range is invalid");
    if (spec.perturb_amplitude < 0.0 || spec.perturb_amplitude >= 0.8)
        throw ConfigError("scene perturb_amplitude must lie in [0, 0.8)");
    if (!(spec.spacing_min > 0.0 && spec.spacing_min <= spec.spacing_max && spec.spacing_max < 1.0))
        throw ConfigError("scene spacing fractions must satisfy 0 < min <= max < 1");
    if (spec.touch_probability < 0.0 || spec.touch_probability > 1.0)
        throw ConfigError("scene touch_probability must lie in [0,1]");
    if (spec.contrast_gap <= spec.noise_sigma)
        throw ConfigError("scene contrast_gap must exceed noise_sigma");
    if (spec.noise_sigma < 0.0) throw ConfigError("scene noise_sigma must be >= 0");
    if (spec.edge_sigma <= 0.0) throw ConfigError("scene edge_sigma must be positive");
}

Scene generate(const SceneSpec& spec) {
    validate(spec);
    Rng rng(spec.seed);
    const int s = spec.image_size;
    const int n_cells = spec.cell_count_max == spec.cell_count_min
                            ? spec.cell_count_min
                            : rng.uniform_int(spec.cell_count_min, spec.cell_count_max);

    Layout layout;
    LabeledMask instances(s, s);
    bool done = n_cells == 0;
    for (int attempt = 0; attempt < 50 && !done; ++attempt) {
        if (!place_blobs(rng, spec, n_cells, layout)) continue;
        instances = rasterize_instances(layout, s);
        done = layout_valid(spec, layout, instances);
    }
    if (!done) throw DataError("synthdata: infeasible packing after bounded retries");

    Scene scene;
    scene.instances = instances;
    scene.region_gt = TensorGrid({1, s, s}, 0.0);
    for (size_t i = 0; i < instances.labels.size(); ++i)
        scene.region_gt[static_cast<int>(i)] = instances.labels[i] > 0 ? 1.0 : 0.0;
    scene.edge_gt = edge_supervision(instances, spec.edge_sigma, spec.edge_saturation);

    // background + illumination ramp + bright cells + dark halo rim, blurred
    Grid img(s, s, 0.35);
    const double ramp_dir = rng.uniform(0.0, 2.0 * M_PI);
    const double rx = std::cos(ramp_dir), ry = std::sin(ramp_dir);
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            double v = img.at(y, x);
            v += 2.0 * spec.illumination_amplitude *
                 ((x + 0.5) / s - 0.5) * rx + 2.0 * spec.illumination_amplitude *
                 ((y + 0.5) / s - 0.5) * ry;
            if (instances.at(y, x) > 0) v += spec.contrast_gap;
            img.at(y, x) = v;
        }
    // halo: distance from background pixels to the nearest cell pixel
    std::vector<uint8_t> background(instances.labels.size());
    for (size_t i = 0; i < background.size(); ++i) background[i] = instances.labels[i] > 0 ? 0 : 1;
    std::vector<double> d2 = squared_edt(background, s, s);
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            if (instances.at(y, x) > 0) continue;
            const double d = std::sqrt(d2[static_cast<size_t>(y) * s + x]);
            img.at(y, x) -= spec.halo_amplitude * std::exp(-0.5 * std::pow((d - 1.0) / 1.2, 2.0));
        }
    img = gaussian_blur(img, 0.7);

    scene.image = TensorGrid({1, s, s}, 0.0);
    for (int i = 0; i < scene.image.size(); ++i)
        scene.image[i] = std::clamp(img.v[static_cast<size_t>(i)] + rng.normal(0.0, spec.noise_sigma),
                                    0.0, 1.0);
    return scene;
}

} // namespace cellseg
