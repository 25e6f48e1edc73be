#include "cellseg/segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>

#include "cellseg/errors.hpp"
#include "cellseg/imageproc.hpp"

namespace cellseg {

namespace {

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline double norm(Vec2 a) { return std::sqrt(a.x * a.x + a.y * a.y); }

double point_segment_dist(Vec2 p, Vec2 a, Vec2 b) {
    const Vec2 ab = b - a;
    const double len2 = ab.x * ab.x + ab.y * ab.y;
    if (len2 <= 0.0) return norm(p - a);
    double t = ((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2;
    t = std::clamp(t, 0.0, 1.0);
    return norm(p - (a + t * ab));
}

int orient(Vec2 a, Vec2 b, Vec2 c) {
    const double v = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    if (v > 1e-12) return 1;
    if (v < -1e-12) return -1;
    return 0;
}

bool on_segment(Vec2 a, Vec2 b, Vec2 p) {
    return std::min(a.x, b.x) - 1e-12 <= p.x && p.x <= std::max(a.x, b.x) + 1e-12 &&
           std::min(a.y, b.y) - 1e-12 <= p.y && p.y <= std::max(a.y, b.y) + 1e-12;
}

bool segments_intersect(Vec2 a, Vec2 b, Vec2 c, Vec2 d) {
    const int o1 = orient(a, b, c), o2 = orient(a, b, d);
    const int o3 = orient(c, d, a), o4 = orient(c, d, b);
    if (o1 != o2 && o3 != o4) return true;
    if (o1 == 0 && on_segment(a, b, c)) return true;
    if (o2 == 0 && on_segment(a, b, d)) return true;
    if (o3 == 0 && on_segment(c, d, a)) return true;
    if (o4 == 0 && on_segment(c, d, b)) return true;
    return false;
}

// Resample a closed polyline to (near) uniform arc length `h`.
std::vector<Vec2> resample_closed(const std::vector<Vec2>& verts, double h) {
    const size_t n = verts.size();
    std::vector<double> seg(n);
    double perimeter = 0.0;
    for (size_t i = 0; i < n; ++i) {
        seg[i] = norm(verts[(i + 1) % n] - verts[i]);
        perimeter += seg[i];
    }
    if (perimeter <= 0.0) return verts;
    const int m = std::max(8, static_cast<int>(std::lround(perimeter / h)));
    std::vector<Vec2> out;
    out.reserve(static_cast<size_t>(m));
    const double stride = perimeter / m;
    size_t edge = 0;
    double into = 0.0;
    for (int i = 0; i < m; ++i) {
        const double target = i * stride;
        while (into + seg[edge] < target && edge + 1 < n) {
            into += seg[edge];
            ++edge;
        }
        const double t = seg[edge] > 0.0 ? (target - into) / seg[edge] : 0.0;
        out.push_back(verts[edge] + std::clamp(t, 0.0, 1.0) * (verts[(edge + 1) % n] - verts[edge]));
    }
    return out;
}

struct Bbox {
    double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
};

Bbox bbox_of(const std::vector<Vec2>& verts) {
    Bbox b{1e300, 1e300, -1e300, -1e300};
    for (const Vec2& v : verts) {
        b.x0 = std::min(b.x0, v.x);
        b.y0 = std::min(b.y0, v.y);
        b.x1 = std::max(b.x1, v.x);
        b.y1 = std::max(b.y1, v.y);
    }
    return b;
}

double bbox_point_gap(const Bbox& b, Vec2 p) {
    const double dx = std::max({b.x0 - p.x, 0.0, p.x - b.x1});
    const double dy = std::max({b.y0 - p.y, 0.0, p.y - b.y1});
    return std::sqrt(dx * dx + dy * dy);
}

double dist_to_polyline(Vec2 p, const std::vector<Vec2>& verts) {
    double best = std::numeric_limits<double>::infinity();
    const size_t n = verts.size();
    for (size_t i = 0; i < n; ++i)
        best = std::min(best, point_segment_dist(p, verts[i], verts[(i + 1) % n]));
    return best;
}

} // namespace

double Contour::signed_area() const {
    double a = 0.0;
    const size_t n = verts.size();
    for (size_t i = 0; i < n; ++i) {
        const Vec2& p = verts[i];
        const Vec2& q = verts[(i + 1) % n];
        a += p.x * q.y - q.x * p.y;
    }
    return 0.5 * a;
}

Vec2 Contour::centroid() const {
    const double a = signed_area();
    const size_t n = verts.size();
    if (std::fabs(a) < 1e-9) { // degenerate: fall back to the vertex mean
        Vec2 m{0.0, 0.0};
        for (const Vec2& v : verts) m = m + v;
        return (1.0 / static_cast<double>(n)) * m;
    }
    double cx = 0.0, cy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const Vec2& p = verts[i];
        const Vec2& q = verts[(i + 1) % n];
        const double cross = p.x * q.y - q.x * p.y;
        cx += (p.x + q.x) * cross;
        cy += (p.y + q.y) * cross;
    }
    return {cx / (6.0 * a), cy / (6.0 * a)};
}

bool Contour::is_simple() const {
    const size_t n = verts.size();
    if (n < 3) return false;
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i + 1; j < n; ++j) {
            // skip adjacent segments (they share an endpoint)
            if (j == i + 1 || (i == 0 && j == n - 1)) continue;
            if (segments_intersect(verts[i], verts[(i + 1) % n], verts[j], verts[(j + 1) % n]))
                return false;
        }
    }
    return true;
}

Contour make_circle(const Seed& seed, double spacing) {
    const double r = std::max(seed.radius, 0.5);
    const int n = std::max(8, static_cast<int>(std::lround(2.0 * M_PI * r / spacing)));
    Contour c;
    c.verts.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double t = 2.0 * M_PI * i / n;
        c.verts.push_back({seed.cx + r * std::cos(t), seed.cy + r * std::sin(t)});
    }
    return c;
}

ForceField ForceField::from_maps(const TensorGrid& f_r, const TensorGrid& f_e) {
    if (f_r.shape() != f_e.shape() || f_r.rank() != 3 || f_r.extent(0) != 1)
        throw DimensionError("ForceField: maps must both be [1,H,W]");
    ForceField field;
    field.height = f_r.extent(1);
    field.width = f_r.extent(2);
    field.f.resize(static_cast<size_t>(f_r.size()));
    for (int i = 0; i < f_r.size(); ++i)
        field.f[static_cast<size_t>(i)] = f_r[i] * (1.0 - f_e[i]);
    return field;
}

double ForceField::sample(double x, double y) const {
    // grid values live at pixel centres (c + 0.5, r + 0.5)
    const double u = std::clamp(x - 0.5, 0.0, static_cast<double>(width - 1));
    const double v = std::clamp(y - 0.5, 0.0, static_cast<double>(height - 1));
    const int x0 = std::min(static_cast<int>(u), width - 2 >= 0 ? width - 2 : 0);
    const int y0 = std::min(static_cast<int>(v), height - 2 >= 0 ? height - 2 : 0);
    const double fx = u - x0, fy = v - y0;
    const auto at = [&](int r, int c) { return f[static_cast<size_t>(r) * width + c]; };
    const int x1 = std::min(x0 + 1, width - 1), y1 = std::min(y0 + 1, height - 1);
    return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
           fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
}

std::vector<Seed> detect_seeds(const TensorGrid& region_map, const SegmenterParams& p) {
    if (region_map.rank() != 3 || region_map.extent(0) != 1)
        throw DimensionError("detect_seeds: region map must be [1,H,W]");
    const int h = region_map.extent(1), w = region_map.extent(2);

    std::vector<uint8_t> binary(static_cast<size_t>(region_map.size()));
    for (int i = 0; i < region_map.size(); ++i)
        binary[static_cast<size_t>(i)] = region_map[i] >= p.threshold ? 1 : 0;
    const std::vector<uint8_t> eroded = erode_disk(binary, w, h, p.erosion_radius);

    std::vector<int> labels;
    const int ncomp = connected_components(eroded, w, h, labels);
    if (ncomp == 0) return {};

    const std::vector<double> d2 = squared_edt(eroded, w, h);

    std::vector<Seed> seeds;
    for (int comp = 1; comp <= ncomp; ++comp) {
        std::vector<int> pixels;
        for (size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == comp) pixels.push_back(static_cast<int>(i));
        if (static_cast<int>(pixels.size()) < p.min_seed_area) continue;

        // local maxima of the distance transform within the component
        std::vector<int> candidates;
        for (int idx : pixels) {
            const int y = idx / w, x = idx % w;
            const double v = d2[static_cast<size_t>(idx)];
            bool peak = true;
            for (int dy = -1; dy <= 1 && peak; ++dy)
                for (int dx = -1; dx <= 1 && peak; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                    if (d2[static_cast<size_t>(yy) * w + xx] > v) peak = false;
                }
            if (peak) candidates.push_back(idx);
        }
        std::sort(candidates.begin(), candidates.end(), [&](int a, int b) {
            if (d2[static_cast<size_t>(a)] != d2[static_cast<size_t>(b)])
                return d2[static_cast<size_t>(a)] > d2[static_cast<size_t>(b)];
            return a < b;
        });
        // Euclidean distance (not squared) along the straight line between two
        // pixels; the minimum estimates the saddle depth between peaks.
        const auto line_saddle = [&](int a, int b) {
            const double ax = a % w + 0.5, ay = a / w + 0.5;
            const double bx = b % w + 0.5, by = b / w + 0.5;
            const double len = std::hypot(bx - ax, by - ay);
            const int steps = std::max(1, static_cast<int>(std::ceil(len / 0.5)));
            double saddle = std::numeric_limits<double>::infinity();
            for (int s = 0; s <= steps; ++s) {
                const double t = static_cast<double>(s) / steps;
                const int xx = std::clamp(static_cast<int>(ax + t * (bx - ax)), 0, w - 1);
                const int yy = std::clamp(static_cast<int>(ay + t * (by - ay)), 0, h - 1);
                saddle = std::min(saddle, std::sqrt(d2[static_cast<size_t>(yy) * w + xx]));
            }
            return saddle;
        };

        // Greedy suppression: peaks too close to an accepted one, or connected
        // to it by a deep ridge, belong to the same cell.
        std::vector<int> peaks;
        for (int idx : candidates) {
            const double y = idx / w + 0.5, x = idx % w + 0.5;
            bool isolated = true;
            for (int q : peaks) {
                const double qy = q / w + 0.5, qx = q % w + 0.5;
                if (std::hypot(x - qx, y - qy) <= p.peak_separation) {
                    isolated = false;
                    break;
                }
                const double depth = std::min(std::sqrt(d2[static_cast<size_t>(idx)]),
                                              std::sqrt(d2[static_cast<size_t>(q)]));
                if (line_saddle(idx, q) > p.peak_saddle_ratio * depth) {
                    isolated = false;
                    break;
                }
            }
            if (isolated) peaks.push_back(idx);
        }

        // one seed per peak: pixels vote for their nearest peak
        const size_t nP = std::max<size_t>(1, peaks.size());
        std::vector<double> sx(nP, 0.0), sy(nP, 0.0), maxd(nP, 0.0);
        std::vector<long> cnt(nP, 0);
        for (int idx : pixels) {
            const double y = idx / w + 0.5, x = idx % w + 0.5;
            size_t best = 0;
            double bestd = std::numeric_limits<double>::infinity();
            for (size_t k = 0; k < peaks.size(); ++k) {
                const double qy = peaks[k] / w + 0.5, qx = peaks[k] % w + 0.5;
                const double d = std::hypot(x - qx, y - qy);
                if (d < bestd) {
                    bestd = d;
                    best = k;
                }
            }
            sx[best] += x;
            sy[best] += y;
            ++cnt[best];
            maxd[best] = std::max(maxd[best], d2[static_cast<size_t>(idx)]);
        }
        for (size_t k = 0; k < nP; ++k) {
            if (cnt[k] == 0) continue;
            seeds.push_back({sx[k] / static_cast<double>(cnt[k]),
                             sy[k] / static_cast<double>(cnt[k]),
                             0.6 * std::sqrt(maxd[k])});
        }
    }
    return seeds;
}

std::vector<Contour> evolve(std::vector<Contour> contours, const ForceField& field,
                            const SegmenterParams& p,
                            std::vector<std::vector<double>>* area_trace) {
    const size_t n = contours.size();
    std::vector<int> quiet(n, 0);
    if (area_trace) {
        area_trace->clear();
        area_trace->resize(n);
    }

    for (int iter = 0; iter < p.max_iterations; ++iter) {
        bool any_active = false;
        for (const Contour& c : contours)
            if (!c.converged) any_active = true;
        if (!any_active) break;

        // simultaneous update: coupling distances read this iteration's start state
        std::vector<std::vector<Vec2>> snapshot;
        std::vector<Bbox> boxes;
        snapshot.reserve(n);
        for (const Contour& c : contours) {
            snapshot.push_back(c.verts);
            boxes.push_back(bbox_of(c.verts));
        }

        for (size_t ci = 0; ci < n; ++ci) {
            Contour& c = contours[ci];
            if (c.converged) {
                if (area_trace) (*area_trace)[ci].push_back(c.signed_area());
                continue;
            }
            const size_t nv = c.verts.size();
            std::vector<Vec2> moved(nv);
            double max_disp = 0.0;
            for (size_t i = 0; i < nv; ++i) {
                const Vec2 pt = c.verts[i];
                const double force = field.sample(pt.x, pt.y);
                bool frozen = force < p.stop_threshold;
                for (size_t cj = 0; cj < n && !frozen; ++cj) {
                    if (cj == ci) continue;
                    if (bbox_point_gap(boxes[cj], pt) >= p.d_min) continue;
                    if (dist_to_polyline(pt, snapshot[cj]) < p.d_min) frozen = true;
                }
                if (frozen) {
                    moved[i] = pt;
                    continue;
                }
                const Vec2 prev = c.verts[(i + nv - 1) % nv];
                const Vec2 next = c.verts[(i + 1) % nv];
                Vec2 tangent = next - prev;
                const double tl = norm(tangent);
                Vec2 outward{0.0, 0.0};
                if (tl > 0.0) outward = {tangent.y / tl, -tangent.x / tl};
                const Vec2 curv = 0.5 * (prev + next) - pt;
                const Vec2 d = p.step * force * outward + p.curvature_weight * curv;
                moved[i] = pt + d;
                max_disp = std::max(max_disp, norm(d));
            }

            if (max_disp > 0.0) {
                Contour candidate;
                candidate.verts = resample_closed(moved, p.spacing);
                if (candidate.is_simple()) {
                    c.verts = std::move(candidate.verts);
                } else {
                    // irreparable after resampling: keep the previous shape
                    c.converged = true;
                }
            }
            quiet[ci] = max_disp < p.tol ? quiet[ci] + 1 : 0;
            if (quiet[ci] >= p.window) c.converged = true;
            ++c.age;
            if (area_trace) (*area_trace)[ci].push_back(c.signed_area());
        }
    }
    return contours;
}

LabeledMask rasterize(const std::vector<Contour>& contours, int width, int height,
                      int min_cell_area) {
    LabeledMask mask(width, height);
    std::vector<double> claim_d2(static_cast<size_t>(width) * height,
                                 std::numeric_limits<double>::infinity());

    int dropped_degenerate = 0;
    for (size_t ci = 0; ci < contours.size(); ++ci) {
        const std::vector<Vec2>& v = contours[ci].verts;
        if (v.size() < 3 || std::fabs(contours[ci].signed_area()) < 1e-9) {
            ++dropped_degenerate;
            continue;
        }
        const Vec2 centroid = contours[ci].centroid();
        const size_t nv = v.size();
        for (int row = 0; row < height; ++row) {
            const double y = row + 0.5;
            std::vector<double> xs;
            for (size_t i = 0; i < nv; ++i) {
                const Vec2& a = v[i];
                const Vec2& b = v[(i + 1) % nv];
                if ((a.y <= y && y < b.y) || (b.y <= y && y < a.y))
                    xs.push_back(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
            }
            std::sort(xs.begin(), xs.end());
            for (size_t k = 0; k + 1 < xs.size(); k += 2) {
                const int c0 = std::max(0, static_cast<int>(std::ceil(xs[k] - 0.5)));
                const int c1 = std::min(width, static_cast<int>(std::ceil(xs[k + 1] - 0.5)));
                for (int col = c0; col < c1; ++col) {
                    const double dx = col + 0.5 - centroid.x, dy = y - centroid.y;
                    const double d2 = dx * dx + dy * dy;
                    const size_t idx = static_cast<size_t>(row) * width + col;
                    // overlapping claims resolve to the nearer centroid
                    if (mask.labels[idx] == 0 || d2 < claim_d2[idx]) {
                        mask.labels[idx] = static_cast<int>(ci) + 1;
                        claim_d2[idx] = d2;
                    }
                }
            }
        }
    }
    if (dropped_degenerate > 0)
        std::clog << "rasterize: dropped " << dropped_degenerate << " degenerate contour(s)\n";

    // drop undersized components, then renumber 1..K in contour order
    std::vector<long> areas(contours.size(), 0);
    for (int l : mask.labels)
        if (l > 0) ++areas[static_cast<size_t>(l - 1)];
    for (int& l : mask.labels)
        if (l > 0 && areas[static_cast<size_t>(l - 1)] < min_cell_area) l = 0;
    mask.compact();
    return mask;
}

LabeledMask segment(const TensorGrid& f_r, const TensorGrid& f_e, const SegmenterParams& p) {
    const ForceField field = ForceField::from_maps(f_r, f_e);

    // Seeds come from the force map, not the raw region map: the edge factor
    // suppresses the seams, so touching cells split into separate components
    // before any distance-transform reasoning.
    TensorGrid force_map({1, f_r.extent(1), f_r.extent(2)}, 0.0);
    for (int i = 0; i < f_r.size(); ++i) force_map[i] = field.f[static_cast<size_t>(i)];

    std::vector<Contour> contours;
    TensorGrid residual = force_map.detached();

    for (int round = 0; round <= p.seed_rounds; ++round) {
        const std::vector<Seed> seeds = detect_seeds(residual, p);
        if (seeds.empty()) break;
        for (const Seed& s : seeds) contours.push_back(make_circle(s, p.spacing));
        contours = evolve(std::move(contours), field, p);
        if (round == p.seed_rounds) break;
        // mask out everything the contours already claimed and look again
        const LabeledMask claimed = rasterize(contours, f_r.extent(2), f_r.extent(1), 0);
        residual = force_map.detached();
        for (size_t i = 0; i < claimed.labels.size(); ++i)
            if (claimed.labels[i] > 0) residual[static_cast<int>(i)] = 0.0;
    }

    int unconverged = 0;
    for (const Contour& c : contours)
        if (!c.converged) ++unconverged;
    if (unconverged > 0)
        std::clog << "segment: " << unconverged << " contour(s) hit the iteration cap\n";
    return rasterize(contours, f_r.extent(2), f_r.extent(1), p.min_cell_area);
}

} // namespace cellseg
