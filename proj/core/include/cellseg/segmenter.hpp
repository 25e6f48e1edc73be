#pragma once

#include <vector>

#include "cellseg/labeled_mask.hpp"
#include "cellseg/tensorgrid.hpp"

namespace cellseg {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

struct SegmenterParams {
    // seed detection
    double threshold = 0.5;
    int erosion_radius = 2;
    int min_seed_area = 10;
    double peak_separation = 5.0;  // px between distance-transform peaks
    double peak_saddle_ratio = 0.7; // split only when the valley between two
                                    // peaks drops below this fraction of the
                                    // shallower peak

    // contour evolution
    double step = 0.4;             // px per iteration along the outward normal
    double curvature_weight = 0.2;
    double spacing = 2.0;          // resample spacing h (px)
    double stop_threshold = 0.1;   // freeze when the force falls below this
    double d_min = 2.0;            // coupling distance to other contours
    double tol = 0.05;             // convergence displacement (px)
    int window = 10;               // consecutive quiet iterations to converge
    int max_iterations = 500;

    // rasterization
    int min_cell_area = 30; // px at 64x64; scale with image area

    // segment() re-seeds the still-unclaimed region this many extra times;
    // cells whose seed was fused away (smooth region maps hide the neck)
    // get their contour on a later round, with the frozen earlier contours
    // acting as coupling partners.
    int seed_rounds = 3;
};

// One cell initialization: centre and starting circle radius.
struct Seed {
    double cx = 0.0;
    double cy = 0.0;
    double radius = 0.0;
};

// Closed polyline (counter-clockwise by signed area) evolving under the
// balloon force. Vertices are sub-pixel, in pixel-centre coordinates
// (pixel (row r, col c) has centre (c + 0.5, r + 0.5)).
struct Contour {
    std::vector<Vec2> verts;
    bool converged = false;
    int age = 0; // iterations lived

    double signed_area() const;
    Vec2 centroid() const;
    bool is_simple() const;
};

Contour make_circle(const Seed& seed, double spacing);

// Balloon force F_s = f_r * (1 - f_e) with a clamped bilinear sampler.
struct ForceField {
    int width = 0;
    int height = 0;
    std::vector<double> f;

    static ForceField from_maps(const TensorGrid& f_r, const TensorGrid& f_e);
    double sample(double x, double y) const;
};

// Threshold -> erosion -> components -> distance-transform peak splitting.
// Returns one seed per detected cell; the empty list is valid.
std::vector<Seed> detect_seeds(const TensorGrid& region_map, const SegmenterParams& p);

// Coupled evolution of all contours of one image under a single coordinator:
// vertices move outward by step * F_s plus curvature smoothing, freeze below
// stop_threshold or within d_min of another contour, and a contour converges
// when its displacement stays under tol for `window` iterations. Contours
// still moving at the iteration cap come back with converged == false.
// area_trace, when given, records every contour's enclosed area per iteration.
std::vector<Contour> evolve(std::vector<Contour> contours, const ForceField& field,
                            const SegmenterParams& p,
                            std::vector<std::vector<double>>* area_trace = nullptr);

// Even-odd scanline fill at pixel centres; overlapping claims go to the
// contour with the nearer centroid; components below min_cell_area drop and
// labels renumber 1..K.
LabeledMask rasterize(const std::vector<Contour>& contours, int width, int height,
                      int min_cell_area);

// detect_seeds -> initial circles -> evolve -> rasterize.
LabeledMask segment(const TensorGrid& f_r, const TensorGrid& f_e, const SegmenterParams& p);

} // namespace cellseg
