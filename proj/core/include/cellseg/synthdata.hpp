#pragma once

#include <cstdint>

#include "cellseg/labeled_mask.hpp"
#include "cellseg/tensorgrid.hpp"

namespace cellseg {

// Brightfield-like clustered-blob scene description. Cells are star-convex
// radial-Fourier blobs; touching pairs are forced with the given probability
// by sampling the centroid spacing below the radius sum, and overlaps resolve
// at the bisector so instances touch but never share pixels.
struct SceneSpec {
    int image_size = 64;
    int cell_count_min = 2;
    int cell_count_max = 5;
    double radius_min = 6.0;  // px, >= 3
    double radius_max = 11.0;
    double perturb_amplitude = 0.22; // boundary perturbation, fraction of radius
    double spacing_min = 0.72; // touching-pair centroid spacing / (r_i + r_j)
    double spacing_max = 0.88;
    double touch_probability = 0.5;
    double contrast_gap = 0.30;  // foreground minus background level
    double illumination_amplitude = 0.08;
    double halo_amplitude = 0.12; // dark rim outside the cell boundary
    double noise_sigma = 0.03;
    double edge_sigma = 0.4;      // edge ground truth
    double edge_saturation = 0.7;
    uint64_t seed = 1;
};

void validate(const SceneSpec& spec);

struct Scene {
    TensorGrid image;     // [1,S,S] in [0,1]
    TensorGrid region_gt; // binary union of instances
    TensorGrid edge_gt;   // per-instance edge supervision
    LabeledMask instances;
};

// Deterministic in spec.seed. Throws DataError when packing keeps failing
// after bounded retries.
Scene generate(const SceneSpec& spec);

} // namespace cellseg
