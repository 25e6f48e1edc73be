#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cellseg/labeled_mask.hpp"
#include "cellseg/tensorgrid.hpp"

namespace cellseg {

// Single-channel raster with 8- or 16-bit samples (PGM binary container).
struct Raster {
    int width = 0;
    int height = 0;
    int maxval = 65535; // 255 selects 1-byte samples
    std::vector<uint16_t> pixels;
};

void write_pgm(const std::string& path, const Raster& r);
Raster read_pgm(const std::string& path);

// 8-bit RGB raster (PPM binary container).
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> pixels; // r,g,b interleaved
};

void write_ppm(const std::string& path, const RgbImage& img);

// Fixed quantization 65535 = 1.0 for probability maps and images.
uint16_t quantize16(double v);
double dequantize16(uint16_t v);

// [1,H,W] tensor in [0,1] <-> 16-bit raster.
Raster to_raster16(const TensorGrid& map);
TensorGrid from_raster16(const Raster& r);

// Instance labels stored as raw 16-bit values.
Raster labels_to_raster(const LabeledMask& mask);
LabeledMask raster_to_labels(const Raster& r);

} // namespace cellseg
