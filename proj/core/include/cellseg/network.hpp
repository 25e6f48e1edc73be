#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "cellseg/tensorgrid.hpp"

namespace cellseg {

// At-rest precision of learnable values. Arithmetic is always double; f32
// keeps parameters and optimizer moments on the float grid so checkpoints
// (stored as 32-bit floats) round-trip bit-exactly.
enum class ParamPrecision { f32, f64 };

struct NetConfig {
    int depth = 3;          // down/up levels per branch
    int base_channels = 8;  // channels at full resolution
    int input_size = 64;    // H = W, power of two, divisible by 2^depth
    ParamPrecision precision = ParamPrecision::f32;
};

// Throws ConfigError when the invariants do not hold.
void validate(const NetConfig& cfg);

struct ConvLayer {
    TensorGrid kernel; // [Cout,Cin,3,3]
    TensorGrid bias;   // [Cout]
};

// All learnable weights of both sub-networks, addressable by layer path
// (e.g. "region/enc0/conv1", "edge/dec2/up", "region/head"). Map order is the
// canonical iteration order for initialization, updates and serialization.
struct ModelParams {
    NetConfig config;
    std::map<std::string, ConvLayer> layers;

    const ConvLayer& at(const std::string& path) const;
    ConvLayer& at(const std::string& path);
    long parameter_count() const;
};

// Deterministic He fan-in initialization; biases zero.
ModelParams build_network(const NetConfig& cfg, uint64_t seed);

// Closed-form parameter count for a config (no allocation).
long expected_parameter_count(const NetConfig& cfg);

// Channel count fed to the edge branch: the image plus the region branch's
// shared feature taps (first two encoder blocks and the last decoder block).
int edge_input_channels(const NetConfig& cfg);

struct ForwardMaps {
    TensorGrid region; // f_r in (0,1), [1,H,W]
    TensorGrid edge;   // f_e in (0,1), [1,H,W]
};

// Full forward pass. The image must be [1,S,S] with S = config.input_size.
// Tracked parameter tensors record the pass on their tape.
ForwardMaps net_forward(const ModelParams& params, const TensorGrid& image);

} // namespace cellseg
