#include "cellseg/network.hpp"

#include <cmath>

#include "cellseg/errors.hpp"
#include "cellseg/rng.hpp"

namespace cellseg {

namespace {

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

int channels_at(const NetConfig& cfg, int level) {
    return cfg.base_channels << level;
}

// Number of region-branch feature taps shared with the edge branch.
int tap_count(const NetConfig& cfg) { return std::min(2, cfg.depth) + 1; }

double maybe_f32(double v, ParamPrecision p) {
    return p == ParamPrecision::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

struct LayerSpec {
    std::string path;
    int cin = 0;
    int cout = 0;
};

// The block layout of one branch, in path order of construction.
void enumerate_branch(const NetConfig& cfg, const std::string& branch, int input_channels,
                      std::vector<LayerSpec>& out) {
    const int d = cfg.depth;
    for (int i = 0; i < d; ++i) {
        const int c = channels_at(cfg, i);
        const int cin = i == 0 ? input_channels : channels_at(cfg, i - 1);
        out.push_back({branch + "/enc" + std::to_string(i) + "/conv1", cin, c});
        out.push_back({branch + "/enc" + std::to_string(i) + "/conv2", c, c});
    }
    const int cb = channels_at(cfg, d);
    out.push_back({branch + "/bott/conv1", channels_at(cfg, d - 1), cb});
    out.push_back({branch + "/bott/conv2", cb, cb});
    for (int i = d - 1; i >= 0; --i) {
        const int c = channels_at(cfg, i);
        out.push_back({branch + "/dec" + std::to_string(i) + "/up", channels_at(cfg, i + 1), c});
        out.push_back({branch + "/dec" + std::to_string(i) + "/conv1", 2 * c, c});
        out.push_back({branch + "/dec" + std::to_string(i) + "/conv2", c, c});
    }
    out.push_back({branch + "/head", cfg.base_channels, 1});
}

std::vector<LayerSpec> enumerate_layers(const NetConfig& cfg) {
    std::vector<LayerSpec> specs;
    enumerate_branch(cfg, "region", 1, specs);
    enumerate_branch(cfg, "edge", edge_input_channels(cfg), specs);
    return specs;
}

} // namespace

void validate(const NetConfig& cfg) {
    if (cfg.depth < 1) throw ConfigError("net depth must be >= 1");
    if (cfg.base_channels < 1) throw ConfigError("net base_channels must be >= 1");
    if (!is_power_of_two(cfg.input_size))
        throw ConfigError("net input_size must be a power of two");
    if (cfg.input_size % (1 << cfg.depth) != 0 || cfg.input_size < (1 << cfg.depth))
        throw ConfigError("net input_size must be divisible by 2^depth");
}

int edge_input_channels(const NetConfig& cfg) {
    int c = 1 + cfg.base_channels; // image + last region decoder block
    for (int i = 0; i < std::min(2, cfg.depth); ++i) c += channels_at(cfg, i);
    return c;
}

const ConvLayer& ModelParams::at(const std::string& path) const {
    auto it = layers.find(path);
    if (it == layers.end()) throw ConfigError("unknown layer path: " + path);
    return it->second;
}

ConvLayer& ModelParams::at(const std::string& path) {
    auto it = layers.find(path);
    if (it == layers.end()) throw ConfigError("unknown layer path: " + path);
    return it->second;
}

long ModelParams::parameter_count() const {
    long n = 0;
    for (const auto& [path, layer] : layers) n += layer.kernel.size() + layer.bias.size();
    return n;
}

long expected_parameter_count(const NetConfig& cfg) {
    long n = 0;
    for (const LayerSpec& s : enumerate_layers(cfg))
        n += 9L * s.cin * s.cout + s.cout;
    return n;
}

ModelParams build_network(const NetConfig& cfg, uint64_t seed) {
    validate(cfg);
    ModelParams params;
    params.config = cfg;
    for (const LayerSpec& s : enumerate_layers(cfg))
        params.layers.emplace(s.path, ConvLayer{TensorGrid({s.cout, s.cin, 3, 3}),
                                                TensorGrid({s.cout})});
    // Draw in map (path) order so the stream is independent of construction order.
    Rng rng(seed);
    for (auto& [path, layer] : params.layers) {
        const int fan_in = layer.kernel.extent(1) * 9;
        const double stddev = std::sqrt(2.0 / fan_in);
        for (int i = 0; i < layer.kernel.size(); ++i)
            layer.kernel[i] = maybe_f32(rng.normal(0.0, stddev), cfg.precision);
        // biases stay zero
    }
    return params;
}

namespace {

TensorGrid conv_block(const ModelParams& p, const std::string& base, const TensorGrid& x) {
    const ConvLayer& c1 = p.at(base + "/conv1");
    const ConvLayer& c2 = p.at(base + "/conv2");
    TensorGrid h = relu(conv2d(x, c1.kernel, c1.bias));
    return relu(conv2d(h, c2.kernel, c2.bias));
}

struct BranchResult {
    TensorGrid prediction;
    std::vector<TensorGrid> taps; // enc0, enc1 (native resolution), last dec
};

BranchResult run_branch(const ModelParams& p, const std::string& branch,
                        const TensorGrid& input) {
    const int d = p.config.depth;
    std::vector<TensorGrid> skips;
    BranchResult r;
    TensorGrid x = input;
    for (int i = 0; i < d; ++i) {
        x = conv_block(p, branch + "/enc" + std::to_string(i), x);
        skips.push_back(x);
        if (i < 2) r.taps.push_back(x);
        x = maxpool2(x);
    }
    x = conv_block(p, branch + "/bott", x);
    for (int i = d - 1; i >= 0; --i) {
        const ConvLayer& up = p.at(branch + "/dec" + std::to_string(i) + "/up");
        x = relu(conv2d(upsample2(x), up.kernel, up.bias));
        x = concat_channels(skips[static_cast<size_t>(i)], x);
        x = conv_block(p, branch + "/dec" + std::to_string(i), x);
    }
    r.taps.push_back(x);
    const ConvLayer& head = p.at(branch + "/head");
    r.prediction = sigmoid(conv2d(x, head.kernel, head.bias));
    return r;
}

} // namespace

ForwardMaps net_forward(const ModelParams& params, const TensorGrid& image) {
    validate(params.config);
    const int s = params.config.input_size;
    if (image.rank() != 3 || image.extent(0) != 1 || image.extent(1) != s || image.extent(2) != s)
        throw DimensionError("net_forward: image must be [1,S,S] with S = config.input_size");

    BranchResult region = run_branch(params, "region", image);

    TensorGrid shared = image;
    for (TensorGrid tap : region.taps) {
        while (tap.extent(1) < s) tap = upsample2(tap);
        shared = concat_channels(shared, tap);
    }
    BranchResult edge = run_branch(params, "edge", shared);

    return {region.prediction, edge.prediction};
}

} // namespace cellseg
