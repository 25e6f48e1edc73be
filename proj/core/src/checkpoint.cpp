#include "cellseg/checkpoint.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "cellseg/errors.hpp"

namespace cellseg {

namespace {

constexpr char kMagic[8] = {'C', 'S', 'E', 'G', 'C', 'K', 'P', '1'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw DataError("checkpoint truncated");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw DataError("checkpoint truncated");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

void put_f32_block(std::ostream& os, const std::vector<double>& values) {
    for (double d : values) {
        const float f = static_cast<float>(d);
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(os, bits);
    }
}

void get_f32_block(std::istream& is, std::vector<double>& out, size_t n) {
    out.resize(n);
    for (size_t i = 0; i < n; ++i) {
        const uint32_t bits = get_u32(is);
        float f;
        std::memcpy(&f, &bits, 4);
        if (!std::isfinite(f)) throw DataError("checkpoint payload contains non-finite value");
        out[i] = static_cast<double>(f);
    }
}

} // namespace

void save_checkpoint(const TrainState& state, const std::string& path) {
    const NetConfig& cfg = state.params.config;
    nlohmann::json header;
    header["net"] = {{"depth", cfg.depth},
                     {"base_channels", cfg.base_channels},
                     {"input_size", cfg.input_size},
                     {"precision", cfg.precision == ParamPrecision::f32 ? "f32" : "f64"}};
    header["trainer"] = {{"epoch", state.epoch},
                         {"step", state.step},
                         {"learning_rate", state.learning_rate},
                         {"lambda", state.weights.lambda},
                         {"adam_t", state.adam.t}};
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& [lpath, layer] : state.params.layers)
        layers.push_back({{"path", lpath},
                          {"kernel_shape", layer.kernel.shape()},
                          {"bias_shape", layer.bias.shape()}});
    header["layers"] = layers;
    const std::string htext = header.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open checkpoint for writing: " + path);
    os.write(kMagic, 8);
    put_u32(os, kVersion);
    put_u64(os, htext.size());
    os.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& [lpath, layer] : state.params.layers) {
        put_f32_block(os, layer.kernel.values());
        put_f32_block(os, layer.bias.values());
        put_f32_block(os, state.adam.m.at(lpath + "/kernel"));
        put_f32_block(os, state.adam.v.at(lpath + "/kernel"));
        put_f32_block(os, state.adam.m.at(lpath + "/bias"));
        put_f32_block(os, state.adam.v.at(lpath + "/bias"));
    }
    os.flush();
    if (!os) throw DataError("checkpoint write failed: " + path);
}

TrainState load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);

    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
        throw DataError("not a checkpoint file (bad magic): " + path);
    const uint32_t version = get_u32(is);
    if (version != kVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version));

    const uint64_t hlen = get_u64(is);
    std::string htext(hlen, '\0');
    if (!is.read(htext.data(), static_cast<std::streamsize>(hlen)))
        throw DataError("checkpoint truncated in header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(htext);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("corrupt checkpoint header: ") + e.what());
    }

    TrainState state;
    try {
        const auto& net = header.at("net");
        state.params.config.depth = net.at("depth").get<int>();
        state.params.config.base_channels = net.at("base_channels").get<int>();
        state.params.config.input_size = net.at("input_size").get<int>();
        state.params.config.precision = net.at("precision").get<std::string>() == "f64"
                                            ? ParamPrecision::f64
                                            : ParamPrecision::f32;
        const auto& tr = header.at("trainer");
        state.epoch = tr.at("epoch").get<int>();
        state.step = tr.at("step").get<long>();
        state.learning_rate = tr.at("learning_rate").get<double>();
        state.weights.lambda = tr.at("lambda").get<double>();
        state.adam.t = tr.at("adam_t").get<long>();

        for (const auto& l : header.at("layers")) {
            const std::string lpath = l.at("path").get<std::string>();
            const std::vector<int> kshape = l.at("kernel_shape").get<std::vector<int>>();
            const std::vector<int> bshape = l.at("bias_shape").get<std::vector<int>>();
            ConvLayer layer{TensorGrid(kshape), TensorGrid(bshape)};
            get_f32_block(is, layer.kernel.values(), static_cast<size_t>(layer.kernel.size()));
            get_f32_block(is, layer.bias.values(), static_cast<size_t>(layer.bias.size()));
            get_f32_block(is, state.adam.m[lpath + "/kernel"], static_cast<size_t>(layer.kernel.size()));
            get_f32_block(is, state.adam.v[lpath + "/kernel"], static_cast<size_t>(layer.kernel.size()));
            get_f32_block(is, state.adam.m[lpath + "/bias"], static_cast<size_t>(layer.bias.size()));
            get_f32_block(is, state.adam.v[lpath + "/bias"], static_cast<size_t>(layer.bias.size()));
            state.params.layers.emplace(lpath, std::move(layer));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("corrupt checkpoint header: ") + e.what());
    }

    is.peek();
    if (!is.eof()) throw DataError("checkpoint has trailing bytes: " + path);

    // The layer set must match what the config implies.
    if (state.params.parameter_count() != expected_parameter_count(state.params.config))
        throw DataError("checkpoint layer payload inconsistent with its config");
    return state;
}

void require_config_match(const NetConfig& checkpoint_cfg, const NetConfig& expected) {
    if (checkpoint_cfg.depth != expected.depth ||
        checkpoint_cfg.base_channels != expected.base_channels ||
        checkpoint_cfg.input_size != expected.input_size)
        throw ConfigError("checkpoint network config does not match the expected config");
}

} // namespace cellseg
