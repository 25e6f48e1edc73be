#include "cellseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cellseg/errors.hpp"
#include "cellseg/imageproc.hpp"

namespace cellseg {

namespace {

double round_precision(double v, ParamPrecision p) {
    return p == ParamPrecision::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

Grid to_grid(const TensorGrid& t) {
    Grid g(t.extent(2), t.extent(1));
    std::copy(t.values().begin(), t.values().end(), g.v.begin());
    return g;
}

} // namespace

void validate(const TrainConfig& cfg) {
    if (cfg.epochs < 0) throw ConfigError("train epochs must be >= 0");
    if (cfg.batch_size < 1) throw ConfigError("train batch_size must be >= 1");
    if (cfg.learning_rate < 0.0) throw ConfigError("train learning_rate must be >= 0");
    if (cfg.lr_decay <= 0.0 || cfg.lr_decay > 1.0) throw ConfigError("train lr_decay must lie in (0,1]");
    if (cfg.edge_sigma <= 0.0) throw ConfigError("train edge_sigma must be positive");
    if (cfg.lambda_ema < 0.0 || cfg.lambda_ema > 1.0) throw ConfigError("train lambda_ema must lie in [0,1]");
    if (cfg.edge_saturation <= 0.0 || cfg.edge_saturation > 1.0)
        throw ConfigError("train edge_saturation must lie in (0,1]");
    if (cfg.dice_epsilon <= 0.0) throw ConfigError("train dice_epsilon must be positive");
}

TensorGrid edge_groundtruth(const TensorGrid& mask, double sigma, double saturation) {
    if (mask.rank() != 3 || mask.extent(0) != 1)
        throw DimensionError("edge_groundtruth: mask must be [1,H,W]");
    if (sigma <= 0.0) throw std::invalid_argument("edge_groundtruth: sigma must be positive");
    if (saturation <= 0.0 || saturation > 1.0)
        throw std::invalid_argument("edge_groundtruth: saturation must lie in (0,1]");
    for (int i = 0; i < mask.size(); ++i)
        if (mask[i] != 0.0 && mask[i] != 1.0)
            throw std::invalid_argument("edge_groundtruth: mask must be binary");

    Grid mag = gradient_magnitude(gaussian_blur(to_grid(mask), sigma));
    const double peak = *std::max_element(mag.v.begin(), mag.v.end());
    TensorGrid out(mask.shape(), 0.0);
    if (peak <= 0.0) return out; // constant mask, no edges
    const double scale = 1.0 / (saturation * peak);
    for (int i = 0; i < out.size(); ++i)
        out[i] = std::min(1.0, mag.v[static_cast<size_t>(i)] * scale);
    return out;
}

TensorGrid edge_supervision(const LabeledMask& instances, double sigma, double saturation) {
    TensorGrid out({1, instances.height, instances.width}, 0.0);
    const int k = instances.max_label();
    for (int label = 1; label <= k; ++label) {
        TensorGrid one({1, instances.height, instances.width}, 0.0);
        for (size_t i = 0; i < instances.labels.size(); ++i)
            if (instances.labels[i] == label) one[static_cast<int>(i)] = 1.0;
        TensorGrid e = edge_groundtruth(one, sigma, saturation);
        for (int i = 0; i < out.size(); ++i) out[i] = std::max(out[i], e[i]);
    }
    return out;
}

namespace {

template <typename T>
void flip_plane(std::vector<T>& v, int h, int w, bool hflip, bool vflip) {
    if (hflip) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w / 2; ++x)
                std::swap(v[static_cast<size_t>(y) * w + x],
                          v[static_cast<size_t>(y) * w + (w - 1 - x)]);
    }
    if (vflip) {
        for (int y = 0; y < h / 2; ++y)
            for (int x = 0; x < w; ++x)
                std::swap(v[static_cast<size_t>(y) * w + x],
                          v[static_cast<size_t>(h - 1 - y) * w + x]);
    }
}

} // namespace

TrainSample apply_augment(const TrainSample& s, const AugmentParams& p) {
    TrainSample out = s;
    const int h = s.image.extent(1), w = s.image.extent(2);
    flip_plane(out.image.values(), h, w, p.hflip, p.vflip);
    flip_plane(out.region_gt.values(), h, w, p.hflip, p.vflip);
    flip_plane(out.edge_gt.values(), h, w, p.hflip, p.vflip);
    flip_plane(out.instances.labels, h, w, p.hflip, p.vflip);
    for (int i = 0; i < out.image.size(); ++i) {
        double v = std::clamp(p.gain * out.image[i] + p.bias, 0.0, 1.0);
        out.image[i] = std::pow(v, p.gamma);
    }
    return out;
}

AugmentParams draw_augment(Rng& rng, const TrainConfig& cfg) {
    AugmentParams p;
    if (cfg.augment_flips) {
        p.hflip = rng.bernoulli(0.5);
        p.vflip = rng.bernoulli(0.5);
    }
    if (cfg.augment_intensity) {
        p.gain = rng.uniform(0.85, 1.15);
        p.bias = rng.uniform(-0.08, 0.08);
        p.gamma = rng.uniform(0.7, 1.4);
    }
    return p;
}

TrainState init_train_state(const NetConfig& net, const TrainConfig& cfg, uint64_t seed) {
    validate(net);
    validate(cfg);
    TrainState st;
    st.params = build_network(net, seed);
    st.learning_rate = cfg.learning_rate;
    st.weights.lambda = cfg.adaptive_lambda
                            ? std::clamp(cfg.lambda_init, kLambdaMin, kLambdaMax)
                            : cfg.fixed_lambda;
    for (const auto& [path, layer] : st.params.layers) {
        st.adam.m[path + "/kernel"].assign(static_cast<size_t>(layer.kernel.size()), 0.0);
        st.adam.v[path + "/kernel"].assign(static_cast<size_t>(layer.kernel.size()), 0.0);
        st.adam.m[path + "/bias"].assign(static_cast<size_t>(layer.bias.size()), 0.0);
        st.adam.v[path + "/bias"].assign(static_cast<size_t>(layer.bias.size()), 0.0);
    }
    return st;
}

void adam_update(TensorGrid& param, const TensorGrid& grad, std::vector<double>& m,
                 std::vector<double>& v, const TrainConfig& cfg, long t, double lr,
                 ParamPrecision prec) {
    const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t));
    for (int i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        m[static_cast<size_t>(i)] =
            round_precision(cfg.adam_beta1 * m[static_cast<size_t>(i)] + (1.0 - cfg.adam_beta1) * g, prec);
        v[static_cast<size_t>(i)] =
            round_precision(cfg.adam_beta2 * v[static_cast<size_t>(i)] + (1.0 - cfg.adam_beta2) * g * g, prec);
        const double mhat = m[static_cast<size_t>(i)] / c1;
        const double vhat = v[static_cast<size_t>(i)] / c2;
        param[i] = round_precision(param[i] - lr * mhat / (std::sqrt(vhat) + cfg.adam_epsilon), prec);
    }
}

namespace {

TensorGrid mean_on_tape(const std::vector<TensorGrid>& scalars) {
    TensorGrid acc = scalars[0];
    for (size_t i = 1; i < scalars.size(); ++i) acc = add(acc, scalars[i]);
    return affine(acc, 1.0 / static_cast<double>(scalars.size()), 0.0);
}

} // namespace

EpochStats train_epoch(TrainState& state, const std::vector<TrainSample>& data,
                       const TrainConfig& cfg, Rng& rng) {
    validate(cfg);
    if (data.empty()) throw DataError("train_epoch: empty dataset");

    std::vector<size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    // Fisher-Yates with our rng; std::shuffle's algorithm is unspecified.
    for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);

    EpochStats stats;
    double sum_e1 = 0.0, sum_e2 = 0.0, sum_e = 0.0;
    const ParamPrecision prec = state.params.config.precision;

    for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(cfg.batch_size)) {
        const size_t end = std::min(order.size(), begin + static_cast<size_t>(cfg.batch_size));
        const int batch_index = static_cast<int>(begin / static_cast<size_t>(cfg.batch_size));

        Tape tape;
        ModelParams tracked = state.params;
        for (auto& [path, layer] : tracked.layers) {
            tape.track(layer.kernel);
            tape.track(layer.bias);
        }

        std::vector<TensorGrid> e1s, e2s;
        try {
            const bool augmenting = cfg.augment_flips || cfg.augment_intensity;
            for (size_t bi = begin; bi < end; ++bi) {
                const TrainSample& base = data[order[bi]];
                const TrainSample s = augmenting ? apply_augment(base, draw_augment(rng, cfg)) : base;
                ForwardMaps maps = net_forward(tracked, s.image);
                auto [e1, e2] = task_losses(maps.region, maps.edge, s.region_gt, s.edge_gt,
                                            cfg.dice_epsilon);
                e1s.push_back(e1);
                e2s.push_back(e2);
            }

            TensorGrid e1b = mean_on_tape(e1s);
            TensorGrid e2b = mean_on_tape(e2s);
            const double e1v = e1b.scalar(), e2v = e2b.scalar();

            if (cfg.adaptive_lambda && cfg.lambda_cadence == LambdaCadence::per_batch) {
                const double star = lambda_star(e1v, e2v, state.weights.lambda);
                state.weights.lambda = std::clamp(
                    cfg.lambda_ema * state.weights.lambda + (1.0 - cfg.lambda_ema) * star,
                    kLambdaMin, kLambdaMax);
            }
            const double alpha = state.weights.alpha();
            const double beta = state.weights.beta();
            const double ev = alpha * e1v + beta * e2v;
            if (!std::isfinite(ev)) throw NumericalError("non-finite loss");

            tape.backward(add(affine(e1b, alpha, 0.0), affine(e2b, beta, 0.0)));

            ++state.adam.t;
            for (auto& [path, layer] : tracked.layers) {
                ConvLayer& target = state.params.at(path);
                adam_update(target.kernel, tape.grad(layer.kernel), state.adam.m.at(path + "/kernel"),
                            state.adam.v.at(path + "/kernel"), cfg, state.adam.t,
                            state.learning_rate, prec);
                adam_update(target.bias, tape.grad(layer.bias), state.adam.m.at(path + "/bias"),
                            state.adam.v.at(path + "/bias"), cfg, state.adam.t,
                            state.learning_rate, prec);
            }

            ++state.step;
            state.weights.history.push_back({state.step, state.weights.lambda, e1v, e2v});
            stats.steps.push_back({state.epoch + 1, state.step, state.weights.lambda, e1v, e2v, ev,
                                   state.learning_rate});
            sum_e1 += e1v;
            sum_e2 += e2v;
            sum_e += ev;
        } catch (const NumericalError& err) {
            throw NumericalError("epoch " + std::to_string(state.epoch + 1) + " batch " +
                                 std::to_string(batch_index) + ": " + err.what());
        }
    }

    const double nb = static_cast<double>(stats.steps.size());
    stats.mean_e1 = sum_e1 / nb;
    stats.mean_e2 = sum_e2 / nb;
    stats.mean_e = sum_e / nb;

    if (cfg.adaptive_lambda && cfg.lambda_cadence == LambdaCadence::per_epoch) {
        const double star = lambda_star(stats.mean_e1, stats.mean_e2, state.weights.lambda);
        state.weights.lambda =
            std::clamp(cfg.lambda_ema * state.weights.lambda + (1.0 - cfg.lambda_ema) * star,
                       kLambdaMin, kLambdaMax);
    }

    ++state.epoch;
    state.learning_rate *= cfg.lr_decay;
    return stats;
}

std::pair<double, double> dataset_losses(const ModelParams& params,
                                         const std::vector<TrainSample>& data, double epsilon) {
    if (data.empty()) throw DataError("dataset_losses: empty dataset");
    double s1 = 0.0, s2 = 0.0;
    for (const TrainSample& s : data) {
        ForwardMaps maps = net_forward(params, s.image);
        auto [e1, e2] = task_losses(maps.region, maps.edge, s.region_gt, s.edge_gt, epsilon);
        s1 += e1.scalar();
        s2 += e2.scalar();
    }
    return {s1 / static_cast<double>(data.size()), s2 / static_cast<double>(data.size())};
}

} // namespace cellseg
