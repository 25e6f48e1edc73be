#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cellseg/checkpoint.hpp"
#include "cellseg/errors.hpp"
#include "cellseg/imageproc.hpp"
#include "cellseg/trainer.hpp"
#include "test_util.hpp"

using namespace cellseg;

namespace {

// Brute-force 2-D Gaussian convolution with replicated borders, then central
// differences: the independent oracle for edge_groundtruth.
TensorGrid edge_oracle(const TensorGrid& mask, double sigma) {
    const int h = mask.extent(1), w = mask.extent(2);
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    auto clamp = [](int v, int hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); };

    std::vector<double> blurred(static_cast<size_t>(h) * w, 0.0);
    double norm = 0.0;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            norm += std::exp(-0.5 * (dy * dy + dx * dx) / (sigma * sigma));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int dy = -radius; dy <= radius; ++dy)
                for (int dx = -radius; dx <= radius; ++dx)
                    acc += std::exp(-0.5 * (dy * dy + dx * dx) / (sigma * sigma)) *
                           mask[clamp(y + dy, h) * w + clamp(x + dx, w)];
            blurred[static_cast<size_t>(y) * w + x] = acc / norm;
        }

    std::vector<double> mag(static_cast<size_t>(h) * w, 0.0);
    double peak = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double gx = 0.5 * (blurred[static_cast<size_t>(y) * w + clamp(x + 1, w)] -
                                     blurred[static_cast<size_t>(y) * w + clamp(x - 1, w)]);
            const double gy = 0.5 * (blurred[static_cast<size_t>(clamp(y + 1, h)) * w + x] -
                                     blurred[static_cast<size_t>(clamp(y - 1, h)) * w + x]);
            mag[static_cast<size_t>(y) * w + x] = std::sqrt(gx * gx + gy * gy);
            peak = std::max(peak, mag[static_cast<size_t>(y) * w + x]);
        }
    TensorGrid out(mask.shape(), 0.0);
    if (peak > 0.0)
        for (int i = 0; i < out.size(); ++i) out[i] = mag[static_cast<size_t>(i)] / peak;
    return out;
}

// A small two-disk scene assembled by hand (no synthdata dependency).
TrainSample make_sample(int size, uint64_t seed) {
    Rng rng(seed);
    TrainSample s;
    s.instances = LabeledMask(size, size);
    const double cx1 = size * 0.35, cy1 = size * 0.4, r1 = size * 0.16;
    const double cx2 = size * 0.68, cy2 = size * 0.62, r2 = size * 0.14;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            if ((px - cx1) * (px - cx1) + (py - cy1) * (py - cy1) <= r1 * r1)
                s.instances.at(y, x) = 1;
            else if ((px - cx2) * (px - cx2) + (py - cy2) * (py - cy2) <= r2 * r2)
                s.instances.at(y, x) = 2;
        }
    s.region_gt = TensorGrid({1, size, size}, 0.0);
    for (int i = 0; i < s.region_gt.size(); ++i)
        s.region_gt[i] = s.instances.labels[static_cast<size_t>(i)] > 0 ? 1.0 : 0.0;
    s.edge_gt = edge_supervision(s.instances, 1.5, 0.10);
    Grid img(size, size);
    for (int i = 0; i < s.region_gt.size(); ++i)
        img.v[static_cast<size_t>(i)] = 0.35 + 0.4 * s.region_gt[i];
    img = gaussian_blur(img, 1.0);
    s.image = TensorGrid({1, size, size}, 0.0);
    for (int i = 0; i < s.image.size(); ++i)
        s.image[i] = std::clamp(img.v[static_cast<size_t>(i)] + rng.normal(0.0, 0.01), 0.0, 1.0);
    return s;
}

std::vector<TrainSample> make_dataset(int n, int size, uint64_t seed) {
    std::vector<TrainSample> data;
    for (int i = 0; i < n; ++i) data.push_back(make_sample(size, mix_seed(seed, i)));
    return data;
}

TrainConfig quiet_config() {
    TrainConfig cfg;
    cfg.augment_flips = false;
    cfg.augment_intensity = false;
    return cfg;
}

} // namespace

TEST_CASE("edge_groundtruth constant masks give zero maps") {
    TensorGrid zeros({1, 16, 16}, 0.0);
    TensorGrid e0 = edge_groundtruth(zeros, 1.5);
    for (int i = 0; i < e0.size(); ++i) CHECK(e0[i] == 0.0);

    TensorGrid ones({1, 16, 16}, 1.0);
    TensorGrid e1 = edge_groundtruth(ones, 1.5);
    for (int i = 0; i < e1.size(); ++i) CHECK(e1[i] == 0.0);

    TensorGrid bad({1, 4, 4}, 0.5);
    CHECK_THROWS_AS(edge_groundtruth(bad, 1.5), std::invalid_argument);
    CHECK_THROWS_AS(edge_groundtruth(zeros, 0.0), std::invalid_argument);
}

TEST_CASE("edge_groundtruth matches the brute-force oracle; argmax on the boundary ring") {
    const int size = 32;
    TensorGrid mask({1, size, size}, 0.0);
    for (int y = 10; y < 22; ++y)
        for (int x = 10; x < 22; ++x) mask[y * size + x] = 1.0;

    TensorGrid got = edge_groundtruth(mask, 1.5); // saturation 1: plain normalization
    TensorGrid want = edge_oracle(mask, 1.5);
    for (int i = 0; i < got.size(); ++i)
        CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-9));

    int best = 0;
    for (int i = 1; i < got.size(); ++i)
        if (got[i] > got[best]) best = i;
    const int by = best / size, bx = best % size;
    // boundary ring of the square, one pixel tolerance
    const bool on_ring = (std::min(std::abs(by - 10), std::abs(by - 21)) <= 1 && bx >= 9 && bx <= 22) ||
                         (std::min(std::abs(bx - 10), std::abs(bx - 21)) <= 1 && by >= 9 && by <= 22);
    CHECK(on_ring);

    // saturated variant: peak band pinned at 1, still zero away from edges
    TensorGrid sat = edge_groundtruth(mask, 1.5, 0.10);
    CHECK(*std::max_element(sat.values().begin(), sat.values().end()) == 1.0);
    CHECK(sat[0] == 0.0);
}

TEST_CASE("edge_supervision marks the seam between touching instances") {
    const int size = 32;
    LabeledMask m(size, size);
    for (int y = 8; y < 24; ++y) {
        for (int x = 6; x < 16; ++x) m.at(y, x) = 1;
        for (int x = 16; x < 26; ++x) m.at(y, x) = 2;
    }
    TensorGrid e = edge_supervision(m, 1.5, 0.10);
    // the union has no gradient at x=16, but the per-instance edges do
    double seam = 0.0;
    for (int y = 12; y < 20; ++y) seam = std::max(seam, e[y * size + 16]);
    CHECK(seam > 0.5);
}

TEST_CASE("augment: identity, involution, gamma") {
    TrainSample s = make_sample(16, 9);
    AugmentParams ident;
    TrainSample same = apply_augment(s, ident);
    for (int i = 0; i < s.image.size(); ++i) CHECK(same.image[i] == s.image[i]);

    AugmentParams hf;
    hf.hflip = true;
    TrainSample twice = apply_augment(apply_augment(s, hf), hf);
    for (int i = 0; i < s.image.size(); ++i) CHECK(twice.image[i] == s.image[i]);
    CHECK(twice.instances.labels == s.instances.labels);

    // flips move ground truth together with the image
    TrainSample once = apply_augment(s, hf);
    const int w = 16;
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
            CHECK(once.instances.at(y, x) == s.instances.at(y, w - 1 - x));

    AugmentParams g2;
    g2.gamma = 2.0;
    TrainSample sq = apply_augment(s, g2);
    for (int i = 0; i < s.image.size(); ++i)
        CHECK(sq.image[i] == doctest::Approx(s.image[i] * s.image[i]).epsilon(1e-12));
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
    NetConfig net{2, 2, 16};
    TrainConfig cfg = quiet_config();
    cfg.learning_rate = 0.0;
    TrainState st = init_train_state(net, cfg, 5);
    const ModelParams before = st.params;
    auto data = make_dataset(3, 16, 77);
    Rng rng(cfg.seed);
    train_epoch(st, data, cfg, rng);
    for (const auto& [path, layer] : before.layers) {
        const ConvLayer& after = st.params.at(path);
        for (int i = 0; i < layer.kernel.size(); ++i) CHECK(layer.kernel[i] == after.kernel[i]);
        for (int i = 0; i < layer.bias.size(); ++i) CHECK(layer.bias[i] == after.bias[i]);
    }
}

TEST_CASE("fresh Adam state with zero gradients leaves parameters unchanged") {
    NetConfig net{1, 1, 8};
    TrainConfig cfg = quiet_config();
    TrainState st = init_train_state(net, cfg, 3);
    const ModelParams before = st.params;
    ++st.adam.t;
    for (auto& [path, layer] : st.params.layers) {
        adam_update(layer.kernel, TensorGrid(layer.kernel.shape(), 0.0),
                    st.adam.m.at(path + "/kernel"), st.adam.v.at(path + "/kernel"), cfg,
                    st.adam.t, cfg.learning_rate, net.precision);
        adam_update(layer.bias, TensorGrid(layer.bias.shape(), 0.0),
                    st.adam.m.at(path + "/bias"), st.adam.v.at(path + "/bias"), cfg,
                    st.adam.t, cfg.learning_rate, net.precision);
    }
    for (const auto& [path, layer] : before.layers) {
        const ConvLayer& after = st.params.at(path);
        for (int i = 0; i < layer.kernel.size(); ++i) CHECK(layer.kernel[i] == after.kernel[i]);
        for (int i = 0; i < layer.bias.size(); ++i) CHECK(layer.bias[i] == after.bias[i]);
    }
}

TEST_CASE("batch loss equals the mean of per-sample losses") {
    NetConfig net{2, 2, 16};
    TrainConfig cfg = quiet_config();
    cfg.batch_size = 4;
    cfg.dice_epsilon = 1.0;
    TrainState st = init_train_state(net, cfg, 21);
    const ModelParams frozen = st.params;
    auto data = make_dataset(4, 16, 31);

    double s1 = 0.0, s2 = 0.0;
    for (const TrainSample& s : data) {
        ForwardMaps maps = net_forward(frozen, s.image);
        auto [e1, e2] = task_losses(maps.region, maps.edge, s.region_gt, s.edge_gt, cfg.dice_epsilon);
        s1 += e1.scalar();
        s2 += e2.scalar();
    }

    Rng rng(cfg.seed);
    EpochStats stats = train_epoch(st, data, cfg, rng);
    REQUIRE(stats.steps.size() == 1);
    CHECK(std::fabs(stats.steps[0].e1 - s1 / 4.0) < 1e-10);
    CHECK(std::fabs(stats.steps[0].e2 - s2 / 4.0) < 1e-10);
}

TEST_CASE("fixed seed reproduces identical epoch stats; lambda stays in bounds") {
    NetConfig net{2, 2, 16};
    TrainConfig cfg;
    cfg.batch_size = 2;
    cfg.learning_rate = 1e-3;
    auto data = make_dataset(4, 16, 55);

    auto run = [&] {
        TrainState st = init_train_state(net, cfg, 8);
        Rng rng(cfg.seed);
        std::vector<EpochStats> all;
        for (int e = 0; e < 3; ++e) all.push_back(train_epoch(st, data, cfg, rng));
        return std::make_pair(std::move(all), st.weights);
    };
    auto [a, wa] = run();
    auto [b, wb] = run();
    for (size_t e = 0; e < a.size(); ++e) {
        REQUIRE(a[e].steps.size() == b[e].steps.size());
        for (size_t i = 0; i < a[e].steps.size(); ++i) {
            CHECK(a[e].steps[i].e1 == b[e].steps[i].e1);
            CHECK(a[e].steps[i].e2 == b[e].steps[i].e2);
            CHECK(a[e].steps[i].lambda == b[e].steps[i].lambda);
        }
    }
    for (const LambdaRecord& r : wa.history) {
        CHECK(r.lambda >= kLambdaMin);
        CHECK(r.lambda <= kLambdaMax);
    }
    CHECK(wa.history.size() == 6);
}

TEST_CASE("per-epoch cadence updates lambda once per epoch") {
    NetConfig net{1, 2, 16};
    TrainConfig cfg = quiet_config();
    cfg.lambda_cadence = LambdaCadence::per_epoch;
    cfg.batch_size = 2;
    TrainState st = init_train_state(net, cfg, 4);
    auto data = make_dataset(4, 16, 91);
    Rng rng(0);
    EpochStats stats = train_epoch(st, data, cfg, rng);
    // all steps inside the epoch share the initial lambda
    for (const StepRecord& s : stats.steps) CHECK(s.lambda == cfg.lambda_init);
    CHECK(st.weights.lambda != cfg.lambda_init);
}

TEST_CASE("fixed-lambda baseline holds lambda constant") {
    NetConfig net{1, 2, 16};
    TrainConfig cfg = quiet_config();
    cfg.adaptive_lambda = false;
    TrainState st = init_train_state(net, cfg, 4);
    auto data = make_dataset(2, 16, 13);
    Rng rng(0);
    for (int e = 0; e < 2; ++e) train_epoch(st, data, cfg, rng);
    for (const LambdaRecord& r : st.weights.history) CHECK(r.lambda == kEqualLambda);
}

TEST_CASE("checkpoint round-trip reproduces forward outputs bit-identically") {
    NetConfig net{2, 2, 16};
    TrainConfig cfg = quiet_config();
    cfg.learning_rate = 1e-3;
    TrainState st = init_train_state(net, cfg, 17);
    auto data = make_dataset(2, 16, 23);
    Rng rng(0);
    train_epoch(st, data, cfg, rng); // move off the initialization point

    const std::string path = "ckpt_roundtrip.bin";
    save_checkpoint(st, path);
    TrainState loaded = load_checkpoint(path);

    CHECK(loaded.epoch == st.epoch);
    CHECK(loaded.step == st.step);
    CHECK(loaded.learning_rate == st.learning_rate);
    CHECK(loaded.weights.lambda == st.weights.lambda);
    CHECK(loaded.adam.t == st.adam.t);

    ForwardMaps a = net_forward(st.params, data[0].image);
    ForwardMaps b = net_forward(loaded.params, data[0].image);
    for (int i = 0; i < a.region.size(); ++i) {
        CHECK(a.region[i] == b.region[i]);
        CHECK(a.edge[i] == b.edge[i]);
    }
    std::filesystem::remove(path);
}

TEST_CASE("truncated checkpoint fails cleanly") {
    NetConfig net{1, 1, 8};
    TrainConfig cfg = quiet_config();
    TrainState st = init_train_state(net, cfg, 2);
    const std::string path = "ckpt_trunc.bin";
    save_checkpoint(st, path);

    const auto full = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, full - 37);
    CHECK_THROWS_AS(load_checkpoint(path), DataError);

    std::ofstream garbage(path, std::ios::binary | std::ios::trunc);
    garbage << "not a checkpoint";
    garbage.close();
    CHECK_THROWS_AS(load_checkpoint(path), DataError);
    std::filesystem::remove(path);
}

TEST_CASE("config mismatch on resume is rejected") {
    NetConfig depth2{2, 2, 16};
    NetConfig depth3{3, 2, 16};
    TrainConfig cfg = quiet_config();
    TrainState st = init_train_state(depth2, cfg, 1);
    const std::string path = "ckpt_cfg.bin";
    save_checkpoint(st, path);
    TrainState loaded = load_checkpoint(path);
    CHECK_THROWS_AS(require_config_match(loaded.params.config, depth3), ConfigError);
    CHECK_NOTHROW(require_config_match(loaded.params.config, depth2));
    std::filesystem::remove(path);
}

TEST_CASE("overfit smoke: losses fall on a single sample") {
    NetConfig net{2, 4, 16};
    TrainConfig cfg = quiet_config();
    cfg.batch_size = 1;
    cfg.learning_rate = 3e-3;
    cfg.lr_decay = 1.0;
    TrainState st = init_train_state(net, cfg, 3);
    std::vector<TrainSample> data{make_sample(16, 41)};
    Rng rng(0);
    EpochStats first = train_epoch(st, data, cfg, rng);
    EpochStats last;
    for (int e = 0; e < 60; ++e) last = train_epoch(st, data, cfg, rng);
    CHECK(last.mean_e1 < first.mean_e1 * 0.8);
    CHECK(last.mean_e2 < first.mean_e2);
}
