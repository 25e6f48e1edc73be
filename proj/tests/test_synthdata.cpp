#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cellseg/errors.hpp"
#include "cellseg/synthdata.hpp"

using namespace cellseg;

namespace {

// Independent adjacency scan: any 8-adjacent pixel pair with two distinct
// positive labels.
bool has_touching_pair(const LabeledMask& m) {
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            const int a = m.at(y, x);
            if (a <= 0) continue;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= m.height || xx < 0 || xx >= m.width) continue;
                    const int b = m.at(yy, xx);
                    if (b > 0 && b != a) return true;
                }
        }
    return false;
}

} // namespace

TEST_CASE("spec validation") {
    SceneSpec bad;
    bad.radius_min = 2.0;
    CHECK_THROWS_AS(validate(bad), ConfigError);
    bad = SceneSpec{};
    bad.contrast_gap = 0.01;
    bad.noise_sigma = 0.05;
    CHECK_THROWS_AS(validate(bad), ConfigError);
    bad = SceneSpec{};
    bad.touch_probability = 1.5;
    CHECK_THROWS_AS(validate(bad), ConfigError);
    CHECK_NOTHROW(validate(SceneSpec{}));
}

TEST_CASE("zero cells give a blank scene") {
    SceneSpec spec;
    spec.cell_count_min = spec.cell_count_max = 0;
    spec.seed = 9;
    Scene s = generate(spec);
    CHECK(s.instances.max_label() == 0);
    for (int i = 0; i < s.region_gt.size(); ++i) {
        CHECK(s.region_gt[i] == 0.0);
        CHECK(s.edge_gt[i] == 0.0);
    }
    // image still carries background, ramp and noise inside [0,1]
    for (int i = 0; i < s.image.size(); ++i) {
        CHECK(s.image[i] >= 0.0);
        CHECK(s.image[i] <= 1.0);
    }
}

TEST_CASE("same seed reproduces the scene bit-for-bit") {
    SceneSpec spec;
    spec.seed = 1234;
    Scene a = generate(spec);
    Scene b = generate(spec);
    CHECK(a.image.values() == b.image.values());
    CHECK(a.region_gt.values() == b.region_gt.values());
    CHECK(a.edge_gt.values() == b.edge_gt.values());
    CHECK(a.instances.labels == b.instances.labels);

    spec.seed = 1235;
    Scene c = generate(spec);
    CHECK(a.image.values() != c.image.values());
}

TEST_CASE("forced touching pair exists and instances stay disjoint") {
    SceneSpec spec;
    spec.cell_count_min = spec.cell_count_max = 2;
    spec.touch_probability = 1.0;
    for (uint64_t seed : {1ull, 7ull, 42ull, 99ull, 1000ull}) {
        spec.seed = seed;
        Scene s = generate(spec);
        CHECK(s.instances.max_label() == 2);
        CHECK(has_touching_pair(s.instances));
        // disjoint by construction: one label per pixel; union equals region gt
        for (size_t i = 0; i < s.instances.labels.size(); ++i) {
            const bool fg = s.instances.labels[i] > 0;
            CHECK(s.region_gt[static_cast<int>(i)] == (fg ? 1.0 : 0.0));
        }
    }
}

TEST_CASE("instance areas avoid degenerate slivers") {
    SceneSpec spec;
    spec.touch_probability = 0.8;
    const double floor_area =
        0.5 * M_PI * std::pow(spec.radius_min * (1.0 - spec.perturb_amplitude), 2.0);
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        spec.seed = seed;
        Scene s = generate(spec);
        for (long a : s.instances.areas())
            CHECK(static_cast<double>(a) >= floor_area);
    }
}

TEST_CASE("foreground/background contrast survives synthesis") {
    SceneSpec spec;
    spec.seed = 77;
    for (uint64_t seed = 21; seed <= 25; ++seed) {
        spec.seed = seed;
        Scene s = generate(spec);
        double fg = 0.0, bg = 0.0;
        long nfg = 0, nbg = 0;
        for (size_t i = 0; i < s.instances.labels.size(); ++i) {
            if (s.instances.labels[i] > 0) {
                fg += s.image[static_cast<int>(i)];
                ++nfg;
            } else {
                bg += s.image[static_cast<int>(i)];
                ++nbg;
            }
        }
        REQUIRE(nfg > 0);
        fg /= static_cast<double>(nfg);
        bg /= static_cast<double>(nbg);
        CHECK(fg - bg >= spec.contrast_gap - 3.0 * spec.noise_sigma);
    }
}

TEST_CASE("edge ground truth concentrates on instance boundaries") {
    SceneSpec spec;
    spec.seed = 5;
    Scene s = generate(spec);
    // every saturated edge pixel sits within the boundary band: with
    // saturation 0.10 and sigma 1.5 the band halfwidth is sigma*sqrt(2 ln 10) ~ 3.2 px
    const int reach = 4;
    for (int y = 0; y < spec.image_size; ++y)
        for (int x = 0; x < spec.image_size; ++x) {
            if (s.edge_gt[y * spec.image_size + x] < 0.999) continue;
            bool near_boundary = false;
            for (int dy = -reach; dy <= reach && !near_boundary; ++dy)
                for (int dx = -reach; dx <= reach && !near_boundary; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 1 || yy >= spec.image_size || xx < 1 || xx >= spec.image_size) continue;
                    const int here = s.instances.at(yy, xx);
                    if (here != s.instances.at(yy, xx - 1) || here != s.instances.at(yy - 1, xx))
                        near_boundary = true;
                }
            CHECK(near_boundary);
        }
}
