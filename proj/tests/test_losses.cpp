#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cellseg/errors.hpp"
#include "cellseg/losses.hpp"
#include "test_util.hpp"

using namespace cellseg;
using testutil::random_grid;

namespace {

// Independent re-summation of the dice formula.
double dice_oracle(const TensorGrid& y, const TensorGrid& yhat, double eps) {
    double inter = 0.0, sy = 0.0, sh = 0.0;
    for (int i = 0; i < y.size(); ++i) {
        inter += y[i] * yhat[i];
        sy += y[i];
        sh += yhat[i];
    }
    return (2.0 * inter + eps) / (sy + sh + eps);
}

TensorGrid random_unit_grid(std::vector<int> shape, Rng& rng) {
    return random_grid(std::move(shape), rng, 0.0, 1.0);
}

} // namespace

TEST_CASE("dice self-match, empty-empty and hand value") {
    TensorGrid y = TensorGrid::from_values({4}, {1, 1, 0, 0});
    TensorGrid same = dice(y, y, 1e-6);
    CHECK(std::fabs(same.scalar() - 1.0) < 1e-6);

    TensorGrid z({8}, 0.0);
    CHECK(dice(z, z, 1e-6).scalar() == 1.0);

    TensorGrid yhat = TensorGrid::from_values({4}, {1, 0, 1, 0});
    CHECK(dice(y, yhat, 0.0).scalar() == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("dice symmetry, range and errors") {
    Rng rng(42);
    for (int i = 0; i < 50; ++i) {
        TensorGrid a = random_unit_grid({37}, rng);
        TensorGrid b = random_unit_grid({37}, rng);
        const double ab = dice(a, b, 1e-6).scalar();
        CHECK(ab == dice(b, a, 1e-6).scalar()); // symmetric, bit for bit
        CHECK(ab > 0.0);
        CHECK(ab <= 1.0);
    }
    CHECK_THROWS_AS(dice(TensorGrid({3}), TensorGrid({4}), 1e-6), DimensionError);
    TensorGrid neg = TensorGrid::from_values({2}, {-0.5, 0.2});
    CHECK_THROWS_AS(dice(neg, TensorGrid({2}, 0.5), 1e-6), std::invalid_argument);
}

TEST_CASE("task losses: perfect, disjoint, random oracle") {
    TensorGrid g = TensorGrid::from_values({1, 2, 2}, {1, 1, 0, 0});
    TensorGrid edge = TensorGrid::from_values({1, 2, 2}, {0, 1, 1, 0});

    auto [e1p, e2p] = task_losses(g, edge, g, edge, 1e-6);
    CHECK(e1p.scalar() < 1e-6);

    TensorGrid flipped = TensorGrid::from_values({1, 2, 2}, {0, 0, 1, 1});
    auto [e1d, e2d] = task_losses(flipped, edge, g, edge, 0.0);
    CHECK(e1d.scalar() == 1.0);

    Rng rng(7);
    for (int i = 0; i < 20; ++i) {
        TensorGrid fr = random_unit_grid({1, 4, 4}, rng);
        TensorGrid fe = random_unit_grid({1, 4, 4}, rng);
        TensorGrid rg = random_unit_grid({1, 4, 4}, rng);
        TensorGrid eg = random_unit_grid({1, 4, 4}, rng);
        auto [e1, e2] = task_losses(fr, fe, rg, eg, 1e-6);
        CHECK(e1.scalar() == doctest::Approx(1.0 - dice_oracle(rg, fr, 1e-6)).epsilon(1e-12));
        CHECK(e2.scalar() == doctest::Approx(1.0 - dice_oracle(eg, fe, 1e-6)).epsilon(1e-12));
        CHECK(e1.scalar() >= 0.0);
        CHECK(e1.scalar() < 1.0);
    }
}

TEST_CASE("combined energy endpoints, symmetry point and hand value") {
    // at lambda_max the edge term contributes at most beta(lambda_max) ~ 0.0141
    CHECK(std::fabs(combined_energy(0.37, 0.8, kLambdaMax) - 0.37) < 0.015 * 0.8 + 1e-4);
    const double l = 0.25;
    CHECK(combined_energy(l, l, kEqualLambda) == doctest::Approx(std::sqrt(2.0) * l).epsilon(1e-12));
    CHECK(combined_energy(0.3, 0.4, 0.6) == doctest::Approx(0.6 * 0.3 + 0.8 * 0.4).epsilon(1e-15));
    CHECK_THROWS_AS(combined_energy(0.3, 0.4, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(combined_energy(0.3, 0.4, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(combined_energy(-0.1, 0.4, 0.5), std::invalid_argument);
}

TEST_CASE("lambda_star symmetry, endpoint, hand value, degenerate fallback") {
    CHECK(lambda_star(0.4, 0.4, 0.5) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
    CHECK(lambda_star(0.7, 0.0, 0.5) == kLambdaMax);
    CHECK(lambda_star(0.3, 0.4, 0.5) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(lambda_star(0.0, 0.0, 0.123) == doctest::Approx(0.123).epsilon(1e-15));
    CHECK(lambda_star(0.0, 0.0, 0.0) == kLambdaMin); // fallback still clamped
}

TEST_CASE("stationarity and maximality of lambda_star over a grid") {
    Rng rng(99);
    for (int i = 0; i < 100; ++i) {
        const double e1 = rng.uniform(0.05, 1.0);
        const double e2 = rng.uniform(0.05, 1.0);
        const double ls = lambda_star(e1, e2, 0.5);

        const double h = 1e-7;
        const double d = (combined_energy(e1, e2, ls + h) - combined_energy(e1, e2, ls - h)) / (2 * h);
        CHECK(std::fabs(d) < 1e-6);

        const double best = combined_energy(e1, e2, ls);
        for (int k = 1; k < 1000; ++k) {
            const double lam = k * 1e-3;
            CHECK(combined_energy(e1, e2, lam) <= best + 1e-12);
        }
    }
}

TEST_CASE("concavity: second difference non-positive whenever e2 > 0") {
    Rng rng(100);
    for (int i = 0; i < 50; ++i) {
        const double e1 = rng.uniform(0.0, 1.0);
        const double e2 = rng.uniform(0.01, 1.0);
        const double h = 1e-3;
        for (int k = 2; k <= 997; ++k) {
            const double lam = k * 1e-3;
            const double second = combined_energy(e1, e2, lam + h) -
                                  2.0 * combined_energy(e1, e2, lam) +
                                  combined_energy(e1, e2, lam - h);
            CHECK(second <= 0.0);
        }
    }
}

TEST_CASE("lambda_star strictly increases in e1 for fixed e2") {
    const double e2 = 0.35;
    double prev = 0.0;
    for (int k = 1; k <= 200; ++k) {
        const double e1 = k * 0.004;
        const double ls = lambda_star(e1, e2, 0.5);
        CHECK(ls > prev);
        prev = ls;
    }
}

TEST_CASE("TaskWeights alpha-beta constraint") {
    TaskWeights w;
    for (double lam : {kLambdaMin, 0.1, 0.5, kEqualLambda, 0.9, kLambdaMax}) {
        w.lambda = lam;
        const double a = w.alpha(), b = w.beta();
        CHECK(std::fabs(a * a + b * b - 1.0) < 1e-12);
    }
}

TEST_CASE("gradient of E1 with respect to f_r matches finite differences") {
    Rng rng(11);
    TensorGrid rg = random_unit_grid({1, 4, 4}, rng);
    TensorGrid fr = random_grid({1, 4, 4}, rng, 0.05, 0.95);

    auto eval = [&](const std::vector<double>& v) {
        TensorGrid f = TensorGrid::from_values(fr.shape(), v);
        return affine(dice(rg, f, 1e-6), -1.0, 1.0).scalar();
    };

    Tape tape;
    TensorGrid f = fr;
    tape.track(f);
    TensorGrid e1 = affine(dice(rg, f, 1e-6), -1.0, 1.0);
    tape.backward(e1);
    TensorGrid g = tape.grad(f);

    int checked = 0;
    const double worst = testutil::max_grad_rel_error(eval, fr.values(), g.values(), 1e-6, &checked);
    CHECK(checked == fr.size());
    CHECK(worst < 1e-4);
}
