#include "cellseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cellseg/errors.hpp"

namespace cellseg {

double TaskWeights::beta() const {
    return std::sqrt(1.0 - lambda * lambda);
}

TensorGrid dice(const TensorGrid& y, const TensorGrid& yhat, double epsilon) {
    if (y.shape() != yhat.shape())
        throw DimensionError("dice: shape mismatch");
    if (epsilon < 0.0)
        throw std::invalid_argument("dice: negative epsilon");
    for (int i = 0; i < y.size(); ++i)
        if (y[i] < 0.0 || yhat[i] < 0.0)
            throw std::invalid_argument("dice: negative values");

    TensorGrid numer = affine(sum(mul(y, yhat)), 2.0, epsilon);
    TensorGrid denom = affine(add(sum(y), sum(yhat)), 1.0, epsilon);
    return div(numer, denom);
}

std::pair<TensorGrid, TensorGrid> task_losses(const TensorGrid& f_r, const TensorGrid& f_e,
                                              const TensorGrid& region_gt,
                                              const TensorGrid& edge_gt, double epsilon) {
    TensorGrid e1 = affine(dice(region_gt, f_r, epsilon), -1.0, 1.0);
    TensorGrid e2 = affine(dice(edge_gt, f_e, epsilon), -1.0, 1.0);
    return {e1, e2};
}

double combined_energy(double e1, double e2, double lambda) {
    if (!(lambda > 0.0 && lambda < 1.0))
        throw std::invalid_argument("combined_energy: lambda must lie in (0,1)");
    if (e1 < 0.0 || e2 < 0.0)
        throw std::invalid_argument("combined_energy: losses must be non-negative");
    return lambda * e1 + std::sqrt(1.0 - lambda * lambda) * e2;
}

double lambda_star(double e1, double e2, double previous_lambda) {
    if (e1 < 0.0 || e2 < 0.0)
        throw std::invalid_argument("lambda_star: losses must be non-negative");
    const double norm = std::sqrt(e1 * e1 + e2 * e2);
    const double raw = norm > 0.0 ? e1 / norm : previous_lambda;
    return std::clamp(raw, kLambdaMin, kLambdaMax);
}

} // namespace cellseg
