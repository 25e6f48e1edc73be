#pragma once

#include <utility>
#include <vector>

#include "cellseg/tensorgrid.hpp"

namespace cellseg {

// Clamp bounds for the adaptive task weight; keep sqrt(1 - lambda^2) and its
// derivative finite.
inline constexpr double kLambdaMin = 1e-4;
inline constexpr double kLambdaMax = 1.0 - 1e-4;
inline constexpr double kEqualLambda = 0.70710678118654752440; // 1/sqrt(2)

struct LambdaRecord {
    long step = 0;
    double lambda = kEqualLambda;
    double e1 = 0.0;
    double e2 = 0.0;
};

// Current task weight plus its update history. alpha/beta satisfy
// alpha^2 + beta^2 = 1 by construction.
struct TaskWeights {
    double lambda = kEqualLambda;
    std::vector<LambdaRecord> history;

    double alpha() const { return lambda; }
    double beta() const;
};

// Regularized soft Dice score (2*sum(y*yhat) + eps) / (sum(y) + sum(yhat) + eps).
// Differentiable through the tape; equal shapes and non-negative values required.
TensorGrid dice(const TensorGrid& y, const TensorGrid& yhat, double epsilon);

// Task losses E1 = 1 - D(region_gt, f_r) and E2 = 1 - D(edge_gt, f_e).
std::pair<TensorGrid, TensorGrid> task_losses(const TensorGrid& f_r, const TensorGrid& f_e,
                                              const TensorGrid& region_gt,
                                              const TensorGrid& edge_gt, double epsilon);

// Combined energy lambda*e1 + sqrt(1-lambda^2)*e2; lambda must lie in (0,1).
double combined_energy(double e1, double e2, double lambda);

// Weight maximizing the combined energy: e1/sqrt(e1^2+e2^2), clamped to
// [kLambdaMin, kLambdaMax]. When both losses vanish the objective is flat and
// the previous weight is kept.
double lambda_star(double e1, double e2, double previous_lambda);

} // namespace cellseg
