#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cellseg/labeled_mask.hpp"
#include "cellseg/losses.hpp"
#include "cellseg/network.hpp"
#include "cellseg/rng.hpp"
#include "cellseg/tensorgrid.hpp"

namespace cellseg {

enum class LambdaCadence { per_batch, per_epoch };

struct TrainConfig {
    int epochs = 300;
    int batch_size = 10;
    double learning_rate = 1e-4;
    double lr_decay = 0.99; // per epoch
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;

    LambdaCadence lambda_cadence = LambdaCadence::per_batch;
    double lambda_ema = 0.9;       // weight kept by the previous lambda
    double lambda_init = kEqualLambda;
    bool adaptive_lambda = true;   // false freezes lambda at fixed_lambda
    double fixed_lambda = kEqualLambda;

    double edge_sigma = 0.4;       // Gaussian for edge supervision
    double edge_saturation = 0.7;  // see edge_groundtruth
    double dice_epsilon = 1.0;     // training-mode regularizer

    bool augment_flips = true;
    bool augment_intensity = true;

    uint64_t seed = 0;
};

void validate(const TrainConfig& cfg);

// One training example. Tensors are [1,H,W]; instance labels feed the
// evaluation metrics only, never the loss.
struct TrainSample {
    TensorGrid image;     // values in [0,1]
    TensorGrid region_gt; // binary
    TensorGrid edge_gt;   // in [0,1], concentrated on instance boundaries
    LabeledMask instances;
};

// Edge supervision target: gradient magnitude of the Gaussian-smoothed binary
// mask. The result is rescaled so its maximum is 1 (zero maps stay zero);
// `saturation` clips at that fraction of the peak first, so the boundary band
// saturates and the dice loss against it can actually approach zero. 1.0
// reproduces the plain max-normalization.
TensorGrid edge_groundtruth(const TensorGrid& mask, double sigma, double saturation = 1.0);

// Per-instance edge supervision: max over each instance's edge_groundtruth.
// Boundaries between touching cells are supervised this way, matching the
// per-cell annotations the edge branch is meant to reproduce.
TensorGrid edge_supervision(const LabeledMask& instances, double sigma, double saturation);

// Deterministic augmentation parameters; flips apply to image and all ground
// truth, intensity transforms to the image only.
struct AugmentParams {
    bool hflip = false;
    bool vflip = false;
    double gain = 1.0;  // affine a*x + b, clipped to [0,1]
    double bias = 0.0;
    double gamma = 1.0; // x^gamma on [0,1]
};

TrainSample apply_augment(const TrainSample& s, const AugmentParams& p);
AugmentParams draw_augment(Rng& rng, const TrainConfig& cfg);

// Adam optimizer state, one moment pair per parameter tensor, keyed like
// ModelParams (path + "/kernel" or "/bias").
struct AdamState {
    long t = 0;
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
};

// One Adam update for a single tensor; t is the shared step counter, already
// advanced. Values round to the configured at-rest precision.
void adam_update(TensorGrid& param, const TensorGrid& grad, std::vector<double>& m,
                 std::vector<double>& v, const TrainConfig& cfg, long t, double lr,
                 ParamPrecision precision);

// Mutable training state threaded through epochs and checkpoints.
struct TrainState {
    ModelParams params;
    AdamState adam;
    TaskWeights weights;
    double learning_rate = 1e-4;
    int epoch = 0;      // completed epochs
    long step = 0;      // completed batches
};

TrainState init_train_state(const NetConfig& net, const TrainConfig& cfg, uint64_t seed);

struct StepRecord {
    int epoch = 0;
    long step = 0;
    double lambda = kEqualLambda;
    double e1 = 0.0;
    double e2 = 0.0;
    double e = 0.0;
    double lr = 0.0;
};

struct EpochStats {
    double mean_e1 = 0.0;
    double mean_e2 = 0.0;
    double mean_e = 0.0;
    std::vector<StepRecord> steps;
};

// One pass over `data`: shuffled mini-batches, batch-mean losses, the
// lambda update, backward, Adam step; learning rate decays afterwards.
// Throws NumericalError naming the offending batch when the loss leaves the
// finite range.
EpochStats train_epoch(TrainState& state, const std::vector<TrainSample>& data,
                       const TrainConfig& cfg, Rng& rng);

// Mean task losses of `params` over a dataset without augmentation
// (evaluation mode, oracle epsilon).
std::pair<double, double> dataset_losses(const ModelParams& params,
                                         const std::vector<TrainSample>& data,
                                         double epsilon = 1e-6);

} // namespace cellseg
