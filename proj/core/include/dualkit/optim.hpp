#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dualkit/module_tree.hpp"
#include "dualkit/newton_schulz.hpp"

namespace dualkit {

enum class UpdateMode { FixedStep, SharpnessScaled };

/// Step rule for dualized steepest descent. FixedStep moves by a fixed
/// distance eta in the module norm; SharpnessScaled uses the dual-norm over
/// sharpness ratio from the steepest-descent minimizer.
struct UpdateRule {
    UpdateMode mode;
    double value;  // eta or lambda, both strictly positive
    IterationSchedule schedule;

    static UpdateRule fixed_step(double eta,
                                 IterationSchedule schedule = IterationSchedule::standard());
    static UpdateRule sharpness_scaled(double lambda,
                                       IterationSchedule schedule = IterationSchedule::standard());
};

/// Dual norm of a gradient tree, evaluated through the duality map pairing
/// <g, dualize(g)>. Non-negative, zero exactly for g = 0.
double dual_norm(const ModuleTree& m, const GradTree& g,
                 const IterationSchedule& schedule = IterationSchedule::standard());

/// One dualized steepest-descent update. FixedStep: w - eta * dualize(g).
/// SharpnessScaled: w - (dual_norm(g) / lambda) * dualize(g).
WeightTree steepest_step(const ModuleTree& m, const WeightTree& w, const GradTree& g,
                         const UpdateRule& rule);

enum class LossKind { MeanSquaredError, CrossEntropy };

struct Example {
    Value input;
    std::vector<double> target;  // regression values, or a one-hot class row
};

struct Dataset {
    std::vector<Example> examples;
    LossKind loss = LossKind::MeanSquaredError;
};

/// Full-batch loss and gradient. The loss is averaged over examples;
/// mean squared error also averages over output components.
std::pair<double, GradTree> loss_and_gradient(const ModuleTree& m, const WeightTree& w,
                                              const Dataset& data);

/// Loss only, without the backward pass (finite-difference oracles call
/// this many times).
double dataset_loss(const ModuleTree& m, const WeightTree& w, const Dataset& data);

/// Seeded initialization: Linear leaves are random semi-orthogonal matrices
/// scaled to unit RMS->RMS norm, Conv2D kernel slices likewise under the
/// conv norm, Embed columns have unit RMS.
WeightTree init_weights(const ModuleTree& m, std::uint64_t seed);

struct TrainRecord {
    int step = 0;
    double loss = 0.0;
    // Unset on the initial record (step 0, no update yet).
    bool has_update = false;
    double dual_norm = 0.0;
    std::vector<double> leaf_update_norms;
};

struct TrainResult {
    std::vector<TrainRecord> records;
    bool diverged = false;
    WeightTree final_weights;
};

/// Deterministic training loop: full-batch gradients, dualized updates,
/// per-step metrics. Aborts with partial metrics when the loss exceeds 1e6
/// or stops being finite.
TrainResult train(const ModuleTree& m, const Dataset& data, const UpdateRule& rule, int steps,
                  std::uint64_t seed);

/// One JSON object per line: a schema header, the step records, and a
/// divergence marker when training aborted.
std::string metrics_to_jsonl(const TrainResult& result);

// Synthetic datasets. Targets for the regression generators come from a
// teacher network of the same architecture with independently seeded
// weights, so the task is realizable.
Dataset make_teacher_regression(const ModuleTree& arch, int size, std::uint64_t seed);
Dataset make_spiral_classification(int size, std::uint64_t seed);

}  // namespace dualkit
