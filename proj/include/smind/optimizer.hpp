// optimizer.hpp - Adam, early stopping, gradient checking and the two registration stages.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "smind/smind_loss.hpp"
#include "smind/transform.hpp"
#include "smind/vwmi.hpp"
#include "smind/volume.hpp"

namespace smind {

// A loss or gradient became NaN or infinite during optimization.
class NumericalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    int64_t step = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    AdamState() = default;
    AdamState(size_t size, double learning_rate) : m(size, 0.0), v(size, 0.0), lr(learning_rate) {}
};

// In-place bias-corrected Adam update.
void adam_step(AdamState &state, std::span<double> params, std::span<const double> grad);

struct StageSchedule {
    double lr = 0.01;
    int max_iters = 500;
    int patience = 25;
    double min_delta = 1e-5;

    void validate() const;
};

// Stops once the best loss has not improved by more than min_delta for `patience`
// consecutive iterations.
class EarlyStopper {
  public:
    explicit EarlyStopper(const StageSchedule &schedule) : patience_(schedule.patience), min_delta_(schedule.min_delta) {}

    // Returns true when the stage should stop after this loss.
    bool update(double loss);
    bool improved() const { return improved_; }
    double best() const { return best_; }

  private:
    int patience_;
    double min_delta_;
    double best_ = 0.0;
    bool has_best_ = false;
    bool improved_ = false;
    int stale_ = 0;
};

struct TraceEntry {
    std::string stage;
    int iter = 0;
    double loss = 0.0;
};
using LossTrace = std::vector<TraceEntry>;

struct GradientCheckResult {
    std::vector<double> numeric;
    std::vector<double> relative_error;
    double max_relative_error = 0.0;
    double mean_relative_error = 0.0;
};

// Central differences of `loss` around `point`, compared with `analytic`. The
// relative error of a component is |a - n| / max(|a|, |n|, abs_floor).
GradientCheckResult gradient_check(const std::function<double(std::span<const double>)> &loss,
                                   std::span<const double> point, std::span<const double> analytic, double h,
                                   double abs_floor = 1e-12);

// frozen: the weight map is computed once at the start of each coarse phase.
// tracked: it follows the current alignment and is differentiated through.
// A frozen map pulls the optimum towards poses that keep its high-weight regions
// on edges, which shows up mostly as a scale bias.
enum class WeightUpdate { frozen, tracked };

struct CoarseConfig {
    HistogramConfig histogram;
    int window = 7;
    // Gaussian pre-smoothing (voxels) of both volumes; suppresses the bias of mutual
    // information towards off-grid sampling, which averages away independent noise.
    double smoothing_sigma = 1.0;
    WeightUpdate weight_update = WeightUpdate::tracked;
    StageSchedule schedule{0.01, 500, 25, 1e-5};
};

struct CoarseResult {
    AffineParams params;
    AffineParams rigid_params; // end of the rigid phase
    double loss = 0.0;
    int rigid_iterations = 0;
    int affine_iterations = 0;
    bool uniform_weight_fallback = false;
};

// Rigid phase at half resolution (rotation and translation, scales held at 1),
// then all nine parameters at full resolution. Parameters are rescaled per phase
// (rigid: translations in half fields of view; refinement: translations in voxels,
// rotations and scales in tenths) so one learning rate serves every component.
// Non-finite intensities or losses throw NumericalError.
CoarseResult coarse_register(const Volume &fixed, const Volume &moving, const CoarseConfig &cfg,
                             LossTrace *trace = nullptr);

struct DeformableConfig {
    DeformLossConfig loss;
    StageSchedule schedule{1e-4, 200, 20, 1e-5};
    // Gaussian pre-smoothing (voxels); without it the descriptor of the noisy fixed
    // image prefers the unwarped moving image over any off-grid resampling.
    double smoothing_sigma = 1.0;
    // Voxels of residual displacement per optimizer unit.
    double displacement_scale = 40.0;
};

struct DeformableResult {
    MultiResField field;
    double loss = 0.0;
    int iterations = 0;
};

DeformableResult deformable_register(const Volume &fixed, const Volume &moving_coarse, const DeformableConfig &cfg,
                                     LossTrace *trace = nullptr);

} // namespace smind
