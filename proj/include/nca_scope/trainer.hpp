#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nca_scope/grid.hpp"
#include "nca_scope/nca.hpp"
#include "nca_scope/optim.hpp"

namespace nca_scope {

enum class Precision { Single, Double };
enum class PoolRefresh { None, ReplaceWorst };

/// Colour-change regime: with some probability a non-seed sample receives a
/// signal early in its episode and must end on the other target.
struct SignalSchedule {
    bool enabled = false;
    SignalEvent signal;
    double probability = 0.5;
    int latest_step = 8;  // signal step drawn uniformly from [0, latest_step]
};

struct TrainConfig {
    int steps_min = 64;
    int steps_max = 96;
    long epochs = 1000;
    int batch_size = 8;
    int pool_size = 1024;
    PoolRefresh pool_refresh = PoolRefresh::ReplaceWorst;
    OptimizerConfig optimizer;
    double grad_norm_eps = 1e-8;
    std::uint64_t rng_seed = 0;
    Precision precision = Precision::Single;
    SignalSchedule signals;
    /// Lowest-loss samples per batch that get a rectangle zeroed before the episode.
    int damage_samples = 0;
    int damage_size = 4;
    long lr_decay_epoch = 0;  // 0 disables
    double lr_decay_factor = 0.1;
    long checkpoint_every = 0;
    std::function<void(long epoch, const NcaModel&)> on_checkpoint;
    std::function<void(long epoch, double loss)> on_epoch;

    void validate() const;
};

struct LossLog {
    std::vector<double> loss;
    std::vector<double> seconds;  // wall time of each epoch

    std::size_t size() const { return loss.size(); }
    void write_csv(const std::string& path) const;
};

struct TrainResult {
    NcaModel model;
    LossLog log;
};

/// Root mean squared error between the grid's visible channels and a target
/// with visible_channels(mode) channels.
double loss_rmse(const GridState& grid, const GridState& target);

/// Pool-based BPTT training. `targets` holds one image, or two when the
/// signal schedule is enabled (index 0 is the initial colour).
TrainResult train(const NcaModel& model, const std::vector<GridState>& targets, const TrainConfig& config);

enum class ParamTensor { W1, B1, W2, Kernels };

struct ParamCoordinate {
    ParamTensor tensor = ParamTensor::W2;
    std::size_t index = 0;  // flat row-major index within the tensor
};

std::size_t param_tensor_size(const NcaModel& model, ParamTensor tensor);

struct GradientReport {
    double loss = 0.0;
    NcaParams<double> grad;

    double at(ParamCoordinate c) const;
};

/// Analytic BPTT gradient of the first training episode's batch loss, in the
/// configured precision.
GradientReport bptt_gradient(const NcaModel& model, const std::vector<GridState>& targets,
                             const TrainConfig& config);

/// Loss of the first training episode with the given parameters (64-bit).
double episode_loss(const NcaParams<double>& params, const NcaModel& shape, const std::vector<GridState>& targets,
                    const TrainConfig& config);

/// Central difference (L(p+h) - L(p-h)) / 2h of the first-episode loss, 64-bit.
double finite_diff_gradient(const NcaModel& model, const std::vector<GridState>& targets, const TrainConfig& config,
                            ParamCoordinate coordinate, double h = 1e-5);

}  // namespace nca_scope
