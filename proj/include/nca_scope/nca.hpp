#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nca_scope/grid.hpp"

namespace nca_scope {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

/// 3x3 stencil weights, row-major over offsets (dr, dc) in {-1,0,1}^2.
template <typename T>
using Kernel3 = std::array<T, 9>;

std::vector<Kernel3<float>> default_kernels();  // identity, Sobel-x, Sobel-y (each / 8)

/// Trainable tensors of the per-cell update network, plus the perception
/// kernels. Gradients use the same layout.
template <typename T>
struct NcaParams {
    std::vector<Kernel3<T>> kernels;
    RowMatrix<T> w1;  // (kernels * channels) x hidden
    RowVector<T> b1;  // hidden
    RowMatrix<T> w2;  // hidden x channels

    template <typename U>
    NcaParams<U> cast() const {
        NcaParams<U> out;
        for (const auto& k : kernels) {
            Kernel3<U> kk;
            for (int i = 0; i < 9; ++i) kk[i] = static_cast<U>(k[i]);
            out.kernels.push_back(kk);
        }
        out.w1 = w1.template cast<U>();
        out.b1 = b1.template cast<U>();
        out.w2 = w2.template cast<U>();
        return out;
    }

    NcaParams zeros_like() const {
        NcaParams z;
        z.kernels.assign(kernels.size(), Kernel3<T>{});
        z.w1 = RowMatrix<T>::Zero(w1.rows(), w1.cols());
        z.b1 = RowVector<T>::Zero(b1.size());
        z.w2 = RowMatrix<T>::Zero(w2.rows(), w2.cols());
        return z;
    }

    bool operator==(const NcaParams& o) const {
        return kernels == o.kernels && w1 == o.w1 && b1 == o.b1 && w2 == o.w2;
    }
};

struct NcaModel {
    int channels = 16;
    int hidden_width = 128;
    ChannelMode mode = ChannelMode::RgbaAlive;
    Padding padding = Padding::Circular;
    float fire_rate = 0.5f;
    float alive_threshold = 0.1f;
    bool train_kernels = false;
    NcaParams<float> params;

    int kernel_count() const { return static_cast<int>(params.kernels.size()); }
    int perception_width() const { return kernel_count() * channels; }

    /// Throws ContractError if the tensor shapes disagree with the declared dims.
    void validate() const;
    std::uint64_t fingerprint() const;
    bool operator==(const NcaModel&) const = default;
};

struct ModelInit {
    int channels = 16;
    int hidden_width = 128;
    ChannelMode mode = ChannelMode::RgbaAlive;
    Padding padding = Padding::Circular;
    float fire_rate = 0.5f;
    float alive_threshold = 0.1f;
    float w2_scale = 0.0f;  // zero output layer: a fresh model starts as the identity map
    std::uint64_t seed = 0;
};

/// Glorot-uniform w1, zero b1, w2 uniform in +-w2_scale, default kernels.
NcaModel make_model(const ModelInit& init);

void save_model(const NcaModel& model, const std::string& path);
NcaModel load_model(const std::string& path);

/// Per-cell perception, rows = cells (row-major), columns = kernel-major
/// blocks of `channels`: column k*C + c is kernel k applied to channel c.
RowMatrix<float> perceive(const GridState& grid, const NcaModel& model);

/// One stochastic update. `step` is folded into the fire-mask key so a rollout
/// can reuse one seed for every step.
GridState update_step(const GridState& grid, const NcaModel& model, std::uint64_t rng_seed,
                      long step = 0);

/// Seed state: zeros except the centre cell, whose non-RGB channels are 1.
GridState seed_state(int height, int width, int channels, ChannelMode mode);

GridState apply_perturbation(const GridState& grid, const Rect& rect, float fill = 0.0f);

/// Resolves the jittered centre of a signal; the offset is drawn from
/// (rng_seed, event_index) and the centre clamped to the grid.
SignalEvent resolve_signal(int height, int width, const SignalEvent& signal, std::uint64_t rng_seed,
                           std::size_t event_index);

/// Cell indices (row * width + col) covered by a resolved signal disc.
std::vector<int> signal_footprint(int height, int width, const SignalEvent& resolved);

/// Applies a signal. The jitter offset is drawn from (rng_seed, event_index);
/// returns the event with its resolved centre.
SignalEvent apply_signal(GridState& grid, const SignalEvent& signal, std::uint64_t rng_seed,
                         std::size_t event_index);

/// Cells whose 3x3 max-pooled alpha exceeds the threshold (all cells in RGB_PLAIN).
std::vector<std::uint8_t> alive_mask(const GridState& grid, Padding padding, float threshold);

Trajectory rollout(const NcaModel& model, const GridState& initial, long steps, const EventScript& events,
                   std::uint64_t rng_seed, std::uint32_t record_every = 1);

}  // namespace nca_scope
