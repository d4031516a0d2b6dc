#pragma once

// Scalar-generic forward/backward of one NCA update. The engine instantiates it
// with float; the trainer uses float or double (gradient-check mode).

#include <algorithm>
#include <cstdint>
#include <vector>

#include "nca_scope/common.hpp"
#include "nca_scope/nca.hpp"

namespace nca_scope::detail {

/// Neighbour table for 3x3 stencils: neighbours[cell * 9 + k] is the cell at
/// offset k (row-major over dr, dc in {-1,0,1}) or -1 outside a zero-padded grid.
struct Stencil {
    int height = 0;
    int width = 0;
    std::vector<int> neighbours;

    Stencil() = default;
    Stencil(int h, int w, Padding padding) : height(h), width(w), neighbours(static_cast<std::size_t>(h) * w * 9) {
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                for (int k = 0; k < 9; ++k) {
                    int rr = r + k / 3 - 1;
                    int cc = c + k % 3 - 1;
                    int idx = -1;
                    if (padding == Padding::Circular) {
                        rr = (rr + h) % h;
                        cc = (cc + w) % w;
                        idx = rr * w + cc;
                    } else if (rr >= 0 && rr < h && cc >= 0 && cc < w) {
                        idx = rr * w + cc;
                    }
                    neighbours[(static_cast<std::size_t>(r) * w + c) * 9 + k] = idx;
                }
    }

    int cells() const { return height * width; }
};

template <typename T>
void perceive(const RowMatrix<T>& state, const std::vector<Kernel3<T>>& kernels, const Stencil& st,
              RowMatrix<T>& out) {
    const int cells = st.cells();
    const auto C = state.cols();
    out.setZero(cells, static_cast<Eigen::Index>(kernels.size()) * C);
    for (int cell = 0; cell < cells; ++cell) {
        const int* nb = &st.neighbours[static_cast<std::size_t>(cell) * 9];
        for (int k = 0; k < 9; ++k) {
            if (nb[k] < 0) continue;
            auto src = state.row(nb[k]);
            for (std::size_t q = 0; q < kernels.size(); ++q) {
                const T w = kernels[q][k];
                if (w == T(0)) continue;
                out.row(cell).segment(static_cast<Eigen::Index>(q) * C, C) += w * src;
            }
        }
    }
}

/// Accumulates the adjoint of `perceive` into grad_state.
template <typename T>
void perceive_adjoint(const RowMatrix<T>& grad_perception, const std::vector<Kernel3<T>>& kernels,
                      const Stencil& st, RowMatrix<T>& grad_state) {
    const int cells = st.cells();
    const auto C = grad_state.cols();
    for (int cell = 0; cell < cells; ++cell) {
        const int* nb = &st.neighbours[static_cast<std::size_t>(cell) * 9];
        for (int k = 0; k < 9; ++k) {
            if (nb[k] < 0) continue;
            for (std::size_t q = 0; q < kernels.size(); ++q) {
                const T w = kernels[q][k];
                if (w == T(0)) continue;
                grad_state.row(nb[k]) += w * grad_perception.row(cell).segment(static_cast<Eigen::Index>(q) * C, C);
            }
        }
    }
}

template <typename T>
void kernel_gradient(const RowMatrix<T>& state, const RowMatrix<T>& grad_perception, const Stencil& st,
                     std::vector<Kernel3<T>>& grad_kernels) {
    const auto C = state.cols();
    for (int cell = 0; cell < st.cells(); ++cell) {
        const int* nb = &st.neighbours[static_cast<std::size_t>(cell) * 9];
        for (int k = 0; k < 9; ++k) {
            if (nb[k] < 0) continue;
            for (std::size_t q = 0; q < grad_kernels.size(); ++q)
                grad_kernels[q][k] +=
                    grad_perception.row(cell).segment(static_cast<Eigen::Index>(q) * C, C).dot(state.row(nb[k]));
        }
    }
}

/// 3x3 max-pool of the alpha channel compared against the threshold.
template <typename T>
std::vector<std::uint8_t> living(const RowMatrix<T>& state, const Stencil& st, T threshold) {
    std::vector<std::uint8_t> out(st.cells(), 0);
    for (int cell = 0; cell < st.cells(); ++cell) {
        const int* nb = &st.neighbours[static_cast<std::size_t>(cell) * 9];
        for (int k = 0; k < 9; ++k) {
            if (nb[k] >= 0 && state(nb[k], kAlphaChannel) > threshold) {
                out[cell] = 1;
                break;
            }
        }
    }
    return out;
}

/// Bernoulli(fire_rate) per cell, keyed on (seed, step, row, col).
template <typename T>
std::vector<T> fire_mask(std::uint64_t seed, long step, int height, int width, double fire_rate) {
    std::vector<T> mask(static_cast<std::size_t>(height) * width);
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) {
            const double u = unit_from_hash(hash_key(seed, static_cast<std::uint64_t>(step),
                                                     static_cast<std::uint64_t>(r),
                                                     static_cast<std::uint64_t>(c)));
            mask[static_cast<std::size_t>(r) * width + c] = u < fire_rate ? T(1) : T(0);
        }
    return mask;
}

struct StepSpec {
    ChannelMode mode = ChannelMode::RgbaAlive;
    double alive_threshold = 0.1;
    const Stencil* stencil = nullptr;
};

/// Intermediate values kept for the backward pass.
template <typename T>
struct StepTape {
    RowMatrix<T> input;
    RowMatrix<T> perception;
    RowMatrix<T> pre_activation;
    RowMatrix<T> hidden;
    std::vector<T> fire;
    std::vector<std::uint8_t> life;  // empty in RGB_PLAIN mode
};

template <typename T>
RowMatrix<T> step_forward(const RowMatrix<T>& state, const NcaParams<T>& p, const StepSpec& spec,
                          std::vector<T> fire, StepTape<T>* tape) {
    const Stencil& st = *spec.stencil;
    RowMatrix<T> perception;
    perceive(state, p.kernels, st, perception);
    RowMatrix<T> pre = perception * p.w1;
    pre.rowwise() += p.b1;
    RowMatrix<T> hidden = pre.cwiseMax(T(0));
    RowMatrix<T> ds = hidden * p.w2;

    RowMatrix<T> next = state;
    for (int cell = 0; cell < st.cells(); ++cell)
        if (fire[cell] != T(0)) next.row(cell) += ds.row(cell);

    std::vector<std::uint8_t> life;
    if (spec.mode == ChannelMode::RgbaAlive) {
        const T thr = static_cast<T>(spec.alive_threshold);
        auto before = living(state, st, thr);
        auto after = living(next, st, thr);
        life.resize(before.size());
        for (std::size_t i = 0; i < life.size(); ++i) {
            life[i] = before[i] & after[i];
            if (!life[i]) next.row(static_cast<Eigen::Index>(i)).setZero();
        }
    }

    if (tape) {
        tape->input = state;
        tape->perception = std::move(perception);
        tape->pre_activation = std::move(pre);
        tape->hidden = std::move(hidden);
        tape->fire = std::move(fire);
        tape->life = std::move(life);
    }
    return next;
}

/// Backward through one step. Fire and life masks are treated as constants.
/// Overwrites grad_in; accumulates into grads.
template <typename T>
void step_backward(const StepTape<T>& tape, const NcaParams<T>& p, const StepSpec& spec,
                   const RowMatrix<T>& grad_out, RowMatrix<T>& grad_in, NcaParams<T>& grads,
                   bool want_kernels) {
    const Stencil& st = *spec.stencil;
    RowMatrix<T> g = grad_out;
    if (!tape.life.empty())
        for (std::size_t i = 0; i < tape.life.size(); ++i)
            if (!tape.life[i]) g.row(static_cast<Eigen::Index>(i)).setZero();

    RowMatrix<T> g_ds = g;
    for (int cell = 0; cell < st.cells(); ++cell)
        if (tape.fire[cell] == T(0)) g_ds.row(cell).setZero();

    grads.w2.noalias() += tape.hidden.transpose() * g_ds;
    RowMatrix<T> g_pre = g_ds * p.w2.transpose();
    g_pre = g_pre.cwiseProduct((tape.pre_activation.array() > T(0)).template cast<T>().matrix());
    grads.w1.noalias() += tape.perception.transpose() * g_pre;
    grads.b1 += g_pre.colwise().sum();
    RowMatrix<T> g_perception = g_pre * p.w1.transpose();

    grad_in = std::move(g);
    perceive_adjoint(g_perception, p.kernels, st, grad_in);
    if (want_kernels) kernel_gradient(tape.input, g_perception, st, grads.kernels);
}

template <typename T>
RowMatrix<T> to_matrix(const GridState& grid) {
    RowMatrix<T> m(static_cast<Eigen::Index>(grid.cell_count()), grid.channels);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(grid.values[static_cast<std::size_t>(i)]);
    return m;
}

template <typename T>
void from_matrix(const RowMatrix<T>& m, GridState& grid) {
    for (Eigen::Index i = 0; i < m.size(); ++i) grid.values[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
}

}  // namespace nca_scope::detail
