#pragma once

// Synthetic point clouds and tiny trajectories shared by unit and acceptance tests.

#include <cmath>
#include <numbers>
#include <random>

#include "nca_scope/grid.hpp"
#include "nca_scope/trajectory.hpp"

namespace fixture {

using nca_scope::PointMatrix;
inline constexpr double kPi = std::numbers::pi;

/// n evenly spaced points on a circle of the given radius.
inline PointMatrix circle(int n, double radius = 1.0) {
    PointMatrix p(n, 2);
    for (int i = 0; i < n; ++i) {
        p(i, 0) = radius * std::cos(2 * kPi * i / n);
        p(i, 1) = radius * std::sin(2 * kPi * i / n);
    }
    return p;
}

/// Fibonacci lattice on the unit sphere.
inline PointMatrix sphere(int n) {
    PointMatrix p(n, 3);
    const double golden = kPi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n; ++i) {
        const double z = 1.0 - 2.0 * (i + 0.5) / n;
        const double r = std::sqrt(1.0 - z * z);
        p(i, 0) = r * std::cos(golden * i);
        p(i, 1) = r * std::sin(golden * i);
        p(i, 2) = z;
    }
    return p;
}

/// Grid on a torus with major radius 2 and minor radius 0.7.
inline PointMatrix torus(int around, int through) {
    PointMatrix p(around * through, 3);
    int q = 0;
    for (int i = 0; i < around; ++i)
        for (int j = 0; j < through; ++j, ++q) {
            const double u = 2 * kPi * i / around, v = 2 * kPi * j / through;
            p(q, 0) = (2.0 + 0.7 * std::cos(v)) * std::cos(u);
            p(q, 1) = (2.0 + 0.7 * std::cos(v)) * std::sin(u);
            p(q, 2) = 0.7 * std::sin(v);
        }
    return p;
}

/// Two unit rings of n points each, centres 3 apart.
inline PointMatrix two_rings(int n) {
    PointMatrix p(2 * n, 2);
    const auto ring = circle(n);
    p.topRows(n) = ring;
    p.bottomRows(n) = ring;
    p.bottomRows(n).col(0).array() += 3.0;
    return p;
}

inline PointMatrix gaussian(int n, int d, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, scale);
    PointMatrix p(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) p(i, j) = g(rng);
    return p;
}

inline PointMatrix uniform(int n, int d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    PointMatrix p(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) p(i, j) = u(rng);
    return p;
}

/// Trajectory of random frames, optionally with every alpha set live.
inline nca_scope::Trajectory random_trajectory(int frames, int h, int w, int c, std::uint64_t seed, bool alive = true) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    nca_scope::Trajectory t;
    t.meta.height = h;
    t.meta.width = w;
    t.meta.channels = c;
    t.meta.mode = nca_scope::ChannelMode::RgbaAlive;
    t.meta.record_every = 1;
    t.meta.rng_seed = seed;
    for (int f = 0; f < frames; ++f) {
        nca_scope::GridState g(h, w, c, nca_scope::ChannelMode::RgbaAlive);
        for (auto& v : g.values) v = u(rng);
        if (alive)
            for (int r = 0; r < h; ++r)
                for (int col = 0; col < w; ++col) g.at(r, col, 3) = 0.5f + 0.5f * u(rng);
        t.frames.push_back(std::move(g));
    }
    return t;
}

}  // namespace fixture
