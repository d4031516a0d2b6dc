#pragma once

#include <array>
#include <climits>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nca_scope/grid.hpp"

namespace nca_scope {

/// Fixed-size part of a .ncat file preceding the frame payload.
inline constexpr std::size_t kTrajectoryHeaderBytes = 52;

void save_trajectory(const Trajectory& trajectory, const std::string& path);
Trajectory load_trajectory(const std::string& path);

/// Bytes a trajectory occupies on disk: header + frames + length-prefixed event JSON.
std::size_t trajectory_file_size(const TrajectoryMeta& meta, std::size_t frames, const EventScript& events);

struct Provenance {
    enum class Kind : std::uint8_t { MacroFrame, MicroCell, Point };
    Kind kind = Kind::Point;
    long timestep = 0;
    int row = 0;
    int col = 0;

    static Provenance frame(long t) { return {Kind::MacroFrame, t, 0, 0}; }
    static Provenance cell(long t, int r, int c) { return {Kind::MicroCell, t, r, c}; }
    static Provenance point(long i) { return {Kind::Point, i, 0, 0}; }
    std::string to_string() const;
    static Provenance parse(const std::string& text);
    bool operator==(const Provenance&) const = default;
};

using Colour = std::array<double, 3>;
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// N x D points with a display colour and origin per point.
struct PointCloud {
    PointMatrix points;
    std::vector<Colour> colour;
    std::vector<Provenance> provenance;

    std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(points.cols()); }

    /// Throws ContractError unless N >= 1, entries finite, and per-point arrays match N.
    void validate() const;
    /// Rows `indices` in the given order.
    PointCloud select(const std::vector<std::size_t>& indices) const;
    /// Same colours/provenance, new coordinates (e.g. a projection).
    PointCloud with_points(PointMatrix coords) const;
};

void write_cloud_csv(const PointCloud& cloud, const std::string& path);
PointCloud read_cloud_csv(const std::string& path);

/// Timestep window [begin, end) used to restrict extraction.
struct TimeRange {
    long begin = 0;
    long end = LONG_MAX;
    bool contains(long t) const { return t >= begin && t < end; }
};

/// Mean RGB over live cells (raw alpha above threshold), clamped to [0,1].
Colour frame_colour(const GridState& frame, float alive_threshold);

/// One point per frame, D = H*W*C in storage order.
PointCloud extract_macroscopic(const Trajectory& trajectory, TimeRange range = {});

/// One point per (frame, cell), D = C. Dead cells use the raw alpha test.
/// Throws ContractError if nothing survives the dead-cell filter.
PointCloud extract_microscopic(const Trajectory& trajectory, bool exclude_dead, std::size_t max_points,
                               std::uint64_t rng_seed, TimeRange range = {});

/// Per-cell points restricted to a spatial window and timestep range.
PointCloud window_subsample(const Trajectory& trajectory, const Rect& window, TimeRange range);

}  // namespace nca_scope
