#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace nca_scope {

enum class ChannelMode : std::uint8_t {
    RgbaAlive = 0,  // channels 0..3 are RGBA, alpha (3) gates liveness
    RgbPlain = 1,   // channels 0..2 are RGB, every cell is live
};

enum class Padding : std::uint8_t { Circular = 0, Zero = 1 };

inline constexpr int kAlphaChannel = 3;

constexpr int visible_channels(ChannelMode mode) { return mode == ChannelMode::RgbaAlive ? 4 : 3; }

/// Half-open cell rectangle [row0, row1) x [col0, col1).
struct Rect {
    int row0 = 0, col0 = 0, row1 = 0, col1 = 0;

    int rows() const { return row1 - row0; }
    int cols() const { return col1 - col0; }
    bool empty() const { return rows() <= 0 || cols() <= 0; }
    long area() const { return empty() ? 0 : static_cast<long>(rows()) * cols(); }
    bool contains(int r, int c) const { return r >= row0 && r < row1 && c >= col0 && c < col1; }
    bool operator==(const Rect&) const = default;
};

/// One lattice snapshot. Values are row-major with the channel index fastest,
/// i.e. values[(row * width + col) * channels + ch].
struct GridState {
    int height = 0;
    int width = 0;
    int channels = 0;
    ChannelMode mode = ChannelMode::RgbaAlive;
    std::vector<float> values;

    GridState() = default;
    GridState(int h, int w, int c, ChannelMode m);

    std::size_t cell_count() const { return static_cast<std::size_t>(height) * width; }
    std::size_t index(int r, int c, int ch) const {
        return (static_cast<std::size_t>(r) * width + c) * channels + ch;
    }
    float& at(int r, int c, int ch) { return values[index(r, c, ch)]; }
    float at(int r, int c, int ch) const { return values[index(r, c, ch)]; }
    std::span<const float> cell(int r, int c) const {
        return std::span(values).subspan(index(r, c, 0), channels);
    }

    bool same_shape(const GridState& other) const {
        return height == other.height && width == other.width && channels == other.channels &&
               mode == other.mode;
    }
    bool all_finite() const;
    bool operator==(const GridState&) const = default;
};

/// Writes `value` into one channel over a disc around a (jittered) centre.
struct SignalEvent {
    int row = 0;
    int col = 0;
    int jitter_radius = 0;
    int target_channel = 0;
    float value = 1.0f;
    int radius = 1;
    bool operator==(const SignalEvent&) const = default;
};

/// Overwrites every channel of a rectangle with `fill`.
struct PerturbEvent {
    Rect rect;
    float fill = 0.0f;
    bool operator==(const PerturbEvent&) const = default;
};

struct Event {
    long timestep = 0;
    std::variant<SignalEvent, PerturbEvent> payload;
    bool operator==(const Event&) const = default;

    bool is_signal() const { return std::holds_alternative<SignalEvent>(payload); }
};

struct EventScript {
    std::vector<Event> events;

    /// Throws ValidationError when timesteps decrease or anything falls outside
    /// the grid. Signal centres must be in bounds before jitter; the jittered
    /// centre is clamped at application time.
    void validate(int height, int width, int channels) const;

    long signal_count() const;
    bool operator==(const EventScript&) const = default;

    std::string to_json() const;
    static EventScript from_json(const std::string& text);
};

/// Signals at first, first + period, ... strictly before `steps`.
EventScript periodic_signals(const SignalEvent& signal, long period, long steps, long first = -1,
                             long last = -1);

/// Merges two scripts keeping timesteps nondecreasing (stable on ties: `a` first).
EventScript merge_scripts(const EventScript& a, const EventScript& b);

struct TrajectoryMeta {
    int height = 0;
    int width = 0;
    int channels = 0;
    ChannelMode mode = ChannelMode::RgbaAlive;
    std::uint32_t record_every = 1;
    std::uint64_t rng_seed = 0;
    std::uint64_t model_hash = 0;
    float alive_threshold = 0.1f;
    bool operator==(const TrajectoryMeta&) const = default;
};

/// Recorded rollout: frames at t = 0, record_every, 2*record_every, ...
/// The event log holds the events as applied (signal centres after jitter).
struct Trajectory {
    TrajectoryMeta meta;
    std::vector<GridState> frames;
    EventScript events;

    long timestep_of(std::size_t frame) const { return static_cast<long>(frame) * meta.record_every; }
    bool operator==(const Trajectory&) const = default;
};

}  // namespace nca_scope
