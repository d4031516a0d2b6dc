#include "nca_scope/nca.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "nca_scope/common.hpp"
#include "nca_scope/detail/step_kernel.hpp"

namespace nca_scope {

namespace {

constexpr std::string_view kModelMagic = "NCAM";
constexpr std::uint32_t kModelVersion = 1;

void write_model(std::ostream& out, const NcaModel& m) {
    binio::write_magic(out, kModelMagic);
    binio::write(out, kModelVersion);
    binio::write(out, static_cast<std::uint8_t>(m.mode));
    binio::write(out, static_cast<std::uint8_t>(m.padding));
    binio::write(out, static_cast<std::uint8_t>(m.train_kernels ? 1 : 0));
    binio::write(out, std::uint8_t{0});
    binio::write(out, static_cast<std::uint32_t>(m.channels));
    binio::write(out, static_cast<std::uint32_t>(m.kernel_count()));
    binio::write(out, static_cast<std::uint32_t>(m.hidden_width));
    for (const auto& k : m.params.kernels) binio::write_array(out, std::span<const float>(k));
    binio::write_array(out, std::span<const float>(m.params.w1.data(), static_cast<std::size_t>(m.params.w1.size())));
    binio::write_array(out, std::span<const float>(m.params.b1.data(), static_cast<std::size_t>(m.params.b1.size())));
    binio::write_array(out, std::span<const float>(m.params.w2.data(), static_cast<std::size_t>(m.params.w2.size())));
    binio::write(out, m.fire_rate);
    binio::write(out, m.alive_threshold);
}

}  // namespace

std::vector<Kernel3<float>> default_kernels() {
    const Kernel3<float> identity{0, 0, 0, 0, 1, 0, 0, 0, 0};
    Kernel3<float> sobel_x{-1, 0, 1, -2, 0, 2, -1, 0, 1};
    Kernel3<float> sobel_y{-1, -2, -1, 0, 0, 0, 1, 2, 1};
    for (auto& v : sobel_x) v /= 8.0f;
    for (auto& v : sobel_y) v /= 8.0f;
    return {identity, sobel_x, sobel_y};
}

void NcaModel::validate() const {
    if (channels < visible_channels(mode))
        throw ContractError("model has fewer channels than its visible channel block");
    if (params.kernels.empty()) throw ContractError("model needs at least one perception kernel");
    if (params.w1.rows() != perception_width() || params.w1.cols() != hidden_width)
        throw ContractError("w1 must be (kernels*channels) x hidden");
    if (params.b1.size() != hidden_width) throw ContractError("b1 must have hidden_width entries");
    if (params.w2.rows() != hidden_width || params.w2.cols() != channels)
        throw ContractError("w2 must be hidden x channels");
    if (!(fire_rate >= 0.0f && fire_rate <= 1.0f)) throw ContractError("fire_rate must lie in [0,1]");
}

std::uint64_t NcaModel::fingerprint() const {
    std::ostringstream out(std::ios::binary);
    write_model(out, *this);
    const std::string bytes = out.str();
    return fnv1a64(std::as_bytes(std::span(bytes.data(), bytes.size())));
}

NcaModel make_model(const ModelInit& init) {
    NcaModel m;
    m.channels = init.channels;
    m.hidden_width = init.hidden_width;
    m.mode = init.mode;
    m.padding = init.padding;
    m.fire_rate = init.fire_rate;
    m.alive_threshold = init.alive_threshold;
    m.params.kernels = default_kernels();

    std::mt19937_64 rng(hash_key(init.seed, 0x6d6f64656cULL));
    const int fan_in = m.perception_width();
    const float limit = std::sqrt(6.0f / static_cast<float>(fan_in + init.hidden_width));
    std::uniform_real_distribution<float> w1_dist(-limit, limit);
    m.params.w1.resize(fan_in, init.hidden_width);
    for (Eigen::Index i = 0; i < m.params.w1.size(); ++i) m.params.w1.data()[i] = w1_dist(rng);
    m.params.b1 = RowVector<float>::Zero(init.hidden_width);
    m.params.w2 = RowMatrix<float>::Zero(init.hidden_width, init.channels);
    if (init.w2_scale > 0.0f) {
        std::uniform_real_distribution<float> w2_dist(-init.w2_scale, init.w2_scale);
        for (Eigen::Index i = 0; i < m.params.w2.size(); ++i) m.params.w2.data()[i] = w2_dist(rng);
    }
    m.validate();
    return m;
}

void save_model(const NcaModel& model, const std::string& path) {
    model.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write model file " + path);
    write_model(out, model);
    if (!out) throw Error("write failed for " + path);
}

NcaModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open model file " + path);
    binio::expect_magic(in, kModelMagic);
    const auto version = binio::read<std::uint32_t>(in, "model version");
    if (version != kModelVersion)
        throw VersionMismatchError("model version " + std::to_string(version) + " unsupported");
    NcaModel m;
    const auto mode = binio::read<std::uint8_t>(in, "channel mode");
    const auto padding = binio::read<std::uint8_t>(in, "padding");
    const auto train_kernels = binio::read<std::uint8_t>(in, "train_kernels");
    binio::read<std::uint8_t>(in, "reserved");
    if (mode > 1 || padding > 1) throw CorruptHeaderError("model header has invalid enum values");
    m.mode = static_cast<ChannelMode>(mode);
    m.padding = static_cast<Padding>(padding);
    m.train_kernels = train_kernels != 0;
    m.channels = static_cast<int>(binio::read<std::uint32_t>(in, "channels"));
    const auto kernels = binio::read<std::uint32_t>(in, "kernel count");
    m.hidden_width = static_cast<int>(binio::read<std::uint32_t>(in, "hidden width"));
    if (m.channels <= 0 || m.channels > 4096 || kernels == 0 || kernels > 64 || m.hidden_width <= 0 ||
        m.hidden_width > 65536)
        throw CorruptHeaderError("model header dimensions out of range");
    m.params.kernels.resize(kernels);
    for (auto& k : m.params.kernels) binio::read_array(in, std::span<float>(k), "kernels");
    m.params.w1.resize(static_cast<Eigen::Index>(kernels) * m.channels, m.hidden_width);
    m.params.b1.resize(m.hidden_width);
    m.params.w2.resize(m.hidden_width, m.channels);
    binio::read_array(in, std::span<float>(m.params.w1.data(), static_cast<std::size_t>(m.params.w1.size())), "w1");
    binio::read_array(in, std::span<float>(m.params.b1.data(), static_cast<std::size_t>(m.params.b1.size())), "b1");
    binio::read_array(in, std::span<float>(m.params.w2.data(), static_cast<std::size_t>(m.params.w2.size())), "w2");
    m.fire_rate = binio::read<float>(in, "fire_rate");
    m.alive_threshold = binio::read<float>(in, "alive_threshold");
    m.validate();
    return m;
}

namespace {

void check_grid(const GridState& grid, const NcaModel& model) {
    if (grid.channels != model.channels)
        throw ContractError("grid has " + std::to_string(grid.channels) + " channels, model expects " +
                            std::to_string(model.channels));
    if (grid.mode != model.mode) throw ContractError("grid and model disagree on channel mode");
}

GridState step_with(const GridState& grid, const NcaModel& model, const detail::Stencil& stencil,
                    std::uint64_t seed, long step) {
    detail::StepSpec spec{model.mode, model.alive_threshold, &stencil};
    auto state = detail::to_matrix<float>(grid);
    auto fire = detail::fire_mask<float>(seed, step, grid.height, grid.width, model.fire_rate);
    auto next = detail::step_forward<float>(state, model.params, spec, std::move(fire), nullptr);
    GridState out = grid;
    detail::from_matrix(next, out);
    return out;
}

}  // namespace

RowMatrix<float> perceive(const GridState& grid, const NcaModel& model) {
    check_grid(grid, model);
    detail::Stencil stencil(grid.height, grid.width, model.padding);
    RowMatrix<float> out;
    detail::perceive(detail::to_matrix<float>(grid), model.params.kernels, stencil, out);
    return out;
}

GridState update_step(const GridState& grid, const NcaModel& model, std::uint64_t rng_seed, long step) {
    check_grid(grid, model);
    model.validate();
    detail::Stencil stencil(grid.height, grid.width, model.padding);
    return step_with(grid, model, stencil, rng_seed, step);
}

GridState seed_state(int height, int width, int channels, ChannelMode mode) {
    if (height < 3 || width < 3) throw ContractError("seed grid must be at least 3x3");
    GridState g(height, width, channels, mode);
    for (int ch = 3; ch < channels; ++ch) g.at(height / 2, width / 2, ch) = 1.0f;
    return g;
}

GridState apply_perturbation(const GridState& grid, const Rect& rect, float fill) {
    if (rect.row0 < 0 || rect.col0 < 0 || rect.row1 > grid.height || rect.col1 > grid.width ||
        rect.row0 > rect.row1 || rect.col0 > rect.col1)
        throw ValidationError("perturbation rectangle outside grid");
    GridState out = grid;
    for (int r = rect.row0; r < rect.row1; ++r)
        for (int c = rect.col0; c < rect.col1; ++c)
            for (int ch = 0; ch < grid.channels; ++ch) out.at(r, c, ch) = fill;
    return out;
}

SignalEvent resolve_signal(int height, int width, const SignalEvent& signal, std::uint64_t rng_seed,
                           std::size_t event_index) {
    SignalEvent resolved = signal;
    if (signal.jitter_radius > 0) {
        const auto span = static_cast<std::uint64_t>(2 * signal.jitter_radius + 1);
        const auto h = hash_key(rng_seed, 0x7369676eULL, event_index);
        const int dr = static_cast<int>(h % span) - signal.jitter_radius;
        const int dc = static_cast<int>((h / span) % span) - signal.jitter_radius;
        resolved.row = std::clamp(signal.row + dr, 0, height - 1);
        resolved.col = std::clamp(signal.col + dc, 0, width - 1);
    }
    resolved.jitter_radius = 0;
    return resolved;
}

std::vector<int> signal_footprint(int height, int width, const SignalEvent& resolved) {
    std::vector<int> cells;
    const int rad = resolved.radius;
    for (int r = std::max(0, resolved.row - rad); r <= std::min(height - 1, resolved.row + rad); ++r)
        for (int c = std::max(0, resolved.col - rad); c <= std::min(width - 1, resolved.col + rad); ++c) {
            const int dr = r - resolved.row, dc = c - resolved.col;
            if (dr * dr + dc * dc <= rad * rad) cells.push_back(r * width + c);
        }
    return cells;
}

SignalEvent apply_signal(GridState& grid, const SignalEvent& signal, std::uint64_t rng_seed,
                         std::size_t event_index) {
    const SignalEvent resolved = resolve_signal(grid.height, grid.width, signal, rng_seed, event_index);
    for (int cell : signal_footprint(grid.height, grid.width, resolved))
        grid.values[static_cast<std::size_t>(cell) * grid.channels + signal.target_channel] = signal.value;
    return resolved;
}

std::vector<std::uint8_t> alive_mask(const GridState& grid, Padding padding, float threshold) {
    if (grid.mode == ChannelMode::RgbPlain) return std::vector<std::uint8_t>(grid.cell_count(), 1);
    detail::Stencil stencil(grid.height, grid.width, padding);
    return detail::living<float>(detail::to_matrix<float>(grid), stencil, threshold);
}

Trajectory rollout(const NcaModel& model, const GridState& initial, long steps, const EventScript& events,
                   std::uint64_t rng_seed, std::uint32_t record_every) {
    if (steps < 0) throw ContractError("steps must be nonnegative");
    if (record_every == 0) throw ContractError("record_every must be positive");
    check_grid(initial, model);
    model.validate();
    events.validate(initial.height, initial.width, initial.channels);

    Trajectory traj;
    traj.meta = {initial.height, initial.width,  initial.channels,      initial.mode,
                 record_every,   rng_seed,       model.fingerprint(),   model.alive_threshold};
    traj.frames.reserve(static_cast<std::size_t>(steps / record_every) + 1);
    traj.frames.push_back(initial);

    detail::Stencil stencil(initial.height, initial.width, model.padding);
    GridState state = initial;
    std::size_t next_event = 0;
    for (long t = 0; t < steps; ++t) {
        while (next_event < events.events.size() && events.events[next_event].timestep == t) {
            const Event& e = events.events[next_event];
            if (const auto* s = std::get_if<SignalEvent>(&e.payload)) {
                traj.events.events.push_back({t, apply_signal(state, *s, rng_seed, next_event)});
            } else {
                const auto& p = std::get<PerturbEvent>(e.payload);
                state = apply_perturbation(state, p.rect, p.fill);
                traj.events.events.push_back(e);
            }
            ++next_event;
        }
        state = step_with(state, model, stencil, rng_seed, t);
        if ((t + 1) % record_every == 0) traj.frames.push_back(state);
    }
    return traj;
}

}  // namespace nca_scope
