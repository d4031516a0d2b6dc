#include "nca_scope/trajectory.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "nca_scope/common.hpp"

namespace nca_scope {

namespace {

constexpr std::string_view kTrajectoryMagic = "NCAT";
constexpr std::uint32_t kTrajectoryVersion = 1;

}  // namespace

std::size_t trajectory_file_size(const TrajectoryMeta& meta, std::size_t frames, const EventScript& events) {
    const std::size_t frame_bytes = static_cast<std::size_t>(meta.height) * meta.width * meta.channels * sizeof(float);
    return kTrajectoryHeaderBytes + frames * frame_bytes + sizeof(std::uint32_t) + events.to_json().size();
}

void save_trajectory(const Trajectory& t, const std::string& path) {
    if (t.frames.empty()) throw ContractError("trajectory has no frames");
    for (const auto& f : t.frames)
        if (f.height != t.meta.height || f.width != t.meta.width || f.channels != t.meta.channels)
            throw ContractError("trajectory frames disagree with metadata");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write trajectory " + path);
    binio::write_magic(out, kTrajectoryMagic);
    binio::write(out, kTrajectoryVersion);
    binio::write(out, static_cast<std::uint32_t>(t.meta.height));
    binio::write(out, static_cast<std::uint32_t>(t.meta.width));
    binio::write(out, static_cast<std::uint32_t>(t.meta.channels));
    binio::write(out, static_cast<std::uint8_t>(t.meta.mode));
    const std::uint8_t pad[3] = {0, 0, 0};
    out.write(reinterpret_cast<const char*>(pad), 3);
    binio::write(out, t.meta.record_every);
    binio::write(out, t.meta.rng_seed);
    binio::write(out, t.meta.model_hash);
    binio::write(out, t.meta.alive_threshold);
    binio::write(out, static_cast<std::uint32_t>(t.frames.size()));
    for (const auto& f : t.frames) binio::write_array(out, std::span<const float>(f.values));
    const std::string json = t.events.to_json();
    binio::write(out, static_cast<std::uint32_t>(json.size()));
    out.write(json.data(), static_cast<std::streamsize>(json.size()));
    if (!out) throw Error("write failed for " + path);
}

Trajectory load_trajectory(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open trajectory " + path);
    binio::expect_magic(in, kTrajectoryMagic);
    const auto version = binio::read<std::uint32_t>(in, "trajectory version");
    if (version != kTrajectoryVersion)
        throw VersionMismatchError("trajectory version " + std::to_string(version) + " unsupported");
    Trajectory t;
    t.meta.height = static_cast<int>(binio::read<std::uint32_t>(in, "height"));
    t.meta.width = static_cast<int>(binio::read<std::uint32_t>(in, "width"));
    t.meta.channels = static_cast<int>(binio::read<std::uint32_t>(in, "channels"));
    const auto mode = binio::read<std::uint8_t>(in, "channel mode");
    std::uint8_t pad[3];
    binio::read_array(in, std::span<std::uint8_t>(pad, 3), "header padding");
    t.meta.record_every = binio::read<std::uint32_t>(in, "record_every");
    t.meta.rng_seed = binio::read<std::uint64_t>(in, "rng_seed");
    t.meta.model_hash = binio::read<std::uint64_t>(in, "model_hash");
    t.meta.alive_threshold = binio::read<float>(in, "alive_threshold");
    const auto frames = binio::read<std::uint32_t>(in, "frame count");
    if (mode > 1 || t.meta.height <= 0 || t.meta.width <= 0 || t.meta.channels < 3 || t.meta.record_every == 0 ||
        frames == 0 || t.meta.height > 1 << 16 || t.meta.width > 1 << 16 || t.meta.channels > 4096)
        throw CorruptHeaderError("trajectory header fields out of range");
    t.meta.mode = static_cast<ChannelMode>(mode);

    t.frames.reserve(frames);
    for (std::uint32_t i = 0; i < frames; ++i) {
        GridState g(t.meta.height, t.meta.width, t.meta.channels, t.meta.mode);
        binio::read_array(in, std::span<float>(g.values), "frame payload");
        t.frames.push_back(std::move(g));
    }
    const auto json_len = binio::read<std::uint32_t>(in, "event log length");
    std::string json(json_len, '\0');
    in.read(json.data(), json_len);
    if (in.gcount() != static_cast<std::streamsize>(json_len)) throw TruncatedError("truncated event log");
    try {
        t.events = EventScript::from_json(json);
    } catch (const ValidationError& e) {
        throw CorruptHeaderError(std::string("corrupt event log: ") + e.what());
    }
    return t;
}

std::string Provenance::to_string() const {
    switch (kind) {
        case Kind::MacroFrame: return "frame:" + std::to_string(timestep);
        case Kind::MicroCell:
            return "cell:" + std::to_string(timestep) + ":" + std::to_string(row) + ":" + std::to_string(col);
        case Kind::Point: return "point:" + std::to_string(timestep);
    }
    return "point:0";
}

Provenance Provenance::parse(const std::string& text) {
    std::vector<long> parts;
    std::string kind;
    std::istringstream ss(text);
    std::getline(ss, kind, ':');
    for (std::string tok; std::getline(ss, tok, ':');) parts.push_back(std::stol(tok));
    if (kind == "frame" && parts.size() == 1) return frame(parts[0]);
    if (kind == "cell" && parts.size() == 3)
        return cell(parts[0], static_cast<int>(parts[1]), static_cast<int>(parts[2]));
    if (kind == "point" && parts.size() == 1) return point(parts[0]);
    throw FormatError("bad provenance '" + text + "'");
}

void PointCloud::validate() const {
    if (points.rows() < 1) throw ContractError("point cloud is empty");
    if (colour.size() != size() || provenance.size() != size())
        throw ContractError("point cloud colour/provenance length differs from N");
    if (!points.allFinite()) throw ContractError("point cloud has non-finite entries");
}

PointCloud PointCloud::select(const std::vector<std::size_t>& indices) const {
    PointCloud out;
    out.points.resize(static_cast<Eigen::Index>(indices.size()), points.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        out.points.row(static_cast<Eigen::Index>(i)) = points.row(static_cast<Eigen::Index>(indices[i]));
        out.colour.push_back(colour[indices[i]]);
        out.provenance.push_back(provenance[indices[i]]);
    }
    return out;
}

PointCloud PointCloud::with_points(PointMatrix coords) const {
    if (coords.rows() != points.rows()) throw ContractError("replacement coordinates must keep N");
    PointCloud out;
    out.points = std::move(coords);
    out.colour = colour;
    out.provenance = provenance;
    return out;
}

void write_cloud_csv(const PointCloud& cloud, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    for (std::size_t j = 0; j < cloud.dim(); ++j) out << 'x' << j << ',';
    out << "r,g,b,provenance\n";
    char buf[40];
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        for (std::size_t j = 0; j < cloud.dim(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g,", cloud.points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
            out << buf;
        }
        for (double c : cloud.colour[i]) {
            std::snprintf(buf, sizeof buf, "%.17g,", c);
            out << buf;
        }
        out << cloud.provenance[i].to_string() << '\n';
    }
    if (!out) throw Error("write failed for " + path);
}

namespace {

double parse_double(std::string_view s, std::size_t line) {
    double v = 0.0;
    const auto* first = s.data();
    const auto* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last)
        throw FormatError("line " + std::to_string(line) + ": bad number '" + std::string(s) + "'");
    return v;
}

std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

}  // namespace

PointCloud read_cloud_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    std::string header;
    if (!std::getline(in, header)) throw FormatError(path + ": empty CSV");
    const auto cols = split(header);
    if (cols.size() < 4 || cols[cols.size() - 4] != "r" || cols.back() != "provenance")
        throw FormatError(path + ": expected header x0..xD-1,r,g,b,provenance");
    const std::size_t dim = cols.size() - 4;

    std::vector<double> values;
    PointCloud cloud;
    std::size_t line_no = 1;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = split(line);
        if (fields.size() != cols.size())
            throw FormatError(path + ": line " + std::to_string(line_no) + " has wrong field count");
        for (std::size_t j = 0; j < dim; ++j) values.push_back(parse_double(fields[j], line_no));
        cloud.colour.push_back({parse_double(fields[dim], line_no), parse_double(fields[dim + 1], line_no),
                                parse_double(fields[dim + 2], line_no)});
        cloud.provenance.push_back(Provenance::parse(std::string(fields.back())));
    }
    const auto n = static_cast<Eigen::Index>(cloud.colour.size());
    cloud.points = Eigen::Map<PointMatrix>(values.data(), n, static_cast<Eigen::Index>(dim));
    return cloud;
}

Colour frame_colour(const GridState& frame, float alive_threshold) {
    Colour sum{0, 0, 0};
    long count = 0;
    for (int r = 0; r < frame.height; ++r)
        for (int c = 0; c < frame.width; ++c) {
            if (frame.mode == ChannelMode::RgbaAlive && !(frame.at(r, c, kAlphaChannel) > alive_threshold)) continue;
            for (int k = 0; k < 3; ++k) sum[k] += frame.at(r, c, k);
            ++count;
        }
    if (count == 0) return {0, 0, 0};
    for (auto& v : sum) v = std::clamp(v / static_cast<double>(count), 0.0, 1.0);
    return sum;
}

PointCloud extract_macroscopic(const Trajectory& t, TimeRange range) {
    std::vector<std::size_t> frames;
    for (std::size_t i = 0; i < t.frames.size(); ++i)
        if (range.contains(t.timestep_of(i))) frames.push_back(i);
    if (frames.empty()) throw ContractError("no frames in the requested time range");
    const auto dim = static_cast<Eigen::Index>(t.frames.front().values.size());
    PointCloud cloud;
    cloud.points.resize(static_cast<Eigen::Index>(frames.size()), dim);
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const auto& f = t.frames[frames[i]];
        cloud.points.row(static_cast<Eigen::Index>(i)) =
            Eigen::Map<const Eigen::RowVectorXf>(f.values.data(), dim).cast<double>();
        cloud.colour.push_back(frame_colour(f, t.meta.alive_threshold));
        cloud.provenance.push_back(Provenance::frame(t.timestep_of(frames[i])));
    }
    return cloud;
}

namespace {

struct CellRef {
    std::uint32_t frame;
    std::uint32_t cell;
};

PointCloud cells_to_cloud(const Trajectory& t, const std::vector<CellRef>& refs) {
    const int C = t.meta.channels;
    PointCloud cloud;
    cloud.points.resize(static_cast<Eigen::Index>(refs.size()), C);
    cloud.colour.reserve(refs.size());
    cloud.provenance.reserve(refs.size());
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const auto& f = t.frames[refs[i].frame];
        const float* v = f.values.data() + static_cast<std::size_t>(refs[i].cell) * C;
        for (int ch = 0; ch < C; ++ch) cloud.points(static_cast<Eigen::Index>(i), ch) = v[ch];
        cloud.colour.push_back({std::clamp<double>(v[0], 0.0, 1.0), std::clamp<double>(v[1], 0.0, 1.0),
                                std::clamp<double>(v[2], 0.0, 1.0)});
        const int row = static_cast<int>(refs[i].cell) / f.width;
        const int col = static_cast<int>(refs[i].cell) % f.width;
        cloud.provenance.push_back(Provenance::cell(t.timestep_of(refs[i].frame), row, col));
    }
    return cloud;
}

}  // namespace

PointCloud extract_microscopic(const Trajectory& t, bool exclude_dead, std::size_t max_points,
                               std::uint64_t rng_seed, TimeRange range) {
    const bool check_alive = exclude_dead && t.meta.mode == ChannelMode::RgbaAlive;
    std::vector<CellRef> refs;
    for (std::size_t fi = 0; fi < t.frames.size(); ++fi) {
        if (!range.contains(t.timestep_of(fi))) continue;
        const auto& f = t.frames[fi];
        for (std::size_t cell = 0; cell < f.cell_count(); ++cell) {
            if (check_alive && !(f.values[cell * f.channels + kAlphaChannel] > t.meta.alive_threshold)) continue;
            refs.push_back({static_cast<std::uint32_t>(fi), static_cast<std::uint32_t>(cell)});
        }
    }
    if (refs.empty()) throw ContractError("no live cells to extract");
    if (max_points > 0 && refs.size() > max_points) {
        // Uniform sample without replacement, then restore trajectory order.
        std::vector<std::size_t> idx(refs.size());
        std::iota(idx.begin(), idx.end(), 0);
        for (std::size_t i = 0; i < max_points; ++i) {
            const std::size_t j = i + hash_key(rng_seed, 0x6d6963726fULL, i) % (idx.size() - i);
            std::swap(idx[i], idx[j]);
        }
        idx.resize(max_points);
        std::sort(idx.begin(), idx.end());
        std::vector<CellRef> kept;
        kept.reserve(max_points);
        for (auto i : idx) kept.push_back(refs[i]);
        refs = std::move(kept);
    }
    return cells_to_cloud(t, refs);
}

PointCloud window_subsample(const Trajectory& t, const Rect& window, TimeRange range) {
    if (window.row0 < 0 || window.col0 < 0 || window.row1 > t.meta.height || window.col1 > t.meta.width ||
        window.empty())
        throw ValidationError("window must be a nonempty rectangle inside the grid");
    std::vector<CellRef> refs;
    for (std::size_t fi = 0; fi < t.frames.size(); ++fi) {
        if (!range.contains(t.timestep_of(fi))) continue;
        for (int r = window.row0; r < window.row1; ++r)
            for (int c = window.col0; c < window.col1; ++c)
                refs.push_back({static_cast<std::uint32_t>(fi), static_cast<std::uint32_t>(r * t.meta.width + c)});
    }
    if (refs.empty()) throw ContractError("no frames in the requested time range");
    return cells_to_cloud(t, refs);
}

}  // namespace nca_scope
