#include "nca_scope/pipeline.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <set>

#include "nca_scope/autoencoder.hpp"
#include "nca_scope/common.hpp"
#include "nca_scope/field.hpp"
#include "nca_scope/homology.hpp"
#include "nca_scope/image.hpp"
#include "nca_scope/nca.hpp"
#include "nca_scope/pca.hpp"
#include "nca_scope/svg.hpp"
#include "nca_scope/trainer.hpp"
#include "nca_scope/trajectory.hpp"

namespace nca_scope {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct StageKind {
    std::set<std::string> params;
    std::set<std::string> inputs;  // required unless listed in optional_inputs
    std::set<std::string> optional_inputs;
    std::set<std::string> outputs;
};

const std::map<std::string, StageKind>& stage_kinds() {
    static const std::map<std::string, StageKind> kinds{
        {"train",
         {{"height", "width", "channels", "hidden", "mode", "padding", "fire_rate", "alive_threshold", "targets",
           "signal", "signal_probability", "latest_step", "epochs", "steps_min", "steps_max", "batch", "pool", "lr",
           "lr_decay_epoch", "lr_decay_factor", "precision", "damage_samples", "damage_size", "checkpoint_every", "seed"},
          {},
          {},
          {"model", "log"}}},
        {"rollout",
         {{"height", "width", "steps", "record_every", "seed", "periodic", "events"}, {"model"}, {}, {"trajectory"}}},
        {"extract",
         {{"kind", "begin", "end", "exclude_dead", "max_points", "window", "seed"}, {"trajectory"}, {}, {"cloud"}}},
        {"pca", {{"k", "method"}, {"cloud"}, {}, {"basis", "coords", "svg"}}},
        {"ae",
         {{"arch", "hidden", "latent", "epochs", "batch", "lr", "lr_decay_epoch", "lr_decay_factor", "height", "width",
           "channels", "seed"},
          {"cloud"},
          {},
          {"model", "coords", "svg", "log"}}},
        {"sae",
         {{"expansion", "l1", "epochs", "batch", "lr", "lr_decay_epoch", "lr_decay_factor", "l1_warmup", "threshold",
           "exclude_dead", "begin", "end", "seed"},
          {"cloud"},
          {"trajectory"},
          {"model", "stats", "features"}}},
        {"ph",
         {{"max_dim", "budget", "components", "max_radius", "threshold", "seed"}, {"cloud"}, {}, {"diagram", "svg", "betti"}}},
        {"field",
         {{"resolution", "k", "steps", "lift", "begin", "end", "arrow_scale", "seed"},
          {"trajectory", "basis", "model"},
          {},
          {"csv", "svg"}}},
    };
    return kinds;
}

template <typename T>
T param(const StageSpec& s, const char* key, T fallback) {
    if (!s.params.contains(key)) return fallback;
    try {
        return s.params.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("stage '" + s.name + "': parameter '" + key + "' has the wrong type");
    }
}

/// Checkpoint files a train stage writes next to its model: stem.epochK.ncam.
std::vector<std::string> checkpoint_paths(const StageSpec& s) {
    std::vector<std::string> paths;
    const auto it = s.outputs.find("model");
    const long every = s.params.value("checkpoint_every", 0L);
    if (s.kind != "train" || it == s.outputs.end() || every <= 0) return paths;
    const fs::path model(it->second);
    const long epochs = s.params.value("epochs", 1000L);
    for (long e = every; e <= epochs; e += every)
        paths.push_back((model.parent_path() / (model.stem().string() + ".epoch" + std::to_string(e) + ".ncam")).string());
    return paths;
}

std::uint64_t stage_seed(const StageSpec& s, std::uint64_t global, std::size_t index) {
    if (s.params.contains("seed")) return param<std::uint64_t>(s, "seed", 0);
    return hash_key(global, index);
}

ChannelMode parse_mode(const std::string& m) {
    if (m == "rgba") return ChannelMode::RgbaAlive;
    if (m == "rgb") return ChannelMode::RgbPlain;
    throw ConfigError("mode must be rgba or rgb, got '" + m + "'");
}

SignalEvent parse_signal(const json& j) {
    SignalEvent s;
    s.row = j.at("row").get<int>();
    s.col = j.at("col").get<int>();
    s.jitter_radius = j.value("jitter", 0);
    s.target_channel = j.at("channel").get<int>();
    s.value = j.value("value", 1.0f);
    s.radius = j.value("radius", 1);
    return s;
}

json signal_json(const SignalEvent& s) {
    return {{"row", s.row}, {"col", s.col}, {"jitter", s.jitter_radius}, {"channel", s.target_channel},
            {"value", s.value}, {"radius", s.radius}};
}

TimeRange parse_range(const StageSpec& s) {
    TimeRange r;
    r.begin = param<long>(s, "begin", 0);
    if (s.params.contains("end")) r.end = param<long>(s, "end", 0);
    return r;
}

GridState parse_target(const json& j, int h, int w, ChannelMode mode) {
    const auto shape = j.value("shape", std::string("disc"));
    Colour rgb{1.0, 1.0, 1.0};
    if (j.contains("rgb")) {
        const auto v = j.at("rgb").get<std::vector<double>>();
        if (v.size() != 3) throw ConfigError("target rgb needs three values");
        rgb = {v[0], v[1], v[2]};
    }
    if (shape == "disc") return disc_target(h, w, j.value("radius", std::min(h, w) / 3.0), rgb, mode);
    if (shape == "square") return square_target(h, w, j.value("size", std::min(h, w) / 2), rgb, mode);
    if (shape == "png") {
        auto t = load_target_png(j.at("path").get<std::string>(), mode, j.value("pad", 0));
        if (t.height != h || t.width != w) throw ConfigError("PNG target size differs from height x width");
        return t;
    }
    throw ConfigError("unknown target shape '" + shape + "'");
}

void write_json(const json& doc, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << doc.dump(2) << '\n';
}

class Runner {
public:
    Runner(const ExperimentConfig& cfg, std::ostream* log) : cfg_(cfg), log_(log), dir_(cfg.output_dir) {}

    Manifest run(bool write_manifest = true) {
        if (!dir_.empty()) fs::create_directories(dir_);
        Manifest manifest;
        manifest.rng_seed = cfg_.rng_seed;
        for (std::size_t i = 0; i < cfg_.stages.size(); ++i) {
            const auto& s = cfg_.stages[i];
            if (log_) *log_ << "[" << (i + 1) << "/" << cfg_.stages.size() << "] " << s.name << " (" << s.kind << ")\n";
            StageRecord rec;
            rec.name = s.name;
            rec.kind = s.kind;
            const auto t0 = std::chrono::steady_clock::now();
            try {
                rec.summary = dispatch(s, stage_seed(s, cfg_.rng_seed, i));
            } catch (const StageError&) {
                throw;
            } catch (const std::exception& e) {
                throw StageError(s.name, e.what());
            }
            rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            for (const auto& [role, path] : s.outputs) {
                const fs::path full = dir_ / path;
                if (!fs::exists(full)) continue;
                rec.outputs.push_back({role, path, hex64(fnv1a64_file(full.string())), fs::file_size(full)});
            }
            for (const auto& path : checkpoint_paths(s)) {
                const fs::path full = dir_ / path;
                if (fs::exists(full))
                    rec.outputs.push_back({"checkpoint", path, hex64(fnv1a64_file(full.string())), fs::file_size(full)});
                produced_.insert(path);
            }
            for (const auto& [role, path] : s.outputs) produced_.insert(path);
            manifest.stages.push_back(std::move(rec));
        }
        if (write_manifest) write_json(manifest.to_json(), dir_ / "manifest.json");
        return manifest;
    }

private:
    std::string in(const StageSpec& s, const std::string& role) const {
        const auto it = s.inputs.find(role);
        if (it == s.inputs.end()) throw ConfigError("stage '" + s.name + "' is missing input '" + role + "'");
        if (produced_.count(it->second)) return (dir_ / it->second).string();
        return it->second;
    }
    bool has_in(const StageSpec& s, const std::string& role) const { return s.inputs.count(role) > 0; }
    std::optional<std::string> out(const StageSpec& s, const std::string& role) const {
        const auto it = s.outputs.find(role);
        if (it == s.outputs.end()) return std::nullopt;
        const fs::path p = dir_ / it->second;
        if (p.has_parent_path() && !fs::exists(p.parent_path())) fs::create_directories(p.parent_path());
        return p.string();
    }

    json dispatch(const StageSpec& s, std::uint64_t seed) {
        if (s.kind == "train") return train_stage(s, seed);
        if (s.kind == "rollout") return rollout_stage(s, seed);
        if (s.kind == "extract") return extract_stage(s, seed);
        if (s.kind == "pca") return pca_stage(s);
        if (s.kind == "ae") return ae_stage(s, seed);
        if (s.kind == "sae") return sae_stage(s, seed);
        if (s.kind == "ph") return ph_stage(s, seed);
        if (s.kind == "field") return field_stage(s, seed);
        throw ConfigError("unknown stage kind '" + s.kind + "'");
    }

    json train_stage(const StageSpec& s, std::uint64_t seed) {
        ModelInit init;
        init.channels = param(s, "channels", 8);
        init.hidden_width = param(s, "hidden", 64);
        init.mode = parse_mode(param<std::string>(s, "mode", "rgba"));
        const auto padding = param<std::string>(s, "padding", "circular");
        if (padding != "circular" && padding != "zero") throw ConfigError("padding must be circular or zero");
        init.padding = padding == "zero" ? Padding::Zero : Padding::Circular;
        init.fire_rate = param(s, "fire_rate", 0.5f);
        init.alive_threshold = param(s, "alive_threshold", 0.1f);
        init.seed = hash_key(seed, 1);
        const NcaModel model = make_model(init);

        const json tj = s.params.value("targets", json::array({json{{"shape", "disc"}}}));
        int h = 16, w = 16;
        if (!tj.empty() && tj.front().value("shape", "") == "png" && !s.params.contains("height")) {
            const auto first = load_target_png(tj.front().at("path").get<std::string>(), init.mode, tj.front().value("pad", 0));
            h = first.height;
            w = first.width;
        }
        h = param(s, "height", h);
        w = param(s, "width", w);
        std::vector<GridState> targets;
        for (const auto& t : tj) targets.push_back(parse_target(t, h, w, init.mode));

        TrainConfig tc;
        tc.epochs = param(s, "epochs", 1000L);
        tc.steps_min = param(s, "steps_min", 40);
        tc.steps_max = param(s, "steps_max", 56);
        tc.batch_size = param(s, "batch", 8);
        tc.pool_size = param(s, "pool", 256);
        tc.optimizer.learning_rate = param(s, "lr", 2e-3);
        tc.lr_decay_epoch = param(s, "lr_decay_epoch", 0L);
        tc.lr_decay_factor = param(s, "lr_decay_factor", 0.1);
        tc.damage_samples = param(s, "damage_samples", 0);
        tc.damage_size = param(s, "damage_size", 4);
        tc.precision = param<std::string>(s, "precision", "single") == "double" ? Precision::Double : Precision::Single;
        tc.rng_seed = hash_key(seed, 2);
        if (s.params.contains("signal")) {
            tc.signals.enabled = true;
            tc.signals.signal = parse_signal(s.params.at("signal"));
            tc.signals.probability = param(s, "signal_probability", 0.5);
            tc.signals.latest_step = param(s, "latest_step", 8);
        }
        tc.checkpoint_every = param(s, "checkpoint_every", 0L);
        const auto checkpoints = checkpoint_paths(s);
        tc.on_checkpoint = [&](long epoch, const NcaModel& m) {
            const auto index = static_cast<std::size_t>(epoch / tc.checkpoint_every) - 1;
            if (index < checkpoints.size()) save_model(m, (dir_ / checkpoints[index]).string());
        };
        const long report = std::max(1L, tc.epochs / 10);
        tc.on_epoch = [&](long epoch, double loss) {
            if (log_ && (epoch % report == 0 || epoch + 1 == tc.epochs))
                *log_ << "  epoch " << epoch << " loss " << loss << "\n";
        };
        const auto result = train(model, targets, tc);
        if (auto p = out(s, "model")) save_model(result.model, *p);
        if (auto p = out(s, "log")) result.log.write_csv(*p);
        return {{"final_loss", result.log.loss.back()}, {"epochs", tc.epochs}};
    }

    json rollout_stage(const StageSpec& s, std::uint64_t seed) {
        const NcaModel model = load_model(in(s, "model"));
        const int h = param(s, "height", 16), w = param(s, "width", 16);
        const long steps = param(s, "steps", 2000L);
        EventScript events;
        if (s.params.contains("events")) events = EventScript::from_json(s.params.at("events").dump());
        if (s.params.contains("periodic")) {
            const auto& p = s.params.at("periodic");
            const long period = p.at("period").get<long>();
            const auto periodic = periodic_signals(parse_signal(p.at("signal")), period, steps, p.value("first", period),
                                                   p.value("last", steps));
            events = merge_scripts(periodic, events);
        }
        const auto traj = rollout(model, seed_state(h, w, model.channels, model.mode), steps, events, seed,
                                  param<std::uint32_t>(s, "record_every", 1));
        if (auto p = out(s, "trajectory")) save_trajectory(traj, *p);
        return {{"frames", traj.frames.size()}, {"events", traj.events.events.size()}};
    }

    json extract_stage(const StageSpec& s, std::uint64_t seed) {
        const auto traj = load_trajectory(in(s, "trajectory"));
        const auto kind = param<std::string>(s, "kind", "macro");
        PointCloud cloud;
        if (kind == "macro") {
            cloud = extract_macroscopic(traj, parse_range(s));
        } else if (kind == "micro") {
            cloud = extract_microscopic(traj, param(s, "exclude_dead", true), param<std::size_t>(s, "max_points", 20000),
                                        seed, parse_range(s));
        } else if (kind == "window") {
            const auto r = param<std::vector<int>>(s, "window", {0, 0, traj.meta.height, traj.meta.width});
            if (r.size() != 4) throw ConfigError("window must be [r0,c0,r1,c1]");
            cloud = window_subsample(traj, Rect{r[0], r[1], r[2], r[3]}, parse_range(s));
        } else {
            throw ConfigError("extract kind must be macro, micro or window");
        }
        if (auto p = out(s, "cloud")) write_cloud_csv(cloud, *p);
        return {{"points", cloud.size()}, {"dim", cloud.dim()}};
    }

    json pca_stage(const StageSpec& s) {
        const auto cloud = read_cloud_csv(in(s, "cloud"));
        const auto method = param<std::string>(s, "method", "auto");
        const PcaMethod m = method == "gram" ? PcaMethod::Gram : method == "covariance" ? PcaMethod::Covariance : PcaMethod::Auto;
        const auto basis = pca_fit(cloud, param(s, "k", 2), m);
        const auto coords = cloud.with_points(pca_project(basis, cloud.points));
        if (auto p = out(s, "basis")) save_pca(basis, *p);
        if (auto p = out(s, "coords")) write_cloud_csv(coords, *p);
        if (auto p = out(s, "svg")) emit_scatter_svg(coords, *p);
        std::vector<double> var(basis.explained_variance.data(), basis.explained_variance.data() + basis.k());
        return {{"explained_variance", var}};
    }

    json ae_stage(const StageSpec& s, std::uint64_t seed) {
        const auto cloud = read_cloud_csv(in(s, "cloud"));
        const auto arch_name = param<std::string>(s, "arch", "dense");
        const auto hidden = param<std::vector<int>>(s, "hidden", {32});
        const int latent = param(s, "latent", 2);
        AeArchitecture arch;
        if (arch_name == "linear") arch = AeArchitecture::linear(static_cast<int>(cloud.dim()), latent);
        else if (arch_name == "dense") arch = AeArchitecture::dense(static_cast<int>(cloud.dim()), hidden, latent);
        else if (arch_name == "macro") {
            arch = AeArchitecture::macro(param(s, "height", 16), param(s, "width", 16), param(s, "channels", 8), hidden);
            arch.latent_dim = latent;
        } else {
            throw ConfigError("ae arch must be linear, dense or macro");
        }
        AeTrainOptions opt;
        opt.epochs = param(s, "epochs", 300L);
        opt.batch_size = param(s, "batch", 64);
        opt.optimizer.learning_rate = param(s, "lr", 1e-3);
        opt.lr_decay_epoch = param(s, "lr_decay_epoch", 0L);
        opt.lr_decay_factor = param(s, "lr_decay_factor", 0.5);
        opt.rng_seed = seed;
        const auto fit = ae_fit(cloud.points, arch, opt);
        const auto coords = cloud.with_points(fit.model.encode(cloud.points));
        if (auto p = out(s, "model")) save_ae(fit.model, *p);
        if (auto p = out(s, "coords")) write_cloud_csv(coords, *p);
        if (auto p = out(s, "svg")) emit_scatter_svg(coords, *p);
        if (auto p = out(s, "log")) {
            std::ofstream f(*p, std::ios::binary);
            f << "epoch,mse\n";
            char buf[64];
            for (std::size_t e = 0; e < fit.loss.size(); ++e) {
                std::snprintf(buf, sizeof buf, "%zu,%.17g\n", e, fit.loss[e]);
                f << buf;
            }
        }
        return {{"final_mse", fit.loss.back()}};
    }

    json sae_stage(const StageSpec& s, std::uint64_t seed) {
        const auto cloud = read_cloud_csv(in(s, "cloud"));
        SaeTrainOptions opt;
        opt.epochs = param(s, "epochs", 200L);
        opt.batch_size = param(s, "batch", 128);
        opt.optimizer.learning_rate = param(s, "lr", 1e-3);
        opt.lr_decay_epoch = param(s, "lr_decay_epoch", 0L);
        opt.lr_decay_factor = param(s, "lr_decay_factor", 0.5);
        opt.l1_warmup_epochs = param(s, "l1_warmup", 0L);
        opt.activation_threshold = param(s, "threshold", 1e-6);
        opt.rng_seed = seed;
        const auto fit = sae_fit(cloud.points, param(s, "expansion", 64), param(s, "l1", 1e-3), opt);
        if (auto p = out(s, "model")) save_sae(fit.model, *p);
        if (auto p = out(s, "stats")) write_json(fit.stats.to_json(), *p);
        if (auto p = out(s, "features")) {
            if (!has_in(s, "trajectory")) throw ConfigError("stage '" + s.name + "': features output needs a trajectory input");
            auto traj = load_trajectory(in(s, "trajectory"));
            const auto range = parse_range(s);
            auto features = per_frame_mean_features(fit.model, traj, param(s, "exclude_dead", true));
            std::vector<std::size_t> keep;
            for (std::size_t i = 0; i < features.size(); ++i)
                if (range.contains(features.provenance[i].timestep)) keep.push_back(i);
            if (keep.empty()) throw ContractError("no frames in the requested time range");
            write_cloud_csv(features.select(keep), *p);
        }
        return fit.stats.to_json();
    }

    json ph_stage(const StageSpec& s, std::uint64_t seed) {
        auto cloud = read_cloud_csv(in(s, "cloud"));
        const auto total = cloud.size();
        const auto components = param<std::size_t>(s, "components", 0);
        if (components > 0) {
            if (components > cloud.dim()) throw ContractError("components exceeds the cloud dimension");
            cloud = cloud.with_points(PointMatrix(cloud.points.leftCols(static_cast<Eigen::Index>(components))));
        }
        const auto budget = param<std::size_t>(s, "budget", kDefaultPhBudget);
        if (cloud.size() > budget) cloud = cloud.select(maxmin_subsample(cloud.points, budget, seed));
        const auto diagram =
            rips_persistence(distance_matrix(cloud), param(s, "max_dim", 1), param(s, "max_radius", -1.0));
        std::optional<double> threshold;
        if (s.params.contains("threshold") && !s.params.at("threshold").is_null()) threshold = param(s, "threshold", 0.0);
        const auto report = betti_report(diagram, threshold);
        json summary{{"betti", report.counts},
                     {"significance_threshold", report.significance_threshold},
                     {"points_total", total},
                     {"points_used", cloud.size()},
                     {"coverage", ph_coverage(budget, total)},
                     {"max_radius", diagram.max_radius}};
        if (auto p = out(s, "diagram")) write_diagram_csv(diagram, *p);
        if (auto p = out(s, "svg")) emit_diagram_svg(diagram, *p);
        if (auto p = out(s, "betti")) write_json(summary, *p);
        return summary;
    }

    json field_stage(const StageSpec& s, std::uint64_t seed) {
        const auto traj = load_trajectory(in(s, "trajectory"));
        const auto basis = load_pca(in(s, "basis"));
        const auto model = load_model(in(s, "model"));
        FieldOptions opt;
        opt.resolution = param(s, "resolution", 25);
        opt.k_neighbours = param(s, "k", 20);
        opt.nca_steps = param(s, "steps", 5);
        const auto lift = param<std::string>(s, "lift", "interp");
        if (lift != "interp" && lift != "basis") throw ConfigError("lift must be interp or basis");
        opt.lift = lift == "basis" ? LiftMethod::Basis : LiftMethod::NeighbourSoftmax;
        opt.rng_seed = seed;
        const auto cloud = extract_macroscopic(traj, parse_range(s));
        const auto field = field_lines(cloud, traj.meta.height, traj.meta.width, basis, model, opt);
        if (auto p = out(s, "csv")) write_field_csv(field, *p);
        if (auto p = out(s, "svg")) {
            PointCloud embedding = cloud.with_points(PointMatrix(pca_project(basis, cloud.points).leftCols(2)));
            emit_field_svg(field, embedding, *p, param(s, "arrow_scale", 1.0));
        }
        std::size_t valid = 0;
        for (auto v : field.valid) valid += v;
        return {{"grid_points", field.size()}, {"valid", valid}, {"cutoff", field.cutoff}};
    }

    const ExperimentConfig& cfg_;
    std::ostream* log_;
    fs::path dir_;
    std::set<std::string> produced_;
};

}  // namespace

namespace {

void validate_stages(const ExperimentConfig& cfg, bool contained_outputs) {
    const auto& stages = cfg.stages;
    if (cfg.schema_version != kConfigSchemaVersion)
        throw ConfigError("unsupported schema_version " + std::to_string(cfg.schema_version));
    std::set<std::string> names, produced;
    for (const auto& s : stages) {
        const auto kind = stage_kinds().find(s.kind);
        if (kind == stage_kinds().end()) throw ConfigError("unknown stage kind '" + s.kind + "'");
        if (s.name.empty()) throw ConfigError("stage of kind '" + s.kind + "' has no name");
        if (!names.insert(s.name).second) throw ConfigError("duplicate stage name '" + s.name + "'");
        if (!s.params.is_object()) throw ConfigError("stage '" + s.name + "': params must be an object");
        for (const auto& [key, value] : s.params.items())
            if (!kind->second.params.count(key)) throw ConfigError("stage '" + s.name + "': unknown parameter '" + key + "'");
        for (const auto& role : kind->second.inputs)
            if (!s.inputs.count(role)) throw ConfigError("stage '" + s.name + "' is missing input '" + role + "'");
        for (const auto& [role, path] : s.inputs) {
            if (!kind->second.inputs.count(role) && !kind->second.optional_inputs.count(role))
                throw ConfigError("stage '" + s.name + "': unknown input '" + role + "'");
            if (!produced.count(path) && !fs::exists(path))
                throw ConfigError("stage '" + s.name + "': input '" + path + "' is neither produced earlier nor on disk");
        }
        for (const auto& [role, path] : s.outputs) {
            if (!kind->second.outputs.count(role)) throw ConfigError("stage '" + s.name + "': unknown output '" + role + "'");
            if (contained_outputs && (fs::path(path).is_absolute() || path.find("..") != std::string::npos))
                throw ConfigError("stage '" + s.name + "': output paths must stay inside the output directory");
        }
        for (const auto& [role, path] : s.outputs) produced.insert(path);
        for (const auto& path : checkpoint_paths(s)) produced.insert(path);
    }
}

}  // namespace

void ExperimentConfig::validate() const { validate_stages(*this, true); }

json ExperimentConfig::to_json() const {
    json stages_json = json::array();
    for (const auto& s : stages)
        stages_json.push_back({{"name", s.name}, {"kind", s.kind}, {"params", s.params}, {"inputs", s.inputs}, {"outputs", s.outputs}});
    return {{"schema_version", schema_version}, {"rng_seed", rng_seed}, {"output_dir", output_dir}, {"stages", stages_json}};
}

ExperimentConfig ExperimentConfig::from_json(const json& doc) {
    try {
        ExperimentConfig c;
        if (!doc.is_object()) throw ConfigError("experiment config must be a JSON object");
        c.schema_version = doc.at("schema_version").get<int>();
        c.rng_seed = doc.value("rng_seed", std::uint64_t{0});
        c.output_dir = doc.value("output_dir", std::string("."));
        for (const auto& sj : doc.value("stages", json::array())) {
            StageSpec s;
            s.kind = sj.at("kind").get<std::string>();
            s.name = sj.value("name", s.kind);
            s.params = sj.value("params", json::object());
            s.inputs = sj.value("inputs", std::map<std::string, std::string>{});
            s.outputs = sj.value("outputs", std::map<std::string, std::string>{});
            c.stages.push_back(std::move(s));
        }
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed experiment config: ") + e.what());
    }
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw ConfigError(path + " is not valid JSON: " + e.what());
    }
    return from_json(doc);
}

json Manifest::to_json() const {
    json stages_json = json::array();
    for (const auto& s : stages) {
        json outputs = json::array();
        for (const auto& a : s.outputs)
            outputs.push_back({{"role", a.role}, {"path", a.path}, {"fnv1a64", a.fnv1a64}, {"bytes", a.bytes}});
        stages_json.push_back({{"name", s.name}, {"kind", s.kind}, {"seconds", s.seconds}, {"outputs", outputs}, {"summary", s.summary}});
    }
    return {{"version", std::string(kVersion)}, {"rng_seed", rng_seed}, {"stages", stages_json}};
}

const StageRecord* Manifest::stage(const std::string& name) const {
    for (const auto& s : stages)
        if (s.name == name) return &s;
    return nullptr;
}

Manifest run_experiment(const ExperimentConfig& config, std::ostream* log) {
    config.validate();
    return Runner(config, log).run();
}

StageRecord run_stage(const StageSpec& stage, std::uint64_t rng_seed, std::ostream* log) {
    ExperimentConfig cfg;
    cfg.rng_seed = rng_seed;
    cfg.output_dir.clear();
    cfg.stages.push_back(stage);
    validate_stages(cfg, false);
    return Runner(cfg, log).run(false).stages.front();
}

// ---------------------------------------------------------------------------
// Recipes

std::vector<std::string> recipe_names() {
    return {"cycle-detection", "perturb-return", "fig4-stages", "fig5-perturb", "fig8-texture-window"};
}

namespace {

struct RecipeBuilder {
    const RecipeOptions& o;
    ExperimentConfig cfg;

    explicit RecipeBuilder(const RecipeOptions& opts) : o(opts) {
        cfg.rng_seed = o.rng_seed;
        cfg.output_dir = o.output_dir;
    }

    const SurrogateSettings& sur() const { return o.surrogate; }

    SignalEvent signal() const {
        return SignalEvent{sur().height / 2, sur().width / 2, sur().signal_jitter, sur().signal_channel, 1.0f,
                           sur().signal_radius};
    }

    void add(std::string name, std::string kind, json params, std::map<std::string, std::string> inputs,
             std::map<std::string, std::string> outputs) {
        cfg.stages.push_back({std::move(name), std::move(kind), std::move(params), std::move(inputs), std::move(outputs)});
    }

    /// Adds a train stage unless a model was supplied; returns the model path.
    std::string model(long checkpoint_every = 0) {
        if (!o.model.empty()) return o.model;
        const double radius = sur().target_radius;
        add("train", "train",
            {{"height", sur().height},
             {"width", sur().width},
             {"channels", sur().channels},
             {"hidden", sur().hidden},
             {"targets", json::array({{{"shape", "disc"}, {"radius", radius}, {"rgb", {0.0, 1.0, 0.0}}},
                                      {{"shape", "disc"}, {"radius", radius}, {"rgb", {0.0, 0.0, 1.0}}}})},
             {"signal", signal_json(signal())},
             {"signal_probability", sur().signal_probability},
             {"epochs", sur().epochs},
             {"steps_min", sur().steps_min},
             {"steps_max", sur().steps_max},
             {"damage_samples", sur().damage_samples},
             {"damage_size", sur().damage_size},
             {"lr_decay_epoch", sur().epochs * 2 / 3},
             {"checkpoint_every", checkpoint_every}},
            {}, {{"model", "model.ncam"}, {"log", "train_loss.csv"}});
        return "model.ncam";
    }

    json periodic(long first, long last) const {
        return {{"period", sur().period}, {"first", first}, {"last", last}, {"signal", signal_json(signal())}};
    }

    std::string rollout(const std::string& name, const std::string& model_path, json extra, const std::string& out) {
        json params{{"height", sur().height}, {"width", sur().width}, {"steps", sur().rollout_steps}};
        params.update(extra);
        add(name, "rollout", params, {{"model", model_path}}, {{"trajectory", out}});
        return out;
    }

    /// Macro extract, PCA and PH for one trajectory; file names share `tag`.
    void macro_analysis(const std::string& tag, const std::string& traj, int ph_components) {
        add(tag + "-extract", "extract", {{"kind", "macro"}, {"begin", sur().burn_in}}, {{"trajectory", traj}},
            {{"cloud", tag + "_macro.csv"}});
        add(tag + "-pca", "pca", {{"k", 10}}, {{"cloud", tag + "_macro.csv"}},
            {{"basis", tag + ".pca"}, {"coords", tag + "_pca.csv"}, {"svg", tag + "_pca.svg"}});
        add(tag + "-ph", "ph", {{"max_dim", 1}, {"components", ph_components}}, {{"cloud", tag + "_pca.csv"}},
            {{"diagram", tag + "_diag.csv"}, {"svg", tag + "_diag.svg"}, {"betti", tag + "_betti.json"}});
    }
};

}  // namespace

ExperimentConfig make_recipe(const std::string& name, const RecipeOptions& options) {
    RecipeBuilder b(options);
    const auto& sur = options.surrogate;
    const long p = sur.period;
    auto trajectory_or = [&](const std::string& stage, const std::string& model_path, json extra, const std::string& out) {
        return options.trajectory.empty() ? b.rollout(stage, model_path, std::move(extra), out) : options.trajectory;
    };

    if (name == "cycle-detection") {
        const std::string model = options.trajectory.empty() ? b.model() : "";
        const auto traj = trajectory_or("rollout", model, {{"periodic", b.periodic(p, sur.rollout_steps)}}, "trajectory.ncat");
        b.macro_analysis("cycle", traj, 2);
        b.add("micro-extract", "extract", {{"kind", "micro"}, {"begin", sur.burn_in}, {"max_points", 20000}},
              {{"trajectory", traj}}, {{"cloud", "cells.csv"}});
        b.add("sae", "sae", {{"expansion", 8}, {"l1", 1e-3}, {"epochs", 60}, {"lr", 3e-3}, {"begin", sur.burn_in}},
              {{"cloud", "cells.csv"}, {"trajectory", traj}},
              {{"model", "cells.sae"}, {"stats", "sae_stats.json"}, {"features", "frame_features.csv"}});
        b.add("features-pca", "pca", {{"k", 10}}, {{"cloud", "frame_features.csv"}},
              {{"coords", "features_pca.csv"}, {"svg", "features_pca.svg"}});
        b.add("features-ph", "ph", {{"max_dim", 1}, {"components", 2}}, {{"cloud", "features_pca.csv"}},
              {{"diagram", "features_diag.csv"}, {"svg", "features_diag.svg"}, {"betti", "features_betti.json"}});
    } else if (name == "perturb-return" || name == "fig5-perturb") {
        const std::string model = b.model();
        const int h = sur.height, w = sur.width;
        const json damage = json::array({{{"t", sur.perturb_step}, {"kind", "perturb"}, {"rect", {0, 0, h, w / 2}}, {"fill", 0.0}}});
        if (name == "fig5-perturb") {
            const auto a = b.rollout("rollout-a", model, {{"periodic", b.periodic(p, sur.perturb_step - 1)}, {"events", damage}},
                                     "perturb_a.ncat");
            b.macro_analysis("perturb_a", a, 2);
        }
        const auto traj = b.rollout("rollout", model, {{"periodic", b.periodic(p, sur.rollout_steps)}, {"events", damage}},
                                    name == "fig5-perturb" ? "perturb_b.ncat" : "trajectory.ncat");
        b.macro_analysis(name == "fig5-perturb" ? "perturb_b" : "perturb", traj, 2);
    } else if (name == "fig4-stages") {
        const bool training = options.trajectory.empty() && options.model.empty();
        const long quarter = std::max(1L, sur.epochs / 4);
        const std::string model = options.trajectory.empty() ? b.model(training ? quarter : 0) : "";
        if (training) {
            // Landscape at intermediate training stages, one rollout per checkpoint.
            for (long e = quarter; e < sur.epochs; e += quarter) {
                const auto tag = "epoch" + std::to_string(e);
                const auto traj = b.rollout("rollout-" + tag, "model." + tag + ".ncam",
                                            {{"periodic", b.periodic(p, sur.rollout_steps)}}, tag + ".ncat");
                b.add(tag + "-extract", "extract", {{"kind", "macro"}, {"begin", sur.burn_in}}, {{"trajectory", traj}},
                      {{"cloud", tag + "_macro.csv"}});
                b.add(tag + "-pca", "pca", {{"k", 2}}, {{"cloud", tag + "_macro.csv"}},
                      {{"coords", tag + "_pca.csv"}, {"svg", tag + "_pca.svg"}});
            }
        }
        const auto traj = trajectory_or("rollout", model, {{"periodic", b.periodic(p, sur.rollout_steps)}}, "trajectory.ncat");
        b.add("macro-extract", "extract", {{"kind", "macro"}, {"begin", sur.burn_in}}, {{"trajectory", traj}},
              {{"cloud", "macro.csv"}});
        b.add("macro-ae", "ae",
              {{"arch", "macro"}, {"height", sur.height}, {"width", sur.width}, {"channels", sur.channels},
               {"hidden", {32}}, {"epochs", 100}},
              {{"cloud", "macro.csv"}}, {{"model", "macro.dae"}, {"coords", "macro_ae.csv"}, {"svg", "macro_ae.svg"}});
        b.add("macro-pca", "pca", {{"k", 2}}, {{"cloud", "macro.csv"}},
              {{"basis", "macro.pca"}, {"coords", "macro_pca.csv"}, {"svg", "macro_pca.svg"}});
        b.add("micro-extract", "extract", {{"kind", "micro"}, {"begin", sur.burn_in}, {"max_points", 5000}},
              {{"trajectory", traj}}, {{"cloud", "cells.csv"}});
        b.add("micro-ae", "ae", {{"arch", "dense"}, {"hidden", {16}}, {"epochs", 100}}, {{"cloud", "cells.csv"}},
              {{"model", "cells.dae"}, {"coords", "cells_ae.csv"}, {"svg", "cells_ae.svg"}});
        if (!model.empty())
            b.add("field", "field", {{"begin", sur.burn_in}}, {{"trajectory", traj}, {"basis", "macro.pca"}, {"model", model}},
                  {{"csv", "field.csv"}, {"svg", "field.svg"}});
    } else if (name == "fig8-texture-window") {
        const std::string model = options.trajectory.empty() ? b.model() : "";
        const auto traj = trajectory_or("rollout", model, {{"periodic", b.periodic(p, sur.rollout_steps)}}, "trajectory.ncat");
        const int win = 20;
        const int rows = std::min(win, sur.height), cols = std::min(win, sur.width);
        b.add("window", "extract",
              {{"kind", "window"}, {"window", {0, 0, rows, cols}}, {"begin", sur.burn_in}, {"end", sur.burn_in + 20}},
              {{"trajectory", traj}}, {{"cloud", "window.csv"}});
        b.add("window-ph", "ph", {{"max_dim", 2}, {"budget", 1000}}, {{"cloud", "window.csv"}},
              {{"diagram", "window_diag.csv"}, {"svg", "window_diag.svg"}, {"betti", "window_betti.json"}});
    } else {
        throw ConfigError("unknown recipe '" + name + "'");
    }
    return b.cfg;
}

}  // namespace nca_scope
