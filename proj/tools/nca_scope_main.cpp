#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "nca_scope/common.hpp"
#include "nca_scope/pipeline.hpp"

using nlohmann::json;
using namespace nca_scope;

namespace {

constexpr int kExitStage = 1;
constexpr int kExitConfig = 2;

/// A subcommand that fills one StageSpec from its flags.
struct Command {
    CLI::App* app = nullptr;
    StageSpec spec;
    std::vector<std::function<void()>> finalize;

    Command(CLI::App& parent, const std::string& kind, const std::string& help) : app(parent.add_subcommand(kind, help)) {
        spec.name = kind;
        spec.kind = kind;
    }

    template <typename T>
    CLI::Option* param(const std::string& flag, const char* key, const std::string& help) {
        auto value = std::make_shared<T>();
        auto* opt = app->add_option(flag, *value, help);
        finalize.push_back([this, opt, value, key] {
            if (opt->count()) spec.params[key] = *value;
        });
        return opt;
    }

    CLI::Option* flag(const std::string& name, const char* key, bool value, const std::string& help) {
        auto* opt = app->add_flag(name, help);
        finalize.push_back([this, opt, key, value] {
            if (opt->count()) spec.params[key] = value;
        });
        return opt;
    }

    CLI::Option* path(const std::string& flag, std::map<std::string, std::string>& slot, const std::string& role,
                      const std::string& help, bool required = false) {
        auto value = std::make_shared<std::string>();
        auto* opt = app->add_option(flag, *value, help);
        if (required) opt->required();
        finalize.push_back([opt, value, &slot, role] {
            if (opt->count()) slot[role] = *value;
        });
        return opt;
    }
    CLI::Option* input(const std::string& flag, const std::string& role, const std::string& help, bool required = true) {
        return path(flag, spec.inputs, role, help, required);
    }
    CLI::Option* output(const std::string& flag, const std::string& role, const std::string& help, bool required = false) {
        return path(flag, spec.outputs, role, help, required);
    }

    void apply() {
        for (auto& f : finalize) f();
    }
};

std::vector<double> split_numbers(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw ConfigError("'" + text + "' is not a comma-separated list of numbers");
        }
    }
    return out;
}

/// row,col,channel[,value[,radius[,jitter]]]
json parse_signal_flag(const std::string& text) {
    const auto v = split_numbers(text);
    if (v.size() < 3 || v.size() > 6) throw ConfigError("--signal expects row,col,channel[,value[,radius[,jitter]]]");
    json s{{"row", static_cast<int>(v[0])}, {"col", static_cast<int>(v[1])}, {"channel", static_cast<int>(v[2])}};
    s["value"] = v.size() > 3 ? v[3] : 1.0;
    s["radius"] = v.size() > 4 ? static_cast<int>(v[4]) : 1;
    s["jitter"] = v.size() > 5 ? static_cast<int>(v[5]) : 0;
    return s;
}

/// disc[:r,g,b] | square[:r,g,b] | path to a PNG
json parse_target_flag(const std::string& text) {
    const auto colon = text.find(':');
    const auto shape = text.substr(0, colon);
    if (shape == "disc" || shape == "square") {
        json t{{"shape", shape}};
        if (colon != std::string::npos) {
            const auto rgb = split_numbers(text.substr(colon + 1));
            if (rgb.size() != 3) throw ConfigError("target colour needs three values");
            t["rgb"] = rgb;
        }
        return t;
    }
    return {{"shape", "png"}, {"path", text}};
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path + " is not valid JSON: " + e.what());
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Train and roll out neural cellular automata and analyse their behavioural manifolds"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", std::string(kVersion));
    std::uint64_t seed = 0;
    app.add_option("--seed", seed, "Global random seed")->capture_default_str();
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "Suppress progress output");

    // train
    Command train(app, "train", "Train an NCA on one or two targets");
    std::vector<std::string> targets;
    train.app->add_option("--target", targets, "PNG path, disc[:r,g,b] or square[:r,g,b]; give two for a signal-switching model");
    std::string train_signal;
    train.app->add_option("--signal", train_signal, "Colour-change signal row,col,channel[,value[,radius[,jitter]]]");
    train.param<int>("--height", "height", "Grid height for generated targets");
    train.param<int>("--width", "width", "Grid width for generated targets");
    train.param<int>("--channels", "channels", "State channels");
    train.param<int>("--hidden", "hidden", "Hidden units of the update network");
    train.param<std::string>("--mode", "mode", "rgba or rgb");
    train.param<std::string>("--padding", "padding", "circular or zero");
    train.param<float>("--fire-rate", "fire_rate", "Per-cell update probability");
    train.param<long>("--epochs", "epochs", "Training epochs");
    train.param<int>("--steps-min", "steps_min", "Shortest episode");
    train.param<int>("--steps-max", "steps_max", "Longest episode");
    train.param<int>("--batch", "batch", "Episodes per epoch");
    train.param<int>("--pool", "pool", "Sample pool size");
    train.param<double>("--lr", "lr", "Learning rate");
    train.param<long>("--lr-decay-epoch", "lr_decay_epoch", "Epoch at which the learning rate drops");
    train.param<double>("--lr-decay-factor", "lr_decay_factor", "Learning rate multiplier at the drop");
    train.param<double>("--signal-probability", "signal_probability", "Chance a pooled sample is signalled");
    train.param<int>("--latest-step", "latest_step", "Latest episode step at which a signal arrives");
    train.param<int>("--damage-samples", "damage_samples", "Best samples damaged per epoch");
    train.param<int>("--damage-size", "damage_size", "Side of the damage square");
    train.param<std::string>("--precision", "precision", "single or double");
    train.param<long>("--checkpoint-every", "checkpoint_every", "Save stem.epochK.ncam every K epochs");
    train.output("--out", "model", "Model file (.ncam)", true);
    train.output("--loss-log", "log", "CSV epoch,loss,seconds");

    // rollout
    Command roll(app, "rollout", "Run a model and record its trajectory");
    roll.input("--model", "model", "Model file");
    roll.param<long>("--steps", "steps", "Number of update steps");
    roll.param<int>("--height", "height", "Grid height");
    roll.param<int>("--width", "width", "Grid width");
    roll.param<std::uint32_t>("--record-every", "record_every", "Frame stride");
    std::string events_path, roll_signal;
    long period = 0, first = -1, last = -1;
    roll.app->add_option("--events", events_path, "Event script JSON");
    roll.app->add_option("--signal", roll_signal, "Periodic signal row,col,channel[,value[,radius[,jitter]]]");
    roll.app->add_option("--period", period, "Steps between periodic signals");
    roll.app->add_option("--first", first, "First periodic signal step (default: one period)");
    roll.app->add_option("--last", last, "No periodic signals at or after this step");
    roll.output("--out", "trajectory", "Trajectory file (.ncat)", true);

    // extract
    Command extract(app, "extract", "Build a point cloud from a trajectory");
    extract.input("--traj", "trajectory", "Trajectory file");
    extract.param<std::string>("--kind", "kind", "macro, micro or window")->check(CLI::IsMember({"macro", "micro", "window"}));
    extract.param<long>("--begin", "begin", "First timestep");
    extract.param<long>("--end", "end", "Timestep after the last");
    extract.param<std::size_t>("--max-points", "max_points", "Sample cap for micro clouds");
    extract.flag("--keep-dead", "exclude_dead", false, "Keep dead cells in micro clouds");
    std::string window;
    extract.app->add_option("--window", window, "row0,col0,row1,col1 for window clouds");
    extract.output("--out", "cloud", "Cloud CSV", true);

    // pca
    Command pca(app, "pca", "Fit principal components and project a cloud");
    pca.input("--in,--cloud", "cloud", "Cloud CSV");
    pca.param<int>("--k", "k", "Components");
    pca.param<std::string>("--method", "method", "auto, covariance or gram");
    pca.output("--out", "basis", "Basis file (.pca)");
    pca.output("--coords", "coords", "Projected cloud CSV");
    pca.output("--svg", "svg", "Scatter of the first two components");

    // ae
    Command ae(app, "ae", "Fit a dense or convolutional autoencoder");
    ae.input("--cloud", "cloud", "Cloud CSV");
    ae.param<std::string>("--arch", "arch", "linear, dense or macro");
    ae.param<std::vector<int>>("--hidden", "hidden", "Hidden widths");
    ae.param<int>("--latent", "latent", "Latent dimension");
    ae.param<long>("--epochs", "epochs", "Training epochs");
    ae.param<int>("--batch", "batch", "Minibatch size");
    ae.param<double>("--lr", "lr", "Learning rate");
    ae.param<int>("--height", "height", "Frame height (macro)");
    ae.param<int>("--width", "width", "Frame width (macro)");
    ae.param<int>("--channels", "channels", "Frame channels (macro)");
    ae.output("--out", "model", "Model file (.dae)");
    ae.output("--coords", "coords", "Latent cloud CSV");
    ae.output("--svg", "svg", "Latent scatter");
    ae.output("--loss-log", "log", "CSV epoch,mse");

    // sae
    Command sae(app, "sae", "Fit a sparse autoencoder on per-cell states");
    sae.input("--cloud", "cloud", "Cloud CSV");
    sae.input("--traj", "trajectory", "Trajectory for per-frame mean features", false);
    sae.param<int>("--expansion", "expansion", "Dictionary size");
    sae.param<double>("--l1", "l1", "Sparsity coefficient");
    sae.param<long>("--epochs", "epochs", "Training epochs");
    sae.param<int>("--batch", "batch", "Minibatch size");
    sae.param<double>("--lr", "lr", "Learning rate");
    sae.param<long>("--l1-warmup", "l1_warmup", "Epochs over which the sparsity term ramps in");
    sae.param<double>("--threshold", "threshold", "Activation threshold for active and dead features");
    sae.param<long>("--begin", "begin", "First timestep for per-frame features");
    sae.param<long>("--end", "end", "Timestep after the last");
    sae.output("--out", "model", "Model file (.sae)");
    sae.output("--stats", "stats", "Statistics JSON");
    sae.output("--features", "features", "Per-frame mean feature cloud CSV");

    // ph
    Command ph(app, "ph", "Vietoris-Rips persistent homology of a cloud");
    ph.input("--cloud", "cloud", "Cloud CSV");
    ph.param<int>("--maxdim", "max_dim", "Highest homology dimension (0-2)");
    ph.param<std::size_t>("--budget", "budget", "Maxmin subsample size");
    ph.param<std::size_t>("--components", "components", "Use only the first N columns");
    ph.param<double>("--max-radius", "max_radius", "Filtration cap (default: enclosing radius)");
    ph.param<double>("--threshold", "threshold", "Significance threshold on persistence");
    ph.output("--out", "diagram", "Diagram CSV");
    ph.output("--svg", "svg", "Diagram plot");
    ph.output("--betti", "betti", "Betti report JSON");

    // field
    Command field(app, "field", "Latent vector field of a model over a PCA plane");
    field.input("--traj", "trajectory", "Trajectory file");
    field.input("--basis", "basis", "Basis file");
    field.input("--model", "model", "Model file");
    field.param<int>("--resolution", "resolution", "Grid points per axis");
    field.param<int>("--k", "k", "Neighbours blended when lifting");
    field.param<int>("--steps", "steps", "Update steps per arrow");
    field.param<std::string>("--lift", "lift", "interp or basis");
    field.param<long>("--begin", "begin", "First timestep of the embedded frames");
    field.param<long>("--end", "end", "Timestep after the last");
    field.param<double>("--arrow-scale", "arrow_scale", "Arrow length multiplier");
    field.output("--out,--svg", "svg", "Field plot");
    field.output("--csv", "csv", "CSV x,y,dx,dy,valid");

    // run
    auto* run = app.add_subcommand("run", "Run an experiment config or a named recipe");
    std::string config_path, recipe, out_dir, model_path, traj_path;
    long epochs = 0;
    bool print_only = false;
    auto* config_opt = run->add_option("--config", config_path, "Experiment JSON");
    auto* recipe_opt = run->add_option("--recipe", recipe, "Recipe name")->check(CLI::IsMember(recipe_names()));
    config_opt->excludes(recipe_opt);
    run->add_option("--out-dir", out_dir, "Output directory (overrides the config)");
    run->add_option("--model", model_path, "Existing model for recipes (skips training)");
    run->add_option("--traj", traj_path, "Existing trajectory for analysis-only recipes");
    run->add_option("--epochs", epochs, "Surrogate training epochs for recipes");
    run->add_flag("--print-config", print_only, "Print the resolved config and exit");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kExitConfig;
    }

    std::ostream* log = quiet ? nullptr : &std::cerr;
    try {
        if (run->parsed()) {
            ExperimentConfig cfg;
            if (!config_path.empty()) {
                cfg = ExperimentConfig::load(config_path);
                if (app.get_option("--seed")->count()) cfg.rng_seed = seed;
                if (!out_dir.empty()) cfg.output_dir = out_dir;
            } else if (!recipe.empty()) {
                RecipeOptions opts;
                opts.rng_seed = seed;
                if (!out_dir.empty()) opts.output_dir = out_dir;
                opts.model = model_path;
                opts.trajectory = traj_path;
                if (epochs > 0) opts.surrogate.epochs = epochs;
                cfg = make_recipe(recipe, opts);
            } else {
                throw ConfigError("run needs --config or --recipe");
            }
            if (print_only) {
                std::cout << cfg.to_json().dump(2) << '\n';
                return 0;
            }
            const auto manifest = run_experiment(cfg, log);
            for (const auto& stage : manifest.stages)
                if (!stage.summary.empty()) std::cout << stage.name << ": " << stage.summary.dump() << '\n';
            return 0;
        }

        for (Command* cmd : {&train, &roll, &extract, &pca, &ae, &sae, &ph, &field}) {
            if (!cmd->app->parsed()) continue;
            cmd->apply();
            auto& params = cmd->spec.params;
            if (cmd == &train) {
                if (!targets.empty()) {
                    json list = json::array();
                    for (const auto& t : targets) list.push_back(parse_target_flag(t));
                    params["targets"] = list;
                }
                if (!train_signal.empty()) params["signal"] = parse_signal_flag(train_signal);
            } else if (cmd == &roll) {
                if (!events_path.empty()) params["events"] = read_json_file(events_path);
                if (period > 0) {
                    if (roll_signal.empty()) throw ConfigError("--period needs --signal");
                    json p{{"period", period}, {"signal", parse_signal_flag(roll_signal)}};
                    if (first >= 0) p["first"] = first;
                    if (last >= 0) p["last"] = last;
                    params["periodic"] = p;
                }
            } else if (cmd == &extract && !window.empty()) {
                const auto r = split_numbers(window);
                if (r.size() != 4) throw ConfigError("--window expects row0,col0,row1,col1");
                params["window"] = {static_cast<int>(r[0]), static_cast<int>(r[1]), static_cast<int>(r[2]), static_cast<int>(r[3])};
                if (!params.contains("kind")) params["kind"] = "window";
            }
            const auto record = run_stage(cmd->spec, seed, log);
            std::cout << record.summary.dump() << '\n';
        }
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const StageError& e) {
        std::cerr << e.what() << '\n';
        return kExitStage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitStage;
    }
}
