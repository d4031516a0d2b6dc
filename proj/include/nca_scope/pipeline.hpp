#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace nca_scope {

inline constexpr int kConfigSchemaVersion = 1;

/// One step of an experiment. Output paths are relative to the experiment's
/// output directory; an input either names an earlier stage's output path or
/// an existing file.
struct StageSpec {
    std::string name;
    std::string kind;  // train | rollout | extract | pca | ae | sae | ph | field
    nlohmann::json params = nlohmann::json::object();
    std::map<std::string, std::string> inputs;
    std::map<std::string, std::string> outputs;
};

struct ExperimentConfig {
    int schema_version = kConfigSchemaVersion;
    std::uint64_t rng_seed = 0;
    std::string output_dir = ".";
    std::vector<StageSpec> stages;

    /// Throws ConfigError on unknown stage kinds, duplicate names, or inputs
    /// that no earlier stage produces and that do not exist on disk.
    void validate() const;

    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& doc);
    static ExperimentConfig load(const std::string& path);
};

struct ArtifactRecord {
    std::string role;
    std::string path;  // relative to the output directory
    std::string fnv1a64;
    std::uintmax_t bytes = 0;
};

struct StageRecord {
    std::string name;
    std::string kind;
    double seconds = 0.0;
    std::vector<ArtifactRecord> outputs;
    nlohmann::json summary = nlohmann::json::object();
};

struct Manifest {
    std::uint64_t rng_seed = 0;
    std::vector<StageRecord> stages;

    nlohmann::json to_json() const;
    const StageRecord* stage(const std::string& name) const;
};

/// Runs stages in order and writes manifest.json into the output directory.
/// Throws ConfigError before any stage runs if the config is invalid and
/// StageError when a stage fails.
Manifest run_experiment(const ExperimentConfig& config, std::ostream* log = nullptr);

/// Runs one stage outside an experiment: paths are taken as given and no
/// manifest is written. Same errors as run_experiment.
StageRecord run_stage(const StageSpec& stage, std::uint64_t rng_seed, std::ostream* log = nullptr);

/// Parameters of the desk-scale two-target signal-switching surrogate.
struct SurrogateSettings {
    int height = 16;
    int width = 16;
    int channels = 8;
    int hidden = 64;
    long epochs = 3000;
    long period = 100;       // steps between colour-change signals in rollouts
    long rollout_steps = 2000;
    long burn_in = 200;      // frames before this timestep are left out of analysis
    int signal_channel = 7;
    int signal_radius = 3;   // disc of cells receiving the signal
    int signal_jitter = 1;
    double signal_probability = 0.25;  // chance a pooled training sample is signalled
    double target_radius = 5.0;
    int steps_min = 32;
    int steps_max = 48;
    int damage_samples = 2;  // lowest-loss pool samples damaged per batch
    int damage_size = 6;
    long perturb_step = 400; // on the fourth signal, while the grid shows the second colour
};

struct RecipeOptions {
    std::string output_dir = "out";
    std::uint64_t rng_seed = 0;
    std::string model;       // existing .ncam; empty means a train stage is added
    std::string trajectory;  // existing .ncat for analysis-only recipes
    SurrogateSettings surrogate;
};

std::vector<std::string> recipe_names();

/// Builds a named recipe: cycle-detection, perturb-return, fig4-stages,
/// fig5-perturb, fig8-texture-window.
ExperimentConfig make_recipe(const std::string& name, const RecipeOptions& options);

}  // namespace nca_scope
