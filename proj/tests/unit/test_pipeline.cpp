#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "nca_scope/common.hpp"
#include "nca_scope//pipeline.hpp"

using namespace nca_scope;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

/// extract -> pca -> ph on a stored trajectory.
ExperimentConfig analysis_config(const std::string& traj) {
    return ExperimentConfig::from_json(nlohmann::json::parse(R"({
        "schema_version": 1, "rng_seed": 9, "stages": [
          {"name": "macro", "kind": "extract", "params": {"kind": "macro"},
           "inputs": {"trajectory": ")" + traj + R"("}, "outputs": {"cloud": "macro.csv"}},
          {"name": "pca", "kind": "pca", "params": {"k": 2},
           "inputs": {"cloud": "macro.csv"},
           "outputs": {"basis": "macro.pca", "coords": "coords.csv", "svg": "coords.svg"}},
          {"name": "ph", "kind": "ph", "params": {"max_dim": 1},
           "inputs": {"cloud": "coords.csv"},
           "outputs": {"diagram": "diag.csv", "svg": "diag.svg", "betti": "betti.json"}}]})")
                                         );
}

int run_cli(const std::string& args) {
    const int status = std::system((std::string(NCA_SCOPE_CLI) + " -q " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("empty experiment gives an empty manifest") {
    TempDir dir("nca_scope_empty_run");
    ExperimentConfig cfg;
    cfg.output_dir = dir.path.string();
    const auto manifest = run_experiment(cfg);
    CHECK(manifest.stages.empty());
    const auto doc = nlohmann::json::parse(slurp(dir / "manifest.json"));
    CHECK(doc["stages"].empty());
}

TEST_CASE("config validation") {
    TempDir dir("nca_scope_validation");
    auto traj = fixture::random_trajectory(6, 3, 3, 4, 1);
    save_trajectory(traj, dir / "t.ncat");
    auto cfg = analysis_config(dir / "t.ncat");
    CHECK_NOTHROW(cfg.validate());

    auto dangling = cfg;
    dangling.stages[1].inputs["cloud"] = "missing.csv";
    CHECK_THROWS_AS(dangling.validate(), ConfigError);

    auto unknown = cfg;
    unknown.stages[0].kind = "teleport";
    CHECK_THROWS_AS(unknown.validate(), ConfigError);

    auto duplicate = cfg;
    duplicate.stages[1].name = "macro";
    CHECK_THROWS_AS(duplicate.validate(), ConfigError);

    auto bad_param = cfg;
    bad_param.stages[1].params["kk"] = 3;
    CHECK_THROWS_AS(bad_param.validate(), ConfigError);

    auto escaping = cfg;
    escaping.stages[0].outputs["cloud"] = "../macro.csv";
    CHECK_THROWS_AS(escaping.validate(), ConfigError);

    auto version = cfg.to_json();
    version["schema_version"] = 99;
    CHECK_THROWS_AS(ExperimentConfig::from_json(version).validate(), ConfigError);

    CHECK(ExperimentConfig::from_json(cfg.to_json()).to_json() == cfg.to_json());
}

TEST_CASE("manifest records hashes and stage failures are named") {
    TempDir dir("nca_scope_manifest");
    save_trajectory(fixture::random_trajectory(10, 3, 3, 4, 2), dir / "t.ncat");
    auto cfg = analysis_config(dir / "t.ncat");
    cfg.output_dir = (dir.path / "out").string();
    const auto manifest = run_experiment(cfg);
    REQUIRE(manifest.stages.size() == 3);
    const auto* ph = manifest.stage("ph");
    REQUIRE(ph != nullptr);
    CHECK(ph->outputs.size() == 3);
    for (const auto& a : ph->outputs) {
        CHECK(a.fnv1a64.size() == 16);
        CHECK(a.bytes == fs::file_size(dir.path / "out" / a.path));
    }
    CHECK(ph->summary.contains("betti"));
    CHECK(fs::exists(dir.path / "out" / "manifest.json"));

    auto failing = cfg;
    failing.stages[1].params["k"] = 50;
    try {
        run_experiment(failing);
        FAIL("expected a stage error");
    } catch (const StageError& e) {
        CHECK(std::string(e.what()).find("pca") != std::string::npos);
    }
}

TEST_CASE("analysis outputs are byte-identical across runs") {
    TempDir dir("nca_scope_repeat");
    save_trajectory(fixture::random_trajectory(15, 4, 4, 4, 3), dir / "t.ncat");
    auto a = analysis_config(dir / "t.ncat"), b = a;
    a.output_dir = (dir.path / "a").string();
    b.output_dir = (dir.path / "b").string();
    run_experiment(a);
    run_experiment(b);
    for (const char* f : {"macro.csv", "coords.csv", "coords.svg", "diag.csv", "diag.svg", "betti.json"})
        CHECK(slurp((dir.path / "a" / f).string()) == slurp((dir.path / "b" / f).string()));
}

TEST_CASE("single stages run with paths as given") {
    TempDir dir("nca_scope_single");
    save_trajectory(fixture::random_trajectory(4, 3, 3, 4, 4), dir / "t.ncat");
    StageSpec s{"extract", "extract", {{"kind", "micro"}}, {{"trajectory", dir / "t.ncat"}}, {{"cloud", dir / "micro.csv"}}};
    const auto record = run_stage(s, 1);
    CHECK(record.outputs.size() == 1);
    CHECK(read_cloud_csv(dir / "micro.csv").size() == 36);
    CHECK(!fs::exists(dir / "manifest.json"));
}

TEST_CASE("recipes validate") {
    TempDir dir("nca_scope_recipes");
    save_trajectory(fixture::random_trajectory(4, 16, 16, 8, 5), dir / "t.ncat");
    for (const auto& name : recipe_names()) {
        RecipeOptions opt;
        opt.output_dir = dir / name;
        const auto cfg = make_recipe(name, opt);
        CHECK_NOTHROW(cfg.validate());
        CHECK(!cfg.stages.empty());
    }
    RecipeOptions opt;
    opt.trajectory = dir / "t.ncat";
    const auto cfg = make_recipe("fig8-texture-window", opt);
    for (const auto& s : cfg.stages) CHECK(s.kind != "train");
    CHECK_THROWS_AS(make_recipe("nope", opt), ConfigError);
}

TEST_CASE("command-line exit codes") {
    TempDir dir("nca_scope_cli");
    save_trajectory(fixture::random_trajectory(8, 3, 3, 4, 6), dir / "t.ncat");
    CHECK(run_cli("--version") == 0);
    CHECK(run_cli("extract --traj " + (dir / "t.ncat") + " --out " + (dir / "m.csv")) == 0);
    CHECK(run_cli("pca --cloud " + (dir / "m.csv") + " --k 2 --out " + (dir / "b.pca")) == 0);
    CHECK(run_cli("pca --cloud " + (dir / "m.csv") + " --k 0 --out " + (dir / "b.pca")) == 1);
    CHECK(run_cli("pca --cloud " + (dir / "absent.csv") + " --k 2 --out " + (dir / "b.pca")) == 2);
    CHECK(run_cli("frobnicate") == 2);
    std::ofstream(dir / "bad.json") << "{\"schema_version\": 1, \"stages\": [{\"name\": \"x\", \"kind\": \"nope\"}]}";
    CHECK(run_cli("run --config " + (dir / "bad.json")) == 2);
}
