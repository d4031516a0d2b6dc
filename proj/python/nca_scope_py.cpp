#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "nca_scope/autoencoder.hpp"
#include "nca_scope/common.hpp"
#include "nca_scope/homology.hpp"
#include "nca_scope/nca.hpp"
#include "nca_scope/pca.hpp"
#include "nca_scope/pipeline.hpp"
#include "nca_scope/trajectory.hpp"

namespace py = pybind11;
using namespace nca_scope;

namespace {

/// Frames as a (T, H, W, C) float32 array.
py::array_t<float> frames_array(const Trajectory& t) {
    const auto& m = t.meta;
    py::array_t<float> out({static_cast<py::ssize_t>(t.frames.size()), static_cast<py::ssize_t>(m.height),
                            static_cast<py::ssize_t>(m.width), static_cast<py::ssize_t>(m.channels)});
    float* dst = out.mutable_data();
    for (const auto& f : t.frames) dst = std::copy(f.values.begin(), f.values.end(), dst);
    return out;
}

/// Diagram as an (n, 3) array of dim, birth, death.
Eigen::MatrixXd diagram_array(const PersistenceDiagram& dg) {
    const auto sorted = dg.sorted();
    Eigen::MatrixXd out(static_cast<Eigen::Index>(sorted.size()), 3);
    for (std::size_t i = 0; i < sorted.size(); ++i) out.row(static_cast<Eigen::Index>(i)) << sorted[i].dim, sorted[i].birth, sorted[i].death;
    return out;
}

PersistenceDiagram diagram_from(const Eigen::MatrixXd& a) {
    PersistenceDiagram dg;
    for (Eigen::Index i = 0; i < a.rows(); ++i) dg.intervals.push_back({static_cast<int>(a(i, 0)), a(i, 1), a(i, 2)});
    return dg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Topological and linear analysis of neural cellular automata";
    m.attr("__version__") = kVersion;

    // Translators are tried newest first, so the base class goes first.
    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
    py::register_exception<CapacityError>(m, "CapacityError", PyExc_MemoryError);

    py::class_<PcaBasis>(m, "PcaBasis")
        .def_readonly("mean", &PcaBasis::mean)
        .def_readonly("components", &PcaBasis::components)
        .def_readonly("explained_variance", &PcaBasis::explained_variance)
        .def_property_readonly("k", &PcaBasis::k)
        .def("project", [](const PcaBasis& b, const PointMatrix& x) { return pca_project(b, x); })
        .def("reconstruct", [](const PcaBasis& b, const PointMatrix& z) { return pca_reconstruct(b, z); });

    m.def(
        "pca_fit",
        [](const PointMatrix& x, int k, const std::string& method) {
            const PcaMethod pm = method == "gram" ? PcaMethod::Gram : method == "covariance" ? PcaMethod::Covariance : PcaMethod::Auto;
            return pca_fit(x, k, pm);
        },
        py::arg("points"), py::arg("k"), py::arg("method") = "auto");
    m.def("principal_angles", &principal_angles, py::arg("a"), py::arg("b"));

    m.def(
        "rips_persistence",
        [](const PointMatrix& x, int max_dim, double max_radius) {
            py::gil_scoped_release release;
            return diagram_array(rips_persistence(distance_matrix(x), max_dim, max_radius));
        },
        py::arg("points"), py::arg("max_dim") = 1, py::arg("max_radius") = -1.0,
        "Vietoris-Rips persistence; rows are (dim, birth, death) with inf for essential classes.");
    m.def(
        "betti",
        [](const Eigen::MatrixXd& diagram, std::optional<double> threshold) {
            const auto r = betti_report(diagram_from(diagram), threshold);
            return py::make_tuple(r.h0(), r.h1(), r.h2(), r.significance_threshold);
        },
        py::arg("diagram"), py::arg("threshold") = py::none(),
        "Significant (h0, h1, h2) counts and the threshold used.");
    m.def("maxmin_subsample", &maxmin_subsample, py::arg("points"), py::arg("budget"), py::arg("seed") = 0);
    m.def("ph_coverage", &ph_coverage, py::arg("budget"), py::arg("points"));

    m.def(
        "load_trajectory",
        [](const std::string& path) {
            const auto t = load_trajectory(path);
            return py::make_tuple(frames_array(t), t.meta.record_every, py::str(t.events.to_json()));
        },
        py::arg("path"), "Returns (frames[T,H,W,C], record_every, events_json).");
    m.def(
        "macro_cloud",
        [](const std::string& path, long begin, long end) {
            const auto c = extract_macroscopic(load_trajectory(path), {begin, end});
            return py::make_tuple(c.points, std::vector<Colour>(c.colour));
        },
        py::arg("trajectory"), py::arg("begin") = 0, py::arg("end") = LONG_MAX);
    m.def(
        "micro_cloud",
        [](const std::string& path, std::size_t max_points, std::uint64_t seed, bool exclude_dead) {
            const auto c = extract_microscopic(load_trajectory(path), exclude_dead, max_points, seed);
            return py::make_tuple(c.points, std::vector<Colour>(c.colour));
        },
        py::arg("trajectory"), py::arg("max_points") = 20000, py::arg("seed") = 0, py::arg("exclude_dead") = true);

    m.def(
        "rollout",
        [](const std::string& model_path, int height, int width, long steps, std::uint64_t seed, const std::string& events_json) {
            const auto model = load_model(model_path);
            const auto events = events_json.empty() ? EventScript{} : EventScript::from_json(events_json);
            Trajectory t;
            {
                py::gil_scoped_release release;
                t = rollout(model, seed_state(height, width, model.channels, model.mode), steps,
                            events, seed);
            }
            return frames_array(t);
        },
        py::arg("model"), py::arg("height"), py::arg("width"), py::arg("steps"), py::arg("seed") = 0, py::arg("events") = "",
        "Rollout from the single-cell seed; returns frames[T,H,W,C].");

    m.def(
        "sae_fit",
        [](const PointMatrix& x, int expansion, double l1, long epochs, double lr, std::uint64_t seed) {
            SaeTrainOptions opt;
            opt.epochs = epochs;
            opt.optimizer.learning_rate = lr;
            opt.rng_seed = seed;
            SaeFit fit;
            {
                py::gil_scoped_release release;
                fit = sae_fit(x, expansion, l1, opt);
            }
            py::dict stats;
            stats["reconstruction_mse"] = fit.stats.reconstruction_mse;
            stats["mean_active_features"] = fit.stats.mean_active_features;
            stats["dead_feature_fraction"] = fit.stats.dead_feature_fraction;
            return py::make_tuple(sae_encode(fit.model, x), fit.model.dec_weight, stats);
        },
        py::arg("points"), py::arg("expansion") = 8, py::arg("l1") = 1e-3, py::arg("epochs") = 200, py::arg("lr") = 1e-3,
        py::arg("seed") = 0, "Returns (codes, atoms, stats).");

    m.def(
        "run_experiment",
        [](const std::string& config_json) {
            const auto cfg = ExperimentConfig::from_json(nlohmann::json::parse(config_json));
            Manifest manifest;
            {
                py::gil_scoped_release release;
                manifest = run_experiment(cfg);
            }
            return manifest.to_json().dump();
        },
        py::arg("config_json"), "Runs an experiment config; returns the manifest as JSON text.");
    m.def("recipe", [](const std::string& name, const std::string& out_dir, const std::string& model, const std::string& trajectory) {
        RecipeOptions opt;
        opt.output_dir = out_dir;
        opt.model = model;
        opt.trajectory = trajectory;
        return make_recipe(name, opt).to_json().dump(2);
    }, py::arg("name"), py::arg("out_dir") = "out", py::arg("model") = "", py::arg("trajectory") = "");
    m.def("recipe_names", &recipe_names);
}
