#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "fixtures.hpp"
#include "nca_scope/common.hpp"
#include "nca_scope/field.hpp"
#include "nca_scope/svg.hpp"

using namespace nca_scope;

namespace {

constexpr int kH = 4, kW = 4, kC = 3;

/// Per-channel dynamics with attractors at 0 and 1 and a boundary at 0.5:
/// x += -rate * x below the boundary, -rate * (x - 1) above it. Hidden units:
/// a shifted identity, a constant, and a steep ramp pair forming the step.
NcaModel two_attractor_model(double rate) {
    ModelInit init;
    init.channels = kC;
    init.hidden_width = 4 * kC;
    init.mode = ChannelMode::RgbPlain;
    init.fire_rate = 1.0f;
    auto m = make_model(init);
    m.params.w1.setZero();
    m.params.b1.setZero();
    m.params.w2.setZero();
    const float shift = 2.0f, slope = 200.0f;
    for (int c = 0; c < kC; ++c) {
        const int u = 4 * c;
        m.params.w1(c, u) = 1.0f;
        m.params.b1(u) = shift;
        m.params.w2(u, c) = static_cast<float>(-rate);
        m.params.b1(u + 1) = 1.0f;
        m.params.w2(u + 1, c) = static_cast<float>(rate * shift);
        m.params.w1(c, u + 2) = slope;
        m.params.b1(u + 2) = -0.5f * slope;
        m.params.w2(u + 2, c) = static_cast<float>(rate);
        m.params.w1(c, u + 3) = slope;
        m.params.b1(u + 3) = -0.5f * slope - 1.0f;
        m.params.w2(u + 3, c) = static_cast<float>(-rate);
    }
    return m;
}

Trajectory basin_runs(const NcaModel& m) {
    Trajectory t;
    t.meta.height = kH;
    t.meta.width = kW;
    t.meta.channels = kC;
    t.meta.mode = ChannelMode::RgbPlain;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> jitter(-0.05f, 0.05f);
    for (float start : {0.1f, 0.2f, 0.3f, 0.4f, 0.6f, 0.7f, 0.8f, 0.9f}) {
        GridState g(kH, kW, kC, ChannelMode::RgbPlain);
        for (auto& v : g.values) v = start + jitter(rng);
        for (int s = 0; s < 20; ++s) {
            t.frames.push_back(g);
            g = update_step(g, m, 1, s);
        }
    }
    return t;
}

}  // namespace

TEST_CASE("lift weights form a simplex") {
    const auto latent = fixture::uniform(50, 2, 1);
    for (double temperature : {0.0, 0.05, 1.0}) {
        const auto lw = lift_weights(latent, Eigen::RowVector2d(0.4, 0.6), 10, temperature);
        CHECK(lw.neighbours.size() == 10);
        double total = 0.0;
        for (double w : lw.weights) {
            CHECK(w >= 0.0);
            total += w;
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
    const auto one = lift_weights(latent, Eigen::RowVector2d(0.4, 0.6), 1, 0.1);
    CHECK(one.weights == std::vector<double>{1.0});
}

TEST_CASE("one neighbour lifts to the nearest recorded state") {
    const auto traj = fixture::random_trajectory(12, 3, 3, 4, 2);
    const auto cloud = extract_macroscopic(traj);
    const auto basis = pca_fit(cloud, 2);
    const PointMatrix latent = pca_project(basis, cloud.points);
    FieldOptions opt;
    opt.k_neighbours = 1;
    const Eigen::RowVector2d at = latent.row(5) + Eigen::RowVector2d(1e-6, 0.0);
    const auto lifted = lift_state(cloud, latent, basis, at, opt, 0.3);
    CHECK(lifted == Eigen::RowVectorXd(cloud.points.row(5)));
}

TEST_CASE("identity dynamics give zero vectors") {
    const auto traj = fixture::random_trajectory(30, 4, 4, 5, 4);
    ModelInit init;
    init.channels = 5;
    init.hidden_width = 8;
    init.fire_rate = 0.7f;
    const auto model = make_model(init);
    const auto basis = pca_fit(extract_macroscopic(traj), 2);
    FieldOptions opt;
    opt.resolution = 8;
    opt.k_neighbours = 4;
    const auto field = field_lines(traj, basis, model, opt);
    CHECK(field.size() == 64);
    CHECK(std::count(field.valid.begin(), field.valid.end(), 1) > 0);
    CHECK(field.vectors.cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("vectors point toward the attractor of their basin") {
    const auto model = two_attractor_model(0.2);
    const auto traj = basin_runs(model);
    const auto cloud = extract_macroscopic(traj);
    const auto basis = pca_fit(cloud, 2);
    const PointMatrix latent = pca_project(basis, cloud.points);
    const PointMatrix low = pca_project(basis, PointMatrix::Zero(1, kH * kW * kC));
    const PointMatrix high = pca_project(basis, PointMatrix::Ones(1, kH * kW * kC));

    FieldOptions opt;
    opt.resolution = 20;
    opt.k_neighbours = 5;
    const auto field = field_lines(traj, basis, model, opt);
    int counted = 0, toward = 0;
    for (std::size_t i = 0; i < field.size(); ++i) {
        if (!field.valid[i]) continue;
        const Eigen::RowVector2d at = field.grid.row(static_cast<Eigen::Index>(i));
        const auto state = lift_state(cloud, latent, basis, at, opt, field.temperature);
        const double mean = state.mean();
        if (std::abs(mean - 0.5) < 0.05) continue;
        const Eigen::RowVector2d target = mean < 0.5 ? low.row(0) : high.row(0);
        ++counted;
        toward += field.vectors.row(static_cast<Eigen::Index>(i)).dot(target - at) > 0.0;
    }
    REQUIRE(counted > 20);
    CHECK(toward >= 0.95 * counted);
}

TEST_CASE("field is reproducible and renders byte-stably") {
    const auto model = two_attractor_model(0.1);
    const auto traj = basin_runs(model);
    const auto basis = pca_fit(extract_macroscopic(traj), 2);
    FieldOptions opt;
    opt.resolution = 6;
    const auto a = field_lines(traj, basis, model, opt), b = field_lines(traj, basis, model, opt);
    CHECK(a.vectors == b.vectors);
    CHECK(a.valid == b.valid);
    const auto embedding = extract_macroscopic(traj).with_points(pca_project(basis, extract_macroscopic(traj).points));
    CHECK(field_svg(a, embedding, 2.0) == field_svg(b, embedding, 2.0));

    const auto path = (std::filesystem::temp_directory_path() / "nca_scope_field.csv").string();
    write_field_csv(a, path);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "x,y,dx,dy,valid");
    std::filesystem::remove(path);
}

TEST_CASE("empty field renders the scatter only") {
    PointCloud embedding;
    embedding.points = fixture::uniform(3, 2, 5);
    embedding.colour.assign(3, Colour{2.0, -1.0, 0.5});
    embedding.provenance.assign(3, Provenance::frame(0));
    const auto svg = field_svg(VectorField{}, embedding);
    CHECK(svg.find("marker-end") == std::string::npos);
    std::size_t circles = 0;
    for (auto pos = svg.find("<circle"); pos != std::string::npos; pos = svg.find("<circle", pos + 1)) ++circles;
    CHECK(circles == 3);
    CHECK(svg.find("#ff0080") != std::string::npos);
}

TEST_CASE("field validation") {
    const auto traj = fixture::random_trajectory(5, 3, 3, 4, 6);
    ModelInit init;
    init.channels = 4;
    init.hidden_width = 4;
    const auto model = make_model(init);
    const auto basis = pca_fit(extract_macroscopic(traj), 2);
    FieldOptions opt;
    opt.nca_steps = 0;
    CHECK_THROWS_AS(field_lines(traj, basis, model, opt), ContractError);
    init.channels = 5;
    CHECK_THROWS_AS(field_lines(traj, basis, make_model(init)), ContractError);
}
