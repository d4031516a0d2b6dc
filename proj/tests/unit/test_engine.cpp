#include <doctest.h>

#include <filesystem>
#include <random>

#include "fixtures.hpp"
#include "nca_scope/nca.hpp"
#include "oracles.hpp"

using namespace nca_scope;

namespace {

NcaModel random_model(int channels, int hidden, std::uint64_t seed, float fire_rate = 0.5f, float w2_scale = 0.1f) {
    ModelInit init;
    init.channels = channels;
    init.hidden_width = hidden;
    init.fire_rate = fire_rate;
    init.w2_scale = w2_scale;
    init.seed = seed;
    auto m = make_model(init);
    std::mt19937_64 rng(seed + 17);
    std::uniform_real_distribution<float> u(-0.1f, 0.1f);
    for (Eigen::Index j = 0; j < m.params.b1.size(); ++j) m.params.b1(j) = u(rng);
    return m;
}

GridState random_grid(int h, int w, int c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    GridState g(h, w, c, ChannelMode::RgbaAlive);
    for (auto& v : g.values) v = u(rng);
    return g;
}

}  // namespace

TEST_CASE("perception of a constant grid") {
    const auto m = random_model(4, 8, 1);
    GridState g(5, 5, 4, ChannelMode::RgbaAlive);
    for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] = static_cast<float>(i % 4) * 0.25f + 0.1f;
    const auto p = perceive(g, m);
    for (int cell = 0; cell < 25; ++cell)
        for (int ch = 0; ch < 4; ++ch) {
            CHECK(p(cell, ch) == doctest::Approx(g.values[static_cast<std::size_t>(cell) * 4 + ch]));
            CHECK(p(cell, 4 + ch) == doctest::Approx(0.0).epsilon(1e-7));
            CHECK(p(cell, 8 + ch) == doctest::Approx(0.0).epsilon(1e-7));
        }
}

TEST_CASE("perception matches brute-force convolution") {
    GridState g(3, 3, 4, ChannelMode::RgbaAlive);
    g.at(1, 1, 0) = 1.0f;
    for (auto padding : {Padding::Circular, Padding::Zero}) {
        auto m = random_model(4, 4, 2);
        m.padding = padding;
        const auto p = perceive(g, m);
        for (int k = 0; k < 3; ++k) {
            const auto expect = oracle::convolve(g, 0, m.params.kernels[static_cast<std::size_t>(k)], padding == Padding::Circular);
            for (int cell = 0; cell < 9; ++cell) CHECK(p(cell, k * 4) == doctest::Approx(expect[static_cast<std::size_t>(cell)]));
        }
        // Sobel-x at the cells left and right of the impulse: centre-row weight 2/8.
        CHECK(p(3, 4) == doctest::Approx(0.25));
        CHECK(p(5, 4) == doctest::Approx(-0.25));
    }
    auto m = random_model(5, 4, 3);
    CHECK_THROWS_AS(perceive(g, m), ContractError);
}

TEST_CASE("update step against the scalar oracle") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        for (auto padding : {Padding::Circular, Padding::Zero}) {
            auto m = random_model(6, 12, seed, 0.5f, 0.3f);
            m.padding = padding;
            auto g = random_grid(4, 4, 6, seed * 7);
            // A dead corner exercises the alive mask.
            for (int ch = 0; ch < 6; ++ch) g.at(0, 0, ch) = g.at(0, 1, ch) = g.at(1, 0, ch) = 0.0f;
            for (int r = 0; r < 4; ++r) g.at(r, 3, 3) = 0.05f;
            const auto next = update_step(g, m, seed, 5);
            const auto expect = oracle::step(g, m, seed, 5);
            for (std::size_t i = 0; i < expect.size(); ++i)
                CHECK(std::abs(next.values[i] - expect[i]) <= 1e-6);
        }
    }
}

TEST_CASE("update step trivial cases") {
    auto g = random_grid(6, 6, 6, 4);
    auto m = random_model(6, 8, 4, 0.0f);
    CHECK(update_step(g, m, 9).values == g.values);

    m = random_model(6, 8, 4, 1.0f);
    m.params.w2.setZero();
    const auto out = update_step(g, m, 9);
    const auto expect = oracle::step(g, m, 9, 0);
    for (std::size_t i = 0; i < expect.size(); ++i) CHECK(out.values[i] == static_cast<float>(expect[i]));
}

TEST_CASE("dead grid stays dead") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto m = random_model(6, 16, seed, 1.0f, 1.0f);
        for (Eigen::Index j = 0; j < m.params.b1.size(); ++j) m.params.b1(j) = 1.0f;
        GridState zero(8, 8, 6, ChannelMode::RgbaAlive);
        const auto out = update_step(zero, m, seed);
        for (float v : out.values) CHECK(v == 0.0f);
    }
}

TEST_CASE("masked cells are exactly zero and values stay finite") {
    auto m = random_model(6, 16, 5, 0.5f, 0.5f);
    auto g = seed_state(12, 12, 6, ChannelMode::RgbaAlive);
    for (int t = 0; t < 30; ++t) {
        g = update_step(g, m, 5, t);
        CHECK(g.all_finite());
        const auto alive = alive_mask(g, m.padding, m.alive_threshold);
        for (int r = 0; r < 12; ++r)
            for (int c = 0; c < 12; ++c)
                if (!alive[static_cast<std::size_t>(r * 12 + c)])
                    for (int ch = 0; ch < 6; ++ch) CHECK(g.at(r, c, ch) == 0.0f);
    }
}

TEST_CASE("locality of one update") {
    auto m = random_model(6, 16, 6, 1.0f, 0.3f);
    auto g = random_grid(11, 11, 6, 6);
    auto h = g;
    h.at(5, 5, 2) += 0.7f;
    h.at(5, 5, 3) = 0.0f;
    const auto a = update_step(g, m, 6), b = update_step(h, m, 6);
    for (int r = 0; r < 11; ++r)
        for (int c = 0; c < 11; ++c) {
            if (std::abs(r - 5) <= 2 && std::abs(c - 5) <= 2) continue;
            for (int ch = 0; ch < 6; ++ch) CHECK(a.at(r, c, ch) == b.at(r, c, ch));
        }
}

TEST_CASE("fire rate matches its expectation") {
    auto m = random_model(4, 4, 7, 0.3f);
    m.params.w2.setZero();
    m.params.w2.col(0).setConstant(1.0f);
    m.params.b1.setConstant(1.0f);
    m.mode = ChannelMode::RgbPlain;
    GridState g(20, 20, 4, ChannelMode::RgbPlain);
    long fired = 0;
    const int seeds = 50;
    for (int s = 0; s < seeds; ++s) {
        const auto out = update_step(g, m, static_cast<std::uint64_t>(s));
        for (int cell = 0; cell < 400; ++cell) fired += out.values[static_cast<std::size_t>(cell) * 4] != 0.0f;
    }
    const double n = 400.0 * seeds, p = 0.3;
    CHECK(std::abs(static_cast<double>(fired) - n * p) <= 3.0 * std::sqrt(n * p * (1 - p)));
}

TEST_CASE("seed state") {
    const auto g = seed_state(60, 60, 17, ChannelMode::RgbaAlive);
    int nonzero_cells = 0;
    double rgb = 0.0;
    for (int r = 0; r < 60; ++r)
        for (int c = 0; c < 60; ++c) {
            bool any = false;
            for (int ch = 0; ch < 17; ++ch) any |= g.at(r, c, ch) != 0.0f;
            nonzero_cells += any;
            for (int ch = 0; ch < 3; ++ch) rgb += g.at(r, c, ch);
        }
    CHECK(nonzero_cells == 1);
    CHECK(g.at(30, 30, 3) == 1.0f);
    CHECK(rgb == 0.0);
    const auto alive = alive_mask(g, Padding::Circular, 0.1f);
    CHECK(std::count(alive.begin(), alive.end(), 1) == 9);
    CHECK_THROWS_AS(seed_state(2, 5, 4, ChannelMode::RgbaAlive), ContractError);
}

TEST_CASE("perturbation") {
    auto g = random_grid(60, 60, 4, 8);
    for (auto& v : g.values) v += 0.01f;
    const auto z = apply_perturbation(g, Rect{20, 20, 40, 40}, 0.0f);
    int changed = 0;
    for (int r = 0; r < 60; ++r)
        for (int c = 0; c < 60; ++c) changed += z.at(r, c, 0) != g.at(r, c, 0);
    CHECK(changed == 400);
    CHECK(apply_perturbation(g, Rect{3, 3, 3, 3}).values == g.values);
    const auto all = apply_perturbation(g, Rect{0, 0, 60, 60});
    CHECK(std::all_of(all.values.begin(), all.values.end(), [](float v) { return v == 0.0f; }));
    CHECK_THROWS_AS(apply_perturbation(g, Rect{50, 50, 61, 60}), ValidationError);
}

TEST_CASE("rollout length, events and determinism") {
    auto m = random_model(8, 16, 9);
    const auto init = seed_state(16, 16, 8, ChannelMode::RgbaAlive);
    CHECK(rollout(m, init, 0, {}, 1).frames.size() == 1);
    const auto events = periodic_signals(SignalEvent{8, 8, 2, 7, 1.0f, 1}, 150, 20000);
    CHECK(events.signal_count() == 133);
    CHECK(rollout(m, init, 17, {}, 3, 4).frames.size() == 5);

    const auto script = periodic_signals(SignalEvent{8, 8, 2, 7, 1.0f, 1}, 10, 60);
    const auto a = rollout(m, init, 60, script, 42);
    const auto b = rollout(m, init, 60, script, 42);
    CHECK(a == b);
    CHECK(a.events.signal_count() == 5);
    for (const auto& e : a.events.events) {
        const auto& s = std::get<SignalEvent>(e.payload);
        CHECK(std::abs(s.row - 8) <= 2);
        CHECK(std::abs(s.col - 8) <= 2);
    }

    EventScript bad{{{5, SignalEvent{40, 2, 0, 7, 1.0f, 1}}}};
    CHECK_THROWS_AS(rollout(m, init, 10, bad, 1), ValidationError);
    EventScript backwards{{{5, PerturbEvent{Rect{0, 0, 2, 2}, 0.0f}}, {3, PerturbEvent{Rect{0, 0, 2, 2}, 0.0f}}}};
    CHECK_THROWS_AS(rollout(m, init, 10, backwards, 1), ValidationError);
}

TEST_CASE("event script JSON round trip") {
    EventScript s{{{3, SignalEvent{4, 5, 1, 7, 0.5f, 2}}, {9, PerturbEvent{Rect{1, 2, 3, 4}, 0.25f}}}};
    CHECK(EventScript::from_json(s.to_json()) == s);
    CHECK_THROWS_AS(EventScript::from_json("{nope"), ValidationError);
}

TEST_CASE("model file round trip") {
    const auto m = random_model(7, 9, 10);
    const auto path = (std::filesystem::temp_directory_path() / "nca_scope_engine_test.ncam").string();
    save_model(m, path);
    CHECK(load_model(path) == m);
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
    CHECK_THROWS_AS(load_model(path), TruncatedError);
    std::filesystem::remove(path);
}
