#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "nca_scope/image.hpp"
#include "nca_scope/nca.hpp"
#include "nca_scope/trainer.hpp"

using namespace nca_scope;

namespace {

NcaModel small_model(int channels, int hidden, float fire_rate, std::uint64_t seed, float w2_scale = 0.05f) {
    ModelInit init;
    init.channels = channels;
    init.hidden_width = hidden;
    init.fire_rate = fire_rate;
    init.w2_scale = w2_scale;
    init.seed = seed;
    return make_model(init);
}

TrainConfig short_config(int steps, long epochs = 1) {
    TrainConfig c;
    c.steps_min = c.steps_max = steps;
    c.epochs = epochs;
    c.batch_size = 1;
    c.pool_size = 4;
    c.precision = Precision::Double;
    c.rng_seed = 5;
    return c;
}

}  // namespace

TEST_CASE("rmse loss") {
    GridState g(2, 2, 5, ChannelMode::RgbaAlive);
    GridState target(2, 2, 4, ChannelMode::RgbaAlive);
    CHECK(loss_rmse(g, target) == 0.0);
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c)
            for (int ch = 0; ch < 4; ++ch) g.at(r, c, ch) = 1.0f;
    CHECK(loss_rmse(g, target) == doctest::Approx(1.0));

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    double sq = 0.0;
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c)
            for (int ch = 0; ch < 4; ++ch) {
                g.at(r, c, ch) = u(rng);
                target.at(r, c, ch) = u(rng);
                const double d = static_cast<double>(g.at(r, c, ch)) - target.at(r, c, ch);
                sq += d * d;
            }
    CHECK(loss_rmse(g, target) == doctest::Approx(std::sqrt(sq / 16.0)));
    CHECK_THROWS_AS(loss_rmse(g, GridState(3, 2, 4, ChannelMode::RgbaAlive)), ContractError);
}

TEST_CASE("analytic gradient matches finite differences on one step") {
    const auto model = small_model(6, 8, 1.0f, 11);
    const auto target = square_target(8, 8, 4, {1.0, 0.0, 0.0}, ChannelMode::RgbaAlive);
    const auto cfg = short_config(1);
    const auto report = bptt_gradient(model, {target}, cfg);
    for (std::size_t i = 0; i < param_tensor_size(model, ParamTensor::W2); i += 5) {
        const ParamCoordinate c{ParamTensor::W2, i};
        const double a = report.at(c), n = finite_diff_gradient(model, {target}, cfg, c);
        CHECK(std::abs(a - n) <= 1e-6 * std::max({std::abs(a), std::abs(n), 1e-6}));
    }
}

TEST_CASE("dead hidden unit has no gradient") {
    auto model = small_model(6, 8, 1.0f, 12);
    model.params.w1.col(3).setZero();
    model.params.b1(3) = -1.0f;
    const auto target = square_target(8, 8, 4, {1.0, 0.0, 0.0}, ChannelMode::RgbaAlive);
    const auto cfg = short_config(4);
    for (std::size_t ch = 0; ch < 6; ++ch) {
        const ParamCoordinate c{ParamTensor::W2, 3 * 6 + ch};
        CHECK(std::abs(finite_diff_gradient(model, {target}, cfg, c)) <= 1e-8);
    }
}

TEST_CASE("one SGD step equals the normalised finite-difference step") {
    const auto model = small_model(6, 8, 1.0f, 13);
    const auto target = square_target(8, 8, 4, {0.0, 1.0, 0.0}, ChannelMode::RgbaAlive);
    auto cfg = short_config(6);
    cfg.optimizer.kind = OptimizerKind::Sgd;
    cfg.optimizer.learning_rate = 0.01;
    const auto result = train(model, {target}, cfg);

    const auto n = param_tensor_size(model, ParamTensor::W2);
    std::vector<double> g(n);
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        g[i] = finite_diff_gradient(model, {target}, cfg, {ParamTensor::W2, i});
        norm += g[i] * g[i];
    }
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < n; ++i) {
        const double expected = -0.01 * g[i] / (norm + cfg.grad_norm_eps);
        const double actual = static_cast<double>(result.model.params.w2.data()[i]) - model.params.w2.data()[i];
        CHECK(std::abs(actual - expected) <= 1e-3 * std::abs(expected) + 1e-7);
    }
}

TEST_CASE("zero learning rate and frozen kernels") {
    const auto model = small_model(6, 8, 0.5f, 14);
    const auto target = square_target(8, 8, 4, {1.0, 1.0, 0.0}, ChannelMode::RgbaAlive);
    auto cfg = short_config(8, 3);
    cfg.batch_size = 2;
    cfg.optimizer.learning_rate = 0.0;
    cfg.precision = Precision::Single;
    CHECK(train(model, {target}, cfg).model == model);

    cfg.optimizer.learning_rate = 2e-3;
    const auto trained = train(model, {target}, cfg).model;
    CHECK(trained.params.kernels == model.params.kernels);
    CHECK(!(trained.params.w2 == model.params.w2));
}

TEST_CASE("tiny task halves its loss") {
    const auto model = small_model(6, 32, 0.5f, 15, 0.0f);
    const auto target = square_target(8, 8, 4, {1.0, 0.0, 0.0}, ChannelMode::RgbaAlive);
    TrainConfig cfg;
    cfg.steps_min = 24;
    cfg.steps_max = 32;
    cfg.epochs = 200;
    cfg.batch_size = 4;
    cfg.pool_size = 32;
    cfg.rng_seed = 2;
    const auto result = train(model, {target}, cfg);
    REQUIRE(result.log.size() == 200);
    for (double l : result.log.loss) CHECK(l >= 0.0);
    double tail = 0.0;
    for (std::size_t i = 180; i < 200; ++i) tail += result.log.loss[i] / 20.0;
    CHECK(tail < 0.5 * result.log.loss.front());
}

TEST_CASE("training is reproducible and writes its log") {
    const auto model = small_model(6, 8, 0.5f, 16);
    const auto target = disc_target(8, 8, 3.0, {0.0, 0.0, 1.0}, ChannelMode::RgbaAlive);
    TrainConfig cfg;
    cfg.steps_min = 6;
    cfg.steps_max = 10;
    cfg.epochs = 5;
    cfg.batch_size = 3;
    cfg.pool_size = 8;
    cfg.damage_samples = 1;
    const auto a = train(model, {target}, cfg), b = train(model, {target}, cfg);
    CHECK(a.model == b.model);
    CHECK(a.log.loss == b.log.loss);

    const auto path = (std::filesystem::temp_directory_path() / "nca_scope_loss.csv").string();
    a.log.write_csv(path);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "epoch,loss,seconds");
    std::filesystem::remove(path);
}

TEST_CASE("signal schedule needs two targets and valid configs") {
    const auto model = small_model(8, 8, 0.5f, 17);
    const auto target = disc_target(8, 8, 3.0, {0.0, 1.0, 0.0}, ChannelMode::RgbaAlive);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 2;
    cfg.pool_size = 4;
    cfg.steps_min = cfg.steps_max = 4;
    cfg.signals.enabled = true;
    cfg.signals.signal = SignalEvent{4, 4, 1, 7, 1.0f, 1};
    CHECK_THROWS_AS(train(model, {target}, cfg), ContractError);
    cfg.signals.enabled = false;
    cfg.steps_min = 9;
    cfg.steps_max = 4;
    CHECK_THROWS_AS(train(model, {target}, cfg), ContractError);
    cfg.steps_min = 4;
    cfg.pool_size = 1;
    CHECK_THROWS_AS(train(model, {target}, cfg), ContractError);
}

TEST_CASE("checkpoints fire on schedule") {
    const auto model = small_model(6, 8, 0.5f, 18);
    const auto target = square_target(8, 8, 4, {1.0, 0.0, 0.0}, ChannelMode::RgbaAlive);
    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.batch_size = 2;
    cfg.pool_size = 4;
    cfg.steps_min = cfg.steps_max = 4;
    cfg.checkpoint_every = 2;
    std::vector<long> seen;
    cfg.on_checkpoint = [&](long epoch, const NcaModel&) { seen.push_back(epoch); };
    train(model, {target}, cfg);
    CHECK(seen == std::vector<long>{2, 4, 6});
}
