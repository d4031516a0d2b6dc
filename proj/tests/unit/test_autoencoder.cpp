#include <doctest.h>

#include <filesystem>

#include "fixtures.hpp"
#include "nca_scope/common.hpp"
#include "nca_scope//autoencoder.hpp"
#include "nca_scope/pca.hpp"

using namespace nca_scope;

namespace {

PointMatrix rank2_plus_noise(int n, int d, std::uint64_t seed, double noise) {
    PointMatrix coeffs = fixture::gaussian(n, 2, seed);
    coeffs.col(0) *= 3.0;
    coeffs.col(1) *= 1.5;
    PointMatrix p = coeffs * fixture::gaussian(2, d, seed + 1) + fixture::gaussian(n, d, seed + 2, noise);
    return p;
}

/// Span of the decoder's output directions for a linear model: decode(e_i) - decode(0).
Eigen::MatrixXd linear_decoder_span(const DenseAeModel& m) {
    const int k = m.architecture().latent_dim;
    PointMatrix probes = PointMatrix::Zero(k + 1, k);
    for (int i = 0; i < k; ++i) probes(i + 1, i) = 1.0;
    const auto out = m.decode(probes);
    Eigen::MatrixXd span(out.cols(), k);
    for (int i = 0; i < k; ++i) span.col(i) = (out.row(i + 1) - out.row(0)).transpose();
    return span;
}

}  // namespace

TEST_CASE("linear autoencoder recovers the principal subspace") {
    const auto p = rank2_plus_noise(400, 8, 1, 0.05);
    AeTrainOptions opt;
    opt.epochs = 400;
    opt.batch_size = 32;
    opt.optimizer.learning_rate = 3e-3;
    opt.rng_seed = 1;
    const auto fit = ae_fit(p, AeArchitecture::linear(8), opt);
    const auto basis = pca_fit(p, 2);
    CHECK(principal_angles(linear_decoder_span(fit.model), basis.components.transpose()).maxCoeff() < 0.05);
    CHECK(fit.loss.back() < fit.loss.front());
}

TEST_CASE("constant data collapses the latent") {
    const PointMatrix p = PointMatrix::Constant(64, 5, 0.7);
    AeTrainOptions opt;
    opt.epochs = 300;
    opt.batch_size = 16;
    opt.optimizer.learning_rate = 1e-2;
    const auto fit = ae_fit(p, AeArchitecture::dense(5, {8}), opt);
    CHECK(reconstruction_mse(fit.model, p) < 1e-4);
    const auto z = fit.model.encode(p);
    CHECK((z.rowwise() - z.row(0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("identity-width linear autoencoder reconstructs") {
    const auto p = fixture::gaussian(200, 4, 3);
    AeTrainOptions opt;
    opt.epochs = 600;
    opt.batch_size = 32;
    opt.optimizer.learning_rate = 3e-3;
    opt.lr_decay_epoch = 300;
    opt.lr_decay_factor = 0.1;
    const auto fit = ae_fit(p, AeArchitecture::linear(4, 4), opt);
    CHECK(reconstruction_mse(fit.model, p) < 1e-6);
}

TEST_CASE("encoder shapes and round trip stability") {
    const auto p = rank2_plus_noise(300, 6, 4, 0.0);
    AeTrainOptions opt;
    opt.epochs = 300;
    opt.batch_size = 32;
    opt.optimizer.learning_rate = 3e-3;
    const auto fit = ae_fit(p, AeArchitecture::linear(6), opt);
    const auto z = ae_encode(fit.model, p);
    CHECK(z.rows() == 300);
    CHECK(z.cols() == 2);
    CHECK(ae_decode(fit.model, z).cols() == 6);
    const auto again = ae_encode(fit.model, ae_decode(fit.model, z));
    CHECK((again - z).cwiseAbs().maxCoeff() < 1e-5 * (1.0 + z.cwiseAbs().maxCoeff()));
}

TEST_CASE("macro architecture keeps frame shape") {
    auto arch = AeArchitecture::macro(8, 8, 4);
    arch.validate();
    CHECK(arch.data_dim() == 256);
    const DenseAeModel m(arch, 5);
    const auto x = fixture::uniform(3, 256, 6);
    CHECK(m.encode(x).cols() == 2);
    CHECK(m.reconstruct(x).cols() == 256);
    const DenseAeModel odd(AeArchitecture::macro(6, 10, 3), 5);
    CHECK(odd.reconstruct(fixture::uniform(2, 180, 7)).cols() == 180);
    CHECK_THROWS_AS(AeArchitecture::macro(0, 8, 4).validate(), ContractError);
}

TEST_CASE("dense model file round trip") {
    const DenseAeModel m(AeArchitecture::dense(7, {5, 3}), 7);
    const auto path = (std::filesystem::temp_directory_path() / "nca_scope_test.dae").string();
    save_ae(m, path);
    const auto back = load_ae(path);
    const auto x = fixture::gaussian(4, 7, 8);
    CHECK(back.encode(x) == m.encode(x));
    CHECK(back.reconstruct(x) == m.reconstruct(x));
    std::filesystem::remove(path);
}

TEST_CASE("sparse autoencoder invariants") {
    const auto p = fixture::uniform(500, 6, 9);
    SaeTrainOptions opt;
    opt.epochs = 40;
    opt.batch_size = 32;
    const auto fit = sae_fit(p, 4, 1e-3, opt);
    CHECK(fit.model.dict_size == 24);
    const auto codes = sae_encode(fit.model, p);
    CHECK(codes.minCoeff() >= 0.0);
    for (int i = 0; i < fit.model.dict_size; ++i) CHECK(fit.model.dec_weight.row(i).norm() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(fit.stats.evaluated == 50);
    CHECK(fit.stats.dead_feature_fraction >= 0.0);
    CHECK(fit.stats.dead_feature_fraction <= 1.0);
    CHECK(fit.stats.mean_active_features <= fit.model.dict_size);

    // Dead fraction is the share of atoms that never exceed the threshold on the slice.
    const PointMatrix slice = p.bottomRows(50);
    const auto slice_codes = sae_encode(fit.model, slice);
    int dead = 0;
    for (int j = 0; j < fit.model.dict_size; ++j) dead += slice_codes.col(j).maxCoeff() <= opt.activation_threshold;
    CHECK(fit.stats.dead_feature_fraction == doctest::Approx(static_cast<double>(dead) / fit.model.dict_size));
}

TEST_CASE("unpenalised sparse autoencoder reconstructs") {
    const auto p = fixture::gaussian(400, 5, 10);
    SaeTrainOptions opt;
    opt.epochs = 1500;
    opt.batch_size = 64;
    opt.optimizer.learning_rate = 1e-2;
    opt.lr_decay_epoch = 500;
    opt.lr_decay_factor = 0.1;
    opt.holdout_fraction = 0.0;
    const auto fit = sae_fit(p, 2, 0.0, opt);
    CHECK(fit.stats.reconstruction_mse < 1e-8);
}

TEST_CASE("per-frame mean features") {
    SaeTrainOptions opt;
    opt.epochs = 2;
    auto traj = fixture::random_trajectory(3, 4, 4, 5, 11);
    const auto fit = sae_fit(extract_microscopic(traj, false, 1000, 0).points, 2, 1e-3, opt);

    traj.frames[1] = traj.frames[0];
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c)
            if (r != 2 || c != 1) traj.frames[2].at(r, c, 3) = 0.0f;
    const auto cloud = per_frame_mean_features(fit.model, traj, true);
    CHECK(cloud.size() == 3);
    CHECK(cloud.dim() == static_cast<std::size_t>(fit.model.dict_size));
    CHECK(cloud.points.row(0) == cloud.points.row(1));

    PointMatrix cell(1, 5);
    for (int ch = 0; ch < 5; ++ch) cell(0, ch) = traj.frames[2].at(2, 1, ch);
    CHECK((cloud.points.row(2) - sae_encode(fit.model, cell).row(0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sparse model file round trip") {
    SaeTrainOptions opt;
    opt.epochs = 1;
    const auto fit = sae_fit(fixture::gaussian(40, 3, 12), 2, 1e-3, opt);
    const auto path = (std::filesystem::temp_directory_path() / "nca_scope_test.sae").string();
    save_sae(fit.model, path);
    const auto back = load_sae(path);
    CHECK(back.enc_weight == fit.model.enc_weight);
    CHECK(back.dec_weight == fit.model.dec_weight);
    CHECK(back.l1_coefficient == fit.model.l1_coefficient);
    std::filesystem::remove(path);
}
