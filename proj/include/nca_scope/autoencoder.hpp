#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nca_scope/optim.hpp"
#include "nca_scope/trajectory.hpp"

namespace nca_scope {

enum class AeActivation { Linear, LeakyRelu };
enum class AeKind { Dense, MacroConv };

struct AeArchitecture {
    AeKind kind = AeKind::Dense;
    int input_dim = 0;        // Dense only; MacroConv derives H*W*C
    std::vector<int> hidden;  // encoder widths before the latent; the decoder mirrors them
    int latent_dim = 2;
    AeActivation activation = AeActivation::LeakyRelu;
    double leaky_slope = 0.01;

    // MacroConv: frames of height x width x channels, three 2x2 stride-2 stages.
    int height = 0, width = 0, channels = 0;
    std::vector<int> conv_channels{8, 8, 8};

    static AeArchitecture linear(int input_dim, int latent_dim = 2);
    static AeArchitecture dense(int input_dim, std::vector<int> hidden, int latent_dim = 2);
    static AeArchitecture macro(int height, int width, int channels, std::vector<int> hidden = {32});

    int data_dim() const;
    void validate() const;
};

/// One layer acting on a batch of flattened samples (rows).
struct AeLayer {
    enum class Kind : std::uint8_t { Dense, ConvDown, ConvUp, Leaky };
    Kind kind = Kind::Dense;
    // Dense uses in_c/out_c as feature counts with 1 x 1 spatial extent.
    int in_h = 1, in_w = 1, in_c = 0;
    int out_h = 1, out_w = 1, out_c = 0;
    double slope = 0.01;
    std::vector<double> weight;  // Dense: in x out. Conv: [ky][kx][in_c][out_c]
    std::vector<double> bias;

    int in_size() const { return in_h * in_w * in_c; }
    int out_size() const { return out_h * out_w * out_c; }
    bool has_params() const { return kind != Kind::Leaky; }
};

class DenseAeModel {
public:
    DenseAeModel() = default;
    DenseAeModel(const AeArchitecture& arch, std::uint64_t rng_seed);

    const AeArchitecture& architecture() const { return arch_; }
    const std::vector<AeLayer>& encoder() const { return encoder_; }
    const std::vector<AeLayer>& decoder() const { return decoder_; }
    std::vector<AeLayer>& encoder() { return encoder_; }
    std::vector<AeLayer>& decoder() { return decoder_; }

    PointMatrix encode(const PointMatrix& points) const;
    PointMatrix decode(const PointMatrix& coords) const;
    PointMatrix reconstruct(const PointMatrix& points) const { return decode(encode(points)); }

private:
    AeArchitecture arch_;
    std::vector<AeLayer> encoder_, decoder_;
};

struct AeTrainOptions {
    long epochs = 300;
    int batch_size = 64;
    OptimizerConfig optimizer{OptimizerKind::Adam, 1e-3};
    long lr_decay_epoch = 0;  // 0 disables; applied again every lr_decay_epoch epochs
    double lr_decay_factor = 0.5;
    std::uint64_t rng_seed = 0;
    std::function<void(long epoch, double loss)> on_epoch;
};

struct AeFit {
    DenseAeModel model;
    std::vector<double> loss;  // mean squared error per epoch
};

/// Mean squared reconstruction error per entry.
double reconstruction_mse(const DenseAeModel& model, const PointMatrix& points);

AeFit ae_fit(const PointMatrix& points, const AeArchitecture& arch, const AeTrainOptions& options);
inline PointMatrix ae_encode(const DenseAeModel& model, const PointMatrix& points) { return model.encode(points); }
inline PointMatrix ae_decode(const DenseAeModel& model, const PointMatrix& coords) { return model.decode(coords); }

void save_ae(const DenseAeModel& model, const std::string& path);
DenseAeModel load_ae(const std::string& path);

/// Overcomplete ReLU autoencoder: code = relu((x - dec_bias) enc + enc_bias),
/// x_hat = code dec + dec_bias. Decoder rows (atoms) have unit norm.
struct SaeModel {
    int input_dim = 0;
    int dict_size = 0;
    double l1_coefficient = 0.0;
    PointMatrix enc_weight;  // input_dim x dict_size
    Eigen::RowVectorXd enc_bias;
    PointMatrix dec_weight;  // dict_size x input_dim
    Eigen::RowVectorXd dec_bias;
};

struct SaeStats {
    double reconstruction_mse = 0.0;
    double mean_active_features = 0.0;
    double dead_feature_fraction = 0.0;
    double activation_threshold = 1e-6;
    std::size_t evaluated = 0;

    nlohmann::json to_json() const;
};

struct SaeTrainOptions {
    long epochs = 200;
    int batch_size = 128;
    OptimizerConfig optimizer{OptimizerKind::Adam, 1e-3};
    long lr_decay_epoch = 0;
    double lr_decay_factor = 0.5;
    /// L1 coefficient ramps linearly from 0 over this many epochs.
    long l1_warmup_epochs = 0;
    double activation_threshold = 1e-6;
    double holdout_fraction = 0.1;  // last slice of the cloud, used only for stats
    std::uint64_t rng_seed = 0;
    std::function<void(long epoch, double loss)> on_epoch;
};

struct SaeFit {
    SaeModel model;
    SaeStats stats;
    std::vector<double> loss;  // MSE + l1 * mean |code|_1 per epoch
};

SaeFit sae_fit(const PointMatrix& points, int expansion, double l1_coefficient, const SaeTrainOptions& options);
PointMatrix sae_encode(const SaeModel& model, const PointMatrix& points);
PointMatrix sae_decode(const SaeModel& model, const PointMatrix& codes);
SaeStats sae_stats(const SaeModel& model, const PointMatrix& points, double activation_threshold = 1e-6);

/// One point per frame: the mean code over the frame's cells (live cells only
/// when exclude_dead); colour is the frame's mean RGB. A frame without live
/// cells maps to the zero vector.
PointCloud per_frame_mean_features(const SaeModel& model, const Trajectory& trajectory, bool exclude_dead);

void save_sae(const SaeModel& model, const std::string& path);
SaeModel load_sae(const std::string& path);

}  // namespace nca_scope
