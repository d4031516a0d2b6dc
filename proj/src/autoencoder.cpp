#include "nca_scope/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "nca_scope/common.hpp"

namespace nca_scope {

namespace {

using MatrixMap = Eigen::Map<PointMatrix>;
using ConstMatrixMap = Eigen::Map<const PointMatrix>;

AeLayer dense_layer(int in, int out) {
    AeLayer l;
    l.kind = AeLayer::Kind::Dense;
    l.in_c = in;
    l.out_c = out;
    l.weight.assign(static_cast<std::size_t>(in) * out, 0.0);
    l.bias.assign(static_cast<std::size_t>(out), 0.0);
    return l;
}

AeLayer leaky_layer(int size, double slope) {
    AeLayer l;
    l.kind = AeLayer::Kind::Leaky;
    l.in_c = l.out_c = size;
    l.slope = slope;
    return l;
}

AeLayer conv_layer(AeLayer::Kind kind, int in_h, int in_w, int in_c, int out_h, int out_w, int out_c) {
    AeLayer l;
    l.kind = kind;
    l.in_h = in_h, l.in_w = in_w, l.in_c = in_c;
    l.out_h = out_h, l.out_w = out_w, l.out_c = out_c;
    l.weight.assign(static_cast<std::size_t>(4) * in_c * out_c, 0.0);
    l.bias.assign(static_cast<std::size_t>(out_c), 0.0);
    return l;
}

std::size_t conv_weight(const AeLayer& l, int ky, int kx, int ci, int co) {
    return ((static_cast<std::size_t>(ky * 2 + kx) * l.in_c + ci) * l.out_c + co);
}

PointMatrix forward(const AeLayer& l, const PointMatrix& x) {
    const Eigen::Index n = x.rows();
    switch (l.kind) {
        case AeLayer::Kind::Dense: {
            ConstMatrixMap w(l.weight.data(), l.in_c, l.out_c);
            PointMatrix y = x * w;
            y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(l.bias.data(), l.out_c);
            return y;
        }
        case AeLayer::Kind::Leaky:
            return x.unaryExpr([s = l.slope](double v) { return v > 0.0 ? v : s * v; });
        case AeLayer::Kind::ConvDown: {
            PointMatrix y(n, l.out_size());
            for (Eigen::Index s = 0; s < n; ++s)
                for (int r = 0; r < l.out_h; ++r)
                    for (int c = 0; c < l.out_w; ++c)
                        for (int co = 0; co < l.out_c; ++co) {
                            double acc = l.bias[static_cast<std::size_t>(co)];
                            for (int ky = 0; ky < 2; ++ky)
                                for (int kx = 0; kx < 2; ++kx) {
                                    const int ir = 2 * r + ky, ic = 2 * c + kx;
                                    if (ir >= l.in_h || ic >= l.in_w) continue;
                                    for (int ci = 0; ci < l.in_c; ++ci)
                                        acc += x(s, (ir * l.in_w + ic) * l.in_c + ci) * l.weight[conv_weight(l, ky, kx, ci, co)];
                                }
                            y(s, (r * l.out_w + c) * l.out_c + co) = acc;
                        }
            return y;
        }
        case AeLayer::Kind::ConvUp: {
            PointMatrix y(n, l.out_size());
            for (Eigen::Index s = 0; s < n; ++s)
                for (int r = 0; r < l.out_h; ++r)
                    for (int c = 0; c < l.out_w; ++c) {
                        const int ir = r / 2, ic = c / 2, ky = r % 2, kx = c % 2;
                        for (int co = 0; co < l.out_c; ++co) {
                            double acc = l.bias[static_cast<std::size_t>(co)];
                            for (int ci = 0; ci < l.in_c; ++ci)
                                acc += x(s, (ir * l.in_w + ic) * l.in_c + ci) * l.weight[conv_weight(l, ky, kx, ci, co)];
                            y(s, (r * l.out_w + c) * l.out_c + co) = acc;
                        }
                    }
            return y;
        }
    }
    throw ContractError("unknown layer kind");
}

/// Accumulates parameter gradients into gw/gb and returns the input gradient.
PointMatrix backward(const AeLayer& l, const PointMatrix& x, const PointMatrix& gy, std::vector<double>& gw,
                     std::vector<double>& gb) {
    const Eigen::Index n = x.rows();
    switch (l.kind) {
        case AeLayer::Kind::Dense: {
            ConstMatrixMap w(l.weight.data(), l.in_c, l.out_c);
            MatrixMap(gw.data(), l.in_c, l.out_c) += x.transpose() * gy;
            Eigen::Map<Eigen::RowVectorXd>(gb.data(), l.out_c) += gy.colwise().sum();
            return gy * w.transpose();
        }
        case AeLayer::Kind::Leaky:
            return gy.cwiseProduct(x.unaryExpr([s = l.slope](double v) { return v > 0.0 ? 1.0 : s; }));
        case AeLayer::Kind::ConvDown: {
            PointMatrix gx = PointMatrix::Zero(n, l.in_size());
            for (Eigen::Index s = 0; s < n; ++s)
                for (int r = 0; r < l.out_h; ++r)
                    for (int c = 0; c < l.out_w; ++c)
                        for (int co = 0; co < l.out_c; ++co) {
                            const double g = gy(s, (r * l.out_w + c) * l.out_c + co);
                            gb[static_cast<std::size_t>(co)] += g;
                            for (int ky = 0; ky < 2; ++ky)
                                for (int kx = 0; kx < 2; ++kx) {
                                    const int ir = 2 * r + ky, ic = 2 * c + kx;
                                    if (ir >= l.in_h || ic >= l.in_w) continue;
                                    for (int ci = 0; ci < l.in_c; ++ci) {
                                        const auto wi = conv_weight(l, ky, kx, ci, co);
                                        const auto xi = (ir * l.in_w + ic) * l.in_c + ci;
                                        gw[wi] += x(s, xi) * g;
                                        gx(s, xi) += l.weight[wi] * g;
                                    }
                                }
                        }
            return gx;
        }
        case AeLayer::Kind::ConvUp: {
            PointMatrix gx = PointMatrix::Zero(n, l.in_size());
            for (Eigen::Index s = 0; s < n; ++s)
                for (int r = 0; r < l.out_h; ++r)
                    for (int c = 0; c < l.out_w; ++c) {
                        const int ir = r / 2, ic = c / 2, ky = r % 2, kx = c % 2;
                        for (int co = 0; co < l.out_c; ++co) {
                            const double g = gy(s, (r * l.out_w + c) * l.out_c + co);
                            gb[static_cast<std::size_t>(co)] += g;
                            for (int ci = 0; ci < l.in_c; ++ci) {
                                const auto wi = conv_weight(l, ky, kx, ci, co);
                                const auto xi = (ir * l.in_w + ic) * l.in_c + ci;
                                gw[wi] += x(s, xi) * g;
                                gx(s, xi) += l.weight[wi] * g;
                            }
                        }
                    }
            return gx;
        }
    }
    throw ContractError("unknown layer kind");
}

void glorot(AeLayer& l, std::mt19937_64& rng) {
    if (!l.has_params()) return;
    const bool conv = l.kind != AeLayer::Kind::Dense;
    const double fan = (conv ? 4.0 : 1.0) * (l.in_c + l.out_c);
    std::uniform_real_distribution<double> dist(-std::sqrt(6.0 / fan), std::sqrt(6.0 / fan));
    for (auto& w : l.weight) w = dist(rng);
}

PointMatrix run(const std::vector<AeLayer>& layers, PointMatrix x) {
    for (const auto& l : layers) x = forward(l, x);
    return x;
}

int half_up(int v) { return (v + 1) / 2; }

}  // namespace

AeArchitecture AeArchitecture::linear(int input_dim, int latent_dim) {
    AeArchitecture a;
    a.input_dim = input_dim;
    a.latent_dim = latent_dim;
    a.activation = AeActivation::Linear;
    return a;
}

AeArchitecture AeArchitecture::dense(int input_dim, std::vector<int> hidden, int latent_dim) {
    AeArchitecture a;
    a.input_dim = input_dim;
    a.hidden = std::move(hidden);
    a.latent_dim = latent_dim;
    return a;
}

AeArchitecture AeArchitecture::macro(int height, int width, int channels, std::vector<int> hidden) {
    AeArchitecture a;
    a.kind = AeKind::MacroConv;
    a.height = height;
    a.width = width;
    a.channels = channels;
    a.hidden = std::move(hidden);
    return a;
}

int AeArchitecture::data_dim() const { return kind == AeKind::Dense ? input_dim : height * width * channels; }

void AeArchitecture::validate() const {
    if (latent_dim < 1) throw ContractError("latent_dim must be positive");
    if (kind == AeKind::Dense && input_dim < 1) throw ContractError("input_dim must be positive");
    if (kind == AeKind::MacroConv) {
        if (height < 1 || width < 1 || channels < 1) throw ContractError("macro autoencoder needs frame dimensions");
        if (conv_channels.size() != 3) throw ContractError("macro autoencoder has exactly three conv stages");
        for (int c : conv_channels)
            if (c < 1) throw ContractError("conv channel counts must be positive");
    }
    for (int h : hidden)
        if (h < 1) throw ContractError("hidden widths must be positive");
    if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ContractError("leaky slope must lie in [0, 1)");
}

DenseAeModel::DenseAeModel(const AeArchitecture& arch, std::uint64_t rng_seed) : arch_(arch) {
    arch.validate();
    const bool act = arch.activation == AeActivation::LeakyRelu;
    auto push_act = [&](std::vector<AeLayer>& layers, int size) {
        if (act) layers.push_back(leaky_layer(size, arch.leaky_slope));
    };

    int flat = arch.data_dim();
    std::vector<std::array<int, 3>> shapes;  // conv stage input shapes, for the decoder
    if (arch.kind == AeKind::MacroConv) {
        int h = arch.height, w = arch.width, c = arch.channels;
        for (int out_c : arch.conv_channels) {
            shapes.push_back({h, w, c});
            encoder_.push_back(conv_layer(AeLayer::Kind::ConvDown, h, w, c, half_up(h), half_up(w), out_c));
            h = half_up(h), w = half_up(w), c = out_c;
            push_act(encoder_, h * w * c);
        }
        shapes.push_back({h, w, c});
        flat = h * w * c;
    }
    int width = flat;
    for (int hdim : arch.hidden) {
        encoder_.push_back(dense_layer(width, hdim));
        push_act(encoder_, hdim);
        width = hdim;
    }
    encoder_.push_back(dense_layer(width, arch.latent_dim));

    width = arch.latent_dim;
    for (auto it = arch.hidden.rbegin(); it != arch.hidden.rend(); ++it) {
        decoder_.push_back(dense_layer(width, *it));
        push_act(decoder_, *it);
        width = *it;
    }
    decoder_.push_back(dense_layer(width, flat));
    if (arch.kind == AeKind::MacroConv) {
        push_act(decoder_, flat);
        for (int stage = 2; stage >= 0; --stage) {
            const auto in = shapes[static_cast<std::size_t>(stage) + 1];
            const auto out = shapes[static_cast<std::size_t>(stage)];
            decoder_.push_back(conv_layer(AeLayer::Kind::ConvUp, in[0], in[1], in[2], out[0], out[1], out[2]));
            if (stage > 0) push_act(decoder_, out[0] * out[1] * out[2]);
        }
    }

    std::mt19937_64 rng(rng_seed);
    for (auto& l : encoder_) glorot(l, rng);
    for (auto& l : decoder_) glorot(l, rng);
}

PointMatrix DenseAeModel::encode(const PointMatrix& points) const {
    if (points.cols() != arch_.data_dim()) throw ContractError("encoder input has the wrong dimension");
    return run(encoder_, points);
}

PointMatrix DenseAeModel::decode(const PointMatrix& coords) const {
    if (coords.cols() != arch_.latent_dim) throw ContractError("decoder input has the wrong dimension");
    return run(decoder_, coords);
}

double reconstruction_mse(const DenseAeModel& model, const PointMatrix& points) {
    return (model.reconstruct(points) - points).squaredNorm() / static_cast<double>(points.size());
}

AeFit ae_fit(const PointMatrix& points, const AeArchitecture& arch, const AeTrainOptions& options) {
    if (points.rows() < 1) throw ContractError("autoencoder needs data");
    if (points.cols() != arch.data_dim()) throw ContractError("data dimension does not match the architecture");
    if (!points.allFinite()) throw ContractError("autoencoder input has non-finite entries");
    if (options.epochs < 1 || options.batch_size < 1) throw ContractError("epochs and batch size must be positive");

    AeFit fit{DenseAeModel(arch, options.rng_seed), {}};
    std::vector<AeLayer*> layers;
    for (auto& l : fit.model.encoder()) layers.push_back(&l);
    for (auto& l : fit.model.decoder()) layers.push_back(&l);

    std::vector<std::size_t> sizes;
    for (auto* l : layers)
        if (l->has_params()) sizes.insert(sizes.end(), {l->weight.size(), l->bias.size()});
    Optimizer<double> opt(options.optimizer, sizes);
    std::vector<std::vector<double>> grads(sizes.size());

    std::mt19937_64 rng(hash_key(options.rng_seed, 0x6165ULL));
    std::vector<Eigen::Index> order(static_cast<std::size_t>(points.rows()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::vector<PointMatrix> acts(layers.size() + 1);

    for (long epoch = 0; epoch < options.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double lr_scale = 1.0;
        if (options.lr_decay_epoch > 0) lr_scale = std::pow(options.lr_decay_factor, static_cast<double>(epoch / options.lr_decay_epoch));
        double sum_sq = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(options.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
            PointMatrix batch(static_cast<Eigen::Index>(end - start), points.cols());
            for (std::size_t i = start; i < end; ++i) batch.row(static_cast<Eigen::Index>(i - start)) = points.row(order[i]);

            acts[0] = batch;
            for (std::size_t i = 0; i < layers.size(); ++i) acts[i + 1] = forward(*layers[i], acts[i]);
            const PointMatrix err = acts.back() - batch;
            sum_sq += err.squaredNorm();

            for (std::size_t i = 0; i < sizes.size(); ++i) grads[i].assign(sizes[i], 0.0);
            PointMatrix g = err * (2.0 / static_cast<double>(err.size()));
            std::size_t slot = sizes.size();
            for (std::size_t i = layers.size(); i-- > 0;) {
                if (layers[i]->has_params()) {
                    slot -= 2;
                    g = backward(*layers[i], acts[i], g, grads[slot], grads[slot + 1]);
                } else {
                    std::vector<double> none;
                    g = backward(*layers[i], acts[i], g, none, none);
                }
            }
            std::vector<std::span<double>> params;
            std::vector<std::span<const double>> gspans;
            std::size_t k = 0;
            for (auto* l : layers) {
                if (!l->has_params()) continue;
                params.emplace_back(l->weight);
                params.emplace_back(l->bias);
                gspans.emplace_back(grads[k]);
                gspans.emplace_back(grads[k + 1]);
                k += 2;
            }
            opt.step(params, gspans, lr_scale);
        }
        const double mse = sum_sq / static_cast<double>(points.size());
        if (!std::isfinite(mse)) throw TrainingError("autoencoder loss became non-finite", epoch);
        fit.loss.push_back(mse);
        if (options.on_epoch) options.on_epoch(epoch, mse);
    }
    return fit;
}

namespace {

constexpr std::string_view kAeMagic = "NDAE";
constexpr std::string_view kSaeMagic = "NSAE";
constexpr std::uint32_t kModelVersion = 1;

void write_ints(std::ostream& out, const std::vector<int>& v) {
    binio::write(out, static_cast<std::uint32_t>(v.size()));
    for (int x : v) binio::write(out, static_cast<std::int32_t>(x));
}

std::vector<int> read_ints(std::istream& in) {
    const auto n = binio::read<std::uint32_t>(in, "list length");
    if (n > 64) throw CorruptHeaderError("layer list too long");
    std::vector<int> v(n);
    for (auto& x : v) x = binio::read<std::int32_t>(in, "list entry");
    return v;
}

}  // namespace

void save_ae(const DenseAeModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    const auto& a = model.architecture();
    binio::write_magic(out, kAeMagic);
    binio::write(out, kModelVersion);
    binio::write(out, static_cast<std::uint8_t>(a.kind));
    binio::write(out, static_cast<std::uint8_t>(a.activation));
    binio::write(out, static_cast<std::int32_t>(a.input_dim));
    binio::write(out, static_cast<std::int32_t>(a.latent_dim));
    binio::write(out, a.leaky_slope);
    binio::write(out, static_cast<std::int32_t>(a.height));
    binio::write(out, static_cast<std::int32_t>(a.width));
    binio::write(out, static_cast<std::int32_t>(a.channels));
    write_ints(out, a.hidden);
    write_ints(out, a.conv_channels);
    for (const auto* layers : {&model.encoder(), &model.decoder()})
        for (const auto& l : *layers) {
            binio::write_array(out, std::span<const double>(l.weight));
            binio::write_array(out, std::span<const double>(l.bias));
        }
}

DenseAeModel load_ae(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    binio::expect_magic(in, kAeMagic);
    if (binio::read<std::uint32_t>(in, "version") != kModelVersion) throw VersionMismatchError("autoencoder version unsupported");
    AeArchitecture a;
    const auto kind = binio::read<std::uint8_t>(in, "kind");
    const auto act = binio::read<std::uint8_t>(in, "activation");
    if (kind > 1 || act > 1) throw CorruptHeaderError("autoencoder header out of range");
    a.kind = static_cast<AeKind>(kind);
    a.activation = static_cast<AeActivation>(act);
    a.input_dim = binio::read<std::int32_t>(in, "input_dim");
    a.latent_dim = binio::read<std::int32_t>(in, "latent_dim");
    a.leaky_slope = binio::read<double>(in, "slope");
    a.height = binio::read<std::int32_t>(in, "height");
    a.width = binio::read<std::int32_t>(in, "width");
    a.channels = binio::read<std::int32_t>(in, "channels");
    a.hidden = read_ints(in);
    a.conv_channels = read_ints(in);
    try {
        a.validate();
    } catch (const ContractError& e) {
        throw CorruptHeaderError(std::string("autoencoder header invalid: ") + e.what());
    }
    DenseAeModel model(a, 0);
    for (auto* layers : {&model.encoder(), &model.decoder()})
        for (auto& l : *layers) {
            binio::read_array(in, std::span<double>(l.weight), "weights");
            binio::read_array(in, std::span<double>(l.bias), "bias");
        }
    return model;
}

nlohmann::json SaeStats::to_json() const {
    return {{"reconstruction_mse", reconstruction_mse},
            {"mean_active_features", mean_active_features},
            {"dead_feature_fraction", dead_feature_fraction},
            {"activation_threshold", activation_threshold},
            {"evaluated", evaluated}};
}

namespace {

PointMatrix sae_pre(const SaeModel& m, const PointMatrix& x) {
    PointMatrix pre = (x.rowwise() - m.dec_bias) * m.enc_weight;
    pre.rowwise() += m.enc_bias;
    return pre;
}

void normalise_atoms(SaeModel& m, long epoch) {
    for (Eigen::Index j = 0; j < m.dec_weight.rows(); ++j) {
        const double norm = m.dec_weight.row(j).norm();
        if (!std::isfinite(norm) || norm < 1e-12)
            throw TrainingError("decoder atom " + std::to_string(j) + " lost its norm; codes exploded", epoch);
        m.dec_weight.row(j) /= norm;
    }
}

}  // namespace

PointMatrix sae_encode(const SaeModel& model, const PointMatrix& points) {
    if (points.cols() != model.input_dim) throw ContractError("SAE input has the wrong dimension");
    return sae_pre(model, points).cwiseMax(0.0);
}

PointMatrix sae_decode(const SaeModel& model, const PointMatrix& codes) {
    if (codes.cols() != model.dict_size) throw ContractError("SAE code has the wrong dimension");
    PointMatrix out = codes * model.dec_weight;
    out.rowwise() += model.dec_bias;
    return out;
}

SaeStats sae_stats(const SaeModel& model, const PointMatrix& points, double activation_threshold) {
    if (points.rows() == 0) throw ContractError("SAE statistics need data");
    SaeStats s;
    s.activation_threshold = activation_threshold;
    s.evaluated = static_cast<std::size_t>(points.rows());
    const PointMatrix codes = sae_encode(model, points);
    s.reconstruction_mse = (sae_decode(model, codes) - points).squaredNorm() / static_cast<double>(points.size());
    const auto active = (codes.array() > activation_threshold).cast<double>();
    s.mean_active_features = active.sum() / static_cast<double>(points.rows());
    const auto ever = active.colwise().maxCoeff();
    s.dead_feature_fraction = 1.0 - ever.sum() / static_cast<double>(model.dict_size);
    return s;
}

SaeFit sae_fit(const PointMatrix& points, int expansion, double l1_coefficient, const SaeTrainOptions& options) {
    const Eigen::Index n = points.rows(), dim = points.cols();
    if (n < 1 || dim < 1) throw ContractError("SAE needs data");
    if (expansion < 1) throw ContractError("expansion must be at least 1");
    if (l1_coefficient < 0.0) throw ContractError("l1 coefficient must be nonnegative");
    if (!points.allFinite()) throw ContractError("SAE input has non-finite entries");
    if (!(options.holdout_fraction >= 0.0 && options.holdout_fraction < 1.0)) throw ContractError("holdout fraction must lie in [0, 1)");

    const auto holdout = static_cast<Eigen::Index>(std::floor(static_cast<double>(n) * options.holdout_fraction));
    const Eigen::Index train_n = n - holdout;
    const auto train = points.topRows(train_n);

    SaeFit fit;
    SaeModel& m = fit.model;
    m.input_dim = static_cast<int>(dim);
    m.dict_size = expansion * static_cast<int>(dim);
    m.l1_coefficient = l1_coefficient;
    std::mt19937_64 rng(options.rng_seed);
    std::normal_distribution<double> gauss;
    m.dec_weight = PointMatrix::NullaryExpr(m.dict_size, dim, [&]() { return gauss(rng); });
    normalise_atoms(m, 0);
    m.enc_weight = m.dec_weight.transpose();
    m.enc_bias = Eigen::RowVectorXd::Zero(m.dict_size);
    m.dec_bias = train.colwise().mean();

    Optimizer<double> opt(options.optimizer, {static_cast<std::size_t>(m.enc_weight.size()),
                                              static_cast<std::size_t>(m.enc_bias.size()),
                                              static_cast<std::size_t>(m.dec_weight.size()),
                                              static_cast<std::size_t>(m.dec_bias.size())});
    std::vector<Eigen::Index> order(static_cast<std::size_t>(train_n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});

    for (long epoch = 0; epoch < options.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double lr_scale = 1.0;
        if (options.lr_decay_epoch > 0) lr_scale = std::pow(options.lr_decay_factor, static_cast<double>(epoch / options.lr_decay_epoch));
        const double l1 = options.l1_warmup_epochs > 0
                              ? l1_coefficient * std::min(1.0, static_cast<double>(epoch + 1) / static_cast<double>(options.l1_warmup_epochs))
                              : l1_coefficient;
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(options.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
            const auto b = static_cast<Eigen::Index>(end - start);
            PointMatrix x(b, dim);
            for (std::size_t i = start; i < end; ++i) x.row(static_cast<Eigen::Index>(i - start)) = train.row(order[i]);

            const PointMatrix xc = x.rowwise() - m.dec_bias;
            PointMatrix pre = xc * m.enc_weight;
            pre.rowwise() += m.enc_bias;
            const PointMatrix f = pre.cwiseMax(0.0);
            PointMatrix xhat = f * m.dec_weight;
            xhat.rowwise() += m.dec_bias;
            const PointMatrix err = xhat - x;
            total += err.squaredNorm() / static_cast<double>(dim) + l1 * f.sum();

            const PointMatrix g_xhat = err * (2.0 / static_cast<double>(err.size()));
            const PointMatrix g_dec_w = f.transpose() * g_xhat;
            PointMatrix g_pre = g_xhat * m.dec_weight.transpose();
            g_pre.array() += l1 / static_cast<double>(b);
            g_pre = g_pre.cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
            const PointMatrix g_enc_w = xc.transpose() * g_pre;
            const Eigen::RowVectorXd g_enc_b = g_pre.colwise().sum();
            const Eigen::RowVectorXd g_dec_b = g_xhat.colwise().sum() - (g_pre * m.enc_weight.transpose()).colwise().sum();

            opt.step({std::span<double>(m.enc_weight.data(), static_cast<std::size_t>(m.enc_weight.size())),
                      std::span<double>(m.enc_bias.data(), static_cast<std::size_t>(m.enc_bias.size())),
                      std::span<double>(m.dec_weight.data(), static_cast<std::size_t>(m.dec_weight.size())),
                      std::span<double>(m.dec_bias.data(), static_cast<std::size_t>(m.dec_bias.size()))},
                     {std::span<const double>(g_enc_w.data(), static_cast<std::size_t>(g_enc_w.size())),
                      std::span<const double>(g_enc_b.data(), static_cast<std::size_t>(g_enc_b.size())),
                      std::span<const double>(g_dec_w.data(), static_cast<std::size_t>(g_dec_w.size())),
                      std::span<const double>(g_dec_b.data(), static_cast<std::size_t>(g_dec_b.size()))},
                     lr_scale);
            normalise_atoms(m, epoch);
        }
        const double loss = total / static_cast<double>(train_n);
        if (!std::isfinite(loss)) throw TrainingError("SAE loss became non-finite", epoch);
        fit.loss.push_back(loss);
        if (options.on_epoch) options.on_epoch(epoch, loss);
    }
    fit.stats = sae_stats(m, holdout > 0 ? PointMatrix(points.bottomRows(holdout)) : PointMatrix(train), options.activation_threshold);
    return fit;
}

PointCloud per_frame_mean_features(const SaeModel& model, const Trajectory& trajectory, bool exclude_dead) {
    if (trajectory.frames.empty()) throw ContractError("trajectory has no frames");
    if (trajectory.meta.channels != model.input_dim) throw ContractError("SAE input dimension differs from channel count");
    const bool check = exclude_dead && trajectory.meta.mode == ChannelMode::RgbaAlive;
    const auto c = trajectory.meta.channels;
    PointCloud cloud;
    cloud.points = PointMatrix::Zero(static_cast<Eigen::Index>(trajectory.frames.size()), model.dict_size);
    for (std::size_t fi = 0; fi < trajectory.frames.size(); ++fi) {
        const auto& f = trajectory.frames[fi];
        std::vector<int> cells;
        for (int i = 0; i < f.height * f.width; ++i)
            if (!check || f.values[static_cast<std::size_t>(i) * c + kAlphaChannel] > trajectory.meta.alive_threshold)
                cells.push_back(i);
        if (!cells.empty()) {
            PointMatrix x(static_cast<Eigen::Index>(cells.size()), c);
            for (std::size_t k = 0; k < cells.size(); ++k)
                for (int ch = 0; ch < c; ++ch)
                    x(static_cast<Eigen::Index>(k), ch) = f.values[static_cast<std::size_t>(cells[k]) * c + ch];
            cloud.points.row(static_cast<Eigen::Index>(fi)) = sae_encode(model, x).colwise().mean();
        }
        cloud.colour.push_back(frame_colour(f, trajectory.meta.alive_threshold));
        cloud.provenance.push_back(Provenance::frame(trajectory.timestep_of(fi)));
    }
    return cloud;
}

void save_sae(const SaeModel& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    binio::write_magic(out, kSaeMagic);
    binio::write(out, kModelVersion);
    binio::write(out, static_cast<std::uint32_t>(m.input_dim));
    binio::write(out, static_cast<std::uint32_t>(m.dict_size));
    binio::write(out, m.l1_coefficient);
    auto dump = [&](const auto& mat) {
        binio::write_array(out, std::span<const double>(mat.data(), static_cast<std::size_t>(mat.size())));
    };
    dump(m.enc_weight);
    dump(m.enc_bias);
    dump(m.dec_weight);
    dump(m.dec_bias);
}

SaeModel load_sae(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    binio::expect_magic(in, kSaeMagic);
    if (binio::read<std::uint32_t>(in, "version") != kModelVersion) throw VersionMismatchError("SAE version unsupported");
    SaeModel m;
    const auto input = binio::read<std::uint32_t>(in, "input_dim");
    const auto dict = binio::read<std::uint32_t>(in, "dict_size");
    if (input == 0 || dict == 0 || input > 1u << 16 || dict > 1u << 22) throw CorruptHeaderError("SAE header out of range");
    m.input_dim = static_cast<int>(input);
    m.dict_size = static_cast<int>(dict);
    m.l1_coefficient = binio::read<double>(in, "l1");
    m.enc_weight.resize(input, dict);
    m.enc_bias.resize(dict);
    m.dec_weight.resize(dict, input);
    m.dec_bias.resize(input);
    auto load = [&](auto& mat, std::string_view what) {
        binio::read_array(in, std::span<double>(mat.data(), static_cast<std::size_t>(mat.size())), what);
    };
    load(m.enc_weight, "encoder weights");
    load(m.enc_bias, "encoder bias");
    load(m.dec_weight, "decoder weights");
    load(m.dec_bias, "decoder bias");
    return m;
}

}  // namespace nca_scope
