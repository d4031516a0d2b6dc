#include "nca_scope/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "nca_scope/common.hpp"
#include "nca_scope/detail/step_kernel.hpp"

namespace nca_scope {

void TrainConfig::validate() const {
    if (steps_min < 1 || steps_min > steps_max) throw ContractError("need 1 <= steps_min <= steps_max");
    if (batch_size < 1) throw ContractError("batch_size must be positive");
    if (pool_size < batch_size) throw ContractError("pool_size must be at least batch_size");
    if (epochs < 0) throw ContractError("epochs must be nonnegative");
    if (damage_samples < 0 || damage_samples > batch_size) throw ContractError("damage_samples out of range");
    if (signals.enabled && (signals.probability < 0.0 || signals.probability > 1.0))
        throw ContractError("signal probability must lie in [0,1]");
}

void LossLog::write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write loss log " + path);
    out << "epoch,loss,seconds\n";
    char buf[96];
    for (std::size_t i = 0; i < loss.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g,%.6f\n", i, loss[i], seconds[i]);
        out << buf;
    }
}

double loss_rmse(const GridState& grid, const GridState& target) {
    const int vis = visible_channels(grid.mode);
    if (target.height != grid.height || target.width != grid.width || target.channels != vis)
        throw ContractError("target must be H x W x " + std::to_string(vis));
    double sum = 0.0;
    for (int r = 0; r < grid.height; ++r)
        for (int c = 0; c < grid.width; ++c)
            for (int ch = 0; ch < vis; ++ch) {
                const double d = static_cast<double>(grid.at(r, c, ch)) - target.at(r, c, ch);
                sum += d * d;
            }
    return std::sqrt(sum / (static_cast<double>(grid.cell_count()) * vis));
}

std::size_t param_tensor_size(const NcaModel& model, ParamTensor tensor) {
    switch (tensor) {
        case ParamTensor::W1: return static_cast<std::size_t>(model.params.w1.size());
        case ParamTensor::B1: return static_cast<std::size_t>(model.params.b1.size());
        case ParamTensor::W2: return static_cast<std::size_t>(model.params.w2.size());
        case ParamTensor::Kernels: return model.params.kernels.size() * 9;
    }
    return 0;
}

namespace {

template <typename T>
T& coordinate_ref(NcaParams<T>& p, ParamCoordinate c) {
    switch (c.tensor) {
        case ParamTensor::W1: return p.w1.data()[c.index];
        case ParamTensor::B1: return p.b1.data()[c.index];
        case ParamTensor::W2: return p.w2.data()[c.index];
        case ParamTensor::Kernels: return p.kernels[c.index / 9][c.index % 9];
    }
    throw ContractError("unknown parameter tensor");
}

/// Deterministic draws keyed on (seed, epoch, stream, counter).
class KeyedDraws {
public:
    KeyedDraws(std::uint64_t seed, long epoch, std::uint64_t stream)
        : base_(hash_key(seed, static_cast<std::uint64_t>(epoch), stream)) {}
    std::uint64_t next() { return hash_key(base_, counter_++); }
    double uniform() { return unit_from_hash(next()); }
    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next() % n; }

private:
    std::uint64_t base_;
    std::uint64_t counter_ = 0;
};

struct SamplePlan {
    std::size_t slot = 0;
    bool reseed = false;
    std::uint64_t seed = 0;
    long signal_step = -1;
    int phase_in = 0;
    int phase_out = 0;
    bool damaged = false;
    Rect damage;
};

struct Episode {
    int steps = 0;
    std::vector<SamplePlan> samples;
};

template <typename T>
struct PoolEntry {
    RowMatrix<T> state;
    int phase = 0;
    long age = 0;  // episodes survived since last reseed
};

template <typename T>
class Session {
public:
    Session(const NcaModel& model, const std::vector<GridState>& targets, const TrainConfig& config)
        : model_(model), config_(config), stencil_(targets.at(0).height, targets.at(0).width, model.padding) {
        config_.validate();
        model_.validate();
        if (targets.empty()) throw ContractError("training needs a target");
        if (config_.signals.enabled && targets.size() != 2)
            throw ContractError("the signal schedule needs exactly two targets");
        const int vis = visible_channels(model.mode);
        for (const auto& t : targets) {
            if (t.channels != vis || t.height != targets[0].height || t.width != targets[0].width)
                throw ContractError("targets must share H x W and have " + std::to_string(vis) + " channels");
            RowMatrix<T> m(static_cast<Eigen::Index>(t.cell_count()), vis);
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(t.values[static_cast<std::size_t>(i)]);
            targets_.push_back(std::move(m));
        }
        height_ = targets[0].height;
        width_ = targets[0].width;
        if (config_.signals.enabled)
            EventScript{{{0, config_.signals.signal}}}.validate(height_, width_, model.channels);
        seed_ = detail::to_matrix<T>(seed_state(height_, width_, model.channels, model.mode));
        pool_.assign(static_cast<std::size_t>(config_.pool_size), PoolEntry<T>{seed_, 0, 0});
        spec_ = {model.mode, model.alive_threshold, &stencil_};
    }

    int visible() const { return visible_channels(model_.mode); }

    double sample_loss(const RowMatrix<T>& state, int phase) const {
        const auto diff = (state.leftCols(visible()) - targets_[static_cast<std::size_t>(phase)]).template cast<double>();
        return std::sqrt(diff.squaredNorm() / static_cast<double>(diff.size()));
    }

    Episode plan(long epoch) const {
        KeyedDraws draw(config_.rng_seed, epoch, 0x706c616eULL);
        Episode ep;
        ep.steps = config_.steps_min +
                   static_cast<int>(draw.below(static_cast<std::uint64_t>(config_.steps_max - config_.steps_min + 1)));

        // Partial Fisher-Yates over pool slots.
        std::vector<std::size_t> slots(pool_.size());
        std::iota(slots.begin(), slots.end(), 0);
        for (int i = 0; i < config_.batch_size; ++i) {
            const auto j = static_cast<std::size_t>(i) + draw.below(slots.size() - static_cast<std::size_t>(i));
            std::swap(slots[static_cast<std::size_t>(i)], slots[j]);
        }

        std::vector<double> losses;
        for (int i = 0; i < config_.batch_size; ++i) {
            SamplePlan s;
            s.slot = slots[static_cast<std::size_t>(i)];
            s.seed = hash_key(config_.rng_seed, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(i));
            s.phase_in = pool_[s.slot].phase;
            losses.push_back(sample_loss(pool_[s.slot].state, s.phase_in));
            ep.samples.push_back(s);
        }

        std::vector<std::size_t> order(ep.samples.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return losses[a] > losses[b]; });
        if (config_.pool_refresh == PoolRefresh::ReplaceWorst) {
            auto& worst = ep.samples[order.front()];
            worst.reseed = true;
            worst.phase_in = 0;
        }

        // Damage goes to the best samples, never to a fresh seed.
        int damaged = 0;
        for (auto it = order.rbegin(); it != order.rend() && damaged < config_.damage_samples; ++it) {
            auto& s = ep.samples[*it];
            if (s.reseed || pool_[s.slot].age == 0) continue;
            const int size = std::min({config_.damage_size, height_, width_});
            const int r0 = height_ / 4 + static_cast<int>(draw.below(static_cast<std::uint64_t>(std::max(1, height_ / 2 - size / 2))));
            const int c0 = width_ / 4 + static_cast<int>(draw.below(static_cast<std::uint64_t>(std::max(1, width_ / 2 - size / 2))));
            s.damaged = true;
            s.damage = {std::min(r0, height_ - size), std::min(c0, width_ - size), 0, 0};
            s.damage.row1 = s.damage.row0 + size;
            s.damage.col1 = s.damage.col0 + size;
            ++damaged;
        }

        for (auto& s : ep.samples) {
            s.phase_out = s.phase_in;
            if (!config_.signals.enabled || s.reseed || pool_[s.slot].age == 0) continue;
            if (draw.uniform() < config_.signals.probability) {
                s.signal_step = static_cast<long>(
                    draw.below(static_cast<std::uint64_t>(std::min(config_.signals.latest_step, ep.steps - 1) + 1)));
                s.phase_out = 1 - s.phase_in;
            }
        }
        return ep;
    }

    /// Runs one sample; when `grads` is set, backpropagates weight * dLoss.
    double run(const NcaParams<T>& params, const SamplePlan& s, int steps, NcaParams<T>* grads, double weight,
               RowMatrix<T>* final_state) const {
        RowMatrix<T> state = s.reseed ? seed_ : pool_[s.slot].state;
        if (s.damaged)
            for (int r = s.damage.row0; r < s.damage.row1; ++r) state.middleRows(r * width_ + s.damage.col0, s.damage.cols()).setZero();

        std::vector<int> footprint;
        int signal_channel = 0;
        if (s.signal_step >= 0) {
            const auto resolved = resolve_signal(height_, width_, config_.signals.signal, s.seed, 0);
            footprint = signal_footprint(height_, width_, resolved);
            signal_channel = resolved.target_channel;
        }

        std::vector<detail::StepTape<T>> tapes(grads ? static_cast<std::size_t>(steps) : 0);
        for (int t = 0; t < steps; ++t) {
            if (t == s.signal_step)
                for (int cell : footprint) state(cell, signal_channel) = static_cast<T>(config_.signals.signal.value);
            auto fire = detail::fire_mask<T>(s.seed, t, height_, width_, model_.fire_rate);
            state = detail::step_forward<T>(state, params, spec_, std::move(fire),
                                            grads ? &tapes[static_cast<std::size_t>(t)] : nullptr);
        }

        const auto& target = targets_[static_cast<std::size_t>(s.phase_out)];
        const double loss = sample_loss(state, s.phase_out);
        if (grads && loss > 0.0) {
            const double n = static_cast<double>(target.size());
            RowMatrix<T> g = RowMatrix<T>::Zero(state.rows(), state.cols());
            g.leftCols(visible()) = ((state.leftCols(visible()) - target).template cast<double>() *
                                     (weight / (n * loss))).template cast<T>();
            RowMatrix<T> g_in;
            for (int t = steps - 1; t >= 0; --t) {
                detail::step_backward<T>(tapes[static_cast<std::size_t>(t)], params, spec_, g, g_in, *grads,
                                         model_.train_kernels);
                g = std::move(g_in);
                if (t == s.signal_step)
                    for (int cell : footprint) g(cell, signal_channel) = T(0);
            }
        }
        if (final_state) *final_state = std::move(state);
        return loss;
    }

    struct BatchResult {
        double loss = 0.0;
        std::vector<RowMatrix<T>> finals;
    };

    BatchResult run_batch(const NcaParams<T>& params, const Episode& ep, NcaParams<T>* grads) const {
        const std::size_t n = ep.samples.size();
        std::vector<double> losses(n);
        std::vector<RowMatrix<T>> finals(n);
        std::vector<NcaParams<T>> partial(grads ? n : 0);
        const double weight = 1.0 / static_cast<double>(n);
        parallel_for(n, [&](std::size_t i) {
            NcaParams<T>* g = nullptr;
            if (grads) {
                partial[i] = params.zeros_like();
                g = &partial[i];
            }
            losses[i] = run(params, ep.samples[i], ep.steps, g, weight, &finals[i]);
        });
        BatchResult out;
        for (std::size_t i = 0; i < n; ++i) {
            out.loss += losses[i] * weight;
            if (grads) {
                grads->w1 += partial[i].w1;
                grads->b1 += partial[i].b1;
                grads->w2 += partial[i].w2;
                for (std::size_t k = 0; k < grads->kernels.size(); ++k)
                    for (int j = 0; j < 9; ++j) grads->kernels[k][j] += partial[i].kernels[k][j];
            }
        }
        out.finals = std::move(finals);
        return out;
    }

    void commit(const Episode& ep, BatchResult&& batch) {
        for (std::size_t i = 0; i < ep.samples.size(); ++i) {
            auto& entry = pool_[ep.samples[i].slot];
            entry.state = std::move(batch.finals[i]);
            entry.phase = ep.samples[i].phase_out;
            entry.age = ep.samples[i].reseed ? 1 : entry.age + 1;
        }
    }

private:
    NcaModel model_;
    TrainConfig config_;
    detail::Stencil stencil_;
    detail::StepSpec spec_;
    int height_ = 0, width_ = 0;
    std::vector<RowMatrix<T>> targets_;
    RowMatrix<T> seed_;
    std::vector<PoolEntry<T>> pool_;
};

template <typename T>
std::vector<std::span<T>> param_spans(NcaParams<T>& p, bool kernels) {
    std::vector<std::span<T>> out{
        std::span<T>(p.w1.data(), static_cast<std::size_t>(p.w1.size())),
        std::span<T>(p.b1.data(), static_cast<std::size_t>(p.b1.size())),
        std::span<T>(p.w2.data(), static_cast<std::size_t>(p.w2.size())),
    };
    if (kernels)
        for (auto& k : p.kernels) out.emplace_back(k.data(), k.size());
    return out;
}

template <typename T>
TrainResult train_impl(const NcaModel& model, const std::vector<GridState>& targets, const TrainConfig& config) {
    Session<T> session(model, targets, config);
    NcaParams<T> params = model.params.template cast<T>();

    std::vector<std::size_t> sizes;
    for (auto s : param_spans(params, model.train_kernels)) sizes.push_back(s.size());
    Optimizer<T> optimizer(config.optimizer, sizes);

    TrainResult result{model, {}};
    auto snapshot = [&] {
        NcaModel m = model;
        m.params = params.template cast<float>();
        if (!model.train_kernels) m.params.kernels = model.params.kernels;
        return m;
    };

    for (long epoch = 0; epoch < config.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        const Episode ep = session.plan(epoch);
        NcaParams<T> grads = params.zeros_like();
        auto batch = session.run_batch(params, ep, &grads);
        if (!std::isfinite(batch.loss)) throw TrainingError("non-finite training loss", epoch);

        auto grad_spans = param_spans(grads, model.train_kernels);
        std::vector<std::span<const T>> const_grads;
        if (model.train_kernels) {
            // All kernels form one tensor for normalisation purposes.
            std::vector<T> flat;
            for (auto& k : grads.kernels) flat.insert(flat.end(), k.begin(), k.end());
            normalise_gradient(std::span<T>(flat), config.grad_norm_eps);
            for (std::size_t k = 0; k < grads.kernels.size(); ++k)
                std::copy_n(flat.begin() + static_cast<long>(k * 9), 9, grads.kernels[k].begin());
            for (std::size_t i = 0; i < 3; ++i) normalise_gradient(grad_spans[i], config.grad_norm_eps);
        } else {
            for (auto& g : grad_spans) normalise_gradient(g, config.grad_norm_eps);
        }
        for (auto s : grad_spans) const_grads.emplace_back(s.data(), s.size());

        double lr_scale = 1.0;
        if (config.lr_decay_epoch > 0 && epoch >= config.lr_decay_epoch) lr_scale = config.lr_decay_factor;
        optimizer.step(param_spans(params, model.train_kernels), const_grads, lr_scale);

        const double batch_loss = batch.loss;
        session.commit(ep, std::move(batch));
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.log.loss.push_back(batch_loss);
        result.log.seconds.push_back(secs);
        if (config.on_epoch) config.on_epoch(epoch, batch_loss);
        if (config.checkpoint_every > 0 && config.on_checkpoint && (epoch + 1) % config.checkpoint_every == 0)
            config.on_checkpoint(epoch + 1, snapshot());
    }
    result.model = snapshot();
    return result;
}

}  // namespace

TrainResult train(const NcaModel& model, const std::vector<GridState>& targets, const TrainConfig& config) {
    if (config.precision == Precision::Double) return train_impl<double>(model, targets, config);
    return train_impl<float>(model, targets, config);
}

double GradientReport::at(ParamCoordinate c) const {
    return coordinate_ref(const_cast<NcaParams<double>&>(grad), c);
}

GradientReport bptt_gradient(const NcaModel& model, const std::vector<GridState>& targets,
                             const TrainConfig& config) {
    auto run = [&]<typename T>(T) {
        Session<T> session(model, targets, config);
        const NcaParams<T> params = model.params.template cast<T>();
        NcaParams<T> grads = params.zeros_like();
        const auto batch = session.run_batch(params, session.plan(0), &grads);
        return GradientReport{batch.loss, grads.template cast<double>()};
    };
    return config.precision == Precision::Double ? run(0.0) : run(0.0f);
}

double episode_loss(const NcaParams<double>& params, const NcaModel& shape, const std::vector<GridState>& targets,
                    const TrainConfig& config) {
    Session<double> session(shape, targets, config);
    return session.run_batch(params, session.plan(0), nullptr).loss;
}

double finite_diff_gradient(const NcaModel& model, const std::vector<GridState>& targets, const TrainConfig& config,
                            ParamCoordinate coordinate, double h) {
    if (coordinate.index >= param_tensor_size(model, coordinate.tensor))
        throw ContractError("parameter coordinate out of range");
    NcaParams<double> params = model.params.cast<double>();
    double& p = coordinate_ref(params, coordinate);
    const double original = p;
    p = original + h;
    const double plus = episode_loss(params, model, targets, config);
    p = original - h;
    const double minus = episode_loss(params, model, targets, config);
    return (plus - minus) / (2.0 * h);
}

}  // namespace nca_scope
