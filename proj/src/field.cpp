#include "nca_scope/field.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "nca_scope/common.hpp"

namespace nca_scope {

double median_nearest_distance(const PointMatrix& latent) {
    const Eigen::Index n = latent.rows();
    if (n < 2) throw ContractError("nearest-neighbour distances need at least two points");
    std::vector<double> nearest(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            if (i != j) nearest[static_cast<std::size_t>(i)] = std::min(nearest[static_cast<std::size_t>(i)], (latent.row(i) - latent.row(j)).norm());
    auto mid = nearest.begin() + static_cast<std::ptrdiff_t>(nearest.size() / 2);
    std::nth_element(nearest.begin(), mid, nearest.end());
    if (nearest.size() % 2 == 1) return *mid;
    const double upper = *mid;
    return 0.5 * (upper + *std::max_element(nearest.begin(), mid));
}

LiftWeights lift_weights(const PointMatrix& latent, const Eigen::RowVector2d& at, int k, double temperature) {
    const auto n = static_cast<std::size_t>(latent.rows());
    if (n == 0) throw ContractError("lift needs data points");
    if (k < 1) throw ContractError("k_neighbours must be positive");
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = (latent.row(static_cast<Eigen::Index>(i)).leftCols(2) - at).norm();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const std::size_t take = std::min(n, static_cast<std::size_t>(k));
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end(),
                      [&](std::size_t a, std::size_t b) { return d[a] < d[b] || (d[a] == d[b] && a < b); });
    LiftWeights out;
    out.neighbours.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
    const double nearest = d[out.neighbours.front()];
    double total = 0.0;
    for (std::size_t i : out.neighbours) {
        const double w = temperature > 0.0 ? std::exp(-(d[i] - nearest) / temperature) : (d[i] == nearest ? 1.0 : 0.0);
        out.weights.push_back(w);
        total += w;
    }
    for (double& w : out.weights) w /= total;
    return out;
}

Eigen::RowVectorXd lift_state(const PointCloud& cloud, const PointMatrix& latent, const PcaBasis& basis,
                              const Eigen::RowVector2d& at, const FieldOptions& options, double temperature) {
    if (options.lift == LiftMethod::Basis) {
        PointMatrix coords = PointMatrix::Zero(1, basis.k());
        coords(0, 0) = at[0];
        coords(0, 1) = at[1];
        return pca_reconstruct(basis, coords).row(0);
    }
    const auto lw = lift_weights(latent, at, options.k_neighbours, temperature);
    Eigen::RowVectorXd state = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(cloud.dim()));
    for (std::size_t i = 0; i < lw.neighbours.size(); ++i)
        state += lw.weights[i] * cloud.points.row(static_cast<Eigen::Index>(lw.neighbours[i]));
    return state;
}

VectorField field_lines(const PointCloud& cloud, int height, int width, const PcaBasis& basis, const NcaModel& model,
                        const FieldOptions& options) {
    cloud.validate();
    model.validate();
    if (options.nca_steps < 1) throw ContractError("nca_steps must be at least 1");
    if (options.resolution < 2) throw ContractError("resolution must be at least 2");
    if (options.k_neighbours < 1) throw ContractError("k_neighbours must be positive");
    if (basis.k() < 2) throw ContractError("field lines need a basis with at least two components");
    const auto dim = static_cast<std::size_t>(height) * static_cast<std::size_t>(width) * static_cast<std::size_t>(model.channels);
    if (cloud.dim() != dim || static_cast<std::size_t>(basis.dim()) != dim)
        throw ContractError("cloud, basis and model disagree on the state dimension");

    const PointMatrix latent = pca_project(basis, cloud.points).leftCols(2);
    const double median = latent.rows() > 1 ? median_nearest_distance(latent) : 0.0;

    VectorField field;
    field.resolution = options.resolution;
    field.steps_advanced = options.nca_steps;
    field.lift = options.lift;
    field.cutoff = options.cutoff > 0.0 ? options.cutoff : 2.0 * median;
    field.temperature = options.temperature > 0.0 ? options.temperature : median;

    Eigen::RowVector2d lo = latent.colwise().minCoeff(), hi = latent.colwise().maxCoeff();
    for (int a = 0; a < 2; ++a) {
        double extent = hi[a] - lo[a];
        if (extent <= 0.0) extent = 1.0;
        lo[a] -= options.margin * extent;
        hi[a] += options.margin * extent;
    }
    const int res = options.resolution;
    const auto g = static_cast<Eigen::Index>(res) * res;
    field.grid.resize(g, 2);
    for (int iy = 0; iy < res; ++iy)
        for (int ix = 0; ix < res; ++ix) {
            const Eigen::Index i = static_cast<Eigen::Index>(iy) * res + ix;
            field.grid(i, 0) = lo[0] + (hi[0] - lo[0]) * ix / (res - 1);
            field.grid(i, 1) = lo[1] + (hi[1] - lo[1]) * iy / (res - 1);
        }
    field.vectors = PointMatrix::Zero(g, 2);
    field.valid.assign(static_cast<std::size_t>(g), 0);

    parallel_for(static_cast<std::size_t>(g), [&](std::size_t gi) {
        const Eigen::RowVector2d at = field.grid.row(static_cast<Eigen::Index>(gi));
        const double nearest = (latent.rowwise() - at).rowwise().norm().minCoeff();
        if (nearest > field.cutoff) return;
        const Eigen::RowVectorXd lifted = lift_state(cloud, latent, basis, at, options, field.temperature);
        GridState state(height, width, model.channels, model.mode);
        for (std::size_t j = 0; j < dim; ++j) state.values[j] = static_cast<float>(lifted[static_cast<Eigen::Index>(j)]);
        PointMatrix before(1, static_cast<Eigen::Index>(dim)), after(1, static_cast<Eigen::Index>(dim));
        for (std::size_t j = 0; j < dim; ++j) before(0, static_cast<Eigen::Index>(j)) = state.values[j];
        const std::uint64_t seed = hash_key(options.rng_seed, 0x6669656cULL, gi);
        for (int s = 0; s < options.nca_steps; ++s) state = update_step(state, model, seed, s);
        for (std::size_t j = 0; j < dim; ++j) after(0, static_cast<Eigen::Index>(j)) = state.values[j];
        const PointMatrix delta = pca_project(basis, after).leftCols(2) - pca_project(basis, before).leftCols(2);
        if (!delta.allFinite()) return;
        field.vectors.row(static_cast<Eigen::Index>(gi)) = delta;
        field.valid[gi] = 1;
    });
    return field;
}

VectorField field_lines(const Trajectory& trajectory, const PcaBasis& basis, const NcaModel& model,
                        const FieldOptions& options) {
    if (trajectory.meta.channels != model.channels || trajectory.meta.mode != model.mode)
        throw ContractError("trajectory and model disagree on channels or mode");
    return field_lines(extract_macroscopic(trajectory), trajectory.meta.height, trajectory.meta.width, basis, model, options);
}

void write_field_csv(const VectorField& field, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out << "x,y,dx,dy,valid\n";
    char buf[160];
    for (std::size_t i = 0; i < field.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%d\n", field.grid(r, 0), field.grid(r, 1),
                      field.vectors(r, 0), field.vectors(r, 1), field.valid[i] ? 1 : 0);
        out << buf;
    }
}

}  // namespace nca_scope
