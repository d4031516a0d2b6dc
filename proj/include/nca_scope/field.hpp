#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nca_scope/nca.hpp"
#include "nca_scope/pca.hpp"
#include "nca_scope/trajectory.hpp"

namespace nca_scope {

enum class LiftMethod {
    NeighbourSoftmax,  // softmax(-d / temperature) blend of the k nearest recorded states
    Basis,             // PCA reconstruction of (x, y, 0, ...)
};

struct FieldOptions {
    int resolution = 25;
    int k_neighbours = 20;
    int nca_steps = 5;
    LiftMethod lift = LiftMethod::NeighbourSoftmax;
    std::uint64_t rng_seed = 0;
    /// Softmax temperature in latent units; <= 0 uses the median nearest-neighbour distance.
    double temperature = 0.0;
    /// Grid points farther than this from every data point are marked absent;
    /// <= 0 uses twice the median nearest-neighbour distance.
    double cutoff = 0.0;
    double margin = 0.05;  // grid padding as a fraction of the data extent
};

struct VectorField {
    PointMatrix grid;     // G x 2 latent coordinates, row-major over the lattice
    PointMatrix vectors;  // G x 2; zero where absent
    std::vector<std::uint8_t> valid;
    int resolution = 0;
    int steps_advanced = 0;
    LiftMethod lift = LiftMethod::NeighbourSoftmax;
    double cutoff = 0.0;
    double temperature = 0.0;

    std::size_t size() const { return static_cast<std::size_t>(grid.rows()); }
};

struct LiftWeights {
    std::vector<std::size_t> neighbours;  // nearest first; ties by index
    std::vector<double> weights;          // nonnegative, sum 1
};

/// Softmax weights over the k nearest latent points to `at`.
LiftWeights lift_weights(const PointMatrix& latent, const Eigen::RowVector2d& at, int k, double temperature);

/// Median over points of the distance to the nearest other point.
double median_nearest_distance(const PointMatrix& latent);

/// Full-dimensional state for a latent grid point.
Eigen::RowVectorXd lift_state(const PointCloud& cloud, const PointMatrix& latent, const PcaBasis& basis,
                              const Eigen::RowVector2d& at, const FieldOptions& options, double temperature);

/// Latent displacement after advancing lifted states through the model. The
/// displacement is measured from the lifted state's own projection, so a model
/// that leaves states unchanged yields zero vectors.
VectorField field_lines(const PointCloud& cloud, int height, int width, const PcaBasis& basis, const NcaModel& model,
                        const FieldOptions& options = {});
VectorField field_lines(const Trajectory& trajectory, const PcaBasis& basis, const NcaModel& model,
                        const FieldOptions& options = {});

/// CSV with header x,y,dx,dy,valid.
void write_field_csv(const VectorField& field, const std::string& path);

}  // namespace nca_scope
