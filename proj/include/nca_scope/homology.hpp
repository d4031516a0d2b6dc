#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "nca_scope/trajectory.hpp"

namespace nca_scope {

/// Pairwise Euclidean distances, upper triangle stored row by row.
class DistanceMatrix {
public:
    DistanceMatrix() = default;
    DistanceMatrix(std::size_t n, std::vector<double> condensed);

    std::size_t size() const { return n_; }
    const std::vector<double>& condensed() const { return condensed_; }
    double operator()(std::size_t i, std::size_t j) const;
    double max() const;

private:
    std::size_t n_ = 0;
    std::vector<double> condensed_;
};

DistanceMatrix distance_matrix(const PointMatrix& points);
inline DistanceMatrix distance_matrix(const PointCloud& cloud) { return distance_matrix(cloud.points); }

/// Farthest-point ordering of `budget` indices. The start index is drawn from
/// rng_seed; ties go to the lowest index.
std::vector<std::size_t> maxmin_subsample(const PointMatrix& points, std::size_t budget, std::uint64_t rng_seed);

/// Fraction of a cloud of `points` points kept by a PH budget.
double ph_coverage(std::size_t budget, std::size_t points);

inline constexpr std::size_t kDefaultPhBudget = 1000;
inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

struct PersistenceInterval {
    int dim = 0;
    double birth = 0.0;
    double death = kInfinity;

    bool infinite() const { return death == kInfinity; }
    double persistence() const { return death - birth; }
    bool operator==(const PersistenceInterval&) const = default;
    auto operator<=>(const PersistenceInterval&) const = default;
};

struct PersistenceDiagram {
    std::vector<PersistenceInterval> intervals;
    int max_dim = 0;
    double max_radius = 0.0;

    std::size_t count(int dim) const;
    std::vector<PersistenceInterval> in_dim(int dim) const;
    /// Largest finite death over all dimensions; 0 for an empty diagram.
    double max_finite_death() const;
    /// Intervals sorted by (dim, birth, death) for order-free comparison.
    std::vector<PersistenceInterval> sorted() const;
};

/// Smallest radius at which some vertex is adjacent to all others.
double enclosing_radius(const DistanceMatrix& dist);

/// Vietoris-Rips persistence over Z/2 up to `max_dim` (0, 1 or 2).
/// A negative max_radius selects the enclosing radius. Intervals of length
/// zero are dropped above dimension 0, so H0 always holds n intervals.
/// Throws CapacityError when the simplex count would exceed `max_simplices`.
PersistenceDiagram rips_persistence(const DistanceMatrix& dist, int max_dim, double max_radius = -1.0,
                                    std::size_t max_simplices = std::size_t{1} << 31);

struct BettiReport {
    double significance_threshold = 0.0;
    std::array<int, 3> counts{};

    int h0() const { return counts[0]; }
    int h1() const { return counts[1]; }
    int h2() const { return counts[2]; }
};

inline constexpr double kDefaultSignificanceFraction = 0.3;

double default_significance_threshold(const PersistenceDiagram& diagram);

/// Counts intervals with persistence above the threshold; infinite ones always count.
BettiReport betti_report(const PersistenceDiagram& diagram, std::optional<double> threshold = std::nullopt);

/// Betti numbers of the complex at `radius`: intervals with birth <= radius < death.
std::array<int, 3> betti_at(const PersistenceDiagram& diagram, double radius);

void write_diagram_csv(const PersistenceDiagram& diagram, const std::string& path);
PersistenceDiagram read_diagram_csv(const std::string& path);

}  // namespace nca_scope
