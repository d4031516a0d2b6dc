#pragma once

#include <string>

#include <Eigen/Dense>

#include "nca_scope/trajectory.hpp"

namespace nca_scope {

/// Top-k principal subspace. Components are orthonormal rows; each
/// component's largest-magnitude entry is positive.
struct PcaBasis {
    Eigen::RowVectorXd mean;
    PointMatrix components;              // k x D
    Eigen::VectorXd explained_variance;  // k, nonincreasing

    int k() const { return static_cast<int>(components.rows()); }
    int dim() const { return static_cast<int>(components.cols()); }
    void validate(double tol = 1e-8) const;
};

enum class PcaMethod {
    Auto,        // Gram when D > N, covariance otherwise
    Covariance,  // D x D sample covariance
    Gram,        // N x N centred Gram matrix
};

PcaBasis pca_fit(const PointMatrix& points, int k, PcaMethod method = PcaMethod::Auto);
inline PcaBasis pca_fit(const PointCloud& cloud, int k, PcaMethod method = PcaMethod::Auto) {
    return pca_fit(cloud.points, k, method);
}

PointMatrix pca_project(const PcaBasis& basis, const PointMatrix& points);
PointMatrix pca_reconstruct(const PcaBasis& basis, const PointMatrix& coords);

void save_pca(const PcaBasis& basis, const std::string& path);
PcaBasis load_pca(const std::string& path);

/// Principal angles (radians, ascending) between the column spans of a and b.
Eigen::VectorXd principal_angles(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

}  // namespace nca_scope
