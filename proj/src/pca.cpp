#include "nca_scope/pca.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "nca_scope/common.hpp"

namespace nca_scope {

namespace {

constexpr std::string_view kPcaMagic = "NPCA";
constexpr std::uint32_t kPcaVersion = 1;

/// Largest-magnitude entry made positive; first index wins on exact ties.
void fix_sign(Eigen::Ref<Eigen::RowVectorXd> v) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if (std::abs(v[i]) > std::abs(v[best])) best = i;
    if (v[best] < 0) v = -v;
}

/// Fills rows [from, k) with unit vectors orthogonal to everything above,
/// taken from the standard basis in index order.
void complete_basis(PointMatrix& comps, Eigen::Index from) {
    const Eigen::Index dim = comps.cols();
    Eigen::Index row = from;
    for (Eigen::Index j = 0; j < dim && row < comps.rows(); ++j) {
        Eigen::RowVectorXd v = Eigen::RowVectorXd::Unit(dim, j);
        for (int pass = 0; pass < 2; ++pass)
            for (Eigen::Index r = 0; r < row; ++r) v -= v.dot(comps.row(r)) * comps.row(r);
        const double n = v.norm();
        if (n < 1e-6) continue;
        comps.row(row++) = v / n;
    }
}

}  // namespace

void PcaBasis::validate(double tol) const {
    if (mean.size() != components.cols() || explained_variance.size() != components.rows())
        throw ContractError("PCA basis shapes disagree");
    const Eigen::MatrixXd gram = components * components.transpose();
    if (!gram.isApprox(Eigen::MatrixXd::Identity(k(), k()), tol) &&
        (gram - Eigen::MatrixXd::Identity(k(), k())).cwiseAbs().maxCoeff() > tol)
        throw ContractError("PCA components are not orthonormal");
    for (int i = 0; i < k(); ++i) {
        if (explained_variance[i] < 0) throw ContractError("negative explained variance");
        if (i > 0 && explained_variance[i] > explained_variance[i - 1])
            throw ContractError("explained variance not sorted");
    }
}

PcaBasis pca_fit(const PointMatrix& points, int k, PcaMethod method) {
    const Eigen::Index n = points.rows(), dim = points.cols();
    if (n < 2) throw ContractError("PCA needs at least two points");
    if (k < 1 || k > std::min(n, dim))
        throw ContractError("k=" + std::to_string(k) + " exceeds min(N, D)=" + std::to_string(std::min(n, dim)));
    if (!points.allFinite()) throw ContractError("PCA input has non-finite entries");
    if (method == PcaMethod::Auto) method = dim > n ? PcaMethod::Gram : PcaMethod::Covariance;

    PcaBasis basis;
    basis.mean = points.colwise().mean();
    const PointMatrix centred = points.rowwise() - basis.mean;
    const double denom = static_cast<double>(n - 1);

    Eigen::VectorXd evals;
    Eigen::MatrixXd evecs;
    {
        const Eigen::MatrixXd m = method == PcaMethod::Gram ? Eigen::MatrixXd(centred * centred.transpose() / denom)
                                                            : Eigen::MatrixXd(centred.transpose() * centred / denom);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
        if (solver.info() != Eigen::Success) throw Error("symmetric eigensolver failed");
        evals = solver.eigenvalues();
        evecs = solver.eigenvectors();
    }

    // Descending order; stable on ties so equal eigenvalues keep solver order.
    std::vector<Eigen::Index> order(static_cast<std::size_t>(evals.size()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return evals[a] > evals[b]; });

    const double top = std::max(evals.maxCoeff(), 0.0);
    const double floor = std::max(top * 1e-12, 1e-300);
    basis.components.resize(k, dim);
    basis.explained_variance.resize(k);
    Eigen::Index filled = 0;
    for (int i = 0; i < k; ++i) {
        const auto idx = order[static_cast<std::size_t>(i)];
        const double lambda = evals[idx];
        if (lambda <= floor) break;
        basis.explained_variance[i] = lambda;
        if (method == PcaMethod::Gram) {
            Eigen::RowVectorXd v = (centred.transpose() * evecs.col(idx)).transpose();
            basis.components.row(i) = v / v.norm();
        } else {
            basis.components.row(i) = evecs.col(idx).transpose();
        }
        ++filled;
    }
    for (Eigen::Index i = filled; i < k; ++i) basis.explained_variance[i] = 0.0;
    if (filled < k) complete_basis(basis.components, filled);
    for (int i = 0; i < k; ++i) fix_sign(basis.components.row(i));
    return basis;
}

PointMatrix pca_project(const PcaBasis& basis, const PointMatrix& points) {
    if (points.cols() != basis.dim()) throw ContractError("projection input has wrong dimension");
    return (points.rowwise() - basis.mean) * basis.components.transpose();
}

PointMatrix pca_reconstruct(const PcaBasis& basis, const PointMatrix& coords) {
    if (coords.cols() != basis.k()) throw ContractError("coordinates must have k columns");
    PointMatrix out = coords * basis.components;
    out.rowwise() += basis.mean;
    return out;
}

void save_pca(const PcaBasis& b, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    binio::write_magic(out, kPcaMagic);
    binio::write(out, kPcaVersion);
    binio::write(out, static_cast<std::uint32_t>(b.dim()));
    binio::write(out, static_cast<std::uint32_t>(b.k()));
    binio::write_array(out, std::span<const double>(b.mean.data(), static_cast<std::size_t>(b.mean.size())));
    binio::write_array(out, std::span<const double>(b.components.data(), static_cast<std::size_t>(b.components.size())));
    binio::write_array(out, std::span<const double>(b.explained_variance.data(),
                                                    static_cast<std::size_t>(b.explained_variance.size())));
}

PcaBasis load_pca(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    binio::expect_magic(in, kPcaMagic);
    const auto version = binio::read<std::uint32_t>(in, "pca version");
    if (version != kPcaVersion) throw VersionMismatchError("PCA basis version unsupported");
    const auto dim = binio::read<std::uint32_t>(in, "dim");
    const auto k = binio::read<std::uint32_t>(in, "k");
    if (dim == 0 || k == 0 || k > dim || dim > (1u << 28)) throw CorruptHeaderError("PCA header out of range");
    PcaBasis b;
    b.mean.resize(dim);
    b.components.resize(k, dim);
    b.explained_variance.resize(k);
    binio::read_array(in, std::span<double>(b.mean.data(), dim), "mean");
    binio::read_array(in, std::span<double>(b.components.data(), static_cast<std::size_t>(b.components.size())), "components");
    binio::read_array(in, std::span<double>(b.explained_variance.data(), k), "variance");
    return b;
}

Eigen::VectorXd principal_angles(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.rows() != b.rows()) throw ContractError("subspaces live in different ambient dimensions");
    const Eigen::MatrixXd qa = Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ() *
                               Eigen::MatrixXd::Identity(a.rows(), a.cols());
    const Eigen::MatrixXd qb = Eigen::HouseholderQR<Eigen::MatrixXd>(b).householderQ() *
                               Eigen::MatrixXd::Identity(b.rows(), b.cols());
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(qa.transpose() * qb);
    Eigen::VectorXd s = svd.singularValues();
    Eigen::VectorXd angles(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) angles[i] = std::acos(std::clamp(s[i], -1.0, 1.0));
    std::sort(angles.data(), angles.data() + angles.size());
    return angles;
}

}  // namespace nca_scope
