#pragma once

// Hand-rolled generators shared by the unit and acceptance tests.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "nnsd/domain.hpp"
#include "nnsd/gmrf.hpp"
#include "nnsd/inference.hpp"
#include "nnsd/neighborhood.hpp"

namespace nnsd::testkit {

inline BinaryMatrix random_graph(Index n, double p, Rng& rng) {
    std::bernoulli_distribution edge(p);
    BinaryMatrix b = BinaryMatrix::Zero(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j)
            if (edge(rng)) b(i, j) = b(j, i) = 1;
    return b;
}

inline BinaryMatrix path_graph(Index n) {
    BinaryMatrix b = BinaryMatrix::Zero(n, n);
    for (Index i = 0; i + 1 < n; ++i) b(i, i + 1) = b(i + 1, i) = 1;
    return b;
}

inline Matrix random_disk_points(Index n, double radius, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix z(n, 2);
    for (Index i = 0; i < n; ++i) {
        const double r = radius * std::sqrt(u(rng)), t = 2.0 * M_PI * u(rng);
        z(i, 0) = r * std::cos(t);
        z(i, 1) = r * std::sin(t);
    }
    return z;
}

inline Vector random_vector(Index n, double sd, Rng& rng) {
    std::normal_distribution<double> g(0.0, sd);
    Vector v(n);
    for (Index i = 0; i < n; ++i) v(i) = g(rng);
    return v;
}

/// Sum of logs of eigenvalues above a relative threshold.
inline double eigen_pseudo_logdet(const Matrix& l) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(l);
    const double top = std::max(es.eigenvalues().maxCoeff(), 1.0);
    double s = 0.0;
    for (Index k = 0; k < l.rows(); ++k)
        if (es.eigenvalues()(k) > 1e-8 * top) s += std::log(es.eigenvalues()(k));
    return s;
}

/// Moore-Penrose inverse of a graph Laplacian.
inline Matrix laplacian_pinv(const Matrix& l) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(l);
    const double top = std::max(es.eigenvalues().maxCoeff(), 1.0);
    Matrix out = Matrix::Zero(l.rows(), l.cols());
    for (Index k = 0; k < l.rows(); ++k)
        if (es.eigenvalues()(k) > 1e-8 * top)
            out += es.eigenvectors().col(k) * es.eigenvectors().col(k).transpose() / es.eigenvalues()(k);
    return out;
}

/// log N(x; 0, cov) by dense Cholesky.
inline double gaussian_logpdf(const Vector& x, const Matrix& cov) {
    Eigen::LLT<Matrix> llt(cov);
    const Matrix lower = llt.matrixL();
    return -0.5 * (static_cast<double>(x.size()) * kLog2Pi + 2.0 * lower.diagonal().array().log().sum() +
                   x.dot(llt.solve(x)));
}

/// Domain on random points with one covariate and optional geographic graph.
inline SpatialDomain random_domain(Index n, Rng& rng, bool with_geo = true, Index position_covariates = 0) {
    std::vector<std::string> ids;
    for (Index i = 0; i < n; ++i) ids.push_back("u" + std::to_string(i));
    const Matrix pts = random_disk_points(n, 1.0, rng);
    Vector y = Vector::Constant(n, 1.0) + random_vector(n, 0.5, rng);
    const Matrix cov = random_vector(n, 1.0, rng);
    Matrix pos;
    if (position_covariates > 0) pos = 0.3 * Matrix::Random(n, position_covariates);
    std::optional<BinaryMatrix> geo;
    if (with_geo) {
        BinaryMatrix b = path_graph(n);
        geo = b;
    }
    return make_domain(ids, pts, y, Vector::Constant(1, 0.2), cov, pos, geo);
}

/// A valid model state with random continuous parts and a random graph.
inline ModelState random_state(const SpatialDomain& d, double edge_p, Rng& rng) {
    ModelState s;
    const Index n = d.size();
    s.adjacency = AdjacencyState(random_graph(n, edge_p, rng));
    s.positions = random_disk_points(n, 0.95, rng);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    s.nbr.alpha = -1.0 + 2.0 * u(rng);
    s.nbr.gamma = u(rng);
    s.nbr.delta = random_vector(d.n_position_covariates(), 0.3, rng);
    s.beta = random_vector(d.n_covariates(), 1.0, rng);
    s.mu = d.y + random_vector(n, 0.3, rng);
    s.sigma2_mu = 0.2 + u(rng);
    s.sigma2_eps = 0.2 + u(rng);
    s.eps = sample_icar_prior(s.adjacency, s.sigma2_eps, rng);
    return s;
}

inline std::string temp_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("nnsd_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p.string();
}

inline void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace nnsd::testkit
