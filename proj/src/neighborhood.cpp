#include "nnsd/neighborhood.hpp"

#include <cmath>

#include <boost/math/distributions/non_central_chi_squared.hpp>

namespace nnsd {

Matrix edge_prob_matrix(const NeighborhoodParams& params, const LatentPositions& z, const Matrix& d1) {
    const Index n = z.rows();
    Matrix p = Matrix::Zero(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j) {
            const double d2 = (z.row(i) - z.row(j)).norm();
            const double v = logistic(edge_logit(params.alpha, params.gamma, d1(i, j), d2));
            p(i, j) = v;
            p(j, i) = v;
        }
    return p;
}

AdjacencyState sample_adjacency(const Matrix& probs, Rng& rng) {
    const Index n = probs.rows();
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    BinaryMatrix b = BinaryMatrix::Zero(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j)
            if (unif(rng) < probs(i, j)) b(i, j) = b(j, i) = 1;
    return AdjacencyState(b);
}

double adjacency_logprob(const AdjacencyState& a, const NeighborhoodParams& params, const LatentPositions& z,
                         const Matrix& d1) {
    const Index n = a.size();
    double total = 0.0;
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j) {
            const double d2 = (z.row(i) - z.row(j)).norm();
            total += edge_loglik(a.has_edge(i, j), edge_logit(params.alpha, params.gamma, d1(i, j), d2));
        }
    return total;
}

Eigen::Vector2d position_mean(const std::vector<Matrix>& s, const Vector& delta, Index i) {
    if (s.empty() || delta.size() == 0) return Eigen::Vector2d::Zero();
    return s[static_cast<std::size_t>(i)] * delta;
}

double position_logprior_unit(const Eigen::Vector2d& zi, const Eigen::Vector2d& mean, double sigma2_z) {
    if (zi.norm() > 1.0 + kDiskTolerance) return kNegInf;
    return -kLog2Pi - std::log(sigma2_z) - (zi - mean).squaredNorm() / (2.0 * sigma2_z);
}

double position_logprior(const LatentPositions& z, const std::vector<Matrix>& s, const Vector& delta,
                         double sigma2_z) {
    double total = 0.0;
    for (Index i = 0; i < z.rows(); ++i) {
        const double term = position_logprior_unit(z.row(i).transpose(), position_mean(s, delta, i), sigma2_z);
        if (term == kNegInf) return kNegInf;
        total += term;
    }
    return total;
}

double disk_log_normalizer(const Eigen::Vector2d& mean, double sigma2_z) {
    // |W|^2 / sigma2_z is non-central chi-square with 2 degrees of freedom.
    const double lambda = mean.squaredNorm() / sigma2_z;
    const double x = 1.0 / sigma2_z;
    if (lambda == 0.0) return std::log(-std::expm1(-0.5 * x));
    boost::math::non_central_chi_squared dist(2.0, lambda);
    return std::log(boost::math::cdf(dist, x));
}

double position_log_normalizer(const std::vector<Matrix>& s, const Vector& delta, double sigma2_z) {
    double total = 0.0;
    const auto n = static_cast<Index>(s.size());
    for (Index i = 0; i < n; ++i) total += disk_log_normalizer(position_mean(s, delta, i), sigma2_z);
    return total;
}

Eigen::Vector2d sample_truncated_position(const Eigen::Vector2d& mean, double sigma2_z, Rng& rng) {
    std::normal_distribution<double> normal;
    const double sd = std::sqrt(sigma2_z);
    for (int attempt = 0; attempt < 1000000; ++attempt) {
        Eigen::Vector2d w(mean(0) + sd * normal(rng), mean(1) + sd * normal(rng));
        if (w.norm() <= 1.0) return w;
    }
    throw NumericalError("truncated position draw: disk has negligible probability under the prior");
}

} // namespace nnsd
