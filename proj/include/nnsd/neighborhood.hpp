#pragma once

#include <cmath>
#include <vector>

#include "nnsd/gmrf.hpp"
#include "nnsd/types.hpp"

namespace nnsd {

/// Latent socio-demographic positions, one row per unit, restricted to the closed unit disk.
using LatentPositions = Matrix;

inline constexpr double kDiskTolerance = 1e-12;

struct NeighborhoodParams {
    double alpha = -1.0;
    double gamma = 0.5;
    Vector delta;           // length k (empty without position covariates)
    double sigma2_z = 1.0;  // fixed, never sampled
};

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// log(logistic(x)), stable for large |x|.
inline double log_logistic(double x) { return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

/// Log-odds of B_ij = 1: alpha - gamma d1 - (1 - gamma) d2.
inline double edge_logit(double alpha, double gamma, double d1_ij, double d2_ij) {
    return alpha - gamma * d1_ij - (1.0 - gamma) * d2_ij;
}

/// Bernoulli log-likelihood of one indicator given its logit.
inline double edge_loglik(bool present, double logit) { return present ? log_logistic(logit) : log_logistic(-logit); }

/// Edge probabilities; the diagonal is zero by convention.
Matrix edge_prob_matrix(const NeighborhoodParams& params, const LatentPositions& z, const Matrix& d1);

/// Upper-triangle indicators drawn independently, in row-major order, one uniform each.
AdjacencyState sample_adjacency(const Matrix& probs, Rng& rng);

/// Sum over i<j of the Bernoulli log-likelihood of B_ij.
double adjacency_logprob(const AdjacencyState& a, const NeighborhoodParams& params, const LatentPositions& z,
                         const Matrix& d1);

/// Sum of bivariate normal log-densities N(S_i delta, sigma2_z I2) at Z_i; the
/// disk-truncation normalizer is not included. Any row outside the disk gives -inf.
double position_logprior(const LatentPositions& z, const std::vector<Matrix>& s, const Vector& delta,
                         double sigma2_z);

/// One unit's term of position_logprior.
double position_logprior_unit(const Eigen::Vector2d& zi, const Eigen::Vector2d& mean, double sigma2_z);

/// log P(|W| <= 1) for W ~ N(mean, sigma2_z I2): the truncation normalizer of one unit.
double disk_log_normalizer(const Eigen::Vector2d& mean, double sigma2_z);

/// Sum of disk_log_normalizer over units with mean S_i delta.
double position_log_normalizer(const std::vector<Matrix>& s, const Vector& delta, double sigma2_z);

/// Mean S_i delta for unit i (zero when there are no position covariates).
Eigen::Vector2d position_mean(const std::vector<Matrix>& s, const Vector& delta, Index i);

/// Rejection draw from N(mean, sigma2_z I2) truncated to the unit disk.
Eigen::Vector2d sample_truncated_position(const Eigen::Vector2d& mean, double sigma2_z, Rng& rng);

} // namespace nnsd
