#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nnsd/types.hpp"

namespace nnsd {

/// Column selection for the units file.
struct ColumnSpec {
    std::string id = "id";
    std::string centroid_x = "x";
    std::string centroid_y = "y";
    std::string response = "estimate";
    std::string response_se = "se";
    /// "log": response is a positive estimate on the natural scale; the model uses
    /// log(estimate) with delta-method variance (se/estimate)^2.
    /// "identity": response and se are already on the modelling scale.
    std::string response_transform = "log";
    std::vector<std::string> covariates;
    std::vector<std::string> position_covariates;
    char delimiter = ',';
};

/// N areal units with fixed geometry, response and covariates. Immutable once built.
struct SpatialDomain {
    std::vector<std::string> unit_ids;
    Matrix centroids;            // N x 2, normalized to the unit disk
    Matrix d1;                   // N x N geographic distances
    Vector y;                    // response (log scale)
    Vector var_y;                // known sampling variances
    Matrix X;                    // N x p, first column intercept
    std::vector<Matrix> S;       // N entries, each 2 x k
    std::optional<BinaryMatrix> geo_adjacency;

    Index size() const { return y.size(); }
    Index n_covariates() const { return X.cols(); }
    Index n_position_covariates() const { return S.empty() ? 0 : S.front().cols(); }

    /// Throws InputError when an invariant does not hold.
    void validate() const;
};

/// Assembles a domain from raw (unnormalized) centroids. Scalar `var_y` of length 1
/// is broadcast. Position covariates are scalars per unit; each column c yields a
/// 2 x 2 block s_ic * I2 of S_i, so k = 2 * n_position_covariates.
SpatialDomain make_domain(std::vector<std::string> unit_ids, const Matrix& raw_centroids,
                          const Vector& y, const Vector& var_y, const Matrix& covariates,
                          const Matrix& position_covariates = Matrix(),
                          std::optional<BinaryMatrix> geo_adjacency = std::nullopt);

SpatialDomain load_domain(const std::string& units_file,
                          const std::optional<std::string>& adjacency_file,
                          const ColumnSpec& columns);

/// Reads "id_i,id_j" lines into a symmetric binary matrix. Duplicates are ignored.
BinaryMatrix read_edge_list(const std::string& path, const std::vector<std::string>& unit_ids);

/// Centers at the column mean and divides by the largest centered norm.
Matrix normalize_to_unit_disk(const Matrix& raw_centroids);

Matrix pairwise_distances(const Matrix& points);

/// First-order variance of log(estimate): (se / estimate)^2.
double delta_method_log_variance(double estimate, double se);

} // namespace nnsd
