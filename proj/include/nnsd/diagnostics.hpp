#pragma once

#include <limits>
#include <string>
#include <vector>

#include "nnsd/inference.hpp"
#include "nnsd/types.hpp"

namespace nnsd {

inline constexpr double kDefaultRhatThreshold = 1.1;

struct DiagnosticsReport {
    double mpsrf = 0.0;
    std::vector<std::string> names; // columns that entered the diagnostic
    Vector psrf;
    Vector ess;
    std::vector<std::string> dropped; // constant columns (pinned parameters)
    Index n = 0;                      // draws per chain
    Index m = 0;                      // chains
    double threshold = kDefaultRhatThreshold;
    bool pass = false;
};

/// Lugsail batch-means long-run covariance 2 BM(b) - BM(max(1, b/3)) of one n x p chain,
/// batches centered at the chain mean. batch_size 0 means floor(sqrt(n)).
Matrix lugsail_batch_cov(const Matrix& chain, Index batch_size = 0);

/// Same estimator with batch means centered at a supplied vector.
Matrix lugsail_batch_cov(const Matrix& chain, const Vector& center, Index batch_size);

/// Pooled within-chain sample covariance (each chain centered at its own mean, n-1 denominator).
Matrix pooled_within_cov(const std::vector<Matrix>& chains);

/// Long-run covariance averaged over chains; batch means are centered at the
/// all-chain mean, so chains that disagree inflate it.
Matrix pooled_lugsail_cov(const std::vector<Matrix>& chains, Index batch_size = 0);

/// Multivariate PSRF sqrt((n-1)/n + (det T / det S)^(1/p) / n).
double mpsrf(const std::vector<Matrix>& chains, Index batch_size = 0);

/// mpsrf plus per-column psrf and ESS. Columns constant across every chain are
/// dropped before the determinant is taken.
DiagnosticsReport diagnose(const std::vector<Matrix>& chains, const std::vector<std::string>& names,
                           double threshold = kDefaultRhatThreshold);
DiagnosticsReport diagnose(const std::vector<ChainDraws>& chains, double threshold = kDefaultRhatThreshold);

/// Quantile of sorted data by linear interpolation of order statistics:
/// position (n-1) q, zero-based.
double quantile_sorted(const std::vector<double>& sorted, double q);

struct SummaryRow {
    std::string parameter;
    double mean = 0.0;
    double median = 0.0;
    double sd = 0.0;
    double q025 = 0.0;
    double q975 = 0.0;
    double psrf = std::numeric_limits<double>::quiet_NaN();
};

SummaryRow summarize(const std::string& name, const std::vector<double>& draws);

struct PosteriorSummary {
    std::vector<SummaryRow> scalars; // trace columns, then mu_<id> per unit
    std::vector<SummaryRow> units;   // mu per unit, same order as the domain
    Matrix edge_inclusion;           // pooled across chains
    Matrix position_mean;            // aligned latent positions, pooled
};

/// Pools all chains. unit_ids name the mu rows (indices are used when empty).
/// psrf values are copied from the report when given.
PosteriorSummary posterior_summary(const std::vector<ChainDraws>& chains, const std::vector<std::string>& unit_ids = {},
                                   const DiagnosticsReport* report = nullptr);

} // namespace nnsd
