#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nnsd/domain.hpp"
#include "nnsd/gmrf.hpp"
#include "nnsd/inference.hpp"
#include "nnsd/types.hpp"

namespace nnsd {

/// True parameters of one model-based scenario.
struct ScenarioSpec {
    std::string name = "scenario";
    double gamma_true = 1.0;
    double alpha_true = -2.5;
    Vector beta_true = (Vector(2) << -6.20, 2.5).finished();
    double sigma2_eps_true = 1.0;
    double sigma2_mu_true = 0.12;
    double sigma2_y_true = 0.12;
    int replicates = 10;
    std::uint64_t seed = 1;
    /// Skips the graph draw and uses the empty graph (eps is then identically 0).
    bool force_empty_graph = false;

    void validate() const;
};

/// Scenario 1, 2 or 3: gamma = 1, 0.5, 0 with the remaining constants shared.
ScenarioSpec table2_scenario(int which);

/// Fixed geography shared by every replicate: unit-disk centroids, the non-intercept
/// covariate columns, and shared-boundary neighbors for the ICAR baseline.
struct Geometry {
    std::vector<std::string> unit_ids;
    Matrix centroids;
    Matrix covariates; // N x (p-1), intercept excluded
    std::optional<BinaryMatrix> geo_adjacency;

    Index size() const { return centroids.rows(); }
    Matrix design() const; // intercept prepended
};

/// Neighbors in the Delaunay triangulation of the points (the planar analogue of shared boundaries).
BinaryMatrix delaunay_adjacency(const Matrix& points);

/// n centroids uniform in the unit disk, a log-housing-cost style covariate with a
/// smooth east-west trend, and Delaunay neighbors.
Geometry synthetic_geometry(Index n, std::uint64_t seed);

/// Geometry from a units file (centroids and covariates) plus an optional edge list.
Geometry geometry_from_domain(const SpatialDomain& domain);

/// Y*_i = y_i + sqrt(var_y_i) z_i, independent across units.
Vector gen_pseudo_data(const Vector& y, const Vector& var_y, Rng& rng);

struct ScenarioData {
    AdjacencyState adjacency;
    LatentPositions positions;
    Vector eps;
    Vector mu;
    Vector y;
    int graph_attempts = 1;
};

/// Edge draws for given positions; edge_rng supplies one uniform per pair in row-major order.
AdjacencyState sample_scenario_graph(const ScenarioSpec& spec, const Matrix& d1, const LatentPositions& z, Rng& edge_rng);

/// One dataset. Positions, edges, eps and the two noise layers use separate
/// substreams of rng. A graph with no edges is redrawn (up to 100 attempts).
ScenarioData gen_scenario(const ScenarioSpec& spec, const Geometry& geometry, Rng& rng);

/// Fitting domain for generated responses with constant known variance.
SpatialDomain scenario_domain(const Geometry& geometry, const Vector& y, const Vector& var_y);

struct Score {
    double mse = 0.0;
    double mae = 0.0;
};

Score score(const Vector& truth, const Vector& fitted);

/// Pooled posterior median of mu per unit.
Vector fitted_medians(const std::vector<ChainDraws>& chains);

struct FitSettings {
    Hyperparams hp;
    ChainConfig chain;
    int n_chains = 2;
    bool parallel = true;
};

/// Desk-scale settings: 2 chains of 4,000 iterations with 2,000 burn-in.
FitSettings desk_fit_settings();

struct ScoreCell {
    std::string scenario;
    Variant variant = Variant::NNSD;
    std::vector<double> mse;
    std::vector<double> mae;
    int failures = 0;
    std::string last_error;

    int replicate_count() const { return static_cast<int>(mse.size()); }
    double mse_median() const;
    double mae_median() const;
};

struct ScoreTable {
    std::vector<ScoreCell> cells;

    const ScoreCell& at(const std::string& scenario, Variant v) const;
    /// scenario,variant,replicate_count,mse_median,mae_median
    std::string to_csv() const;
};

/// Model-based study: each scenario x replicate generates data once and fits every
/// variant to it. Seeds derive from each scenario's seed, the replicate and the variant.
ScoreTable run_comparison(const std::vector<ScenarioSpec>& scenarios, const std::vector<Variant>& variants,
                          int replicates, const FitSettings& fit, const Geometry& geometry);

/// Stand-in for the survey file of the empirical study: ACS-like log-scale
/// estimates with small design variances on a synthetic geometry.
struct EmpiricalData {
    Geometry geometry;
    Vector y;
    Vector var_y;
};

EmpiricalData empirical_standin(Index n, std::uint64_t seed);

/// Empirical study: replicates pseudo-datasets around y, each fitted by every variant
/// with var_y known, scored against the pseudo-data itself.
ScoreTable run_empirical_study(const EmpiricalData& data, const std::vector<Variant>& variants, int replicates,
                               const FitSettings& fit, std::uint64_t seed);

} // namespace nnsd
