#include "nnsd/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <boost/polygon/voronoi.hpp>

#include "nnsd/csv.hpp"
#include "nnsd/diagnostics.hpp"
#include "nnsd/neighborhood.hpp"

namespace nnsd {

namespace {

double median_of(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    return quantile_sorted(v, 0.5);
}

std::vector<std::string> numbered_ids(Index n) {
    std::vector<std::string> ids;
    char buf[32];
    for (Index i = 0; i < n; ++i) {
        std::snprintf(buf, sizeof buf, "u%03ld", static_cast<long>(i + 1));
        ids.emplace_back(buf);
    }
    return ids;
}

Matrix uniform_disk_points(Index n, Rng& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Matrix p(n, 2);
    for (Index i = 0; i < n; ++i) {
        const double r = std::sqrt(unif(rng));
        const double t = 2.0 * M_PI * unif(rng);
        p(i, 0) = r * std::cos(t);
        p(i, 1) = r * std::sin(t);
    }
    return normalize_to_unit_disk(p);
}

LatentPositions prior_positions(Index n, double sigma2_z, Rng& rng) {
    LatentPositions z(n, 2);
    for (Index i = 0; i < n; ++i) z.row(i) = sample_truncated_position(Eigen::Vector2d::Zero(), sigma2_z, rng).transpose();
    return z;
}

// Per-cell error bookkeeping shared by both studies.
void fit_and_score(ScoreCell& cell, const SpatialDomain& domain, const Vector& truth, const FitSettings& fit,
                   std::uint64_t seed) {
    try {
        FitSettings f = fit;
        f.hp.variant = cell.variant;
        f.chain.seed = seed;
        const auto chains = run_chains(domain, f.hp, f.chain, f.n_chains, f.parallel);
        const Score s = score(truth, fitted_medians(chains));
        cell.mse.push_back(s.mse);
        cell.mae.push_back(s.mae);
    } catch (const std::exception& e) {
        ++cell.failures;
        cell.last_error = e.what();
    }
}

} // namespace

void ScenarioSpec::validate() const {
    if (!(gamma_true >= 0.0 && gamma_true <= 1.0)) throw ConfigError("gamma_true must lie in [0, 1]");
    if (!std::isfinite(alpha_true)) throw ConfigError("alpha_true must be finite");
    if (!(sigma2_eps_true > 0.0) || !(sigma2_mu_true >= 0.0) || !(sigma2_y_true >= 0.0))
        throw ConfigError("scenario variances must be positive");
    if (replicates < 1) throw ConfigError("replicates must be at least 1");
    if (beta_true.size() < 1) throw ConfigError("beta_true must include the intercept");
}

ScenarioSpec table2_scenario(int which) {
    ScenarioSpec s;
    switch (which) {
    case 1: s.gamma_true = 1.0; break;
    case 2: s.gamma_true = 0.5; break;
    case 3: s.gamma_true = 0.0; break;
    default: throw ConfigError("scenario must be 1, 2 or 3");
    }
    s.name = "scenario" + std::to_string(which);
    s.seed = static_cast<std::uint64_t>(which);
    return s;
}

Matrix Geometry::design() const {
    Matrix x(size(), covariates.cols() + 1);
    x.col(0).setOnes();
    x.rightCols(covariates.cols()) = covariates;
    return x;
}

BinaryMatrix delaunay_adjacency(const Matrix& points) {
    namespace bp = boost::polygon;
    const Index n = points.rows();
    const double span = std::max(points.cwiseAbs().maxCoeff(), 1e-300);
    std::vector<bp::point_data<int>> sites;
    sites.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i)
        sites.emplace_back(static_cast<int>(std::lround(points(i, 0) / span * 1e8)),
                           static_cast<int>(std::lround(points(i, 1) / span * 1e8)));
    bp::voronoi_diagram<double> vd;
    bp::construct_voronoi(sites.begin(), sites.end(), &vd);
    BinaryMatrix b = BinaryMatrix::Zero(n, n);
    for (const auto& e : vd.edges()) {
        if (!e.is_primary()) continue;
        const auto i = static_cast<Index>(e.cell()->source_index());
        const auto j = static_cast<Index>(e.twin()->cell()->source_index());
        if (i != j) b(i, j) = b(j, i) = 1;
    }
    return b;
}

Geometry synthetic_geometry(Index n, std::uint64_t seed) {
    if (n < 3) throw ConfigError("synthetic geometry needs at least 3 units");
    Rng rng(seed);
    Geometry g;
    g.unit_ids = numbered_ids(n);
    g.centroids = uniform_disk_points(n, rng);
    std::normal_distribution<double> noise(0.0, 0.08);
    g.covariates.resize(n, 1);
    for (Index i = 0; i < n; ++i)
        g.covariates(i, 0) = 6.84 + 0.15 * g.centroids(i, 0) - 0.05 * g.centroids(i, 1) + noise(rng);
    g.geo_adjacency = delaunay_adjacency(g.centroids);
    return g;
}

Geometry geometry_from_domain(const SpatialDomain& domain) {
    Geometry g;
    g.unit_ids = domain.unit_ids;
    g.centroids = domain.centroids;
    g.covariates = domain.X.rightCols(domain.X.cols() - 1);
    g.geo_adjacency = domain.geo_adjacency;
    return g;
}

Vector gen_pseudo_data(const Vector& y, const Vector& var_y, Rng& rng) {
    if (y.size() != var_y.size()) throw InputError("y and var_y differ in length");
    if ((var_y.array() < 0.0).any()) throw InputError("variances must be nonnegative");
    std::normal_distribution<double> normal;
    Vector out(y.size());
    for (Index i = 0; i < y.size(); ++i) out(i) = y(i) + std::sqrt(var_y(i)) * normal(rng);
    return out;
}

AdjacencyState sample_scenario_graph(const ScenarioSpec& spec, const Matrix& d1, const LatentPositions& z,
                                     Rng& edge_rng) {
    NeighborhoodParams nbr;
    nbr.alpha = spec.alpha_true;
    nbr.gamma = spec.gamma_true;
    return sample_adjacency(edge_prob_matrix(nbr, z, d1), edge_rng);
}

ScenarioData gen_scenario(const ScenarioSpec& spec, const Geometry& geometry, Rng& rng) {
    spec.validate();
    const Index n = geometry.size();
    if (spec.beta_true.size() != geometry.covariates.cols() + 1)
        throw ConfigError("beta_true length does not match the covariates");
    Rng z_rng(rng()), edge_rng(rng()), eps_rng(rng()), noise_rng(rng());

    ScenarioData out;
    out.positions = prior_positions(n, 1.0, z_rng);
    if (spec.force_empty_graph) {
        out.adjacency = AdjacencyState::empty(n);
    } else {
        const Matrix d1 = pairwise_distances(geometry.centroids);
        for (out.graph_attempts = 1;; ++out.graph_attempts) {
            out.adjacency = sample_scenario_graph(spec, d1, out.positions, edge_rng);
            if (out.adjacency.edge_count() > 0) break;
            if (out.graph_attempts == 100) throw NumericalError("generated graph had no edges in 100 attempts");
        }
    }
    out.eps = sample_icar_prior(out.adjacency, spec.sigma2_eps_true, eps_rng);
    std::normal_distribution<double> normal;
    const Vector xb = geometry.design() * spec.beta_true;
    out.mu.resize(n);
    out.y.resize(n);
    for (Index i = 0; i < n; ++i) out.mu(i) = xb(i) + out.eps(i) + std::sqrt(spec.sigma2_mu_true) * normal(noise_rng);
    for (Index i = 0; i < n; ++i) out.y(i) = out.mu(i) + std::sqrt(spec.sigma2_y_true) * normal(noise_rng);
    return out;
}

SpatialDomain scenario_domain(const Geometry& geometry, const Vector& y, const Vector& var_y) {
    return make_domain(geometry.unit_ids, geometry.centroids, y, var_y, geometry.covariates, Matrix(),
                       geometry.geo_adjacency);
}

Score score(const Vector& truth, const Vector& fitted) {
    if (truth.size() != fitted.size())
        throw InputError("length mismatch: truth has " + std::to_string(truth.size()) + ", fitted has " +
                         std::to_string(fitted.size()));
    if (truth.size() == 0) throw InputError("nothing to score");
    const Vector d = truth - fitted;
    const double n = static_cast<double>(d.size());
    return {d.squaredNorm() / n, d.cwiseAbs().sum() / n};
}

Vector fitted_medians(const std::vector<ChainDraws>& chains) {
    const PosteriorSummary s = posterior_summary(chains);
    Vector out(static_cast<Index>(s.units.size()));
    for (std::size_t i = 0; i < s.units.size(); ++i) out(static_cast<Index>(i)) = s.units[i].median;
    return out;
}

FitSettings desk_fit_settings() {
    FitSettings f;
    f.chain.iterations = 4000;
    f.chain.burn_in = 2000;
    f.n_chains = 2;
    return f;
}

double ScoreCell::mse_median() const { return median_of(mse); }
double ScoreCell::mae_median() const { return median_of(mae); }

const ScoreCell& ScoreTable::at(const std::string& scenario, Variant v) const {
    for (const auto& c : cells)
        if (c.scenario == scenario && c.variant == v) return c;
    throw InputError("no cell for " + scenario + "/" + to_string(v));
}

std::string ScoreTable::to_csv() const {
    std::ostringstream os;
    os << "scenario,variant,replicate_count,mse_median,mae_median\n";
    for (const auto& c : cells)
        os << c.scenario << ',' << to_string(c.variant) << ',' << c.replicate_count() << ','
           << format_real(c.mse_median()) << ',' << format_real(c.mae_median()) << '\n';
    return os.str();
}

ScoreTable run_comparison(const std::vector<ScenarioSpec>& scenarios, const std::vector<Variant>& variants,
                          int replicates, const FitSettings& fit, const Geometry& geometry) {
    if (scenarios.empty() || variants.empty()) throw ConfigError("need at least one scenario and one variant");
    if (replicates < 1) throw ConfigError("replicates must be at least 1");
    ScoreTable table;
    for (const auto& spec : scenarios) {
        spec.validate();
        const std::size_t first = table.cells.size();
        for (Variant v : variants) {
            ScoreCell cell;
            cell.scenario = spec.name;
            cell.variant = v;
            table.cells.push_back(cell);
        }
        for (int r = 0; r < replicates; ++r) {
            const auto ur = static_cast<std::uint64_t>(r);
            Rng data_rng(derive_seed(spec.seed, 2 * ur));
            ScenarioData data;
            try {
                data = gen_scenario(spec, geometry, data_rng);
            } catch (const std::exception& e) {
                for (std::size_t c = first; c < table.cells.size(); ++c) {
                    ++table.cells[c].failures;
                    table.cells[c].last_error = e.what();
                }
                continue;
            }
            const SpatialDomain domain =
                scenario_domain(geometry, data.y, Vector::Constant(1, std::max(spec.sigma2_y_true, 1e-12)));
            const std::uint64_t fit_base = derive_seed(spec.seed, 2 * ur + 1);
            for (std::size_t c = first; c < table.cells.size(); ++c) {
                ScoreCell& cell = table.cells[c];
                fit_and_score(cell, domain, data.y, fit, derive_seed(fit_base, static_cast<std::uint64_t>(cell.variant)));
            }
        }
    }
    return table;
}

EmpiricalData empirical_standin(Index n, std::uint64_t seed) {
    EmpiricalData out;
    out.geometry = synthetic_geometry(n, seed);
    Rng rng(derive_seed(seed, 1));
    ScenarioSpec truth;
    truth.gamma_true = 0.5;
    truth.alpha_true = -1.0;
    truth.sigma2_eps_true = 0.02;
    truth.sigma2_mu_true = 0.004;
    truth.sigma2_y_true = 0.0;
    const ScenarioData data = gen_scenario(truth, out.geometry, rng);
    out.y = data.mu;
    std::uniform_real_distribution<double> cv(0.02, 0.06);
    out.var_y.resize(n);
    for (Index i = 0; i < n; ++i) {
        const double c = cv(rng);
        out.var_y(i) = c * c;
    }
    return out;
}

ScoreTable run_empirical_study(const EmpiricalData& data, const std::vector<Variant>& variants, int replicates,
                               const FitSettings& fit, std::uint64_t seed) {
    if (variants.empty()) throw ConfigError("need at least one variant");
    if (replicates < 1) throw ConfigError("replicates must be at least 1");
    ScoreTable table;
    for (Variant v : variants) {
        ScoreCell cell;
        cell.scenario = "empirical";
        cell.variant = v;
        table.cells.push_back(cell);
    }
    for (int r = 0; r < replicates; ++r) {
        const auto ur = static_cast<std::uint64_t>(r);
        Rng rng(derive_seed(seed, 2 * ur));
        const Vector pseudo = gen_pseudo_data(data.y, data.var_y, rng);
        const SpatialDomain domain = scenario_domain(data.geometry, pseudo, data.var_y);
        const std::uint64_t fit_base = derive_seed(seed, 2 * ur + 1);
        for (auto& cell : table.cells)
            fit_and_score(cell, domain, pseudo, fit, derive_seed(fit_base, static_cast<std::uint64_t>(cell.variant)));
    }
    return table;
}

} // namespace nnsd
