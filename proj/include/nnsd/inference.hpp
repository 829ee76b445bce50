#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nnsd/domain.hpp"
#include "nnsd/gmrf.hpp"
#include "nnsd/neighborhood.hpp"
#include "nnsd/types.hpp"

namespace nnsd {

/// Fixed prior constants and the model variant.
struct Hyperparams {
    double sigma2_alpha = 3.0;
    double sigma2_beta = 100.0;
    double sigma2_delta = 100.0;
    double sigma2_z = 1.0;
    double a_mu = 2.0;
    double b_mu = 1.0;
    double a_eps = 2.0;
    double b_eps = 1.0;
    Variant variant = Variant::NNSD;

    void validate() const;
};

/// One full set of latent quantities.
struct ModelState {
    AdjacencyState adjacency;
    LatentPositions positions;
    NeighborhoodParams nbr;
    Vector beta;
    Vector mu;
    Vector eps;
    double sigma2_mu = 0.5;
    double sigma2_eps = 0.5;
};

struct StepSizes {
    double alpha = 0.3;
    double gamma = 0.1;
    double position = 0.1;
};

/// Which blocks a sweep updates. Everything is on by default; tests pin blocks off.
struct UpdateSwitches {
    bool edges = true;
    bool positions = true;
    bool alpha = true;
    bool gamma = true;
    bool delta = true;
    bool beta = true;
    bool mu = true;
    bool epsilon = true;
    bool variances = true;
};

struct ChainConfig {
    Index iterations = 20000;
    Index burn_in = 10000;
    Index thin = 1;
    std::uint64_t seed = 1;
    StepSizes steps;
    /// Edge-flip proposals per sweep; 0 means one per unordered pair.
    Index n_proposals = 0;
    /// Robbins-Monro step adaptation during burn-in, frozen afterwards.
    bool adapt = true;
    double target_acceptance = 0.3;
    bool store_positions = false;
    UpdateSwitches switches;

    void validate() const;
};

struct AcceptanceCounter {
    std::uint64_t proposed = 0;
    std::uint64_t accepted = 0;
    double rate() const { return proposed == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(proposed); }
    AcceptanceCounter& operator+=(const AcceptanceCounter& o) {
        proposed += o.proposed;
        accepted += o.accepted;
        return *this;
    }
};

/// The retained part of a ModelState (the adjacency is summarized by its labels).
struct DrawSnapshot {
    double alpha = 0.0;
    double gamma = 0.0;
    Vector delta;
    Vector beta;
    Vector mu;
    Vector eps;
    std::vector<int> component_labels;
    double sigma2_mu = 0.0;
    double sigma2_eps = 0.0;
    Index n_edges = 0;
    int n_components = 0;
    double log_posterior = 0.0;
};

struct ChainDraws {
    std::uint64_t seed = 0;
    int chain_index = 0;
    Variant variant = Variant::NNSD;
    std::vector<std::string> scalar_names;
    Matrix scalars;                      // draws x scalar_names
    std::vector<DrawSnapshot> snapshots; // thinned, post burn-in
    Matrix edge_inclusion;               // N x N frequencies over retained draws
    Matrix aligned_position_mean;        // N x 2
    std::vector<Matrix> position_draws;  // only with store_positions
    std::map<std::string, AcceptanceCounter> acceptance;
    StepSizes final_steps;
    ModelState final_state;

    Index n_draws() const { return scalars.rows(); }
    /// Column of `scalars` by name; throws InputError if absent.
    Vector trace(const std::string& name) const;
    /// Retained draws of mu as a draws x N matrix.
    Matrix mu_draws() const;
};

/// Names of the scalar traces, in trace column order.
std::vector<std::string> scalar_names(Index p, Index k);

/// Unnormalized log posterior: data, data-model, intrinsic GMRF, neighborhood and
/// prior terms. With position covariates the truncated position prior includes its
/// delta-dependent normalizer; without them that normalizer is a constant and is left out. Returns -inf outside the support (gamma outside [0,1], a position
/// outside the disk, a violated sum-to-zero constraint).
double joint_logdensity(const ModelState& state, const SpatialDomain& domain, const Hyperparams& hp);

struct InverseGammaParams {
    double shape = 0.0;
    double rate = 0.0;
};

/// Full conditionals of the two variances.
InverseGammaParams sigma2_mu_conditional(const ModelState& state, const SpatialDomain& domain, const Hyperparams& hp);
InverseGammaParams sigma2_eps_conditional(const ModelState& state, const Hyperparams& hp);

struct GaussianConditional {
    Vector mean;
    Matrix covariance;
};

/// beta | mu, eps, sigma2_mu: precision X'X/s2mu + I/s2beta, mean prec^{-1} X'(mu - eps)/s2mu.
GaussianConditional beta_conditional(const ModelState& state, const SpatialDomain& domain, const Hyperparams& hp);
/// mu_i | y_i, X beta + eps: precision 1/var_y + 1/s2mu (independent across units).
GaussianConditional mu_conditional(const ModelState& state, const SpatialDomain& domain);
/// delta | Z under the untruncated prior: precision sum S'S/s2z + I/s2delta.
GaussianConditional delta_conditional(const ModelState& state, const SpatialDomain& domain, const Hyperparams& hp);

/// Draws beta, mu and delta. Beta and mu are exact Gaussian draws. Delta takes one
/// random-walk Metropolis step on its exact conditional, with proposal covariance
/// proportional to the untruncated Gaussian conditional (skipped without position
/// covariates). Returns whether the delta proposal was accepted.
bool gibbs_update_location_params(ModelState& state, const SpatialDomain& domain, const Hyperparams& hp, Rng& rng,
                                  const UpdateSwitches& which = {});

void gibbs_update_variances(ModelState& state, const SpatialDomain& domain, const Hyperparams& hp, Rng& rng);

/// eps from its constrained full conditional.
void gibbs_update_epsilon(ModelState& state, const SpatialDomain& domain, Rng& rng);

/// Log acceptance ratio of moving (alpha, gamma) to the proposal, using only the
/// terms that contain them (edge likelihood and their priors).
double alpha_gamma_log_ratio(const ModelState& state, const SpatialDomain& domain, const Hyperparams& hp,
                             double alpha_new, double gamma_new);

/// Folds x into [0, 1] by reflection at both ends.
double reflect_unit_interval(double x);

struct AlphaGammaResult {
    bool alpha_accepted = false;
    bool gamma_accepted = false;
    bool gamma_proposed = false;
};

AlphaGammaResult mh_update_alpha_gamma(ModelState& state, const SpatialDomain& domain, const Hyperparams& hp, Rng& rng,
                                       const StepSizes& steps, const UpdateSwitches& which = {});

/// Log ratio for moving unit i to z_new: its prior term plus its N-1 incident pairs.
double position_move_log_ratio(const ModelState& state, const SpatialDomain& domain, const Hyperparams& hp, Index i,
                               const Eigen::Vector2d& z_new);

/// One random-walk proposal per unit; skipped for the NN and ICAR variants.
AcceptanceCounter mh_update_positions(ModelState& state, const SpatialDomain& domain, const Hyperparams& hp, Rng& rng,
                                      double step_size);

/// Evaluated single-edge proposal.
struct FlipEvaluation {
    double log_ratio = 0.0;
    bool adding = false;
    /// True when the flip merges or splits components. Those flips are
    /// evaluated with eps integrated out over the affected components and, on
    /// acceptance, eps is redrawn there from its full conditional.
    bool partition_change = false;
};

/// Acceptance log-ratio of toggling B_ij from the current state.
FlipEvaluation evaluate_flip(const ModelState& state, const SpatialDomain& domain, const Hyperparams& hp, Index i,
                             Index j);

struct FlipCounters {
    AcceptanceCounter within;    // partition unchanged
    AcceptanceCounter partition; // merges and splits
};

/// n_proposals uniformly chosen unordered pairs, each proposed for toggling.
FlipCounters mh_flip_edges(ModelState& state, const SpatialDomain& domain, const Hyperparams& hp, Rng& rng,
                           Index n_proposals);

struct SweepCounters {
    FlipCounters flips;
    AcceptanceCounter positions;
    AcceptanceCounter alpha;
    AcceptanceCounter gamma;
    AcceptanceCounter delta;
};

/// One full sweep in fixed order: edges, positions, (alpha, gamma), (delta, beta, mu), eps, variances.
SweepCounters sweep(ModelState& state, const SpatialDomain& domain, const Hyperparams& hp, Rng& rng,
                    const StepSizes& steps, Index n_proposals, const UpdateSwitches& which = {});

/// Deterministic starting point with chain-indexed overdispersion.
ModelState initial_state(const SpatialDomain& domain, const Hyperparams& hp, int chain_index, Rng& rng);

/// Reference configuration used to align latent positions across draws and chains.
Matrix position_reference(const SpatialDomain& domain);

ChainDraws run_chain(const SpatialDomain& domain, const Hyperparams& hp, const ChainConfig& config,
                     const std::optional<ModelState>& init = std::nullopt, int chain_index = 0);

/// Chain c uses seed derive_seed(config.seed, c) and initialization index c.
std::vector<ChainDraws> run_chains(const SpatialDomain& domain, const Hyperparams& hp, const ChainConfig& config,
                                   int n_chains, bool parallel = true);

std::uint64_t chain_seed(std::uint64_t master, int chain_index);

} // namespace nnsd
