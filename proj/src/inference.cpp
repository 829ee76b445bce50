#include "nnsd/inference.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <string>

#include "nnsd/alignment.hpp"

namespace nnsd {

namespace {

double log_normal(double x, double var) { return -0.5 * (kLog2Pi + std::log(var)) - x * x / (2.0 * var); }

double log_inverse_gamma(double x, double shape, double rate) {
    return shape * std::log(rate) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - rate / x;
}

bool has_network(Variant v) { return v != Variant::ICAR; }
bool samples_positions(Variant v) { return v == Variant::NNSD || v == Variant::SD; }
bool samples_gamma(Variant v) { return v == Variant::NNSD; }

double pinned_gamma(Variant v, double fallback) {
    if (v == Variant::NN) return 1.0;
    if (v == Variant::SD) return 0.0;
    return fallback;
}

Matrix latent_distances(const LatentPositions& z) {
    const Index n = z.rows();
    Matrix d = Matrix::Zero(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j) d(i, j) = d(j, i) = (z.row(i) - z.row(j)).norm();
    return d;
}

Vector draw_gaussian(const Matrix& precision, const Vector& rhs, Rng& rng) {
    Eigen::LLT<Matrix> llt(precision);
    if (llt.info() != Eigen::Success) throw NumericalError("full-conditional precision is not positive definite");
    std::normal_distribution<double> normal;
    Vector z(rhs.size());
    for (Index k = 0; k < z.size(); ++k) z(k) = normal(rng);
    return llt.solve(rhs) + Matrix(llt.matrixU()).triangularView<Eigen::Upper>().solve(z);
}

double draw_inverse_gamma(const InverseGammaParams& p, Rng& rng) {
    std::gamma_distribution<double> gamma(p.shape, 1.0 / p.rate);
    return 1.0 / gamma(rng);
}

// beta | rest as (precision, rhs) with mean = precision^{-1} rhs.
std::pair<Matrix, Vector> beta_system(const ModelState& s, const SpatialDomain& d, const Hyperparams& hp) {
    const Index p = d.X.cols();
    Matrix prec = d.X.transpose() * d.X / s.sigma2_mu;
    prec.diagonal().array() += 1.0 / hp.sigma2_beta;
    Vector rhs = d.X.transpose() * (s.mu - s.eps) / s.sigma2_mu;
    (void)p;
    return {prec, rhs};
}

std::pair<Matrix, Vector> delta_system(const ModelState& s, const SpatialDomain& d, const Hyperparams& hp) {
    const Index k = d.n_position_covariates();
    Matrix prec = Matrix::Zero(k, k);
    Vector rhs = Vector::Zero(k);
    for (Index i = 0; i < d.size(); ++i) {
        const Matrix& si = d.S[static_cast<std::size_t>(i)];
        prec += si.transpose() * si / hp.sigma2_z;
        rhs += si.transpose() * s.positions.row(i).transpose() / hp.sigma2_z;
    }
    prec.diagonal().array() += 1.0 / hp.sigma2_delta;
    return {prec, rhs};
}

// Units reachable from `start` without using edge (i, j).
std::vector<int> piece_without_edge(const BinaryMatrix& b, Index start, Index i, Index j) {
    const Index n = b.rows();
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    std::vector<int> out{static_cast<int>(start)};
    seen[static_cast<std::size_t>(start)] = 1;
    for (std::size_t head = 0; head < out.size(); ++head) {
        const Index v = out[head];
        for (Index w = 0; w < n; ++w) {
            if (!b(v, w) || seen[static_cast<std::size_t>(w)]) continue;
            if ((v == i && w == j) || (v == j && w == i)) continue;
            seen[static_cast<std::size_t>(w)] = 1;
            out.push_back(static_cast<int>(w));
        }
    }
    return out;
}

// Per-component caches for edge flips with mu, beta and both variances held fixed.
//
// For a component C with residual r = mu - X beta restricted to C, the precision
// P_C = L_C/s2e + I/s2mu is kept inverted (pinv) along with g = pinv r. The
// marginal density of r with eps integrated over the constrained subspace is
//   log m_C = -(k/2) log(2 pi s2mu) - ((k-1)/2) log s2e + pdet_C/2 - log det P_C/2
//             - log(s2mu)/2 - |r|^2/(2 s2mu) + (r'g - s2mu S^2/k)/(2 s2mu^2),
// with S = sum(r). Merging two components through edge (i, j) changes it by
// merge_gain(); a split is the negative merge of its two pieces, obtained from
// the parent's caches by a rank-one downdate.
class FlipCache {
  public:
    FlipCache(const ModelState& s, const SpatialDomain& d)
        : r_(s.mu - d.X * s.beta), s2e_(s.sigma2_eps), s2mu_(s.sigma2_mu),
          pinv_(Matrix::Zero(d.size(), d.size())), g_(Vector::Zero(d.size())) {
        for (int c = 0; c < s.adjacency.n_components(); ++c) rebuild_block(s.adjacency, s.adjacency.members(c));
        rebuild_sums(s.adjacency);
    }

    FlipEvaluation evaluate(const ModelState& s, Index i, Index j, double logit) const {
        const AdjacencyState& a = s.adjacency;
        FlipEvaluation e;
        e.adding = !a.has_edge(i, j);
        const double prior = edge_loglik(e.adding, logit) - edge_loglik(!e.adding, logit);
        const bool same = a.same_component(i, j);
        if (e.adding && same) {
            const double de = s.eps(i) - s.eps(j);
            e.log_ratio = prior + 0.5 * std::log1p(a.resistance(i, j)) - de * de / (2.0 * s2e_);
            return e;
        }
        if (!e.adding && !a.is_bridge(i, j)) {
            const double de = s.eps(i) - s.eps(j);
            e.log_ratio = prior + 0.5 * std::log(1.0 - a.resistance(i, j)) + de * de / (2.0 * s2e_);
            return e;
        }
        e.partition_change = true;
        const double s_ij = pinv_(i, i) + pinv_(j, j) - 2.0 * lower_entry(pinv_, i, j);
        const double dg = g_(i) - g_(j);
        if (e.adding) {
            const double ka = a.component_size_of(i), kb = a.component_size_of(j);
            const double sa = rsum_[static_cast<std::size_t>(a.component_labels()[static_cast<std::size_t>(i)])];
            const double sb = rsum_[static_cast<std::size_t>(a.component_labels()[static_cast<std::size_t>(j)])];
            e.log_ratio = prior + merge_gain(ka, kb, sa, sb, s_ij, dg);
            return e;
        }
        const std::vector<int> piece = piece_without_edge(a.matrix(), i, i, j);
        const double kc = a.component_size_of(i);
        const double ka = static_cast<double>(piece.size());
        double sa = 0.0;
        for (int v : piece) sa += r_(v);
        const double sc = rsum_[static_cast<std::size_t>(a.component_labels()[static_cast<std::size_t>(i)])];
        const double scale = s2e_ / (s2e_ - s_ij);
        e.log_ratio = prior - merge_gain(ka, kc - ka, sa, sc - sa, s_ij * scale, dg * scale);
        return e;
    }

    void accept(ModelState& s, Index i, Index j, const FlipEvaluation& e, Rng& rng) {
        AdjacencyState& a = s.adjacency;
        if (!e.partition_change) {
            const double sign = e.adding ? 1.0 : -1.0;
            const double s_ij = pinv_(i, i) + pinv_(j, j) - 2.0 * lower_entry(pinv_, i, j);
            const double denom = s2e_ + sign * s_ij;
            a.apply_flip(i, j);
            const auto& m = a.members(a.component_labels()[static_cast<std::size_t>(i)]);
            if (denom < 1e-3 * s2e_) {
                rebuild_block(a, m);
                return;
            }
            const auto k = static_cast<Index>(m.size());
            const double ug = g_(i) - g_(j);
            if (2 * k >= pinv_.rows()) {
                // pinv_ is zero off the component blocks.
                const Vector w = lower_column(pinv_, i) - lower_column(pinv_, j);
                g_.noalias() -= (sign * ug / denom) * w;
                pinv_.selfadjointView<Eigen::Lower>().rankUpdate(w, -sign / denom);
                return;
            }
            Vector w(k);
            for (Index u = 0; u < k; ++u) w(u) = lower_entry(pinv_, m[static_cast<std::size_t>(u)], i) - lower_entry(pinv_, m[static_cast<std::size_t>(u)], j);
            for (Index u = 0; u < k; ++u) {
                const int vu = m[static_cast<std::size_t>(u)];
                g_(vu) -= sign * w(u) * ug / denom;
                for (Index t = 0; t < k; ++t) pinv_(vu, m[static_cast<std::size_t>(t)]) -= sign * w(u) * w(t) / denom;
            }
            return;
        }
        std::vector<int> old = a.members(a.component_labels()[static_cast<std::size_t>(i)]);
        if (!a.same_component(i, j)) {
            const auto& other = a.members(a.component_labels()[static_cast<std::size_t>(j)]);
            old.insert(old.end(), other.begin(), other.end());
        }
        for (int v : old)
            for (int w : old) pinv_(v, w) = 0.0;
        a.apply_flip(i, j);
        std::vector<int> units = a.members(a.component_labels()[static_cast<std::size_t>(i)]);
        if (!a.same_component(i, j)) {
            const auto& other = a.members(a.component_labels()[static_cast<std::size_t>(j)]);
            rebuild_block(a, other);
            units.insert(units.end(), other.begin(), other.end());
        }
        rebuild_block(a, a.members(a.component_labels()[static_cast<std::size_t>(i)]));
        sample_epsilon_block(s.eps, units, r_, a, s2e_, s2mu_, rng);
        rebuild_sums(a);
    }

  private:
    double merge_gain(double ka, double kb, double sa, double sb, double s_ij, double dg) const {
        const double quad = -dg * dg / (s2e_ + s_ij) + s2mu_ * (sa * sa / ka + sb * sb / kb - (sa + sb) * (sa + sb) / (ka + kb));
        return -0.5 * std::log(s2e_) + 0.5 * merge_logdet_delta(static_cast<Index>(ka), static_cast<Index>(kb)) -
               0.5 * std::log1p(s_ij / s2e_) + 0.5 * std::log(s2mu_) + quad / (2.0 * s2mu_ * s2mu_);
    }

    void rebuild_block(const AdjacencyState& a, const std::vector<int>& m) {
        const auto k = static_cast<Index>(m.size());
        Matrix p = Matrix::Zero(k, k);
        for (Index u = 0; u < k; ++u)
            for (Index t = u + 1; t < k; ++t)
                if (a.has_edge(m[static_cast<std::size_t>(u)], m[static_cast<std::size_t>(t)])) {
                    p(u, t) = p(t, u) = -1.0 / s2e_;
                    p(u, u) += 1.0 / s2e_;
                    p(t, t) += 1.0 / s2e_;
                }
        p.diagonal().array() += 1.0 / s2mu_;
        Eigen::LLT<Matrix> llt(p);
        if (llt.info() != Eigen::Success) throw NumericalError("component precision is not positive definite");
        const Matrix inv = llt.solve(Matrix::Identity(k, k));
        Vector rc(k);
        for (Index u = 0; u < k; ++u) rc(u) = r_(m[static_cast<std::size_t>(u)]);
        const Vector gc = inv * rc;
        for (Index u = 0; u < k; ++u) {
            g_(m[static_cast<std::size_t>(u)]) = gc(u);
            for (Index t = 0; t < k; ++t) pinv_(m[static_cast<std::size_t>(u)], m[static_cast<std::size_t>(t)]) = inv(u, t);
        }
    }

    void rebuild_sums(const AdjacencyState& a) {
        rsum_.assign(static_cast<std::size_t>(a.n_components()), 0.0);
        const auto& labels = a.component_labels();
        for (std::size_t v = 0; v < labels.size(); ++v) rsum_[static_cast<std::size_t>(labels[v])] += r_(static_cast<Index>(v));
    }

    Vector r_;
    double s2e_;
    double s2mu_;
    Matrix pinv_;
    Vector g_;
    std::vector<double> rsum_;
};

double pair_loglik_sum(const ModelState& s, const SpatialDomain& d, const Matrix& d2, double alpha, double gamma) {
    const Index n = d.size();
    double total = 0.0;
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j)
            total += edge_loglik(s.adjacency.has_edge(i, j), edge_logit(alpha, gamma, d.d1(i, j), d2(i, j)));
    return total;
}

double alpha_gamma_log_ratio_d2(const ModelState& s, const SpatialDomain& d, const Hyperparams& hp, const Matrix& d2,
                                double alpha_new, double gamma_new) {
    if (!(gamma_new >= 0.0 && gamma_new <= 1.0)) return kNegInf;
    return pair_loglik_sum(s, d, d2, alpha_new, gamma_new) - pair_loglik_sum(s, d, d2, s.nbr.alpha, s.nbr.gamma) +
           log_normal(alpha_new, hp.sigma2_alpha) - log_normal(s.nbr.alpha, hp.sigma2_alpha);
}

} // namespace

void Hyperparams::validate() const {
    const std::pair<const char*, double> fields[] = {
        {"sigma2_alpha", sigma2_alpha}, {"sigma2_beta", sigma2_beta}, {"sigma2_delta", sigma2_delta},
        {"sigma2_z", sigma2_z},         {"a_mu", a_mu},               {"b_mu", b_mu},
        {"a_eps", a_eps},               {"b_eps", b_eps}};
    for (const auto& [name, value] : fields)
        if (!(value > 0.0) || !std::isfinite(value)) throw ConfigError(std::string(name) + " must be positive");
}

void ChainConfig::validate() const {
    if (burn_in < 0) throw ConfigError("burn_in must be nonnegative");
    if (!(iterations > burn_in))
        throw ConfigError("iterations (" + std::to_string(iterations) + ") must exceed burn_in (" +
                          std::to_string(burn_in) + ")");
    if (thin < 1) throw ConfigError("thin must be at least 1");
    if (n_proposals < 0) throw ConfigError("n_proposals must be nonnegative");
    if (!(steps.alpha > 0.0) || !(steps.gamma > 0.0) || !(steps.position > 0.0))
        throw ConfigError("step sizes must be positive");
}

std::vector<std::string> scalar_names(Index p, Index k) {
    std::vector<std::string> names{"alpha", "gamma"};
    for (Index c = 0; c < p; ++c) names.push_back("beta[" + std::to_string(c) + "]");
    for (Index c = 0; c < k; ++c) names.push_back("delta[" + std::to_string(c) + "]");
    for (const char* n : {"sigma2_mu", "sigma2_eps", "n_edges", "n_components", "log_posterior"}) names.emplace_back(n);
    return names;
}

Vector ChainDraws::trace(const std::string& name) const {
    for (std::size_t c = 0; c < scalar_names.size(); ++c)
        if (scalar_names[c] == name) return scalars.col(static_cast<Index>(c));
    throw InputError("no trace named '" + name + "'");
}

Matrix ChainDraws::mu_draws() const {
    if (snapshots.empty()) return {};
    Matrix out(static_cast<Index>(snapshots.size()), snapshots.front().mu.size());
    for (std::size_t t = 0; t < snapshots.size(); ++t) out.row(static_cast<Index>(t)) = snapshots[t].mu.transpose();
    return out;
}

double joint_logdensity(const ModelState& s, const SpatialDomain& d, const Hyperparams& hp) {
    if (!(s.nbr.gamma >= 0.0 && s.nbr.gamma <= 1.0)) return kNegInf;
    if (!(s.sigma2_mu > 0.0) || !(s.sigma2_eps > 0.0)) return kNegInf;
    const Index n = d.size();
    double total = 0.0;

    for (Index i = 0; i < n; ++i) total += log_normal(d.y(i) - s.mu(i), d.var_y(i));
    const Vector resid = s.mu - d.X * s.beta - s.eps;
    total += -0.5 * static_cast<double>(n) * (kLog2Pi + std::log(s.sigma2_mu)) - resid.squaredNorm() / (2.0 * s.sigma2_mu);

    const double scale = std::max(1.0, s.eps.cwiseAbs().maxCoeff());
    if (max_constraint_violation(s.eps, s.adjacency.component_labels()) > kConstraintTolerance * scale) return kNegInf;
    total += icar_logdensity(s.eps, s.adjacency, s.sigma2_eps);

    for (Index c = 0; c < s.beta.size(); ++c) total += log_normal(s.beta(c), hp.sigma2_beta);
    total += log_inverse_gamma(s.sigma2_mu, hp.a_mu, hp.b_mu);
    total += log_inverse_gamma(s.sigma2_eps, hp.a_eps, hp.b_eps);

    if (has_network(hp.variant)) {
        total += adjacency_logprob(s.adjacency, s.nbr, s.positions, d.d1);
        total += log_normal(s.nbr.alpha, hp.sigma2_alpha);
        const double pos = position_logprior(s.positions, d.S, s.nbr.delta, hp.sigma2_z);
        if (pos == kNegInf) return kNegInf;
        total += pos;
        if (!d.S.empty()) total -= position_log_normalizer(d.S, s.nbr.delta, hp.sigma2_z);
        for (Index c = 0; c < s.nbr.delta.size(); ++c) total += log_normal(s.nbr.delta(c), hp.sigma2_delta);
    }
    return total;
}

InverseGammaParams sigma2_mu_conditional(const ModelState& s, const SpatialDomain& d, const Hyperparams& hp) {
    const Vector resid = s.mu - d.X * s.beta - s.eps;
    return {hp.a_mu + 0.5 * static_cast<double>(d.size()), hp.b_mu + 0.5 * resid.squaredNorm()};
}

InverseGammaParams sigma2_eps_conditional(const ModelState& s, const Hyperparams& hp) {
    const double rank = static_cast<double>(s.adjacency.size() - s.adjacency.n_components());
    return {hp.a_eps + 0.5 * rank, hp.b_eps + 0.5 * s.adjacency.quadratic_form(s.eps)};
}

GaussianConditional beta_conditional(const ModelState& s, const SpatialDomain& d, const Hyperparams& hp) {
    const auto [prec, rhs] = beta_system(s, d, hp);
    Eigen::LLT<Matrix> llt(prec);
    return {llt.solve(rhs), llt.solve(Matrix::Identity(prec.rows(), prec.cols()))};
}

GaussianConditional mu_conditional(const ModelState& s, const SpatialDomain& d) {
    const Index n = d.size();
    const Vector m = d.X * s.beta + s.eps;
    GaussianConditional out{Vector(n), Matrix::Zero(n, n)};
    for (Index i = 0; i < n; ++i) {
        const double prec = 1.0 / d.var_y(i) + 1.0 / s.sigma2_mu;
        out.mean(i) = (d.y(i) / d.var_y(i) + m(i) / s.sigma2_mu) / prec;
        out.covariance(i, i) = 1.0 / prec;
    }
    return out;
}

GaussianConditional delta_conditional(const ModelState& s, const SpatialDomain& d, const Hyperparams& hp) {
    const auto [prec, rhs] = delta_system(s, d, hp);
    if (prec.rows() == 0) return {};
    Eigen::LLT<Matrix> llt(prec);
    return {llt.solve(rhs), llt.solve(Matrix::Identity(prec.rows(), prec.cols()))};
}

bool gibbs_update_location_params(ModelState& s, const SpatialDomain& d, const Hyperparams& hp, Rng& rng,
                                  const UpdateSwitches& which) {
    bool delta_accepted = false;
    if (which.delta && samples_positions(hp.variant) && d.n_position_covariates() > 0) {
        // Random walk on the exact conditional (truncated position prior times the
        // delta prior), shaped by the untruncated conditional covariance.
        const auto [prec, rhs] = delta_system(s, d, hp);
        Eigen::LLT<Matrix> llt(prec);
        if (llt.info() != Eigen::Success) throw NumericalError("delta precision is not positive definite");
        const double scale = 2.38 / std::sqrt(static_cast<double>(prec.rows()));
        std::normal_distribution<double> normal;
        Vector z(prec.rows());
        for (Index k = 0; k < z.size(); ++k) z(k) = normal(rng);
        const Vector proposal = s.nbr.delta + scale * Matrix(llt.matrixU()).triangularView<Eigen::Upper>().solve(z);
        auto target = [&](const Vector& delta) {
            double t = position_logprior(s.positions, d.S, delta, hp.sigma2_z) -
                       position_log_normalizer(d.S, delta, hp.sigma2_z);
            for (Index k = 0; k < delta.size(); ++k) t += log_normal(delta(k), hp.sigma2_delta);
            return t;
        };
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        if (std::log(unif(rng)) < target(proposal) - target(s.nbr.delta)) {
            s.nbr.delta = proposal;
            delta_accepted = true;
        }
    }
    if (which.beta) {
        const auto [prec, rhs] = beta_system(s, d, hp);
        s.beta = draw_gaussian(prec, rhs, rng);
    }
    if (which.mu) {
        std::normal_distribution<double> normal;
        const Vector m = d.X * s.beta + s.eps;
        for (Index i = 0; i < d.size(); ++i) {
            const double prec = 1.0 / d.var_y(i) + 1.0 / s.sigma2_mu;
            const double mean = (d.y(i) / d.var_y(i) + m(i) / s.sigma2_mu) / prec;
            s.mu(i) = mean + normal(rng) / std::sqrt(prec);
        }
    }
    return delta_accepted;
}

void gibbs_update_variances(ModelState& s, const SpatialDomain& d, const Hyperparams& hp, Rng& rng) {
    s.sigma2_mu = draw_inverse_gamma(sigma2_mu_conditional(s, d, hp), rng);
    s.sigma2_eps = draw_inverse_gamma(sigma2_eps_conditional(s, hp), rng);
}

void gibbs_update_epsilon(ModelState& s, const SpatialDomain& d, Rng& rng) {
    s.eps = sample_epsilon_conditional(s.mu, d.X * s.beta, s.adjacency, s.sigma2_eps, s.sigma2_mu, rng).epsilon;
}

double reflect_unit_interval(double x) {
    x = std::fmod(x, 2.0);
    if (x < 0.0) x += 2.0;
    return x > 1.0 ? 2.0 - x : x;
}

double alpha_gamma_log_ratio(const ModelState& s, const SpatialDomain& d, const Hyperparams& hp, double alpha_new,
                             double gamma_new) {
    return alpha_gamma_log_ratio_d2(s, d, hp, latent_distances(s.positions), alpha_new, gamma_new);
}

AlphaGammaResult mh_update_alpha_gamma(ModelState& s, const SpatialDomain& d, const Hyperparams& hp, Rng& rng,
                                       const StepSizes& steps, const UpdateSwitches& which) {
    AlphaGammaResult out;
    if (!has_network(hp.variant)) return out;
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const Matrix d2 = latent_distances(s.positions);
    if (which.alpha) {
        const double proposal = s.nbr.alpha + steps.alpha * normal(rng);
        if (std::log(unif(rng)) < alpha_gamma_log_ratio_d2(s, d, hp, d2, proposal, s.nbr.gamma)) {
            s.nbr.alpha = proposal;
            out.alpha_accepted = true;
        }
    }
    if (which.gamma && samples_gamma(hp.variant)) {
        out.gamma_proposed = true;
        const double proposal = reflect_unit_interval(s.nbr.gamma + steps.gamma * normal(rng));
        if (std::log(unif(rng)) < alpha_gamma_log_ratio_d2(s, d, hp, d2, s.nbr.alpha, proposal)) {
            s.nbr.gamma = proposal;
            out.gamma_accepted = true;
        }
    }
    return out;
}

double position_move_log_ratio(const ModelState& s, const SpatialDomain& d, const Hyperparams& hp, Index i,
                               const Eigen::Vector2d& z_new) {
    const Eigen::Vector2d mean = position_mean(d.S, s.nbr.delta, i);
    const Eigen::Vector2d z_old = s.positions.row(i).transpose();
    const double prior_new = position_logprior_unit(z_new, mean, hp.sigma2_z);
    if (prior_new == kNegInf) return kNegInf;
    double ratio = prior_new - position_logprior_unit(z_old, mean, hp.sigma2_z);
    const double alpha = s.nbr.alpha, gamma = s.nbr.gamma;
    for (Index j = 0; j < d.size(); ++j) {
        if (j == i) continue;
        const Eigen::Vector2d zj = s.positions.row(j).transpose();
        const bool present = s.adjacency.has_edge(i, j);
        ratio += edge_loglik(present, edge_logit(alpha, gamma, d.d1(i, j), (z_new - zj).norm())) -
                 edge_loglik(present, edge_logit(alpha, gamma, d.d1(i, j), (z_old - zj).norm()));
    }
    return ratio;
}

AcceptanceCounter mh_update_positions(ModelState& s, const SpatialDomain& d, const Hyperparams& hp, Rng& rng,
                                      double step_size) {
    AcceptanceCounter counter;
    if (!samples_positions(hp.variant)) return counter;
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (Index i = 0; i < d.size(); ++i) {
        ++counter.proposed;
        const Eigen::Vector2d proposal(s.positions(i, 0) + step_size * normal(rng),
                                       s.positions(i, 1) + step_size * normal(rng));
        if (proposal.norm() > 1.0) continue;
        if (std::log(unif(rng)) < position_move_log_ratio(s, d, hp, i, proposal)) {
            s.positions.row(i) = proposal.transpose();
            ++counter.accepted;
        }
    }
    return counter;
}

FlipEvaluation evaluate_flip(const ModelState& s, const SpatialDomain& d, const Hyperparams& hp, Index i, Index j) {
    if (!has_network(hp.variant)) throw ConfigError("edge flips are not defined for the ICAR variant");
    if (i == j) throw InputError("flip needs two distinct units");
    FlipCache cache(s, d);
    const double d2 = (s.positions.row(i) - s.positions.row(j)).norm();
    return cache.evaluate(s, i, j, edge_logit(s.nbr.alpha, s.nbr.gamma, d.d1(i, j), d2));
}

FlipCounters mh_flip_edges(ModelState& s, const SpatialDomain& d, const Hyperparams& hp, Rng& rng, Index n_proposals) {
    if (!has_network(hp.variant)) throw ConfigError("edge flips are not defined for the ICAR variant");
    if (n_proposals < 1) throw ConfigError("n_proposals must be at least 1");
    FlipCounters counters;
    const Index n = d.size();
    s.adjacency.refresh();
    FlipCache cache(s, d);
    const Matrix d2 = latent_distances(s.positions);
    std::uniform_int_distribution<Index> first(0, n - 1), second(0, n - 2);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (Index t = 0; t < n_proposals; ++t) {
        Index i = first(rng);
        Index j = second(rng);
        if (j >= i) ++j;
        if (j < i) std::swap(i, j);
        const double logit = edge_logit(s.nbr.alpha, s.nbr.gamma, d.d1(i, j), d2(i, j));
        const FlipEvaluation e = cache.evaluate(s, i, j, logit);
        AcceptanceCounter& c = e.partition_change ? counters.partition : counters.within;
        ++c.proposed;
        if (std::log(unif(rng)) < e.log_ratio) {
            cache.accept(s, i, j, e, rng);
            ++c.accepted;
        }
    }
    return counters;
}

SweepCounters sweep(ModelState& s, const SpatialDomain& d, const Hyperparams& hp, Rng& rng, const StepSizes& steps,
                    Index n_proposals, const UpdateSwitches& which) {
    SweepCounters c;
    if (which.edges && has_network(hp.variant)) c.flips = mh_flip_edges(s, d, hp, rng, n_proposals);
    if (which.positions) c.positions = mh_update_positions(s, d, hp, rng, steps.position);
    const AlphaGammaResult ag = mh_update_alpha_gamma(s, d, hp, rng, steps, which);
    if (which.alpha && has_network(hp.variant)) {
        c.alpha.proposed = 1;
        c.alpha.accepted = ag.alpha_accepted ? 1 : 0;
    }
    if (ag.gamma_proposed) {
        c.gamma.proposed = 1;
        c.gamma.accepted = ag.gamma_accepted ? 1 : 0;
    }
    const bool delta_active = which.delta && samples_positions(hp.variant) && d.n_position_covariates() > 0;
    const bool delta_accepted = gibbs_update_location_params(s, d, hp, rng, which);
    if (delta_active) {
        c.delta.proposed = 1;
        c.delta.accepted = delta_accepted ? 1 : 0;
    }
    if (which.epsilon) gibbs_update_epsilon(s, d, rng);
    if (which.variances) gibbs_update_variances(s, d, hp, rng);
    return c;
}

Matrix position_reference(const SpatialDomain& d) {
    const Index n = d.size();
    Matrix diss(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) diss(i, j) = std::abs(d.y(i) - d.y(j));
    Matrix z = classical_mds_2d(diss);
    if (z.size() > 0) {
        z = z.rowwise() - z.colwise().mean();
        const double radius = z.rowwise().norm().maxCoeff();
        if (radius > 0.0) return z * (0.9 / radius);
    }
    Rng fallback(0x5eedULL);
    std::normal_distribution<double> normal(0.0, 0.1);
    z.resize(n, 2);
    for (Index i = 0; i < n; ++i) {
        Eigen::Vector2d w(normal(fallback), normal(fallback));
        if (w.norm() > 0.9) w *= 0.9 / w.norm();
        z.row(i) = w.transpose();
    }
    return z;
}

ModelState initial_state(const SpatialDomain& d, const Hyperparams& hp, int chain_index, Rng& rng) {
    const double offset = chain_index == 0 ? 0.0 : ((chain_index + 1) / 2) * (chain_index % 2 == 1 ? 1.0 : -1.0);
    ModelState s;
    s.nbr.alpha = -1.0 + 0.5 * offset;
    s.nbr.gamma = pinned_gamma(hp.variant, std::clamp(0.5 + 0.15 * offset, 0.05, 0.95));
    s.nbr.delta = Vector::Zero(d.n_position_covariates());
    s.nbr.sigma2_z = hp.sigma2_z;
    s.positions = position_reference(d);

    if (hp.variant == Variant::ICAR) {
        if (!d.geo_adjacency) throw ConfigError("the ICAR variant needs a geographic adjacency");
        s.adjacency = AdjacencyState(*d.geo_adjacency);
    } else if (d.geo_adjacency) {
        s.adjacency = AdjacencyState(*d.geo_adjacency);
    } else {
        const Index n = d.size();
        s.adjacency = sample_adjacency(Matrix::Constant(n, n, logistic(s.nbr.alpha)), rng);
    }

    s.beta = d.X.colPivHouseholderQr().solve(d.y);
    s.beta.array() += 0.1 * offset;
    s.mu = d.y;
    s.eps = Vector::Zero(d.size());
    s.sigma2_mu = 0.5;
    s.sigma2_eps = 0.5;
    return s;
}

std::uint64_t chain_seed(std::uint64_t master, int chain_index) {
    return derive_seed(master, static_cast<std::uint64_t>(chain_index));
}

ChainDraws run_chain(const SpatialDomain& d, const Hyperparams& hp, const ChainConfig& config,
                     const std::optional<ModelState>& init, int chain_index) {
    config.validate();
    hp.validate();
    d.validate();
    Rng rng(config.seed);
    ModelState s = init ? *init : initial_state(d, hp, chain_index, rng);
    s.nbr.gamma = pinned_gamma(hp.variant, s.nbr.gamma);
    s.nbr.sigma2_z = hp.sigma2_z;
    const double start = joint_logdensity(s, d, hp);
    if (!std::isfinite(start)) throw NumericalError("non-finite log-density at initialization");

    const Index n = d.size();
    const Index n_proposals = config.n_proposals > 0 ? config.n_proposals : n * (n - 1) / 2;
    const Index kept = (config.iterations - config.burn_in) / config.thin;
    const Matrix reference = position_reference(d);

    ChainDraws out;
    out.seed = config.seed;
    out.chain_index = chain_index;
    out.variant = hp.variant;
    out.scalar_names = scalar_names(d.n_covariates(), d.n_position_covariates());
    out.scalars.resize(kept, static_cast<Index>(out.scalar_names.size()));
    out.snapshots.reserve(static_cast<std::size_t>(kept));
    out.edge_inclusion = Matrix::Zero(n, n);
    out.aligned_position_mean = Matrix::Zero(n, 2);

    StepSizes steps = config.steps;
    double log_alpha = std::log(steps.alpha), log_gamma = std::log(steps.gamma), log_pos = std::log(steps.position);
    AcceptanceCounter flips_within, flips_partition, positions, alpha, gamma, delta;

    Index row = 0;
    for (Index t = 0; t < config.iterations; ++t) {
        const SweepCounters c = sweep(s, d, hp, rng, steps, n_proposals, config.switches);
        flips_within += c.flips.within;
        flips_partition += c.flips.partition;
        positions += c.positions;
        alpha += c.alpha;
        gamma += c.gamma;
        delta += c.delta;

        if (t < config.burn_in && config.adapt) {
            const double rate = 1.0 / std::pow(static_cast<double>(t) + 1.0, 0.6);
            if (c.alpha.proposed) log_alpha += rate * (c.alpha.rate() - config.target_acceptance);
            if (c.gamma.proposed) log_gamma += rate * (c.gamma.rate() - config.target_acceptance);
            if (c.positions.proposed) log_pos += rate * (c.positions.rate() - config.target_acceptance);
            steps.alpha = std::clamp(std::exp(log_alpha), 1e-4, 10.0);
            steps.gamma = std::clamp(std::exp(log_gamma), 1e-4, 1.0);
            steps.position = std::clamp(std::exp(log_pos), 1e-4, 1.0);
        }

        if (t < config.burn_in || (t - config.burn_in + 1) % config.thin != 0 || row >= kept) continue;

        DrawSnapshot snap;
        snap.alpha = s.nbr.alpha;
        snap.gamma = s.nbr.gamma;
        snap.delta = s.nbr.delta;
        snap.beta = s.beta;
        snap.mu = s.mu;
        snap.eps = s.eps;
        snap.component_labels = s.adjacency.component_labels();
        snap.sigma2_mu = s.sigma2_mu;
        snap.sigma2_eps = s.sigma2_eps;
        snap.n_edges = s.adjacency.edge_count();
        snap.n_components = s.adjacency.n_components();
        snap.log_posterior = joint_logdensity(s, d, hp);

        Index col = 0;
        out.scalars(row, col++) = snap.alpha;
        out.scalars(row, col++) = snap.gamma;
        for (Index k = 0; k < snap.beta.size(); ++k) out.scalars(row, col++) = snap.beta(k);
        for (Index k = 0; k < snap.delta.size(); ++k) out.scalars(row, col++) = snap.delta(k);
        out.scalars(row, col++) = snap.sigma2_mu;
        out.scalars(row, col++) = snap.sigma2_eps;
        out.scalars(row, col++) = static_cast<double>(snap.n_edges);
        out.scalars(row, col++) = static_cast<double>(snap.n_components);
        out.scalars(row, col++) = snap.log_posterior;

        out.edge_inclusion += s.adjacency.matrix().cast<double>();
        const Matrix aligned = procrustes_align(reference, s.positions);
        out.aligned_position_mean += aligned;
        if (config.store_positions) out.position_draws.push_back(s.positions);
        out.snapshots.push_back(std::move(snap));
        ++row;
    }
    if (kept > 0) {
        out.edge_inclusion /= static_cast<double>(kept);
        out.aligned_position_mean /= static_cast<double>(kept);
    }
    out.acceptance = {{"edge_within", flips_within}, {"edge_partition", flips_partition}, {"positions", positions},
                      {"alpha", alpha},              {"gamma", gamma},                     {"delta", delta}};
    out.final_steps = steps;
    out.final_state = std::move(s);
    return out;
}

std::vector<ChainDraws> run_chains(const SpatialDomain& d, const Hyperparams& hp, const ChainConfig& config,
                                   int n_chains, bool parallel) {
    if (n_chains < 1) throw ConfigError("n_chains must be at least 1");
    auto one = [&](int c) {
        ChainConfig cfg = config;
        cfg.seed = chain_seed(config.seed, c);
        return run_chain(d, hp, cfg, std::nullopt, c);
    };
    std::vector<ChainDraws> out;
    out.reserve(static_cast<std::size_t>(n_chains));
    if (!parallel || n_chains == 1) {
        for (int c = 0; c < n_chains; ++c) out.push_back(one(c));
        return out;
    }
    std::vector<std::future<ChainDraws>> jobs;
    for (int c = 0; c < n_chains; ++c) jobs.push_back(std::async(std::launch::async, one, c));
    for (auto& j : jobs) out.push_back(j.get());
    return out;
}

} // namespace nnsd
