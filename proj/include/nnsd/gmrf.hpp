#pragma once

#include <vector>

#include "nnsd/types.hpp"

namespace nnsd {

/// Entry (a, b) of a symmetric matrix kept current in its lower triangle only.
inline double lower_entry(const Matrix& m, Index a, Index b) { return a >= b ? m(a, b) : m(b, a); }

/// Column c of a symmetric matrix kept current in its lower triangle only.
inline Vector lower_column(const Matrix& m, Index c) {
    Vector out(m.rows());
    out.head(c) = m.row(c).head(c).transpose();
    out.tail(m.rows() - c) = m.col(c).tail(m.rows() - c);
    return out;
}

/// Symmetric binary adjacency with the cached quantities the intrinsic GMRF needs.
///
/// The anchored matrix M = L + sum_c (1/|c|) 1_c 1_c^T is positive definite and
/// block diagonal over connected components. Its inverse restricted to a component
/// equals L^+ + (1/|c|) 1 1^T, so u^T M^{-1} u with u = e_i - e_j is the effective
/// resistance between i and j, and log det M is the pseudo-log-determinant of L.
class AdjacencyState {
  public:
    AdjacencyState() = default;
    /// Throws InputError on a non-symmetric, non-binary or self-looped input.
    explicit AdjacencyState(const BinaryMatrix& b);

    static AdjacencyState empty(Index n) { return AdjacencyState(BinaryMatrix::Zero(n, n)); }

    Index size() const { return b_.rows(); }
    bool has_edge(Index i, Index j) const { return b_(i, j) != 0; }
    const BinaryMatrix& matrix() const { return b_; }
    const Eigen::VectorXi& degrees() const { return degrees_; }
    Index edge_count() const { return edge_count_; }
    Matrix laplacian() const;

    /// Component labels numbered 0..c-1 in order of each component's smallest member.
    const std::vector<int>& component_labels() const { return labels_; }
    int n_components() const { return static_cast<int>(members_.size()); }
    const std::vector<int>& members(int label) const { return members_[static_cast<std::size_t>(label)]; }
    int component_size_of(Index unit) const { return static_cast<int>(members_[static_cast<std::size_t>(labels_[static_cast<std::size_t>(unit)])].size()); }
    bool same_component(Index i, Index j) const { return labels_[static_cast<std::size_t>(i)] == labels_[static_cast<std::size_t>(j)]; }

    double pseudo_logdet() const { return pseudo_logdet_; }
    /// Inverse of the anchored Laplacian (block diagonal over components).
    Matrix anchored_inverse() const { return minv_.selfadjointView<Eigen::Lower>(); }
    /// u^T M^{-1} u for u = e_i - e_j (effective resistance within a component).
    double resistance(Index i, Index j) const { return minv_(i, i) + minv_(j, j) - 2.0 * lower_entry(minv_, i, j); }

    /// Sum over edges of (eps_i - eps_j)^2, i.e. eps^T (D - B) eps.
    double quadratic_form(const Vector& eps) const;

    /// Whether removing the existing edge (i, j) disconnects its component.
    bool is_bridge(Index i, Index j) const;

    /// Toggles B_ij in place, updating every cache. Within-component flips use a
    /// rank-one update; partition changes recompute the affected blocks.
    void apply_flip(Index i, Index j);
    AdjacencyState flipped(Index i, Index j) const;

    /// Rebuilds all caches from B (clears rank-one drift).
    void refresh();

  private:
    void rebuild_components();
    void rebuild_block(int label);

    BinaryMatrix b_;
    Eigen::VectorXi degrees_;
    Index edge_count_ = 0;
    std::vector<int> labels_;
    std::vector<std::vector<int>> members_;
    std::vector<double> block_logdet_; // per component
    Matrix minv_; // lower triangle authoritative
    double pseudo_logdet_ = 0.0;
};

inline AdjacencyState build_adjacency(const BinaryMatrix& b) { return AdjacencyState(b); }

/// Connected-component labels of the graph behind a Laplacian (nonzero off-diagonals).
std::vector<int> laplacian_components(const Matrix& laplacian);

/// Sum of logs of the nonzero eigenvalues of L, via a Cholesky factorization of
/// L + sum_c (1/|c|) 1_c 1_c^T. Throws NumericalError if that factorization fails.
double pseudo_logdet(const Matrix& laplacian, const std::vector<int>& labels);
double pseudo_logdet(const Matrix& laplacian);

/// Constrained random effects: per-component sums are zero, isolated units are zero.
struct RandomEffects {
    Vector epsilon;
    Vector component_sums;
};

RandomEffects make_random_effects(Vector eps, const AdjacencyState& a);

/// Largest |sum of eps over a component|, with isolated units counted on |eps_i|.
double max_constraint_violation(const Vector& eps, const std::vector<int>& labels);

inline constexpr double kConstraintTolerance = 1e-10;

/// Intrinsic GMRF log-density on the constrained subspace:
/// -((N-c)/2) log(2 pi s2) + pdet/2 - eps^T L eps / (2 s2).
/// Throws NumericalError if eps violates the per-component constraint.
double icar_logdensity(const Vector& eps, const AdjacencyState& a, double sigma2_eps);

struct FlipDelta {
    double delta_logdet = 0.0;
    bool connectivity_changed = false;
};

/// Change of the pseudo-log-determinant when B_ij is toggled. When the partition is
/// unchanged this is log(1 +/- u^T M^{-1} u); otherwise the flipped graph's value is
/// recomputed from scratch.
FlipDelta flip_logdet_ratio(const AdjacencyState& a, Index i, Index j);

/// Closed form for partition-changing flips from the matrix-tree theorem: joining
/// components of sizes ka and kb multiplies the pseudo-determinant by (ka+kb)/(ka*kb).
double merge_logdet_delta(Index size_a, Index size_b);

/// Subtracts each component's mean from its members.
Vector project_sum_to_zero(const Vector& eps, const std::vector<int>& labels);

/// Draws eps from its Gaussian full conditional given mu, X beta and the graph
/// (precision L/s2_eps + I/s2_mu), then conditions on the per-component
/// sum-to-zero constraint by kriging.
RandomEffects sample_epsilon_conditional(const Vector& mu, const Vector& xb, const AdjacencyState& a,
                                         double sigma2_eps, double sigma2_mu, Rng& rng);

/// Same draw restricted to the listed units (one or more whole components); the
/// remaining entries of eps are left untouched.
void sample_epsilon_block(Vector& eps, const std::vector<int>& units, const Vector& resid,
                          const AdjacencyState& a, double sigma2_eps, double sigma2_mu, Rng& rng);

/// Prior draw eps ~ N(0, s2_eps L^+) on the constrained subspace.
Vector sample_icar_prior(const AdjacencyState& a, double sigma2_eps, Rng& rng);

} // namespace nnsd
