#include "nnsd/gmrf.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace nnsd {

namespace {

std::vector<int> bfs_labels(const BinaryMatrix& b) {
    const Index n = b.rows();
    std::vector<int> labels(static_cast<std::size_t>(n), -1);
    std::vector<Index> stack;
    int next = 0;
    for (Index s = 0; s < n; ++s) {
        if (labels[static_cast<std::size_t>(s)] >= 0) continue;
        labels[static_cast<std::size_t>(s)] = next;
        stack.push_back(s);
        while (!stack.empty()) {
            const Index v = stack.back();
            stack.pop_back();
            for (Index w = 0; w < n; ++w)
                if (b(v, w) && labels[static_cast<std::size_t>(w)] < 0) {
                    labels[static_cast<std::size_t>(w)] = next;
                    stack.push_back(w);
                }
        }
        ++next;
    }
    return labels;
}

int count_labels(const std::vector<int>& labels) {
    int c = 0;
    for (int l : labels) c = std::max(c, l + 1);
    return c;
}

BinaryMatrix adjacency_from_laplacian(const Matrix& laplacian) {
    const Index n = laplacian.rows();
    BinaryMatrix b = BinaryMatrix::Zero(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j)
            if (i != j && laplacian(i, j) != 0.0) b(i, j) = 1;
    return b;
}

// Dense Laplacian of the subgraph induced by `units`.
Matrix sub_laplacian(const BinaryMatrix& b, const std::vector<int>& units) {
    const auto k = static_cast<Index>(units.size());
    Matrix l = Matrix::Zero(k, k);
    for (Index a = 0; a < k; ++a)
        for (Index c = a + 1; c < k; ++c)
            if (b(units[static_cast<std::size_t>(a)], units[static_cast<std::size_t>(c)])) {
                l(a, c) = l(c, a) = -1.0;
                l(a, a) += 1.0;
                l(c, c) += 1.0;
            }
    return l;
}

} // namespace

AdjacencyState::AdjacencyState(const BinaryMatrix& b) : b_(b) {
    const Index n = b.rows();
    if (b.cols() != n) throw InputError("adjacency must be square");
    for (Index i = 0; i < n; ++i) {
        if (b(i, i) != 0) throw InputError("adjacency must have a zero diagonal");
        for (Index j = 0; j < n; ++j) {
            if (b(i, j) > 1) throw InputError("adjacency must be binary");
            if (b(i, j) != b(j, i)) throw InputError("adjacency must be symmetric");
        }
    }
    refresh();
}

void AdjacencyState::refresh() {
    const Index n = b_.rows();
    degrees_ = b_.cast<int>().rowwise().sum();
    edge_count_ = degrees_.sum() / 2;
    minv_ = Matrix::Zero(n, n);
    rebuild_components();
    block_logdet_.assign(members_.size(), 0.0);
    pseudo_logdet_ = 0.0;
    for (int c = 0; c < n_components(); ++c) {
        rebuild_block(c);
        pseudo_logdet_ += block_logdet_[static_cast<std::size_t>(c)];
    }
}

void AdjacencyState::rebuild_components() {
    labels_ = bfs_labels(b_);
    members_.assign(static_cast<std::size_t>(count_labels(labels_)), {});
    for (std::size_t v = 0; v < labels_.size(); ++v) members_[static_cast<std::size_t>(labels_[v])].push_back(static_cast<int>(v));
}

void AdjacencyState::rebuild_block(int label) {
    const auto& m = members_[static_cast<std::size_t>(label)];
    const auto k = static_cast<Index>(m.size());
    if (k == 1) {
        minv_(m[0], m[0]) = 1.0;
        block_logdet_[static_cast<std::size_t>(label)] = 0.0;
        return;
    }
    Matrix anchored = sub_laplacian(b_, m);
    anchored.array() += 1.0 / static_cast<double>(k);
    Eigen::LLT<Matrix> llt(anchored);
    if (llt.info() != Eigen::Success) throw NumericalError("anchored Laplacian is not positive definite");
    const Matrix inv = llt.solve(Matrix::Identity(k, k));
    for (Index a = 0; a < k; ++a)
        for (Index c = 0; c < k; ++c) minv_(m[static_cast<std::size_t>(a)], m[static_cast<std::size_t>(c)]) = inv(a, c);
    block_logdet_[static_cast<std::size_t>(label)] = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
}

Matrix AdjacencyState::laplacian() const {
    Matrix l = -b_.cast<double>();
    l.diagonal() = degrees_.cast<double>();
    return l;
}

double AdjacencyState::quadratic_form(const Vector& eps) const {
    double q = 0.0;
    const Index n = size();
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j)
            if (b_(i, j)) {
                const double d = eps(i) - eps(j);
                q += d * d;
            }
    return q;
}

bool AdjacencyState::is_bridge(Index i, Index j) const {
    if (!has_edge(i, j)) return false;
    // Non-bridge edges have effective resistance at most (N-1)/N.
    if (1.0 - resistance(i, j) > 1e-6) return false;
    const Index n = size();
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    std::vector<Index> stack{i};
    seen[static_cast<std::size_t>(i)] = 1;
    while (!stack.empty()) {
        const Index v = stack.back();
        stack.pop_back();
        for (Index w = 0; w < n; ++w) {
            if (!b_(v, w) || seen[static_cast<std::size_t>(w)]) continue;
            if ((v == i && w == j) || (v == j && w == i)) continue;
            if (w == j) return false;
            seen[static_cast<std::size_t>(w)] = 1;
            stack.push_back(w);
        }
    }
    return true;
}

void AdjacencyState::apply_flip(Index i, Index j) {
    if (i == j) throw InputError("cannot flip a self pair");
    const bool adding = !has_edge(i, j);
    const bool partition_change = adding ? !same_component(i, j) : is_bridge(i, j);

    if (!partition_change) {
        const int label = labels_[static_cast<std::size_t>(i)];
        const auto& m = members_[static_cast<std::size_t>(label)];
        const double sign = adding ? 1.0 : -1.0;
        const double r = resistance(i, j);
        const double denom = 1.0 + sign * r;
        b_(i, j) = b_(j, i) = adding ? 1 : 0;
        degrees_(i) += adding ? 1 : -1;
        degrees_(j) += adding ? 1 : -1;
        edge_count_ += adding ? 1 : -1;
        if (denom < 1e-3) {
            // Near-bridge removal: the rank-one update would amplify rounding error.
            const double old = block_logdet_[static_cast<std::size_t>(label)];
            rebuild_block(label);
            pseudo_logdet_ += block_logdet_[static_cast<std::size_t>(label)] - old;
            return;
        }
        const auto k = static_cast<Index>(m.size());
        if (2 * k >= size()) {
            // minv_ is zero off the component blocks, so the dense update touches only this block.
            const Vector w = lower_column(minv_, i) - lower_column(minv_, j);
            minv_.selfadjointView<Eigen::Lower>().rankUpdate(w, -sign / denom);
        } else {
            Vector w(k);
            for (Index a = 0; a < k; ++a) {
                const int v = m[static_cast<std::size_t>(a)];
                w(a) = lower_entry(minv_, v, i) - lower_entry(minv_, v, j);
            }
            for (Index a = 0; a < k; ++a)
                for (Index c = 0; c < k; ++c)
                    minv_(m[static_cast<std::size_t>(a)], m[static_cast<std::size_t>(c)]) -= sign * w(a) * w(c) / denom;
        }
        const double delta = std::log(denom);
        block_logdet_[static_cast<std::size_t>(label)] += delta;
        pseudo_logdet_ += delta;
        return;
    }

    // Partition change: drop the old blocks touching i and j, relabel, rebuild them.
    std::vector<int> affected = members_[static_cast<std::size_t>(labels_[static_cast<std::size_t>(i)])];
    if (!same_component(i, j)) {
        const auto& other = members_[static_cast<std::size_t>(labels_[static_cast<std::size_t>(j)])];
        affected.insert(affected.end(), other.begin(), other.end());
    }
    std::vector<double> vertex_logdet(labels_.size());
    for (std::size_t v = 0; v < labels_.size(); ++v) vertex_logdet[v] = block_logdet_[static_cast<std::size_t>(labels_[v])];
    std::vector<char> touched(labels_.size(), 0);
    for (int v : affected) {
        touched[static_cast<std::size_t>(v)] = 1;
        for (int w : affected) minv_(v, w) = 0.0;
    }

    b_(i, j) = b_(j, i) = adding ? 1 : 0;
    degrees_(i) += adding ? 1 : -1;
    degrees_(j) += adding ? 1 : -1;
    edge_count_ += adding ? 1 : -1;
    rebuild_components();
    block_logdet_.assign(members_.size(), 0.0);
    pseudo_logdet_ = 0.0;
    for (int c = 0; c < n_components(); ++c) {
        const int first = members_[static_cast<std::size_t>(c)].front();
        if (touched[static_cast<std::size_t>(first)])
            rebuild_block(c);
        else
            block_logdet_[static_cast<std::size_t>(c)] = vertex_logdet[static_cast<std::size_t>(first)];
        pseudo_logdet_ += block_logdet_[static_cast<std::size_t>(c)];
    }
}

AdjacencyState AdjacencyState::flipped(Index i, Index j) const {
    AdjacencyState copy = *this;
    copy.apply_flip(i, j);
    return copy;
}

std::vector<int> laplacian_components(const Matrix& laplacian) { return bfs_labels(adjacency_from_laplacian(laplacian)); }

double pseudo_logdet(const Matrix& laplacian, const std::vector<int>& labels) {
    const Index n = laplacian.rows();
    const int c = count_labels(labels);
    std::vector<double> sizes(static_cast<std::size_t>(c), 0.0);
    for (int l : labels) sizes[static_cast<std::size_t>(l)] += 1.0;
    Matrix anchored = laplacian;
    for (Index a = 0; a < n; ++a)
        for (Index b = 0; b < n; ++b)
            if (labels[static_cast<std::size_t>(a)] == labels[static_cast<std::size_t>(b)])
                anchored(a, b) += 1.0 / sizes[static_cast<std::size_t>(labels[static_cast<std::size_t>(a)])];
    Eigen::LLT<Matrix> llt(anchored);
    if (llt.info() != Eigen::Success) throw NumericalError("pseudo_logdet: anchored Laplacian factorization failed");
    return 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
}

double pseudo_logdet(const Matrix& laplacian) { return pseudo_logdet(laplacian, laplacian_components(laplacian)); }

double max_constraint_violation(const Vector& eps, const std::vector<int>& labels) {
    std::vector<double> sums(static_cast<std::size_t>(count_labels(labels)), 0.0);
    for (std::size_t v = 0; v < labels.size(); ++v) sums[static_cast<std::size_t>(labels[v])] += eps(static_cast<Index>(v));
    double worst = 0.0;
    for (double s : sums) worst = std::max(worst, std::abs(s));
    return worst;
}

RandomEffects make_random_effects(Vector eps, const AdjacencyState& a) {
    RandomEffects out;
    out.component_sums = Vector::Zero(a.n_components());
    const auto& labels = a.component_labels();
    for (std::size_t v = 0; v < labels.size(); ++v) out.component_sums(labels[v]) += eps(static_cast<Index>(v));
    out.epsilon = std::move(eps);
    return out;
}

double icar_logdensity(const Vector& eps, const AdjacencyState& a, double sigma2_eps) {
    if (!(sigma2_eps > 0.0)) throw InputError("sigma2_eps must be positive");
    const double scale = std::max(1.0, eps.size() > 0 ? eps.cwiseAbs().maxCoeff() : 0.0);
    if (max_constraint_violation(eps, a.component_labels()) > kConstraintTolerance * scale)
        throw NumericalError("random effects violate the per-component sum-to-zero constraint");
    const double rank = static_cast<double>(a.size() - a.n_components());
    return -0.5 * rank * (kLog2Pi + std::log(sigma2_eps)) + 0.5 * a.pseudo_logdet() -
           a.quadratic_form(eps) / (2.0 * sigma2_eps);
}

double merge_logdet_delta(Index size_a, Index size_b) {
    const auto ka = static_cast<double>(size_a);
    const auto kb = static_cast<double>(size_b);
    return std::log(ka + kb) - std::log(ka) - std::log(kb);
}

FlipDelta flip_logdet_ratio(const AdjacencyState& a, Index i, Index j) {
    if (i == j) throw InputError("flip needs two distinct units");
    const bool adding = !a.has_edge(i, j);
    const bool partition_change = adding ? !a.same_component(i, j) : a.is_bridge(i, j);
    if (!partition_change) {
        const double r = a.resistance(i, j);
        return {std::log(adding ? 1.0 + r : 1.0 - r), false};
    }
    BinaryMatrix b = a.matrix();
    b(i, j) = b(j, i) = adding ? 1 : 0;
    Matrix l = -b.cast<double>();
    l.diagonal() = b.cast<double>().rowwise().sum();
    return {pseudo_logdet(l) - a.pseudo_logdet(), true};
}

Vector project_sum_to_zero(const Vector& eps, const std::vector<int>& labels) {
    const int c = count_labels(labels);
    Vector sums = Vector::Zero(c), counts = Vector::Zero(c);
    for (std::size_t v = 0; v < labels.size(); ++v) {
        sums(labels[v]) += eps(static_cast<Index>(v));
        counts(labels[v]) += 1.0;
    }
    Vector out = eps;
    for (std::size_t v = 0; v < labels.size(); ++v) {
        const int l = labels[v];
        out(static_cast<Index>(v)) = counts(l) == 1.0 ? 0.0 : eps(static_cast<Index>(v)) - sums(l) / counts(l);
    }
    return out;
}

void sample_epsilon_block(Vector& eps, const std::vector<int>& units, const Vector& resid, const AdjacencyState& a,
                          double sigma2_eps, double sigma2_mu, Rng& rng) {
    const auto k = static_cast<Index>(units.size());
    if (k == 0) return;
    const auto& labels = a.component_labels();

    // Constraint rows: one per component present in the block.
    std::vector<int> comp_of(static_cast<std::size_t>(k));
    std::vector<int> comps;
    for (Index u = 0; u < k; ++u) {
        const int l = labels[static_cast<std::size_t>(units[static_cast<std::size_t>(u)])];
        auto it = std::find(comps.begin(), comps.end(), l);
        if (it == comps.end()) {
            comps.push_back(l);
            it = comps.end() - 1;
        }
        comp_of[static_cast<std::size_t>(u)] = static_cast<int>(it - comps.begin());
    }

    Matrix q = sub_laplacian(a.matrix(), units) / sigma2_eps;
    q.diagonal().array() += 1.0 / sigma2_mu;
    Vector rhs(k);
    for (Index u = 0; u < k; ++u) rhs(u) = resid(units[static_cast<std::size_t>(u)]) / sigma2_mu;

    Eigen::LLT<Matrix> llt(q);
    if (llt.info() != Eigen::Success) throw NumericalError("epsilon full-conditional precision is not positive definite");
    std::normal_distribution<double> normal;
    Vector z(k);
    for (Index u = 0; u < k; ++u) z(u) = normal(rng);
    Vector x = llt.solve(rhs) + Matrix(llt.matrixU()).triangularView<Eigen::Upper>().solve(z);

    const auto nc = static_cast<Index>(comps.size());
    Matrix ct = Matrix::Zero(k, nc);
    for (Index u = 0; u < k; ++u) ct(u, comp_of[static_cast<std::size_t>(u)]) = 1.0;
    const Matrix w = llt.solve(ct);
    const Matrix cw = ct.transpose() * w;
    Eigen::LLT<Matrix> cllt(cw);
    if (cllt.info() != Eigen::Success) throw NumericalError("constraint system is singular");
    x -= w * cllt.solve(ct.transpose() * x);

    // Rounding cleanup: exact per-component centering.
    Vector sums = Vector::Zero(nc), counts = Vector::Zero(nc);
    for (Index u = 0; u < k; ++u) {
        sums(comp_of[static_cast<std::size_t>(u)]) += x(u);
        counts(comp_of[static_cast<std::size_t>(u)]) += 1.0;
    }
    for (Index u = 0; u < k; ++u) {
        const int c = comp_of[static_cast<std::size_t>(u)];
        const double v = counts(c) == 1.0 ? 0.0 : x(u) - sums(c) / counts(c);
        eps(units[static_cast<std::size_t>(u)]) = v;
    }
}

RandomEffects sample_epsilon_conditional(const Vector& mu, const Vector& xb, const AdjacencyState& a,
                                         double sigma2_eps, double sigma2_mu, Rng& rng) {
    if (!(sigma2_eps > 0.0) || !(sigma2_mu > 0.0)) throw InputError("variances must be positive");
    Vector eps = Vector::Zero(a.size());
    std::vector<int> all(static_cast<std::size_t>(a.size()));
    for (std::size_t v = 0; v < all.size(); ++v) all[v] = static_cast<int>(v);
    sample_epsilon_block(eps, all, mu - xb, a, sigma2_eps, sigma2_mu, rng);
    return make_random_effects(std::move(eps), a);
}

Vector sample_icar_prior(const AdjacencyState& a, double sigma2_eps, Rng& rng) {
    Vector eps = Vector::Zero(a.size());
    std::normal_distribution<double> normal;
    const double sd = std::sqrt(sigma2_eps);
    for (int c = 0; c < a.n_components(); ++c) {
        const auto& m = a.members(c);
        const auto k = static_cast<Index>(m.size());
        if (k == 1) continue;
        Matrix anchored = sub_laplacian(a.matrix(), m);
        anchored.array() += 1.0 / static_cast<double>(k);
        Eigen::LLT<Matrix> llt(anchored);
        if (llt.info() != Eigen::Success) throw NumericalError("anchored Laplacian is not positive definite");
        Vector z(k);
        for (Index u = 0; u < k; ++u) z(u) = normal(rng);
        Vector x = Matrix(llt.matrixU()).triangularView<Eigen::Upper>().solve(z);
        x.array() -= x.mean();
        for (Index u = 0; u < k; ++u) eps(m[static_cast<std::size_t>(u)]) = sd * x(u);
    }
    return eps;
}

} // namespace nnsd
