#include "nnsd/diagnostics.hpp"

#include <algorithm>
#include <cmath>

namespace nnsd {

namespace {

Index default_batch(Index n) { return std::max<Index>(1, static_cast<Index>(std::floor(std::sqrt(static_cast<double>(n))))); }

// Batch-means covariance with batches of size b, centered at `center`.
Matrix batch_means_cov(const Matrix& chain, const Vector& center, Index b) {
    const Index n = chain.rows(), p = chain.cols();
    const Index a = n / b;
    if (a < 2) throw InputError("batch means need at least two batches (n=" + std::to_string(n) +
                                ", batch size=" + std::to_string(b) + ")");
    Matrix out = Matrix::Zero(p, p);
    for (Index k = 0; k < a; ++k) {
        const Vector d = chain.middleRows(k * b, b).colwise().mean().transpose() - center;
        out.noalias() += d * d.transpose();
    }
    return out * (static_cast<double>(b) / static_cast<double>(a - 1));
}

void check_shapes(const std::vector<Matrix>& chains) {
    if (chains.empty()) throw InputError("no chains");
    for (const auto& c : chains)
        if (c.rows() != chains.front().rows() || c.cols() != chains.front().cols())
            throw InputError("chains differ in length or dimension");
    if (chains.front().rows() < 4) throw InputError("chains are too short for diagnostics");
}

} // namespace

Matrix lugsail_batch_cov(const Matrix& chain, const Vector& center, Index batch_size) {
    const Index b = batch_size > 0 ? batch_size : default_batch(chain.rows());
    if (chain.rows() < 2 * b)
        throw InputError("lugsail estimator needs n >= 2 b (n=" + std::to_string(chain.rows()) +
                         ", b=" + std::to_string(b) + ")");
    const Index small = std::max<Index>(1, b / 3);
    Matrix out = 2.0 * batch_means_cov(chain, center, b) - batch_means_cov(chain, center, small);
    return 0.5 * (out + out.transpose());
}

Matrix lugsail_batch_cov(const Matrix& chain, Index batch_size) {
    return lugsail_batch_cov(chain, chain.colwise().mean().transpose(), batch_size);
}

Matrix pooled_within_cov(const std::vector<Matrix>& chains) {
    check_shapes(chains);
    const Index p = chains.front().cols();
    Matrix s = Matrix::Zero(p, p);
    for (const auto& c : chains) {
        const Matrix centered = c.rowwise() - c.colwise().mean();
        s.noalias() += centered.transpose() * centered / static_cast<double>(c.rows() - 1);
    }
    return s / static_cast<double>(chains.size());
}

Matrix pooled_lugsail_cov(const std::vector<Matrix>& chains, Index batch_size) {
    check_shapes(chains);
    Vector center = Vector::Zero(chains.front().cols());
    for (const auto& c : chains) center += c.colwise().mean().transpose();
    center /= static_cast<double>(chains.size());
    Matrix t = Matrix::Zero(center.size(), center.size());
    for (const auto& c : chains) t += lugsail_batch_cov(c, center, batch_size);
    return t / static_cast<double>(chains.size());
}

double mpsrf(const std::vector<Matrix>& chains, Index batch_size) {
    check_shapes(chains);
    const Index n = chains.front().rows(), p = chains.front().cols();
    if (p == 0) throw InputError("no columns to diagnose");
    const Matrix s = pooled_within_cov(chains);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(s);
    const double top = eig.eigenvalues().maxCoeff();
    if (!(eig.eigenvalues().minCoeff() > 1e-12 * std::max(top, 1e-300))) {
        Index coord = 0;
        eig.eigenvectors().col(0).cwiseAbs().maxCoeff(&coord);
        throw NumericalError("singular within-chain covariance (degenerate coordinate " + std::to_string(coord) + ")");
    }
    const Matrix t = pooled_lugsail_cov(chains, batch_size);
    // det(T)/det(S) as det(L^{-1} T L^{-T}) with S = L L^T.
    Eigen::LLT<Matrix> llt(s);
    const Matrix lower = llt.matrixL();
    const Matrix whitened = lower.triangularView<Eigen::Lower>().solve(
        lower.triangularView<Eigen::Lower>().solve(t).transpose());
    const double det = whitened.determinant();
    // The lugsail estimate is not guaranteed positive definite; a nonpositive
    // determinant is treated as zero long-run variance.
    const double ratio = det > 0.0 ? std::pow(det, 1.0 / static_cast<double>(p)) : 0.0;
    const double nn = static_cast<double>(n);
    return std::sqrt((nn - 1.0) / nn + ratio / nn);
}

DiagnosticsReport diagnose(const std::vector<Matrix>& chains, const std::vector<std::string>& names,
                           double threshold) {
    check_shapes(chains);
    if (static_cast<Index>(names.size()) != chains.front().cols()) throw InputError("column names do not match chains");
    DiagnosticsReport r;
    r.threshold = threshold;
    r.n = chains.front().rows();
    r.m = static_cast<Index>(chains.size());

    std::vector<Index> keep;
    for (Index j = 0; j < chains.front().cols(); ++j) {
        const double first = chains.front()(0, j);
        bool constant = true;
        for (const auto& c : chains) constant = constant && (c.col(j).array() == first).all();
        if (constant)
            r.dropped.push_back(names[static_cast<std::size_t>(j)]);
        else
            keep.push_back(j);
    }
    std::vector<Matrix> kept;
    for (const auto& c : chains) {
        Matrix k(c.rows(), static_cast<Index>(keep.size()));
        for (std::size_t j = 0; j < keep.size(); ++j) k.col(static_cast<Index>(j)) = c.col(keep[j]);
        kept.push_back(std::move(k));
    }
    for (Index j : keep) r.names.push_back(names[static_cast<std::size_t>(j)]);
    if (keep.empty()) {
        r.mpsrf = 1.0;
        r.pass = true;
        return r;
    }

    const Matrix s = pooled_within_cov(kept);
    const Matrix t = pooled_lugsail_cov(kept);
    const double nn = static_cast<double>(r.n);
    const auto p = static_cast<Index>(keep.size());
    r.psrf.resize(p);
    r.ess.resize(p);
    for (Index j = 0; j < p; ++j) {
        const double tj = std::max(t(j, j), 0.0);
        r.psrf(j) = std::sqrt((nn - 1.0) / nn + tj / s(j, j) / nn);
        r.ess(j) = tj > 0.0 ? static_cast<double>(r.m) * nn * s(j, j) / tj : static_cast<double>(r.m) * nn;
    }
    r.mpsrf = mpsrf(kept);
    r.pass = r.mpsrf < threshold;
    return r;
}

DiagnosticsReport diagnose(const std::vector<ChainDraws>& chains, double threshold) {
    if (chains.empty()) throw InputError("no chains");
    std::vector<Matrix> m;
    for (const auto& c : chains) m.push_back(c.scalars);
    return diagnose(m, chains.front().scalar_names, threshold);
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw InputError("quantile of empty draws");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

SummaryRow summarize(const std::string& name, const std::vector<double>& draws) {
    if (draws.empty()) throw InputError("no draws for '" + name + "'");
    SummaryRow row;
    row.parameter = name;
    double sum = 0.0;
    for (double v : draws) sum += v;
    row.mean = sum / static_cast<double>(draws.size());
    double ss = 0.0;
    for (double v : draws) ss += (v - row.mean) * (v - row.mean);
    row.sd = draws.size() > 1 ? std::sqrt(ss / static_cast<double>(draws.size() - 1)) : 0.0;
    std::vector<double> sorted = draws;
    std::sort(sorted.begin(), sorted.end());
    row.median = quantile_sorted(sorted, 0.5);
    row.q025 = quantile_sorted(sorted, 0.025);
    row.q975 = quantile_sorted(sorted, 0.975);
    return row;
}

PosteriorSummary posterior_summary(const std::vector<ChainDraws>& chains, const std::vector<std::string>& unit_ids,
                                   const DiagnosticsReport* report) {
    if (chains.empty()) throw InputError("no chains");
    Index total = 0;
    for (const auto& c : chains) {
        if (c.scalar_names != chains.front().scalar_names) throw InputError("chains disagree on parameters");
        total += c.n_draws();
    }
    if (total == 0) throw InputError("no retained draws");

    PosteriorSummary out;
    const auto& names = chains.front().scalar_names;
    for (std::size_t j = 0; j < names.size(); ++j) {
        std::vector<double> pooled;
        pooled.reserve(static_cast<std::size_t>(total));
        for (const auto& c : chains)
            for (Index t = 0; t < c.n_draws(); ++t) pooled.push_back(c.scalars(t, static_cast<Index>(j)));
        SummaryRow row = summarize(names[j], pooled);
        if (report)
            for (std::size_t k = 0; k < report->names.size(); ++k)
                if (report->names[k] == names[j]) row.psrf = report->psrf(static_cast<Index>(k));
        out.scalars.push_back(row);
    }

    const Index n_units = chains.front().snapshots.empty() ? 0 : chains.front().snapshots.front().mu.size();
    if (!unit_ids.empty() && static_cast<Index>(unit_ids.size()) != n_units) throw InputError("unit id count mismatch");
    for (Index i = 0; i < n_units; ++i) {
        std::vector<double> pooled;
        pooled.reserve(static_cast<std::size_t>(total));
        for (const auto& c : chains)
            for (const auto& s : c.snapshots) pooled.push_back(s.mu(i));
        const std::string id = unit_ids.empty() ? std::to_string(i) : unit_ids[static_cast<std::size_t>(i)];
        SummaryRow row = summarize("mu_" + id, pooled);
        if (chains.size() > 1 && pooled.size() >= 8 * chains.size()) {
            std::vector<Matrix> cols;
            for (const auto& c : chains) {
                Matrix col(static_cast<Index>(c.snapshots.size()), 1);
                for (std::size_t t = 0; t < c.snapshots.size(); ++t) col(static_cast<Index>(t), 0) = c.snapshots[t].mu(i);
                cols.push_back(std::move(col));
            }
            bool equal = true;
            for (const auto& c : cols) equal = equal && c.rows() == cols.front().rows();
            if (equal) {
                const DiagnosticsReport r = diagnose(cols, {row.parameter});
                if (r.psrf.size() == 1) row.psrf = r.psrf(0);
            }
        }
        out.units.push_back(row);
        out.scalars.push_back(row);
    }

    const Index n = chains.front().edge_inclusion.rows();
    out.edge_inclusion = Matrix::Zero(n, n);
    out.position_mean = Matrix::Zero(n, 2);
    for (const auto& c : chains) {
        const double w = static_cast<double>(c.n_draws()) / static_cast<double>(total);
        out.edge_inclusion += w * c.edge_inclusion;
        out.position_mean += w * c.aligned_position_mean;
    }
    return out;
}

} // namespace nnsd
