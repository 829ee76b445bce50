#include "nnsd/alignment.hpp"

#include <Eigen/SVD>

namespace nnsd {

Matrix procrustes_align(const Matrix& reference, const Matrix& draw) {
    if (reference.rows() != draw.rows() || reference.cols() != draw.cols())
        throw InputError("procrustes: reference and draw shapes differ");
    const Matrix ref_c = reference.rowwise() - reference.colwise().mean();
    const Matrix x = draw.rowwise() - draw.colwise().mean();
    if (x.norm() == 0.0 || ref_c.norm() == 0.0) return x;
    // min ||x R - ref||_F over orthogonal R: R = U V^T from svd(x^T ref).
    Eigen::JacobiSVD<Matrix> svd(x.transpose() * ref_c, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Matrix rotation = svd.matrixU() * svd.matrixV().transpose();
    return x * rotation;
}

std::vector<Matrix> procrustes_align(const Matrix& reference, const std::vector<Matrix>& draws) {
    std::vector<Matrix> out;
    out.reserve(draws.size());
    for (const auto& d : draws) out.push_back(procrustes_align(reference, d));
    return out;
}

Matrix classical_mds_2d(const Matrix& dissimilarity) {
    const Index n = dissimilarity.rows();
    if (n < 3) return {};
    const Matrix sq = dissimilarity.array().square();
    const Matrix centering = Matrix::Identity(n, n) - Matrix::Constant(n, n, 1.0 / static_cast<double>(n));
    const Matrix gram = -0.5 * centering * sq * centering;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
    if (eig.info() != Eigen::Success) return {};
    const Vector values = eig.eigenvalues();
    const double top = values(n - 1);
    if (!(top > 1e-12)) return {};
    Matrix coords(n, 2);
    for (Index k = 0; k < 2; ++k) {
        const double lambda = std::max(values(n - 1 - k), 0.0);
        coords.col(k) = eig.eigenvectors().col(n - 1 - k) * std::sqrt(lambda);
    }
    return coords;
}

} // namespace nnsd
