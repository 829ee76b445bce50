#pragma once

#include <vector>

#include "nnsd/types.hpp"

namespace nnsd {

/// Centers `draw` and applies the orthogonal map (rotation or reflection) that
/// minimizes the Frobenius distance to the centered reference. A degenerate draw
/// (all rows equal) is only centered.
Matrix procrustes_align(const Matrix& reference, const Matrix& draw);

std::vector<Matrix> procrustes_align(const Matrix& reference, const std::vector<Matrix>& draws);

/// Classical multidimensional scaling of an N x N dissimilarity matrix into 2-D.
/// Returns an empty matrix when the embedding is degenerate.
Matrix classical_mds_2d(const Matrix& dissimilarity);

} // namespace nnsd
