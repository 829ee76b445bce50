#include "nnsd/domain.hpp"

#include <cmath>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include "nnsd/csv.hpp"

namespace nnsd {

std::string to_string(Variant v) {
    switch (v) {
    case Variant::NNSD: return "nnsd";
    case Variant::NN: return "nn";
    case Variant::SD: return "sd";
    case Variant::ICAR: return "icar";
    }
    return "?";
}

Variant parse_variant(const std::string& name) {
    std::string s;
    for (char c : name) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (s == "nnsd") return Variant::NNSD;
    if (s == "nn") return Variant::NN;
    if (s == "sd") return Variant::SD;
    if (s == "icar") return Variant::ICAR;
    throw ConfigError("unknown variant '" + name + "' (expected nnsd, nn, sd or icar)");
}

Matrix normalize_to_unit_disk(const Matrix& raw) {
    if (raw.cols() != 2) throw InputError("centroids must have two columns");
    if (raw.rows() < 1) throw InputError("no centroids");
    if (!raw.allFinite()) throw InputError("non-finite centroid coordinate");
    const Eigen::RowVector2d mean = raw.colwise().mean();
    Matrix centered = raw.rowwise() - mean;
    const double radius = centered.rowwise().norm().maxCoeff();
    if (radius == 0.0) return Matrix::Zero(raw.rows(), 2);
    return centered / radius;
}

Matrix pairwise_distances(const Matrix& points) {
    if (!points.allFinite()) throw InputError("non-finite coordinate");
    const Index n = points.rows();
    Matrix d = Matrix::Zero(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j) {
            const double v = (points.row(i) - points.row(j)).norm();
            d(i, j) = v;
            d(j, i) = v;
        }
    return d;
}

double delta_method_log_variance(double estimate, double se) {
    if (!(estimate > 0.0)) throw InputError("delta method needs a positive estimate");
    if (!(se > 0.0)) throw InputError("delta method needs a positive standard error");
    const double cv = se / estimate;
    return cv * cv;
}

void SpatialDomain::validate() const {
    const Index n = size();
    if (n < 3) throw InputError("need at least 3 units, found " + std::to_string(n));
    if (static_cast<Index>(unit_ids.size()) != n) throw InputError("unit id count does not match response length");
    if (centroids.rows() != n || centroids.cols() != 2) throw InputError("centroids must be N x 2");
    if (d1.rows() != n || d1.cols() != n) throw InputError("d1 must be N x N");
    for (Index i = 0; i < n; ++i) {
        if (d1(i, i) != 0.0) throw InputError("d1 diagonal must be zero");
        for (Index j = 0; j < n; ++j) {
            if (d1(i, j) != d1(j, i)) throw InputError("d1 must be symmetric");
            if (!(d1(i, j) >= 0.0 && d1(i, j) <= 2.0 + 1e-12))
                throw InputError("d1 entries must lie in [0, 2]");
        }
    }
    if (var_y.size() != n) throw InputError("var_y length does not match N");
    for (Index i = 0; i < n; ++i)
        if (!(var_y(i) > 0.0) || !std::isfinite(var_y(i)))
            throw InputError("non-positive sampling variance for unit '" + unit_ids[static_cast<std::size_t>(i)] + "'");
    if (!y.allFinite()) throw InputError("non-finite response");
    if (X.rows() != n || X.cols() < 1) throw InputError("X must be N x p with p >= 1");
    if (!X.allFinite()) throw InputError("non-finite covariate");
    Eigen::ColPivHouseholderQR<Matrix> qr(X);
    if (qr.rank() < X.cols()) throw InputError("covariate matrix X is not of full column rank");
    if (!S.empty()) {
        if (static_cast<Index>(S.size()) != n) throw InputError("position covariates must cover every unit");
        for (const auto& s : S)
            if (s.rows() != 2 || s.cols() != S.front().cols()) throw InputError("each S_i must be 2 x k");
    }
    if (geo_adjacency) {
        const auto& b = *geo_adjacency;
        if (b.rows() != n || b.cols() != n) throw InputError("geo adjacency must be N x N");
        for (Index i = 0; i < n; ++i) {
            if (b(i, i) != 0) throw InputError("geo adjacency must have zero diagonal");
            for (Index j = 0; j < n; ++j)
                if (b(i, j) != b(j, i) || b(i, j) > 1) throw InputError("geo adjacency must be symmetric binary");
        }
    }
}

SpatialDomain make_domain(std::vector<std::string> unit_ids, const Matrix& raw_centroids, const Vector& y,
                          const Vector& var_y, const Matrix& covariates, const Matrix& position_covariates,
                          std::optional<BinaryMatrix> geo_adjacency) {
    const Index n = y.size();
    std::unordered_set<std::string> seen;
    for (const auto& id : unit_ids)
        if (!seen.insert(id).second) throw InputError("duplicate unit id '" + id + "'");
    if (n < 3) throw InputError("need at least 3 units, found " + std::to_string(n));
    if (raw_centroids.rows() != n) throw InputError("centroid count does not match response length");

    SpatialDomain d;
    d.unit_ids = std::move(unit_ids);
    d.centroids = normalize_to_unit_disk(raw_centroids);
    d.d1 = pairwise_distances(d.centroids);
    d.y = y;
    if (var_y.size() == 1)
        d.var_y = Vector::Constant(n, var_y(0));
    else
        d.var_y = var_y;
    d.X.resize(n, 1 + covariates.cols());
    d.X.col(0).setOnes();
    if (covariates.cols() > 0) {
        if (covariates.rows() != n) throw InputError("covariate rows do not match N");
        d.X.rightCols(covariates.cols()) = covariates;
    }
    if (position_covariates.cols() > 0) {
        if (position_covariates.rows() != n) throw InputError("position covariate rows do not match N");
        const Index m = position_covariates.cols();
        d.S.assign(static_cast<std::size_t>(n), Matrix::Zero(2, 2 * m));
        for (Index i = 0; i < n; ++i)
            for (Index c = 0; c < m; ++c)
                d.S[static_cast<std::size_t>(i)].block(0, 2 * c, 2, 2) =
                    position_covariates(i, c) * Eigen::Matrix2d::Identity();
    }
    d.geo_adjacency = std::move(geo_adjacency);
    d.validate();
    return d;
}

BinaryMatrix read_edge_list(const std::string& path, const std::vector<std::string>& unit_ids) {
    std::unordered_map<std::string, Index> index;
    for (std::size_t i = 0; i < unit_ids.size(); ++i) index.emplace(unit_ids[i], static_cast<Index>(i));
    const Index n = static_cast<Index>(unit_ids.size());
    BinaryMatrix b = BinaryMatrix::Zero(n, n);

    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path + "'");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto fields = split_line(line, ',');
        if (fields.size() == 1 && fields[0].empty()) continue;
        if (fields.size() != 2)
            throw InputError(path + ":" + std::to_string(line_no) + ": expected 'id_i,id_j'");
        const auto a = index.find(fields[0]);
        const auto c = index.find(fields[1]);
        if (a == index.end() || c == index.end()) {
            // A header line naming two columns is tolerated on the first line only.
            if (line_no == 1) continue;
            throw InputError("edge references unknown id '" + (a == index.end() ? fields[0] : fields[1]) + "'");
        }
        if (a->second == c->second) throw InputError("self edge on '" + fields[0] + "'");
        b(a->second, c->second) = 1;
        b(c->second, a->second) = 1;
    }
    return b;
}

SpatialDomain load_domain(const std::string& units_file, const std::optional<std::string>& adjacency_file,
                          const ColumnSpec& columns) {
    const Table t = read_table(units_file, columns.delimiter);
    const int c_id = t.require(columns.id);
    const int c_x = t.require(columns.centroid_x);
    const int c_y = t.require(columns.centroid_y);
    const int c_resp = t.require(columns.response);
    const int c_se = t.require(columns.response_se);
    std::vector<int> c_cov, c_pos;
    for (const auto& name : columns.covariates) c_cov.push_back(t.require(name));
    for (const auto& name : columns.position_covariates) c_pos.push_back(t.require(name));
    if (columns.response_transform != "log" && columns.response_transform != "identity")
        throw ConfigError("response_transform must be 'log' or 'identity'");
    const bool log_scale = columns.response_transform == "log";

    const Index n = static_cast<Index>(t.rows.size());
    std::vector<std::string> ids;
    Matrix centroids(n, 2);
    Vector y(n), var_y(n);
    Matrix cov(n, static_cast<Index>(c_cov.size()));
    Matrix pos(n, static_cast<Index>(c_pos.size()));
    for (Index r = 0; r < n; ++r) {
        const auto& row = t.rows[static_cast<std::size_t>(r)];
        const std::string& id = row[static_cast<std::size_t>(c_id)];
        ids.push_back(id);
        auto num = [&](int c) {
            return parse_real(row[static_cast<std::size_t>(c)], "unit '" + id + "', column '" +
                                                                      t.header[static_cast<std::size_t>(c)] + "'");
        };
        centroids(r, 0) = num(c_x);
        centroids(r, 1) = num(c_y);
        const double est = num(c_resp);
        const double se = num(c_se);
        if (!(se > 0.0)) throw InputError("non-positive SE for unit '" + id + "'");
        if (log_scale) {
            if (!(est > 0.0)) throw InputError("non-positive estimate for unit '" + id + "' under log transform");
            y(r) = std::log(est);
            var_y(r) = delta_method_log_variance(est, se);
        } else {
            y(r) = est;
            var_y(r) = se * se;
        }
        for (std::size_t k = 0; k < c_cov.size(); ++k) cov(r, static_cast<Index>(k)) = num(c_cov[k]);
        for (std::size_t k = 0; k < c_pos.size(); ++k) pos(r, static_cast<Index>(k)) = num(c_pos[k]);
    }
    {
        std::unordered_set<std::string> seen;
        for (const auto& id : ids)
            if (!seen.insert(id).second) throw InputError("duplicate unit id '" + id + "'");
    }
    if (n < 3) throw InputError("need at least 3 units, found " + std::to_string(n));

    std::optional<BinaryMatrix> adjacency;
    if (adjacency_file) adjacency = read_edge_list(*adjacency_file, ids);
    return make_domain(std::move(ids), centroids, y, var_y, cov, pos, std::move(adjacency));
}

} // namespace nnsd
