#include <gtest/gtest.h>

#include <cmath>

#include "nnsd/csv.hpp"
#include "nnsd/domain.hpp"
#include "support.hpp"

using namespace nnsd;

namespace {

std::string fixture(const std::string& name) { return std::string(NNSD_FIXTURES) + "/" + name; }

Matrix points(std::initializer_list<std::pair<double, double>> xs) {
    Matrix m(static_cast<Index>(xs.size()), 2);
    Index r = 0;
    for (auto [x, y] : xs) {
        m(r, 0) = x;
        m(r, 1) = y;
        ++r;
    }
    return m;
}

} // namespace

TEST(NormalizeToUnitDisk, SymmetricPair) {
    const Matrix out = normalize_to_unit_disk(points({{0, 0}, {2, 0}}));
    EXPECT_NEAR(out(0, 0), -1.0, 1e-15);
    EXPECT_NEAR(out(1, 0), 1.0, 1e-15);
    EXPECT_NEAR(out.col(1).norm(), 0.0, 1e-15);
}

TEST(NormalizeToUnitDisk, SinglePointGoesToOrigin) {
    const Matrix out = normalize_to_unit_disk(points({{5, 7}}));
    EXPECT_EQ(out(0, 0), 0.0);
    EXPECT_EQ(out(0, 1), 0.0);
}

TEST(NormalizeToUnitDisk, ThreeCollinearPoints) {
    // Mean (0, 4/3); the farthest centered point is (0, 5/3).
    const Matrix out = normalize_to_unit_disk(points({{0, 0}, {0, 1}, {0, 3}}));
    EXPECT_NEAR(out(0, 1), -0.8, 1e-12);
    EXPECT_NEAR(out(1, 1), -0.2, 1e-12);
    EXPECT_NEAR(out(2, 1), 1.0, 1e-12);
    EXPECT_NEAR(out.col(0).norm(), 0.0, 1e-15);
}

TEST(NormalizeToUnitDisk, RejectsNonFinite) {
    EXPECT_THROW(normalize_to_unit_disk(points({{0, NAN}, {1, 1}})), InputError);
}

TEST(NormalizeToUnitDisk, IdempotentAndMaxNormOne) {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix raw = 10.0 * Matrix::Random(3 + trial % 9, 2) + Matrix::Constant(3 + trial % 9, 2, trial);
        const Matrix once = normalize_to_unit_disk(raw);
        const Matrix twice = normalize_to_unit_disk(once);
        EXPECT_LT((once - twice).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_NEAR(once.rowwise().norm().maxCoeff(), 1.0, 1e-12);
    }
}

TEST(PairwiseDistances, SmallCases) {
    const Matrix d = pairwise_distances(points({{0, 0}, {1, 0}}));
    EXPECT_EQ(d(0, 1), 1.0);
    EXPECT_EQ(d(1, 0), 1.0);
    EXPECT_EQ(d(0, 0), 0.0);
    EXPECT_EQ(pairwise_distances(points({{0, 0}, {3, 4}}))(0, 1), 5.0);
}

TEST(PairwiseDistances, MatchesDoubleLoop) {
    Rng rng(7);
    const Matrix p = testkit::random_disk_points(5, 3.0, rng);
    const Matrix d = pairwise_distances(p);
    for (Index i = 0; i < 5; ++i)
        for (Index j = 0; j < 5; ++j) {
            const double dx = p(i, 0) - p(j, 0), dy = p(i, 1) - p(j, 1);
            EXPECT_NEAR(d(i, j), std::sqrt(dx * dx + dy * dy), 1e-12);
        }
}

TEST(PairwiseDistances, TriangleInequalityAndScaling) {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix raw = testkit::random_disk_points(8, 5.0, rng) + Matrix::Constant(8, 2, 3.0);
        const Matrix d = pairwise_distances(raw);
        for (Index i = 0; i < 8; ++i)
            for (Index j = 0; j < 8; ++j)
                for (Index k = 0; k < 8; ++k) EXPECT_LE(d(i, j), d(i, k) + d(k, j) + 1e-12);
        const Matrix centered = raw.rowwise() - raw.colwise().mean();
        const double scale = centered.rowwise().norm().maxCoeff();
        const Matrix dn = pairwise_distances(normalize_to_unit_disk(raw));
        EXPECT_LT((dn - d / scale).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LE(dn.maxCoeff(), 2.0);
    }
}

TEST(DeltaMethod, Examples) {
    EXPECT_NEAR(delta_method_log_variance(100, 10), 0.01, 1e-15);
    EXPECT_NEAR(delta_method_log_variance(50000, 1500), 0.0009, 1e-15);
    EXPECT_NEAR(delta_method_log_variance(std::exp(1.0), std::exp(1.0)), 1.0, 1e-15);
    EXPECT_THROW(delta_method_log_variance(0.0, 1.0), InputError);
    EXPECT_THROW(delta_method_log_variance(1.0, -1.0), InputError);
}

TEST(LoadDomain, ThreeRowFileWithoutAdjacency) {
    ColumnSpec cols;
    const SpatialDomain d = load_domain(fixture("p3_units.csv"), std::nullopt, cols);
    EXPECT_EQ(d.size(), 3);
    EXPECT_EQ(d.n_covariates(), 1);
    EXPECT_FALSE(d.geo_adjacency.has_value());
    EXPECT_NEAR(d.y(0), std::log(52000.0), 1e-12);
    EXPECT_NEAR(d.var_y(1), std::pow(1800.0 / 48000.0, 2), 1e-15);
}

TEST(LoadDomain, CovariatesAndAdjacency) {
    ColumnSpec cols;
    cols.covariates = {"income"};
    const SpatialDomain d = load_domain(fixture("p3_units.csv"), fixture("p3_adjacency.csv"), cols);
    EXPECT_EQ(d.n_covariates(), 2);
    EXPECT_EQ(d.X(0, 0), 1.0);
    EXPECT_EQ(d.X(2, 1), 4.6);
    ASSERT_TRUE(d.geo_adjacency.has_value());
    EXPECT_EQ((*d.geo_adjacency)(0, 1), 1);
    EXPECT_EQ((*d.geo_adjacency)(1, 2), 1);
    EXPECT_EQ((*d.geo_adjacency)(0, 2), 0);
}

TEST(LoadDomain, SixtySevenRowsWithIntercept) {
    const auto dir = testkit::temp_dir("domain67");
    std::string text = "id,x,y,estimate,se,housing\n";
    Rng rng(67);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 67; ++i)
        text += "c" + std::to_string(i) + "," + std::to_string(u(rng)) + "," + std::to_string(u(rng)) + "," +
                std::to_string(40000 + 20000 * u(rng)) + "," + std::to_string(1000 + 1000 * u(rng)) + "," +
                std::to_string(6.5 + u(rng)) + "\n";
    testkit::write_file(dir + "/units.csv", text);
    ColumnSpec cols;
    cols.covariates = {"housing"};
    const SpatialDomain d = load_domain(dir + "/units.csv", std::nullopt, cols);
    EXPECT_EQ(d.size(), 67);
    EXPECT_EQ(d.n_covariates(), 2);
    EXPECT_TRUE((d.X.col(0).array() == 1.0).all());
    EXPECT_LE(d.d1.maxCoeff(), 2.0);
}

TEST(LoadDomain, Errors) {
    ColumnSpec cols;
    try {
        load_domain(fixture("duplicate_units.csv"), std::nullopt, cols);
        FAIL();
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("duplicate unit id"), std::string::npos);
    }

    ColumnSpec missing = cols;
    missing.covariates = {"nope"};
    try {
        load_domain(fixture("p3_units.csv"), std::nullopt, missing);
        FAIL();
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("nope"), std::string::npos);
    }

    const auto dir = testkit::temp_dir("domain_err");
    testkit::write_file(dir + "/bad_edges.csv", "a,b\nb,zz\n");
    EXPECT_THROW(load_domain(fixture("p3_units.csv"), dir + "/bad_edges.csv", cols), InputError);

    testkit::write_file(dir + "/bad_se.csv", "id,x,y,estimate,se\na,0,0,1,1\nb,1,0,1,0\nc,0,1,1,1\n");
    EXPECT_THROW(load_domain(dir + "/bad_se.csv", std::nullopt, cols), InputError);

    testkit::write_file(dir + "/two.csv", "id,x,y,estimate,se\na,0,0,1,1\nb,1,0,1,1\n");
    EXPECT_THROW(load_domain(dir + "/two.csv", std::nullopt, cols), InputError);

    EXPECT_THROW(load_domain(dir + "/absent.csv", std::nullopt, cols), InputError);
}

TEST(LoadDomain, IdentityTransformAndPositionCovariates) {
    const auto dir = testkit::temp_dir("domain_pos");
    testkit::write_file(dir + "/u.csv", "id;x;y;r;s;z\na;0;0;1.5;0.2;0.3\nb;1;0;2.5;0.1;-0.4\nc;0;1;0.5;0.3;1.0\n");
    ColumnSpec cols;
    cols.delimiter = ';';
    cols.response = "r";
    cols.response_se = "s";
    cols.response_transform = "identity";
    cols.position_covariates = {"z"};
    const SpatialDomain d = load_domain(dir + "/u.csv", std::nullopt, cols);
    EXPECT_EQ(d.y(1), 2.5);
    EXPECT_NEAR(d.var_y(0), 0.04, 1e-15);
    EXPECT_EQ(d.n_position_covariates(), 2);
    EXPECT_EQ(d.S[1](0, 0), -0.4);
    EXPECT_EQ(d.S[1](1, 1), -0.4);
    EXPECT_EQ(d.S[1](0, 1), 0.0);
}

TEST(MakeDomain, ValidatesInvariants) {
    Rng rng(1);
    const Matrix pts = testkit::random_disk_points(4, 1.0, rng);
    const std::vector<std::string> ids{"a", "b", "c", "d"};
    const Vector y = Vector::Zero(4);
    EXPECT_NO_THROW(make_domain(ids, pts, y, Vector::Constant(1, 0.1), Matrix()));
    EXPECT_THROW(make_domain(ids, pts, y, Vector::Constant(1, -0.1), Matrix()), InputError);
    // A covariate equal to the intercept is rank deficient.
    EXPECT_THROW(make_domain(ids, pts, y, Vector::Constant(1, 0.1), Matrix::Ones(4, 1)), InputError);
    BinaryMatrix asym = BinaryMatrix::Zero(4, 4);
    asym(0, 1) = 1;
    EXPECT_THROW(make_domain(ids, pts, y, Vector::Constant(1, 0.1), Matrix(), Matrix(), asym), InputError);
}

TEST(Csv, QuotedFieldsAndRoundTripFormat) {
    const auto f = split_line("\"a,b\", c ,d", ',');
    ASSERT_EQ(f.size(), 3u);
    EXPECT_EQ(f[0], "a,b");
    EXPECT_EQ(f[1], "c");
    EXPECT_THROW(parse_real("1.2x", "t"), InputError);
    Rng rng(5);
    for (double v : testkit::random_vector(100, 1e3, rng)) EXPECT_EQ(parse_real(format_real(v), "t"), v);
}
