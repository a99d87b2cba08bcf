#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "gpoabc/optim.hpp"

using namespace gpoabc;

namespace {

SearchBox unit_box(std::size_t p)
{
    SearchBox b;
    b.lower = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
    b.upper = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(p));
    return b;
}

double six_hump_camel(const Eigen::VectorXd& v)
{
    const double x = v(0);
    const double y = v(1);
    return (4.0 - 2.1 * x * x + x * x * x * x / 3.0) * x * x + x * y + (-4.0 + 4.0 * y * y) * y * y;
}

SearchBox camel_box()
{
    SearchBox b;
    b.lower = Eigen::Vector2d(-3.0, -2.0);
    b.upper = Eigen::Vector2d(3.0, 2.0);
    return b;
}

/// Smallest camel value on a 1e-3 grid over the box.
double camel_grid_minimum()
{
    double best = std::numeric_limits<double>::infinity();
    Eigen::VectorXd v(2);
    for (int i = 0; i <= 6000; ++i) {
        v(0) = -3.0 + i * 1e-3;
        for (int j = 0; j <= 4000; ++j) {
            v(1) = -2.0 + j * 1e-3;
            best = std::min(best, six_hump_camel(v));
        }
    }
    return best;
}

} // namespace

// --- DIRECT -------------------------------------------------------------------------

TEST(Direct, CentredQuadraticFoundImmediately)
{
    for (std::size_t p = 1; p <= 4; ++p) {
        const auto res = direct_maximize(
            [](const Eigen::VectorXd& x) { return -(x.array() - 0.5).square().sum(); }, unit_box(p),
            DirectBudget{500});
        EXPECT_LE(res.evaluations, 500u);
        for (Eigen::Index i = 0; i < res.argmax.size(); ++i)
            EXPECT_NEAR(res.argmax(i), 0.5, 1e-3);
    }
}

TEST(Direct, OffCentreQuadratic)
{
    SearchBox box;
    box.lower = Eigen::Vector3d(-1.0, 0.0, 2.0);
    box.upper = Eigen::Vector3d(1.0, 4.0, 3.0);
    const Eigen::Vector3d target(0.37, 1.1, 2.8);
    const auto res = direct_maximize(
        [&](const Eigen::VectorXd& x) { return -(x - target).squaredNorm(); }, box, DirectBudget{2000});
    EXPECT_LT((res.argmax - target).norm(), 1e-2);
}

TEST(Direct, ConstantObjective)
{
    const auto res = direct_maximize([](const Eigen::VectorXd&) { return 4.2; }, unit_box(3), DirectBudget{100});
    EXPECT_EQ(res.max_value, 4.2);
    EXPECT_LE(res.evaluations, 100u);
    EXPECT_TRUE(unit_box(3).contains(res.argmax));
}

TEST(Direct, SixHumpCamel)
{
    const double grid = camel_grid_minimum();
    EXPECT_NEAR(grid, -1.0316, 1e-4);
    const auto res = direct_maximize([](const Eigen::VectorXd& x) { return -six_hump_camel(x); }, camel_box(),
        DirectBudget{2000});
    EXPECT_LE(res.evaluations, 2000u);
    EXPECT_NEAR(res.max_value, -grid, 1e-2);
    EXPECT_NEAR(res.max_value, -six_hump_camel(res.argmax), 1e-12);
}

TEST(Direct, LargerBudgetNeverWorse)
{
    double previous = -std::numeric_limits<double>::infinity();
    for (std::size_t budget : {10u, 30u, 100u, 300u, 1000u, 3000u}) {
        const auto res = direct_maximize([](const Eigen::VectorXd& x) { return -six_hump_camel(x); }, camel_box(),
            DirectBudget{budget});
        EXPECT_GE(res.max_value, previous);
        EXPECT_TRUE(camel_box().contains(res.argmax));
        previous = res.max_value;
    }
}

TEST(Direct, BoxContainmentAndBestCentre)
{
    std::vector<Eigen::VectorXd> seen;
    double best_seen = -std::numeric_limits<double>::infinity();
    const SearchBox box = camel_box();
    const auto res = direct_maximize(
        [&](const Eigen::VectorXd& x) {
            EXPECT_TRUE(box.contains(x));
            const double v = std::sin(3 * x(0)) * std::cos(2 * x(1)) - 0.1 * x.squaredNorm();
            best_seen = std::max(best_seen, v);
            return v;
        },
        box, DirectBudget{700});
    EXPECT_TRUE(box.contains(res.argmax));
    EXPECT_EQ(res.max_value, best_seen);
}

TEST(Direct, Deterministic)
{
    auto f = [](const Eigen::VectorXd& x) { return -six_hump_camel(x); };
    const auto a = direct_maximize(f, camel_box(), DirectBudget{800});
    const auto b = direct_maximize(f, camel_box(), DirectBudget{800});
    EXPECT_TRUE((a.argmax.array() == b.argmax.array()).all());
    EXPECT_EQ(a.evaluations, b.evaluations);
}

TEST(Direct, NanObjectiveIsContractViolation)
{
    try {
        direct_maximize([](const Eigen::VectorXd&) { return std::nan(""); }, unit_box(2), DirectBudget{50});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::contract);
        EXPECT_NE(std::string(e.what()).find("0.5"), std::string::npos);
    }
}

TEST(Direct, RectangleSplitBudget)
{
    DirectBudget b{100000};
    b.max_rectangle_splits = 5;
    const auto res = direct_maximize([](const Eigen::VectorXd& x) { return -six_hump_camel(x); }, camel_box(), b);
    EXPECT_LE(res.rectangle_splits, 5u);
}

// --- Latin hypercube ----------------------------------------------------------------------

TEST(LatinHypercube, SinglePointInBox)
{
    RngStream r(1);
    const SearchBox box = camel_box();
    const Eigen::MatrixXd pts = latin_hypercube(1, box, r);
    ASSERT_EQ(pts.rows(), 1);
    EXPECT_TRUE(box.contains(pts.row(0).transpose()));
}

TEST(LatinHypercube, OnePointPerStratum)
{
    RngStream r(2);
    for (std::size_t p : {1u, 3u, 4u}) {
        SearchBox box;
        box.lower = Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(p), -1.0, 1.0);
        box.upper = box.lower.array() + 2.5;
        const Eigen::MatrixXd pts = latin_hypercube(50, box, r);
        for (Eigen::Index j = 0; j < pts.cols(); ++j) {
            std::vector<int> occupancy(50, 0);
            for (Eigen::Index i = 0; i < pts.rows(); ++i) {
                const double u = (pts(i, j) - box.lower(j)) / 2.5;
                ASSERT_GE(u, 0.0);
                ASSERT_LE(u, 1.0);
                ++occupancy[std::min(49, static_cast<int>(u * 50))];
            }
            EXPECT_EQ(occupancy, std::vector<int>(50, 1));
        }
    }
}

TEST(LatinHypercube, WeakPairwiseRankCorrelation)
{
    int fine = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        RngStream r(seed);
        const Eigen::MatrixXd pts = latin_hypercube(50, unit_box(2), r);
        // Stratum indices are the ranks.
        Eigen::VectorXd a = (pts.col(0) * 50).array().floor();
        Eigen::VectorXd b = (pts.col(1) * 50).array().floor();
        a.array() -= a.mean();
        b.array() -= b.mean();
        fine += std::abs(a.dot(b) / (a.norm() * b.norm())) < 0.5;
    }
    EXPECT_EQ(fine, 100);
}

// --- finite-difference Hessian --------------------------------------------------------

TEST(FiniteDifferenceHessian, DiagonalQuadratic)
{
    const Eigen::Matrix2d A = Eigen::Vector2d(2.0, 5.0).asDiagonal();
    const auto H = finite_difference_hessian([&](const Eigen::VectorXd& x) { return -0.5 * x.dot(A * x); },
        Eigen::Vector2d(0.3, -0.2), Eigen::Vector2d(1e-3, 1e-3));
    EXPECT_LT((H + A).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(FiniteDifferenceHessian, OffDiagonalQuadratic)
{
    Eigen::Matrix3d A;
    A << 2.0, 0.3, 0.0, 0.3, 1.0, -0.2, 0.0, -0.2, 4.0;
    const auto H = finite_difference_hessian([&](const Eigen::VectorXd& x) { return -0.5 * x.dot(A * x); },
        Eigen::Vector3d(0.1, 0.2, 0.3), Eigen::Vector3d(1e-3, 2e-3, 1e-3));
    EXPECT_LT((H + A).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_TRUE(H.isApprox(H.transpose(), 0.0));
    EXPECT_EQ((H - H.transpose()).cwiseAbs().maxCoeff(), 0.0);
}

TEST(FiniteDifferenceHessian, ConstantFunction)
{
    const auto H = finite_difference_hessian([](const Eigen::VectorXd&) { return 7.0; }, Eigen::Vector2d(0.5, 0.5),
        Eigen::Vector2d(1e-4, 1e-4));
    EXPECT_EQ(H.cwiseAbs().maxCoeff(), 0.0);
}

TEST(FiniteDifferenceHessian, StencilLeavingBox)
{
    const SearchBox box = unit_box(2);
    auto f = [](const Eigen::VectorXd& x) { return -x.squaredNorm(); };
    // Step shrinks tenfold once and then fits.
    const auto H = finite_difference_hessian(f, Eigen::Vector2d(0.05, 0.5), Eigen::Vector2d(0.1, 0.1), &box);
    EXPECT_NEAR(H(0, 0), -2.0, 1e-6);
    try {
        finite_difference_hessian(f, Eigen::Vector2d(0.001, 0.5), Eigen::Vector2d(0.1, 0.1), &box);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::domain);
    }
}

// --- bounded quasi-Newton ------------------------------------------------------------------

TEST(BoundedBfgs, InteriorAndBoundaryOptima)
{
    const Eigen::Vector2d target(0.3, 2.0);
    const ValueAndGradient fg = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        g = -2.0 * (x - target);
        return -(x - target).squaredNorm();
    };
    const auto res = maximize_bounded_bfgs(fg, Eigen::Vector2d(-0.5, 0.0), Eigen::Vector2d(-1, -1), Eigen::Vector2d(1, 1));
    EXPECT_NEAR(res.argmax(0), 0.3, 1e-5);
    EXPECT_EQ(res.argmax(1), 1.0);
}
