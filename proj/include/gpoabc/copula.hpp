#ifndef GPOABC_COPULA_HPP
#define GPOABC_COPULA_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <boost/math/tools/minima.hpp>

#include "errors.hpp"
#include "models.hpp"
#include "rng.hpp"
#include "special.hpp"

namespace gpoabc {

/// e_t = exp(-x_t / 2) y_t
inline Eigen::VectorXd filtered_residuals(const Eigen::VectorXd& y, const Eigen::VectorXd& log_volatility)
{
    require(y.size() == log_volatility.size(), ErrorCode::contract, "returns and log-volatility differ in length");
    return ((-0.5 * log_volatility.array()).exp() * y.array()).matrix();
}

/// rank(e_t) / (T + 1) with average ranks for ties; the result lies in [1/(T+1), T/(T+1)].
inline Eigen::VectorXd probability_transform(const Eigen::VectorXd& residuals)
{
    const auto T = residuals.size();
    require(T >= 2, ErrorCode::contract, "probability transform needs at least two residuals");
    std::vector<Eigen::Index> order(static_cast<std::size_t>(T));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return residuals(a) < residuals(b); });
    Eigen::VectorXd out(T);
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && residuals(order[j + 1]) == residuals(order[i]))
            ++j;
        const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k)
            out(order[k]) = rank / static_cast<double>(T + 1);
        i = j + 1;
    }
    return out;
}

namespace detail {

    inline std::uint64_t tied_pairs(const std::vector<double>& sorted_values)
    {
        std::uint64_t total = 0;
        std::size_t run = 1;
        for (std::size_t i = 1; i <= sorted_values.size(); ++i) {
            if (i < sorted_values.size() && sorted_values[i] == sorted_values[i - 1]) {
                ++run;
            } else {
                total += run * (run - 1) / 2;
                run = 1;
            }
        }
        return total;
    }

    // Bottom-up merge sort returning the number of inversions.
    inline std::uint64_t count_inversions(std::vector<double>& v)
    {
        std::uint64_t swaps = 0;
        std::vector<double> buffer(v.size());
        for (std::size_t width = 1; width < v.size(); width *= 2) {
            for (std::size_t lo = 0; lo < v.size(); lo += 2 * width) {
                const std::size_t mid = std::min(lo + width, v.size());
                const std::size_t hi = std::min(lo + 2 * width, v.size());
                std::size_t i = lo;
                std::size_t j = mid;
                std::size_t k = lo;
                while (i < mid && j < hi) {
                    if (v[j] < v[i]) {
                        buffer[k++] = v[j++];
                        swaps += mid - i;
                    } else {
                        buffer[k++] = v[i++];
                    }
                }
                while (i < mid)
                    buffer[k++] = v[i++];
                while (j < hi)
                    buffer[k++] = v[j++];
            }
            v.swap(buffer);
        }
        return swaps;
    }

} // namespace detail

/**
 * Kendall's tau-b by Knight's O(n log n) algorithm. Returns NaN when either
 * sample is constant.
 */
inline double kendall_tau(const Eigen::VectorXd& x, const Eigen::VectorXd& y)
{
    require(x.size() == y.size() && x.size() >= 2, ErrorCode::contract, "Kendall's tau needs two equal samples, n >= 2");
    const auto n = static_cast<std::size_t>(x.size());
    std::vector<std::pair<double, double>> pairs(n);
    for (std::size_t i = 0; i < n; ++i)
        pairs[i] = {x(static_cast<Eigen::Index>(i)), y(static_cast<Eigen::Index>(i))};
    std::sort(pairs.begin(), pairs.end());

    const std::uint64_t n0 = n * (n - 1) / 2;
    std::vector<double> xs(n);
    std::vector<double> ys(n);
    for (std::size_t i = 0; i < n; ++i) {
        xs[i] = pairs[i].first;
        ys[i] = pairs[i].second;
    }
    const std::uint64_t ties_x = detail::tied_pairs(xs);
    std::uint64_t ties_xy = 0;
    {
        std::size_t run = 1;
        for (std::size_t i = 1; i <= n; ++i) {
            if (i < n && pairs[i] == pairs[i - 1]) {
                ++run;
            } else {
                ties_xy += run * (run - 1) / 2;
                run = 1;
            }
        }
    }
    const std::uint64_t swaps = detail::count_inversions(ys);
    const std::uint64_t ties_y = detail::tied_pairs(ys);

    const double denom_x = static_cast<double>(n0 - ties_x);
    const double denom_y = static_cast<double>(n0 - ties_y);
    if (denom_x == 0.0 || denom_y == 0.0)
        return std::numeric_limits<double>::quiet_NaN();
    const double numerator = static_cast<double>(n0) - static_cast<double>(ties_x) - static_cast<double>(ties_y)
        + static_cast<double>(ties_xy) - 2.0 * static_cast<double>(swaps);
    return numerator / std::sqrt(denom_x * denom_y);
}

/// rho = sin(pi tau / 2)
inline double tau_to_correlation(double tau) { return std::sin(0.5 * std::numbers::pi * tau); }

/// Symmetric eigenvalue clamp followed by rescaling to a unit diagonal.
inline Eigen::MatrixXd nearest_correlation(const Eigen::MatrixXd& R, double min_eigenvalue = 1e-8)
{
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(R);
    if (eig.eigenvalues().minCoeff() >= min_eigenvalue)
        return R;
    const Eigen::MatrixXd fixed = eig.eigenvectors() * eig.eigenvalues().cwiseMax(min_eigenvalue).asDiagonal()
        * eig.eigenvectors().transpose();
    const Eigen::VectorXd scale = fixed.diagonal().cwiseSqrt().cwiseInverse();
    Eigen::MatrixXd out = scale.asDiagonal() * fixed * scale.asDiagonal();
    out.diagonal().setOnes();
    return out;
}

/**
 * Pairwise Kendall tau of the columns of U mapped through sin(pi tau / 2).
 * `names` (optional) label the columns in error messages.
 */
inline Eigen::MatrixXd kendall_tau_to_correlation(const Eigen::MatrixXd& U, const std::vector<std::string>& names = {})
{
    const auto d = U.cols();
    require(d >= 2 && U.rows() >= 2, ErrorCode::contract, "correlation fit needs d >= 2 and T >= 2");
    auto label = [&](Eigen::Index i) {
        return static_cast<std::size_t>(i) < names.size() ? names[static_cast<std::size_t>(i)]
                                                           : "column " + std::to_string(i);
    };
    for (Eigen::Index i = 0; i < d; ++i)
        require((U.col(i).array() != U(0, i)).any(), ErrorCode::domain,
            "Kendall's tau undefined: " + label(i) + " is constant");
    Eigen::MatrixXd R = Eigen::MatrixXd::Identity(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = i + 1; j < d; ++j)
            R(i, j) = R(j, i) = tau_to_correlation(kendall_tau(U.col(i), U.col(j)));
    return nearest_correlation(R);
}

// --- Student-t copula --------------------------------------------------------

/// Sum over rows of the t-copula log-density log c(u; nu, R).
inline double t_copula_log_likelihood(const Eigen::MatrixXd& U, const Eigen::MatrixXd& R, double nu)
{
    const auto d = U.cols();
    const Eigen::LLT<Eigen::MatrixXd> llt(R);
    require(llt.info() == Eigen::Success, ErrorCode::domain, "copula correlation matrix is not positive definite");
    const double log_det = 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
    const double dd = static_cast<double>(d);
    const double constant = std::lgamma(0.5 * (nu + dd)) + (dd - 1.0) * std::lgamma(0.5 * nu)
        - dd * std::lgamma(0.5 * (nu + 1.0)) - 0.5 * log_det;

    double total = 0.0;
    Eigen::VectorXd q(d);
    for (Eigen::Index t = 0; t < U.rows(); ++t) {
        double marginal = 0.0;
        for (Eigen::Index i = 0; i < d; ++i) {
            q(i) = student_t_quantile(U(t, i), nu);
            marginal += std::log1p(q(i) * q(i) / nu);
        }
        const double quad = llt.matrixL().solve(q).squaredNorm();
        total += constant - 0.5 * (nu + dd) * std::log1p(quad / nu) + 0.5 * (nu + 1.0) * marginal;
    }
    return total;
}

struct DofFit {
    double nu = 0.0;
    double log_likelihood = neg_inf;
    bool on_boundary = false;
};

/**
 * MAP degrees of freedom under a uniform prior on [nu_min, nu_max], i.e. the
 * bounded maximum-likelihood point, by Brent's method.
 */
inline DofFit fit_t_copula_dof(const Eigen::MatrixXd& U, const Eigen::MatrixXd& R, double nu_min = 2.1,
    double nu_max = 100.0)
{
    require(nu_min > 0.0 && nu_min < nu_max, ErrorCode::configuration, "degrees-of-freedom bounds must satisfy 0 < min < max");
    require(Eigen::LLT<Eigen::MatrixXd>(R).info() == Eigen::Success, ErrorCode::domain,
        "copula correlation matrix is not positive definite");
    auto negative = [&](double nu) { return -t_copula_log_likelihood(U, R, nu); };
    std::uintmax_t max_iter = 200;
    const auto [nu, value] = boost::math::tools::brent_find_minima(negative, nu_min, nu_max, 30, max_iter);
    DofFit fit{nu, -value, false};
    // Brent never evaluates the endpoints; compare explicitly.
    for (double bound : {nu_min, nu_max}) {
        const double v = -negative(bound);
        if (v > fit.log_likelihood)
            fit = {bound, v, false};
    }
    const double tol = 1e-3 * (nu_max - nu_min);
    fit.on_boundary = fit.nu - nu_min <= tol || nu_max - fit.nu <= tol;
    return fit;
}

/// M x d draws: multivariate t by normal / chi-square mixture, then the t CDF per component.
inline Eigen::MatrixXd simulate_t_copula(double nu, const Eigen::MatrixXd& R, std::size_t draws, RngStream& rng)
{
    require(nu > 2.0, ErrorCode::domain, "t copula simulation needs nu > 2");
    const Eigen::LLT<Eigen::MatrixXd> llt(R);
    require(llt.info() == Eigen::Success, ErrorCode::domain, "copula correlation matrix is not positive definite");
    const Eigen::MatrixXd L = llt.matrixL();
    const auto d = R.rows();
    Eigen::MatrixXd out(static_cast<Eigen::Index>(draws), d);
    Eigen::VectorXd z(d);
    for (Eigen::Index m = 0; m < out.rows(); ++m) {
        for (Eigen::Index i = 0; i < d; ++i)
            z(i) = rng.normal();
        const double scale = 1.0 / std::sqrt(rng.chi_square(nu) / nu);
        const Eigen::VectorXd x = scale * (L * z);
        for (Eigen::Index i = 0; i < d; ++i)
            out(m, i) = student_t_cdf(x(i), nu);
    }
    return out;
}

// --- margins and VaR ------------------------------------------------------------

/**
 * Empirical distribution of filtered residuals. Order statistic i (1-based)
 * sits at probability i / (T + 1); the quantile interpolates linearly between
 * order statistics and clamps beyond the extremes.
 */
class EmpiricalMargin {
public:
    EmpiricalMargin() = default;
    explicit EmpiricalMargin(const Eigen::VectorXd& residuals)
        : sorted_(residuals.data(), residuals.data() + residuals.size())
    {
        require(sorted_.size() >= 2, ErrorCode::contract, "empirical margin needs at least two residuals");
        std::sort(sorted_.begin(), sorted_.end());
    }

    const std::vector<double>& sorted() const noexcept { return sorted_; }

    double quantile(double u) const
    {
        const double n1 = static_cast<double>(sorted_.size() + 1);
        const double pos = u * n1; // 1-based fractional order statistic
        if (pos <= 1.0)
            return sorted_.front();
        if (pos >= static_cast<double>(sorted_.size()))
            return sorted_.back();
        const auto i = static_cast<std::size_t>(std::floor(pos));
        const double frac = pos - static_cast<double>(i);
        return sorted_[i - 1] + frac * (sorted_[i] - sorted_[i - 1]);
    }

private:
    std::vector<double> sorted_;
};

struct MarginModel {
    std::string asset;
    ModelId model = ModelId::gsv;
    Eigen::VectorXd theta;
    Eigen::VectorXd log_volatility; // x_hat over the series the margin was filtered on
    Eigen::VectorXd residuals;      // estimation-period residuals
    EmpiricalMargin distribution;
};

struct CopulaModel {
    Eigen::MatrixXd correlation;
    double nu = 0.0;
    std::vector<MarginModel> margins;
};

/// Copula draws mapped through each margin's empirical quantile (M x d residuals).
inline Eigen::MatrixXd residual_draws(const CopulaModel& copula, std::size_t draws, RngStream& rng)
{
    require(static_cast<Eigen::Index>(copula.margins.size()) == copula.correlation.rows(), ErrorCode::contract,
        "one margin per copula dimension is required");
    Eigen::MatrixXd U = simulate_t_copula(copula.nu, copula.correlation, draws, rng);
    for (Eigen::Index i = 0; i < U.cols(); ++i)
        for (Eigen::Index m = 0; m < U.rows(); ++m)
            U(m, i) = copula.margins[static_cast<std::size_t>(i)].distribution.quantile(U(m, i));
    return U;
}

/// Empirical alpha-quantile of the loss: the ceil(alpha M)-th smallest loss.
inline double empirical_loss_quantile(std::vector<double> losses, double alpha_bar)
{
    require(!losses.empty(), ErrorCode::contract, "quantile of an empty sample");
    const auto M = losses.size();
    auto idx = static_cast<std::size_t>(std::ceil(alpha_bar * static_cast<double>(M)));
    idx = std::clamp<std::size_t>(idx, 1, M) - 1;
    std::nth_element(losses.begin(), losses.begin() + static_cast<std::ptrdiff_t>(idx), losses.end());
    return losses[idx];
}

/// VaR for one period from pre-drawn residuals: returns scaled by exp(x_hat / 2).
inline double var_from_draws(const Eigen::MatrixXd& residuals, const Eigen::VectorXd& log_volatility,
    const Eigen::VectorXd& weights, double alpha_bar)
{
    require(residuals.cols() == log_volatility.size() && weights.size() == log_volatility.size(), ErrorCode::contract,
        "VaR inputs differ in dimension");
    require(std::abs(weights.sum() - 1.0) <= 1e-9, ErrorCode::contract, "portfolio weights must sum to 1");
    require(alpha_bar > 0.0 && alpha_bar < 1.0, ErrorCode::contract, "VaR level must lie in (0, 1)");
    const Eigen::VectorXd scaled = weights.cwiseProduct((0.5 * log_volatility.array()).exp().matrix());
    const Eigen::VectorXd portfolio = residuals * scaled;
    std::vector<double> losses(static_cast<std::size_t>(portfolio.size()));
    for (Eigen::Index m = 0; m < portfolio.size(); ++m)
        losses[static_cast<std::size_t>(m)] = -portfolio(m);
    return empirical_loss_quantile(std::move(losses), alpha_bar);
}

inline double var_estimate(const CopulaModel& copula, const Eigen::VectorXd& log_volatility,
    const Eigen::VectorXd& weights, double alpha_bar, std::size_t draws, RngStream& rng)
{
    require(draws >= 1000, ErrorCode::contract, "VaR estimation needs at least 1000 draws");
    return var_from_draws(residual_draws(copula, draws, rng), log_volatility, weights, alpha_bar);
}

struct BacktestResult {
    std::size_t violations = 0;
    double expected = 0.0; // (1 - alpha_bar) n
    std::size_t periods = 0;
    std::vector<bool> flags;
};

/// A violation is a period whose loss -r_t exceeds the VaR.
inline BacktestResult backtest(const Eigen::VectorXd& var, const Eigen::VectorXd& realised, double alpha_bar)
{
    require(var.size() == realised.size(), ErrorCode::contract,
        "VaR series (" + std::to_string(var.size()) + ") and returns (" + std::to_string(realised.size())
            + ") are misaligned");
    BacktestResult out;
    out.periods = static_cast<std::size_t>(var.size());
    out.expected = (1.0 - alpha_bar) * static_cast<double>(out.periods);
    out.flags.resize(out.periods);
    for (Eigen::Index t = 0; t < var.size(); ++t) {
        const bool hit = -realised(t) > var(t);
        out.flags[static_cast<std::size_t>(t)] = hit;
        out.violations += hit ? 1 : 0;
    }
    return out;
}

} // namespace gpoabc

#endif
