#ifndef GPOABC_GP_HPP
#define GPOABC_GP_HPP

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "errors.hpp"
#include "models.hpp"
#include "optim.hpp"
#include "rng.hpp"

namespace gpoabc {

inline constexpr double sqrt5 = 2.23606797749978969641;

/// Bias + Matern 5/2 (ARD) kernel hyperparameters and the observation noise.
struct GpHyperparameters {
    double bias_variance = 0.0;
    double matern_variance = 1.0;
    Eigen::VectorXd length_scales;
    double noise_variance = 1e-2;

    std::size_t dim() const noexcept { return static_cast<std::size_t>(length_scales.size()); }

    void validate() const
    {
        require(bias_variance >= 0.0 && std::isfinite(bias_variance), ErrorCode::domain, "bias variance must be >= 0");
        require(matern_variance > 0.0 && std::isfinite(matern_variance), ErrorCode::domain,
            "Matern variance must be > 0");
        require(length_scales.size() > 0 && (length_scales.array() > 0.0).all() && length_scales.allFinite(),
            ErrorCode::domain, "length scales must be positive");
        require(noise_variance >= 0.0 && std::isfinite(noise_variance), ErrorCode::domain,
            "noise variance must be >= 0");
    }

    /// (log bias, log matern, log length scales..., log noise)
    Eigen::VectorXd to_log() const
    {
        const auto p = length_scales.size();
        Eigen::VectorXd v(p + 3);
        v(0) = std::log(bias_variance);
        v(1) = std::log(matern_variance);
        v.segment(2, p) = length_scales.array().log().matrix();
        v(p + 2) = std::log(noise_variance);
        return v;
    }

    static GpHyperparameters from_log(const Eigen::VectorXd& v)
    {
        const auto p = v.size() - 3;
        GpHyperparameters h;
        h.bias_variance = std::exp(v(0));
        h.matern_variance = std::exp(v(1));
        h.length_scales = v.segment(2, p).array().exp().matrix();
        h.noise_variance = std::exp(v(p + 2));
        return h;
    }
};

inline double matern52(double r) { return (1.0 + sqrt5 * r + 5.0 * r * r / 3.0) * std::exp(-sqrt5 * r); }

/// bias + matern * (1 + sqrt5 r + 5 r^2 / 3) exp(-sqrt5 r), r the length-scaled distance.
inline double kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const GpHyperparameters& hyp)
{
    require(a.size() == b.size() && a.size() == hyp.length_scales.size(), ErrorCode::contract,
        "kernel dimensions do not match");
    require((hyp.length_scales.array() > 0.0).all(), ErrorCode::domain, "length scales must be positive");
    const double r = ((a - b).array() / hyp.length_scales.array()).matrix().norm();
    return hyp.bias_variance + hyp.matern_variance * matern52(r);
}

/// Pairs (theta_j, xi_j); points are stored as rows.
struct SurrogateDataset {
    Eigen::MatrixXd points;
    Eigen::VectorXd values;

    SurrogateDataset() = default;
    explicit SurrogateDataset(std::size_t dim) : points(0, static_cast<Eigen::Index>(dim)) {}
    SurrogateDataset(Eigen::MatrixXd pts, Eigen::VectorXd vals) : points(std::move(pts)), values(std::move(vals))
    {
        require(points.rows() == values.size(), ErrorCode::contract, "dataset points and values differ in length");
    }

    std::size_t size() const noexcept { return static_cast<std::size_t>(values.size()); }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(points.cols()); }

    void add(const Eigen::VectorXd& point, double value)
    {
        require(point.size() == points.cols(), ErrorCode::contract, "dataset point has the wrong dimension");
        require(std::isfinite(value), ErrorCode::contract, "dataset values must be finite");
        const auto k = points.rows();
        points.conservativeResize(k + 1, Eigen::NoChange);
        points.row(k) = point.transpose();
        values.conservativeResize(k + 1);
        values(k) = value;
    }
};

struct GpPrediction {
    double mean = 0.0;
    double variance = 0.0;       // sigma^2(theta | D), latent
    double noisy_variance = 0.0; // sigma^2 + sigma_xi^2
    bool clamped = false;        // raw variance fell below -1e-10
};

struct GpBatchPrediction {
    Eigen::VectorXd mean;
    Eigen::VectorXd variance;
};

namespace detail {

    /// Gram matrix of rows already divided by the length scales.
    inline Eigen::MatrixXd scaled_gram(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double bias, double matern)
    {
        Eigen::MatrixXd out(a.rows(), b.rows());
        for (Eigen::Index j = 0; j < b.rows(); ++j)
            for (Eigen::Index i = 0; i < a.rows(); ++i)
                out(i, j) = bias + matern * matern52((a.row(i) - b.row(j)).norm());
        return out;
    }

    struct Factorisation {
        Eigen::LLT<Eigen::MatrixXd> llt;
        double jitter = 0.0;
    };

    /// Cholesky of K + noise I; on failure retries with jitter 1e-10 * mean(diag K),
    /// doubling up to six times.
    inline Factorisation factorise(Eigen::MatrixXd system, double mean_diag)
    {
        Factorisation f;
        f.llt.compute(system);
        double jitter = 1e-10 * std::max(mean_diag, std::numeric_limits<double>::min());
        for (int attempt = 0; f.llt.info() != Eigen::Success && attempt <= 6; ++attempt) {
            system.diagonal().array() += jitter - f.jitter;
            f.jitter = jitter;
            f.llt.compute(system);
            jitter *= 2.0;
        }
        if (f.llt.info() != Eigen::Success)
            fail(ErrorCode::numerical, "Gram matrix factorisation failed after maximum jitter");
        return f;
    }

} // namespace detail

/**
 * Zero-mean GP regression model over a surrogate dataset.
 *
 * Immutable after construction, so it can be queried from several threads.
 */
class GpModel {
public:
    GpModel(SurrogateDataset data, GpHyperparameters hyp) : data_(std::move(data)), hyp_(std::move(hyp))
    {
        hyp_.validate();
        require(hyp_.dim() == data_.dim() || data_.size() == 0, ErrorCode::contract,
            "hyperparameter dimension does not match the dataset");
        inv_scales_ = hyp_.length_scales.cwiseInverse();
        scaled_points_ = data_.points * inv_scales_.asDiagonal();
        if (data_.size() == 0)
            return;
        Eigen::MatrixXd system = detail::scaled_gram(scaled_points_, scaled_points_, hyp_.bias_variance,
            hyp_.matern_variance);
        const double mean_diag = system.diagonal().mean();
        system.diagonal().array() += hyp_.noise_variance;
        auto f = detail::factorise(std::move(system), mean_diag);
        llt_ = std::move(f.llt);
        jitter_ = f.jitter;
        alpha_ = llt_->solve(data_.values);
        bias_term_ = hyp_.bias_variance * alpha_.sum();
    }

    const SurrogateDataset& dataset() const noexcept { return data_; }
    const GpHyperparameters& hyperparameters() const noexcept { return hyp_; }
    double jitter() const noexcept { return jitter_; }
    std::size_t dim() const noexcept { return hyp_.dim(); }

    /// Lower-triangular factor L with L L^T = K + sigma_xi^2 I (+ jitter).
    Eigen::MatrixXd factor() const
    {
        require(llt_.has_value(), ErrorCode::state, "model has no data and therefore no factor");
        return llt_->matrixL();
    }

    /// (K + sigma_xi^2 I)^-1 xi
    const Eigen::VectorXd& weights() const noexcept { return alpha_; }

    double prior_variance() const noexcept { return hyp_.bias_variance + hyp_.matern_variance; }

    GpPrediction predict(const Eigen::VectorXd& point) const
    {
        require(point.size() == static_cast<Eigen::Index>(dim()), ErrorCode::contract,
            "prediction point has the wrong dimension");
        GpPrediction out;
        double variance = prior_variance();
        if (data_.size() > 0) {
            const Eigen::RowVectorXd scaled = point.transpose() * inv_scales_.asDiagonal();
            Eigen::VectorXd k_star(scaled_points_.rows());
            for (Eigen::Index i = 0; i < k_star.size(); ++i)
                k_star(i) = hyp_.matern_variance * matern52((scaled_points_.row(i) - scaled).norm());
            out.mean = bias_term_ + k_star.dot(alpha_);
            k_star.array() += hyp_.bias_variance;
            llt_->matrixL().solveInPlace(k_star);
            variance -= k_star.squaredNorm();
        }
        out.clamped = variance < -1e-10;
        out.variance = std::max(variance, 0.0);
        out.noisy_variance = out.variance + hyp_.noise_variance;
        return out;
    }

    /// Predictions at the columns of `points`; latent variances are clamped at 0.
    GpBatchPrediction predict_batch(const Eigen::MatrixXd& points) const
    {
        require(points.rows() == static_cast<Eigen::Index>(dim()), ErrorCode::contract,
            "prediction points have the wrong dimension");
        GpBatchPrediction out;
        const Eigen::Index m = points.cols();
        out.variance = Eigen::VectorXd::Constant(m, prior_variance());
        if (data_.size() == 0) {
            out.mean = Eigen::VectorXd::Zero(m);
            return out;
        }
        const Eigen::MatrixXd scaled = points.transpose() * inv_scales_.asDiagonal();
        Eigen::MatrixXd k_star = detail::scaled_gram(scaled_points_, scaled, 0.0, hyp_.matern_variance);
        out.mean = ((k_star.transpose() * alpha_).array() + bias_term_).matrix();
        k_star.array() += hyp_.bias_variance;
        llt_->matrixL().solveInPlace(k_star);
        out.variance -= k_star.colwise().squaredNorm().transpose();
        out.variance = out.variance.cwiseMax(0.0);
        return out;
    }

    /// Posterior means at the columns of `points`.
    Eigen::VectorXd mean_batch(const Eigen::MatrixXd& points) const
    {
        if (data_.size() == 0)
            return Eigen::VectorXd::Zero(points.cols());
        const Eigen::MatrixXd scaled = points.transpose() * inv_scales_.asDiagonal();
        return ((detail::scaled_gram(scaled, scaled_points_, 0.0, hyp_.matern_variance) * alpha_).array() + bias_term_).matrix();
    }

    /// Posterior mean only; O(k) per point.
    double mean(const Eigen::VectorXd& point) const
    {
        if (data_.size() == 0)
            return 0.0;
        const Eigen::RowVectorXd scaled = point.transpose() * inv_scales_.asDiagonal();
        double total = 0.0;
        for (Eigen::Index i = 0; i < scaled_points_.rows(); ++i)
            total += alpha_(i) * matern52((scaled_points_.row(i) - scaled).norm());
        return bias_term_ + hyp_.matern_variance * total;
    }

    /// Posterior means at every training point.
    Eigen::VectorXd training_means() const
    {
        if (data_.size() == 0)
            return {};
        const Eigen::MatrixXd gram = detail::scaled_gram(scaled_points_, scaled_points_, 0.0, hyp_.matern_variance);
        return ((gram * alpha_).array() + bias_term_).matrix();
    }

private:
    SurrogateDataset data_;
    GpHyperparameters hyp_;
    Eigen::VectorXd inv_scales_;
    Eigen::MatrixXd scaled_points_;
    std::optional<Eigen::LLT<Eigen::MatrixXd>> llt_;
    Eigen::VectorXd alpha_;
    double bias_term_ = 0.0;
    double jitter_ = 0.0;
};

// --- marginal likelihood ---------------------------------------------------

struct MarginalLikelihood {
    double value = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd gradient; // w.r.t. GpHyperparameters::to_log()
};

/**
 * log N(xi; 0, K + sigma_xi^2 I) and, optionally, its gradient with respect to
 * the log-hyperparameters: 0.5 tr((a a^T - C^-1) dC/dlog(h)).
 */
inline MarginalLikelihood gp_log_marginal_likelihood_with_gradient(const SurrogateDataset& data,
    const GpHyperparameters& hyp, bool with_gradient = true)
{
    require(data.size() >= 1, ErrorCode::contract, "marginal likelihood needs at least one data point");
    hyp.validate();
    const auto k = static_cast<Eigen::Index>(data.size());
    const auto p = static_cast<Eigen::Index>(data.dim());
    const Eigen::MatrixXd scaled = data.points * hyp.length_scales.cwiseInverse().asDiagonal();

    Eigen::MatrixXd distances(k, k);
    for (Eigen::Index j = 0; j < k; ++j)
        for (Eigen::Index i = 0; i < k; ++i)
            distances(i, j) = (scaled.row(i) - scaled.row(j)).norm();
    const Eigen::MatrixXd matern_part = distances.unaryExpr([](double r) { return matern52(r); });

    Eigen::MatrixXd system = (hyp.matern_variance * matern_part).array() + hyp.bias_variance;
    const double mean_diag = system.diagonal().mean();
    system.diagonal().array() += hyp.noise_variance;
    const auto f = detail::factorise(system, mean_diag);

    const Eigen::VectorXd alpha = f.llt.solve(data.values);
    const Eigen::MatrixXd L = f.llt.matrixL();
    const double log_det = 2.0 * L.diagonal().array().log().sum();

    MarginalLikelihood out;
    out.value = -0.5 * data.values.dot(alpha) - 0.5 * log_det
        - 0.5 * static_cast<double>(k) * std::log(2.0 * std::numbers::pi);
    if (!with_gradient)
        return out;

    // W = alpha alpha^T - C^-1
    Eigen::MatrixXd W = f.llt.solve(Eigen::MatrixXd::Identity(k, k));
    W = alpha * alpha.transpose() - W;

    out.gradient.resize(p + 3);
    out.gradient(0) = 0.5 * hyp.bias_variance * W.sum();
    out.gradient(1) = 0.5 * hyp.matern_variance * W.cwiseProduct(matern_part).sum();
    // d k / d log l_d = s (5/3) (1 + sqrt5 r) exp(-sqrt5 r) (delta_d / l_d)^2
    const Eigen::MatrixXd radial = distances.unaryExpr(
        [&](double r) { return hyp.matern_variance * (5.0 / 3.0) * (1.0 + sqrt5 * r) * std::exp(-sqrt5 * r); });
    for (Eigen::Index d = 0; d < p; ++d) {
        double total = 0.0;
        for (Eigen::Index j = 0; j < k; ++j) {
            for (Eigen::Index i = 0; i < k; ++i) {
                const double delta = scaled(i, d) - scaled(j, d);
                total += W(i, j) * radial(i, j) * delta * delta;
            }
        }
        out.gradient(2 + d) = 0.5 * total;
    }
    out.gradient(p + 2) = 0.5 * hyp.noise_variance * W.trace();
    return out;
}

inline double gp_log_marginal_likelihood(const SurrogateDataset& data, const GpHyperparameters& hyp)
{
    return gp_log_marginal_likelihood_with_gradient(data, hyp, false).value;
}

// --- empirical Bayes -------------------------------------------------------

/// Box bounds on the hyperparameters (natural scale).
struct HyperparameterBounds {
    Eigen::VectorXd length_lower;
    Eigen::VectorXd length_upper;
    double variance_lower = 1e-6;
    double variance_upper = 1e6;

    /// Length scales within [1e-3, 10] times the box width per dimension.
    static HyperparameterBounds for_box(const SearchBox& box)
    {
        HyperparameterBounds b;
        b.length_lower = 1e-3 * box.width();
        b.length_upper = 10.0 * box.width();
        return b;
    }

    Eigen::VectorXd log_lower() const
    {
        const auto p = length_lower.size();
        Eigen::VectorXd v(p + 3);
        v(0) = std::log(variance_lower);
        v(1) = std::log(variance_lower);
        v.segment(2, p) = length_lower.array().log().matrix();
        v(p + 2) = std::log(variance_lower);
        return v;
    }

    Eigen::VectorXd log_upper() const
    {
        const auto p = length_upper.size();
        Eigen::VectorXd v(p + 3);
        v(0) = std::log(variance_upper);
        v(1) = std::log(variance_upper);
        v.segment(2, p) = length_upper.array().log().matrix();
        v(p + 2) = std::log(variance_upper);
        return v;
    }

    GpHyperparameters clamp(const GpHyperparameters& h) const
    {
        return GpHyperparameters::from_log(h.to_log().cwiseMax(log_lower()).cwiseMin(log_upper()));
    }
};

struct HyperparameterFit {
    GpHyperparameters hyperparameters;
    double log_marginal_likelihood = -std::numeric_limits<double>::infinity();
    bool improved = false; // false: no restart beat the initial point (warning)
};

/**
 * Empirical Bayes: maximise the log marginal likelihood over the bounded
 * log-hyperparameters with projected BFGS. Restart 0 starts at `init`, the
 * rest at uniform draws in the log box. The result is never worse than `init`.
 */
inline HyperparameterFit estimate_hyperparameters(const SurrogateDataset& data, const GpHyperparameters& init,
    const HyperparameterBounds& bounds, std::size_t restarts, RngStream& rng,
    const BoundedMaximizeOptions& options = {})
{
    require(data.size() >= 2, ErrorCode::contract, "hyperparameter estimation needs at least two data points");
    require(restarts >= 1, ErrorCode::configuration, "at least one optimiser restart is required");
    const Eigen::VectorXd lo = bounds.log_lower();
    const Eigen::VectorXd hi = bounds.log_upper();

    const ValueAndGradient objective = [&data](const Eigen::VectorXd& v, Eigen::VectorXd& grad) {
        try {
            const auto ml = gp_log_marginal_likelihood_with_gradient(data, GpHyperparameters::from_log(v));
            grad = ml.gradient;
            return ml.value;
        } catch (const Error&) {
            grad = Eigen::VectorXd::Zero(v.size());
            return -std::numeric_limits<double>::infinity();
        }
    };

    HyperparameterFit best;
    best.hyperparameters = init;
    try {
        best.log_marginal_likelihood = gp_log_marginal_likelihood(data, init);
    } catch (const Error&) {
        best.log_marginal_likelihood = -std::numeric_limits<double>::infinity();
    }
    const double init_value = best.log_marginal_likelihood;

    for (std::size_t r = 0; r < restarts; ++r) {
        Eigen::VectorXd start(lo.size());
        if (r == 0) {
            start = init.to_log().cwiseMax(lo).cwiseMin(hi);
        } else {
            for (Eigen::Index i = 0; i < start.size(); ++i)
                start(i) = rng.uniform(lo(i), hi(i));
        }
        const auto fit = maximize_bounded_bfgs(objective, start, lo, hi, options);
        if (std::isfinite(fit.value) && fit.value > best.log_marginal_likelihood) {
            best.log_marginal_likelihood = fit.value;
            best.hyperparameters = GpHyperparameters::from_log(fit.argmax);
        }
    }
    best.improved = best.log_marginal_likelihood > init_value;
    return best;
}

} // namespace gpoabc

#endif
