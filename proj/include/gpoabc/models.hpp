#ifndef GPOABC_MODELS_HPP
#define GPOABC_MODELS_HPP

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "errors.hpp"
#include "rng.hpp"
#include "special.hpp"

namespace gpoabc {

/// GSV: Gaussian log-returns. ASV: symmetric alpha-stable log-returns.
enum class ModelId { gsv, asv };

inline std::string_view to_string(ModelId id) { return id == ModelId::gsv ? "gsv" : "asv"; }

inline ModelId parse_model_id(std::string_view text)
{
    if (text == "gsv")
        return ModelId::gsv;
    if (text == "asv")
        return ModelId::asv;
    fail(ErrorCode::configuration, "unknown model id '" + std::string(text) + "' (expected gsv or asv)");
}

inline std::size_t parameter_count(ModelId id) { return id == ModelId::gsv ? 3 : 4; }

inline std::vector<std::string> parameter_names(ModelId id)
{
    if (id == ModelId::gsv)
        return {"mu", "phi", "sigma_v"};
    return {"mu", "phi", "sigma_v", "alpha"};
}

/**
 * How the alpha-stable observation scale is derived from the log-volatility.
 *
 * stable_scale:    gamma_t = exp(x_t / 2)
 * variance_matched: gamma_t = exp(x_t / 2) / sqrt(2), so that alpha = 2 has variance exp(x_t)
 */
enum class ObservationScale { stable_scale, variance_matched };

inline double observation_scale(ObservationScale convention, double log_volatility)
{
    const double gamma = std::exp(0.5 * log_volatility);
    return convention == ObservationScale::stable_scale ? gamma : gamma / std::numbers::sqrt2;
}

/// Parameter point (mu, phi, sigma_v[, alpha]) tagged with its model.
class ThetaVector {
public:
    ThetaVector(ModelId model, Eigen::VectorXd values)
        : model_(model), values_(std::move(values))
    {
        require(static_cast<std::size_t>(values_.size()) == parameter_count(model_), ErrorCode::configuration,
            std::string(to_string(model_)) + " expects " + std::to_string(parameter_count(model_))
                + " parameters, got " + std::to_string(values_.size()));
    }

    ModelId model() const noexcept { return model_; }
    const Eigen::VectorXd& values() const noexcept { return values_; }
    std::size_t size() const noexcept { return static_cast<std::size_t>(values_.size()); }
    double operator[](std::size_t i) const { return values_(static_cast<Eigen::Index>(i)); }

    double mu() const { return values_(0); }
    double phi() const { return values_(1); }
    double sigma_v() const { return values_(2); }
    double alpha() const { return model_ == ModelId::asv ? values_(3) : 2.0; }

    std::vector<std::string> names() const { return parameter_names(model_); }

    /// phi in (-1, 1), sigma_v > 0 and, for ASV, alpha in (0, 2].
    bool is_valid() const noexcept
    {
        if (!values_.allFinite())
            return false;
        if (!(std::abs(phi()) < 1.0) || !(sigma_v() > 0.0))
            return false;
        if (model_ == ModelId::asv && !(alpha() > 0.0 && alpha() <= 2.0))
            return false;
        return true;
    }

    void validate() const
    {
        if (!values_.allFinite())
            fail(ErrorCode::domain, "theta contains non-finite values");
        if (!(std::abs(phi()) < 1.0))
            fail(ErrorCode::domain, "phi must lie in (-1, 1); stationary variance undefined for phi = "
                    + std::to_string(phi()));
        if (!(sigma_v() > 0.0))
            fail(ErrorCode::domain, "sigma_v must be positive, got " + std::to_string(sigma_v()));
        if (model_ == ModelId::asv && !(alpha() > 0.0 && alpha() <= 2.0))
            fail(ErrorCode::domain, "alpha must lie in (0, 2], got " + std::to_string(alpha()));
    }

private:
    ModelId model_;
    Eigen::VectorXd values_;
};

// --- priors ---------------------------------------------------------------

struct NormalPrior {
    double mean;
    double sd;
};

/// Normal(mean, sd) restricted to [lower, upper].
struct TruncatedNormalPrior {
    double mean;
    double sd;
    double lower;
    double upper;
};

/// Gamma with mean shape / rate.
struct GammaPrior {
    double shape;
    double rate;
};

/// x / scale ~ Beta(shape1, shape2), so the support is (0, scale).
struct ScaledBetaPrior {
    double shape1;
    double shape2;
    double scale;
};

using PriorComponent = std::variant<NormalPrior, TruncatedNormalPrior, GammaPrior, ScaledBetaPrior>;

inline double log_density(const NormalPrior& p, double x) { return normal_log_pdf(x, p.mean, p.sd); }

inline double log_density(const TruncatedNormalPrior& p, double x)
{
    if (x < p.lower || x > p.upper)
        return neg_inf;
    const double mass = std_normal_cdf((p.upper - p.mean) / p.sd) - std_normal_cdf((p.lower - p.mean) / p.sd);
    return normal_log_pdf(x, p.mean, p.sd) - std::log(mass);
}

inline double log_density(const GammaPrior& p, double x)
{
    if (!(x > 0.0))
        return neg_inf;
    return p.shape * std::log(p.rate) - std::lgamma(p.shape) + (p.shape - 1.0) * std::log(x) - p.rate * x;
}

inline double log_density(const ScaledBetaPrior& p, double x)
{
    const double z = x / p.scale;
    if (!(z > 0.0 && z < 1.0))
        return neg_inf;
    return std::lgamma(p.shape1 + p.shape2) - std::lgamma(p.shape1) - std::lgamma(p.shape2)
        + (p.shape1 - 1.0) * std::log(z) + (p.shape2 - 1.0) * std::log1p(-z) - std::log(p.scale);
}

inline double log_density(const PriorComponent& component, double x)
{
    return std::visit([x](const auto& p) { return log_density(p, x); }, component);
}

/// Closed support [lower, upper] of a prior component.
inline std::pair<double, double> support(const PriorComponent& component)
{
    static constexpr double inf = std::numeric_limits<double>::infinity();
    return std::visit(
        [](const auto& p) -> std::pair<double, double> {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, NormalPrior>)
                return {-inf, inf};
            else if constexpr (std::is_same_v<T, TruncatedNormalPrior>)
                return {p.lower, p.upper};
            else if constexpr (std::is_same_v<T, GammaPrior>)
                return {0.0, inf};
            else
                return {0.0, p.scale};
        },
        component);
}

struct PriorSpec {
    std::vector<PriorComponent> components;
};

/// Prior densities used for the stochastic volatility experiments.
inline PriorSpec default_prior(ModelId model)
{
    PriorSpec prior;
    prior.components = {NormalPrior{0.0, 0.2}, TruncatedNormalPrior{0.9, 0.05, -1.0, 1.0}, GammaPrior{2.0, 20.0}};
    if (model == ModelId::asv)
        prior.components.push_back(ScaledBetaPrior{20.0, 2.0, 2.0});
    return prior;
}

inline double log_prior(const Eigen::VectorXd& theta, const PriorSpec& prior)
{
    require(static_cast<std::size_t>(theta.size()) == prior.components.size(), ErrorCode::configuration,
        "prior has " + std::to_string(prior.components.size()) + " components but theta has "
            + std::to_string(theta.size()));
    double total = 0.0;
    for (std::size_t i = 0; i < prior.components.size(); ++i) {
        const double x = theta(static_cast<Eigen::Index>(i));
        if (std::isnan(x))
            return neg_inf;
        total += log_density(prior.components[i], x);
        if (total == neg_inf)
            return neg_inf;
    }
    return total;
}

inline double log_prior(const ThetaVector& theta, const PriorSpec& prior) { return log_prior(theta.values(), prior); }

// --- search box -----------------------------------------------------------

struct SearchBox {
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;

    std::size_t dim() const noexcept { return static_cast<std::size_t>(lower.size()); }
    Eigen::VectorXd width() const { return upper - lower; }

    bool contains(const Eigen::VectorXd& x) const
    {
        return x.size() == lower.size() && (x.array() >= lower.array()).all() && (x.array() <= upper.array()).all();
    }

    Eigen::VectorXd clamp(const Eigen::VectorXd& x) const { return x.cwiseMax(lower).cwiseMin(upper); }

    /// Clamp into [lower + m, upper - m] with m = relative_margin * width; open parameter ranges stay valid.
    Eigen::VectorXd clamp_interior(const Eigen::VectorXd& x, double relative_margin = 1e-6) const
    {
        const Eigen::VectorXd m = relative_margin * width();
        return x.cwiseMax(lower + m).cwiseMin(upper - m);
    }

    void validate() const
    {
        require(lower.size() == upper.size() && lower.size() > 0, ErrorCode::configuration,
            "search box bounds must be non-empty and of equal length");
        for (Eigen::Index i = 0; i < lower.size(); ++i)
            require(std::isfinite(lower(i)) && std::isfinite(upper(i)) && lower(i) < upper(i),
                ErrorCode::configuration, "search box component " + std::to_string(i) + " needs finite lower < upper");
    }

    /// Bounds must sit inside the closed support of each prior component.
    void validate_against(const PriorSpec& prior) const
    {
        validate();
        require(dim() == prior.components.size(), ErrorCode::configuration,
            "search box dimension does not match the prior");
        for (std::size_t i = 0; i < dim(); ++i) {
            const auto [lo, hi] = support(prior.components[i]);
            const auto k = static_cast<Eigen::Index>(i);
            require(lower(k) >= lo && upper(k) <= hi, ErrorCode::configuration,
                "search box component " + std::to_string(i) + " leaves the prior support");
        }
    }
};

inline SearchBox default_search_box(ModelId model)
{
    SearchBox box;
    if (model == ModelId::gsv) {
        box.lower = Eigen::Vector3d(0.0, 0.0, 0.01);
        box.upper = Eigen::Vector3d(1.0, 1.0, 1.0);
    } else {
        box.lower = Eigen::Vector4d(0.0, 0.0, 0.01, 1.2);
        box.upper = Eigen::Vector4d(1.0, 1.0, 1.0, 2.0);
    }
    return box;
}

// --- simulation -----------------------------------------------------------

/**
 * Zero-mean symmetric alpha-stable variate with scale gamma.
 *
 * v1 ~ Exp(1), v2 ~ U(-pi/2, pi/2) and
 *   gamma * sin(alpha v2) / cos(v2)^(1/alpha) * [cos((alpha - 1) v2) / v1]^((1 - alpha) / alpha).
 * alpha = 2 gives N(0, 2 gamma^2).
 */
inline double stable_transform(double alpha, double gamma, double v1, double v2)
{
    return gamma * std::sin(alpha * v2) / std::pow(std::cos(v2), 1.0 / alpha)
        * std::pow(std::cos((alpha - 1.0) * v2) / v1, (1.0 - alpha) / alpha);
}

inline void validate_stable(double alpha, double gamma)
{
    if (alpha == 1.0)
        fail(ErrorCode::unsupported, "alpha-stable sampling for alpha = 1 is not supported");
    require(alpha > 0.0 && alpha <= 2.0, ErrorCode::domain, "alpha must lie in (0, 2], got " + std::to_string(alpha));
    require(gamma > 0.0, ErrorCode::domain, "stable scale must be positive, got " + std::to_string(gamma));
}

inline double stable_sample(double alpha, double gamma, RngStream& rng)
{
    validate_stable(alpha, gamma);
    const double v1 = rng.exponential();
    const double v2 = std::numbers::pi * (rng.uniform_open() - 0.5);
    return stable_transform(alpha, gamma, v1, v2);
}

inline double gsv_log_obs_density(double y, double x) { return -log_sqrt_2pi - 0.5 * x - 0.5 * y * y * std::exp(-x); }

struct SimulatedSeries {
    Eigen::VectorXd states;       // x_0, ..., x_T
    Eigen::VectorXd observations; // y_1, ..., y_T
};

inline SimulatedSeries simulate(const ThetaVector& theta, std::size_t T, RngStream& rng,
    ObservationScale scale = ObservationScale::stable_scale)
{
    theta.validate();
    require(T >= 1, ErrorCode::contract, "simulate needs T >= 1");
    if (theta.model() == ModelId::asv)
        validate_stable(theta.alpha(), 1.0);

    const double mu = theta.mu();
    const double phi = theta.phi();
    const double sigma = theta.sigma_v();

    SimulatedSeries out;
    out.states.resize(static_cast<Eigen::Index>(T + 1));
    out.observations.resize(static_cast<Eigen::Index>(T));
    out.states(0) = rng.normal(mu, sigma / std::sqrt(1.0 - phi * phi));
    for (std::size_t t = 1; t <= T; ++t) {
        const auto i = static_cast<Eigen::Index>(t);
        out.states(i) = mu + phi * (out.states(i - 1) - mu) + sigma * rng.normal();
        if (theta.model() == ModelId::gsv)
            out.observations(i - 1) = std::exp(0.5 * out.states(i)) * rng.normal();
        else
            out.observations(i - 1) = stable_sample(theta.alpha(), observation_scale(scale, out.states(i)), rng);
    }
    return out;
}

} // namespace gpoabc

#endif
