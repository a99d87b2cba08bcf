#ifndef GPOABC_SMC_HPP
#define GPOABC_SMC_HPP

#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "errors.hpp"
#include "models.hpp"
#include "rng.hpp"
#include "special.hpp"

namespace gpoabc {

// --- ABC perturbation -----------------------------------------------------

enum class Psi { identity, arctan };

inline double apply_psi(Psi psi, double y) { return psi == Psi::identity ? y : std::atan(y); }

inline Psi parse_psi(std::string_view text)
{
    if (text == "identity")
        return Psi::identity;
    if (text == "arctan")
        return Psi::arctan;
    fail(ErrorCode::configuration, "unknown psi transform '" + std::string(text) + "'");
}

inline std::string_view to_string(Psi psi) { return psi == Psi::identity ? "identity" : "arctan"; }

/// Only the Gaussian ABC kernel is provided.
enum class AbcKernel { gaussian };

struct AbcConfig {
    double epsilon = 0.2;
    Psi psi = Psi::identity;
    AbcKernel kernel = AbcKernel::gaussian;

    void validate() const
    {
        require(epsilon > 0.0 && std::isfinite(epsilon), ErrorCode::configuration, "ABC tolerance epsilon must be > 0");
    }
};

/// Default transform: identity for GSV, arctan for ASV.
inline Psi default_psi(ModelId model) { return model == ModelId::gsv ? Psi::identity : Psi::arctan; }

/// psi(y_t) + z_t with z_t ~ N(0, eps^2). Draw once per inference run.
inline Eigen::VectorXd perturb_observations(const Eigen::VectorXd& y, const AbcConfig& cfg, RngStream& rng)
{
    cfg.validate();
    Eigen::VectorXd out(y.size());
    for (Eigen::Index t = 0; t < y.size(); ++t)
        out(t) = apply_psi(cfg.psi, y(t)) + cfg.epsilon * rng.normal();
    return out;
}

// --- particle system ------------------------------------------------------

struct ParticleSystem {
    std::vector<double> particles;
    std::vector<double> log_weights; // log W_t^(i)
    std::vector<double> weights;     // normalised w_t^(i)
    std::vector<std::size_t> ancestors;

    explicit ParticleSystem(std::size_t n = 0)
        : particles(n), log_weights(n, 0.0), weights(n, n ? 1.0 / static_cast<double>(n) : 0.0), ancestors(n)
    {
        for (std::size_t i = 0; i < n; ++i)
            ancestors[i] = i;
    }

    std::size_t size() const noexcept { return particles.size(); }

    /// Normalises the log-weights into `weights` and returns log(sum_i W^(i)),
    /// or -inf (weights left untouched) when every weight is zero.
    double normalise()
    {
        double top = neg_inf;
        for (double& lw : log_weights) {
            if (std::isnan(lw))
                lw = neg_inf;
            top = std::max(top, lw);
        }
        if (top == neg_inf)
            return neg_inf;
        double sum = 0.0;
        for (std::size_t i = 0; i < size(); ++i) {
            weights[i] = std::exp(log_weights[i] - top);
            sum += weights[i];
        }
        for (double& w : weights)
            w /= sum;
        return top + std::log(sum);
    }
};

/**
 * Systematic resampling: grid points (u + k) / N, k = 0..N-1, are matched against
 * the cumulative weights. Index j receives one copy per grid point in
 * [C_{j-1}, C_j).
 */
inline void systematic_resample(std::span<const double> weights, double u, std::span<std::size_t> ancestors)
{
    const std::size_t n = weights.size();
    require(n >= 1 && ancestors.size() == n, ErrorCode::contract, "systematic_resample needs N >= 1 matching outputs");
    require(u >= 0.0 && u < 1.0, ErrorCode::contract, "systematic_resample offset must lie in [0, 1)");
    double total = 0.0;
    for (double w : weights)
        total += w;
    require(std::abs(total - 1.0) <= 1e-9, ErrorCode::contract,
        "systematic_resample weights sum to " + std::to_string(total) + ", not 1");

    const double step = 1.0 / static_cast<double>(n);
    double cumulative = weights[0];
    std::size_t j = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const double point = (u + static_cast<double>(k)) * step;
        while (j + 1 < n && point >= cumulative) {
            ++j;
            cumulative += weights[j];
        }
        ancestors[k] = j;
    }
}

inline std::vector<std::size_t> systematic_resample(std::span<const double> weights, double u)
{
    std::vector<std::size_t> out(weights.size());
    systematic_resample(weights, u, out);
    return out;
}

// --- bootstrap filter -----------------------------------------------------

/// A scalar-state model the bootstrap filter can run on. `log_weight` may draw
/// auxiliary variables (the ABC case) from the stream it is given.
template <typename M>
concept FilterModel = requires(const M& m, double x, std::size_t t, RngStream& rng) {
    { m.length() } -> std::convertible_to<std::size_t>;
    { m.sample_initial(rng) } -> std::convertible_to<double>;
    { m.propagate(x, rng) } -> std::convertible_to<double>;
    { m.log_weight(t, x, rng) } -> std::convertible_to<double>;
};

struct FilterResult {
    double log_likelihood = 0.0;
    Eigen::VectorXd filtered_states; // x_hat_1..x_hat_T
    bool degenerate = false;
    std::size_t degenerate_step = 0; // 1-based time index when degenerate
};

/**
 * Bootstrap particle filter with systematic resampling at every step.
 *
 * log p_hat(y_{1:T}) = sum_t log(sum_i W_t^(i)) - T log N. An all-zero weight
 * step stops the filter and returns a degenerate result with -inf likelihood.
 */
template <FilterModel M>
FilterResult run_bootstrap_filter(const M& model, std::size_t particle_count, RngStream& rng,
    ParticleSystem* final_system = nullptr)
{
    require(particle_count >= 2, ErrorCode::contract, "particle filter needs N >= 2");
    const std::size_t T = model.length();
    const double log_n = std::log(static_cast<double>(particle_count));

    FilterResult result;
    result.filtered_states = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(T));

    ParticleSystem system(particle_count);
    std::vector<double> previous(particle_count);
    for (auto& x : system.particles)
        x = model.sample_initial(rng);

    for (std::size_t t = 0; t < T; ++t) {
        systematic_resample(system.weights, rng.uniform(), system.ancestors);
        previous.swap(system.particles);
        for (std::size_t i = 0; i < particle_count; ++i)
            system.particles[i] = model.propagate(previous[system.ancestors[i]], rng);
        for (std::size_t i = 0; i < particle_count; ++i)
            system.log_weights[i] = model.log_weight(t, system.particles[i], rng);

        const double log_sum = system.normalise();
        if (log_sum == neg_inf) {
            result.log_likelihood = neg_inf;
            result.degenerate = true;
            result.degenerate_step = t + 1;
            break;
        }
        result.log_likelihood += log_sum - log_n;

        double mean = 0.0;
        for (std::size_t i = 0; i < particle_count; ++i)
            mean += system.weights[i] * system.particles[i];
        result.filtered_states(static_cast<Eigen::Index>(t)) = mean;
    }
    if (final_system)
        *final_system = std::move(system);
    return result;
}

// --- stochastic volatility filter models -----------------------------------

/// AR(1) log-volatility dynamics shared by GSV and ASV.
struct VolatilityDynamics {
    double mu;
    double phi;
    double sigma_v;

    double sample_initial(RngStream& rng) const
    {
        return rng.normal(mu, sigma_v / std::sqrt(1.0 - phi * phi));
    }
    double propagate(double x, RngStream& rng) const { return mu + phi * (x - mu) + sigma_v * rng.normal(); }
};

/// GSV with the exact observation density as weight.
class GsvExactModel : public VolatilityDynamics {
public:
    GsvExactModel(const ThetaVector& theta, std::span<const double> y)
        : VolatilityDynamics{theta.mu(), theta.phi(), theta.sigma_v()}, y_(y)
    {
    }

    std::size_t length() const noexcept { return y_.size(); }
    double log_weight(std::size_t t, double x, RngStream&) const { return gsv_log_obs_density(y_[t], x); }

private:
    std::span<const double> y_;
};

/// Perturbed model: simulate an observation from the particle and weight it by
/// the Gaussian kernel N(y_check_t; psi(y_sim), eps^2).
class AbcModel : public VolatilityDynamics {
public:
    AbcModel(const ThetaVector& theta, std::span<const double> perturbed, const AbcConfig& cfg, ObservationScale scale)
        : VolatilityDynamics{theta.mu(), theta.phi(), theta.sigma_v()}, model_(theta.model()), alpha_(theta.alpha()),
          y_(perturbed), cfg_(cfg), scale_(scale), log_norm_(-log_sqrt_2pi - std::log(cfg.epsilon)),
          inv_eps2_(1.0 / (cfg.epsilon * cfg.epsilon))
    {
    }

    std::size_t length() const noexcept { return y_.size(); }

    double simulate_observation(double x, RngStream& rng) const
    {
        if (model_ == ModelId::gsv)
            return std::exp(0.5 * x) * rng.normal();
        const double v1 = rng.exponential();
        const double v2 = std::numbers::pi * (rng.uniform_open() - 0.5);
        return stable_transform(alpha_, observation_scale(scale_, x), v1, v2);
    }

    double log_weight(std::size_t t, double x, RngStream& rng) const
    {
        const double diff = y_[t] - apply_psi(cfg_.psi, simulate_observation(x, rng));
        return log_norm_ - 0.5 * diff * diff * inv_eps2_;
    }

private:
    ModelId model_;
    double alpha_;
    std::span<const double> y_;
    AbcConfig cfg_;
    ObservationScale scale_;
    double log_norm_;
    double inv_eps2_;
};

// --- log-posterior estimators ----------------------------------------------

struct LogPosteriorEstimate {
    Eigen::VectorXd theta;
    double xi = neg_inf;       // log_likelihood + log_prior
    double log_likelihood = neg_inf;
    double log_prior = neg_inf;
    bool degenerate = false;
    std::size_t particles = 0;
    double epsilon = 0.0; // 0 for the exact-density filter
    std::uint64_t stream_key = 0;
};

struct PosteriorEvaluation {
    LogPosteriorEstimate estimate;
    Eigen::VectorXd filtered_states;
};

namespace detail {

    template <FilterModel M>
    PosteriorEvaluation evaluate_posterior(const ThetaVector& theta, const M& model, std::size_t particles,
        double epsilon, const PriorSpec& prior, RngStream& rng)
    {
        PosteriorEvaluation out;
        out.estimate.theta = theta.values();
        out.estimate.particles = particles;
        out.estimate.epsilon = epsilon;
        out.estimate.stream_key = rng.key();
        out.estimate.log_prior = log_prior(theta, prior);
        if (out.estimate.log_prior == neg_inf || !theta.is_valid())
            return out;
        const FilterResult filtered = run_bootstrap_filter(model, particles, rng);
        out.estimate.log_likelihood = filtered.log_likelihood;
        out.estimate.degenerate = filtered.degenerate;
        out.estimate.xi = filtered.degenerate ? neg_inf : filtered.log_likelihood + out.estimate.log_prior;
        out.filtered_states = filtered.filtered_states;
        return out;
    }

} // namespace detail

/// SMC-ABC estimate of log p(theta | y) on already perturbed data. Theta outside
/// the prior support returns xi = -inf without running the filter.
inline PosteriorEvaluation smc_abc_log_posterior(const ThetaVector& theta, const Eigen::VectorXd& perturbed,
    std::size_t particles, const AbcConfig& cfg, const PriorSpec& prior, RngStream& rng,
    ObservationScale scale = ObservationScale::stable_scale)
{
    cfg.validate();
    const AbcModel model(theta, std::span<const double>(perturbed.data(), static_cast<std::size_t>(perturbed.size())),
        cfg, scale);
    return detail::evaluate_posterior(theta, model, particles, cfg.epsilon, prior, rng);
}

/// Exact-density bootstrap filter estimate (GSV only).
inline PosteriorEvaluation bpf_log_posterior(const ThetaVector& theta, const Eigen::VectorXd& y,
    std::size_t particles, const PriorSpec& prior, RngStream& rng)
{
    require(theta.model() == ModelId::gsv, ErrorCode::configuration,
        "the exact-density filter needs an evaluable observation density (GSV only)");
    const GsvExactModel model(theta, std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
    return detail::evaluate_posterior(theta, model, particles, 0.0, prior, rng);
}

/// theta -> xi, drawing filter randomness from the stream it is handed.
using LogPosteriorFn = std::function<double(const Eigen::VectorXd&, RngStream&)>;

inline LogPosteriorFn make_bpf_evaluator(Eigen::VectorXd y, std::size_t particles, PriorSpec prior)
{
    return [y = std::move(y), particles, prior = std::move(prior)](const Eigen::VectorXd& theta, RngStream& rng) {
        return bpf_log_posterior(ThetaVector(ModelId::gsv, theta), y, particles, prior, rng).estimate.xi;
    };
}

inline LogPosteriorFn make_abc_evaluator(ModelId model, Eigen::VectorXd perturbed, std::size_t particles,
    AbcConfig cfg, PriorSpec prior, ObservationScale scale = ObservationScale::stable_scale)
{
    return [model, y = std::move(perturbed), particles, cfg, prior = std::move(prior), scale](
               const Eigen::VectorXd& theta, RngStream& rng) {
        return smc_abc_log_posterior(ThetaVector(model, theta), y, particles, cfg, prior, rng, scale).estimate.xi;
    };
}

} // namespace gpoabc

#endif
