#ifndef GPOABC_PIPELINE_HPP
#define GPOABC_PIPELINE_HPP

#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "copula.hpp"
#include "errors.hpp"
#include "gpo.hpp"
#include "io.hpp"
#include "models.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "smc.hpp"

namespace gpoabc {

enum class Estimator { abc, bpf };

inline Estimator parse_estimator(std::string_view text)
{
    if (text == "abc")
        return Estimator::abc;
    if (text == "bpf")
        return Estimator::bpf;
    fail(ErrorCode::configuration, "estimator must be 'abc' or 'bpf', got '" + std::string(text) + "'");
}

inline std::string_view to_string(Estimator e) { return e == Estimator::abc ? "abc" : "bpf"; }

/// Everything needed to turn theta into a log-posterior estimate for one series.
struct EstimatorSettings {
    ModelId model = ModelId::gsv;
    PriorSpec prior;
    std::size_t particles = 2000;
    Estimator estimator = Estimator::abc;
    AbcConfig abc;
    ObservationScale scale = ObservationScale::stable_scale;

    void validate() const
    {
        require(particles >= 2, ErrorCode::configuration, "particle count must be >= 2");
        require(prior.components.size() == parameter_count(model), ErrorCode::configuration,
            "prior needs one component per parameter");
        require(estimator == Estimator::abc || model == ModelId::gsv, ErrorCode::configuration,
            "the exact-density filter is only available for GSV");
        if (estimator == Estimator::abc)
            abc.validate();
    }

    static EstimatorSettings defaults(ModelId model)
    {
        EstimatorSettings s;
        s.model = model;
        s.prior = default_prior(model);
        s.abc.epsilon = model == ModelId::gsv ? 0.2 : 0.1;
        s.abc.psi = default_psi(model);
        return s;
    }
};

/// Observations the filter sees: the perturbed series for ABC, y itself otherwise.
inline Eigen::VectorXd prepare_observations(const EstimatorSettings& s, const Eigen::VectorXd& y, RngStream& rng)
{
    return s.estimator == Estimator::abc ? perturb_observations(y, s.abc, rng) : y;
}

inline LogPosteriorFn make_evaluator(const EstimatorSettings& s, const Eigen::VectorXd& observations)
{
    s.validate();
    if (s.estimator == Estimator::bpf)
        return make_bpf_evaluator(observations, s.particles, s.prior);
    return make_abc_evaluator(s.model, observations, s.particles, s.abc, s.prior, s.scale);
}

/// Full posterior evaluation at theta, including the filtered log-volatility.
inline PosteriorEvaluation evaluate_at(const EstimatorSettings& s, const Eigen::VectorXd& theta,
    const Eigen::VectorXd& observations, RngStream& rng)
{
    const ThetaVector t(s.model, theta);
    if (s.estimator == Estimator::bpf)
        return bpf_log_posterior(t, observations, s.particles, s.prior, rng);
    return smc_abc_log_posterior(t, observations, s.particles, s.abc, s.prior, rng, s.scale);
}

// --- multi-asset simulation ---------------------------------------------------

struct PanelSeries {
    Eigen::MatrixXd states;       // (T + 1) x d
    Eigen::MatrixXd observations; // T x d
};

/**
 * d independent log-volatility paths sharing theta. GSV observation noise is
 * equicorrelated with coefficient rho; ASV panels need rho = 0.
 */
inline PanelSeries simulate_panel(const ThetaVector& theta, std::size_t T, std::size_t assets, double rho,
    const RngStream& rng, ObservationScale scale = ObservationScale::stable_scale)
{
    require(assets >= 1, ErrorCode::contract, "panel needs at least one asset");
    require(rho == 0.0 || theta.model() == ModelId::gsv, ErrorCode::unsupported,
        "correlated observation noise is only available for GSV");
    const auto d = static_cast<Eigen::Index>(assets);
    PanelSeries out;
    out.states.resize(static_cast<Eigen::Index>(T + 1), d);
    out.observations.resize(static_cast<Eigen::Index>(T), d);
    if (rho == 0.0) {
        for (Eigen::Index i = 0; i < d; ++i) {
            RngStream r = assets == 1 ? rng : rng.split(static_cast<std::uint64_t>(i));
            const SimulatedSeries s = simulate(theta, T, r, scale);
            out.states.col(i) = s.states;
            out.observations.col(i) = s.observations;
        }
        return out;
    }

    require(rho > -1.0 / static_cast<double>(std::max<std::size_t>(assets - 1, 1)) && rho < 1.0, ErrorCode::domain,
        "equicorrelation coefficient makes the covariance indefinite");
    theta.validate();
    require(T >= 1, ErrorCode::contract, "simulate needs T >= 1");
    Eigen::MatrixXd R = Eigen::MatrixXd::Constant(d, d, rho);
    R.diagonal().setOnes();
    const Eigen::MatrixXd L = R.llt().matrixL();
    RngStream noise = rng.split(assets);
    for (Eigen::Index i = 0; i < d; ++i) {
        RngStream r = rng.split(static_cast<std::uint64_t>(i));
        out.states(0, i) = r.normal(theta.mu(), theta.sigma_v() / std::sqrt(1.0 - theta.phi() * theta.phi()));
        for (Eigen::Index t = 1; t <= static_cast<Eigen::Index>(T); ++t)
            out.states(t, i) = theta.mu() + theta.phi() * (out.states(t - 1, i) - theta.mu()) + theta.sigma_v() * r.normal();
    }
    Eigen::VectorXd z(d);
    for (Eigen::Index t = 0; t < static_cast<Eigen::Index>(T); ++t) {
        for (Eigen::Index i = 0; i < d; ++i)
            z(i) = noise.normal();
        const Eigen::VectorXd e = L * z;
        for (Eigen::Index i = 0; i < d; ++i)
            out.observations(t, i) = std::exp(0.5 * out.states(t + 1, i)) * e(i);
    }
    return out;
}

// --- two-stage copula VaR -------------------------------------------------------

struct MarginFit {
    MarginModel margin;
    LaplacePosterior posterior;
    GpoRunState state;
};

/**
 * Stage 1 for one asset: GPO on the first `estimation_points` observations,
 * Laplace extraction, then a filter pass at the MAP over the whole series.
 * Streams: 0 perturbation, 1 GPO, 2 filter at the MAP.
 */
inline MarginFit fit_margin(const std::string& asset, const Eigen::VectorXd& y, std::size_t estimation_points,
    const EstimatorSettings& settings, const SearchBox& box, const GpoConfig& gpo, const LaplaceOptions& laplace,
    const RngStream& rng)
{
    require(estimation_points >= 2 && estimation_points <= static_cast<std::size_t>(y.size()), ErrorCode::configuration,
        "estimation points must lie in [2, T]");
    const auto n = static_cast<Eigen::Index>(estimation_points);
    RngStream perturb_rng = rng.split(0);
    const Eigen::VectorXd observations = prepare_observations(settings, y, perturb_rng);
    const LogPosteriorFn evaluator = make_evaluator(settings, observations.head(n));

    RngStream gpo_rng = rng.split(1);
    GpoResult run = gpo_run(evaluator, box, gpo, gpo_rng);
    MarginFit fit;
    fit.posterior = extract_laplace(run.model, box, laplace);
    fit.state = std::move(run.state);

    RngStream filter_rng = rng.split(2);
    const PosteriorEvaluation at_map = evaluate_at(settings, fit.posterior.theta_map, observations, filter_rng);
    require(!at_map.estimate.degenerate && at_map.filtered_states.size() == y.size(), ErrorCode::numerical,
        "filter at the MAP estimate of '" + asset + "' degenerated");
    fit.margin.asset = asset;
    fit.margin.model = settings.model;
    fit.margin.theta = fit.posterior.theta_map;
    fit.margin.log_volatility = at_map.filtered_states;
    fit.margin.residuals = filtered_residuals(y.head(n), at_map.filtered_states.head(n));
    fit.margin.distribution = EmpiricalMargin(fit.margin.residuals);
    return fit;
}

struct VarPipelineSettings {
    EstimatorSettings estimator;
    SearchBox box;
    GpoConfig gpo;
    LaplaceOptions laplace;
    std::size_t estimation_points = 465;
    double alpha_bar = 0.99;
    std::size_t draws = 100000;
    Eigen::VectorXd weights; // empty: equal weights
    double nu_min = 2.1;
    double nu_max = 100.0;
    std::size_t threads = 1;
};

struct VarPipelineResult {
    std::vector<MarginFit> fits;
    CopulaModel copula;
    DofFit dof;
    Eigen::VectorXd weights;
    Eigen::VectorXd var;      // every period
    Eigen::VectorXd realised; // portfolio return per period
    std::size_t validation_start = 0;
    BacktestResult validation;
};

/**
 * Margins (in parallel, one stream per asset), Kendall-tau correlation and MAP
 * degrees of freedom on the estimation window, then VaR for every period from
 * one shared set of copula residual draws, back-tested on the held-out part.
 */
inline VarPipelineResult run_var_pipeline(const ReturnSeries& data, const VarPipelineSettings& s, const RngStream& rng)
{
    const std::size_t d = data.assets.size();
    require(d >= 2, ErrorCode::configuration, "the copula pipeline needs at least two assets");
    require(s.estimation_points < data.length(), ErrorCode::configuration,
        "estimation window must leave at least one validation period");
    VarPipelineResult out;
    out.weights = s.weights.size() == 0 ? Eigen::VectorXd::Constant(static_cast<Eigen::Index>(d), 1.0 / double(d))
                                        : s.weights;
    require(out.weights.size() == static_cast<Eigen::Index>(d), ErrorCode::configuration,
        "portfolio weights need one entry per asset");
    require(std::abs(out.weights.sum() - 1.0) <= 1e-9, ErrorCode::configuration, "portfolio weights must sum to 1");
    require(s.alpha_bar > 0.0 && s.alpha_bar < 1.0, ErrorCode::configuration, "VaR level must lie in (0, 1)");

    out.fits.resize(d);
    const RngStream margin_streams = rng.split(0);
    parallel_for(d, s.threads, [&](std::size_t i) {
        out.fits[i] = fit_margin(data.assets[i], data.asset(i), s.estimation_points, s.estimator, s.box, s.gpo, s.laplace,
            margin_streams.split(i));
    });

    const auto n = static_cast<Eigen::Index>(s.estimation_points);
    Eigen::MatrixXd U(n, static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < d; ++i)
        U.col(static_cast<Eigen::Index>(i)) = probability_transform(out.fits[i].margin.residuals);
    out.copula.correlation = kendall_tau_to_correlation(U, data.assets);
    out.dof = fit_t_copula_dof(U, out.copula.correlation, s.nu_min, s.nu_max);
    out.copula.nu = out.dof.nu;
    for (const auto& f : out.fits)
        out.copula.margins.push_back(f.margin);

    RngStream draw_rng = rng.split(1);
    const Eigen::MatrixXd residuals = residual_draws(out.copula, s.draws, draw_rng);
    const auto T = static_cast<Eigen::Index>(data.length());
    out.var.resize(T);
    out.realised = data.returns * out.weights;
    Eigen::VectorXd x(static_cast<Eigen::Index>(d));
    for (Eigen::Index t = 0; t < T; ++t) {
        for (std::size_t i = 0; i < d; ++i)
            x(static_cast<Eigen::Index>(i)) = out.fits[i].margin.log_volatility(t);
        out.var(t) = var_from_draws(residuals, x, out.weights, s.alpha_bar);
    }
    out.validation_start = s.estimation_points;
    out.validation = backtest(out.var.tail(T - n), out.realised.tail(T - n), s.alpha_bar);
    return out;
}

} // namespace gpoabc

#endif
