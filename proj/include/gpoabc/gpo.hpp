#ifndef GPOABC_GPO_HPP
#define GPOABC_GPO_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "errors.hpp"
#include "gp.hpp"
#include "models.hpp"
#include "optim.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "smc.hpp"
#include "special.hpp"

namespace gpoabc {

struct AcquisitionConfig {
    double zeta = 0.01;
    Eigen::VectorXd jitter_variances; // diagonal of the jitter covariance
    std::optional<double> ei_threshold;
    DirectBudget direct{};
    double sigma_floor = 1e-10;

    void validate(std::size_t dim) const
    {
        require(zeta >= 0.0, ErrorCode::configuration, "zeta must be >= 0");
        require(static_cast<std::size_t>(jitter_variances.size()) == dim, ErrorCode::configuration,
            "jitter covariance diagonal must have one entry per parameter");
        require((jitter_variances.array() >= 0.0).all(), ErrorCode::configuration,
            "jitter covariance diagonal must be non-negative");
        require(!ei_threshold || *ei_threshold > 0.0, ErrorCode::configuration, "EI threshold must be > 0");
        direct.validate();
    }
};

struct GpoConfig {
    std::size_t initial_samples = 50; // L
    std::size_t iterations = 450;     // K
    std::size_t refit_interval = 25;
    AcquisitionConfig acquisition;
    std::size_t initial_restarts = 5;
    std::size_t refit_restarts = 1;
    BoundedMaximizeOptions hyper_options{60, 1e-6, 1e-10};
    std::size_t threads = 1; // initial design only

    /// zeta = 0.01, Sigma = 0.01 I, refit every 25th iteration, L = 50, K = 450.
    static GpoConfig defaults(std::size_t dim)
    {
        GpoConfig cfg;
        cfg.acquisition.jitter_variances = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(dim), 0.01);
        return cfg;
    }

    void validate(std::size_t dim) const
    {
        require(initial_samples >= 2, ErrorCode::configuration, "GPO needs at least two initial samples");
        require(refit_interval >= 1, ErrorCode::configuration, "refit interval must be >= 1");
        acquisition.validate(dim);
    }
};

/// Standard normal density times sigma plus improvement times CDF; 0 below sigma_floor.
inline double expected_improvement(double mean, double sd, double mu_max, double zeta, double sigma_floor = 1e-10)
{
    if (!(sd > sigma_floor))
        return 0.0;
    const double z = (mean - mu_max - zeta) / sd;
    return std::max(0.0, sd * (z * std_normal_cdf(z) + std_normal_pdf(z)));
}

inline double expected_improvement(const Eigen::VectorXd& point, const GpModel& model, double mu_max, double zeta,
    double sigma_floor = 1e-10)
{
    const GpPrediction pred = model.predict(point);
    return expected_improvement(pred.mean, std::sqrt(pred.variance), mu_max, zeta, sigma_floor);
}

/// max over the sampled points of the posterior mean.
inline double compute_mu_max(const GpModel& model)
{
    require(model.dataset().size() > 0, ErrorCode::state, "mu_max needs at least one sampled point");
    return model.training_means().maxCoeff();
}

struct Proposal {
    Eigen::VectorXd point;  // jittered and clamped
    Eigen::VectorXd argmax; // DIRECT solution
    double ei = 0.0;        // EI at argmax
};

/// argmax of EI over the box by DIRECT, plus N(0, Sigma) jitter, clamped to the box
/// interior (1e-6 of the width inside each bound).
inline Proposal propose_next(const GpModel& model, double mu_max, const SearchBox& box, const AcquisitionConfig& cfg,
    RngStream& rng)
{
    cfg.validate(box.dim());
    const BatchObjective ei = [&](const Eigen::MatrixXd& pts, Eigen::VectorXd& values) {
        const auto pred = model.predict_batch(pts);
        for (Eigen::Index j = 0; j < pts.cols(); ++j)
            values(j) = expected_improvement(pred.mean(j), std::sqrt(pred.variance(j)), mu_max, cfg.zeta,
                cfg.sigma_floor);
    };
    const DirectResult found = direct_maximize(ei, box, cfg.direct);
    Proposal out;
    out.argmax = found.argmax;
    out.ei = found.max_value;
    out.point = found.argmax;
    for (Eigen::Index i = 0; i < out.point.size(); ++i)
        out.point(i) += std::sqrt(cfg.jitter_variances(i)) * rng.normal();
    out.point = box.clamp_interior(out.point);
    return out;
}

// --- run state ------------------------------------------------------------

enum class GpoPhase { initial_design, iteration };

struct GpoTraceRecord {
    GpoPhase phase = GpoPhase::iteration;
    std::size_t index = 0;   // k for iterations, design index (1-based) for the initial design
    Eigen::VectorXd theta;
    double xi = neg_inf;     // raw evaluator output, may be -inf
    double xi_used = neg_inf; // value stored in the dataset (floored if needed)
    double ei = std::numeric_limits<double>::quiet_NaN(); // EI at proposal time
    double mu_max = std::numeric_limits<double>::quiet_NaN();
    std::string hyper_hash;
};

inline std::string hyperparameter_hash(const GpHyperparameters& hyp)
{
    std::uint64_t h = 0x84222325cbf29ce4ULL;
    auto absorb = [&h](double v) {
        std::uint64_t bits = 0;
        std::memcpy(&bits, &v, sizeof bits);
        h = detail::mix64(h ^ bits);
    };
    absorb(hyp.bias_variance);
    absorb(hyp.matern_variance);
    for (Eigen::Index i = 0; i < hyp.length_scales.size(); ++i)
        absorb(hyp.length_scales(i));
    absorb(hyp.noise_variance);
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

struct GpoRunState {
    std::size_t iteration = 0; // k
    SurrogateDataset dataset;
    GpHyperparameters hyperparameters;
    double mu_max = neg_inf;
    std::vector<GpoTraceRecord> initial_design;
    std::vector<GpoTraceRecord> trace; // one record per iteration
    std::size_t refit_interval = 25;
    std::size_t evaluations = 0;
    std::size_t floored = 0;
    std::size_t refits = 0;
    bool converged_by_ei = false;
};

struct GpoResult {
    GpoRunState state;
    GpModel model;
};

using GpoTraceSink = std::function<void(const GpoTraceRecord&)>;

/**
 * Replaces -inf evaluations by (min finite - 3 * range) of the finite values
 * seen so far.
 */
class FloorPolicy {
public:
    void observe(double xi)
    {
        if (!std::isfinite(xi))
            return;
        min_ = std::min(min_, xi);
        max_ = std::max(max_, xi);
        ++finite_;
    }

    bool ready() const noexcept { return finite_ > 0; }

    double floor_value() const
    {
        require(ready(), ErrorCode::numerical, "no finite log-posterior evaluations to derive a floor from");
        double range = max_ - min_;
        if (!(range > 0.0))
            range = std::max(1.0, std::abs(min_));
        return min_ - 3.0 * range;
    }

    double apply(double xi) const { return std::isfinite(xi) ? xi : floor_value(); }

private:
    double min_ = std::numeric_limits<double>::infinity();
    double max_ = -std::numeric_limits<double>::infinity();
    std::size_t finite_ = 0;
};

/// Data-driven starting point for empirical Bayes, clamped into the bounds.
inline GpHyperparameters initial_hyperparameters(const SurrogateDataset& data, const SearchBox& box,
    const HyperparameterBounds& bounds)
{
    const double mean = data.values.mean();
    const double var = data.size() > 1 ? (data.values.array() - mean).square().sum() / double(data.size() - 1) : 1.0;
    GpHyperparameters h;
    h.bias_variance = std::max(mean * mean, 1e-6);
    h.matern_variance = std::max(var, 1e-6);
    h.length_scales = 0.2 * box.width();
    h.noise_variance = std::max(1e-2 * var, 1e-6);
    return bounds.clamp(h);
}

namespace stream {
    inline constexpr std::uint64_t design = 1;
    inline constexpr std::uint64_t evaluation = 2;
    inline constexpr std::uint64_t jitter = 3;
    inline constexpr std::uint64_t hyper = 4;
} // namespace stream

/**
 * GPO loop: Latin hypercube design of L points, empirical-Bayes fit, then K
 * rounds of evaluate -> (periodic refit) -> mu_max -> propose.
 *
 * Evaluation j (0-based, design first) draws from rng.split(evaluation).split(j),
 * so the initial design may be evaluated on several threads without changing
 * the result.
 */
inline GpoResult gpo_run(const LogPosteriorFn& evaluator, const SearchBox& box, const GpoConfig& cfg, RngStream& rng,
    const GpoTraceSink& sink = {}, std::optional<HyperparameterBounds> bounds_override = std::nullopt)
{
    box.validate();
    cfg.validate(box.dim());
    const HyperparameterBounds bounds = bounds_override ? *bounds_override : HyperparameterBounds::for_box(box);
    const RngStream eval_streams = rng.split(stream::evaluation);
    const RngStream jitter_streams = rng.split(stream::jitter);
    const RngStream hyper_streams = rng.split(stream::hyper);

    GpoRunState state;
    state.refit_interval = cfg.refit_interval;
    state.dataset = SurrogateDataset(box.dim());
    FloorPolicy floor;

    // Initial design.
    RngStream design_rng = rng.split(stream::design);
    const Eigen::MatrixXd design = latin_hypercube(cfg.initial_samples, box, design_rng);
    std::vector<double> design_values(cfg.initial_samples);
    parallel_for(cfg.initial_samples, cfg.threads, [&](std::size_t j) {
        RngStream eval_rng = eval_streams.split(j);
        design_values[j] = evaluator(design.row(static_cast<Eigen::Index>(j)).transpose(), eval_rng);
    });
    for (double v : design_values)
        floor.observe(v);
    for (std::size_t j = 0; j < cfg.initial_samples; ++j) {
        GpoTraceRecord rec;
        rec.phase = GpoPhase::initial_design;
        rec.index = j + 1;
        rec.theta = design.row(static_cast<Eigen::Index>(j)).transpose();
        rec.xi = design_values[j];
        rec.xi_used = floor.apply(rec.xi);
        if (!std::isfinite(rec.xi))
            ++state.floored;
        state.dataset.add(rec.theta, rec.xi_used);
        state.initial_design.push_back(std::move(rec));
    }
    state.evaluations = cfg.initial_samples;

    auto refit = [&](std::size_t restarts, const GpHyperparameters& start) {
        RngStream r = hyper_streams.split(state.refits++);
        return estimate_hyperparameters(state.dataset, start, bounds, restarts, r, cfg.hyper_options).hyperparameters;
    };
    state.hyperparameters = refit(cfg.initial_restarts, initial_hyperparameters(state.dataset, box, bounds));
    GpModel model(state.dataset, state.hyperparameters);
    state.mu_max = compute_mu_max(model);
    for (auto& rec : state.initial_design) {
        rec.hyper_hash = hyperparameter_hash(state.hyperparameters);
        if (sink)
            sink(rec);
    }
    if (cfg.iterations == 0)
        return {std::move(state), std::move(model)};

    RngStream first_jitter = jitter_streams.split(0);
    Proposal next = propose_next(model, state.mu_max, box, cfg.acquisition, first_jitter);
    if (cfg.acquisition.ei_threshold && next.ei < *cfg.acquisition.ei_threshold) {
        state.converged_by_ei = true;
        return {std::move(state), std::move(model)};
    }

    for (std::size_t k = 1; k <= cfg.iterations; ++k) {
        RngStream eval_rng = eval_streams.split(state.evaluations);
        GpoTraceRecord rec;
        rec.phase = GpoPhase::iteration;
        rec.index = k;
        rec.theta = next.point;
        rec.ei = next.ei;
        rec.xi = evaluator(next.point, eval_rng);
        floor.observe(rec.xi);
        rec.xi_used = floor.apply(rec.xi);
        if (!std::isfinite(rec.xi))
            ++state.floored;
        ++state.evaluations;
        state.dataset.add(rec.theta, rec.xi_used);
        state.iteration = k;

        if (k % cfg.refit_interval == 0)
            state.hyperparameters = refit(cfg.refit_restarts, state.hyperparameters);
        model = GpModel(state.dataset, state.hyperparameters);
        state.mu_max = compute_mu_max(model);
        rec.mu_max = state.mu_max;
        rec.hyper_hash = hyperparameter_hash(state.hyperparameters);
        if (sink)
            sink(rec);
        state.trace.push_back(std::move(rec));

        if (k == cfg.iterations)
            break;
        RngStream jitter_rng = jitter_streams.split(k);
        next = propose_next(model, state.mu_max, box, cfg.acquisition, jitter_rng);
        if (cfg.acquisition.ei_threshold && next.ei < *cfg.acquisition.ei_threshold) {
            state.converged_by_ei = true;
            break;
        }
    }
    return {std::move(state), std::move(model)};
}

// --- Laplace approximation -------------------------------------------------

struct LaplaceOptions {
    DirectBudget direct{};
    double hessian_relative_step = 1e-4;
    double polish_initial_relative_step = 1e-2;
    double polish_final_relative_step = 1e-6;
    double eigenvalue_floor = 1e-8; // relative to the largest eigenvalue
};

struct LaplacePosterior {
    Eigen::VectorXd theta_map;
    double log_posterior_at_map = neg_inf; // surrogate mean at the MAP
    Eigen::MatrixXd hessian;               // J, negative log-posterior curvature (after repair)
    Eigen::MatrixXd raw_hessian;           // J before repair
    Eigen::MatrixXd covariance;            // J^-1
    Eigen::VectorXd stddev;
    bool on_boundary = false;
    bool repaired = false;

    /// Gaussian marginal density of component i.
    double marginal_density(std::size_t i, double x) const
    {
        const auto k = static_cast<Eigen::Index>(i);
        return std::exp(normal_log_pdf(x, theta_map(k), stddev(k)));
    }
};

/// Coordinate search on the surrogate mean from `start`, steps shrinking by halves.
inline Eigen::VectorXd polish_coordinate_search(const GpModel& model, const SearchBox& box, Eigen::VectorXd x,
    double initial_relative, double final_relative)
{
    const Eigen::VectorXd width = box.width();
    Eigen::VectorXd step = initial_relative * width;
    double best = model.mean(x);
    for (std::size_t guard = 0; guard < 100000 && (step.array() > final_relative * width.array()).any(); ++guard) {
        bool moved = false;
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            for (double sign : {1.0, -1.0}) {
                Eigen::VectorXd trial = x;
                trial(i) = std::clamp(x(i) + sign * step(i), box.lower(i), box.upper(i));
                if (trial(i) == x(i))
                    continue;
                const double value = model.mean(trial);
                if (value > best) {
                    best = value;
                    x = trial;
                    moved = true;
                    break;
                }
            }
        }
        if (!moved)
            step *= 0.5;
    }
    return x;
}

/// Eigenvalues below floor * max are raised to that level. Throws on a matrix
/// with no positive curvature at all.
inline Eigen::MatrixXd repair_positive_definite(const Eigen::MatrixXd& J, double relative_floor, bool& repaired)
{
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(J);
    const Eigen::VectorXd values = eig.eigenvalues();
    const double top = values.maxCoeff();
    if (!(top > 0.0) || !std::isfinite(top)) {
        std::ostringstream os;
        os << "negative log-posterior Hessian has no positive curvature and cannot be repaired:\n" << J;
        fail(ErrorCode::numerical, os.str());
    }
    const double floor = relative_floor * top;
    repaired = (values.array() < floor).any();
    if (!repaired)
        return J;
    const Eigen::VectorXd clamped = values.cwiseMax(floor);
    return eig.eigenvectors() * clamped.asDiagonal() * eig.eigenvectors().transpose();
}

/**
 * MAP of the surrogate mean (DIRECT + coordinate polish), J = -Hessian of the
 * mean by central differences, repaired to positive definite, covariance J^-1.
 */
inline LaplacePosterior extract_laplace(const GpModel& model, const SearchBox& box, const LaplaceOptions& options = {})
{
    box.validate();
    const BatchObjective mean = [&model](const Eigen::MatrixXd& pts, Eigen::VectorXd& values) {
        values = model.mean_batch(pts);
    };
    const DirectResult found = direct_maximize(mean, box, options.direct);

    LaplacePosterior out;
    out.theta_map = polish_coordinate_search(model, box, found.argmax, options.polish_initial_relative_step,
        options.polish_final_relative_step);
    out.log_posterior_at_map = model.mean(out.theta_map);

    const Eigen::VectorXd width = box.width();
    for (Eigen::Index i = 0; i < width.size(); ++i) {
        const double tol = 1e-6 * width(i);
        if (out.theta_map(i) - box.lower(i) <= tol || box.upper(i) - out.theta_map(i) <= tol)
            out.on_boundary = true;
    }

    const PointObjective f = [&model](const Eigen::VectorXd& x) { return model.mean(x); };
    // A boundary MAP is flagged; the smooth surrogate is then differentiated across the bound.
    const Eigen::MatrixXd hessian = finite_difference_hessian(f, out.theta_map, options.hessian_relative_step * width,
        out.on_boundary ? nullptr : &box);
    out.raw_hessian = -hessian;
    out.hessian = repair_positive_definite(out.raw_hessian, options.eigenvalue_floor, out.repaired);

    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(out.hessian);
    out.covariance = eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
    out.stddev = out.covariance.diagonal().cwiseSqrt();
    return out;
}

} // namespace gpoabc

#endif
