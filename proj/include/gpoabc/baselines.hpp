#ifndef GPOABC_BASELINES_HPP
#define GPOABC_BASELINES_HPP

#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "errors.hpp"
#include "models.hpp"
#include "rng.hpp"
#include "smc.hpp"

namespace gpoabc {

// --- particle Metropolis-Hastings --------------------------------------------

struct PmhConfig {
    Eigen::VectorXd theta0;
    Eigen::MatrixXd proposal_covariance;
    std::size_t iterations = 15000; // M, including the initial state
    std::size_t burnin = 5000;

    void validate() const
    {
        const auto p = theta0.size();
        require(p > 0, ErrorCode::configuration, "PMH needs an initial parameter");
        require(proposal_covariance.rows() == p && proposal_covariance.cols() == p, ErrorCode::configuration,
            "PMH proposal covariance must be p x p");
        require(proposal_covariance.isApprox(proposal_covariance.transpose()), ErrorCode::configuration,
            "PMH proposal covariance must be symmetric");
        require(proposal_covariance.llt().info() == Eigen::Success, ErrorCode::configuration,
            "PMH proposal covariance must be positive definite");
        require(iterations >= 1 && burnin < iterations, ErrorCode::configuration, "PMH needs burnin < iterations");
    }

    /// theta0 = (0.10, 0.95, 0.12), Sigma_q = 2.562^2 / 3 * 1e-4 * diag(137, 7, 38).
    static PmhConfig gsv_defaults()
    {
        PmhConfig cfg;
        cfg.theta0 = Eigen::Vector3d(0.10, 0.95, 0.12);
        cfg.proposal_covariance = (2.562 * 2.562 / 3.0 * 1e-4) * Eigen::Vector3d(137, 7, 38).asDiagonal();
        return cfg;
    }

    /// theta0 = (0.22, 0.93, 0.25, 1.55), Sigma_q = 2.562^2 / 4 * 1e-3 * diag(26, 1, 9, 11).
    static PmhConfig asv_defaults()
    {
        PmhConfig cfg;
        cfg.theta0 = Eigen::Vector4d(0.22, 0.93, 0.25, 1.55);
        cfg.proposal_covariance = (2.562 * 2.562 / 4.0 * 1e-3) * Eigen::Vector4d(26, 1, 9, 11).asDiagonal();
        return cfg;
    }
};

struct PmhResult {
    Eigen::MatrixXd chain; // M x p, row 0 is theta0
    Eigen::VectorXd xi;    // stored estimate for each chain state
    std::vector<bool> accepted; // accepted[k] for the proposal made at step k (false at k = 0)
    double acceptance_rate = 0.0;
    Eigen::VectorXd posterior_mean;
    Eigen::MatrixXd posterior_covariance;
    std::size_t evaluations = 0;
};

/**
 * Random-walk pseudo-marginal Metropolis-Hastings. The estimate attached to the
 * current state is reused in every acceptance ratio; it is never re-evaluated.
 * Proposal k evaluates with rng.split(k); the accept draw uses rng.split(k) after it.
 */
inline PmhResult pmh_run(const LogPosteriorFn& evaluator, const PmhConfig& cfg, const RngStream& rng)
{
    cfg.validate();
    const auto p = cfg.theta0.size();
    const auto M = static_cast<Eigen::Index>(cfg.iterations);
    const Eigen::MatrixXd chol = cfg.proposal_covariance.llt().matrixL();

    PmhResult out;
    out.chain.resize(M, p);
    out.xi.resize(M);
    out.accepted.assign(cfg.iterations, false);

    RngStream first = rng.split(0);
    double current_xi = evaluator(cfg.theta0, first);
    out.evaluations = 1;
    require(std::isfinite(current_xi), ErrorCode::domain, "PMH initial parameter has a -inf log-posterior estimate");
    Eigen::VectorXd current = cfg.theta0;
    out.chain.row(0) = current.transpose();
    out.xi(0) = current_xi;

    std::size_t accepted = 0;
    Eigen::VectorXd z(p);
    for (Eigen::Index k = 1; k < M; ++k) {
        RngStream step_rng = rng.split(static_cast<std::uint64_t>(k));
        RngStream proposal_rng = step_rng.split(0);
        RngStream eval_rng = step_rng.split(1);
        for (Eigen::Index i = 0; i < p; ++i)
            z(i) = proposal_rng.normal();
        const Eigen::VectorXd candidate = current + chol * z;
        const double candidate_xi = evaluator(candidate, eval_rng);
        ++out.evaluations;
        const double u = proposal_rng.uniform_open();
        if (std::isfinite(candidate_xi) && std::log(u) < candidate_xi - current_xi) {
            current = candidate;
            current_xi = candidate_xi;
            out.accepted[static_cast<std::size_t>(k)] = true;
            ++accepted;
        }
        out.chain.row(k) = current.transpose();
        out.xi(k) = current_xi;
    }
    out.acceptance_rate = M > 1 ? static_cast<double>(accepted) / static_cast<double>(M - 1) : 0.0;

    const auto kept = out.chain.bottomRows(M - static_cast<Eigen::Index>(cfg.burnin));
    out.posterior_mean = kept.colwise().mean().transpose();
    const Eigen::MatrixXd centred = kept.rowwise() - out.posterior_mean.transpose();
    out.posterior_covariance = centred.transpose() * centred / std::max<double>(1.0, double(kept.rows() - 1));
    return out;
}

// --- SPSA ---------------------------------------------------------------------

struct SpsaConfig {
    double a = 0.001;
    double c = 0.30;
    double A = 35.0;
    double alpha_exp = 0.602;
    double gamma_exp = 0.101;
    std::size_t iterations = 350;

    void validate() const
    {
        require(a > 0.0 && c > 0.0 && A >= 0.0, ErrorCode::configuration, "SPSA gains need a, c > 0 and A >= 0");
        require(alpha_exp > 0.0 && alpha_exp <= 1.0 && gamma_exp > 0.0 && gamma_exp <= 1.0,
            ErrorCode::configuration, "SPSA exponents must lie in (0, 1]");
    }
};

struct SpsaStep {
    double xi_plus = neg_inf;
    double xi_minus = neg_inf;
    bool skipped = false;
};

struct SpsaResult {
    Eigen::MatrixXd iterates; // (iterations + 1) x p, row 0 is theta0
    std::vector<SpsaStep> steps;
    std::size_t evaluations = 0;
    std::size_t skipped = 0;
};

/**
 * SPSA ascent on the log-posterior with Rademacher perturbations.
 *
 * a_n = a / (A + n + 1)^alpha, c_n = c / (n + 1)^gamma. Probe points are
 * projected into the box interior before evaluation, iterates are clamped to
 * the box, and a step with a non-finite probe is skipped.
 */
inline SpsaResult spsa_run(const LogPosteriorFn& evaluator, const SpsaConfig& cfg, const Eigen::VectorXd& theta0,
    const SearchBox& box, const RngStream& rng)
{
    cfg.validate();
    box.validate();
    require(theta0.size() == static_cast<Eigen::Index>(box.dim()), ErrorCode::configuration,
        "SPSA start point has the wrong dimension");
    require((theta0.array() > box.lower.array()).all() && (theta0.array() < box.upper.array()).all(),
        ErrorCode::configuration, "SPSA start point must be interior to the box");

    const auto p = theta0.size();

    SpsaResult out;
    out.iterates.resize(static_cast<Eigen::Index>(cfg.iterations + 1), p);
    out.iterates.row(0) = theta0.transpose();
    Eigen::VectorXd theta = theta0;
    Eigen::VectorXd delta(p);
    for (std::size_t n = 0; n < cfg.iterations; ++n) {
        RngStream step_rng = rng.split(n);
        RngStream perturb_rng = step_rng.split(0);
        RngStream plus_rng = step_rng.split(1);
        RngStream minus_rng = step_rng.split(2);
        const double nd = static_cast<double>(n);
        const double a_n = cfg.a / std::pow(cfg.A + nd + 1.0, cfg.alpha_exp);
        const double c_n = cfg.c / std::pow(nd + 1.0, cfg.gamma_exp);
        for (Eigen::Index i = 0; i < p; ++i)
            delta(i) = (perturb_rng.next_u64() >> 63) ? 1.0 : -1.0;

        const Eigen::VectorXd plus = box.clamp_interior(theta + c_n * delta);
        const Eigen::VectorXd minus = box.clamp_interior(theta - c_n * delta);
        SpsaStep step;
        step.xi_plus = evaluator(plus, plus_rng);
        step.xi_minus = evaluator(minus, minus_rng);
        out.evaluations += 2;
        if (std::isfinite(step.xi_plus) && std::isfinite(step.xi_minus)) {
            const double diff = (step.xi_plus - step.xi_minus) / (2.0 * c_n);
            const Eigen::VectorXd gradient = diff * delta.cwiseInverse();
            theta = box.clamp(theta + a_n * gradient);
        } else {
            step.skipped = true;
            ++out.skipped;
        }
        out.steps.push_back(step);
        out.iterates.row(static_cast<Eigen::Index>(n + 1)) = theta.transpose();
    }
    return out;
}

} // namespace gpoabc

#endif
