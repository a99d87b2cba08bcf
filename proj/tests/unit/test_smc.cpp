#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "gpoabc/smc.hpp"
#include "test_support.hpp"

using namespace gpoabc;
namespace ts = testing_support;
using ts::LinearGaussianModel;
using ts::kalman_log_likelihood;
using ts::make_linear_gaussian;

namespace {

Eigen::VectorXd gsv_data(std::size_t T, std::uint64_t seed)
{
    RngStream r(seed);
    return simulate(ThetaVector(ModelId::gsv, Eigen::Vector3d(0.2, 0.96, 0.15)), T, r).observations;
}

std::vector<double> bpf_replicates(const ThetaVector& theta, const Eigen::VectorXd& y, std::size_t N, int reps,
    std::uint64_t seed)
{
    const PriorSpec prior = default_prior(ModelId::gsv);
    std::vector<double> out;
    for (int i = 0; i < reps; ++i) {
        RngStream r = RngStream(seed).split(static_cast<std::uint64_t>(i));
        out.push_back(bpf_log_posterior(theta, y, N, prior, r).estimate.log_likelihood);
    }
    return out;
}

} // namespace

// --- perturbation ---------------------------------------------------------------

TEST(PerturbObservations, NoiseVarianceMatchesEpsilon)
{
    RngStream r(1);
    Eigen::VectorXd y = gsv_data(10000, 2);
    const Eigen::VectorXd p = perturb_observations(y, AbcConfig{0.2, Psi::identity}, r);
    std::vector<double> d(10000);
    for (Eigen::Index t = 0; t < 10000; ++t)
        d[static_cast<std::size_t>(t)] = p(t) - y(t);
    EXPECT_NEAR(ts::variance(d), 0.04, 0.05 * 0.04);
}

TEST(PerturbObservations, ArctanOfZeroIsPureNoise)
{
    RngStream r(3);
    const Eigen::VectorXd p = perturb_observations(Eigen::VectorXd::Zero(20000), AbcConfig{0.3, Psi::arctan}, r);
    std::vector<double> v(p.data(), p.data() + p.size());
    EXPECT_LT(ts::ks_statistic(v, [](double x) { return ts::phi_cdf(x / 0.3); }), 0.015);
}

TEST(PerturbObservations, SmallEpsilonLimitIsPsiOfY)
{
    RngStream r(4);
    const Eigen::VectorXd y = gsv_data(100, 5);
    const Eigen::VectorXd p = perturb_observations(y, AbcConfig{1e-14, Psi::arctan}, r);
    for (Eigen::Index t = 0; t < y.size(); ++t)
        EXPECT_NEAR(p(t), std::atan(y(t)), 1e-12);
    EXPECT_THROW(perturb_observations(y, AbcConfig{0.0, Psi::identity}, r), Error);
}

// --- weights and resampling -------------------------------------------------------

TEST(ParticleSystem, NormalisedWeightsSumToOne)
{
    RngStream r(6);
    for (int rep = 0; rep < 100; ++rep) {
        ParticleSystem s(257);
        for (auto& lw : s.log_weights)
            lw = -800.0 + 50.0 * r.normal();
        s.log_weights[3] = -std::numeric_limits<double>::infinity();
        const double log_sum = s.normalise();
        ASSERT_TRUE(std::isfinite(log_sum));
        EXPECT_NEAR(std::accumulate(s.weights.begin(), s.weights.end(), 0.0), 1.0, 1e-12);
        EXPECT_EQ(s.weights[3], 0.0);
    }
    ParticleSystem zero(10);
    std::fill(zero.log_weights.begin(), zero.log_weights.end(), -std::numeric_limits<double>::infinity());
    EXPECT_EQ(zero.normalise(), -std::numeric_limits<double>::infinity());
}

TEST(ParticleSystem, LogSumInvariantToParticlePermutation)
{
    RngStream r(7);
    ParticleSystem a(500);
    for (auto& lw : a.log_weights)
        lw = 3.0 * r.normal();
    ParticleSystem b = a;
    shuffle(b.log_weights.begin(), b.log_weights.end(), r);
    EXPECT_NEAR(a.normalise(), b.normalise(), 1e-12);
}

TEST(SystematicResample, EqualWeightsCopyEachIndexOnce)
{
    for (double u : {0.0, 0.3, 0.999}) {
        const std::vector<double> w(8, 1.0 / 8.0);
        const auto a = systematic_resample(w, u);
        for (std::size_t i = 0; i < 8; ++i)
            EXPECT_EQ(a[i], i);
    }
}

TEST(SystematicResample, DegenerateWeight)
{
    std::vector<double> w(6, 0.0);
    w[0] = 1.0;
    for (std::size_t a : systematic_resample(w, 0.77))
        EXPECT_EQ(a, 0u);
}

TEST(SystematicResample, HandEnumeratedCounts)
{
    // Grid (0.05 + k) / 10 against cumulative sums 0.5, 0.8, 1.0.
    std::vector<double> w(10, 0.0);
    w[0] = 0.5;
    w[1] = 0.3;
    w[2] = 0.2;
    const auto a = systematic_resample(w, 0.05);
    std::vector<int> counts(10, 0);
    for (auto i : a)
        ++counts[i];
    EXPECT_EQ(counts[0], 5);
    EXPECT_EQ(counts[1], 3);
    EXPECT_EQ(counts[2], 2);
    EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
}

TEST(SystematicResample, CountsWithinOneOfExpectation)
{
    RngStream r(8);
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t n = 1 + r.index(60);
        std::vector<double> w(n);
        double total = 0.0;
        for (auto& x : w) {
            x = r.exponential();
            total += x;
        }
        for (auto& x : w)
            x /= total;
        const auto a = systematic_resample(w, r.uniform());
        std::vector<int> counts(n, 0);
        for (auto i : a) {
            ASSERT_LT(i, n);
            ++counts[i];
        }
        for (std::size_t j = 0; j < n; ++j)
            EXPECT_LE(std::abs(counts[j] - double(n) * w[j]), 1.0 + 1e-9);
    }
}

TEST(SystematicResample, ContractViolations)
{
    EXPECT_THROW(systematic_resample(std::vector<double>{0.5, 0.6}, 0.2), Error);
    EXPECT_THROW(systematic_resample(std::vector<double>{0.5, 0.5}, 1.0), Error);
    EXPECT_THROW(systematic_resample(std::vector<double>{}, 0.1), Error);
    try {
        systematic_resample(std::vector<double>{0.5, 0.5 + 1e-6}, 0.2);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::contract);
    }
    EXPECT_NO_THROW(systematic_resample(std::vector<double>{0.5, 0.5 + 1e-10}, 0.2));
}

// --- filter oracles ---------------------------------------------------------------

TEST(BootstrapFilter, KalmanOracleOnLinearGaussianModel)
{
    const LinearGaussianModel m = make_linear_gaussian(100, 21);
    const double exact = kalman_log_likelihood(m);
    std::vector<double> est;
    for (int i = 0; i < 40; ++i) {
        RngStream r = RngStream(22).split(static_cast<std::uint64_t>(i));
        est.push_back(run_bootstrap_filter(m, 1000, r).log_likelihood);
    }
    const double se = std::sqrt(ts::variance(est) / double(est.size()));
    EXPECT_LT(std::abs(ts::mean(est) - exact), 3.0 * se + 1e-9) << "exact " << exact << " mean " << ts::mean(est);
}

TEST(BootstrapFilter, SingleObservationQuadratureOracle)
{
    const double mu = 0.3;
    const double sigma = 0.6;
    const double y_obs = 1.4;
    // With phi = 0 the state at t = 1 is N(mu, sigma^2).
    const int n = 200000;
    const double lo = mu - 12 * sigma;
    const double h = 24 * sigma / n;
    double integral = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double x = lo + i * h;
        const double f = std::exp(gsv_log_obs_density(y_obs, x) + normal_log_pdf(x, mu, sigma));
        integral += (i == 0 || i == n ? 0.5 : 1.0) * f;
    }
    const double exact = std::log(integral * h);

    const ThetaVector theta(ModelId::gsv, Eigen::Vector3d(mu, 0.0, sigma));
    const Eigen::VectorXd y = Eigen::VectorXd::Constant(1, y_obs);
    const auto est = bpf_replicates(theta, y, 5000, 50, 23);
    const double se = std::sqrt(ts::variance(est) / double(est.size()));
    EXPECT_LT(std::abs(ts::mean(est) - exact), 4.0 * se + 1e-3);
}

TEST(BootstrapFilter, FilteredStatesTrackTruth)
{
    RngStream sim(30);
    const ThetaVector theta(ModelId::gsv, Eigen::Vector3d(0.2, 0.96, 0.3));
    const auto s = simulate(theta, 1000, sim);
    RngStream r(31);
    const auto ev = bpf_log_posterior(theta, s.observations, 1000, default_prior(ModelId::gsv), r);
    ASSERT_EQ(ev.filtered_states.size(), 1000);
    const Eigen::VectorXd truth = s.states.tail(1000);
    const Eigen::VectorXd a = ev.filtered_states.array() - ev.filtered_states.mean();
    const Eigen::VectorXd b = truth.array() - truth.mean();
    EXPECT_GT(a.dot(b) / (a.norm() * b.norm()), 0.6);
}

TEST(BootstrapFilter, VarianceShrinksWithParticles)
{
    const Eigen::VectorXd y = gsv_data(100, 40);
    const ThetaVector theta(ModelId::gsv, Eigen::Vector3d(0.2, 0.96, 0.15));
    const auto small = bpf_replicates(theta, y, 500, 50, 41);
    const auto large = bpf_replicates(theta, y, 8000, 50, 42);
    EXPECT_LT(ts::variance(large), ts::variance(small));
}

TEST(BootstrapFilter, MeanEstimateRisesWithParticles)
{
    const Eigen::VectorXd y = gsv_data(200, 50);
    const ThetaVector theta(ModelId::gsv, Eigen::Vector3d(0.0, 0.9, 0.3));
    double previous_mean = -std::numeric_limits<double>::infinity();
    double previous_se = 0.0;
    std::uint64_t seed = 51;
    for (std::size_t N : {250u, 1000u, 4000u}) {
        const auto est = bpf_replicates(theta, y, N, 100, seed++);
        const double m = ts::mean(est);
        const double se = std::sqrt(ts::variance(est) / double(est.size()));
        EXPECT_GE(m, previous_mean - std::max(se, previous_se)) << "N = " << N;
        previous_mean = m;
        previous_se = se;
    }
}

// --- log-posterior estimators -------------------------------------------------------

TEST(LogPosterior, EmptySeriesReturnsLogPrior)
{
    const ThetaVector theta(ModelId::gsv, Eigen::Vector3d(0.1, 0.9, 0.2));
    const PriorSpec prior = default_prior(ModelId::gsv);
    RngStream r(60);
    const auto abc = smc_abc_log_posterior(theta, Eigen::VectorXd(0), 100, AbcConfig{}, prior, r);
    EXPECT_EQ(abc.estimate.log_likelihood, 0.0);
    EXPECT_DOUBLE_EQ(abc.estimate.xi, log_prior(theta, prior));
    const auto bpf = bpf_log_posterior(theta, Eigen::VectorXd(0), 100, prior, r);
    EXPECT_DOUBLE_EQ(bpf.estimate.xi, log_prior(theta, prior));
}

TEST(LogPosterior, OutsidePriorSupportSkipsFilter)
{
    const PriorSpec prior = default_prior(ModelId::gsv);
    const Eigen::VectorXd y = gsv_data(50, 61);
    RngStream r(62);
    const auto counter_before = r.counter();
    const auto ev = smc_abc_log_posterior(ThetaVector(ModelId::gsv, Eigen::Vector3d(0.1, 0.9, -0.2)), y, 100,
        AbcConfig{}, prior, r);
    EXPECT_EQ(ev.estimate.xi, -std::numeric_limits<double>::infinity());
    EXPECT_EQ(ev.filtered_states.size(), 0);
    EXPECT_EQ(r.counter(), counter_before);
    const auto ev2 = bpf_log_posterior(ThetaVector(ModelId::gsv, Eigen::Vector3d(0.1, 1.0, 0.2)), y, 100, prior, r);
    EXPECT_EQ(ev2.estimate.xi, -std::numeric_limits<double>::infinity());
}

TEST(LogPosterior, XiIsLogLikelihoodPlusLogPrior)
{
    const PriorSpec prior = default_prior(ModelId::gsv);
    const Eigen::VectorXd y = gsv_data(100, 63);
    const ThetaVector theta(ModelId::gsv, Eigen::Vector3d(0.15, 0.95, 0.12));
    RngStream r(64);
    const auto ev = smc_abc_log_posterior(theta, y, 300, AbcConfig{0.2, Psi::identity}, prior, r);
    EXPECT_DOUBLE_EQ(ev.estimate.xi, ev.estimate.log_likelihood + log_prior(theta, prior));
    EXPECT_EQ(ev.estimate.particles, 300u);
    EXPECT_EQ(ev.estimate.epsilon, 0.2);
}

TEST(LogPosterior, DegenerateFilterGivesMinusInfinityNotException)
{
    const PriorSpec prior = default_prior(ModelId::gsv);
    Eigen::VectorXd y = gsv_data(20, 65);
    y(10) = std::numeric_limits<double>::infinity();
    RngStream r(66);
    const auto ev = smc_abc_log_posterior(ThetaVector(ModelId::gsv, Eigen::Vector3d(0.1, 0.9, 0.1)), y, 100,
        AbcConfig{0.2, Psi::identity}, prior, r);
    EXPECT_TRUE(ev.estimate.degenerate);
    EXPECT_EQ(ev.estimate.xi, -std::numeric_limits<double>::infinity());
}

TEST(LogPosterior, ExactFilterIsGsvOnly)
{
    RngStream r(67);
    EXPECT_THROW(bpf_log_posterior(ThetaVector(ModelId::asv, Eigen::Vector4d(0.1, 0.9, 0.1, 1.8)),
                     Eigen::VectorXd::Zero(5), 100, default_prior(ModelId::asv), r),
        Error);
}

TEST(LogPosterior, SameStreamSameEstimate)
{
    const Eigen::VectorXd y = gsv_data(100, 68);
    const LogPosteriorFn f = make_abc_evaluator(ModelId::gsv, y, 200, AbcConfig{}, default_prior(ModelId::gsv));
    RngStream a(69);
    RngStream b(69);
    EXPECT_EQ(f(Eigen::Vector3d(0.2, 0.95, 0.2), a), f(Eigen::Vector3d(0.2, 0.95, 0.2), b));
}

TEST(LogPosterior, SmallEpsilonApproachesExactFilter)
{
    const Eigen::VectorXd y = gsv_data(100, 70);
    const ThetaVector theta(ModelId::gsv, Eigen::Vector3d(0.2, 0.96, 0.15));
    const PriorSpec prior = default_prior(ModelId::gsv);
    const AbcConfig cfg{0.01, Psi::identity};
    RngStream perturb(71);
    const Eigen::VectorXd perturbed = perturb_observations(y, cfg, perturb);

    std::vector<double> abc;
    for (int i = 0; i < 50; ++i) {
        RngStream r = RngStream(72).split(static_cast<std::uint64_t>(i));
        abc.push_back(smc_abc_log_posterior(theta, perturbed, 2000, cfg, prior, r).estimate.xi);
    }
    std::vector<double> exact;
    for (int i = 0; i < 50; ++i) {
        RngStream r = RngStream(73).split(static_cast<std::uint64_t>(i));
        exact.push_back(bpf_log_posterior(theta, y, 2000, prior, r).estimate.xi);
    }
    const double noise = std::sqrt(ts::variance(abc));
    EXPECT_LT(std::abs(ts::mean(abc) - ts::mean(exact)), 2.0 * noise)
        << "abc " << ts::mean(abc) << " exact " << ts::mean(exact) << " sd " << noise;
}

TEST(LogPosterior, AsvEstimatorNoiseIsNearGaussian)
{
    RngStream sim(80);
    const ThetaVector theta(ModelId::asv, Eigen::Vector4d(0.0, 0.9, 0.2, 1.8));
    const Eigen::VectorXd y = simulate(theta, 100, sim).observations;
    const AbcConfig cfg{0.1, Psi::arctan};
    RngStream perturb(81);
    const Eigen::VectorXd perturbed = perturb_observations(y, cfg, perturb);
    const PriorSpec prior = default_prior(ModelId::asv);

    std::vector<double> est;
    for (int i = 0; i < 1000; ++i) {
        RngStream r = RngStream(82).split(static_cast<std::uint64_t>(i));
        est.push_back(smc_abc_log_posterior(theta, perturbed, 1000, cfg, prior, r).estimate.xi);
    }
    std::sort(est.begin(), est.end());
    // Correlation between ordered estimates and normal scores.
    std::vector<double> q(est.size());
    for (std::size_t i = 0; i < est.size(); ++i)
        q[i] = std_normal_quantile((double(i) + 0.5) / double(est.size()));
    const double me = ts::mean(est);
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < est.size(); ++i) {
        sxy += (est[i] - me) * q[i];
        sxx += (est[i] - me) * (est[i] - me);
        syy += q[i] * q[i];
    }
    EXPECT_GT(sxy / std::sqrt(sxx * syy), 0.99);
}
