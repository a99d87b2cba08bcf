#ifndef GPOABC_GP_ORACLE_HPP
#define GPOABC_GP_ORACLE_HPP

#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "gpoabc/gp.hpp"

namespace testing_support {

using gpoabc::GpHyperparameters;
using gpoabc::RngStream;
using gpoabc::SurrogateDataset;

/// Kernel written out independently of the library.
inline double oracle_kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const GpHyperparameters& h)
{
    double r2 = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i)
        r2 += std::pow((a(i) - b(i)) / h.length_scales(i), 2);
    const double r = std::sqrt(r2);
    return h.bias_variance + h.matern_variance * (1.0 + std::sqrt(5.0) * r + 5.0 * r2 / 3.0) * std::exp(-std::sqrt(5.0) * r);
}

inline Eigen::MatrixXd oracle_system(const SurrogateDataset& d, const GpHyperparameters& h)
{
    const auto k = static_cast<Eigen::Index>(d.size());
    Eigen::MatrixXd C(k, k);
    for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = 0; j < k; ++j)
            C(i, j) = oracle_kernel(d.points.row(i).transpose(), d.points.row(j).transpose(), h)
                + (i == j ? h.noise_variance : 0.0);
    return C;
}

struct OraclePrediction {
    double mean;
    double variance;
};

inline OraclePrediction oracle_predict(const SurrogateDataset& d, const GpHyperparameters& h, const Eigen::VectorXd& x)
{
    const Eigen::MatrixXd C = oracle_system(d, h);
    Eigen::VectorXd ks(static_cast<Eigen::Index>(d.size()));
    for (Eigen::Index i = 0; i < ks.size(); ++i)
        ks(i) = oracle_kernel(d.points.row(i).transpose(), x, h);
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(C);
    return {ks.dot(lu.solve(d.values)), oracle_kernel(x, x, h) - ks.dot(lu.solve(ks))};
}

inline double oracle_log_marginal(const SurrogateDataset& d, const GpHyperparameters& h)
{
    const Eigen::MatrixXd C = oracle_system(d, h);
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(C);
    const double log_det = lu.matrixLU().diagonal().array().abs().log().sum();
    return -0.5 * d.values.dot(lu.solve(d.values)) - 0.5 * log_det
        - 0.5 * double(d.size()) * std::log(2 * std::numbers::pi);
}

inline GpHyperparameters random_hyperparameters(std::size_t p, RngStream& r)
{
    GpHyperparameters h;
    h.bias_variance = r.uniform(0.0, 2.0);
    h.matern_variance = r.uniform(0.5, 3.0);
    h.length_scales = Eigen::VectorXd(static_cast<Eigen::Index>(p));
    for (Eigen::Index i = 0; i < h.length_scales.size(); ++i)
        h.length_scales(i) = r.uniform(0.2, 1.5);
    h.noise_variance = r.uniform(0.1, 0.5);
    return h;
}

inline SurrogateDataset random_dataset(std::size_t k, std::size_t p, RngStream& r)
{
    SurrogateDataset d(p);
    for (std::size_t j = 0; j < k; ++j) {
        Eigen::VectorXd x(static_cast<Eigen::Index>(p));
        for (Eigen::Index i = 0; i < x.size(); ++i)
            x(i) = r.uniform();
        d.add(x, x.array().sin().sum() + 0.3 * r.normal());
    }
    return d;
}

} // namespace testing_support

#endif
