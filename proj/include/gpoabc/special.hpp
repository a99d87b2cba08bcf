#ifndef GPOABC_SPECIAL_HPP
#define GPOABC_SPECIAL_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

namespace gpoabc {

inline constexpr double neg_inf = -std::numeric_limits<double>::infinity();
inline constexpr double log_sqrt_2pi = 0.91893853320467274178; // log(sqrt(2 pi))

inline double normal_log_pdf(double x, double mean, double sd)
{
    const double z = (x - mean) / sd;
    return -log_sqrt_2pi - std::log(sd) - 0.5 * z * z;
}

inline double std_normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

inline double std_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

inline double std_normal_quantile(double p)
{
    return boost::math::quantile(boost::math::normal_distribution<double>(0.0, 1.0), p);
}

inline double student_t_cdf(double x, double dof)
{
    return boost::math::cdf(boost::math::students_t_distribution<double>(dof), x);
}

inline double student_t_quantile(double p, double dof)
{
    return boost::math::quantile(boost::math::students_t_distribution<double>(dof), p);
}

inline double student_t_log_pdf(double x, double dof)
{
    return std::lgamma(0.5 * (dof + 1.0)) - std::lgamma(0.5 * dof) - 0.5 * std::log(dof * std::numbers::pi)
        - 0.5 * (dof + 1.0) * std::log1p(x * x / dof);
}

/// log(sum(exp(v))) with max subtraction; returns -inf when every entry is -inf.
inline double log_sum_exp(std::span<const double> values)
{
    if (values.empty())
        return neg_inf;
    const double top = *std::max_element(values.begin(), values.end());
    if (!std::isfinite(top))
        return top;
    double sum = 0.0;
    for (double v : values)
        sum += std::exp(v - top);
    return top + std::log(sum);
}

} // namespace gpoabc

#endif
