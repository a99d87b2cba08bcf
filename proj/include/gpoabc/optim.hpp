#ifndef GPOABC_OPTIM_HPP
#define GPOABC_OPTIM_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <vector>

#include <Eigen/Core>

#include "errors.hpp"
#include "models.hpp"
#include "rng.hpp"

namespace gpoabc {

// --- DIRECT ---------------------------------------------------------------

struct DirectBudget {
    std::size_t max_evaluations = 2000;
    std::size_t max_rectangle_splits = std::numeric_limits<std::size_t>::max();
    double epsilon_direct = 1e-4;

    void validate() const
    {
        require(max_evaluations >= 1, ErrorCode::configuration, "DIRECT needs at least one evaluation");
        require(epsilon_direct >= 0.0, ErrorCode::configuration, "DIRECT balance parameter must be >= 0");
    }
};

struct DirectResult {
    Eigen::VectorXd argmax;
    double max_value = -std::numeric_limits<double>::infinity();
    std::size_t evaluations = 0;
    std::size_t rectangle_splits = 0;
};

/// Objective evaluated on a batch of points (columns); fills one value per column.
using BatchObjective = std::function<void(const Eigen::MatrixXd& points, Eigen::VectorXd& values)>;
using PointObjective = std::function<double(const Eigen::VectorXd&)>;

namespace detail {

    struct DirectRect {
        Eigen::VectorXd centre; // unit-cube coordinates
        std::vector<int> levels; // side length along i is 3^-levels[i]
        double value;           // objective at centre (minimisation sense)
        double size;            // half diagonal
    };

    inline double rect_size(std::vector<int> levels)
    {
        // Sorting makes the size a function of the level multiset, so equal-shaped
        // rectangles compare exactly equal.
        std::sort(levels.begin(), levels.end());
        double sum = 0.0;
        for (int l : levels)
            sum += std::pow(3.0, -2.0 * l);
        return 0.5 * std::sqrt(sum);
    }

    /// Lower-right convex hull selection of potentially optimal rectangles.
    inline std::vector<std::size_t> potentially_optimal(const std::vector<DirectRect>& rects, double epsilon)
    {
        std::map<double, std::size_t> best_by_size;
        for (std::size_t i = 0; i < rects.size(); ++i) {
            auto [it, inserted] = best_by_size.try_emplace(rects[i].size, i);
            if (!inserted && rects[i].value < rects[it->second].value)
                it->second = i;
        }
        std::vector<std::size_t> groups;
        groups.reserve(best_by_size.size());
        for (const auto& [size, idx] : best_by_size)
            groups.push_back(idx);

        // Start from the best value overall (largest size on ties).
        std::size_t start = 0;
        for (std::size_t g = 0; g < groups.size(); ++g)
            if (rects[groups[g]].value <= rects[groups[start]].value)
                start = g;
        const double f_min = rects[groups[start]].value;

        std::vector<std::size_t> hull;
        for (std::size_t g = start; g < groups.size(); ++g) {
            const auto& r = rects[groups[g]];
            while (hull.size() >= 2) {
                const auto& a = rects[groups[hull[hull.size() - 2]]];
                const auto& b = rects[groups[hull.back()]];
                // Remove b if it lies on or above the segment a -> r.
                const double cross = (b.size - a.size) * (r.value - a.value) - (b.value - a.value) * (r.size - a.size);
                if (cross <= 0.0)
                    hull.pop_back();
                else
                    break;
            }
            hull.push_back(g);
        }

        std::vector<std::size_t> selected;
        for (std::size_t h = 0; h < hull.size(); ++h) {
            const auto& r = rects[groups[hull[h]]];
            if (h + 1 < hull.size()) {
                const auto& next = rects[groups[hull[h + 1]]];
                const double slope = (next.value - r.value) / (next.size - r.size);
                if (r.value - slope * r.size > f_min - epsilon * std::abs(f_min))
                    continue;
            }
            selected.push_back(groups[hull[h]]);
        }
        return selected;
    }

} // namespace detail

/**
 * DIRECT (dividing rectangles) maximisation over a box.
 *
 * Works on the normalised unit cube; rectangles are trisected along their
 * longest sides, with the dimension of the best sampled face split first.
 * All new centres of one iteration are evaluated in a single batch call.
 * The budget is never exceeded: a rectangle whose division would overrun it is
 * left undivided and the search stops.
 */
inline DirectResult direct_maximize(const BatchObjective& objective, const SearchBox& box, const DirectBudget& budget)
{
    box.validate();
    budget.validate();
    const auto p = static_cast<Eigen::Index>(box.dim());
    const Eigen::VectorXd width = box.width();

    auto to_box = [&](const Eigen::VectorXd& unit) -> Eigen::VectorXd {
        return box.lower + unit.cwiseProduct(width);
    };
    auto evaluate = [&](const std::vector<Eigen::VectorXd>& unit_points) {
        Eigen::MatrixXd pts(p, static_cast<Eigen::Index>(unit_points.size()));
        for (std::size_t j = 0; j < unit_points.size(); ++j)
            pts.col(static_cast<Eigen::Index>(j)) = to_box(unit_points[j]);
        Eigen::VectorXd values(pts.cols());
        objective(pts, values);
        for (Eigen::Index j = 0; j < values.size(); ++j) {
            if (std::isnan(values(j))) {
                std::ostringstream os;
                os << "objective returned NaN at (" << pts.col(j).transpose() << ")";
                fail(ErrorCode::contract, os.str());
            }
        }
        return Eigen::VectorXd(-values);
    };

    std::vector<detail::DirectRect> rects;
    DirectResult result;
    {
        std::vector<Eigen::VectorXd> first{Eigen::VectorXd::Constant(p, 0.5)};
        const Eigen::VectorXd v = evaluate(first);
        std::vector<int> levels(static_cast<std::size_t>(p), 0);
        rects.push_back({first[0], levels, v(0), detail::rect_size(levels)});
        result.evaluations = 1;
    }

    bool exhausted = false;
    while (!exhausted && result.evaluations < budget.max_evaluations
        && result.rectangle_splits < budget.max_rectangle_splits) {
        const auto selected = detail::potentially_optimal(rects, budget.epsilon_direct);

        struct Plan {
            std::size_t rect;
            std::vector<Eigen::Index> dims;
            double delta;
        };
        std::vector<Plan> plans;
        std::vector<Eigen::VectorXd> batch;
        std::size_t planned = result.evaluations;
        for (std::size_t idx : selected) {
            if (result.rectangle_splits + plans.size() >= budget.max_rectangle_splits)
                break;
            const auto& r = rects[idx];
            const int min_level = *std::min_element(r.levels.begin(), r.levels.end());
            Plan plan{idx, {}, std::pow(3.0, -(min_level + 1))};
            for (Eigen::Index i = 0; i < p; ++i)
                if (r.levels[static_cast<std::size_t>(i)] == min_level)
                    plan.dims.push_back(i);
            if (planned + 2 * plan.dims.size() > budget.max_evaluations) {
                exhausted = true;
                break;
            }
            planned += 2 * plan.dims.size();
            for (Eigen::Index i : plan.dims) {
                Eigen::VectorXd lo = r.centre;
                Eigen::VectorXd hi = r.centre;
                lo(i) -= plan.delta;
                hi(i) += plan.delta;
                batch.push_back(lo);
                batch.push_back(hi);
            }
            plans.push_back(std::move(plan));
        }
        if (plans.empty())
            break;

        const Eigen::VectorXd values = evaluate(batch);
        result.evaluations += static_cast<std::size_t>(values.size());

        Eigen::Index offset = 0;
        for (const Plan& plan : plans) {
            const std::size_t m = plan.dims.size();
            std::vector<double> w(m);
            for (std::size_t k = 0; k < m; ++k)
                w[k] = std::min(values(offset + 2 * static_cast<Eigen::Index>(k)),
                    values(offset + 2 * static_cast<Eigen::Index>(k) + 1));
            std::vector<std::size_t> order(m);
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return w[a] < w[b]; });

            std::vector<int> levels = rects[plan.rect].levels;
            for (std::size_t k : order) {
                const auto dim = plan.dims[k];
                levels[static_cast<std::size_t>(dim)] += 1;
                const double size = detail::rect_size(levels);
                for (int side = 0; side < 2; ++side) {
                    const auto col = offset + 2 * static_cast<Eigen::Index>(k) + side;
                    rects.push_back({batch[static_cast<std::size_t>(col)], levels, values(col), size});
                }
            }
            rects[plan.rect].levels = levels;
            rects[plan.rect].size = detail::rect_size(levels);
            offset += 2 * static_cast<Eigen::Index>(m);
        }
        result.rectangle_splits += plans.size();
    }

    std::size_t best = 0;
    for (std::size_t i = 1; i < rects.size(); ++i)
        if (rects[i].value < rects[best].value)
            best = i;
    result.argmax = to_box(rects[best].centre);
    result.max_value = -rects[best].value;
    return result;
}

inline DirectResult direct_maximize(const PointObjective& objective, const SearchBox& box, const DirectBudget& budget)
{
    const BatchObjective batch = [&objective](const Eigen::MatrixXd& pts, Eigen::VectorXd& values) {
        for (Eigen::Index j = 0; j < pts.cols(); ++j)
            values(j) = objective(pts.col(j));
    };
    return direct_maximize(batch, box, budget);
}

// --- Latin hypercube ------------------------------------------------------

/// L points (rows) with exactly one point per stratum [k/L, (k+1)/L) in every dimension.
inline Eigen::MatrixXd latin_hypercube(std::size_t count, const SearchBox& box, RngStream& rng)
{
    box.validate();
    require(count >= 1, ErrorCode::contract, "latin_hypercube needs at least one point");
    const auto L = static_cast<Eigen::Index>(count);
    const auto p = static_cast<Eigen::Index>(box.dim());
    Eigen::MatrixXd points(L, p);
    std::vector<Eigen::Index> strata(count);
    for (Eigen::Index j = 0; j < p; ++j) {
        std::iota(strata.begin(), strata.end(), Eigen::Index{0});
        shuffle(strata.begin(), strata.end(), rng);
        const double width = box.upper(j) - box.lower(j);
        for (Eigen::Index i = 0; i < L; ++i) {
            const double unit = (static_cast<double>(strata[static_cast<std::size_t>(i)]) + rng.uniform())
                / static_cast<double>(count);
            points(i, j) = std::min(box.lower(j) + unit * width, box.upper(j));
        }
    }
    return points;
}

// --- finite-difference Hessian --------------------------------------------

/**
 * Central-difference Hessian. The stencil must stay inside `box` when one is
 * given; a violating step is shrunk tenfold once before giving up.
 */
inline Eigen::MatrixXd finite_difference_hessian(const PointObjective& f, const Eigen::VectorXd& x,
    Eigen::VectorXd steps, const SearchBox* box = nullptr)
{
    const Eigen::Index p = x.size();
    require(steps.size() == p, ErrorCode::contract, "one finite-difference step per dimension is required");
    require((steps.array() > 0.0).all(), ErrorCode::contract, "finite-difference steps must be positive");
    if (box) {
        for (Eigen::Index i = 0; i < p; ++i) {
            auto inside = [&](double h) { return x(i) - h >= box->lower(i) && x(i) + h <= box->upper(i); };
            if (!inside(steps(i)))
                steps(i) /= 10.0;
            if (!inside(steps(i)))
                fail(ErrorCode::domain, "finite-difference stencil leaves the box in dimension " + std::to_string(i));
        }
    }

    Eigen::MatrixXd hessian(p, p);
    const double centre = f(x);
    Eigen::VectorXd probe = x;
    for (Eigen::Index i = 0; i < p; ++i) {
        const double h = steps(i);
        probe(i) = x(i) + h;
        const double plus = f(probe);
        probe(i) = x(i) - h;
        const double minus = f(probe);
        probe(i) = x(i);
        hessian(i, i) = (plus - 2.0 * centre + minus) / (h * h);
    }
    for (Eigen::Index i = 0; i < p; ++i) {
        for (Eigen::Index j = i + 1; j < p; ++j) {
            const double hi = steps(i);
            const double hj = steps(j);
            auto eval = [&](double si, double sj) {
                probe(i) = x(i) + si * hi;
                probe(j) = x(j) + sj * hj;
                const double v = f(probe);
                probe(i) = x(i);
                probe(j) = x(j);
                return v;
            };
            const double value = (eval(1, 1) - eval(1, -1) - eval(-1, 1) + eval(-1, -1)) / (4.0 * hi * hj);
            hessian(i, j) = value;
            hessian(j, i) = value;
        }
    }
    return hessian;
}

// --- bounded quasi-Newton --------------------------------------------------

struct BoundedMaximizeOptions {
    std::size_t max_iterations = 200;
    double gradient_tolerance = 1e-6;
    double value_tolerance = 1e-10;
    double max_step = 1.0; // largest move of any coordinate per iteration
};

struct BoundedMaximizeResult {
    Eigen::VectorXd argmax;
    double value = -std::numeric_limits<double>::infinity();
    std::size_t iterations = 0;
    std::size_t evaluations = 0;
};

/// Value and gradient at x; a non-finite value marks x as infeasible.
using ValueAndGradient = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& gradient)>;

/**
 * Projected BFGS ascent within box bounds.
 *
 * Coordinates pinned at a bound whose gradient points outward are frozen for
 * the iteration; the inverse-Hessian approximation is reset whenever the
 * projected direction stops being an ascent direction. Armijo backtracking on
 * the projected path.
 */
inline BoundedMaximizeResult maximize_bounded_bfgs(const ValueAndGradient& fg, const Eigen::VectorXd& start,
    const Eigen::VectorXd& lower, const Eigen::VectorXd& upper, const BoundedMaximizeOptions& options = {})
{
    const Eigen::Index n = start.size();
    auto project = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd { return v.cwiseMax(lower).cwiseMin(upper); };

    BoundedMaximizeResult out;
    Eigen::VectorXd x = project(start);
    Eigen::VectorXd g(n);
    double f = fg(x, g);
    ++out.evaluations;
    out.argmax = x;
    out.value = f;
    if (!std::isfinite(f) || !g.allFinite())
        return out;

    Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);
    for (std::size_t iter = 0; iter < options.max_iterations; ++iter) {
        out.iterations = iter + 1;
        Eigen::VectorXd free_mask = Eigen::VectorXd::Ones(n);
        for (Eigen::Index i = 0; i < n; ++i)
            if ((x(i) <= lower(i) && g(i) < 0.0) || (x(i) >= upper(i) && g(i) > 0.0))
                free_mask(i) = 0.0;
        const Eigen::VectorXd g_free = g.cwiseProduct(free_mask);
        if (g_free.lpNorm<Eigen::Infinity>() < options.gradient_tolerance)
            break;

        Eigen::VectorXd d = (H * g_free).cwiseProduct(free_mask);
        if (d.dot(g_free) <= 0.0) {
            H.setIdentity();
            d = g_free;
        }
        const double longest = d.lpNorm<Eigen::Infinity>();
        if (longest > options.max_step)
            d *= options.max_step / longest;

        double step = 1.0;
        Eigen::VectorXd x_new(n);
        Eigen::VectorXd g_new(n);
        double f_new = -std::numeric_limits<double>::infinity();
        bool accepted = false;
        for (int ls = 0; ls < 40; ++ls) {
            x_new = project(x + step * d);
            f_new = fg(x_new, g_new);
            ++out.evaluations;
            if (std::isfinite(f_new) && g_new.allFinite() && f_new >= f + 1e-4 * g_free.dot(x_new - x)) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted)
            break;

        const Eigen::VectorXd s = x_new - x;
        const Eigen::VectorXd y = g - g_new; // gradient of -f
        const double change = f_new - f;
        x = x_new;
        g = g_new;
        f = f_new;
        const double sy = s.dot(y);
        if (sy > 1e-12) {
            const double rho = 1.0 / sy;
            const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
            H = (I - rho * s * y.transpose()) * H * (I - rho * y * s.transpose()) + rho * s * s.transpose();
        }
        if (std::abs(change) <= options.value_tolerance * (1.0 + std::abs(f)))
            break;
    }
    out.argmax = x;
    out.value = f;
    return out;
}

} // namespace gpoabc

#endif
