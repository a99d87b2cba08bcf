#ifndef GPOABC_RNG_HPP
#define GPOABC_RNG_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace gpoabc {

namespace detail {

    inline constexpr std::uint64_t golden_gamma = 0x9e3779b97f4a7c15ULL;

    // SplitMix64 finaliser.
    constexpr std::uint64_t mix64(std::uint64_t z) noexcept
    {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

} // namespace detail

/**
 * Counter-based random stream.
 *
 * The i-th 64-bit output is mix64(key + i * golden_gamma), so a stream is fully
 * described by (key, counter). split() derives statistically independent child
 * streams from a parent key and an index without advancing the parent, which is
 * what makes parallel work seed-deterministic: task j always receives
 * split(j) no matter which thread runs it.
 *
 * All variate transformations are implemented here rather than through
 * <random> distributions, whose algorithms are implementation-defined.
 */
class RngStream {
public:
    using result_type = std::uint64_t;

    explicit RngStream(std::uint64_t seed = 0) noexcept
        : seed_(seed), key_(detail::mix64(seed + detail::golden_gamma))
    {
    }

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t counter() const noexcept { return counter_; }

    RngStream split(std::uint64_t index) const noexcept
    {
        RngStream child;
        child.seed_ = seed_;
        child.key_ = detail::mix64(key_ ^ detail::mix64(index * detail::golden_gamma + 0x632be59bd9b4e019ULL));
        return child;
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept { return next_u64(); }

    std::uint64_t next_u64() noexcept
    {
        ++counter_;
        return detail::mix64(key_ + counter_ * detail::golden_gamma);
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform on (0, 1); never returns an endpoint.
    double uniform_open() noexcept
    {
        return (static_cast<double>(next_u64() >> 12) + 0.5) * 0x1.0p-52;
    }

    double uniform(double lower, double upper) noexcept { return lower + (upper - lower) * uniform(); }

    /// Uniform integer in [0, n), n > 0 (Lemire's multiply-shift, rejection on the short interval).
    std::uint64_t index(std::uint64_t n) noexcept
    {
        unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
        auto low = static_cast<std::uint64_t>(m);
        if (low < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (low < threshold) {
                m = static_cast<unsigned __int128>(next_u64()) * n;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    /// Standard normal by the Box-Muller transform; the second variate is cached.
    double normal() noexcept
    {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double radius = std::sqrt(-2.0 * std::log(uniform_open()));
        const double angle = 2.0 * std::numbers::pi * uniform();
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    double normal(double mean, double sd) noexcept { return mean + sd * normal(); }

    double exponential() noexcept { return -std::log(uniform_open()); }

    /// Gamma(shape, 1) by Marsaglia & Tsang; shape < 1 uses the u^(1/shape) boost.
    double gamma(double shape) noexcept
    {
        if (shape < 1.0) {
            const double u = uniform_open();
            return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = 0.0;
            double v = 0.0;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform_open();
            if (u < 1.0 - 0.0331 * x * x * x * x)
                return d * v;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
                return d * v;
        }
    }

    double chi_square(double dof) noexcept { return 2.0 * gamma(0.5 * dof); }

private:
    std::uint64_t seed_ = 0;
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// In-place Fisher-Yates shuffle driven by an RngStream.
template <typename RandomIt>
void shuffle(RandomIt first, RandomIt last, RngStream& rng)
{
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
        const auto j = rng.index(i);
        std::swap(first[i - 1], first[j]);
    }
}

} // namespace gpoabc

#endif
