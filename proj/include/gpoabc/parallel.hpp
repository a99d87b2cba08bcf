#ifndef GPOABC_PARALLEL_HPP
#define GPOABC_PARALLEL_HPP

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace gpoabc {

/**
 * Runs body(i) for i in [0, count) on up to `threads` workers.
 *
 * Tasks must only write to their own output slot and draw randomness from a
 * stream derived from i, so results do not depend on the worker count. If
 * several tasks throw, the exception of the lowest index is rethrown.
 */
template <typename Body>
void parallel_for(std::size_t count, std::size_t threads, Body&& body)
{
    threads = std::max<std::size_t>(1, std::min(threads, count));
    if (threads == 1) {
        for (std::size_t i = 0; i < count; ++i)
            body(i);
        return;
    }
    std::vector<std::exception_ptr> errors(count);
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
            try {
                body(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::jthread> pool;
    pool.reserve(threads - 1);
    for (std::size_t t = 0; t + 1 < threads; ++t)
        pool.emplace_back(worker);
    worker();
    pool.clear();
    for (auto& e : errors)
        if (e)
            std::rethrow_exception(e);
}

} // namespace gpoabc

#endif
