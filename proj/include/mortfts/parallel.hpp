#pragma once

// Worker pool behind the ParallelFor hook. Exceptions are collected per index and the one with
// the lowest index is rethrown, so failures do not depend on scheduling either.

#include "mortfts/common.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace mortfts {

inline ParallelFor thread_for(unsigned workers) {
    if (workers <= 1) return serial_for;
    return [workers](std::size_t n, const std::function<void(std::size_t)>& body) {
        std::atomic<std::size_t> next{0};
        std::vector<std::exception_ptr> errors(n);
        auto work = [&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    body(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        };
        {
            std::vector<std::jthread> pool;
            const std::size_t count = std::min<std::size_t>(workers, n);
            for (std::size_t w = 0; w < count; ++w) pool.emplace_back(work);
        }
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    };
}

}  // namespace mortfts
