// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <exception>
#include <vector>

namespace dqss {

/// OpenMP loop over [0, n) with dynamic scheduling. Exceptions thrown by the
/// body are captured per index; the one from the lowest index is rethrown
/// after the loop, so failures report identically for any thread count.
template <typename Body>
void parallel_for(std::size_t n, Body&& body)
{
    std::vector<std::exception_ptr> errors(n);
    const std::ptrdiff_t count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t i = 0; i < count; ++i) {
        try {
            body(static_cast<std::size_t>(i));
        } catch (...) {
            errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

} // namespace dqss
