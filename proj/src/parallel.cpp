#include "softctl/parallel.hpp"

#include <atomic>

namespace softctl {

namespace {
std::atomic<std::size_t> g_workers{0};
}

std::size_t default_workers() {
    const std::size_t set = g_workers.load();
    if (set > 0) return set;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

void set_default_workers(std::size_t workers) { g_workers.store(workers); }

}  // namespace softctl
