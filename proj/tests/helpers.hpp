#pragma once

#include <unistd.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "distill/kernels.hpp"
#include "distill/rng.hpp"

namespace testutil {

// Pins the kernel backend for a scope; restores the previous one on exit.
class BackendGuard {
public:
    explicit BackendGuard(distill::kernels::Backend b)
        : previous_(distill::kernels::active_backend()) {
        distill::kernels::set_backend(b);
    }
    ~BackendGuard() { distill::kernels::set_backend(previous_); }
    BackendGuard(const BackendGuard&) = delete;
    BackendGuard& operator=(const BackendGuard&) = delete;

private:
    distill::kernels::Backend previous_;
};

inline double rel_err(double got, double want) {
    const double denom = std::max({std::abs(got), std::abs(want), 1e-300});
    return std::abs(got - want) / denom;
}

// |got - want| <= atol + rtol * |want|
inline bool close(double got, double want, double rtol = 1e-12,
                  double atol = 1e-12) {
    return std::abs(got - want) <= atol + rtol * std::abs(want);
}

inline std::vector<double> random_logits(distill::SeededRng& rng,
                                         std::size_t k, double scale = 2.0) {
    std::vector<double> z(k);
    for (double& v : z) v = rng.normal(0.0, scale);
    return z;
}

// Fresh empty directory under the system temp dir; removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::uint64_t counter = 0;
        root_ = std::filesystem::temp_directory_path() /
                ("distill-test-" + tag + "-" + std::to_string(++counter) +
                 "-" + std::to_string(::getpid()));
        std::filesystem::remove_all(root_);
        std::filesystem::create_directories(root_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(root_, ec);
    }
    const std::filesystem::path& path() const { return root_; }
    std::string str(const std::string& name) const {
        return (root_ / name).string();
    }

private:
    std::filesystem::path root_;
};

}  // namespace testutil
