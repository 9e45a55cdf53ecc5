#include "distill/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <string>

#include "distill/errors.hpp"

namespace distill::kernels {

namespace {

bool cpu_has_avx2_fma() {
#if defined(DISTILL_HAVE_AVX2_UNIT) && (defined(__GNUC__) || defined(__clang__))
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Backend pick_initial_backend() {
    if (const char* env = std::getenv("DISTILL_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
        if (std::strcmp(env, "avx2") == 0) {
            if (!cpu_has_avx2_fma())
                throw ArgumentError(
                    "DISTILL_KERNELS=avx2 requested but this build/CPU has no "
                    "AVX2+FMA kernel path");
            return Backend::avx2;
        }
        throw ArgumentError(std::string("unknown DISTILL_KERNELS value '") +
                            env + "' (expected 'scalar' or 'avx2')");
    }
    return cpu_has_avx2_fma() ? Backend::avx2 : Backend::scalar;
}

std::atomic<Backend>& backend_slot() {
    static std::atomic<Backend> slot{pick_initial_backend()};
    return slot;
}

}  // namespace

const char* backend_name(Backend b) {
    return b == Backend::avx2 ? "avx2" : "scalar";
}

Backend active_backend() { return backend_slot().load(std::memory_order_relaxed); }

bool backend_available(Backend b) {
    if (b == Backend::scalar) return true;
    return cpu_has_avx2_fma();
}

void set_backend(Backend b) {
    if (!backend_available(b))
        throw ArgumentError(std::string("kernel backend '") + backend_name(b) +
                            "' is not available on this build/CPU");
    backend_slot().store(b, std::memory_order_relaxed);
}

const KernelTable& table() {
#if defined(DISTILL_HAVE_AVX2_UNIT)
    if (active_backend() == Backend::avx2) return avx2::kTable;
#endif
    return scalar::kTable;
}

}  // namespace distill::kernels
