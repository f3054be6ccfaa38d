#include "quorum/kernels.hpp"

#include <atomic>
#include <cmath>

namespace quorum::kernels {

namespace {

double scalar_sum(std::span<const double> x) {
    double acc = 0.0;
    for (double v : x) acc += v;
    return acc;
}

double scalar_sum_squares(std::span<const double> x) {
    double acc = 0.0;
    for (double v : x) acc += v * v;
    return acc;
}

double scalar_sum_log(std::span<const double> x) {
    double acc = 0.0;
    for (double v : x) acc += std::log(v);
    return acc;
}

double scalar_neg_plogp(std::span<const double> p) {
    double acc = 0.0;
    for (double v : p) {
        if (v > 0.0) acc -= v * std::log(v);
    }
    return acc;
}

double scalar_kl(std::span<const double> p, std::span<const double> q) {
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) acc += p[i] * (std::log(p[i]) - std::log(q[i]));
    }
    return acc;
}

struct OpsTable {
    double (*sum)(std::span<const double>);
    double (*sum_squares)(std::span<const double>);
    double (*sum_log)(std::span<const double>);
    double (*neg_plogp)(std::span<const double>);
    double (*kl)(std::span<const double>, std::span<const double>);
    Isa isa;
};

constexpr OpsTable kScalarTable{scalar_sum, scalar_sum_squares, scalar_sum_log,
                                scalar_neg_plogp, scalar_kl, Isa::scalar};

}  // namespace

#if defined(QUORUM_HAVE_AVX2)
namespace avx2 {
double reduce_sum(std::span<const double> x);
double reduce_sum_squares(std::span<const double> x);
double reduce_sum_log(std::span<const double> x);
double reduce_neg_plogp(std::span<const double> p);
double reduce_kl(std::span<const double> p, std::span<const double> q);
}  // namespace avx2

namespace {
constexpr OpsTable kAvx2Table{avx2::reduce_sum, avx2::reduce_sum_squares,
                              avx2::reduce_sum_log, avx2::reduce_neg_plogp,
                              avx2::reduce_kl, Isa::avx2};

bool avx2_supported() {
#if defined(__GNUC__) || defined(__clang__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}
}  // namespace
#endif

namespace {

const OpsTable* detect_best() {
#if defined(QUORUM_HAVE_AVX2)
    if (avx2_supported()) return &kAvx2Table;
#endif
    return &kScalarTable;
}

std::atomic<const OpsTable*>& active_table() {
    static std::atomic<const OpsTable*> table{detect_best()};
    return table;
}

}  // namespace

double reduce_sum(std::span<const double> x) {
    return active_table().load(std::memory_order_relaxed)->sum(x);
}

double reduce_sum_squares(std::span<const double> x) {
    return active_table().load(std::memory_order_relaxed)->sum_squares(x);
}

double reduce_sum_log(std::span<const double> x) {
    return active_table().load(std::memory_order_relaxed)->sum_log(x);
}

double reduce_neg_plogp(std::span<const double> p) {
    return active_table().load(std::memory_order_relaxed)->neg_plogp(p);
}

double reduce_kl(std::span<const double> p, std::span<const double> q) {
    return active_table().load(std::memory_order_relaxed)->kl(p, q);
}

Isa active_isa() {
    return active_table().load(std::memory_order_relaxed)->isa;
}

std::string_view isa_name(Isa isa) {
    switch (isa) {
        case Isa::scalar: return "scalar";
        case Isa::avx2: return "avx2";
    }
    return "unknown";
}

bool set_isa(Isa isa) {
    if (isa == Isa::scalar) {
        active_table().store(&kScalarTable, std::memory_order_relaxed);
        return true;
    }
#if defined(QUORUM_HAVE_AVX2)
    if (isa == Isa::avx2 && avx2_supported()) {
        active_table().store(&kAvx2Table, std::memory_order_relaxed);
        return true;
    }
#endif
    return false;
}

void reset_isa() {
    active_table().store(detect_best(), std::memory_order_relaxed);
}

}  // namespace quorum::kernels
