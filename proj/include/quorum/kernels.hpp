#pragma once

#include <cstddef>
#include <span>
#include <string_view>

namespace quorum::kernels {

// Reductions backing the uncertainty metrics. Each operation has a scalar
// reference implementation; on x86-64 hosts with AVX2+FMA a vectorized
// variant is selected at runtime. The variants accumulate in a different
// order, so they agree with the scalar reference to rounding error rather
// than bit-for-bit (equivalence is pinned by tests at 1e-12 relative).

/// Sum of x.
double reduce_sum(std::span<const double> x);

/// Sum of x_i^2.
double reduce_sum_squares(std::span<const double> x);

/// Sum of ln(x_i). Requires x_i > 0; x_i == 0 yields -inf.
double reduce_sum_log(std::span<const double> x);

/// Sum of -x_i * ln(x_i) with the convention 0*ln(0) == 0.
double reduce_neg_plogp(std::span<const double> p);

/// Sum of p_i * (ln(p_i) - ln(q_i)) over positions where p_i > 0.
/// A q_i == 0 paired with p_i > 0 yields +inf; callers that consider this
/// an error must validate before calling. p and q must have equal length.
double reduce_kl(std::span<const double> p, std::span<const double> q);

enum class Isa { scalar, avx2 };

/// Variant currently in use.
Isa active_isa();
std::string_view isa_name(Isa isa);

/// Force a specific variant (testing hook). Returns false when the
/// requested variant is not available on this host/build.
bool set_isa(Isa isa);

/// Restore the auto-detected best variant.
void reset_isa();

}  // namespace quorum::kernels
