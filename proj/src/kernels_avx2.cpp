// AVX2+FMA variants of the metric reductions. Compiled with -mavx2 -mfma;
// selected at runtime only when the host CPU reports both features.

#include <immintrin.h>

#include <cmath>
#include <cstdint>
#include <span>

namespace quorum::kernels::avx2 {

namespace {

// Vectorized natural log, ~1 ulp over normal doubles.
//
// Decomposes x = m * 2^e with m in [1/sqrt2, sqrt2), then evaluates
// ln(m) = 2*atanh(s) with s = (m-1)/(m+1) as an odd series in s, and
// recombines with a split ln2 constant. Denormals are pre-scaled by 2^54.
inline __m256d log_pd(__m256d x) {
    const __m256d kOne = _mm256_set1_pd(1.0);
    const __m256d kZero = _mm256_setzero_pd();
    const __m256d kMinNormal = _mm256_set1_pd(2.2250738585072014e-308);
    const __m256d kScaleUp = _mm256_set1_pd(0x1p54);
    const __m256d kInvSqrt2 = _mm256_set1_pd(0.70710678118654752440);
    const __m256d kLn2Hi = _mm256_set1_pd(6.93147180369123816490e-01);
    const __m256d kLn2Lo = _mm256_set1_pd(1.90821492927058770002e-10);

    // Scale denormals into the normal range; account for it in the exponent.
    __m256d small = _mm256_cmp_pd(x, kMinNormal, _CMP_LT_OQ);
    __m256d xs = _mm256_blendv_pd(x, _mm256_mul_pd(x, kScaleUp), small);
    __m256d e_adjust = _mm256_and_pd(small, _mm256_set1_pd(54.0));

    __m256i bits = _mm256_castpd_si256(xs);
    __m256i expo = _mm256_and_si256(_mm256_srli_epi64(bits, 52),
                                    _mm256_set1_epi64x(0x7FF));
    __m256i e64 = _mm256_sub_epi64(expo, _mm256_set1_epi64x(1022));

    // Mantissa with the exponent field forced to [0.5, 1).
    __m256i mant = _mm256_or_si256(
        _mm256_and_si256(bits, _mm256_set1_epi64x(0x000FFFFFFFFFFFFFLL)),
        _mm256_set1_epi64x(0x3FE0000000000000LL));
    __m256d m = _mm256_castsi256_pd(mant);

    // Exponents are small; the low dword of each lane is the full value.
    __m128i e32 = _mm256_castsi256_si128(
        _mm256_permutevar8x32_epi32(e64, _mm256_setr_epi32(0, 2, 4, 6, 0, 0, 0, 0)));
    __m256d e = _mm256_cvtepi32_pd(e32);

    __m256d lt = _mm256_cmp_pd(m, kInvSqrt2, _CMP_LT_OQ);
    m = _mm256_blendv_pd(m, _mm256_add_pd(m, m), lt);
    e = _mm256_sub_pd(e, _mm256_and_pd(lt, kOne));
    e = _mm256_sub_pd(e, e_adjust);

    __m256d s = _mm256_div_pd(_mm256_sub_pd(m, kOne), _mm256_add_pd(m, kOne));
    __m256d z = _mm256_mul_pd(s, s);

    // atanh series: 1 + z/3 + z^2/5 + ... + z^10/21.
    __m256d poly = _mm256_set1_pd(1.0 / 21.0);
    poly = _mm256_fmadd_pd(poly, z, _mm256_set1_pd(1.0 / 19.0));
    poly = _mm256_fmadd_pd(poly, z, _mm256_set1_pd(1.0 / 17.0));
    poly = _mm256_fmadd_pd(poly, z, _mm256_set1_pd(1.0 / 15.0));
    poly = _mm256_fmadd_pd(poly, z, _mm256_set1_pd(1.0 / 13.0));
    poly = _mm256_fmadd_pd(poly, z, _mm256_set1_pd(1.0 / 11.0));
    poly = _mm256_fmadd_pd(poly, z, _mm256_set1_pd(1.0 / 9.0));
    poly = _mm256_fmadd_pd(poly, z, _mm256_set1_pd(1.0 / 7.0));
    poly = _mm256_fmadd_pd(poly, z, _mm256_set1_pd(1.0 / 5.0));
    poly = _mm256_fmadd_pd(poly, z, _mm256_set1_pd(1.0 / 3.0));
    poly = _mm256_fmadd_pd(poly, z, kOne);

    __m256d ln_m = _mm256_mul_pd(_mm256_add_pd(s, s), poly);
    __m256d r = _mm256_fmadd_pd(e, kLn2Lo, ln_m);
    r = _mm256_fmadd_pd(e, kLn2Hi, r);

    // Specials: +-0 -> -inf, negative -> NaN, +inf -> +inf, NaN -> NaN.
    const __m256d kNegInf = _mm256_set1_pd(-HUGE_VAL);
    const __m256d kPosInf = _mm256_set1_pd(HUGE_VAL);
    const __m256d kNan = _mm256_set1_pd(std::nan(""));
    r = _mm256_blendv_pd(r, kNegInf, _mm256_cmp_pd(x, kZero, _CMP_EQ_OQ));
    r = _mm256_blendv_pd(r, kNan, _mm256_cmp_pd(x, kZero, _CMP_LT_OQ));
    r = _mm256_blendv_pd(r, kPosInf, _mm256_cmp_pd(x, kPosInf, _CMP_EQ_OQ));
    r = _mm256_blendv_pd(r, x, _mm256_cmp_pd(x, x, _CMP_NEQ_UQ));
    return r;
}

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(lo) + _mm_cvtsd_f64(_mm_unpackhi_pd(lo, lo));
}

}  // namespace

double reduce_sum(std::span<const double> x) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= x.size(); i += 4) {
        acc = _mm256_add_pd(acc, _mm256_loadu_pd(x.data() + i));
    }
    double r = hsum(acc);
    for (; i < x.size(); ++i) r += x[i];
    return r;
}

double reduce_sum_squares(std::span<const double> x) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= x.size(); i += 4) {
        __m256d v = _mm256_loadu_pd(x.data() + i);
        acc = _mm256_fmadd_pd(v, v, acc);
    }
    double r = hsum(acc);
    for (; i < x.size(); ++i) r += x[i] * x[i];
    return r;
}

double reduce_sum_log(std::span<const double> x) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= x.size(); i += 4) {
        acc = _mm256_add_pd(acc, log_pd(_mm256_loadu_pd(x.data() + i)));
    }
    double r = hsum(acc);
    for (; i < x.size(); ++i) r += std::log(x[i]);
    return r;
}

double reduce_neg_plogp(std::span<const double> p) {
    const __m256d kZero = _mm256_setzero_pd();
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= p.size(); i += 4) {
        __m256d v = _mm256_loadu_pd(p.data() + i);
        __m256d term = _mm256_mul_pd(v, log_pd(v));
        // Zero lanes where p == 0 (0*ln 0 is NaN in fp, defined as 0 here).
        term = _mm256_and_pd(term, _mm256_cmp_pd(v, kZero, _CMP_GT_OQ));
        acc = _mm256_sub_pd(acc, term);
    }
    double r = hsum(acc);
    for (; i < p.size(); ++i) {
        if (p[i] > 0.0) r -= p[i] * std::log(p[i]);
    }
    return r;
}

double reduce_kl(std::span<const double> p, std::span<const double> q) {
    const __m256d kZero = _mm256_setzero_pd();
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= p.size(); i += 4) {
        __m256d pv = _mm256_loadu_pd(p.data() + i);
        __m256d qv = _mm256_loadu_pd(q.data() + i);
        __m256d diff = _mm256_sub_pd(log_pd(pv), log_pd(qv));
        __m256d term = _mm256_mul_pd(pv, diff);
        term = _mm256_and_pd(term, _mm256_cmp_pd(pv, kZero, _CMP_GT_OQ));
        acc = _mm256_add_pd(acc, term);
    }
    double r = hsum(acc);
    for (; i < p.size(); ++i) {
        if (p[i] > 0.0) r += p[i] * (std::log(p[i]) - std::log(q[i]));
    }
    return r;
}

}  // namespace quorum::kernels::avx2
