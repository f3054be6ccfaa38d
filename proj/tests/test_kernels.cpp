#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "quorum/kernels.hpp"

using namespace quorum;

namespace {

bool have_avx2() { return kernels::set_isa(kernels::Isa::avx2); }

struct IsaGuard {
    ~IsaGuard() { kernels::reset_isa(); }
};

double rel_err(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
    return std::abs(a - b) / scale;
}

}  // namespace

TEST_CASE("scalar reductions match plain loops") {
    IsaGuard guard;
    REQUIRE(kernels::set_isa(kernels::Isa::scalar));
    std::vector<double> x = {0.5, 0.25, 0.125, 0.0625, 0.0625};
    CHECK(kernels::reduce_sum(x) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(kernels::reduce_sum_squares(x) ==
          doctest::Approx(0.25 + 0.0625 + 0.015625 + 2 * 0.00390625).epsilon(1e-15));
    CHECK(kernels::reduce_sum_log(x) ==
          doctest::Approx(std::log(0.5 * 0.25 * 0.125 * 0.0625 * 0.0625)).epsilon(1e-14));
}

TEST_CASE("empty spans reduce to zero") {
    std::vector<double> empty;
    CHECK(kernels::reduce_sum(empty) == 0.0);
    CHECK(kernels::reduce_sum_squares(empty) == 0.0);
    CHECK(kernels::reduce_neg_plogp(empty) == 0.0);
    CHECK(kernels::reduce_kl(empty, empty) == 0.0);
}

TEST_CASE("neg_plogp treats zero probability as contributing zero") {
    std::vector<double> p = {0.5, 0.0, 0.5, 0.0, 0.0, 0.0};
    const double expected = -2 * (0.5 * std::log(0.5));
    IsaGuard guard;
    kernels::set_isa(kernels::Isa::scalar);
    CHECK(kernels::reduce_neg_plogp(p) == doctest::Approx(expected).epsilon(1e-14));
    if (have_avx2()) {
        CHECK(kernels::reduce_neg_plogp(p) == doctest::Approx(expected).epsilon(1e-14));
    }
}

TEST_CASE("kl with a zero q against positive p is +inf on both paths") {
    std::vector<double> p = {0.5, 0.5, 0.0, 0.0, 0.0};
    std::vector<double> q = {0.5, 0.0, 0.25, 0.125, 0.125};
    IsaGuard guard;
    kernels::set_isa(kernels::Isa::scalar);
    CHECK(std::isinf(kernels::reduce_kl(p, q)));
    if (have_avx2()) {
        CHECK(std::isinf(kernels::reduce_kl(p, q)));
    }
}

TEST_CASE("avx2 log path agrees with std::log across magnitudes") {
    IsaGuard guard;
    if (!have_avx2()) return;
    // Four identical values so the vector path (not the scalar tail) runs.
    for (double x : {1e-320, 5e-324, 1e-300, 1e-12, 0.1, 0.5,
                     0.7071067811865476, 1.0, 1.5, 2.0, 3.14159, 1e12, 1e300}) {
        std::vector<double> v(4, x);
        const double got = kernels::reduce_sum_log(v) / 4.0;
        const double want = std::log(x);
        INFO("x = ", x);
        CHECK(rel_err(got, want) < 1e-13);
    }
    std::vector<double> zeros(4, 0.0);
    CHECK(std::isinf(kernels::reduce_sum_log(zeros)));
    std::vector<double> negs(4, -1.0);
    CHECK(std::isnan(kernels::reduce_sum_log(negs)));
    std::vector<double> infs(4, std::numeric_limits<double>::infinity());
    CHECK(std::isinf(kernels::reduce_sum_log(infs)));
    CHECK(kernels::reduce_sum_log(infs) > 0);
}

TEST_CASE("scalar and avx2 variants agree on random inputs") {
    IsaGuard guard;
    if (!have_avx2()) {
        MESSAGE("AVX2 not available; dispatch equivalence skipped");
        return;
    }
    std::mt19937_64 rng{7};
    std::uniform_real_distribution<double> prob(1e-9, 1.0);
    std::uniform_real_distribution<double> lp(-30.0, 0.0);
    for (int n = 0; n <= 67; ++n) {
        std::vector<double> probs(n), logprobs(n), q(n);
        double psum = 0, qsum = 0;
        for (int i = 0; i < n; ++i) {
            probs[i] = prob(rng);
            q[i] = prob(rng);
            logprobs[i] = lp(rng);
            psum += probs[i];
            qsum += q[i];
        }
        for (int i = 0; i < n; ++i) {
            probs[i] /= std::max(psum, 1.0);
            q[i] /= std::max(qsum, 1.0);
        }

        kernels::set_isa(kernels::Isa::scalar);
        const double s_sum = kernels::reduce_sum(logprobs);
        const double s_sq = kernels::reduce_sum_squares(probs);
        const double s_log = n ? kernels::reduce_sum_log(probs) : 0.0;
        const double s_ent = kernels::reduce_neg_plogp(probs);
        const double s_kl = kernels::reduce_kl(probs, q);

        kernels::set_isa(kernels::Isa::avx2);
        CHECK(rel_err(kernels::reduce_sum(logprobs), s_sum) < 1e-12);
        CHECK(rel_err(kernels::reduce_sum_squares(probs), s_sq) < 1e-12);
        if (n) CHECK(rel_err(kernels::reduce_sum_log(probs), s_log) < 1e-12);
        CHECK(rel_err(kernels::reduce_neg_plogp(probs), s_ent) < 1e-12);
        CHECK(rel_err(kernels::reduce_kl(probs, q), s_kl) < 1e-12);
    }
}

TEST_CASE("isa dispatch reporting") {
    IsaGuard guard;
    REQUIRE(kernels::set_isa(kernels::Isa::scalar));
    CHECK(kernels::active_isa() == kernels::Isa::scalar);
    CHECK(kernels::isa_name(kernels::active_isa()) == "scalar");
    kernels::reset_isa();
    CHECK((kernels::active_isa() == kernels::Isa::scalar ||
           kernels::active_isa() == kernels::Isa::avx2));
}
