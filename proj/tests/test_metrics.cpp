#include "doctest.h"

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "smind/metrics.hpp"

using namespace smind;

namespace {

LabelMask box(Index3 dims, Index3 lo, Index3 hi) {
    Volume v(dims, {1, 1, 1});
    for (int64_t k = lo[2]; k < hi[2]; ++k)
        for (int64_t j = lo[1]; j < hi[1]; ++j)
            for (int64_t i = lo[0]; i < hi[0]; ++i) v(i, j, k) = 1.0;
    return LabelMask{v};
}

} // namespace

TEST_CASE("dice") {
    const LabelMask a = box({10, 10, 10}, {0, 0, 0}, {5, 10, 10});
    const LabelMask b = box({10, 10, 10}, {3, 0, 0}, {8, 10, 10});
    CHECK(dice(a, a) == 1.0);
    CHECK(dice(a, b) == doctest::Approx(2.0 * 200.0 / 1000.0));
    CHECK(dice(a, b) == dice(b, a));
    const LabelMask empty = box({10, 10, 10}, {0, 0, 0}, {0, 0, 0});
    CHECK(dice(empty, empty) == 1.0);
    CHECK(dice(a, empty) == 0.0);
    CHECK_THROWS_AS(dice(a, box({10, 10, 9}, {0, 0, 0}, {1, 1, 1})), std::invalid_argument);
}

TEST_CASE("make_mask thresholds inclusively") {
    Volume v({3, 1, 1}, {1, 1, 1}, std::vector<double>{0.49, 0.5, 0.9});
    const LabelMask m = make_mask(v);
    CHECK(m.values[0] == 0.0);
    CHECK(m.values[1] == 1.0);
    CHECK(m.count() == 2);
}

TEST_CASE("identity field has exactly zero folding and log-Jacobian spread") {
    const JacobianStats s = jacobian_stats(DeformationField({9, 8, 7}, {1, 1, 2.5}));
    CHECK(s.folding_percent == 0.0);
    CHECK(s.sigma_log_j == 0.0);
}

TEST_CASE("jacobian determinant matches the oracle") {
    const Index3 d{7, 6, 5};
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-0.8, 0.8);
    DeformationField f(d, {1, 1, 1});
    for (double &x : f.data()) x = u(rng);
    const Volume j = jacobian_determinant(f);
    const auto o = oracle::jacobian(std::vector<double>(f.data().begin(), f.data().end()), d);
    for (size_t n = 0; n < o.size(); ++n) CHECK(j[n] == doctest::Approx(o[n]).epsilon(1e-12));
}

TEST_CASE("uniform expansion and folding") {
    DeformationField f({6, 6, 6}, {1, 1, 1});
    for (int64_t k = 0; k < 6; ++k)
        for (int64_t jj = 0; jj < 6; ++jj)
            for (int64_t i = 0; i < 6; ++i) {
                f.at(i, jj, k, 0) = 0.1 * static_cast<double>(i);
                f.at(i, jj, k, 1) = 0.1 * static_cast<double>(jj);
                f.at(i, jj, k, 2) = 0.1 * static_cast<double>(k);
            }
    const JacobianStats s = jacobian_stats(f);
    CHECK(s.folding_percent == 0.0);
    CHECK(s.sigma_log_j == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    const Volume jac = jacobian_determinant(f);
    for (double x : jac.data()) CHECK(x == doctest::Approx(1.331));

    for (int64_t k = 0; k < 6; ++k)
        for (int64_t jj = 0; jj < 6; ++jj)
            for (int64_t i = 0; i < 6; ++i) f.at(i, jj, k, 0) = -2.0 * static_cast<double>(i);
    CHECK(jacobian_stats(f).folding_percent == 100.0);
}

TEST_CASE("warp_mask with zero field or identity affine keeps the mask") {
    const LabelMask a = box({8, 8, 8}, {2, 2, 2}, {6, 5, 7});
    CHECK(dice(warp_mask(a, DeformationField({8, 8, 8}, {1, 1, 1})), a) == 1.0);
    CHECK(dice(warp_mask(a, AffineParams{}), a) == 1.0);
    AffineParams p;
    p.trans = {1.0, 0.0, 0.0};
    const LabelMask s = warp_mask(a, p);
    CHECK(dice(s, box({8, 8, 8}, {3, 2, 2}, {7, 5, 7})) == 1.0);
}
