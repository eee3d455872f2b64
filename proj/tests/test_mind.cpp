#include "doctest.h"

#include <random>

#include "oracles.hpp"
#include "smind/mind.hpp"

using namespace smind;

TEST_CASE("mind features match the brute-force descriptor") {
    const Volume v = oracle::random_volume({6, 5, 4}, 77);
    const MindFeatures f = mind_features(v);
    const auto o = oracle::mind(v);
    REQUIRE(f.voxels() == v.size());
    for (size_t n = 0; n < v.size(); ++n)
        for (int c = 0; c < 6; ++c) CHECK(f(n, c) == doctest::Approx(o[n][c]).epsilon(1e-12));
}

TEST_CASE("mind features lie in (0, 1] with a 1 in every voxel") {
    const MindFeatures f = mind_features(oracle::random_volume({7, 7, 7}, 8));
    for (size_t n = 0; n < f.voxels(); ++n) {
        double mx = 0.0;
        for (int c = 0; c < 6; ++c) {
            CHECK(f(n, c) > 0.0);
            mx = std::max(mx, f(n, c));
        }
        CHECK(mx == 1.0);
    }
}

TEST_CASE("mind is invariant to affine intensity changes") {
    const Volume v = oracle::random_volume({6, 6, 6}, 9);
    Volume w = v;
    for (double &x : w.data()) x = 3.0 * x + 2.0;
    const MindFeatures a = mind_features(v), b = mind_features(w);
    for (size_t n = 0; n < a.values.size(); ++n) CHECK(a.values[n] == doctest::Approx(b.values[n]).epsilon(1e-10));
}

TEST_CASE("a constant volume has all-ones features") {
    for (double x : mind_features(Volume({4, 4, 4}, {1, 1, 1}, 0.3)).values) CHECK(x == 1.0);
}

TEST_CASE("mind backward matches finite differences") {
    Volume v = oracle::random_volume({5, 5, 4}, 10);
    MindCache cache;
    const MindFeatures f = mind_features(v, cache);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> g(f.values.size());
    for (double &x : g) x = u(rng);
    const auto grad = mind_features_backward(v, f, cache, g);
    auto objective = [&](const Volume &x) {
        const MindFeatures h = mind_features(x);
        double s = 0.0;
        for (size_t n = 0; n < g.size(); ++n) s += g[n] * h.values[n];
        return s;
    };
    for (size_t n = 0; n < v.size(); n += 7) {
        const double x0 = v[n];
        v[n] = x0 + 1e-6;
        const double hi = objective(v);
        v[n] = x0 - 1e-6;
        const double lo = objective(v);
        v[n] = x0;
        CHECK(grad[n] == doctest::Approx((hi - lo) / 2e-6).epsilon(1e-4));
    }
}
