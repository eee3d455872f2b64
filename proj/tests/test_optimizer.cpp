#include "doctest.h"

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "smind/optimizer.hpp"
#include "smind/phantom.hpp"
#include "test_util.hpp"

using namespace smind;

TEST_CASE("adam: first step moves every coordinate by lr") {
    AdamState s(3, 0.1);
    std::vector<double> x{1.0, -2.0, 0.5};
    const std::vector<double> g{4.0, -0.001, 100.0};
    adam_step(s, x, g);
    CHECK(x[0] == doctest::Approx(0.9));
    CHECK(x[1] == doctest::Approx(-1.9));
    CHECK(x[2] == doctest::Approx(0.4));
    CHECK(s.step == 1);
    CHECK_THROWS_AS(adam_step(s, x, std::vector<double>(2)), std::invalid_argument);
}

TEST_CASE("adam minimizes a quadratic") {
    AdamState s(2, 0.05);
    std::vector<double> x{3.0, -4.0};
    for (int it = 0; it < 2000; ++it) {
        const std::vector<double> g{2.0 * (x[0] - 1.0), 20.0 * (x[1] + 0.5)};
        adam_step(s, x, g);
    }
    CHECK(x[0] == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(x[1] == doctest::Approx(-0.5).epsilon(1e-3));
}

TEST_CASE("early stopper waits `patience` stale iterations") {
    EarlyStopper e(StageSchedule{0.1, 100, 3, 0.01});
    CHECK_FALSE(e.update(1.0));
    CHECK_FALSE(e.update(0.5));
    CHECK(e.improved());
    CHECK_FALSE(e.update(0.495)); // within min_delta: stale 1
    CHECK_FALSE(e.improved());
    CHECK_FALSE(e.update(0.6));
    CHECK(e.update(0.5));
    CHECK(e.best() == 0.5);
}

TEST_CASE("schedule validation") {
    CHECK_THROWS_AS((StageSchedule{0.0, 10, 1, 0.0}).validate(), std::invalid_argument);
    CHECK_THROWS_AS((StageSchedule{0.1, 0, 1, 0.0}).validate(), std::invalid_argument);
    CHECK_THROWS_AS((StageSchedule{0.1, 10, 0, 0.0}).validate(), std::invalid_argument);
}

TEST_CASE("gradient_check on an analytic function") {
    auto f = [](std::span<const double> x) { return std::sin(x[0]) * x[1] + x[1] * x[1]; };
    const std::vector<double> p{0.3, 1.2};
    const std::vector<double> good{std::cos(0.3) * 1.2, std::sin(0.3) + 2.4};
    CHECK(gradient_check(f, p, good, 1e-5).max_relative_error < 1e-8);
    const std::vector<double> bad{good[0] * 1.1, good[1]};
    const auto r = gradient_check(f, p, bad, 1e-5);
    CHECK(r.relative_error[0] == doctest::Approx(0.1 / 1.1).epsilon(1e-4));
    CHECK(r.max_relative_error == r.relative_error[0]);
}

TEST_CASE("coarse registration of a pair with itself stays at identity") {
    const PhantomPair p = generate_pair(testutil::small_spec());
    CoarseConfig cfg;
    cfg.schedule.max_iters = 60;
    LossTrace trace;
    const CoarseResult r = coarse_register(p.fixed, p.fixed, cfg, &trace);
    for (int a = 0; a < 3; ++a) {
        CHECK(std::abs(r.params.rot[a]) < 0.01);
        CHECK(std::abs(r.params.trans[a]) < 0.2);
        CHECK(std::abs(r.params.scale[a] - 1.0) < 0.02);
    }
    CHECK_FALSE(trace.empty());
    CHECK(trace.front().stage == "rigid");
    CHECK(trace.back().stage == "affine");
    CHECK_FALSE(r.uniform_weight_fallback);
}

TEST_CASE("coarse registration falls back to uniform weights on a flat volume") {
    const PhantomPair p = generate_pair(testutil::small_spec());
    CoarseConfig cfg;
    cfg.schedule.max_iters = 5;
    const CoarseResult r = coarse_register(p.fixed, Volume(p.fixed.dims(), p.fixed.spacing(), 0.5), cfg);
    CHECK(r.uniform_weight_fallback);
    CHECK(std::isfinite(r.loss));
}

TEST_CASE("non-finite intensities are numerical errors") {
    Volume v({8, 8, 8}, {1, 1, 1}, 0.5);
    Volume bad = v;
    bad[17] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(coarse_register(v, bad, CoarseConfig{}), NumericalError);
    CHECK_THROWS_AS(deformable_register(bad, v, DeformableConfig{}), NumericalError);
    CHECK_THROWS_AS(normalize_intensity(bad), std::invalid_argument);
}

TEST_CASE("coarse registration rejects mismatched grids") {
    CHECK_THROWS_AS(coarse_register(Volume({8, 8, 8}, {1, 1, 1}), Volume({8, 8, 6}, {1, 1, 1}), CoarseConfig{}),
                    std::invalid_argument);
}

TEST_CASE("deformable registration never reports a loss above its start") {
    const PhantomPair p = generate_pair(testutil::small_spec());
    DeformableConfig cfg;
    cfg.schedule.max_iters = 15;
    LossTrace trace;
    const DeformableResult r = deformable_register(p.fixed, p.moving, cfg, &trace);
    REQUIRE_FALSE(trace.empty());
    CHECK(r.loss <= trace.front().loss);
    CHECK(r.iterations <= 15);
    CHECK(r.field.residuals.size() == 3);
}
