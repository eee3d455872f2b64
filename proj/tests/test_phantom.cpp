#include "doctest.h"

#include <cmath>

#include "smind/phantom.hpp"
#include "smind/vwmi.hpp"
#include "test_util.hpp"

using namespace smind;

namespace {

double correlation(const Volume &a, const Volume &b) {
    double ma = 0.0, mb = 0.0;
    for (size_t n = 0; n < a.size(); ++n) {
        ma += a[n];
        mb += b[n];
    }
    ma /= static_cast<double>(a.size());
    mb /= static_cast<double>(b.size());
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (size_t n = 0; n < a.size(); ++n) {
        sab += (a[n] - ma) * (b[n] - mb);
        saa += (a[n] - ma) * (a[n] - ma);
        sbb += (b[n] - mb) * (b[n] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

} // namespace

TEST_CASE("remaps") {
    CHECK(ModalityRemap{RemapKind::identity}.apply(0.3) == 0.3);
    CHECK(ModalityRemap{RemapKind::inverse}.apply(0.3) == doctest::Approx(0.7));
    CHECK(ModalityRemap{RemapKind::gamma, 2.0}.apply(0.5) == doctest::Approx(0.25));
    for (auto k : {RemapKind::identity, RemapKind::inverse, RemapKind::gamma, RemapKind::sigmoid_bands})
        CHECK(parse_remap_kind(to_string(k)) == k);
    CHECK_THROWS_AS(parse_remap_kind("t2"), std::invalid_argument);
}

TEST_CASE("same seed gives bit-identical pairs") {
    PhantomSpec s = testutil::small_spec(7);
    s.transform.rot[2] = 0.1;
    const PhantomPair a = generate_pair(s), b = generate_pair(s);
    for (size_t n = 0; n < a.fixed.size(); ++n) {
        CHECK(a.fixed[n] == b.fixed[n]);
        CHECK(a.moving[n] == b.moving[n]);
        CHECK(a.moving_mask.values[n] == b.moving_mask.values[n]);
    }
    s.seed = 8;
    const PhantomPair c = generate_pair(s);
    bool differs = false;
    for (size_t n = 0; n < a.fixed.size() && !differs; ++n) differs = a.fixed[n] != c.fixed[n];
    CHECK(differs);
}

TEST_CASE("identity transform and remap: moving equals fixed within the noise") {
    PhantomSpec s = testutil::small_spec();
    s.noise = 0.02;
    const PhantomPair p = generate_pair(s);
    double sq = 0.0;
    for (size_t n = 0; n < p.fixed.size(); ++n) sq += (p.fixed[n] - p.moving[n]) * (p.fixed[n] - p.moving[n]);
    const double rms = std::sqrt(sq / static_cast<double>(p.fixed.size()));
    CHECK(rms < 0.02 * std::sqrt(2.0) * 1.2);
    CHECK(dice(p.fixed_mask, p.moving_mask) == 1.0);
    CHECK(p.fixed_mask.count() > 0);
}

TEST_CASE("inverse remap: anti-correlated, yet VWMI prefers alignment") {
    PhantomSpec s;
    s.dims = {32, 32, 24};
    s.noise = 0.0;
    s.remap.kind = RemapKind::inverse;
    const PhantomPair p = generate_pair(s);
    CHECK(correlation(p.fixed, p.moving) < -0.99);

    AffineParams shift;
    shift.trans = {10.0, 0.0, 0.0};
    const Volume shifted = warp_affine(p.moving, shift, Boundary::clamp);
    const HistogramConfig cfg;
    const double aligned = vwmi_loss(p.fixed, p.moving, weight_map(p.fixed, p.moving), cfg);
    const double off = vwmi_loss(p.fixed, shifted, weight_map(p.fixed, shifted), cfg);
    CHECK(aligned < off);
}

TEST_CASE("ground truth and mask follow the transform") {
    PhantomSpec s = testutil::small_spec();
    s.transform.trans = {3.0, 0.0, 0.0};
    const PhantomPair p = generate_pair(s);
    CHECK(p.ground_truth == s.transform);
    CHECK(dice(warp_mask(p.fixed_mask, s.transform), p.moving_mask) > 0.95);
}

TEST_CASE("bump field") {
    BumpSpec b;
    b.center = {10, 8, 6};
    b.radius = 3;
    b.peak = 2;
    b.axis = 1;
    const DeformationField f = bump_field(b, {20, 16, 12}, {1, 1, 1});
    CHECK(f.at(10, 8, 6, 1) == doctest::Approx(2.0));
    CHECK(f.at(10, 8, 6, 0) == 0.0);
    CHECK(f.at(13, 8, 6, 1) == doctest::Approx(2.0 * std::exp(-0.5)));

    PhantomSpec s = testutil::small_spec();
    s.bump = b;
    const PhantomPair p = generate_pair(s);
    REQUIRE(p.bump_field.has_value());
    s.bump->peak = 2.5; // > 16 / 8
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("spec validation") {
    PhantomSpec s;
    s.n_blobs = 0;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = PhantomSpec{};
    s.noise = -1.0;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = PhantomSpec{};
    s.transform.scale[1] = 0.0;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}
