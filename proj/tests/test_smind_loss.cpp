#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "oracles.hpp"
#include "smind/optimizer.hpp"
#include "smind/smind_loss.hpp"

using namespace smind;

namespace {

DeformationField random_field(const Volume &like, uint64_t seed, double amp) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-amp, amp);
    DeformationField f(like.dims(), like.spacing());
    for (double &x : f.data()) x = u(rng);
    return f;
}

std::vector<double> as_vector(const DeformationField &f) { return {f.data().begin(), f.data().end()}; }

} // namespace

TEST_CASE("config validation") {
    SMindConfig c;
    c.validate();
    c.radius = -1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = SMindConfig{};
    c.tau = 0.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    DeformLossConfig d;
    d.levels = 0;
    CHECK_THROWS_AS(d.validate(), std::invalid_argument);
}

TEST_CASE("softmin weights are a distribution that favours small distances") {
    std::vector<Volume> d;
    for (int s = -2; s <= 2; ++s) d.emplace_back(Index3{2, 2, 2}, Vec3{1, 1, 1}, 1.0);
    d[3] = Volume({2, 2, 2}, {1, 1, 1}, 0.2); // s = +1
    SMindConfig cfg;
    cfg.radius = 2;
    const auto w = softmin_weights(d, cfg);
    for (size_t n = 0; n < 8; ++n) {
        double sum = 0.0;
        for (const auto &x : w) sum += x[n];
        CHECK(sum == doctest::Approx(1.0));
        CHECK(w[3][n] > w[2][n]);
        CHECK(w[0][n] < w[1][n]); // centre bias among equal distances
    }
    const Volume e = expected_cost(d, w);
    CHECK(e[0] > 0.2);
    CHECK(e[0] < 1.0);
}

TEST_CASE("shift distance is zero for identical features at s = 0") {
    const MindFeatures f = mind_features(oracle::random_volume({5, 5, 5}, 3));
    const Volume d0 = shift_distance(f, f, Axis::y, 0);
    for (double x : d0.data()) CHECK(x == 0.0);
    const Volume d = shift_distance(f, f, Axis::x, 1);
    // a shift past the grid reuses the unshifted distance
    CHECK(d(4, 2, 2) == 0.0);
    CHECK(d(1, 2, 2) > 0.0);
}

TEST_CASE("smind_loss matches the monolithic oracle") {
    const Volume f = oracle::random_volume({7, 6, 5}, 50);
    const Volume m = oracle::random_volume({7, 6, 5}, 51);
    const DeformationField u = random_field(f, 52, 1.5);
    for (const SMindConfig cfg : {SMindConfig{}, SMindConfig{2, 0.2, 1.0}, SMindConfig{0, 0.05, 2.0}}) {
        CHECK(smind_loss(f, m, u, cfg) ==
              doctest::Approx(oracle::smind(f, m, as_vector(u), cfg.radius, cfg.tau, cfg.sigma)).epsilon(1e-12));
    }
}

TEST_CASE("fused and unfused paths agree, and the feature gradient is exact") {
    const Volume f = oracle::random_volume({6, 6, 5}, 60);
    const Volume m = oracle::random_volume({6, 6, 5}, 61);
    const MindFeatures ff = mind_features(f);
    MindFeatures fw = mind_features(m);
    const SMindConfig cfg;
    std::vector<double> g;
    const double loss = smind_loss_fused(ff, fw, cfg, &g);
    CHECK(loss == doctest::Approx(smind_loss(f, m, DeformationField(m.dims(), m.spacing()), cfg)).epsilon(1e-12));
    for (size_t n = 0; n < fw.values.size(); n += 5) {
        const double x0 = fw.values[n];
        fw.values[n] = x0 + 1e-7;
        const double hi = smind_loss_fused(ff, fw, cfg, nullptr);
        fw.values[n] = x0 - 1e-7;
        const double lo = smind_loss_fused(ff, fw, cfg, nullptr);
        fw.values[n] = x0;
        CHECK(g[n] == doctest::Approx((hi - lo) / 2e-7).epsilon(1e-3).scale(1e-6));
    }
}

TEST_CASE("diffusion regularizer and its gradient") {
    const Volume ref = oracle::random_volume({8, 8, 4}, 1);
    MultiResField f = make_multires(ref, 2);
    for (auto &r : f.residuals)
        for (double &x : r.data()) x = 0.7;
    CHECK(diffusion_reg(f) == 0.0);

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto &r : f.residuals)
        for (double &x : r.data()) x = u(rng);
    const MultiResField g = diffusion_reg_gradient(f);
    for (size_t l = 0; l < f.residuals.size(); ++l) {
        auto d = f.residuals[l].data();
        for (size_t n = 0; n < d.size(); n += 11) {
            const double x0 = d[n];
            d[n] = x0 + 1e-6;
            const double hi = diffusion_reg(f);
            d[n] = x0 - 1e-6;
            const double lo = diffusion_reg(f);
            d[n] = x0;
            CHECK(g.residuals[l].data()[n] == doctest::Approx((hi - lo) / 2e-6).epsilon(1e-5));
        }
    }
}

TEST_CASE("deform_loss at zero field is the similarity of the unwarped pair") {
    const Volume f = oracle::random_volume({8, 8, 8}, 70), m = oracle::random_volume({8, 8, 8}, 71);
    const DeformLossConfig cfg;
    CHECK(deform_loss(f, m, make_multires(f, cfg.levels), cfg) ==
          doctest::Approx(smind_loss(f, m, DeformationField(f.dims(), f.spacing()), cfg.smind)).epsilon(1e-12));
}

TEST_CASE("deform gradient matches finite differences on sampled components") {
    const Volume f = gaussian_smooth(oracle::random_volume({12, 12, 8}, 80), 1.0);
    const Volume m = gaussian_smooth(oracle::random_volume({12, 12, 8}, 81), 1.0);
    DeformLossConfig cfg;
    cfg.smind.tau = 0.2;
    cfg.levels = 2;
    MultiResField u = make_multires(f, cfg.levels);
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> amp(-0.6, 0.6);
    for (auto &r : u.residuals)
        for (double &x : r.data()) x = amp(rng);
    const DeformObjective obj(f, m, cfg);
    const auto res = obj.evaluate(u, true);
    CHECK(res.loss == doctest::Approx(res.similarity + cfg.lambda * res.regularization));
    CHECK(res.loss == doctest::Approx(deform_loss(f, m, u, cfg)));

    int checked = 0;
    std::uniform_int_distribution<size_t> pick(0, u.residuals[1].data().size() - 1);
    for (int t = 0; t < 20; ++t) {
        const size_t l = static_cast<size_t>(t % 2);
        auto d = u.residuals[l].data();
        const size_t n = pick(rng) % d.size();
        const double x0 = d[n];
        d[n] = x0 + 1e-5;
        const double hi = obj.evaluate(u, false).loss;
        d[n] = x0 - 1e-5;
        const double lo = obj.evaluate(u, false).loss;
        d[n] = x0;
        const double numeric = (hi - lo) / 2e-5;
        const double analytic = res.grad.residuals[l].data()[n];
        CHECK(std::abs(analytic - numeric) <= 5e-2 * std::max({std::abs(analytic), std::abs(numeric), 1e-6}));
        ++checked;
    }
    CHECK(checked == 20);
}
