#include "agribench/models/sarima.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "agribench/rng.hpp"

using namespace agribench;

namespace {

std::vector<double> ar1(std::uint64_t seed, std::size_t n, double phi, double mean = 0.0) {
    Rng rng(seed);
    std::vector<double> y(n);
    double x = 0.0;
    for (std::size_t i = 0; i < 100; ++i) x = phi * x + rng.normal();  // burn-in
    for (auto& v : y) {
        x = phi * x + rng.normal();
        v = mean + x;
    }
    return y;
}

std::vector<double> seasonal_ma(std::uint64_t seed, std::size_t n, double theta, int m = 7) {
    Rng rng(seed);
    std::vector<double> e(n + m);
    for (auto& v : e) v = rng.normal();
    std::vector<double> y(n);
    for (std::size_t t = 0; t < n; ++t) y[t] = 20.0 + e[t + m] + theta * e[t];
    return y;
}

}  // namespace

TEST(SarimaPoly, ExpansionAndDifferencing) {
    const std::vector<double> a{0.5}, s{0.3};
    const auto c = detail::sarima::expand_ar(a, s, 7);
    // (1 - 0.5B)(1 - 0.3B^7) = 1 - 0.5B - 0.3B^7 + 0.15B^8
    ASSERT_EQ(c.size(), 8u);
    EXPECT_DOUBLE_EQ(c[0], 0.5);
    EXPECT_DOUBLE_EQ(c[6], 0.3);
    EXPECT_DOUBLE_EQ(c[7], -0.15);
    const auto m = detail::sarima::expand_ma(a, s, 7);
    EXPECT_DOUBLE_EQ(m[7], 0.15);
    const auto delta = detail::sarima::differencing_poly(1, 1, 7);
    // (1 - B)(1 - B^7) = 1 - B - B^7 + B^8
    ASSERT_EQ(delta.size(), 8u);
    EXPECT_EQ(delta[0], -1.0);
    EXPECT_EQ(delta[6], -1.0);
    EXPECT_EQ(delta[7], 1.0);
}

TEST(SarimaPoly, PartransIsStationaryAndInvertible) {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> raw(1 + rng.below(4));
        for (auto& v : raw) v = rng.normal(0, 2);
        const auto c = detail::sarima::partrans(raw);
        EXPECT_TRUE(detail::sarima::roots_outside_unit_circle(c, -1.0, 0.0));
        const auto back = detail::sarima::invpartrans(c);
        for (std::size_t i = 0; i < raw.size(); ++i)
            if (std::abs(raw[i]) < 5) {
                EXPECT_NEAR(back[i], raw[i], 1e-6);
            }
    }
    const std::vector<double> unit{1.0};
    EXPECT_FALSE(detail::sarima::roots_outside_unit_circle(unit, -1.0));
}

TEST(SarimaFit, RecoversAr1) {
    int hits = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto y = ar1(100 + seed, 500, 0.7, 50.0);
        const auto m = sarima_fit(y);
        const bool ok = m.order.p >= 1 && std::abs(m.ar[0] - 0.7) <= 0.1;
        hits += ok;
        EXPECT_EQ(m.order.d, 0) << "seed " << seed;
    }
    EXPECT_GE(hits, 8);
}

TEST(SarimaFit, ExplicitAr1OrderEstimate) {
    const auto y = ar1(7, 500, 0.7, 10.0);
    const auto m = sarima_fit_order(y, {1, 0, 0, 0, 0, 0, 7}, 1);
    ASSERT_TRUE(m.has_value());
    EXPECT_NEAR(m->ar[0], 0.7, 0.1);
    EXPECT_NEAR(m->mean, 10.0, 0.5);
    EXPECT_NEAR(m->sigma2, 1.0, 0.2);
}

TEST(SarimaFit, WhiteNoiseIsParsimonious) {
    int parsimonious = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(300 + seed);
        std::vector<double> y(400);
        for (auto& v : y) v = 5.0 + rng.normal();
        const auto best = sarima_fit(y);
        const auto null = sarima_fit_order(y, {0, 0, 0, 0, 0, 0, 7}, sarima_conditioning(3, 2, 7));
        ASSERT_TRUE(null.has_value());
        EXPECT_LE(best.aic, null->aic + 1e-9);
        parsimonious += null->aic - best.aic <= 2.0;
    }
    EXPECT_GE(parsimonious, 8);
}

TEST(SarimaFit, DetectsSeasonalMa) {
    int hits = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) hits += sarima_fit(seasonal_ma(500 + seed, 600, 0.7)).order.Q >= 1;
    EXPECT_GE(hits, 8);
}

TEST(SarimaFit, FittedPolynomialsAreInvertible) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto m = sarima_fit(seasonal_ma(900 + seed, 400, 0.6));
        EXPECT_TRUE(detail::sarima::roots_outside_unit_circle(detail::sarima::expand_ar(m.ar, m.sar, 7), -1.0));
        EXPECT_TRUE(detail::sarima::roots_outside_unit_circle(detail::sarima::expand_ma(m.ma, m.sma, 7), 1.0));
    }
}

TEST(SarimaFit, RandomWalkIsDifferenced) {
    int differenced = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(40 + seed);
        std::vector<double> y(500);
        double acc = 100.0;
        for (auto& v : y) v = acc += rng.normal();
        differenced += sarima_select_differencing(y, {}).first >= 1;
    }
    EXPECT_GE(differenced, 8);
}

TEST(SarimaFit, Errors) {
    EXPECT_THROW(sarima_fit(std::vector<double>(20, 1.0)), DataError);
}

TEST(SarimaFit, GridAndStepwiseAgreeOnAr1) {
    const auto y = ar1(5, 300, 0.7);
    SarimaSearch grid;
    grid.stepwise = false;
    grid.max_P = 1;
    grid.max_Q = 1;
    grid.max_p = 2;
    grid.max_q = 2;
    const auto g = sarima_fit(y, grid);
    SarimaSearch step = grid;
    step.stepwise = true;
    EXPECT_LE(g.aic, sarima_fit(y, step).aic + 1e-9);
}

TEST(SarimaForecast, ConstantModel) {
    SarimaModel m;
    m.order = {0, 0, 0, 0, 0, 0, 7};
    m.mean = 12.5;
    m.has_mean = true;
    const std::vector<double> hist{1, 2, 3, 4, 5};
    for (double v : sarima_forecast(m, hist, 14)) EXPECT_DOUBLE_EQ(v, 12.5);
}

TEST(SarimaForecast, Ar1DecaysGeometrically) {
    SarimaModel m;
    m.order = {1, 0, 0, 0, 0, 0, 7};
    m.ar = {0.5};
    m.mean = 10.0;
    m.has_mean = true;
    m.ncond = 1;
    const std::vector<double> hist{10, 11, 12, 18};
    const auto f = sarima_forecast(m, hist, 14);
    for (std::size_t h = 0; h < 14; ++h) EXPECT_NEAR(f[h], 10.0 + 8.0 * std::pow(0.5, h + 1.0), 1e-12);
}

TEST(SarimaForecast, RandomWalkRepeatsLastValue) {
    SarimaModel m;
    m.order = {0, 1, 0, 0, 0, 0, 7};
    const std::vector<double> hist{3, 5, 4, 9};
    for (double v : sarima_forecast(m, hist, 5)) EXPECT_DOUBLE_EQ(v, 9.0);
    // Seasonal random walk repeats the last week.
    m.order = {0, 0, 0, 0, 1, 0, 7};
    const std::vector<double> week{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14};
    const auto f = sarima_forecast(m, week, 14);
    for (std::size_t h = 0; h < 14; ++h) EXPECT_DOUBLE_EQ(f[h], week[7 + h % 7]);
}

TEST(SarimaForecast, RollingUsesHistoryUpToOrigin) {
    const auto y = ar1(9, 300, 0.6, 30.0);
    const auto m = sarima_fit(std::span<const double>(y).first(200));
    const std::vector<std::size_t> origins{200, 250};
    const auto f = sarima_forecast_rolling(m, y, origins, 14);
    ASSERT_EQ(f.size(), 2u);
    EXPECT_EQ(f[1], sarima_forecast(m, std::span<const double>(y).first(250), 14));
    for (const auto& row : f)
        for (double v : row) EXPECT_TRUE(std::isfinite(v));
}
