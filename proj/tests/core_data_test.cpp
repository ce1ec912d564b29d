#include "agribench/core_data.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <string>

#include "agribench/rng.hpp"

using namespace agribench;

namespace {

std::string daily_csv(const std::string& start, int days, double base) {
    std::string text = "date,min,max\n";
    Date d = parse_iso_date(start);
    for (int i = 0; i < days; ++i, d += std::chrono::days{1})
        text += format_iso_date(d) + "," + std::to_string(base + i) + "," + std::to_string(base + i + 10) + "\n";
    return text;
}

}  // namespace

TEST(ParseSeries, WellFormedRowsAreSorted) {
    const std::string text =
        "date,min,max\n"
        "2024-01-03,30,40\n"
        "2024-01-01,10,20\n"
        "2024-01-02,20,30\n";
    const auto s = parse_series(text, ColumnSchema::min_max(), "garlic");
    ASSERT_EQ(s.size(), 3u);
    EXPECT_EQ(format_iso_date(s.records[0].date), "2024-01-01");
    EXPECT_EQ(format_iso_date(s.records[2].date), "2024-01-03");
    EXPECT_DOUBLE_EQ(s.records[0].mid_price, 15.0);
    EXPECT_EQ(s.commodity, "garlic");
}

TEST(ParseSeries, MidOnlySchema) {
    const auto s = parse_series("day,price\n2024-02-28,12.5\n2024-02-29,13\n", ColumnSchema::mid_only("day", "price"));
    ASSERT_EQ(s.size(), 2u);
    EXPECT_DOUBLE_EQ(s.records[1].mid_price, 13.0);
    EXPECT_DOUBLE_EQ(s.records[1].min_price, 13.0);
}

TEST(ParseSeries, NegativePriceParsesAndValidateFlagsIt) {
    const auto s = parse_series("date,min,max\n2024-01-01,-5,10\n", ColumnSchema::min_max());
    const auto flags = validate(s);
    ASSERT_EQ(flags.size(), 1u);
    EXPECT_EQ(flags[0].kind, AnomalyKind::out_of_range);
    EXPECT_DOUBLE_EQ(flags[0].raw_value, -5.0);
}

TEST(ParseSeries, LengthMatchesRowCount) {
    const auto s = parse_series(daily_csv("2020-07-01", 1779, 50), ColumnSchema::min_max());
    EXPECT_EQ(s.size(), 1779u);
}

TEST(ParseSeries, Errors) {
    EXPECT_THROW(parse_series("", ColumnSchema::min_max()), DataError);
    EXPECT_THROW(parse_series("date,min,max\n", ColumnSchema::min_max()), DataError);
    EXPECT_THROW(parse_series("date,min,max\n01/02/2024,1,2\n", ColumnSchema::min_max()), DataError);
    EXPECT_THROW(parse_series("date,min,max\n2024-13-01,1,2\n", ColumnSchema::min_max()), DataError);
    EXPECT_THROW(parse_series("date,min,max\n2024-01-01,abc,2\n", ColumnSchema::min_max()), DataError);
    EXPECT_THROW(parse_series("date,min,max\n2024-01-01,1,2\n2024-01-01,3,4\n", ColumnSchema::min_max()), DataError);
    EXPECT_THROW(parse_series("date,lo,hi\n2024-01-01,1,2\n", ColumnSchema::min_max()), DataError);
}

TEST(ParseSeries, ErrorListsEveryBadRowNumber) {
    try {
        parse_series("date,min,max\n2024-01-01,x,2\n2024-01-02,1,2\n2024/01/03,1,2\n", ColumnSchema::min_max());
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("row 2"), std::string::npos);
        EXPECT_NE(msg.find("row 4"), std::string::npos);
        EXPECT_EQ(msg.find("row 3"), std::string::npos);
    }
}

TEST(ComputeMid, Examples) {
    EXPECT_DOUBLE_EQ(compute_mid(10, 10), 10.0);
    EXPECT_DOUBLE_EQ(compute_mid(60, 80), 70.0);
}

TEST(ComputeMid, BetweenBoundsProperty) {
    Rng rng(7);
    for (int i = 0; i < 1000; ++i) {
        double a = rng.uniform(0, 500), b = rng.uniform(0, 500);
        if (a > b) std::swap(a, b);
        const double m = compute_mid(a, b);
        EXPECT_LE(a, m);
        EXPECT_LE(m, b);
    }
}

TEST(Validate, CleanSeriesHasNoFlags) {
    const auto s = parse_series(daily_csv("2024-01-01", 30, 20), ColumnSchema::min_max());
    EXPECT_TRUE(validate(s).empty());
}

TEST(Validate, OneRecordAboveHigh) {
    auto s = parse_series(daily_csv("2024-01-01", 10, 20), ColumnSchema::min_max());
    s.records[4].max_price = 600;
    s.records[4].mid_price = compute_mid(s.records[4].min_price, 600);
    const auto flags = validate(s);
    ASSERT_EQ(flags.size(), 1u);
    EXPECT_EQ(flags[0].kind, AnomalyKind::out_of_range);
    EXPECT_DOUBLE_EQ(flags[0].raw_value, 600.0);
}

TEST(Validate, ZeroPricesLikeGreenChilliOutage) {
    // Zero records on 22, 23, 24 and 29 January 2024 among ~65 BDT/kg prices.
    std::string text = "date,min,max\n";
    Date d = parse_iso_date("2024-01-01");
    for (int i = 0; i < 60; ++i, d += std::chrono::days{1}) {
        const int day = static_cast<int>(static_cast<unsigned>(std::chrono::year_month_day{d}.day()));
        const bool outage = std::chrono::year_month_day{d}.month() == std::chrono::January &&
                            (day == 22 || day == 23 || day == 24 || day == 29);
        text += format_iso_date(d) + (outage ? ",0,0\n" : ",62,70\n");
    }
    const auto s = parse_series(text, ColumnSchema::min_max(), "green_chilli");
    const auto flags = validate(s);
    ASSERT_EQ(flags.size(), 4u);
    const char* expected[] = {"2024-01-22", "2024-01-23", "2024-01-24", "2024-01-29"};
    for (int i = 0; i < 4; ++i) {
        EXPECT_EQ(flags[i].kind, AnomalyKind::zero_price);
        EXPECT_EQ(format_iso_date(flags[i].date), expected[i]);
    }
    // Flags are annotations: the series itself is unchanged.
    EXPECT_DOUBLE_EQ(s.records[21].mid_price, 0.0);
}

TEST(Validate, RejectsInvertedBand) {
    const auto s = parse_series(daily_csv("2024-01-01", 3, 20), ColumnSchema::min_max());
    EXPECT_THROW(validate(s, 5, 1), ConfigError);
}

TEST(ForwardFill, SingleGap) {
    const auto s = parse_series("date,min,max\n2024-01-01,10,20\n2024-01-03,30,40\n", ColumnSchema::min_max());
    const auto f = forward_fill(s);
    ASSERT_EQ(f.size(), 3u);
    EXPECT_EQ(format_iso_date(f.records[1].date), "2024-01-02");
    EXPECT_DOUBLE_EQ(f.records[1].mid_price, 15.0);
    ASSERT_EQ(f.anomalies.size(), 1u);
    EXPECT_EQ(f.anomalies[0].kind, AnomalyKind::gap_filled);
}

TEST(ForwardFill, GaplessSeriesIsIdentity) {
    const auto s = parse_series(daily_csv("2023-12-25", 20, 40), ColumnSchema::min_max());
    const auto f = forward_fill(s);
    ASSERT_EQ(f.size(), s.size());
    EXPECT_TRUE(f.anomalies.empty());
    for (std::size_t i = 0; i < s.size(); ++i) {
        EXPECT_EQ(f.records[i].date, s.records[i].date);
        EXPECT_EQ(f.records[i].mid_price, s.records[i].mid_price);
    }
}

TEST(ForwardFill, FiveDayGapYieldsFiveFlags) {
    const auto s = parse_series("date,min,max\n2024-02-26,1,3\n2024-03-03,5,7\n", ColumnSchema::min_max());
    const auto f = forward_fill(s);
    // 26 Feb .. 3 Mar 2024 spans 7 days (leap year); 5 are missing.
    ASSERT_EQ(f.size(), 7u);
    EXPECT_EQ(f.anomalies.size(), 5u);
    EXPECT_EQ(static_cast<long>(f.size()), (f.records.back().date - f.records.front().date).count() + 1);
}

TEST(ForwardFill, KeepsZeroPricesAndRejectsEmpty) {
    const auto s = parse_series("date,min,max\n2024-01-01,0,0\n2024-01-03,5,7\n", ColumnSchema::min_max());
    const auto f = forward_fill(s);
    EXPECT_DOUBLE_EQ(f.records[0].mid_price, 0.0);
    EXPECT_DOUBLE_EQ(f.records[1].mid_price, 0.0);
    EXPECT_THROW(forward_fill(PriceSeries{}), DataError);
}

TEST(InterpolateZeroPrices, LinearBetweenNeighbours) {
    const auto s = parse_series("date,mid\n2024-01-01,10\n2024-01-02,0\n2024-01-03,0\n2024-01-04,40\n",
                                ColumnSchema::mid_only());
    const auto f = interpolate_zero_prices(s);
    EXPECT_DOUBLE_EQ(f.records[1].mid_price, 20.0);
    EXPECT_DOUBLE_EQ(f.records[2].mid_price, 30.0);
}

namespace {

PriceSeries from_values(const std::string& name, const std::vector<double>& v) {
    PriceSeries s;
    s.commodity = name;
    Date d = parse_iso_date("2021-01-01");
    for (double x : v) {
        s.records.push_back({d, x, x, x});
        d += std::chrono::days{1};
    }
    return s;
}

}  // namespace

TEST(PearsonMatrix, SelfAndNegation) {
    std::vector<double> x, neg;
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        x.push_back(rng.normal(50, 5));
        neg.push_back(-x.back());
    }
    const auto m = pearson_matrix({from_values("a", x), from_values("b", x), from_values("c", neg)});
    EXPECT_DOUBLE_EQ(m(0, 0), 1.0);
    EXPECT_NEAR(m(0, 1), 1.0, 1e-12);
    EXPECT_NEAR(m(0, 2), -1.0, 1e-12);
    EXPECT_EQ(m(1, 2), m(2, 1));
}

TEST(PearsonMatrix, AffineInvariance) {
    Rng rng(11);
    std::vector<double> x, y, ya;
    for (int i = 0; i < 200; ++i) {
        x.push_back(rng.normal());
        y.push_back(0.5 * x.back() + rng.normal());
        ya.push_back(3.7 * y.back() + 120.0);
    }
    const auto m1 = pearson_matrix({from_values("x", x), from_values("y", y)});
    const auto m2 = pearson_matrix({from_values("x", x), from_values("y", ya)});
    EXPECT_NEAR(m1(0, 1), m2(0, 1), 1e-12);
    EXPECT_LE(std::abs(m1(0, 1)), 1.0);
}

TEST(PearsonMatrix, Errors) {
    EXPECT_THROW(pearson_matrix({from_values("a", {1, 2, 3}), from_values("b", {1, 2})}), DataError);
    EXPECT_THROW(pearson_matrix({from_values("a", {1, 2, 3}), from_values("b", {4, 4, 4})}), DataError);
}

TEST(CsvOutput, AnomalyAndCorrelationShapes) {
    const auto s = parse_series("date,min,max\n2024-01-01,0,0\n2024-01-02,600,600\n", ColumnSchema::min_max());
    EXPECT_EQ(anomaly_csv(validate(s)), "date,kind,raw_value\n2024-01-01,zero-price,0\n2024-01-02,out-of-range,600\n");
    const auto m = pearson_matrix({from_values("a", {1, 2, 3}), from_values("b", {3, 2, 1})});
    EXPECT_EQ(correlation_csv(m), "commodity,a,b\na,1,-1\nb,-1,1\n");
}
