#pragma once

// Ingest, validation and repair of daily commodity price series.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "agribench/csv.hpp"
#include "agribench/error.hpp"

namespace agribench {

using Date = std::chrono::sys_days;

/// Parses a strict ISO-8601 calendar date (YYYY-MM-DD). Anything else throws.
inline std::optional<Date> try_parse_iso_date(std::string_view s) {
    s = csv::trim(s);
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
    for (std::size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u})
        if (s[i] < '0' || s[i] > '9') return std::nullopt;
    const int y = std::stoi(std::string(s.substr(0, 4)));
    const unsigned m = static_cast<unsigned>(std::stoi(std::string(s.substr(5, 2))));
    const unsigned d = static_cast<unsigned>(std::stoi(std::string(s.substr(8, 2))));
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok()) return std::nullopt;
    return Date{ymd};
}

inline Date parse_iso_date(std::string_view s) {
    auto d = try_parse_iso_date(s);
    if (!d) throw DataError("malformed date '" + std::string(s) + "' (expected YYYY-MM-DD)");
    return *d;
}

inline std::string format_iso_date(Date d) {
    const std::chrono::year_month_day ymd{d};
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

inline double compute_mid(double min_price, double max_price) { return (min_price + max_price) / 2.0; }

struct PriceRecord {
    Date date;
    double min_price = 0.0;
    double max_price = 0.0;
    double mid_price = 0.0;
};

enum class AnomalyKind { out_of_range, zero_price, gap_filled };

inline std::string_view to_string(AnomalyKind k) {
    switch (k) {
        case AnomalyKind::out_of_range:
            return "out-of-range";
        case AnomalyKind::zero_price:
            return "zero-price";
        case AnomalyKind::gap_filled:
            return "gap-filled";
    }
    return "unknown";
}

struct AnomalyFlag {
    Date date;
    AnomalyKind kind;
    double raw_value = 0.0;

    friend bool operator==(const AnomalyFlag&, const AnomalyFlag&) = default;
};

struct PriceSeries {
    std::string commodity;
    std::vector<PriceRecord> records;
    std::vector<AnomalyFlag> anomalies;

    std::size_t size() const { return records.size(); }

    std::vector<double> mid_prices() const {
        std::vector<double> out;
        out.reserve(records.size());
        for (const auto& r : records) out.push_back(r.mid_price);
        return out;
    }

    std::vector<Date> dates() const {
        std::vector<Date> out;
        out.reserve(records.size());
        for (const auto& r : records) out.push_back(r.date);
        return out;
    }
};

/// Column mapping for input files: either (date, min, max) or (date, mid).
struct ColumnSchema {
    std::string date = "date";
    std::string min = "min";
    std::string max = "max";
    std::string mid;  // non-empty selects the mid-only form

    static ColumnSchema min_max(std::string date = "date", std::string min = "min", std::string max = "max") {
        return {std::move(date), std::move(min), std::move(max), {}};
    }
    static ColumnSchema mid_only(std::string date = "date", std::string mid = "mid") {
        return {std::move(date), {}, {}, std::move(mid)};
    }
    bool is_mid_only() const { return !mid.empty(); }
};

/// Parses comma-delimited text with a header row into a date-sorted series.
/// Every bad row is collected and reported together, by 1-based line number.
inline PriceSeries parse_series(std::string_view text, const ColumnSchema& schema, std::string commodity = {}) {
    const auto rows = csv::lines(text);
    if (rows.empty()) throw DataError("empty input");

    const auto header = csv::split(rows.front());
    auto column = [&](const std::string& name) -> std::size_t {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw DataError("missing column '" + name + "' in header");
    };
    const std::size_t date_col = column(schema.date);
    std::size_t a_col = 0, b_col = 0;
    if (schema.is_mid_only()) {
        a_col = column(schema.mid);
    } else {
        a_col = column(schema.min);
        b_col = column(schema.max);
    }
    if (rows.size() == 1) throw DataError("empty input: header only");

    PriceSeries series;
    series.commodity = std::move(commodity);
    std::string problems;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto fields = csv::split(rows[r]);
        const std::string where = "row " + std::to_string(r + 1) + ": ";
        const std::size_t need = std::max({date_col, a_col, b_col}) + 1;
        if (fields.size() < need) {
            problems += where + "too few fields\n";
            continue;
        }
        auto date = try_parse_iso_date(fields[date_col]);
        if (!date) {
            problems += where + "malformed date '" + std::string(fields[date_col]) + "'\n";
            continue;
        }
        auto a = csv::parse_double(fields[a_col]);
        if (!a) {
            problems += where + "non-numeric price '" + std::string(fields[a_col]) + "'\n";
            continue;
        }
        PriceRecord rec{*date, *a, *a, *a};
        if (!schema.is_mid_only()) {
            auto b = csv::parse_double(fields[b_col]);
            if (!b) {
                problems += where + "non-numeric price '" + std::string(fields[b_col]) + "'\n";
                continue;
            }
            rec.max_price = *b;
            rec.mid_price = compute_mid(*a, *b);
        }
        series.records.push_back(rec);
    }
    if (!problems.empty()) throw DataError("unparseable rows:\n" + problems);

    std::stable_sort(series.records.begin(), series.records.end(),
                     [](const PriceRecord& x, const PriceRecord& y) { return x.date < y.date; });
    for (std::size_t i = 1; i < series.records.size(); ++i)
        if (series.records[i].date == series.records[i - 1].date)
            throw DataError("duplicate date " + format_iso_date(series.records[i].date));
    return series;
}

/// Flags records whose min, max or mid price falls outside [low, high].
/// Zero prices are reported as zero-price; at most one flag per record.
inline std::vector<AnomalyFlag> validate(const PriceSeries& series, double low = 0.1, double high = 500.0) {
    if (!(low < high)) throw ConfigError("validate: low must be below high");
    std::vector<AnomalyFlag> flags;
    for (const auto& r : series.records) {
        const double values[3] = {r.min_price, r.max_price, r.mid_price};
        std::optional<AnomalyFlag> flag;
        for (double v : values) {
            if (v == 0.0) {
                flag = AnomalyFlag{r.date, AnomalyKind::zero_price, v};
                break;
            }
            if (!flag && (v < low || v > high || !std::isfinite(v))) flag = AnomalyFlag{r.date, AnomalyKind::out_of_range, v};
        }
        if (flag) flags.push_back(*flag);
    }
    return flags;
}

/// Inserts every missing calendar day, carrying the previous record's prices.
/// Existing records (including zero-price ones) are left untouched.
inline PriceSeries forward_fill(const PriceSeries& series) {
    if (series.records.empty()) throw DataError("forward_fill: gap before any observed record");
    PriceSeries out;
    out.commodity = series.commodity;
    out.anomalies = series.anomalies;
    out.records.reserve(series.records.size());
    out.records.push_back(series.records.front());
    for (std::size_t i = 1; i < series.records.size(); ++i) {
        const auto& cur = series.records[i];
        if (cur.date <= out.records.back().date) throw DataError("forward_fill: dates not strictly increasing");
        while (out.records.back().date + std::chrono::days{1} < cur.date) {
            PriceRecord filled = out.records.back();
            filled.date += std::chrono::days{1};
            out.records.push_back(filled);
            out.anomalies.push_back({filled.date, AnomalyKind::gap_filled, filled.mid_price});
        }
        out.records.push_back(cur);
    }
    return out;
}

/// Sensitivity-run repair: replaces zero mid-prices by linear interpolation
/// between the nearest non-zero neighbours (edge zeros copy the neighbour).
inline PriceSeries interpolate_zero_prices(const PriceSeries& series) {
    PriceSeries out = series;
    auto& recs = out.records;
    const std::size_t n = recs.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (recs[i].mid_price != 0.0) continue;
        std::size_t lo = i, hi = i;
        while (lo > 0 && recs[lo].mid_price == 0.0) --lo;
        while (hi + 1 < n && recs[hi].mid_price == 0.0) ++hi;
        const bool has_lo = recs[lo].mid_price != 0.0;
        const bool has_hi = recs[hi].mid_price != 0.0;
        double v = 0.0;
        if (has_lo && has_hi) {
            const double t = static_cast<double>(i - lo) / static_cast<double>(hi - lo);
            v = recs[lo].mid_price + t * (recs[hi].mid_price - recs[lo].mid_price);
        } else if (has_lo) {
            v = recs[lo].mid_price;
        } else if (has_hi) {
            v = recs[hi].mid_price;
        }
        recs[i].min_price = recs[i].max_price = recs[i].mid_price = v;
    }
    return out;
}

/// Dense symmetric matrix of pairwise Pearson coefficients with labels.
struct CorrelationMatrix {
    std::vector<std::string> names;
    std::vector<double> values;  // row-major, names.size() squared

    double operator()(std::size_t i, std::size_t j) const { return values[i * names.size() + j]; }
};

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw DataError("pearson: mismatched or too-short series");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw DataError("pearson: zero-variance series");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Correlation of mid-price levels. All series must cover identical dates.
inline CorrelationMatrix pearson_matrix(const std::vector<PriceSeries>& series_list) {
    CorrelationMatrix m;
    const std::size_t k = series_list.size();
    std::vector<std::vector<double>> mids;
    for (const auto& s : series_list) {
        if (s.size() != series_list.front().size()) throw DataError("pearson_matrix: mismatched series lengths");
        if (s.dates() != series_list.front().dates()) throw DataError("pearson_matrix: mismatched date ranges");
        m.names.push_back(s.commodity);
        mids.push_back(s.mid_prices());
    }
    m.values.assign(k * k, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        m.values[i * k + i] = pearson(mids[i], mids[i]) > 0.0 ? 1.0 : 0.0;  // throws on zero variance
        for (std::size_t j = i + 1; j < k; ++j) {
            const double r = pearson(mids[i], mids[j]);
            m.values[i * k + j] = m.values[j * k + i] = r;
        }
    }
    return m;
}

inline std::string anomaly_csv(const std::vector<AnomalyFlag>& flags) {
    std::string out = "date,kind,raw_value\n";
    for (const auto& f : flags)
        out += format_iso_date(f.date) + "," + std::string(to_string(f.kind)) + "," + csv::fmt(f.raw_value) + "\n";
    return out;
}

inline std::string correlation_csv(const CorrelationMatrix& m) {
    std::string out = "commodity";
    for (const auto& n : m.names) out += "," + n;
    out += "\n";
    for (std::size_t i = 0; i < m.names.size(); ++i) {
        out += m.names[i];
        for (std::size_t j = 0; j < m.names.size(); ++j) out += "," + csv::fmt(m(i, j));
        out += "\n";
    }
    return out;
}

inline std::string series_csv(const PriceSeries& s) {
    std::string out = "date,min,max,mid\n";
    for (const auto& r : s.records)
        out += format_iso_date(r.date) + "," + csv::fmt(r.min_price) + "," + csv::fmt(r.max_price) + "," +
               csv::fmt(r.mid_price) + "\n";
    return out;
}

}  // namespace agribench
