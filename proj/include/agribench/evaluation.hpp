#pragma once

// Point metrics, squared-loss differentials and the Diebold-Mariano test with
// the Harvey-Leybourne-Newbold correction and a Newey-West long-run variance.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "agribench/csv.hpp"
#include "agribench/error.hpp"
#include "agribench/hash.hpp"

namespace agribench {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct MetricReport {
    double mae = 0.0;
    double rmse = 0.0;
    double mape = 0.0;  // percent
    std::size_t n = 0;
    std::size_t skipped_zero_targets = 0;
};

enum class ZeroTargetPolicy { skip, epsilon };

struct MetricOptions {
    ZeroTargetPolicy zero_targets = ZeroTargetPolicy::skip;
    /// Denominator used for zero targets in epsilon mode.
    double epsilon = 1e-8;
};

inline MetricReport metrics(std::span<const double> actual, std::span<const double> predicted,
                            const MetricOptions& opt = {}) {
    if (actual.size() != predicted.size()) throw DataError("metrics: actual and predicted lengths differ");
    if (actual.empty()) throw DataError("metrics: empty input");
    MetricReport r;
    r.n = actual.size();
    double abs_sum = 0.0, sq_sum = 0.0, pct_sum = 0.0;
    std::size_t pct_n = 0;
    for (std::size_t i = 0; i < actual.size(); ++i) {
        const double e = actual[i] - predicted[i];
        if (!std::isfinite(e)) throw NumericError("metrics: non-finite value at index " + std::to_string(i));
        abs_sum += std::abs(e);
        sq_sum += e * e;
        if (actual[i] == 0.0) {
            if (opt.zero_targets == ZeroTargetPolicy::skip) {
                ++r.skipped_zero_targets;
                continue;
            }
            pct_sum += std::abs(e) / opt.epsilon;
        } else {
            pct_sum += std::abs(e / actual[i]);
        }
        ++pct_n;
    }
    const double n = static_cast<double>(r.n);
    r.mae = abs_sum / n;
    r.rmse = std::sqrt(sq_sum / n);
    r.mape = pct_n == 0 ? std::numeric_limits<double>::quiet_NaN() : 100.0 * pct_sum / static_cast<double>(pct_n);
    return r;
}

/// e_t = actual_t - predicted_t.
inline std::vector<double> forecast_errors(std::span<const double> actual, std::span<const double> predicted) {
    if (actual.size() != predicted.size()) throw DataError("forecast_errors: lengths differ");
    std::vector<double> e(actual.size());
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = actual[i] - predicted[i];
    return e;
}

/// d_t = errA_t^2 - errB_t^2.
inline std::vector<double> loss_differential(std::span<const double> err_a, std::span<const double> err_b) {
    if (err_a.size() != err_b.size()) throw DataError("loss_differential: error vectors differ in length");
    std::vector<double> d(err_a.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = err_a[i] * err_a[i] - err_b[i] * err_b[i];
    return d;
}

// ---------------------------------------------------------------------------
// Long-run variance and the DM test
// ---------------------------------------------------------------------------

enum class HacKernel { truncated, bartlett };

/// Autocovariance at lag j with the 1/n normalization.
inline double autocovariance(std::span<const double> d, double mean, std::size_t j) {
    double s = 0.0;
    for (std::size_t t = j; t < d.size(); ++t) s += (d[t] - mean) * (d[t - j] - mean);
    return s / static_cast<double>(d.size());
}

/// Variance of the mean of d: (gamma_0 + 2 sum_j w_j gamma_j) / n. The
/// truncated kernel (w_j = 1) can go negative; Bartlett (1 - j/(lag+1)) cannot.
inline double newey_west_var(std::span<const double> d, std::size_t lag, HacKernel kernel = HacKernel::truncated) {
    if (d.size() <= lag) throw DataError("newey_west_var: series length must exceed the lag");
    double mean = 0.0;
    for (double v : d) mean += v;
    mean /= static_cast<double>(d.size());
    double lrv = autocovariance(d, mean, 0);
    for (std::size_t j = 1; j <= lag; ++j) {
        const double w =
            kernel == HacKernel::truncated ? 1.0 : 1.0 - static_cast<double>(j) / static_cast<double>(lag + 1);
        lrv += 2.0 * w * autocovariance(d, mean, j);
    }
    return lrv / static_cast<double>(d.size());
}

inline double hln_multiplier(std::size_t n, std::size_t h) {
    const double nd = static_cast<double>(n), hd = static_cast<double>(h);
    const double inner = (nd + 1.0 - 2.0 * hd + hd * (hd - 1.0) / nd) / nd;
    if (!(inner > 0.0)) throw DataError("hln_multiplier: horizon too long for the sample size");
    return std::sqrt(inner);
}

/// Both forecasts have identical loss at every point; there is nothing to test.
class IndistinguishableError : public DataError {
   public:
    using DataError::DataError;
};

struct DmResult {
    double statistic = 0.0;
    double p_value = 1.0;
    std::size_t h = 14;
    std::size_t n = 0;
    std::size_t nw_lag = 13;
    bool used_fallback = false;
    /// True when the comparison model A has the lower mean squared error.
    bool a_better = false;
    double mean_differential = 0.0;
    double variance = 0.0;
};

struct DmOptions {
    std::size_t h = 14;
    /// Defaults to h - 1 when unset.
    std::optional<std::size_t> lag;
    HacKernel kernel = HacKernel::truncated;
};

/// Positive statistic: A (comparison) has lower squared-error loss than B.
inline DmResult dm_test(std::span<const double> err_a, std::span<const double> err_b, const DmOptions& opt = {}) {
    if (opt.h == 0) throw ConfigError("dm_test: horizon must be positive");
    const auto d = loss_differential(err_a, err_b);
    DmResult r;
    r.h = opt.h;
    r.n = d.size();
    r.nw_lag = opt.lag.value_or(opt.h - 1);
    if (r.n < 2) throw DataError("dm_test: need at least two loss differentials");
    double mean = 0.0;
    for (double v : d) mean += v;
    mean /= static_cast<double>(r.n);
    r.mean_differential = mean;

    const double gamma0 = autocovariance(d, mean, 0);
    if (gamma0 == 0.0) {
        if (mean == 0.0) throw IndistinguishableError("dm_test: forecasts are indistinguishable (identical losses)");
        throw NumericError("dm_test: loss differential is constant and nonzero; variance is zero");
    }
    r.variance = newey_west_var(d, r.nw_lag, opt.kernel);
    if (!(r.variance > 0.0)) {
        r.used_fallback = true;
        r.variance = gamma0 / static_cast<double>(r.n);
    }
    r.statistic = -mean / std::sqrt(r.variance) * hln_multiplier(r.n, r.h);
    r.a_better = r.statistic > 0.0;
    const boost::math::students_t dist(static_cast<double>(r.n - 1));
    r.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.statistic))));
    return r;
}

// ---------------------------------------------------------------------------
// Prediction tables: one row per (window, step), window-major
// ---------------------------------------------------------------------------

struct ForecastTable {
    std::vector<std::size_t> window_id;
    std::vector<std::size_t> step;
    std::vector<double> actual;
    std::vector<double> predicted;

    std::size_t size() const { return actual.size(); }

    void add(std::size_t w, std::size_t s, double a, double p) {
        window_id.push_back(w);
        step.push_back(s);
        actual.push_back(a);
        predicted.push_back(p);
    }

    std::vector<double> errors() const { return forecast_errors(actual, predicted); }

    /// Identifies the evaluation grid: window ids, steps and actual values.
    std::string grid_fingerprint() const {
        Fnv1a h;
        for (std::size_t i = 0; i < size(); ++i) h.add(std::uint64_t{window_id[i]}).add(std::uint64_t{step[i]}).add(actual[i]);
        return h.hex();
    }

    std::string to_csv() const {
        std::string out = "window_id,step,actual,predicted\n";
        for (std::size_t i = 0; i < size(); ++i)
            out += std::to_string(window_id[i]) + "," + std::to_string(step[i]) + "," + csv::fmt(actual[i]) + "," +
                   csv::fmt(predicted[i]) + "\n";
        return out;
    }

    static ForecastTable from_csv(std::string_view text) {
        const auto rows = csv::lines(text);
        if (rows.empty() || csv::trim(rows[0]) != "window_id,step,actual,predicted")
            throw DataError("prediction table: expected header window_id,step,actual,predicted");
        ForecastTable t;
        for (std::size_t r = 1; r < rows.size(); ++r) {
            const auto f = csv::split(rows[r]);
            if (f.size() != 4) throw DataError("prediction table: row " + std::to_string(r) + " needs 4 fields");
            const auto w = csv::parse_int(f[0]), s = csv::parse_int(f[1]);
            const auto a = csv::parse_double(f[2]), p = csv::parse_double(f[3]);
            if (!w || !s || !a || !p || *w < 0 || *s < 0)
                throw DataError("prediction table: malformed row " + std::to_string(r));
            t.add(static_cast<std::size_t>(*w), static_cast<std::size_t>(*s), *a, *p);
        }
        if (t.size() == 0) throw DataError("prediction table: no rows");
        return t;
    }
};

/// DM on two tables after checking they cover the same grid.
inline DmResult dm_compare(const ForecastTable& a, const ForecastTable& b, const DmOptions& opt = {}) {
    if (a.grid_fingerprint() != b.grid_fingerprint())
        throw DataError("dm: prediction tables cover different evaluation grids");
    return dm_test(a.errors(), b.errors(), opt);
}

}  // namespace agribench
