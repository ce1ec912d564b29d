#pragma once

// Stationarity (augmented Dickey-Fuller) and STL decomposition diagnostics.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "agribench/error.hpp"

namespace agribench {

namespace detail {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double mean(std::span<const double> x) {
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

/// Population standard deviation.
inline double stddev(std::span<const double> x) {
    const double m = mean(x);
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return std::sqrt(ss / static_cast<double>(x.size()));
}

struct OlsFit {
    Eigen::VectorXd beta;
    Eigen::VectorXd stderr_;
    double ssr = 0.0;
    std::size_t nobs = 0;

    /// Gaussian log-likelihood AIC, matching the usual OLS reporting.
    double aic() const {
        const double n = static_cast<double>(nobs);
        const double llf = -n / 2.0 * (std::log(2.0 * M_PI) + std::log(ssr / n) + 1.0);
        return -2.0 * llf + 2.0 * static_cast<double>(beta.size());
    }
};

inline OlsFit ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    OlsFit fit;
    fit.nobs = static_cast<std::size_t>(x.rows());
    const auto qr = x.colPivHouseholderQr();
    fit.beta = qr.solve(y);
    const Eigen::VectorXd resid = y - x * fit.beta;
    fit.ssr = resid.squaredNorm();
    const double dof = static_cast<double>(x.rows() - x.cols());
    const double sigma2 = fit.ssr / dof;
    const Eigen::MatrixXd xtx_inv = (x.transpose() * x).inverse();
    fit.stderr_ = (sigma2 * xtx_inv.diagonal()).cwiseSqrt();
    return fit;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Augmented Dickey-Fuller
// ---------------------------------------------------------------------------

enum class AdfRegression { constant };

struct AdfResult {
    double statistic = 0.0;
    double p_value = 1.0;
    std::size_t lags_used = 0;
    std::size_t nobs = 0;
    AdfRegression regression = AdfRegression::constant;

    bool stationary(double alpha = 0.05) const { return p_value < alpha; }
};

/// MacKinnon (1994) response-surface approximation of the asymptotic p-value
/// for the constant-only, single-series tau statistic. Coefficients are the
/// published N=1 "c" values (J. MacKinnon, "Approximate asymptotic
/// distribution functions for unit-root and cointegration tests", JBES 1994,
/// Table 3), as also tabulated in statsmodels' adfvalues module.
inline double mackinnon_p_constant(double tau) {
    constexpr double tau_max = 2.74;
    constexpr double tau_min = -18.83;
    constexpr double tau_star = -1.61;
    constexpr double small_p[3] = {2.1659, 1.4412, 0.038269};
    constexpr double large_p[4] = {1.7339, 0.93202, -0.12745, -0.010368};
    if (tau > tau_max) return 1.0;
    if (tau < tau_min) return 0.0;
    double z = 0.0;
    if (tau <= tau_star) {
        z = small_p[0] + tau * (small_p[1] + tau * small_p[2]);
    } else {
        z = large_p[0] + tau * (large_p[1] + tau * (large_p[2] + tau * large_p[3]));
    }
    return detail::normal_cdf(z);
}

namespace detail {

/// Regressors [1, y_{t-1}, dy_{t-1} .. dy_{t-lags}] for the last `nobs`
/// differences, and the matching dy_t response.
inline void adf_design(std::span<const double> y, std::size_t lags, std::size_t nobs, Eigen::MatrixXd& x,
                       Eigen::VectorXd& dy) {
    const std::size_t cols = lags + 2;
    const std::size_t n = y.size();
    x.resize(static_cast<Eigen::Index>(nobs), static_cast<Eigen::Index>(cols));
    dy.resize(static_cast<Eigen::Index>(nobs));
    for (std::size_t r = 0; r < nobs; ++r) {
        const std::size_t t = n - nobs + r;  // index of y_t, response is y_t - y_{t-1}
        const auto row = static_cast<Eigen::Index>(r);
        dy(row) = y[t] - y[t - 1];
        x(row, 0) = 1.0;
        x(row, 1) = y[t - 1];
        for (std::size_t l = 1; l <= lags; ++l) x(row, static_cast<Eigen::Index>(l + 1)) = y[t - l] - y[t - l - 1];
    }
}

}  // namespace detail

/// Constant-only ADF regression with the lag order chosen by AIC over
/// 0..floor(12 (n/100)^{1/4}) on a common sample, then refit on the full
/// sample available at the chosen order.
inline AdfResult adf_test(std::span<const double> y) {
    const std::size_t n = y.size();
    if (n < 30) throw DataError("adf_test: series shorter than 30 observations");
    const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
    if (*lo == *hi) throw DataError("adf_test: constant series");

    std::size_t max_lag = static_cast<std::size_t>(std::floor(12.0 * std::pow(static_cast<double>(n) / 100.0, 0.25)));
    max_lag = std::min(max_lag, n / 2 - 2);

    // Common sample: the last n-1-max_lag differences.
    const std::size_t common = n - 1 - max_lag;
    std::size_t best_lag = 0;
    double best_aic = std::numeric_limits<double>::infinity();
    Eigen::MatrixXd x;
    Eigen::VectorXd dy;
    for (std::size_t lag = 0; lag <= max_lag; ++lag) {
        detail::adf_design(y, lag, common, x, dy);
        const double aic = detail::ols(x, dy).aic();
        if (aic < best_aic) {
            best_aic = aic;
            best_lag = lag;
        }
    }

    const std::size_t nobs = n - 1 - best_lag;
    detail::adf_design(y, best_lag, nobs, x, dy);
    const auto fit = detail::ols(x, dy);
    AdfResult res;
    res.statistic = fit.beta(1) / fit.stderr_(1);
    if (!std::isfinite(res.statistic)) throw NumericError("adf_test: degenerate regression");
    res.p_value = mackinnon_p_constant(res.statistic);
    res.lags_used = best_lag;
    res.nobs = nobs;
    return res;
}

// ---------------------------------------------------------------------------
// STL (Cleveland, Cleveland, McRae & Terpenning 1990), additive, inner loop
// only unless robust iterations are requested.
// ---------------------------------------------------------------------------

struct StlOptions {
    std::size_t period = 365;
    std::size_t seasonal = 7;   // seasonal smoother length, odd >= 3
    std::size_t trend = 0;      // 0 selects the smallest odd >= 1.5 period / (1 - 1.5 / seasonal)
    std::size_t low_pass = 0;   // 0 selects the smallest odd > period
    int seasonal_deg = 1;
    int trend_deg = 1;
    int low_pass_deg = 1;
    std::size_t seasonal_jump = 0;  // 0 selects ceil(length / 10)
    std::size_t trend_jump = 0;
    std::size_t low_pass_jump = 0;
    std::size_t inner_iter = 2;
    std::size_t outer_iter = 0;
};

struct StlResult {
    std::vector<double> trend;
    std::vector<double> seasonal;
    std::vector<double> residual;
    std::size_t period = 0;
};

namespace detail::stl {

// Indices in these helpers are 1-based to mirror the reference algorithm;
// spans are accessed with [i - 1].

/// Local weighted regression estimate at position xs using points nleft..nright.
inline bool est(std::span<const double> y, std::size_t n, std::size_t len, int deg, double xs, double& ys,
                std::size_t nleft, std::size_t nright, std::vector<double>& w, bool userw, std::span<const double> rw) {
    const double range = static_cast<double>(n) - 1.0;
    double h = std::max(xs - static_cast<double>(nleft), static_cast<double>(nright) - xs);
    if (len > n) h += static_cast<double>((len - n) / 2);
    const double h9 = 0.999 * h;
    const double h1 = 0.001 * h;
    double a = 0.0;
    for (std::size_t j = nleft; j <= nright; ++j) {
        w[j - 1] = 0.0;
        const double r = std::abs(static_cast<double>(j) - xs);
        if (r <= h9) {
            if (r <= h1) {
                w[j - 1] = 1.0;
            } else {
                const double q = r / h;
                const double t = 1.0 - q * q * q;
                w[j - 1] = t * t * t;
            }
            if (userw) w[j - 1] *= rw[j - 1];
            a += w[j - 1];
        }
    }
    if (a <= 0.0) return false;
    for (std::size_t j = nleft; j <= nright; ++j) w[j - 1] /= a;
    if (h > 0.0 && deg > 0) {
        a = 0.0;
        for (std::size_t j = nleft; j <= nright; ++j) a += w[j - 1] * static_cast<double>(j);
        double b = xs - a;
        double c = 0.0;
        for (std::size_t j = nleft; j <= nright; ++j) {
            const double d = static_cast<double>(j) - a;
            c += w[j - 1] * d * d;
        }
        if (std::sqrt(c) > 0.001 * range) {
            b /= c;
            for (std::size_t j = nleft; j <= nright; ++j) w[j - 1] *= b * (static_cast<double>(j) - a) + 1.0;
        }
    }
    double s = 0.0;
    for (std::size_t j = nleft; j <= nright; ++j) s += w[j - 1] * y[j - 1];
    ys = s;
    return true;
}

/// Loess smooth of y[0..n) into ys, evaluated every `jump` points and
/// linearly interpolated in between.
inline void ess(std::span<const double> y, std::size_t n, std::size_t len, int deg, std::size_t jump, bool userw,
                std::span<const double> rw, std::span<double> ys, std::vector<double>& work) {
    if (n < 2) {
        ys[0] = y[0];
        return;
    }
    work.resize(std::max(work.size(), n));
    const std::size_t newnj = std::min(jump, n - 1);
    std::size_t nleft = 1, nright = n;
    auto fit = [&](std::size_t i) {
        double v = 0.0;
        if (est(y, n, len, deg, static_cast<double>(i), v, nleft, nright, work, userw, rw)) {
            ys[i - 1] = v;
        } else {
            ys[i - 1] = y[i - 1];
        }
    };
    if (len >= n) {
        nleft = 1;
        nright = n;
        for (std::size_t i = 1; i <= n; i += newnj) fit(i);
    } else if (newnj == 1) {
        const std::size_t nsh = (len + 1) / 2;
        nleft = 1;
        nright = len;
        for (std::size_t i = 1; i <= n; ++i) {
            if (i > nsh && nright != n) {
                ++nleft;
                ++nright;
            }
            fit(i);
        }
    } else {
        const std::size_t nsh = (len + 1) / 2;
        for (std::size_t i = 1; i <= n; i += newnj) {
            if (i < nsh) {
                nleft = 1;
                nright = len;
            } else if (i >= n - nsh + 1) {
                nleft = n - len + 1;
                nright = n;
            } else {
                nleft = i - nsh + 1;
                nright = len + i - nsh;
            }
            fit(i);
        }
    }
    if (newnj != 1) {
        for (std::size_t i = 1; i + newnj <= n; i += newnj) {
            const double delta = (ys[i + newnj - 1] - ys[i - 1]) / static_cast<double>(newnj);
            for (std::size_t j = i + 1; j < i + newnj; ++j) ys[j - 1] = ys[i - 1] + delta * static_cast<double>(j - i);
        }
        const std::size_t k = ((n - 1) / newnj) * newnj + 1;
        if (k != n) {
            fit(n);
            if (k != n - 1) {
                const double delta = (ys[n - 1] - ys[k - 1]) / static_cast<double>(n - k);
                for (std::size_t j = k + 1; j < n; ++j) ys[j - 1] = ys[k - 1] + delta * static_cast<double>(j - k);
            }
        }
    }
}

/// Moving average of length len; output has n - len + 1 entries.
inline void ma(std::span<const double> x, std::size_t n, std::size_t len, std::span<double> ave) {
    const std::size_t newn = n - len + 1;
    const double flen = static_cast<double>(len);
    double v = 0.0;
    for (std::size_t i = 0; i < len; ++i) v += x[i];
    ave[0] = v / flen;
    for (std::size_t j = 1; j < newn; ++j) {
        v = v - x[j - 1] + x[len + j - 1];
        ave[j] = v / flen;
    }
}

/// Low-pass filter MA(np), MA(np), MA(3); an input of length m yields m - 2np values.
inline void fts(std::span<const double> x, std::size_t n, std::size_t np, std::span<double> trend,
                std::vector<double>& work) {
    work.resize(std::max(work.size(), n));
    ma(x, n, np, trend);
    ma(trend, n - np + 1, np, work);
    ma(work, n - 2 * np + 2, 3, trend);
}

/// Cycle-subseries smoothing; season receives n + 2np values (one extra
/// period extrapolated at each end).
inline void ss(std::span<const double> y, std::size_t n, std::size_t np, std::size_t ns, int deg, std::size_t jump,
               bool userw, std::span<const double> rw, std::span<double> season) {
    std::vector<double> sub, sub_rw, smooth, work;
    for (std::size_t j = 1; j <= np; ++j) {
        if (j > n) break;
        const std::size_t k = (n - j) / np + 1;
        sub.assign(k, 0.0);
        sub_rw.assign(k, 1.0);
        for (std::size_t i = 1; i <= k; ++i) {
            sub[i - 1] = y[(i - 1) * np + j - 1];
            if (userw) sub_rw[i - 1] = rw[(i - 1) * np + j - 1];
        }
        smooth.assign(k + 2, 0.0);
        ess(sub, k, ns, deg, jump, userw, sub_rw, std::span<double>(smooth).subspan(1, k), work);
        work.resize(std::max(work.size(), k));
        const std::size_t nright = std::min(ns, k);
        double v = 0.0;
        if (est(sub, k, ns, deg, 0.0, v, 1, nright, work, userw, sub_rw)) {
            smooth[0] = v;
        } else {
            smooth[0] = smooth[1];
        }
        const std::size_t nleft = ns >= k ? 1 : k - ns + 1;
        if (est(sub, k, ns, deg, static_cast<double>(k + 1), v, nleft, k, work, userw, sub_rw)) {
            smooth[k + 1] = v;
        } else {
            smooth[k + 1] = smooth[k];
        }
        for (std::size_t m = 1; m <= k + 2; ++m) season[(m - 1) * np + j - 1] = smooth[m - 1];
    }
}

inline void robustness_weights(std::span<const double> y, std::span<const double> fit, std::span<double> rw) {
    const std::size_t n = y.size();
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) r[i] = std::abs(y[i] - fit[i]);
    std::vector<double> sorted = r;
    const std::size_t mid0 = n / 2, mid1 = n - mid0 - 1;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(mid0), sorted.end());
    const double a = sorted[mid0];
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(mid1), sorted.end());
    const double cmad = 3.0 * (a + sorted[mid1]);
    const double c9 = 0.999 * cmad, c1 = 0.001 * cmad;
    for (std::size_t i = 0; i < n; ++i) {
        if (r[i] <= c1) {
            rw[i] = 1.0;
        } else if (r[i] <= c9) {
            const double u = r[i] / cmad;
            rw[i] = (1.0 - u * u) * (1.0 - u * u);
        } else {
            rw[i] = 0.0;
        }
    }
}

inline std::size_t odd_at_least(std::size_t v) { return v % 2 == 0 ? v + 1 : v; }

}  // namespace detail::stl

/// Additive seasonal-trend decomposition by loess.
inline StlResult stl_decompose(std::span<const double> y, const StlOptions& opt = {}) {
    using namespace detail::stl;
    const std::size_t n = y.size();
    const std::size_t np = opt.period;
    if (np < 2) throw ConfigError("stl_decompose: period must be at least 2");
    if (n < 2 * np) throw DataError("stl_decompose: series shorter than two periods");
    if (opt.seasonal < 3 || opt.seasonal % 2 == 0) throw ConfigError("stl_decompose: seasonal length must be odd >= 3");

    const std::size_t ns = opt.seasonal;
    std::size_t nt = opt.trend;
    if (nt == 0) {
        const double t = 1.5 * static_cast<double>(np) / (1.0 - 1.5 / static_cast<double>(ns));
        nt = odd_at_least(static_cast<std::size_t>(std::ceil(t)));
    }
    nt = odd_at_least(std::max<std::size_t>(nt, 3));
    const std::size_t nl = odd_at_least(std::max<std::size_t>(opt.low_pass == 0 ? np + 1 : opt.low_pass, 3));
    auto jump_of = [](std::size_t given, std::size_t len) {
        return given != 0 ? given : static_cast<std::size_t>(std::ceil(static_cast<double>(len) / 10.0));
    };
    const std::size_t sjump = jump_of(opt.seasonal_jump, ns);
    const std::size_t tjump = jump_of(opt.trend_jump, nt);
    const std::size_t ljump = jump_of(opt.low_pass_jump, nl);

    StlResult res;
    res.period = np;
    res.trend.assign(n, 0.0);
    res.seasonal.assign(n, 0.0);
    std::vector<double> rw(n, 1.0);
    std::vector<double> w1(n + 2 * np), w2(n + 2 * np), w3(n + 2 * np), w4(n + 2 * np), scratch;
    std::vector<double> fit(n);

    bool userw = false;
    for (std::size_t outer = 0;; ++outer) {
        for (std::size_t it = 0; it < opt.inner_iter; ++it) {
            for (std::size_t i = 0; i < n; ++i) w1[i] = y[i] - res.trend[i];
            ss(w1, n, np, ns, opt.seasonal_deg, sjump, userw, rw, w2);
            fts(w2, n + 2 * np, np, w3, scratch);
            ess(std::span<const double>(w3).first(n), n, nl, opt.low_pass_deg, ljump, false, rw,
                std::span<double>(w1).first(n), scratch);
            for (std::size_t i = 0; i < n; ++i) res.seasonal[i] = w2[np + i] - w1[i];
            for (std::size_t i = 0; i < n; ++i) w1[i] = y[i] - res.seasonal[i];
            ess(std::span<const double>(w1).first(n), n, nt, opt.trend_deg, tjump, userw, rw, res.trend, scratch);
        }
        if (outer >= opt.outer_iter) break;
        for (std::size_t i = 0; i < n; ++i) fit[i] = res.trend[i] + res.seasonal[i];
        robustness_weights(y, fit, rw);
        userw = true;
    }
    res.residual.resize(n);
    for (std::size_t i = 0; i < n; ++i) res.residual[i] = y[i] - res.trend[i] - res.seasonal[i];
    return res;
}

inline StlResult stl_decompose(std::span<const double> y, std::size_t period) {
    StlOptions opt;
    opt.period = period;
    return stl_decompose(y, opt);
}

/// std(residual) / std(seasonal); higher means noise dominates periodicity.
inline double rs_ratio(const StlResult& stl) {
    const double s = detail::stddev(stl.seasonal);
    if (!(s > 0.0)) throw NumericError("rs_ratio: seasonal component has zero variance");
    return detail::stddev(stl.residual) / s;
}

/// Seasonal strength max(0, 1 - var(R) / var(S + R)), used by the SARIMA
/// order search to pick the seasonal differencing order.
inline double seasonal_strength(const StlResult& stl) {
    std::vector<double> sr(stl.seasonal.size());
    for (std::size_t i = 0; i < sr.size(); ++i) sr[i] = stl.seasonal[i] + stl.residual[i];
    const double vr = std::pow(detail::stddev(stl.residual), 2);
    const double vsr = std::pow(detail::stddev(sr), 2);
    if (vsr <= 0.0) return 0.0;
    return std::max(0.0, 1.0 - vr / vsr);
}

}  // namespace agribench
