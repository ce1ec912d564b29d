#pragma once

// Seasonal ARIMA with conditional-sum-of-squares estimation, automatic order
// selection and fixed-parameter rolling forecasts.
//
// Model on the differenced series w = (1-B)^d (1-B^m)^D y:
//   phi(B) Phi(B^m) (w_t - mu) = theta(B) Theta(B^m) e_t
// with mu estimated only when d + D = 0.

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <unsupported/Eigen/Polynomials>
#include <vector>

#include "agribench/diagnostics.hpp"
#include "agribench/error.hpp"

namespace agribench {

struct SarimaOrder {
    int p = 0, d = 0, q = 0;
    int P = 0, D = 0, Q = 0;
    int m = 7;

    friend bool operator==(const SarimaOrder&, const SarimaOrder&) = default;
    friend auto operator<=>(const SarimaOrder& a, const SarimaOrder& b) {
        return std::tie(a.p, a.d, a.q, a.P, a.D, a.Q, a.m) <=> std::tie(b.p, b.d, b.q, b.P, b.D, b.Q, b.m);
    }
};

inline std::string to_string(const SarimaOrder& o) {
    return "(" + std::to_string(o.p) + "," + std::to_string(o.d) + "," + std::to_string(o.q) + ")(" +
           std::to_string(o.P) + "," + std::to_string(o.D) + "," + std::to_string(o.Q) + ")[" + std::to_string(o.m) + "]";
}

struct SarimaModel {
    SarimaOrder order;
    std::vector<double> ar;    // phi_1..phi_p
    std::vector<double> ma;    // theta_1..theta_q
    std::vector<double> sar;   // Phi_1..Phi_P
    std::vector<double> sma;   // Theta_1..Theta_Q
    double mean = 0.0;
    bool has_mean = false;
    double sigma2 = 0.0;
    double aic = std::numeric_limits<double>::infinity();
    std::size_t nobs = 0;      // residuals entering the likelihood
    std::size_t ncond = 0;     // leading differenced values used only as conditioning

    std::size_t coefficient_count() const { return ar.size() + ma.size() + sar.size() + sma.size() + (has_mean ? 1 : 0); }
};

struct SarimaSearch {
    int max_p = 3, max_q = 3, max_d = 2;
    int max_P = 2, max_Q = 2, max_D = 1;
    int m = 7;
    bool stepwise = true;                 // false: exhaustive grid
    double adf_alpha = 0.05;
    double seasonal_strength_threshold = 0.64;
    double root_margin = 0.01;            // candidates with roots inside 1 + margin are rejected
    std::optional<int> fixed_d;           // skip the unit-root test
    std::optional<int> fixed_D;           // skip the seasonal-strength test
};

namespace detail::sarima {

/// Maps unconstrained reals to the coefficients of a stationary polynomial
/// 1 - sum c_i z^i through partial autocorrelations.
inline std::vector<double> partrans(std::span<const double> raw) {
    const std::size_t p = raw.size();
    std::vector<double> out(p), work(p);
    for (std::size_t j = 0; j < p; ++j) out[j] = work[j] = std::tanh(raw[j]);
    for (std::size_t j = 1; j < p; ++j) {
        const double a = out[j];
        for (std::size_t k = 0; k < j; ++k) work[k] -= a * out[j - k - 1];
        for (std::size_t k = 0; k < j; ++k) out[k] = work[k];
    }
    return out;
}

/// Inverse of partrans for a stationary coefficient vector.
inline std::vector<double> invpartrans(std::span<const double> coef) {
    const std::size_t p = coef.size();
    std::vector<double> new_(coef.begin(), coef.end()), work(p);
    for (std::size_t j = p; j-- > 1;) {
        const double a = new_[j];
        const double denom = 1.0 - a * a;
        for (std::size_t k = 0; k < j; ++k) work[k] = (new_[k] + a * new_[j - k - 1]) / denom;
        for (std::size_t k = 0; k < j; ++k) new_[k] = work[k];
    }
    for (auto& v : new_) v = std::atanh(std::clamp(v, -0.999999, 0.999999));
    return new_;
}

/// Coefficients c of (1 - sum a_i B^i)(1 - sum s_j B^{mj}) = 1 - sum c_k B^k.
inline std::vector<double> expand_ar(std::span<const double> a, std::span<const double> s, int m) {
    const std::size_t n = a.size() + static_cast<std::size_t>(m) * s.size();
    std::vector<double> poly(n + 1, 0.0);  // poly[k] is the coefficient of B^k in the product
    poly[0] = 1.0;
    for (std::size_t i = 0; i < a.size(); ++i) poly[i + 1] = -a[i];
    std::vector<double> out(n + 1, 0.0);
    for (std::size_t k = 0; k <= a.size(); ++k) {
        out[k] += poly[k];
        for (std::size_t j = 0; j < s.size(); ++j) out[k + static_cast<std::size_t>(m) * (j + 1)] -= poly[k] * s[j];
    }
    std::vector<double> c(n);
    for (std::size_t k = 1; k <= n; ++k) c[k - 1] = -out[k];
    return c;
}

/// Coefficients of (1 + sum a_i B^i)(1 + sum s_j B^{mj}) = 1 + sum c_k B^k.
inline std::vector<double> expand_ma(std::span<const double> a, std::span<const double> s, int m) {
    std::vector<double> na(a.size()), ns(s.size());
    for (std::size_t i = 0; i < a.size(); ++i) na[i] = -a[i];
    for (std::size_t i = 0; i < s.size(); ++i) ns[i] = -s[i];
    auto c = expand_ar(na, ns, m);
    for (auto& v : c) v = -v;
    return c;
}

/// Coefficients delta_1..delta_k with (1-B)^d (1-B^m)^D = 1 + sum delta_i B^i.
inline std::vector<double> differencing_poly(int d, int D, int m) {
    std::vector<double> poly{1.0};
    const auto times = [&](std::size_t lag) {
        std::vector<double> out(poly.size() + lag, 0.0);
        for (std::size_t i = 0; i < poly.size(); ++i) {
            out[i] += poly[i];
            out[i + lag] -= poly[i];
        }
        poly = out;
    };
    for (int i = 0; i < d; ++i) times(1);
    for (int i = 0; i < D; ++i) times(static_cast<std::size_t>(m));
    return {poly.begin() + 1, poly.end()};
}

inline std::vector<double> difference(std::span<const double> y, int d, int D, int m) {
    std::vector<double> w(y.begin(), y.end());
    for (int i = 0; i < D; ++i) {
        if (w.size() <= static_cast<std::size_t>(m)) return {};
        std::vector<double> next(w.size() - m);
        for (std::size_t t = 0; t < next.size(); ++t) next[t] = w[t + m] - w[t];
        w = std::move(next);
    }
    for (int i = 0; i < d; ++i) {
        if (w.size() <= 1) return {};
        std::vector<double> next(w.size() - 1);
        for (std::size_t t = 0; t < next.size(); ++t) next[t] = w[t + 1] - w[t];
        w = std::move(next);
    }
    return w;
}

/// Conditional residuals; e_t = 0 for t < ncond.
inline std::vector<double> css_residuals(std::span<const double> w, double mu, std::span<const double> phi,
                                         std::span<const double> theta, std::size_t ncond) {
    std::vector<double> e(w.size(), 0.0);
    for (std::size_t t = ncond; t < w.size(); ++t) {
        double v = w[t] - mu;
        for (std::size_t i = 0; i < phi.size() && i < t; ++i) v -= phi[i] * (w[t - i - 1] - mu);
        for (std::size_t j = 0; j < theta.size() && j < t; ++j) v -= theta[j] * e[t - j - 1];
        e[t] = v;
    }
    return e;
}

/// True if every root of 1 + sign * sum c_i z^i lies outside the unit circle
/// by more than the margin.
inline bool roots_outside_unit_circle(std::span<const double> c, double sign, double margin = 1e-6) {
    std::size_t deg = c.size();
    while (deg > 0 && c[deg - 1] == 0.0) --deg;
    if (deg == 0) return true;
    Eigen::VectorXd coeffs(deg + 1);
    coeffs[0] = 1.0;
    for (std::size_t i = 0; i < deg; ++i) coeffs[static_cast<Eigen::Index>(i + 1)] = sign * c[i];
    Eigen::PolynomialSolver<double, Eigen::Dynamic> solver;
    solver.compute(coeffs);
    for (const auto& r : solver.roots())
        if (!(std::abs(r) > 1.0 + margin)) return false;
    return true;
}

struct Unpacked {
    std::vector<double> ar, ma, sar, sma;
    double mu = 0.0;
};

inline Unpacked unpack(const SarimaOrder& o, bool has_mean, std::span<const double> x) {
    Unpacked u;
    std::size_t k = 0;
    const auto take = [&](int n) {
        std::span<const double> s = x.subspan(k, static_cast<std::size_t>(n));
        k += static_cast<std::size_t>(n);
        return s;
    };
    u.ar = partrans(take(o.p));
    u.ma = partrans(take(o.q));
    for (auto& v : u.ma) v = -v;
    u.sar = partrans(take(o.P));
    u.sma = partrans(take(o.Q));
    for (auto& v : u.sma) v = -v;
    if (has_mean) u.mu = x[k];
    return u;
}

struct CssProblem {
    SarimaOrder order;
    bool has_mean = false;
    std::span<const double> w;
    std::size_t ncond = 0;
    double mean_scale = 1.0;

    /// 0.5 log(SSR / nobs); infinite when the residuals blow up.
    double objective(std::span<const double> x) const {
        std::vector<double> xs(x.begin(), x.end());
        if (has_mean) xs.back() *= mean_scale;
        const auto u = unpack(order, has_mean, xs);
        const auto phi = expand_ar(u.ar, u.sar, order.m);
        const auto theta = expand_ma(u.ma, u.sma, order.m);
        const auto e = css_residuals(w, u.mu, phi, theta, ncond);
        double ssr = 0.0;
        for (std::size_t t = ncond; t < e.size(); ++t) ssr += e[t] * e[t];
        const double v = ssr / static_cast<double>(w.size() - ncond);
        if (!std::isfinite(v) || v <= 0.0) return std::numeric_limits<double>::infinity();
        return 0.5 * std::log(v);
    }
};

inline double gsl_f(const gsl_vector* x, void* params) {
    const auto* prob = static_cast<const CssProblem*>(params);
    return prob->objective({x->data, x->size});
}

inline void gsl_df(const gsl_vector* x, void* params, gsl_vector* g) {
    const auto* prob = static_cast<const CssProblem*>(params);
    std::vector<double> xs(x->data, x->data + x->size);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double h = 1e-6 * std::max(1.0, std::abs(xs[i]));
        const double orig = xs[i];
        xs[i] = orig + h;
        const double up = prob->objective(xs);
        xs[i] = orig - h;
        const double down = prob->objective(xs);
        xs[i] = orig;
        gsl_vector_set(g, i, std::isfinite(up) && std::isfinite(down) ? (up - down) / (2.0 * h) : 0.0);
    }
}

inline void gsl_fdf(const gsl_vector* x, void* params, double* f, gsl_vector* g) {
    *f = gsl_f(x, params);
    gsl_df(x, params, g);
}

}  // namespace detail::sarima

/// Largest AR-side conditioning window for a search, so every candidate in it
/// is scored on the same residual sample.
inline std::size_t sarima_conditioning(int max_p, int max_P, int m) {
    return static_cast<std::size_t>(max_p + m * max_P);
}

/// Fits one order by CSS with BFGS refinement. Returns nullopt when the
/// optimizer fails or the fitted polynomials are not stationary/invertible.
inline std::optional<SarimaModel> sarima_fit_order(std::span<const double> y, const SarimaOrder& order,
                                                   std::size_t ncond, double root_margin = 1e-6) {
    namespace s = detail::sarima;
    const auto w = s::difference(y, order.d, order.D, order.m);
    ncond = std::max(ncond, static_cast<std::size_t>(order.p + order.m * order.P));
    const std::size_t nparams_guess = static_cast<std::size_t>(order.p + order.q + order.P + order.Q) + 2;
    if (w.size() <= ncond + nparams_guess) return std::nullopt;

    s::CssProblem prob;
    prob.order = order;
    prob.has_mean = order.d + order.D == 0;
    prob.w = w;
    prob.ncond = ncond;
    const double wmean = detail::mean(w);
    prob.mean_scale = std::max(1.0, std::abs(wmean));

    const std::size_t k = static_cast<std::size_t>(order.p + order.q + order.P + order.Q) + (prob.has_mean ? 1 : 0);
    std::vector<double> x(k, 0.0);
    if (prob.has_mean) x.back() = wmean / prob.mean_scale;

    if (k > 0) {
        gsl_set_error_handler_off();
        gsl_multimin_function_fdf fn{&s::gsl_f, &s::gsl_df, &s::gsl_fdf, k, &prob};
        gsl_vector* start = gsl_vector_alloc(k);
        for (std::size_t i = 0; i < k; ++i) gsl_vector_set(start, i, x[i]);
        gsl_multimin_fdfminimizer* mini = gsl_multimin_fdfminimizer_alloc(gsl_multimin_fdfminimizer_vector_bfgs2, k);
        gsl_multimin_fdfminimizer_set(mini, &fn, start, 0.1, 0.1);
        for (int iter = 0; iter < 100; ++iter) {
            if (gsl_multimin_fdfminimizer_iterate(mini) != GSL_SUCCESS) break;
            if (gsl_multimin_test_gradient(mini->gradient, 1e-5) == GSL_SUCCESS) break;
        }
        for (std::size_t i = 0; i < k; ++i) x[i] = gsl_vector_get(mini->x, i);
        gsl_multimin_fdfminimizer_free(mini);
        gsl_vector_free(start);
    }

    const double obj = prob.objective(x);
    if (!std::isfinite(obj)) return std::nullopt;
    std::vector<double> xs = x;
    if (prob.has_mean) xs.back() *= prob.mean_scale;
    auto u = s::unpack(order, prob.has_mean, xs);

    SarimaModel m;
    m.order = order;
    m.ar = u.ar;
    m.ma = u.ma;
    m.sar = u.sar;
    m.sma = u.sma;
    m.mean = prob.has_mean ? u.mu : 0.0;
    m.has_mean = prob.has_mean;
    m.ncond = ncond;
    m.nobs = w.size() - ncond;
    m.sigma2 = std::exp(2.0 * obj);
    const double n = static_cast<double>(m.nobs);
    const double loglik = -0.5 * n * (std::log(2.0 * std::numbers::pi * m.sigma2) + 1.0);
    m.aic = -2.0 * loglik + 2.0 * static_cast<double>(m.coefficient_count() + 1);

    const auto phi = s::expand_ar(m.ar, m.sar, order.m);
    const auto theta = s::expand_ma(m.ma, m.sma, order.m);
    if (!s::roots_outside_unit_circle(phi, -1.0, root_margin) || !s::roots_outside_unit_circle(theta, 1.0, root_margin))
        return std::nullopt;
    return m;
}

/// Chooses D by STL seasonal strength at period m and d by repeated ADF tests.
inline std::pair<int, int> sarima_select_differencing(std::span<const double> y, const SarimaSearch& cfg) {
    int D = 0;
    if (cfg.fixed_D) {
        D = *cfg.fixed_D;
    } else if (cfg.max_D > 0 && y.size() >= 2 * static_cast<std::size_t>(cfg.m) + 1) {
        const double strength = seasonal_strength(stl_decompose(y, static_cast<std::size_t>(cfg.m)));
        D = strength > cfg.seasonal_strength_threshold ? 1 : 0;
    }
    int d = 0;
    if (cfg.fixed_d) {
        d = *cfg.fixed_d;
    } else {
        auto w = detail::sarima::difference(y, 0, D, cfg.m);
        while (d < cfg.max_d && w.size() >= 30) {
            double p = 1.0;
            try {
                p = adf_test(w).p_value;
            } catch (const DataError&) {
                break;  // constant after differencing
            }
            if (p < cfg.adf_alpha) break;
            ++d;
            w = detail::sarima::difference(w, 1, 0, cfg.m);
        }
    }
    return {d, D};
}

/// Automatic order selection by minimum AIC. Candidates that fail to fit are
/// skipped; throws NumericError if none fits.
inline SarimaModel sarima_fit(std::span<const double> y, const SarimaSearch& cfg = {}) {
    if (y.size() < 3 * static_cast<std::size_t>(cfg.m))
        throw DataError("sarima_fit: need at least " + std::to_string(3 * cfg.m) + " training values");
    const auto [d, D] = sarima_select_differencing(y, cfg);
    const std::size_t ncond = sarima_conditioning(cfg.max_p, cfg.max_P, cfg.m);

    std::set<SarimaOrder> tried;
    std::optional<SarimaModel> best;
    const auto consider = [&](int p, int q, int P, int Q) {
        if (p < 0 || q < 0 || P < 0 || Q < 0 || p > cfg.max_p || q > cfg.max_q || P > cfg.max_P || Q > cfg.max_Q)
            return false;
        const SarimaOrder o{p, d, q, P, D, Q, cfg.m};
        if (!tried.insert(o).second) return false;
        auto fit = sarima_fit_order(y, o, ncond, cfg.root_margin);
        if (fit && (!best || fit->aic < best->aic - 1e-9)) {
            best = std::move(fit);
            return true;
        }
        return false;
    };

    if (!cfg.stepwise) {
        for (int p = 0; p <= cfg.max_p; ++p)
            for (int q = 0; q <= cfg.max_q; ++q)
                for (int P = 0; P <= cfg.max_P; ++P)
                    for (int Q = 0; Q <= cfg.max_Q; ++Q) consider(p, q, P, Q);
    } else {
        consider(2, 2, 1, 1);
        consider(0, 0, 0, 0);
        consider(1, 0, 1, 0);
        consider(0, 1, 0, 1);
        bool improved = best.has_value();
        while (improved) {
            improved = false;
            const SarimaOrder c = best->order;
            const int moves[][4] = {{-1, 0, 0, 0}, {1, 0, 0, 0},  {0, -1, 0, 0}, {0, 1, 0, 0},  {0, 0, -1, 0},
                                    {0, 0, 1, 0},  {0, 0, 0, -1}, {0, 0, 0, 1},  {-1, -1, 0, 0}, {1, 1, 0, 0},
                                    {0, 0, -1, -1}, {0, 0, 1, 1}, {-1, 1, 0, 0}, {1, -1, 0, 0}};
            for (const auto& mv : moves) {
                if (consider(c.p + mv[0], c.q + mv[1], c.P + mv[2], c.Q + mv[3])) {
                    improved = true;
                    break;
                }
            }
        }
    }
    if (!best) throw NumericError("sarima_fit: no candidate order converged");
    return *best;
}

/// h-step forecasts from the end of `history` with the model's parameters held
/// fixed; residuals are refiltered over the whole history.
inline std::vector<double> sarima_forecast(const SarimaModel& model, std::span<const double> history, std::size_t h) {
    namespace s = detail::sarima;
    const auto& o = model.order;
    const auto w = s::difference(history, o.d, o.D, o.m);
    const auto phi = s::expand_ar(model.ar, model.sar, o.m);
    const auto theta = s::expand_ma(model.ma, model.sma, o.m);
    const std::size_t ncond = std::min(model.ncond, w.size());
    if (w.size() <= phi.size()) throw DataError("sarima_forecast: history too short for the model order");
    auto e = s::css_residuals(w, model.mean, phi, theta, ncond);

    std::vector<double> wx(w.begin(), w.end());
    for (std::size_t step = 0; step < h; ++step) {
        const std::size_t t = wx.size();
        double v = model.mean;
        for (std::size_t i = 0; i < phi.size(); ++i) v += phi[i] * (wx[t - i - 1] - model.mean);
        for (std::size_t j = 0; j < theta.size(); ++j)
            if (t - j - 1 < e.size()) v += theta[j] * e[t - j - 1];
        wx.push_back(v);
    }

    const auto delta = s::differencing_poly(o.d, o.D, o.m);
    std::vector<double> yx(history.begin(), history.end());
    std::vector<double> out;
    out.reserve(h);
    for (std::size_t step = 0; step < h; ++step) {
        double v = wx[w.size() + step];
        const std::size_t t = yx.size();
        for (std::size_t i = 0; i < delta.size(); ++i) v -= delta[i] * yx[t - i - 1];
        if (!std::isfinite(v)) throw NumericError("sarima_forecast: forecast diverged");
        yx.push_back(v);
        out.push_back(v);
    }
    return out;
}

/// Rolling evaluation: for every origin, forecast h steps from series[0, origin).
inline std::vector<std::vector<double>> sarima_forecast_rolling(const SarimaModel& model, std::span<const double> series,
                                                                std::span<const std::size_t> origins, std::size_t h) {
    std::vector<std::vector<double>> out;
    out.reserve(origins.size());
    for (std::size_t origin : origins) {
        if (origin > series.size()) throw DataError("sarima_forecast_rolling: origin beyond series");
        out.push_back(sarima_forecast(model, series.first(origin), h));
    }
    return out;
}

}  // namespace agribench
