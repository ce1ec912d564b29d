#pragma once

// Temporal encodings for the transformer pair: fixed sinusoidal positions and
// the learnable Time2Vec embedding of normalized global time.

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "agribench/autodiff.hpp"
#include "agribench/error.hpp"
#include "agribench/rng.hpp"

namespace agribench {

/// seq_len x d_model row-major; PE[pos, 2i] = sin(pos / 10000^(2i/d)),
/// PE[pos, 2i+1] = cos(same angle).
inline ad::Tensor sinusoidal_pe(std::size_t seq_len = 90, std::size_t d_model = 64) {
    if (d_model == 0 || d_model % 2 != 0) throw ConfigError("sinusoidal_pe: d_model must be even");
    ad::Tensor pe({seq_len, d_model});
    for (std::size_t pos = 0; pos < seq_len; ++pos) {
        for (std::size_t i = 0; i < d_model / 2; ++i) {
            const double angle =
                static_cast<double>(pos) / std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(d_model));
            pe[pos * d_model + 2 * i] = std::sin(angle);
            pe[pos * d_model + 2 * i + 1] = std::cos(angle);
        }
    }
    return pe;
}

struct T2vEncoding {
    std::vector<double> omega;
    std::vector<double> phi;

    std::size_t k() const { return omega.size(); }
};

/// Frequencies geometric from f_low to f_high inclusive; phases uniform in [0, 2 pi).
inline T2vEncoding init_t2v(std::size_t k, double f_low, double f_high, Rng& rng) {
    if (k < 2) throw ConfigError("init_t2v: k must be at least 2");
    if (!(f_low > 0.0) || !(f_high > 0.0) || !std::isfinite(f_low) || !std::isfinite(f_high))
        throw ConfigError("init_t2v: frequency bounds must be positive and finite");
    T2vEncoding enc;
    enc.omega.resize(k);
    enc.phi.resize(k);
    const double ratio = std::log(f_high / f_low) / static_cast<double>(k - 1);
    for (std::size_t i = 0; i < k; ++i) enc.omega[i] = f_low * std::exp(ratio * static_cast<double>(i));
    enc.omega.front() = f_low;
    enc.omega.back() = f_high;
    for (auto& p : enc.phi) p = rng.uniform(0.0, 2.0 * std::numbers::pi);
    return enc;
}

/// Element 0 is omega_0 tau + phi_0; the rest are sin(omega_i tau + phi_i).
inline std::vector<double> time2vec(double tau, const T2vEncoding& enc) {
    std::vector<double> out(enc.k());
    for (std::size_t i = 0; i < enc.k(); ++i) {
        const double z = enc.omega[i] * tau + enc.phi[i];
        out[i] = i == 0 ? z : std::sin(z);
    }
    return out;
}

inline double normalize_tau(std::size_t index, std::size_t n) {
    if (n < 2) throw ConfigError("normalize_tau: series length must be at least 2");
    if (index >= n) throw std::out_of_range("normalize_tau: index outside series");
    return static_cast<double>(index) / static_cast<double>(n - 1);
}

/// Time2Vec over a [..., 1] tau tensor with omega and phi of shape [k];
/// returns [..., k].
inline ad::Var time2vec(ad::Var tau, ad::Var omega, ad::Var phi) {
    const std::size_t k = omega.value().size();
    auto z = ad::add(ad::matmul(tau, ad::reshape(omega, {1, k})), phi);
    return ad::concat({ad::slice(z, 0, 1), ad::sin(ad::slice(z, 1, k))});
}

}  // namespace agribench
