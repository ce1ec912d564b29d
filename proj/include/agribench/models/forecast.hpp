#pragma once

// One fit/predict contract over the naive, SARIMA and neural forecasters.
// Inputs arrive scaled; predictions leave in the original price scale.

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "agribench/error.hpp"
#include "agribench/models/neural.hpp"
#include "agribench/models/sarima.hpp"
#include "agribench/models/training.hpp"
#include "agribench/rng.hpp"
#include "agribench/split_scale.hpp"

namespace agribench {

/// Repeats the last value of the window `horizon` times.
inline std::vector<double> naive_predict(std::span<const double> window, std::size_t horizon = kDefaultHorizon) {
    if (window.empty()) throw DataError("naive_predict: empty window");
    return std::vector<double>(horizon, window.back());
}

/// A series prepared for modelling: split, train-fitted scaler and the scaled copy.
struct PreparedSeries {
    std::vector<double> values;
    std::vector<double> scaled;
    TemporalSplit split;
    Scaler scaler;

    static PreparedSeries make(std::vector<double> values, std::array<double, 3> fractions = {0.8, 0.1, 0.1}) {
        PreparedSeries p;
        p.split = temporal_split(values.size(), fractions);
        p.scaler = fit_scaler(std::span<const double>(values).first(p.split.train.end));
        p.scaled = p.scaler.transform(values);
        p.values = std::move(values);
        return p;
    }

    WindowSet train_windows(std::size_t seq_len = kDefaultSeqLen, std::size_t horizon = kDefaultHorizon) const {
        return training_windows(scaled, split, seq_len, horizon);
    }
    WindowSet val_windows(std::size_t seq_len = kDefaultSeqLen, std::size_t horizon = kDefaultHorizon) const {
        return make_windows(scaled, split.val, seq_len, horizon);
    }
    WindowSet test_windows(std::size_t seq_len = kDefaultSeqLen, std::size_t horizon = kDefaultHorizon,
                           std::size_t stride = 1) const {
        return make_windows(scaled, split.test, seq_len, horizon, stride);
    }
};

struct ModelOptions {
    NeuralConfig neural;
    TrainConfig train;
    SarimaSearch sarima;
    std::uint64_t seed = 42;
};

class ForecastModel {
   public:
    ModelKind kind() const { return kind_; }
    std::size_t horizon() const { return horizon_; }
    const NeuralNet* net() const { return net_.get(); }
    const std::optional<SarimaModel>& sarima() const { return sarima_; }
    const TrainResult& training() const { return training_; }

    static ForecastModel fit(ModelKind kind, const PreparedSeries& data, const ModelOptions& opt = {}) {
        ForecastModel m;
        m.kind_ = kind;
        m.horizon_ = opt.neural.horizon;
        switch (kind) {
            case ModelKind::naive:
                break;
            case ModelKind::sarima:
                m.sarima_ = sarima_fit(std::span<const double>(data.values).first(data.split.train.end), opt.sarima);
                break;
            default: {
                Rng rng(opt.seed);
                m.net_ = make_neural(kind, opt.neural, rng);
                const auto train_ws = data.train_windows(opt.neural.seq_len, opt.neural.horizon);
                const auto val_ws = data.val_windows(opt.neural.seq_len, opt.neural.horizon);
                assert_no_leakage(train_ws, data.split.train.end);
                m.training_ = train(*m.net_, train_ws, val_ws, data.values.size(), opt.train, rng);
                break;
            }
        }
        return m;
    }

    /// Window-major predictions (count x horizon) in the original scale.
    std::vector<double> predict(const PreparedSeries& data, const WindowSet& ws) const {
        if (ws.horizon != horizon_) throw DataError("predict: window horizon differs from the model horizon");
        std::vector<double> out;
        out.reserve(ws.size() * horizon_);
        switch (kind_) {
            case ModelKind::naive:
                for (std::size_t i = 0; i < ws.size(); ++i) {
                    const auto p = naive_predict(ws.input(i), horizon_);
                    for (double v : p) out.push_back(data.scaler.inverse(v));
                }
                break;
            case ModelKind::sarima: {
                std::vector<std::size_t> starts(ws.size());
                for (std::size_t i = 0; i < ws.size(); ++i) starts[i] = ws.target_start(i);
                for (const auto& f : sarima_forecast_rolling(*sarima_, data.values, starts, horizon_))
                    out.insert(out.end(), f.begin(), f.end());
                break;
            }
            default: {
                auto& net = const_cast<NeuralNet&>(*net_);
                for (double z : predict_scaled(net, ws, data.values.size())) out.push_back(data.scaler.inverse(z));
                break;
            }
        }
        for (double v : out)
            if (!std::isfinite(v)) throw NumericError("predict: non-finite forecast from " + to_string(kind_));
        return out;
    }

    std::string save() const {
        std::string out("AGRBMODL");
        detail::put_u32(out, static_cast<std::uint32_t>(kind_));
        detail::put_u64(out, horizon_);
        if (kind_ == ModelKind::sarima) {
            const auto& s = *sarima_;
            for (int v : {s.order.p, s.order.d, s.order.q, s.order.P, s.order.D, s.order.Q, s.order.m})
                detail::put_u64(out, static_cast<std::uint64_t>(v));
            for (const auto* vec : {&s.ar, &s.ma, &s.sar, &s.sma}) {
                detail::put_u64(out, vec->size());
                for (double v : *vec) detail::put_f64(out, v);
            }
            for (double v : {s.mean, s.has_mean ? 1.0 : 0.0, s.sigma2, s.aic}) detail::put_f64(out, v);
            detail::put_u64(out, s.nobs);
            detail::put_u64(out, s.ncond);
        } else if (is_neural(kind_)) {
            out += save_checkpoint(*net_);
        }
        return out;
    }

    static ForecastModel load(std::string_view bytes) {
        if (bytes.substr(0, 8) != "AGRBMODL") throw DataError("model file: bad magic");
        detail::ByteReader in(bytes.substr(8));
        ForecastModel m;
        m.kind_ = static_cast<ModelKind>(in.u32());
        m.horizon_ = in.u64();
        if (m.kind_ == ModelKind::sarima) {
            SarimaModel s;
            for (int* v : {&s.order.p, &s.order.d, &s.order.q, &s.order.P, &s.order.D, &s.order.Q, &s.order.m})
                *v = static_cast<int>(in.u64());
            for (auto* vec : {&s.ar, &s.ma, &s.sar, &s.sma}) {
                const auto n = in.u64();
                if (n > 64) throw DataError("model file: corrupt coefficient count");
                vec->resize(n);
                for (auto& v : *vec) v = in.f64();
            }
            s.mean = in.f64();
            s.has_mean = in.f64() != 0.0;
            s.sigma2 = in.f64();
            s.aic = in.f64();
            s.nobs = in.u64();
            s.ncond = in.u64();
            if (!in.done()) throw DataError("model file: trailing bytes");
            m.sarima_ = std::move(s);
        } else if (is_neural(m.kind_)) {
            m.net_ = load_checkpoint(bytes.substr(8 + 12));
            if (m.net_->kind() != m.kind_) throw DataError("model file: kind mismatch");
        } else if (m.kind_ != ModelKind::naive || !in.done()) {
            throw DataError("model file: unknown model kind");
        }
        return m;
    }

   private:
    ModelKind kind_ = ModelKind::naive;
    std::size_t horizon_ = kDefaultHorizon;
    std::shared_ptr<NeuralNet> net_;
    std::optional<SarimaModel> sarima_;
    TrainResult training_;
};

}  // namespace agribench
