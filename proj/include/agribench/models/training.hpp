#pragma once

// Mini-batch training with plateau learning-rate halving, early stopping and
// best-weight restoration; batched inference; binary checkpoints.

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include "agribench/autodiff.hpp"
#include "agribench/csv.hpp"
#include "agribench/error.hpp"
#include "agribench/models/neural.hpp"
#include "agribench/rng.hpp"
#include "agribench/split_scale.hpp"

namespace agribench {

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_mae = 0.0;  // scaled units
    double lr = 0.0;
};

struct TrainConfig {
    double lr = 1e-3;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 150;
    double plateau_factor = 0.5;
    std::size_t plateau_patience = 10;
    std::size_t early_stop_patience = 20;
    double huber_delta = 1.0;
    /// A validation loss counts as an improvement when it is below
    /// best * (1 - min_rel_improvement).
    double min_rel_improvement = 1e-4;
    std::size_t eval_batch = 256;
    /// Optional hook after each epoch; returning true ends training early.
    std::function<bool(const EpochRecord&)> stop_when;

    void validate() const {
        if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
        if (batch_size == 0 || max_epochs == 0) throw ConfigError("train: batch size and max epochs must be positive");
        if (plateau_patience == 0 || early_stop_patience == 0) throw ConfigError("train: patience values must be positive");
        if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) throw ConfigError("train: plateau factor must be in (0, 1)");
    }
};

struct TrainResult {
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    bool early_stopped = false;
    bool stopped_by_hook = false;
};

/// Validation loss and MAE in eval mode (no dropout).
inline std::pair<double, double> evaluate_loss(NeuralNet& net, const WindowSet& ws, std::size_t series_length,
                                               double huber_delta, std::size_t eval_batch = 256) {
    if (ws.empty()) throw DataError("evaluate: empty window set");
    double loss = 0.0, mae = 0.0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < ws.size(); start += eval_batch) {
        idx.resize(std::min(eval_batch, ws.size() - start));
        std::iota(idx.begin(), idx.end(), start);
        const Batch b = make_batch(ws, idx, series_length);
        ad::Tape tape;
        auto pred = net.forward(tape, b.inputs, b.tau, nullptr);
        auto l = ad::huber_loss(pred, tape.constant(b.targets), huber_delta);
        loss += l.value().item() * static_cast<double>(b.targets.size());
        for (std::size_t i = 0; i < b.targets.size(); ++i) mae += std::abs(pred.value()[i] - b.targets[i]);
    }
    const double n = static_cast<double>(ws.size() * ws.horizon);
    return {loss / n, mae / n};
}

/// Scaled predictions, window-major: count x horizon.
inline std::vector<double> predict_scaled(NeuralNet& net, const WindowSet& ws, std::size_t series_length,
                                          std::size_t eval_batch = 256) {
    std::vector<double> out;
    out.reserve(ws.size() * ws.horizon);
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < ws.size(); start += eval_batch) {
        idx.resize(std::min(eval_batch, ws.size() - start));
        std::iota(idx.begin(), idx.end(), start);
        const Batch b = make_batch(ws, idx, series_length);
        ad::Tape tape;
        const auto pred = net.forward(tape, b.inputs, b.tau, nullptr);
        out.insert(out.end(), pred.value().values().begin(), pred.value().values().end());
    }
    return out;
}

/// Trains in place. `rng` continues the stream used for initialization: each
/// epoch draws its shuffle first, then dropout masks in forward order.
inline TrainResult train(NeuralNet& net, const WindowSet& train_ws, const WindowSet& val_ws, std::size_t series_length,
                         const TrainConfig& cfg, Rng& rng) {
    cfg.validate();
    if (train_ws.empty() || val_ws.empty()) throw DataError("train: empty training or validation windows");
    auto& params = net.params();
    ad::Adam opt(cfg.lr);
    TrainResult result;
    std::vector<ad::Tensor> best_weights = params.snapshot();
    std::size_t since_best = 0, since_plateau = 0;
    double plateau_best = std::numeric_limits<double>::infinity();

    std::vector<std::size_t> order(train_ws.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        rng.shuffle(order);
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t n = std::min(cfg.batch_size, order.size() - start);
            const Batch b = make_batch(train_ws, std::span<const std::size_t>(order).subspan(start, n), series_length);
            params.zero_grad();
            ad::Tape tape;
            auto loss = ad::huber_loss(net.forward(tape, b.inputs, b.tau, &rng), tape.constant(b.targets), cfg.huber_delta);
            const double value = loss.value().item();
            if (!std::isfinite(value)) throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch));
            total += value * static_cast<double>(n);
            tape.backward(loss);
            opt.step(params);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = total / static_cast<double>(order.size());
        std::tie(rec.val_loss, rec.val_mae) = evaluate_loss(net, val_ws, series_length, cfg.huber_delta, cfg.eval_batch);
        rec.lr = opt.learning_rate();
        result.history.push_back(rec);

        if (rec.val_loss < result.best_val_loss * (1.0 - cfg.min_rel_improvement)) {
            result.best_val_loss = rec.val_loss;
            result.best_epoch = epoch;
            best_weights = params.snapshot();
            since_best = 0;
        } else {
            ++since_best;
        }
        if (rec.val_loss < plateau_best * (1.0 - cfg.min_rel_improvement)) {
            plateau_best = rec.val_loss;
            since_plateau = 0;
        } else if (++since_plateau > cfg.plateau_patience) {
            opt.set_learning_rate(opt.learning_rate() * cfg.plateau_factor);
            since_plateau = 0;
        }

        if (cfg.stop_when && cfg.stop_when(rec)) {
            result.stopped_by_hook = true;
            break;
        }
        if (since_best >= cfg.early_stop_patience) {
            result.early_stopped = true;
            break;
        }
    }
    params.restore(best_weights);
    return result;
}

inline std::string history_csv(const TrainResult& r) {
    std::string out = "epoch,train_loss,val_loss,val_mae,lr\n";
    for (const auto& e : r.history)
        out += std::to_string(e.epoch) + "," + csv::fmt(e.train_loss) + "," + csv::fmt(e.val_loss) + "," +
               csv::fmt(e.val_mae) + "," + csv::fmt(e.lr) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: "AGRBCKPT", u32 version, u32 kind, u64 hyperparameter count,
// f64 hyperparameters, u64 parameter count, then per parameter u64 length and
// little-endian f64 values in declaration order.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kCheckpointMagic = "AGRBCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline std::vector<double> hyperparameters(const NeuralConfig& c) {
    return {static_cast<double>(c.seq_len), static_cast<double>(c.horizon), static_cast<double>(c.d_model),
            static_cast<double>(c.heads),   static_cast<double>(c.layers),  static_cast<double>(c.d_ff),
            static_cast<double>(c.t2v_k),   c.t2v_f_low,                    c.t2v_f_high,
            static_cast<double>(c.lstm_hidden), static_cast<double>(c.lstm_layers), c.dropout};
}

inline NeuralConfig config_from(const std::vector<double>& h) {
    if (h.size() != 12) throw DataError("checkpoint: unexpected hyperparameter count");
    const auto u = [](double v) { return static_cast<std::size_t>(v); };
    NeuralConfig c;
    c.seq_len = u(h[0]);
    c.horizon = u(h[1]);
    c.d_model = u(h[2]);
    c.heads = u(h[3]);
    c.layers = u(h[4]);
    c.d_ff = u(h[5]);
    c.t2v_k = u(h[6]);
    c.t2v_f_low = h[7];
    c.t2v_f_high = h[8];
    c.lstm_hidden = u(h[9]);
    c.lstm_layers = u(h[10]);
    c.dropout = h[11];
    return c;
}

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

}  // namespace detail

inline std::string save_checkpoint(const NeuralNet& net) {
    std::string out(kCheckpointMagic);
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(net.kind()));
    const auto hp = detail::hyperparameters(net.config());
    detail::put_u64(out, hp.size());
    for (double v : hp) detail::put_f64(out, v);
    detail::put_u64(out, net.params().size());
    for (const auto& p : net.params()) {
        detail::put_u64(out, p.value.size());
        for (double v : p.value.values()) detail::put_f64(out, v);
    }
    return out;
}

inline std::unique_ptr<NeuralNet> load_checkpoint(std::string_view bytes) {
    detail::ByteReader in(bytes);
    if (in.raw(kCheckpointMagic.size()) != kCheckpointMagic) throw DataError("checkpoint: bad magic");
    if (in.u32() != kCheckpointVersion) throw DataError("checkpoint: unsupported version");
    const auto kind = static_cast<ModelKind>(in.u32());
    if (!is_neural(kind)) throw DataError("checkpoint: not a neural model kind");
    const std::uint64_t nh = in.u64();
    if (nh > 64) throw DataError("checkpoint: corrupt header");
    std::vector<double> hp(nh);
    for (auto& v : hp) v = in.f64();
    Rng scratch(0);
    auto net = make_neural(kind, detail::config_from(hp), scratch);
    if (in.u64() != net->params().size()) throw DataError("checkpoint: parameter count mismatch");
    for (auto& p : net->params()) {
        if (in.u64() != p.value.size()) throw DataError("checkpoint: shape mismatch for " + p.name);
        for (auto& v : p.value.values()) v = in.f64();
    }
    if (!in.done()) throw DataError("checkpoint: trailing bytes");
    return net;
}

}  // namespace agribench
