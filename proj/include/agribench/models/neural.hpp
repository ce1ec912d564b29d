#pragma once

// Neural forecasters: the encoder-only transformer (sinusoidal or Time2Vec
// temporal encoding) and the two-layer bidirectional LSTM.

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "agribench/autodiff.hpp"
#include "agribench/error.hpp"
#include "agribench/models/encodings.hpp"
#include "agribench/rng.hpp"
#include "agribench/split_scale.hpp"

namespace agribench {

enum class ModelKind { naive, sarima, bilstm, transformer, t2v_transformer };

inline std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::naive: return "naive";
        case ModelKind::sarima: return "sarima";
        case ModelKind::bilstm: return "bilstm";
        case ModelKind::transformer: return "transformer";
        case ModelKind::t2v_transformer: return "t2v_transformer";
    }
    return "unknown";
}

inline ModelKind parse_model_kind(const std::string& s) {
    for (auto k : {ModelKind::naive, ModelKind::sarima, ModelKind::bilstm, ModelKind::transformer, ModelKind::t2v_transformer})
        if (to_string(k) == s) return k;
    throw ConfigError("unknown model kind '" + s + "'");
}

inline bool is_neural(ModelKind k) {
    return k == ModelKind::bilstm || k == ModelKind::transformer || k == ModelKind::t2v_transformer;
}

struct NeuralConfig {
    std::size_t seq_len = kDefaultSeqLen;
    std::size_t horizon = kDefaultHorizon;
    std::size_t d_model = 64;
    std::size_t heads = 4;
    std::size_t layers = 2;
    std::size_t d_ff = 256;
    std::size_t t2v_k = 32;
    double t2v_f_low = 0.01;
    double t2v_f_high = 10.0;
    std::size_t lstm_hidden = 64;
    std::size_t lstm_layers = 2;
    double dropout = 0.1;

    /// Toy sizes used by gradient checks.
    static NeuralConfig toy() {
        NeuralConfig c;
        c.seq_len = 8;
        c.horizon = 3;
        c.d_model = 8;
        c.heads = 2;
        c.d_ff = 16;
        c.t2v_k = 4;
        c.lstm_hidden = 8;
        return c;
    }
};

/// One mini-batch: inputs and tau are [B, seq_len], targets [B, horizon].
struct Batch {
    ad::Tensor inputs;
    ad::Tensor tau;
    ad::Tensor targets;
    std::size_t size() const { return inputs.empty() ? 0 : inputs.dim(0); }
};

/// Gathers windows `idx` of `ws`; tau of input position j of a window with
/// origin o is (o + j) / (series_length - 1).
inline Batch make_batch(const WindowSet& ws, std::span<const std::size_t> idx, std::size_t series_length) {
    const std::size_t b = idx.size(), L = ws.seq_len, H = ws.horizon;
    Batch out{ad::Tensor({b, L}), ad::Tensor({b, L}), ad::Tensor({b, H})};
    for (std::size_t r = 0; r < b; ++r) {
        const std::size_t w = idx[r];
        const auto in = ws.input(w);
        const auto tg = ws.target(w);
        std::copy(in.begin(), in.end(), out.inputs.data() + r * L);
        std::copy(tg.begin(), tg.end(), out.targets.data() + r * H);
        for (std::size_t j = 0; j < L; ++j) out.tau[r * L + j] = normalize_tau(ws.origins[w] + j, series_length);
    }
    return out;
}

namespace detail {

struct Linear {
    ad::Parameter* w = nullptr;
    ad::Parameter* b = nullptr;

    static Linear make(ad::ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
        const double bound = std::sqrt(1.0 / static_cast<double>(in));
        Linear l;
        l.w = &ps.add(name + ".weight", ad::uniform_tensor({in, out}, bound, rng));
        l.b = &ps.add(name + ".bias", ad::uniform_tensor({out}, bound, rng));
        return l;
    }

    ad::Var operator()(ad::Tape& t, ad::Var x) const { return ad::linear(x, t.parameter(*w), t.parameter(*b)); }
};

struct LayerNorm {
    ad::Parameter* gamma = nullptr;
    ad::Parameter* beta = nullptr;

    static LayerNorm make(ad::ParameterSet& ps, const std::string& name, std::size_t dim) {
        return {&ps.add(name + ".gamma", ad::Tensor({dim}, 1.0)), &ps.add(name + ".beta", ad::Tensor({dim}, 0.0))};
    }

    ad::Var operator()(ad::Tape& t, ad::Var x) const { return ad::layer_norm(x, t.parameter(*gamma), t.parameter(*beta)); }
};

}  // namespace detail

class NeuralNet {
   public:
    virtual ~NeuralNet() = default;

    ModelKind kind() const { return kind_; }
    const NeuralConfig& config() const { return cfg_; }
    ad::ParameterSet& params() { return params_; }
    const ad::ParameterSet& params() const { return params_; }

    /// Scaled predictions [B, horizon]. Dropout is active iff dropout_rng is set.
    virtual ad::Var forward(ad::Tape& tape, const ad::Tensor& inputs, const ad::Tensor& tau, Rng* dropout_rng) = 0;

   protected:
    NeuralNet(ModelKind kind, NeuralConfig cfg) : kind_(kind), cfg_(cfg) {
        if (!(cfg_.dropout >= 0.0 && cfg_.dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
    }

    void check_inputs(const ad::Tensor& inputs, const ad::Tensor& tau) const {
        if (inputs.rank() != 2 || inputs.dim(1) != cfg_.seq_len)
            throw DataError(to_string(kind_) + ": expected windows of length " + std::to_string(cfg_.seq_len) + ", got " +
                            ad::to_string(inputs.shape()));
        if (tau.shape() != inputs.shape()) throw DataError(to_string(kind_) + ": tau shape differs from inputs");
    }

    ModelKind kind_;
    NeuralConfig cfg_;
    ad::ParameterSet params_;
};

/// Pre-LayerNorm encoder. Shared layers are declared before the temporal
/// encoding's own parameters so both variants draw identical initial weights
/// for everything they have in common.
class Transformer final : public NeuralNet {
   public:
    Transformer(const NeuralConfig& cfg, bool time2vec, Rng& rng)
        : NeuralNet(time2vec ? ModelKind::t2v_transformer : ModelKind::transformer, cfg) {
        if (cfg.d_model % cfg.heads != 0) throw ConfigError("transformer: d_model must be divisible by heads");
        const std::size_t d = cfg.d_model;
        embed_ = detail::Linear::make(params_, "embed", 1, d, rng);
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            const std::string p = "layer" + std::to_string(l);
            Block b;
            b.ln1 = detail::LayerNorm::make(params_, p + ".ln1", d);
            b.qkv = detail::Linear::make(params_, p + ".qkv", d, 3 * d, rng);
            b.out = detail::Linear::make(params_, p + ".attn_out", d, d, rng);
            b.ln2 = detail::LayerNorm::make(params_, p + ".ln2", d);
            b.ff1 = detail::Linear::make(params_, p + ".ff1", d, cfg.d_ff, rng);
            b.ff2 = detail::Linear::make(params_, p + ".ff2", cfg.d_ff, d, rng);
            blocks_.push_back(b);
        }
        final_ln_ = detail::LayerNorm::make(params_, "final_ln", d);
        head_ = detail::Linear::make(params_, "head", d, cfg.horizon, rng);
        if (time2vec) {
            const auto enc = init_t2v(cfg.t2v_k, cfg.t2v_f_low, cfg.t2v_f_high, rng);
            omega_ = &params_.add("t2v.omega", ad::Tensor({cfg.t2v_k}, enc.omega));
            phi_ = &params_.add("t2v.phi", ad::Tensor({cfg.t2v_k}, enc.phi));
            t2v_proj_ = detail::Linear::make(params_, "t2v.proj", cfg.t2v_k, d, rng);
        } else {
            pe_ = sinusoidal_pe(cfg.seq_len, d);
        }
    }

    ad::Var forward(ad::Tape& t, const ad::Tensor& inputs, const ad::Tensor& tau, Rng* rng) override {
        check_inputs(inputs, tau);
        const std::size_t B = inputs.dim(0), L = cfg_.seq_len, d = cfg_.d_model;
        const std::size_t H = cfg_.heads, hd = d / H;
        const double p = cfg_.dropout;

        auto x = embed_(t, t.constant(ad::Tensor({B, L, 1}, inputs.values())));
        if (omega_ != nullptr) {
            auto enc = time2vec(t.constant(ad::Tensor({B, L, 1}, tau.values())), t.parameter(*omega_), t.parameter(*phi_));
            x = ad::add(x, t2v_proj_(t, enc));
        } else {
            x = ad::add(x, t.constant(pe_));
        }
        x = ad::dropout(x, p, rng);

        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
        for (const Block& b : blocks_) {
            auto qkv = b.qkv(t, b.ln1(t, x));
            std::vector<ad::Var> heads;
            for (std::size_t h = 0; h < H; ++h) {
                auto q = ad::slice(qkv, h * hd, (h + 1) * hd);
                auto k = ad::slice(qkv, d + h * hd, d + (h + 1) * hd);
                auto v = ad::slice(qkv, 2 * d + h * hd, 2 * d + (h + 1) * hd);
                auto att = ad::softmax(ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt));
                heads.push_back(ad::matmul(ad::dropout(att, p, rng), v));
            }
            x = ad::add(x, ad::dropout(b.out(t, ad::concat(heads)), p, rng));
            auto f = ad::dropout(ad::relu(b.ff1(t, b.ln2(t, x))), p, rng);
            x = ad::add(x, ad::dropout(b.ff2(t, f), p, rng));
        }
        x = final_ln_(t, x);
        auto last = ad::slice(ad::reshape(x, {B, L * d}), (L - 1) * d, L * d);
        return head_(t, last);
    }

   private:
    struct Block {
        detail::LayerNorm ln1, ln2;
        detail::Linear qkv, out, ff1, ff2;
    };

    detail::Linear embed_;
    std::vector<Block> blocks_;
    detail::LayerNorm final_ln_;
    detail::Linear head_;
    ad::Parameter* omega_ = nullptr;
    ad::Parameter* phi_ = nullptr;
    detail::Linear t2v_proj_;
    ad::Tensor pe_;
};

/// Stacked bidirectional LSTM; gate order i, f, g, o with one bias per gate.
class BiLstm final : public NeuralNet {
   public:
    BiLstm(const NeuralConfig& cfg, Rng& rng) : NeuralNet(ModelKind::bilstm, cfg) {
        const std::size_t h = cfg.lstm_hidden;
        const double bound = std::sqrt(1.0 / static_cast<double>(h));
        for (std::size_t l = 0; l < cfg.lstm_layers; ++l) {
            const std::size_t in = l == 0 ? 1 : 2 * h;
            for (const char* dir : {"fwd", "bwd"}) {
                const std::string p = "lstm" + std::to_string(l) + "." + dir;
                Cell c;
                c.w_ih = &params_.add(p + ".w_ih", ad::uniform_tensor({in, 4 * h}, bound, rng));
                c.w_hh = &params_.add(p + ".w_hh", ad::uniform_tensor({h, 4 * h}, bound, rng));
                c.bias = &params_.add(p + ".bias", ad::uniform_tensor({4 * h}, bound, rng));
                for (std::size_t i = h; i < 2 * h; ++i) c.bias->value[i] = 1.0;  // forget gate
                cells_.push_back(c);
            }
        }
        head_ = detail::Linear::make(params_, "head", 2 * h, cfg.horizon, rng);
    }

    ad::Var forward(ad::Tape& t, const ad::Tensor& inputs, const ad::Tensor& tau, Rng* rng) override {
        check_inputs(inputs, tau);
        const std::size_t B = inputs.dim(0), L = cfg_.seq_len, h = cfg_.lstm_hidden;
        ad::Var seq = t.constant(ad::Tensor({B, L, 1}, inputs.values()));
        ad::Var fwd_last, bwd_first;
        for (std::size_t l = 0; l < cfg_.lstm_layers; ++l) {
            const auto fwd = run(t, cells_[2 * l], seq, false);
            const auto bwd = run(t, cells_[2 * l + 1], seq, true);
            fwd_last = fwd.back();
            bwd_first = bwd.front();
            if (l + 1 < cfg_.lstm_layers) {
                std::vector<ad::Var> parts;
                parts.reserve(2 * L);
                for (std::size_t s = 0; s < L; ++s) {
                    parts.push_back(fwd[s]);
                    parts.push_back(bwd[s]);
                }
                seq = ad::dropout(ad::reshape(ad::concat(parts), {B, L, 2 * h}), cfg_.dropout, rng);
            }
        }
        return head_(t, ad::concat({fwd_last, bwd_first}));
    }

   private:
    struct Cell {
        ad::Parameter* w_ih = nullptr;
        ad::Parameter* w_hh = nullptr;
        ad::Parameter* bias = nullptr;
    };

    /// Hidden states indexed by time step for one direction.
    std::vector<ad::Var> run(ad::Tape& t, const Cell& c, ad::Var seq, bool reverse) const {
        const std::size_t B = seq.value().dim(0), L = cfg_.seq_len, h = cfg_.lstm_hidden;
        auto pre = ad::reshape(ad::linear(seq, t.parameter(*c.w_ih), t.parameter(*c.bias)), {B, L * 4 * h});
        auto w_hh = t.parameter(*c.w_hh);
        std::vector<ad::Var> out(L);
        ad::Var hs, cs;
        for (std::size_t k = 0; k < L; ++k) {
            const std::size_t s = reverse ? L - 1 - k : k;
            auto g = ad::slice(pre, s * 4 * h, (s + 1) * 4 * h);
            if (k > 0) g = ad::add(g, ad::matmul(hs, w_hh));
            auto sg = ad::sigmoid(g);
            auto i = ad::slice(sg, 0, h);
            auto o = ad::slice(sg, 3 * h, 4 * h);
            auto cand = ad::tanh(ad::slice(g, 2 * h, 3 * h));
            cs = k == 0 ? ad::mul(i, cand) : ad::add(ad::mul(ad::slice(sg, h, 2 * h), cs), ad::mul(i, cand));
            hs = ad::mul(o, ad::tanh(cs));
            out[s] = hs;
        }
        return out;
    }

    std::vector<Cell> cells_;
    detail::Linear head_;
};

inline std::unique_ptr<NeuralNet> make_neural(ModelKind kind, const NeuralConfig& cfg, Rng& rng) {
    switch (kind) {
        case ModelKind::bilstm: return std::make_unique<BiLstm>(cfg, rng);
        case ModelKind::transformer: return std::make_unique<Transformer>(cfg, false, rng);
        case ModelKind::t2v_transformer: return std::make_unique<Transformer>(cfg, true, rng);
        default: throw ConfigError("make_neural: " + to_string(kind) + " is not a neural model");
    }
}

}  // namespace agribench
