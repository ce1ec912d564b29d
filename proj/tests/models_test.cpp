#include "agribench/models/encodings.hpp"
#include "agribench/models/forecast.hpp"
#include "agribench/models/neural.hpp"
#include "agribench/models/training.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace agribench;

namespace {

const ModelKind kNeural[] = {ModelKind::transformer, ModelKind::t2v_transformer, ModelKind::bilstm};

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform();
    return v;
}

Batch batch_of(const std::vector<double>& series, std::size_t seq_len, std::size_t horizon, std::size_t count) {
    const auto ws = make_windows(series, {seq_len, series.size()}, seq_len, horizon, 1);
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = i;
    return make_batch(ws, idx, series.size());
}

std::vector<double> forward_values(NeuralNet& net, const Batch& b, Rng* drop = nullptr) {
    ad::Tape tape;
    return net.forward(tape, b.inputs, b.tau, drop).value().to_vector();
}

}  // namespace

// ---------------------------------------------------------------- encodings

TEST(SinusoidalPe, ZeroPositionAndRange) {
    const auto pe = sinusoidal_pe();
    ASSERT_EQ(pe.shape(), (ad::Shape{90, 64}));
    for (std::size_t c = 0; c < 64; ++c) EXPECT_EQ(pe[c], c % 2 == 0 ? 0.0 : 1.0);
    for (double v : pe.values()) {
        EXPECT_GE(v, -1.0);
        EXPECT_LE(v, 1.0);
    }
    EXPECT_THROW(sinusoidal_pe(10, 63), ConfigError);
}

TEST(SinusoidalPe, RowsDistinctUpTo10000) {
    const std::size_t n = 10000, d = 64;
    const auto pe = sinusoidal_pe(n, d);
    std::vector<std::size_t> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = i;
    const auto row = [&](std::size_t i) { return std::span<const double>(pe.data() + i * d, d); };
    std::sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
        const auto ra = row(a), rb = row(b);
        return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
    });
    for (std::size_t i = 1; i < n; ++i) {
        const auto a = row(rows[i - 1]), b = row(rows[i]);
        EXPECT_FALSE(std::equal(a.begin(), a.end(), b.begin())) << rows[i - 1] << " vs " << rows[i];
    }
}

TEST(InitT2v, EndpointsAndGeometricSpacing) {
    Rng rng(1);
    const auto k2 = init_t2v(2, 0.01, 10.0, rng);
    EXPECT_EQ(k2.omega, (std::vector<double>{0.01, 10.0}));
    const auto k3 = init_t2v(3, 0.01, 10.0, rng);
    EXPECT_NEAR(k3.omega[1], std::sqrt(0.1), 1e-12);
    EXPECT_NEAR(k3.omega[1], 0.3162, 1e-4);
    const auto k32 = init_t2v(32, 0.01, 10.0, rng);
    const double ratio = k32.omega[1] / k32.omega[0];
    for (std::size_t i = 1; i + 1 < 32; ++i) EXPECT_NEAR(k32.omega[i + 1] / k32.omega[i], ratio, 1e-9);
    EXPECT_EQ(k32.omega.back(), 10.0);
    for (double p : k32.phi) {
        EXPECT_GE(p, 0.0);
        EXPECT_LT(p, 2.0 * std::numbers::pi);
    }
}

TEST(InitT2v, RejectsBadArguments) {
    Rng rng(1);
    EXPECT_THROW(init_t2v(1, 0.01, 10.0, rng), ConfigError);
    EXPECT_THROW(init_t2v(8, 0.0, 10.0, rng), ConfigError);
    EXPECT_THROW(init_t2v(8, 0.01, -1.0, rng), ConfigError);
    EXPECT_THROW(init_t2v(8, 0.01, std::numeric_limits<double>::infinity(), rng), ConfigError);
}

TEST(Time2Vec, ClosedForm) {
    const T2vEncoding enc{{0.5, 2.0, 7.0}, {0.3, 1.1, -0.4}};
    const auto at0 = time2vec(0.0, enc);
    EXPECT_EQ(at0, (std::vector<double>{0.3, std::sin(1.1), std::sin(-0.4)}));
    const auto at = time2vec(0.25, enc);
    EXPECT_DOUBLE_EQ(at[0], 0.5 * 0.25 + 0.3);
    EXPECT_DOUBLE_EQ(at[2], std::sin(7.0 * 0.25 - 0.4));

    const T2vEncoding flat{{0.0, 0.0, 0.0}, {0.3, 1.1, -0.4}};
    EXPECT_EQ(time2vec(0.0, flat), time2vec(0.9, flat));
}

TEST(Time2Vec, TapeMatchesScalarForm) {
    Rng rng(2);
    const auto enc = init_t2v(5, 0.01, 10.0, rng);
    ad::Tape tape;
    ad::Tensor tau({3, 1}, std::vector<double>{0.0, 0.4, 1.0});
    const auto out = time2vec(tape.constant(tau), tape.constant(ad::Tensor({5}, enc.omega)),
                              tape.constant(ad::Tensor({5}, enc.phi)))
                         .value();
    ASSERT_EQ(out.shape(), (ad::Shape{3, 5}));
    for (std::size_t r = 0; r < 3; ++r) {
        const auto ref = time2vec(tau[r], enc);
        for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(out[r * 5 + i], ref[i], 1e-15);
    }
}

TEST(Time2Vec, OmegaGradientMatchesClosedFormAndFiniteDifferences) {
    Rng rng(3);
    const auto enc = init_t2v(6, 0.01, 10.0, rng);
    const double tau = 0.37;
    for (std::size_t i = 1; i < 6; ++i) {
        ad::ParameterSet ps;
        auto& omega = ps.add("omega", ad::Tensor({6}, enc.omega));
        auto& phi = ps.add("phi", ad::Tensor({6}, enc.phi));
        const auto element = [&](ad::Tape& t) {
            auto out = time2vec(t.constant(ad::Tensor({1, 1}, tau)), t.parameter(omega), t.parameter(phi));
            return ad::sum(ad::slice(out, i, i + 1));
        };
        ad::Tape tape;
        tape.backward(element(tape));
        const double analytic = tau * std::cos(enc.omega[i] * tau + enc.phi[i]);
        EXPECT_NEAR(omega.grad[i], analytic, 1e-12);

        const double h = 1e-6;
        const auto eval = [&](double w) {
            auto shifted = enc;
            shifted.omega[i] = w;
            return time2vec(tau, shifted)[i];
        };
        const double numeric = (eval(enc.omega[i] + h) - eval(enc.omega[i] - h)) / (2.0 * h);
        EXPECT_LT(std::abs(numeric - analytic), 1e-6);
    }
}

TEST(NormalizeTau, Endpoints) {
    EXPECT_EQ(normalize_tau(0, 1779), 0.0);
    EXPECT_EQ(normalize_tau(1778, 1779), 1.0);
    EXPECT_NEAR(normalize_tau(889, 1779), 0.5, 1.0 / 1778.0);
    EXPECT_NEAR(normalize_tau(50, 101), 0.5, 1e-15);
    EXPECT_THROW(normalize_tau(0, 1), ConfigError);
    EXPECT_THROW(normalize_tau(5, 5), std::out_of_range);
}

// --------------------------------------------------------------- networks

TEST(Networks, ParameterCounts) {
    Rng a(0), b(0), c(0);
    const auto tr = make_neural(ModelKind::transformer, {}, a);
    const auto t2v = make_neural(ModelKind::t2v_transformer, {}, b);
    const auto lstm = make_neural(ModelKind::bilstm, {}, c);
    EXPECT_EQ(t2v->params().scalar_count() - tr->params().scalar_count(), 2u * 32u + 32u * 64u + 64u);
    EXPECT_EQ(tr->params().scalar_count(), 101134u);
    EXPECT_NEAR(static_cast<double>(lstm->params().scalar_count()), 134000.0, 0.05 * 134000.0);
}

TEST(Networks, AblationVariantsShareLayersAndInitialWeights) {
    Rng a(7), b(7);
    const auto tr = make_neural(ModelKind::transformer, NeuralConfig::toy(), a);
    const auto t2v = make_neural(ModelKind::t2v_transformer, NeuralConfig::toy(), b);
    ASSERT_LT(tr->params().size(), t2v->params().size());
    auto it = t2v->params().begin();
    for (const auto& p : tr->params()) {
        EXPECT_EQ(p.name, it->name);
        EXPECT_EQ(p.value.shape(), it->value.shape());
        EXPECT_EQ(p.value.to_vector(), it->value.to_vector()) << p.name;
        ++it;
    }
    for (; it != t2v->params().end(); ++it) EXPECT_EQ(it->name.rfind("t2v.", 0), 0u) << it->name;
}

TEST(Networks, AblationVariantsDrawIdenticalDropoutMasks) {
    const auto cfg = NeuralConfig::toy();
    Rng init_a(3), init_b(3);
    auto tr = make_neural(ModelKind::transformer, cfg, init_a);
    auto t2v = make_neural(ModelKind::t2v_transformer, cfg, init_b);
    const auto b = batch_of(noise(40, 4), cfg.seq_len, cfg.horizon, 4);
    Rng da(11), db(11);
    forward_values(*tr, b, &da);
    forward_values(*t2v, b, &db);
    EXPECT_EQ(da.next_u64(), db.next_u64());
}

TEST(Networks, ToyGradientsMatchFiniteDifferences) {
    const auto cfg = NeuralConfig::toy();
    for (auto kind : kNeural) {
        for (std::uint64_t seed : {0u, 1u}) {
            Rng rng(seed);
            auto net = make_neural(kind, cfg, rng);
            const auto b = batch_of(noise(40, seed + 100), cfg.seq_len, cfg.horizon, 4);
            Rng drop(1);
            const auto res = ad::check_gradients(net->params(), [&](ad::Tape& t) {
                drop.reseed(9);
                return ad::huber_loss(net->forward(t, b.inputs, b.tau, &drop), t.constant(b.targets));
            });
            EXPECT_LT(res.max_rel_error, 1e-4) << to_string(kind) << " " << res.worst_param << "[" << res.worst_index << "]";
            EXPECT_EQ(res.checked, net->params().scalar_count());
        }
    }
}

TEST(Networks, EvalForwardIsDeterministicWithHorizonOutputs) {
    const auto series = noise(200, 5);
    const auto b = batch_of(series, 90, 14, 3);
    for (auto kind : kNeural) {
        Rng rng(42);
        auto net = make_neural(kind, {}, rng);
        const auto first = forward_values(*net, b);
        EXPECT_EQ(first.size(), 3u * 14u);
        EXPECT_EQ(forward_values(*net, b), first) << to_string(kind);
        Rng drop(1);
        EXPECT_NE(forward_values(*net, b, &drop), first) << to_string(kind);
    }
}

TEST(Networks, RejectWrongWindowLength) {
    for (auto kind : kNeural) {
        Rng rng(1);
        auto net = make_neural(kind, NeuralConfig::toy(), rng);
        ad::Tape tape;
        EXPECT_THROW(net->forward(tape, ad::Tensor({2, 9}), ad::Tensor({2, 9}), nullptr), DataError);
        EXPECT_THROW(net->forward(tape, ad::Tensor({2, 8}), ad::Tensor({2, 7}), nullptr), DataError);
    }
}

TEST(Networks, BiLstmSeesBothDirections) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        auto net = make_neural(ModelKind::bilstm, {}, rng);
        ad::Tensor x({1, 90}), tau({1, 90}), rev({1, 90});
        for (std::size_t j = 0; j < 90; ++j) {
            x[j] = rng.uniform();
            tau[j] = normalize_tau(j, 90);
        }
        for (std::size_t j = 0; j < 90; ++j) rev[j] = x[89 - j];
        ad::Tape tape;
        const auto a = net->forward(tape, x, tau, nullptr).value().to_vector();
        const auto r = net->forward(tape, rev, tau, nullptr).value().to_vector();
        EXPECT_NE(a, r) << "seed " << seed;
    }
}

TEST(Networks, RejectsInvalidConfig) {
    Rng rng(1);
    auto cfg = NeuralConfig::toy();
    cfg.dropout = 1.0;
    EXPECT_THROW(make_neural(ModelKind::transformer, cfg, rng), ConfigError);
    cfg = NeuralConfig::toy();
    cfg.heads = 3;
    EXPECT_THROW(make_neural(ModelKind::transformer, cfg, rng), ConfigError);
    EXPECT_THROW(parse_model_kind("prophet"), ConfigError);
    EXPECT_EQ(parse_model_kind("t2v_transformer"), ModelKind::t2v_transformer);
}

// ---------------------------------------------------------------- training

TEST(Training, ConfigValidation) {
    TrainConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.early_stop_patience = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.lr = 0.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.plateau_factor = 1.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Training, ReplaysAndRestoresBestWeights) {
    const auto cfg = NeuralConfig::toy();
    std::vector<double> z(120);
    for (std::size_t t = 0; t < z.size(); ++t) z[t] = 0.5 + 0.4 * std::sin(2.0 * std::numbers::pi * t / 10.0);
    const auto train_ws = make_windows(z, {8, 96}, 8, 3);
    const auto val_ws = make_windows(z, {96, 120}, 8, 3);
    TrainConfig tc;
    tc.max_epochs = 6;
    const auto run = [&] {
        Rng rng(42);
        auto net = make_neural(ModelKind::transformer, cfg, rng);
        auto res = train(*net, train_ws, val_ws, z.size(), tc, rng);
        return std::make_pair(std::move(net), std::move(res));
    };
    auto [net_a, a] = run();
    auto [net_b, b] = run();
    ASSERT_EQ(a.history.size(), 6u);
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss);
        EXPECT_EQ(a.history[i].val_loss, b.history[i].val_loss);
    }
    const auto [val_loss, val_mae] = evaluate_loss(*net_a, val_ws, z.size(), tc.huber_delta);
    EXPECT_EQ(val_loss, a.best_val_loss);
    EXPECT_EQ(a.history[a.best_epoch - 1].val_loss, a.best_val_loss);
    EXPECT_GT(val_mae, 0.0);
    EXPECT_EQ(history_csv(a).substr(0, 35), "epoch,train_loss,val_loss,val_mae,l");
}

TEST(Training, StopHookEndsRun) {
    const auto cfg = NeuralConfig::toy();
    const auto z = noise(80, 9);
    const auto train_ws = make_windows(z, {8, 60}, 8, 3);
    const auto val_ws = make_windows(z, {60, 80}, 8, 3);
    TrainConfig tc;
    tc.stop_when = [](const EpochRecord& e) { return e.epoch == 2; };
    Rng rng(1);
    auto net = make_neural(ModelKind::bilstm, cfg, rng);
    const auto res = train(*net, train_ws, val_ws, z.size(), tc, rng);
    EXPECT_TRUE(res.stopped_by_hook);
    EXPECT_EQ(res.history.size(), 2u);
    EXPECT_THROW(train(*net, WindowSet{}, val_ws, z.size(), tc, rng), DataError);
}

// Constant target with dropout off: the network only has to learn a constant.
class ConstantSeries : public ::testing::TestWithParam<ModelKind> {};

TEST_P(ConstantSeries, TrainingLossBelow1e6Within20Epochs) {
    const std::vector<double> z(400, 0.5);
    const auto split = temporal_split(z.size());
    const auto train_ws = training_windows(z, split);
    const auto val_ws = make_windows(z, split.val);
    NeuralConfig cfg;
    cfg.dropout = 0.0;
    TrainConfig tc;
    tc.max_epochs = 20;
    Rng rng(42);
    auto net = make_neural(GetParam(), cfg, rng);
    const auto res = train(*net, train_ws, val_ws, z.size(), tc, rng);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& e : res.history) best = std::min(best, e.train_loss);
    EXPECT_LT(best, 1e-6) << "final train loss " << res.history.back().train_loss;
}

INSTANTIATE_TEST_SUITE_P(AllNetworks, ConstantSeries, ::testing::ValuesIn(kNeural),
                         [](const auto& info) { return to_string(info.param); });

// ------------------------------------------------------------ checkpoints

TEST(Checkpoint, RoundTripReproducesPredictions) {
    const auto b = batch_of(noise(40, 3), 8, 3, 4);
    for (auto kind : kNeural) {
        Rng rng(5);
        auto net = make_neural(kind, NeuralConfig::toy(), rng);
        const auto bytes = save_checkpoint(*net);
        auto loaded = load_checkpoint(bytes);
        EXPECT_EQ(loaded->kind(), kind);
        EXPECT_EQ(forward_values(*loaded, b), forward_values(*net, b));
        EXPECT_EQ(save_checkpoint(*loaded), bytes);
    }
}

TEST(Checkpoint, RejectsCorruptInput) {
    Rng rng(5);
    auto net = make_neural(ModelKind::transformer, NeuralConfig::toy(), rng);
    const auto bytes = save_checkpoint(*net);
    EXPECT_THROW(load_checkpoint(bytes.substr(0, bytes.size() - 3)), DataError);
    EXPECT_THROW(load_checkpoint(bytes + "x"), DataError);
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(load_checkpoint(bad), DataError);
}

// ------------------------------------------------------------------- naive

TEST(Naive, RepeatsLastValue) {
    std::vector<double> w(90, 1.0);
    w.back() = 5.0;
    EXPECT_EQ(naive_predict(w), std::vector<double>(14, 5.0));
    EXPECT_THROW(naive_predict(std::vector<double>{}), DataError);
}

TEST(Naive, PrefixInvariantIdempotentAndScaleEquivariant) {
    auto w = noise(90, 8);
    const auto p = naive_predict(w);
    for (std::size_t i = 0; i + 1 < w.size(); ++i) w[i] = -100.0 + static_cast<double>(i);
    EXPECT_EQ(naive_predict(w), p);
    EXPECT_EQ(naive_predict(naive_predict(w)), p);
    const double a = 3.5, c = -2.0;
    std::vector<double> t(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) t[i] = a * w[i] + c;
    const auto pt = naive_predict(t);
    for (std::size_t i = 0; i < 14; ++i) EXPECT_DOUBLE_EQ(pt[i], a * p[i] + c);
}

// -------------------------------------------------------------- contract

namespace {

PreparedSeries seasonal_series(std::size_t n) {
    Rng rng(21);
    std::vector<double> y(n);
    for (std::size_t t = 0; t < n; ++t)
        y[t] = 40.0 + 8.0 * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / 7.0) + rng.normal(0.0, 1.0);
    return PreparedSeries::make(std::move(y));
}

void expect_sane(const PreparedSeries& d, const std::vector<double>& pred) {
    const double lo = d.scaler.observed_min() - 3.0 * d.scaler.range();
    const double hi = d.scaler.observed_max() + 3.0 * d.scaler.range();
    for (double v : pred) {
        EXPECT_TRUE(std::isfinite(v));
        EXPECT_GE(v, lo);
        EXPECT_LE(v, hi);
    }
}

}  // namespace

TEST(ForecastModelContract, NaiveInOriginalScale) {
    const auto d = seasonal_series(400);
    const auto ws = d.test_windows();
    const auto m = ForecastModel::fit(ModelKind::naive, d);
    const auto pred = m.predict(d, ws);
    ASSERT_EQ(pred.size(), ws.size() * 14);
    for (std::size_t i = 0; i < ws.size(); ++i)
        for (std::size_t s = 0; s < 14; ++s) EXPECT_NEAR(pred[i * 14 + s], d.values[ws.target_start(i) - 1], 1e-9);
    expect_sane(d, pred);
}

TEST(ForecastModelContract, SarimaRollingAndSaveLoad) {
    const auto d = seasonal_series(400);
    const auto ws = d.test_windows(90, 14, 7);
    const auto m = ForecastModel::fit(ModelKind::sarima, d);
    const auto pred = m.predict(d, ws);
    ASSERT_EQ(pred.size(), ws.size() * 14);
    expect_sane(d, pred);
    const auto loaded = ForecastModel::load(m.save());
    EXPECT_EQ(loaded.sarima()->order, m.sarima()->order);
    EXPECT_EQ(loaded.predict(d, ws), pred);
}

TEST(ForecastModelContract, NeuralToyFitPredictAndSaveLoad) {
    const auto d = seasonal_series(300);
    ModelOptions opt;
    opt.neural = NeuralConfig::toy();
    opt.train.max_epochs = 3;
    const auto ws = d.test_windows(8, 3);
    for (auto kind : kNeural) {
        const auto m = ForecastModel::fit(kind, d, opt);
        EXPECT_EQ(m.training().history.size(), 3u);
        const auto pred = m.predict(d, ws);
        ASSERT_EQ(pred.size(), ws.size() * 3);
        expect_sane(d, pred);
        const auto loaded = ForecastModel::load(m.save());
        EXPECT_EQ(loaded.kind(), kind);
        EXPECT_EQ(loaded.predict(d, ws), pred);
        EXPECT_THROW(m.predict(d, d.test_windows(8, 4)), DataError);
    }
}

TEST(ForecastModelContract, SaveLoadRejectsGarbage) {
    EXPECT_THROW(ForecastModel::load("nonsense"), DataError);
    const auto naive = ForecastModel::load(ForecastModel{}.save());
    EXPECT_EQ(naive.kind(), ModelKind::naive);
}
