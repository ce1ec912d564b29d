#pragma once

// Batch orchestration over cached artifacts:
//   ingest -> diagnose -> train -> predict -> evaluate -> dm -> report
// Each stage reads the previous stage's files from the output directory, so
// stages can be rerun independently. Every artifact starts with a
// "# config_hash <hex>" line; files from another configuration are rejected.
//
// Layout under RunConfig::output:
//   correlation.csv, metrics.csv, diagnostics.csv, dm.csv, summary.txt, provenance.txt
//   <commodity>/series.csv, anomalies.csv, diagnostics.csv
//   <commodity>/model_<kind>.bin, history_<kind>.csv (neural only)
//   <commodity>/predictions_<kind>.csv, overlay_<kind>.csv

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "agribench/config.hpp"
#include "agribench/core_data.hpp"
#include "agribench/csv.hpp"
#include "agribench/diagnostics.hpp"
#include "agribench/error.hpp"
#include "agribench/evaluation.hpp"
#include "agribench/models/forecast.hpp"

namespace agribench {

// ---------------------------------------------------------------------------
// Report types
// ---------------------------------------------------------------------------

struct DiagnosticsRow {
    std::string commodity;
    std::size_t n = 0;
    double adf_stat = 0.0;
    double adf_p = 1.0;
    std::size_t adf_lags = 0;
    bool stationary = false;
    double min = 0.0, max = 0.0, mean = 0.0, std = 0.0;
    double rs_ratio = 0.0;
    std::size_t stl_period = 0;

    static constexpr const char* header = "commodity,n,adf_stat,adf_p,adf_lags,stationary,min,max,mean,std,rs_ratio,stl_period";

    std::string to_csv() const {
        return commodity + "," + std::to_string(n) + "," + csv::fmt(adf_stat) + "," + csv::fmt(adf_p) + "," +
               std::to_string(adf_lags) + "," + (stationary ? "true" : "false") + "," + csv::fmt(min) + "," +
               csv::fmt(max) + "," + csv::fmt(mean) + "," + csv::fmt(std) + "," + csv::fmt(rs_ratio) + "," +
               std::to_string(stl_period);
    }

    static DiagnosticsRow from_csv(std::string_view line) {
        const auto f = csv::split(line);
        if (f.size() != 12) throw DataError("diagnostics row: expected 12 fields");
        DiagnosticsRow r;
        r.commodity = f[0];
        const auto count = [&](std::size_t i) {
            const auto v = csv::parse_int(f[i]);
            if (!v || *v < 0) throw DataError("diagnostics row: bad integer field " + std::to_string(i));
            return static_cast<std::size_t>(*v);
        };
        const auto real = [&](std::size_t i) {
            const auto v = csv::parse_double(f[i]);
            if (!v) throw DataError("diagnostics row: bad numeric field " + std::to_string(i));
            return *v;
        };
        r.n = count(1);
        r.adf_stat = real(2);
        r.adf_p = real(3);
        r.adf_lags = count(4);
        r.stationary = f[5] == "true";
        r.min = real(6);
        r.max = real(7);
        r.mean = real(8);
        r.std = real(9);
        r.rs_ratio = real(10);
        r.stl_period = count(11);
        return r;
    }
};

struct MetricRow {
    std::string commodity;
    ModelKind model = ModelKind::naive;
    MetricReport metrics;
};

struct DmRow {
    std::string commodity;
    ModelKind comparison = ModelKind::t2v_transformer;
    ModelKind reference = ModelKind::transformer;
    DmResult result;
    /// Both models had identical losses at every point; no statistic.
    bool indistinguishable = false;
};

struct Provenance {
    std::uint64_t seed = 0;
    std::string config_hash;
    std::string started;
    std::string finished;
};

struct BenchmarkReport {
    std::vector<std::string> commodities;
    std::vector<ModelKind> models;
    std::vector<MetricRow> metrics;
    std::vector<DiagnosticsRow> diagnostics;
    std::vector<DmRow> dm;
    Provenance provenance;

    /// Throws DataError unless every (commodity, model) pair has exactly one
    /// metric row and every commodity exactly one diagnostics row.
    void validate() const {
        if (models.empty()) throw DataError("report: no models selected");
        if (commodities.empty()) throw DataError("report: no commodities");
        if (provenance.config_hash.empty()) throw DataError("report: missing config hash");
        for (const auto& c : commodities) {
            for (auto m : models) {
                const auto hits = std::count_if(metrics.begin(), metrics.end(),
                                                [&](const MetricRow& r) { return r.commodity == c && r.model == m; });
                if (hits != 1)
                    throw DataError("report: expected one metric row for " + c + "/" + to_string(m) + ", found " +
                                    std::to_string(hits));
            }
            const auto d = std::count_if(diagnostics.begin(), diagnostics.end(),
                                         [&](const DiagnosticsRow& r) { return r.commodity == c; });
            if (d != 1) throw DataError("report: expected one diagnostics row for " + c);
        }
        if (metrics.size() != commodities.size() * models.size()) throw DataError("report: metric rows for unselected pairs");
    }
};

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

struct ArtifactLayout {
    std::filesystem::path root;

    std::filesystem::path dir(const std::string& c) const { return root / c; }
    std::filesystem::path series(const std::string& c) const { return dir(c) / "series.csv"; }
    std::filesystem::path anomalies(const std::string& c) const { return dir(c) / "anomalies.csv"; }
    std::filesystem::path diagnostics(const std::string& c) const { return dir(c) / "diagnostics.csv"; }
    std::filesystem::path model(const std::string& c, ModelKind k) const { return dir(c) / ("model_" + to_string(k) + ".bin"); }
    std::filesystem::path history(const std::string& c, ModelKind k) const {
        return dir(c) / ("history_" + to_string(k) + ".csv");
    }
    std::filesystem::path predictions(const std::string& c, ModelKind k) const {
        return dir(c) / ("predictions_" + to_string(k) + ".csv");
    }
    std::filesystem::path overlay(const std::string& c, ModelKind k) const {
        return dir(c) / ("overlay_" + to_string(k) + ".csv");
    }
    std::filesystem::path correlation() const { return root / "correlation.csv"; }
    std::filesystem::path metrics() const { return root / "metrics.csv"; }
    std::filesystem::path diagnostics_table() const { return root / "diagnostics.csv"; }
    std::filesystem::path dm() const { return root / "dm.csv"; }
    std::filesystem::path summary() const { return root / "summary.txt"; }
    std::filesystem::path provenance() const { return root / "provenance.txt"; }
};

inline std::string hash_line(const std::string& hash) { return "# config_hash " + hash + "\n"; }

inline void write_artifact(const std::filesystem::path& path, const std::string& hash, std::string_view body) {
    std::filesystem::create_directories(path.parent_path());
    csv::write_file_atomic(path, hash_line(hash) + std::string(body));
}

/// Contents after the hash line. Throws DataError when the file is missing or
/// was written under a different configuration.
inline std::string read_artifact(const std::filesystem::path& path, const std::string& hash) {
    if (!std::filesystem::is_regular_file(path)) throw DataError("missing artifact " + path.string());
    std::string text = csv::read_file(path);
    const auto nl = text.find('\n');
    const std::string first = text.substr(0, nl);
    const std::string expected = hash_line(hash).substr(0, hash_line(hash).size() - 1);
    if (first.rfind("# config_hash ", 0) != 0) throw DataError("artifact without config hash: " + path.string());
    if (first != expected)
        throw DataError("artifact " + path.string() + " has " + first.substr(2) + " but the current config hash is " + hash);
    return nl == std::string::npos ? std::string{} : text.substr(nl + 1);
}

inline std::string utc_timestamp() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// ---------------------------------------------------------------------------
// Stage plumbing
// ---------------------------------------------------------------------------

struct PipelineOptions {
    std::size_t jobs = 1;
    /// Progress lines; null silences them.
    std::ostream* log = nullptr;
};

class StageLog {
   public:
    explicit StageLog(std::ostream* out) : out_(out) {}
    void operator()(const std::string& line) {
        if (!out_) return;
        std::lock_guard lock(mu_);
        *out_ << line << '\n' << std::flush;
    }

   private:
    std::ostream* out_;
    std::mutex mu_;
};

/// Runs f, prefixing any error with the stage (and commodity) while keeping
/// its category.
template <class F>
auto in_stage(std::string_view stage, std::string_view commodity, F&& f) -> decltype(f()) {
    std::string where = "stage " + std::string(stage);
    if (!commodity.empty()) where += " [" + std::string(commodity) + "]";
    where += ": ";
    try {
        return f();
    } catch (const ConfigError& e) {
        throw ConfigError(where + e.what());
    } catch (const NumericError& e) {
        throw NumericError(where + e.what());
    } catch (const DataError& e) {
        throw DataError(where + e.what());
    } catch (const std::exception& e) {
        throw DataError(where + e.what());
    }
}

/// Calls fn for every commodity on up to `jobs` threads. The first failure in
/// config order is rethrown after all workers finish.
inline void for_each_commodity(const RunConfig& cfg, std::size_t jobs,
                               const std::function<void(const CommoditySource&)>& fn) {
    const std::size_t n = cfg.commodities.size();
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(cfg.commodities[i]);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(n, 1));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

inline PriceSeries ingest_commodity(const RunConfig& cfg, const CommoditySource& src) {
    return in_stage("ingest", src.name, [&] {
        if (!std::filesystem::is_regular_file(src.path)) throw ConfigError("data file not found: " + src.path.string());
        auto series = forward_fill(parse_series(csv::read_file(src.path), cfg.columns, src.name));
        auto flags = validate(series);
        series.anomalies.insert(series.anomalies.end(), flags.begin(), flags.end());
        std::stable_sort(series.anomalies.begin(), series.anomalies.end(),
                         [](const AnomalyFlag& a, const AnomalyFlag& b) { return a.date < b.date; });
        if (cfg.zero_prices == ZeroPricePolicy::interpolate) series = interpolate_zero_prices(series);
        const ArtifactLayout out{cfg.output};
        write_artifact(out.series(src.name), cfg.hash(), series_csv(series));
        write_artifact(out.anomalies(src.name), cfg.hash(), anomaly_csv(series.anomalies));
        return series;
    });
}

inline PriceSeries load_series(const RunConfig& cfg, const std::string& commodity) {
    const ArtifactLayout out{cfg.output};
    return parse_series(read_artifact(out.series(commodity), cfg.hash()), ColumnSchema::min_max(), commodity);
}

/// Pearson matrix over the dates every commodity shares.
inline CorrelationMatrix common_date_correlation(std::vector<PriceSeries> series) {
    std::vector<Date> common = series.front().dates();
    for (const auto& s : series) {
        std::vector<Date> keep;
        const auto d = s.dates();
        std::set_intersection(common.begin(), common.end(), d.begin(), d.end(), std::back_inserter(keep));
        common = std::move(keep);
    }
    if (common.size() < 3) throw DataError("correlation: fewer than 3 dates shared by all commodities");
    for (auto& s : series)
        std::erase_if(s.records, [&](const PriceRecord& r) { return !std::binary_search(common.begin(), common.end(), r.date); });
    return pearson_matrix(series);
}

inline void ingest(const RunConfig& cfg, const PipelineOptions& opt = {}) {
    StageLog log(opt.log);
    std::vector<PriceSeries> all(cfg.commodities.size());
    for_each_commodity(cfg, opt.jobs, [&](const CommoditySource& src) {
        const auto i = static_cast<std::size_t>(&src - cfg.commodities.data());
        all[i] = ingest_commodity(cfg, src);
        log("ingest " + src.name + ": " + std::to_string(all[i].size()) + " days, " +
            std::to_string(all[i].anomalies.size()) + " anomalies");
    });
    if (all.size() >= 2)
        in_stage("ingest", "", [&] {
            write_artifact(ArtifactLayout{cfg.output}.correlation(), cfg.hash(), correlation_csv(common_date_correlation(all)));
        });
}

inline DiagnosticsRow diagnose_commodity(const RunConfig& cfg, const std::string& commodity) {
    return in_stage("diagnose", commodity, [&] {
        const auto y = load_series(cfg, commodity).mid_prices();
        DiagnosticsRow r;
        r.commodity = commodity;
        r.n = y.size();
        const auto adf = adf_test(y);
        r.adf_stat = adf.statistic;
        r.adf_p = adf.p_value;
        r.adf_lags = adf.lags_used;
        r.stationary = adf.stationary();
        r.min = *std::min_element(y.begin(), y.end());
        r.max = *std::max_element(y.begin(), y.end());
        r.mean = detail::mean(y);
        r.std = detail::stddev(y);
        r.rs_ratio = rs_ratio(stl_decompose(y, cfg.stl_period));
        r.stl_period = cfg.stl_period;
        write_artifact(ArtifactLayout{cfg.output}.diagnostics(commodity), cfg.hash(),
                       std::string(DiagnosticsRow::header) + "\n" + r.to_csv() + "\n");
        return r;
    });
}

inline ModelOptions model_options(const RunConfig& cfg, const std::string& commodity) {
    ModelOptions m;
    m.neural.seq_len = cfg.seq_len;
    m.neural.horizon = cfg.horizon;
    m.neural.dropout = cfg.dropout_for(commodity);
    m.train.max_epochs = cfg.max_epochs;
    m.seed = cfg.seed;
    return m;
}

inline PreparedSeries prepare(const RunConfig& cfg, const PriceSeries& series) {
    return PreparedSeries::make(series.mid_prices(), cfg.split);
}

inline std::string history_artifact(const TrainResult& t) {
    return "# best_epoch " + std::to_string(t.best_epoch) + "\n# early_stopped " + (t.early_stopped ? "true" : "false") +
           "\n" + history_csv(t);
}

inline void train_commodity(const RunConfig& cfg, const std::string& commodity, StageLog& log) {
    in_stage("train", commodity, [&] {
        const auto data = prepare(cfg, load_series(cfg, commodity));
        const ArtifactLayout out{cfg.output};
        for (auto kind : cfg.models) {
            const auto start = std::chrono::steady_clock::now();
            const auto model = ForecastModel::fit(kind, data, model_options(cfg, commodity));
            write_artifact(out.model(commodity, kind), cfg.hash(), model.save());
            std::string note;
            if (is_neural(kind)) {
                write_artifact(out.history(commodity, kind), cfg.hash(), history_artifact(model.training()));
                note = ", " + std::to_string(model.training().history.size()) + " epochs, best " +
                       std::to_string(model.training().best_epoch);
            }
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            log("train " + commodity + "/" + to_string(kind) + note + " (" + csv::fixed(secs, 1) + " s)");
        }
    });
}

inline ForecastModel load_model(const RunConfig& cfg, const std::string& commodity, ModelKind kind) {
    return ForecastModel::load(read_artifact(ArtifactLayout{cfg.output}.model(commodity, kind), cfg.hash()));
}

inline void predict_commodity(const RunConfig& cfg, const std::string& commodity, StageLog& log) {
    in_stage("predict", commodity, [&] {
        const auto series = load_series(cfg, commodity);
        const auto data = prepare(cfg, series);
        const auto ws = data.test_windows(cfg.seq_len, cfg.horizon, cfg.stride);
        const auto dates = series.dates();
        const ArtifactLayout out{cfg.output};
        for (auto kind : cfg.models) {
            const auto model = load_model(cfg, commodity, kind);
            if (model.kind() != kind) throw DataError("model file holds " + to_string(model.kind()));
            const auto pred = model.predict(data, ws);
            ForecastTable table;
            std::string overlay = "commodity,model,date,step,actual,predicted\n";
            for (std::size_t w = 0; w < ws.size(); ++w)
                for (std::size_t s = 0; s < cfg.horizon; ++s) {
                    const std::size_t t = ws.target_start(w) + s;
                    const double p = pred[w * cfg.horizon + s];
                    table.add(w, s + 1, data.values[t], p);
                    overlay += commodity + "," + to_string(kind) + "," + format_iso_date(dates[t]) + "," +
                               std::to_string(s + 1) + "," + csv::fmt(data.values[t]) + "," + csv::fmt(p) + "\n";
                }
            write_artifact(out.predictions(commodity, kind), cfg.hash(), table.to_csv());
            write_artifact(out.overlay(commodity, kind), cfg.hash(), overlay);
            log("predict " + commodity + "/" + to_string(kind) + ": " + std::to_string(ws.size()) + " windows");
        }
    });
}

inline ForecastTable load_predictions(const RunConfig& cfg, const std::string& commodity, ModelKind kind) {
    return ForecastTable::from_csv(read_artifact(ArtifactLayout{cfg.output}.predictions(commodity, kind), cfg.hash()));
}

inline std::vector<MetricRow> collect_metrics(const RunConfig& cfg) {
    std::vector<MetricRow> rows;
    for (const auto& c : cfg.commodities)
        for (auto kind : cfg.models)
            rows.push_back(in_stage("evaluate", c.name, [&] {
                const auto t = load_predictions(cfg, c.name, kind);
                return MetricRow{c.name, kind, metrics(t.actual, t.predicted, cfg.mape)};
            }));
    return rows;
}

inline std::vector<DmRow> collect_dm(const RunConfig& cfg) {
    std::vector<DmRow> rows;
    DmOptions opt;
    opt.h = cfg.horizon;
    for (const auto& c : cfg.commodities)
        for (const auto& pair : cfg.dm_pairs) {
            if (!cfg.has_model(pair.comparison) || !cfg.has_model(pair.reference)) continue;
            rows.push_back(in_stage("dm", c.name, [&] {
                DmRow row{c.name, pair.comparison, pair.reference, {}, false};
                const auto a = load_predictions(cfg, c.name, pair.comparison);
                const auto b = load_predictions(cfg, c.name, pair.reference);
                try {
                    row.result = dm_compare(a, b, opt);
                } catch (const IndistinguishableError&) {
                    row.indistinguishable = true;
                    row.result.h = opt.h;
                    row.result.n = a.size();
                    row.result.nw_lag = opt.h - 1;
                }
                return row;
            }));
        }
    return rows;
}

inline std::vector<DiagnosticsRow> collect_diagnostics(const RunConfig& cfg) {
    std::vector<DiagnosticsRow> rows;
    for (const auto& c : cfg.commodities)
        rows.push_back(in_stage("report", c.name, [&] {
            const auto body = read_artifact(ArtifactLayout{cfg.output}.diagnostics(c.name), cfg.hash());
            const auto lines = csv::lines(body);
            if (lines.size() != 2 || lines[0] != DiagnosticsRow::header) throw DataError("malformed diagnostics artifact");
            return DiagnosticsRow::from_csv(lines[1]);
        }));
    return rows;
}

inline BenchmarkReport collect_report(const RunConfig& cfg) {
    BenchmarkReport r;
    for (const auto& c : cfg.commodities) r.commodities.push_back(c.name);
    r.models = cfg.models;
    r.diagnostics = collect_diagnostics(cfg);
    r.metrics = collect_metrics(cfg);
    r.dm = collect_dm(cfg);
    r.provenance.seed = cfg.seed;
    r.provenance.config_hash = cfg.hash();
    return r;
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

inline std::string metrics_csv(const BenchmarkReport& r) {
    std::string out = "commodity,model,mae,rmse,mape,n,skipped_zero_targets\n";
    for (const auto& m : r.metrics)
        out += m.commodity + "," + to_string(m.model) + "," + csv::fmt(m.metrics.mae) + "," + csv::fmt(m.metrics.rmse) +
               "," + csv::fmt(m.metrics.mape) + "," + std::to_string(m.metrics.n) + "," +
               std::to_string(m.metrics.skipped_zero_targets) + "\n";
    return out;
}

inline std::string diagnostics_csv(const BenchmarkReport& r) {
    std::string out = std::string(DiagnosticsRow::header) + "\n";
    for (const auto& d : r.diagnostics) out += d.to_csv() + "\n";
    return out;
}

inline std::string dm_csv(const BenchmarkReport& r) {
    std::string out = "commodity,comparison,reference,statistic,p_value,n,h,nw_lag,fallback,better,indistinguishable\n";
    for (const auto& d : r.dm) {
        const std::string better =
            d.indistinguishable ? "none" : to_string(d.result.a_better ? d.comparison : d.reference);
        out += d.commodity + "," + to_string(d.comparison) + "," + to_string(d.reference) + "," +
               csv::fmt(d.result.statistic) + "," + csv::fmt(d.result.p_value) + "," + std::to_string(d.result.n) + "," +
               std::to_string(d.result.h) + "," + std::to_string(d.result.nw_lag) + "," +
               (d.result.used_fallback ? "true" : "false") + "," + better + "," +
               (d.indistinguishable ? "true" : "false") + "\n";
    }
    return out;
}

namespace detail {

inline std::string pad(std::string s, std::size_t width) {
    if (s.size() < width) s.append(width - s.size(), ' ');
    return s;
}

inline std::string lpad(std::string s, std::size_t width) {
    if (s.size() < width) s.insert(0, width - s.size(), ' ');
    return s;
}

}  // namespace detail

/// Plain-text tables. Per commodity and metric, '*' marks the best model
/// overall and '^' the best neural model; the trailing columns list the same
/// flags by name.
inline std::string summary_text(const BenchmarkReport& r) {
    using detail::lpad;
    using detail::pad;
    std::string out = "agribench summary\n";
    out += "config_hash " + r.provenance.config_hash + "\nseed " + std::to_string(r.provenance.seed) + "\n";
    if (!r.provenance.started.empty()) out += "started " + r.provenance.started + "\n";
    if (!r.provenance.finished.empty()) out += "finished " + r.provenance.finished + "\n";

    out += "\nDiagnostics\n";
    out += pad("commodity", 16) + lpad("ADF p", 9) + lpad("min", 9) + lpad("max", 9) + lpad("mean", 9) + lpad("std", 9) +
           lpad("stationary", 12) + lpad("R/S", 8) + "\n";
    for (const auto& d : r.diagnostics)
        out += pad(d.commodity, 16) + lpad(csv::fixed(d.adf_p, 3), 9) + lpad(csv::fixed(d.min, 1), 9) +
               lpad(csv::fixed(d.max, 1), 9) + lpad(csv::fixed(d.mean, 1), 9) + lpad(csv::fixed(d.std, 1), 9) +
               lpad(d.stationary ? "yes" : "no", 12) + lpad(csv::fixed(d.rs_ratio, 2), 8) + "\n";

    out += "\nForecast accuracy (* best overall, ^ best neural model)\n";
    const char* names[3] = {"mae", "rmse", "mape"};
    const auto value = [](const MetricReport& m, int k) { return k == 0 ? m.mae : k == 1 ? m.rmse : m.mape; };
    for (const auto& c : r.commodities) {
        std::vector<const MetricRow*> rows;
        for (const auto& m : r.metrics)
            if (m.commodity == c) rows.push_back(&m);
        std::vector<std::vector<std::string>> flags(rows.size(), std::vector<std::string>(2));
        std::vector<std::vector<char>> marks(rows.size(), std::vector<char>(3, ' '));
        for (int k = 0; k < 3; ++k) {
            std::optional<std::size_t> best, best_neural;
            for (std::size_t i = 0; i < rows.size(); ++i) {
                const double v = value(rows[i]->metrics, k);
                if (std::isnan(v)) continue;
                if (!best || v < value(rows[*best]->metrics, k)) best = i;
                if (is_neural(rows[i]->model) && (!best_neural || v < value(rows[*best_neural]->metrics, k)))
                    best_neural = i;
            }
            const auto tag = [&](std::size_t i, std::size_t slot) {
                flags[i][slot] += (flags[i][slot].empty() ? "" : ",") + std::string(names[k]);
            };
            if (best_neural) {
                marks[*best_neural][k] = '^';
                tag(*best_neural, 1);
            }
            if (best) {
                marks[*best][k] = '*';
                tag(*best, 0);
            }
        }
        out += "\n" + c + "\n";
        out += pad("model", 18) + lpad("MAE", 12) + lpad("RMSE", 12) + lpad("MAPE(%)", 12) + "  flags\n";
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto& m = rows[i]->metrics;
            std::string line = pad(to_string(rows[i]->model), 18);
            for (int k = 0; k < 3; ++k) {
                const double v = value(m, k);
                line += lpad((std::isnan(v) ? std::string("n/a") : csv::fixed(v, 4)) + marks[i][k], 12);
            }
            line += "  ";
            if (!flags[i][0].empty()) line += "best=" + flags[i][0] + " ";
            if (!flags[i][1].empty()) line += "best_neural=" + flags[i][1];
            while (!line.empty() && line.back() == ' ') line.pop_back();
            out += line + "\n";
        }
    }

    if (!r.dm.empty()) {
        out += "\nDiebold-Mariano (HLN corrected, squared loss; positive favours the comparison model)\n";
        out += pad("commodity", 16) + pad("comparison", 18) + pad("reference", 14) + lpad("DM", 10) + lpad("p", 10) +
               "  better\n";
        for (const auto& d : r.dm) {
            std::string stat = d.indistinguishable ? "n/a" : csv::fixed(d.result.statistic, 3);
            if (d.result.used_fallback) stat += "†";
            out += pad(d.commodity, 16) + pad(to_string(d.comparison), 18) + pad(to_string(d.reference), 14) +
                   lpad(stat, d.result.used_fallback ? 12 : 10) + lpad(csv::fixed(d.result.p_value, 4), 10) + "  " +
                   (d.indistinguishable ? "identical losses" : to_string(d.result.a_better ? d.comparison : d.reference)) +
                   "\n";
        }
        out += "\n† Newey-West variance was not positive; the plain variance of the loss differential was used.\n";
        out +=
            "Note: consecutive test windows start one stride apart, so with a stride shorter than the horizon they\n"
            "forecast many of the same days and their errors are strongly dependent. The long-run variance only\n"
            "looks h-1 lags back, which covers dependence inside one horizon but not all of the overlap, so the\n"
            "number of truly independent comparisons is smaller than n. Borderline p-values deserve caution.\n";
    }
    return out;
}

inline std::string provenance_text(const Provenance& p) {
    return "seed " + std::to_string(p.seed) + "\nconfig_hash " + p.config_hash + "\nstarted " + p.started + "\nfinished " +
           p.finished + "\n";
}

inline void write_metrics(const BenchmarkReport& r, const std::filesystem::path& dir) {
    write_artifact(ArtifactLayout{dir}.metrics(), r.provenance.config_hash, metrics_csv(r));
}

inline void write_dm(const BenchmarkReport& r, const std::filesystem::path& dir) {
    write_artifact(ArtifactLayout{dir}.dm(), r.provenance.config_hash, dm_csv(r));
}

/// Writes metrics.csv, diagnostics.csv, dm.csv, summary.txt and
/// provenance.txt. Timestamps appear only in the last two.
inline void emit_tables(const BenchmarkReport& r, const std::filesystem::path& dir) {
    r.validate();
    const ArtifactLayout out{dir};
    const auto& hash = r.provenance.config_hash;
    write_metrics(r, dir);
    write_artifact(out.diagnostics_table(), hash, diagnostics_csv(r));
    write_dm(r, dir);
    write_artifact(out.summary(), hash, summary_text(r));
    write_artifact(out.provenance(), hash, provenance_text(r.provenance));
}

// ---------------------------------------------------------------------------
// Whole pipeline
// ---------------------------------------------------------------------------

inline void diagnose(const RunConfig& cfg, const PipelineOptions& opt = {}) {
    StageLog log(opt.log);
    for_each_commodity(cfg, opt.jobs, [&](const CommoditySource& c) {
        const auto d = diagnose_commodity(cfg, c.name);
        log("diagnose " + c.name + ": ADF p " + csv::fixed(d.adf_p, 3) + ", R/S " + csv::fixed(d.rs_ratio, 2));
    });
}

inline void train_all(const RunConfig& cfg, const PipelineOptions& opt = {}) {
    StageLog log(opt.log);
    for_each_commodity(cfg, opt.jobs, [&](const CommoditySource& c) { train_commodity(cfg, c.name, log); });
}

inline void predict_all(const RunConfig& cfg, const PipelineOptions& opt = {}) {
    StageLog log(opt.log);
    for_each_commodity(cfg, opt.jobs, [&](const CommoditySource& c) { predict_commodity(cfg, c.name, log); });
}

/// Runs every stage in order and writes all tables. Artifacts from completed
/// stages stay on disk if a later stage fails.
inline BenchmarkReport run_pipeline(const RunConfig& cfg, const PipelineOptions& opt = {}) {
    cfg.validate();
    const std::string started = utc_timestamp();
    StageLog log(opt.log);
    ingest(cfg, opt);
    for_each_commodity(cfg, opt.jobs, [&](const CommoditySource& c) {
        const auto d = diagnose_commodity(cfg, c.name);
        log("diagnose " + c.name + ": ADF p " + csv::fixed(d.adf_p, 3) + ", R/S " + csv::fixed(d.rs_ratio, 2));
        train_commodity(cfg, c.name, log);
        predict_commodity(cfg, c.name, log);
    });
    auto report = collect_report(cfg);
    report.provenance.started = started;
    report.provenance.finished = utc_timestamp();
    emit_tables(report, cfg.output);
    return report;
}

}  // namespace agribench
