#pragma once

// Run configuration. Grammar (one statement per line):
//
//   file     := { line }
//   line     := blank | comment | section | entry
//   comment  := '#' text            (also ';')
//   section  := '[' name ']'        name in {run, data, columns, dropout}
//   entry    := key '=' value       surrounding whitespace trimmed
//
// Lists are whitespace separated. Unknown sections or keys, duplicate keys and
// entries before the first section are errors. Relative data paths resolve
// against the config file's directory.
//
//   [run]      seed, output, split (three fractions), seq_len, horizon,
//              stride, models, stl_period, max_epochs, zero_prices
//              (keep | interpolate), mape_zero (skip | epsilon),
//              mape_epsilon, dm_pairs (comparison:reference ...)
//   [data]     <commodity> = <csv path>
//   [columns]  date, min, max, mid (setting mid selects the mid-only form)
//   [dropout]  default = <p>, <commodity> = <p>

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "agribench/core_data.hpp"
#include "agribench/csv.hpp"
#include "agribench/error.hpp"
#include "agribench/evaluation.hpp"
#include "agribench/hash.hpp"
#include "agribench/models/neural.hpp"

namespace agribench {

struct CommoditySource {
    std::string name;
    std::filesystem::path path;
};

struct ModelPair {
    ModelKind comparison = ModelKind::t2v_transformer;
    ModelKind reference = ModelKind::transformer;
};

enum class ZeroPricePolicy { keep, interpolate };

struct RunConfig {
    std::vector<CommoditySource> commodities;
    ColumnSchema columns;
    std::array<double, 3> split{0.8, 0.1, 0.1};
    std::size_t seq_len = 90;
    std::size_t horizon = 14;
    std::size_t stride = 1;
    std::vector<ModelKind> models{ModelKind::naive, ModelKind::sarima, ModelKind::bilstm, ModelKind::transformer,
                                  ModelKind::t2v_transformer};
    std::vector<ModelPair> dm_pairs{ModelPair{}};
    double default_dropout = 0.1;
    std::map<std::string, double> dropout{{"green_chilli", 0.3}, {"sweet_pumpkin", 0.3}};
    std::uint64_t seed = 42;
    std::filesystem::path output = "agribench_out";
    std::size_t stl_period = 365;
    std::size_t max_epochs = 150;
    ZeroPricePolicy zero_prices = ZeroPricePolicy::keep;
    MetricOptions mape;

    double dropout_for(const std::string& commodity) const {
        const auto it = dropout.find(commodity);
        return it == dropout.end() ? default_dropout : it->second;
    }

    bool has_model(ModelKind k) const { return std::find(models.begin(), models.end(), k) != models.end(); }

    /// Throws ConfigError for inconsistent settings; with check_files, also
    /// for data files that do not exist.
    void validate(bool check_files = true) const {
        if (std::abs(split[0] + split[1] + split[2] - 1.0) > 1e-9) throw ConfigError("config: split fractions must sum to 1");
        for (double f : split)
            if (!(f > 0.0)) throw ConfigError("config: split fractions must be positive");
        if (seq_len == 0 || horizon == 0 || stride == 0) throw ConfigError("config: seq_len, horizon and stride must be positive");
        if (models.empty()) throw ConfigError("config: no models selected");
        if (commodities.empty()) throw ConfigError("config: no commodities in [data]");
        if (stl_period < 2) throw ConfigError("config: stl_period must be at least 2");
        if (max_epochs == 0) throw ConfigError("config: max_epochs must be positive");
        if (!(mape.epsilon > 0.0)) throw ConfigError("config: mape_epsilon must be positive");
        const auto check_p = [](double p) {
            if (!(p >= 0.0 && p < 1.0)) throw ConfigError("config: dropout must be in [0, 1)");
        };
        check_p(default_dropout);
        for (const auto& [name, p] : dropout) check_p(p);
        for (std::size_t i = 0; i < commodities.size(); ++i) {
            const auto& c = commodities[i];
            if (c.name.empty() || c.name.find_first_of("/\\ ,") != std::string::npos)
                throw ConfigError("config: invalid commodity name '" + c.name + "'");
            for (std::size_t j = 0; j < i; ++j)
                if (commodities[j].name == c.name) throw ConfigError("config: duplicate commodity " + c.name);
            if (check_files && !std::filesystem::is_regular_file(c.path))
                throw ConfigError("config: data file for " + c.name + " not found: " + c.path.string());
        }
        for (std::size_t i = 0; i < models.size(); ++i)
            for (std::size_t j = 0; j < i; ++j)
                if (models[i] == models[j]) throw ConfigError("config: model listed twice: " + to_string(models[i]));
        for (const auto& p : dm_pairs)
            if (p.comparison == p.reference) throw ConfigError("config: dm pair compares a model with itself");
    }

    /// Normalized text of every setting; the config hash is taken over this,
    /// so comments and layout do not change it.
    std::string canonical() const {
        std::string s = "[run]\n";
        s += "seed=" + std::to_string(seed) + "\n";
        s += "split=" + csv::fmt(split[0]) + " " + csv::fmt(split[1]) + " " + csv::fmt(split[2]) + "\n";
        s += "seq_len=" + std::to_string(seq_len) + "\nhorizon=" + std::to_string(horizon) + "\nstride=" +
             std::to_string(stride) + "\n";
        s += "models=";
        for (auto m : models) s += to_string(m) + " ";
        s += "\ndm_pairs=";
        for (const auto& p : dm_pairs) s += to_string(p.comparison) + ":" + to_string(p.reference) + " ";
        s += "\nstl_period=" + std::to_string(stl_period) + "\nmax_epochs=" + std::to_string(max_epochs) + "\n";
        s += std::string("zero_prices=") + (zero_prices == ZeroPricePolicy::keep ? "keep" : "interpolate") + "\n";
        s += std::string("mape_zero=") + (mape.zero_targets == ZeroTargetPolicy::skip ? "skip" : "epsilon") +
             "\nmape_epsilon=" + csv::fmt(mape.epsilon) + "\n[data]\n";
        for (const auto& c : commodities) s += c.name + "=" + c.path.filename().string() + "\n";
        s += "[columns]\ndate=" + columns.date + "\nmin=" + columns.min + "\nmax=" + columns.max + "\nmid=" + columns.mid +
             "\n[dropout]\ndefault=" + csv::fmt(default_dropout) + "\n";
        for (const auto& [name, p] : dropout) s += name + "=" + csv::fmt(p) + "\n";
        return s;
    }

    std::string hash() const { return fnv1a_hex(canonical()); }
};

namespace detail {

inline std::vector<std::string> words(std::string_view v) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < v.size()) {
        while (i < v.size() && std::isspace(static_cast<unsigned char>(v[i]))) ++i;
        std::size_t j = i;
        while (j < v.size() && !std::isspace(static_cast<unsigned char>(v[j]))) ++j;
        if (j > i) out.emplace_back(v.substr(i, j - i));
        i = j;
    }
    return out;
}

inline std::size_t config_count(std::string_view key, std::string_view v) {
    const auto n = csv::parse_int(v);
    if (!n || *n < 0) throw ConfigError("config: " + std::string(key) + " must be a nonnegative integer");
    return static_cast<std::size_t>(*n);
}

inline double config_real(std::string_view key, std::string_view v) {
    const auto x = csv::parse_double(v);
    if (!x) throw ConfigError("config: " + std::string(key) + " must be a number");
    return *x;
}

}  // namespace detail

inline RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {}) {
    RunConfig cfg;
    cfg.commodities.clear();
    std::string section;
    std::map<std::string, bool> seen;
    std::size_t line_no = 0;
    for (const auto raw : csv::lines(text, false)) {
        ++line_no;
        const auto line = csv::trim(raw);
        if (line.empty() || line.front() == '#' || line.front() == ';') continue;
        const std::string where = " (line " + std::to_string(line_no) + ")";
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("config: malformed section header" + where);
            section = std::string(csv::trim(line.substr(1, line.size() - 2)));
            if (section != "run" && section != "data" && section != "columns" && section != "dropout")
                throw ConfigError("config: unknown section [" + section + "]" + where);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ConfigError("config: expected key = value" + where);
        if (section.empty()) throw ConfigError("config: entry before any section" + where);
        const std::string key(csv::trim(line.substr(0, eq)));
        const std::string_view value = csv::trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config: empty key" + where);
        if (seen[section + "." + key]) throw ConfigError("config: duplicate key " + key + where);
        seen[section + "." + key] = true;

        if (section == "data") {
            std::filesystem::path p{std::string(value)};
            if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
            cfg.commodities.push_back({key, p});
        } else if (section == "dropout") {
            const double p = detail::config_real(key, value);
            if (key == "default")
                cfg.default_dropout = p;
            else
                cfg.dropout[key] = p;
        } else if (section == "columns") {
            if (key == "date") cfg.columns.date = value;
            else if (key == "min") cfg.columns.min = value;
            else if (key == "max") cfg.columns.max = value;
            else if (key == "mid") cfg.columns.mid = value;
            else throw ConfigError("config: unknown key " + key + " in [columns]" + where);
        } else if (key == "seed") {
            cfg.seed = detail::config_count(key, value);
        } else if (key == "output") {
            cfg.output = std::string(value);
            if (cfg.output.is_relative() && !base_dir.empty()) cfg.output = base_dir / cfg.output;
        } else if (key == "split") {
            const auto w = detail::words(value);
            if (w.size() != 3) throw ConfigError("config: split needs three fractions" + where);
            for (std::size_t i = 0; i < 3; ++i) cfg.split[i] = detail::config_real(key, w[i]);
        } else if (key == "seq_len") {
            cfg.seq_len = detail::config_count(key, value);
        } else if (key == "horizon") {
            cfg.horizon = detail::config_count(key, value);
        } else if (key == "stride") {
            cfg.stride = detail::config_count(key, value);
        } else if (key == "stl_period") {
            cfg.stl_period = detail::config_count(key, value);
        } else if (key == "max_epochs") {
            cfg.max_epochs = detail::config_count(key, value);
        } else if (key == "models") {
            cfg.models.clear();
            for (const auto& w : detail::words(value)) cfg.models.push_back(parse_model_kind(w));
        } else if (key == "dm_pairs") {
            cfg.dm_pairs.clear();
            for (const auto& w : detail::words(value)) {
                const auto colon = w.find(':');
                if (colon == std::string::npos) throw ConfigError("config: dm pair must be comparison:reference" + where);
                cfg.dm_pairs.push_back({parse_model_kind(w.substr(0, colon)), parse_model_kind(w.substr(colon + 1))});
            }
        } else if (key == "zero_prices") {
            if (value == "keep") cfg.zero_prices = ZeroPricePolicy::keep;
            else if (value == "interpolate") cfg.zero_prices = ZeroPricePolicy::interpolate;
            else throw ConfigError("config: zero_prices must be keep or interpolate" + where);
        } else if (key == "mape_zero") {
            if (value == "skip") cfg.mape.zero_targets = ZeroTargetPolicy::skip;
            else if (value == "epsilon") cfg.mape.zero_targets = ZeroTargetPolicy::epsilon;
            else throw ConfigError("config: mape_zero must be skip or epsilon" + where);
        } else if (key == "mape_epsilon") {
            cfg.mape.epsilon = detail::config_real(key, value);
        } else {
            throw ConfigError("config: unknown key " + key + " in [run]" + where);
        }
    }
    return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    if (!std::filesystem::is_regular_file(path)) throw ConfigError("config file not found: " + path.string());
    return parse_config(csv::read_file(path), path.parent_path());
}

}  // namespace agribench
