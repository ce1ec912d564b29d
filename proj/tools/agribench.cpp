// agribench command-line driver. See README.md for the subcommands.

#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "agribench/autodiff.hpp"
#include "agribench/config.hpp"
#include "agribench/error.hpp"
#include "agribench/pipeline.hpp"

using namespace agribench;

namespace {

struct Common {
    std::string config;
    std::size_t jobs = 1;
    bool quiet = false;

    RunConfig load() const {
        auto cfg = load_config(config);
        cfg.validate();
        return cfg;
    }
    PipelineOptions options() const { return {jobs, quiet ? nullptr : &std::cerr}; }
};

void add_common(CLI::App* cmd, Common& c, bool config_required = true) {
    auto* opt = cmd->add_option("-c,--config", c.config, "Run configuration file");
    if (config_required) opt->required();
    cmd->add_option("-j,--jobs", c.jobs, "Commodities processed in parallel")->check(CLI::PositiveNumber);
    cmd->add_flag("-q,--quiet", c.quiet, "Suppress progress lines");
}

void print_dm(const DmResult& r) {
    std::cout << "statistic " << csv::fmt(r.statistic) << "\np_value " << csv::fmt(r.p_value) << "\nn " << r.n
              << "\nh " << r.h << "\nnw_lag " << r.nw_lag << "\nfallback " << (r.used_fallback ? "true" : "false")
              << "\nbetter " << (r.a_better ? "first" : "second") << "\n";
}

int run(int argc, char** argv) {
    CLI::App app{"Agricultural price forecasting benchmark"};
    app.require_subcommand(1);
    Common common;

    auto* ingest_cmd = app.add_subcommand("ingest", "Parse, gap-fill and validate the price files");
    auto* diagnose_cmd = app.add_subcommand("diagnose", "ADF test and STL residual/seasonal ratio per commodity");
    auto* train_cmd = app.add_subcommand("train", "Fit every selected model");
    auto* predict_cmd = app.add_subcommand("predict", "Forecast the test windows with the trained models");
    auto* evaluate_cmd = app.add_subcommand("evaluate", "Write metrics.csv from cached predictions");
    auto* dm_cmd = app.add_subcommand("dm", "Diebold-Mariano tests from the config or two prediction files");
    auto* report_cmd = app.add_subcommand("report", "Write every table and summary.txt from cached artifacts");
    auto* all_cmd = app.add_subcommand("all", "Run every stage in order");
    for (auto* cmd : {ingest_cmd, diagnose_cmd, train_cmd, predict_cmd, evaluate_cmd, report_cmd, all_cmd})
        add_common(cmd, common);
    add_common(dm_cmd, common, false);

    std::vector<std::string> dm_files;
    std::size_t dm_h = 14;
    std::optional<std::size_t> dm_lag;
    std::string dm_kernel = "truncated";
    dm_cmd->add_option("files", dm_files, "Comparison and reference prediction CSVs")->expected(2);
    dm_cmd->add_option("--horizon", dm_h, "Forecast horizon h")->check(CLI::PositiveNumber);
    dm_cmd->add_option("--lag", dm_lag, "Newey-West lag (default h-1)");
    dm_cmd->add_option("--kernel", dm_kernel, "Long-run variance weights")->check(CLI::IsMember({"truncated", "bartlett"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (*ingest_cmd) ingest(common.load(), common.options());
    if (*diagnose_cmd) diagnose(common.load(), common.options());
    if (*train_cmd) train_all(common.load(), common.options());
    if (*predict_cmd) predict_all(common.load(), common.options());
    if (*evaluate_cmd) {
        const auto cfg = common.load();
        BenchmarkReport r;
        r.metrics = collect_metrics(cfg);
        r.provenance.config_hash = cfg.hash();
        write_metrics(r, cfg.output);
    }
    if (*dm_cmd) {
        if (!dm_files.empty() == !common.config.empty())
            throw ConfigError("dm: give either --config or two prediction files");
        if (!dm_files.empty()) {
            DmOptions opt;
            opt.h = dm_h;
            opt.lag = dm_lag;
            opt.kernel = dm_kernel == "bartlett" ? HacKernel::bartlett : HacKernel::truncated;
            const auto a = ForecastTable::from_csv(csv::read_file(dm_files[0]));
            const auto b = ForecastTable::from_csv(csv::read_file(dm_files[1]));
            print_dm(dm_compare(a, b, opt));
        } else {
            const auto cfg = common.load();
            BenchmarkReport r;
            r.dm = collect_dm(cfg);
            r.provenance.config_hash = cfg.hash();
            write_dm(r, cfg.output);
        }
    }
    if (*report_cmd) {
        const auto cfg = common.load();
        auto r = collect_report(cfg);
        r.provenance.started = r.provenance.finished = utc_timestamp();
        emit_tables(r, cfg.output);
        std::cout << summary_text(r);
    }
    if (*all_cmd) {
        const auto cfg = common.load();
        std::cout << summary_text(run_pipeline(cfg, common.options()));
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    ad::tune_allocator();
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
