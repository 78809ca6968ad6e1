#include "coxsub/cli.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <map>
#include <string>

namespace {

using coxsub::cli::RunConfig;

void add_common(CLI::App* cmd, RunConfig& cfg, std::string& r_spec, std::string& method) {
    cmd->add_option("--meat", cfg.meat, "Sandwich middle matrix: events or influence")
        ->transform(CLI::CheckedTransformer(
            std::map<std::string, coxsub::MeatForm>{{"events", coxsub::MeatForm::Events},
                                                    {"influence", coxsub::MeatForm::Influence}}))
        ->default_str("events");
    cmd->add_option("--r", r_spec, "Subsample size: value or start..end:step")->capture_default_str();
    cmd->add_option("--b", cfg.b, "Replicate count")->capture_default_str();
    cmd->add_option("--method", method, "uniform, cenopt, fullopt or all")->capture_default_str();
    cmd->add_option("--level", cfg.level, "Confidence level")->capture_default_str();
}

void add_input(CLI::App* cmd, RunConfig& cfg) {
    cmd->add_option("--input", cfg.input, "CSV file")->required();
    cmd->add_option("--time-col", cfg.time_col, "Observed time column")->capture_default_str();
    cmd->add_option("--status-col", cfg.status_col, "Event indicator column (1 = event)")->capture_default_str();
    cmd->add_option("--covariates", cfg.covariates, "Covariate columns; suffix :cat for categorical")
        ->delimiter(',');
    cmd->add_option("--median-fill", cfg.median_fill, "Columns whose missing cells take the column median")
        ->delimiter(',');
}

}  // namespace

int main(int argc, char** argv) {
    RunConfig cfg;
    cfg.threads = coxsub::default_threads();
    std::string r_spec = "500";
    std::string method = "fullopt";
    long long n = 0;

    CLI::App app{"Cox regression on large censored data by optimal subsampling"};
    app.set_version_flag("--version", coxsub::cli::kVersion);
    app.set_config("--config", "", "key=value file merged under command-line flags");
    app.require_subcommand(1);
    app.add_option("--seed", cfg.seed, "Master seed")->capture_default_str();
    app.add_option("--out", cfg.out, "Output directory")->capture_default_str();

    auto* simulate = app.add_subcommand("simulate", "Monte Carlo study on synthetic cohorts");
    simulate->add_option("--case", cfg.cases, "Scenario 1-4 (comma list allowed)")->delimiter(',');
    simulate->add_option("--n", n, "Cohort size");
    simulate->add_option("--baseline", cfg.baseline, "constant or linear (without --case)")->capture_default_str();
    simulate->add_option("--censoring", cfg.censoring, "Target censoring rate (without --case)")
        ->capture_default_str();
    add_common(simulate, cfg, r_spec, method);

    auto* fit = app.add_subcommand("fit", "Full-data Cox fit with Breslow baseline");
    add_input(fit, cfg);
    fit->add_flag("--lambda-variance", cfg.lambda_variance, "Also report the baseline hazard variance");

    auto* analyze = app.add_subcommand("analyze", "Repeated subsample fits against the full-data fit");
    add_input(analyze, cfg);
    add_common(analyze, cfg, r_spec, method);

    auto* generate = app.add_subcommand("generate", "Write one synthetic cohort as CSV");
    generate->add_option("--case", cfg.cases, "Scenario 1-4")->delimiter(',');
    generate->add_option("--n", n, "Cohort size");
    generate->add_option("--baseline", cfg.baseline, "constant or linear (without --case)")->capture_default_str();
    generate->add_option("--censoring", cfg.censoring, "Target censoring rate (without --case)")
        ->capture_default_str();

    for (auto* sub : {simulate, fit, analyze, generate}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? coxsub::cli::kSuccess : coxsub::cli::kUsage;
    }

    try {
        cfg.command = app.get_subcommands().front()->get_name();
        cfg.r_grid = coxsub::cli::parse_r_grid(r_spec);
        cfg.methods = coxsub::cli::parse_methods(method);
        if (n != 0) {
            if (n < 1) throw coxsub::cli::UsageError("--n must be positive");
            cfg.n = static_cast<coxsub::Index>(n);
        }
    } catch (const coxsub::cli::UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return coxsub::cli::kUsage;
    }
    return coxsub::cli::run(cfg);
}
