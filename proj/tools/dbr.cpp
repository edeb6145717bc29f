#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dbr/common.hpp"
#include "dbr/config.hpp"
#include "dbr/pipeline.hpp"

namespace {

dbr::Config build_config(const std::string& config_path, const std::vector<std::string>& overrides) {
    dbr::Config cfg;
    if (!config_path.empty()) cfg = dbr::load_config_file(config_path);
    for (const std::string& assignment : overrides) dbr::apply_override(cfg, assignment);
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dbr: shortcut-token identification, soft masking, and divergence-regularized "
                 "debiased training on synthetic shortcut corpora"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    bool force = false;
    bool quiet = false;
    app.add_option("--config", config_path, "config file (sectioned key=value format)")
        ->check(CLI::ExistingFile);
    app.add_option("--set", overrides, "override one key, e.g. --set training.lambda=2.0");
    app.add_flag("--force", force, "re-execute even when artifacts are up to date / inputs mismatch");
    app.add_flag("--quiet", quiet, "suppress progress output");

    app.add_subcommand("run", "all stages in order, then the report")->fallthrough();
    for (dbr::StageId id : dbr::all_stages()) {
        static const char* kDesc[] = {
            "generate the synthetic corpora and vocabulary",
            "train the identification classifier (plain cross-entropy)",
            "rank tokens by path-integrated gradients and pick the top ones",
            "fit the bias-only classifier and compute shortcut-degree profiles",
            "train the debiased classifier with the selected loss variant",
            "accuracy/confidence metrics for both models on dev and ood",
            "LMI table, confidence histograms, heatmaps, and loss curves",
        };
        app.add_subcommand(dbr::stage_name(id), kDesc[static_cast<int>(id)])->fallthrough();
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // usage problems are config errors
    }

    try {
        dbr::Config cfg = build_config(config_path, overrides);
        const std::string dir = dbr::resolve_run_dir(cfg.run_dir);
        dbr::Pipeline pipeline(cfg, dir);

        dbr::PipelineOptions opts;
        opts.force = force;
        opts.quiet = quiet;

        if (app.got_subcommand("run")) {
            opts.strict_inputs = false;  // out-of-date stages just re-execute
            dbr::RunLock lock(pipeline.run_dir());
            pipeline.run_all(opts);
            return 0;
        }
        for (dbr::StageId id : dbr::all_stages()) {
            if (!app.got_subcommand(dbr::stage_name(id))) continue;
            opts.strict_inputs = true;  // refuse stale recorded inputs unless --force
            dbr::RunLock lock(pipeline.run_dir());
            pipeline.write_config_snapshot();
            pipeline.run_stage(id, opts);
            return 0;
        }
        std::cerr << "error: no subcommand selected\n";
        return 2;
    } catch (const dbr::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const dbr::StaleArtifactError& e) {
        std::cerr << "stale artifact: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
