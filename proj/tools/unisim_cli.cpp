#include <cstdint>
#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "unisim.h"

namespace {

int finish(unisim_ctx* ctx, int status) {
    if (status != UNISIM_OK) {
        std::fprintf(stderr, "error: %s\n", unisim_last_error(ctx));
    }
    unisim_ctx_free(ctx);
    return status;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"unisim: perceptual similarity benchmark toolkit"};
    app.require_subcommand(1);

    std::string dataset, raw_dir, out_dir;
    uint64_t seed = 0;
    auto* ingest = app.add_subcommand("ingest", "Build canonical samples from raw annotations");
    ingest->add_option("--dataset", dataset, "Dataset id")->required();
    ingest->add_option("--raw", raw_dir, "Raw annotation directory")->required();
    ingest->add_option("--out", out_dir, "Output directory")->required();
    ingest->add_option("--seed", seed, "Builder seed");

    std::string config_path, backend_filter, task_filter;
    auto* eval = app.add_subcommand("eval", "Run the benchmark from a config file");
    eval->add_option("--config", config_path, "Run config JSON")->required();
    eval->add_option("--backend", backend_filter, "Only this backend id");
    eval->add_option("--task", task_filter, "Only datasets of this task");

    std::string train_config;
    auto* train = app.add_subcommand("train", "Metric fine-tuning run");
    train->add_option("--config", train_config, "Train config JSON")->required();

    std::string nafc_groups, nafc_backend = "hash:16", nafc_out = "nafc.csv";
    int n_min = 2, n_max = 8;
    uint64_t nafc_seed = 0;
    auto* nafc = app.add_subcommand("nafc", "N-way forced-choice sweep");
    nafc->add_option("--dataset", nafc_groups, "Ranked-groups annotation file")->required();
    nafc->add_option("--backend", nafc_backend, "Backend spec (vector:<d> | hash:<d>)");
    nafc->add_option("--n-min", n_min, "Smallest N");
    nafc->add_option("--n-max", n_max, "Largest N");
    nafc->add_option("--seed", nafc_seed, "Instance sampling seed");
    nafc->add_option("--out", nafc_out, "Output CSV path");

    std::string run_dir, format = "json";
    auto* report = app.add_subcommand("report", "Re-emit a finished run's report");
    report->add_option("--run", run_dir, "Run output directory")->required();
    report->add_option("--format", format, "json | csv | radar")
        ->check(CLI::IsMember({"json", "csv", "radar"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;  // usage problems are config errors
    }

    unisim_ctx* ctx = unisim_ctx_new();
    if (ingest->parsed()) {
        size_t count = 0;
        const int rc =
            unisim_ingest(ctx, dataset.c_str(), raw_dir.c_str(), out_dir.c_str(), seed, &count);
        if (rc == UNISIM_OK) std::printf("%s: %zu samples\n", dataset.c_str(), count);
        return finish(ctx, rc);
    }
    if (eval->parsed()) {
        const int rc = unisim_eval(ctx, config_path.c_str(), backend_filter.c_str(),
                                   task_filter.c_str());
        return finish(ctx, rc);
    }
    if (train->parsed()) {
        return finish(ctx, unisim_train(ctx, train_config.c_str()));
    }
    if (nafc->parsed()) {
        const int rc = unisim_nafc(ctx, nafc_groups.c_str(), nafc_backend.c_str(), n_min, n_max,
                                   nafc_seed, nafc_out.c_str());
        if (rc == UNISIM_OK) std::printf("wrote %s\n", nafc_out.c_str());
        return finish(ctx, rc);
    }
    if (report->parsed()) {
        char* rendered = nullptr;
        const int rc = unisim_report_render(ctx, run_dir.c_str(), format.c_str(), &rendered);
        if (rc == UNISIM_OK) {
            std::fputs(rendered, stdout);
            unisim_string_free(rendered);
        }
        return finish(ctx, rc);
    }
    unisim_ctx_free(ctx);
    return 2;
}
