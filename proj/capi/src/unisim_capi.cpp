#include "unisim.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "unisim/bench.hpp"
#include "unisim/core.hpp"
#include "unisim/forge.hpp"
#include "unisim/similarity.hpp"
#include "unisim/trainer.hpp"

namespace fs = std::filesystem;

struct unisim_ctx {
    std::string last_error;
};

namespace {

int fail(unisim_ctx* ctx, int code, const std::string& msg) {
    if (ctx) ctx->last_error = msg;
    return code;
}

template <typename Fn>
int guarded(unisim_ctx* ctx, Fn&& fn) {
    if (!ctx) return UNISIM_ERR_CONFIG;
    ctx->last_error.clear();
    try {
        return fn();
    } catch (const unisim::bench::ConfigError& e) {
        return fail(ctx, UNISIM_ERR_CONFIG, e.what());
    } catch (const std::invalid_argument& e) {
        return fail(ctx, UNISIM_ERR_CONFIG, e.what());
    } catch (const std::exception& e) {
        return fail(ctx, UNISIM_ERR_RUNTIME, e.what());
    }
}

}  // namespace

extern "C" {

unisim_ctx* unisim_ctx_new(void) { return new unisim_ctx(); }

void unisim_ctx_free(unisim_ctx* ctx) { delete ctx; }

const char* unisim_last_error(const unisim_ctx* ctx) {
    return ctx ? ctx->last_error.c_str() : "";
}

const char* unisim_version(void) { return "0.1.0"; }

int unisim_ingest(unisim_ctx* ctx, const char* dataset, const char* raw_dir, const char* out_dir,
                  uint64_t seed, size_t* out_count) {
    return guarded(ctx, [&]() -> int {
        if (!dataset || !raw_dir || !out_dir) {
            return fail(ctx, UNISIM_ERR_CONFIG, "ingest: null argument");
        }
        const auto result = unisim::forge::ingest_dataset(dataset, raw_dir, out_dir, seed);
        if (out_count) *out_count = result.count;
        return UNISIM_OK;
    });
}

int unisim_eval(unisim_ctx* ctx, const char* config_path, const char* backend_filter,
                const char* task_filter) {
    return guarded(ctx, [&]() -> int {
        if (!config_path) return fail(ctx, UNISIM_ERR_CONFIG, "eval: null config path");
        auto config = unisim::bench::run_config_from_file(config_path);
        if (backend_filter && *backend_filter) {
            std::erase_if(config.backends,
                          [&](const auto& b) { return b.id != backend_filter; });
            if (config.backends.empty()) {
                return fail(ctx, UNISIM_ERR_CONFIG,
                            std::string("no backend matches filter: ") + backend_filter);
            }
        }
        if (task_filter && *task_filter) {
            std::erase_if(config.datasets,
                          [&](const auto& d) { return d.task != task_filter; });
            if (config.datasets.empty()) {
                return fail(ctx, UNISIM_ERR_CONFIG,
                            std::string("no dataset matches task filter: ") + task_filter);
            }
        }
        const auto report = unisim::bench::run_benchmark(config);
        if (!report.errors.empty()) {
            std::string joined;
            for (const auto& e : report.errors) joined += e + "\n";
            return fail(ctx, UNISIM_ERR_PARTIAL, "partial failures:\n" + joined);
        }
        return UNISIM_OK;
    });
}

int unisim_train(unisim_ctx* ctx, const char* config_path) {
    return guarded(ctx, [&]() -> int {
        if (!config_path) return fail(ctx, UNISIM_ERR_CONFIG, "train: null config path");
        auto cfg = unisim::trainer::train_config_from_file(config_path);

        std::ifstream in(config_path);
        nlohmann::json j;
        in >> j;
        if (!j.contains("tasks") || !j["tasks"].is_array() || j["tasks"].empty()) {
            return fail(ctx, UNISIM_ERR_CONFIG, "train config needs a non-empty 'tasks' array");
        }
        if (cfg.total_steps <= 0) {
            return fail(ctx, UNISIM_ERR_CONFIG, "train config needs total_steps > 0");
        }
        const std::string out_dir = j.value("out_dir", std::string("train_out"));
        const int feature_dim = j.value("feature_dim", 16);
        const int embed_dim = j.value("embed_dim", 16);

        std::vector<std::vector<unisim::TripletSample>> pools;
        for (const auto& path : j["tasks"]) {
            pools.push_back(unisim::read_triplet_file(path.get<std::string>()));
        }
        unisim::trainer::ToyDualEncoder enc(feature_dim, embed_dim, cfg);
        const auto result = unisim::trainer::fit(enc, std::move(pools), cfg);
        unisim::trainer::save_checkpoint(out_dir, result, cfg);
        return UNISIM_OK;
    });
}

int unisim_nafc(unisim_ctx* ctx, const char* groups_path, const char* backend_spec, int n_min,
                int n_max, uint64_t seed, const char* out_csv) {
    return guarded(ctx, [&]() -> int {
        if (!groups_path || !backend_spec || !out_csv) {
            return fail(ctx, UNISIM_ERR_CONFIG, "nafc: null argument");
        }
        if (n_min < 2 || n_max < n_min) {
            return fail(ctx, UNISIM_ERR_CONFIG, "nafc: need 2 <= n_min <= n_max");
        }
        const auto groups = unisim::forge::load_ranked_groups(groups_path);
        auto backend = unisim::backends::make_encoder(backend_spec);
        const std::string cache_dir = (fs::temp_directory_path() / "unisim-cache").string();
        unisim::backends::EmbeddingCache cache(cache_dir);
        const auto points = unisim::bench::eval_nafc(
            groups, unisim::bench::encoder_nafc_decider(*backend, cache), n_min, n_max, seed);

        std::ofstream out(out_csv, std::ios::binary);
        if (!out) return fail(ctx, UNISIM_ERR_RUNTIME, std::string("cannot write ") + out_csv);
        out << "n,accuracy,instances,skipped_groups\n";
        for (const auto& p : points) {
            out << p.n << ',' << p.accuracy << ',' << p.instances << ',' << p.skipped_groups
                << '\n';
        }
        return UNISIM_OK;
    });
}

int unisim_report_render(unisim_ctx* ctx, const char* run_dir, const char* format, char** out) {
    return guarded(ctx, [&]() -> int {
        if (!run_dir || !format || !out) {
            return fail(ctx, UNISIM_ERR_CONFIG, "report: null argument");
        }
        const fs::path report_path = fs::path(run_dir) / "report.json";
        if (!fs::exists(report_path)) {
            return fail(ctx, UNISIM_ERR_CONFIG, "no report.json under " + std::string(run_dir));
        }
        const std::string fmt = format;
        std::string rendered;
        if (fmt == "json") {
            std::ifstream in(report_path, std::ios::binary);
            std::stringstream buf;
            buf << in.rdbuf();
            rendered = buf.str();
        } else if (fmt == "csv" || fmt == "radar") {
            const auto report = unisim::bench::load_report_json(report_path.string());
            const fs::path tmp =
                fs::temp_directory_path() / ("unisim-render-" + std::to_string(getpid()));
            if (fmt == "csv") {
                unisim::bench::write_report_csv(report, tmp.string());
            } else {
                unisim::bench::write_radar_csv(report, tmp.string());
            }
            std::ifstream in(tmp, std::ios::binary);
            std::stringstream buf;
            buf << in.rdbuf();
            rendered = buf.str();
            fs::remove(tmp);
        } else {
            return fail(ctx, UNISIM_ERR_CONFIG, "unknown report format: " + fmt);
        }
        *out = static_cast<char*>(std::malloc(rendered.size() + 1));
        std::memcpy(*out, rendered.c_str(), rendered.size() + 1);
        return UNISIM_OK;
    });
}

void unisim_string_free(char* s) { std::free(s); }

int unisim_cosine(const double* u, const double* v, size_t dim, double* out) {
    if (!u || !v || !out || dim == 0) return UNISIM_ERR_CONFIG;
    try {
        *out = unisim::sim::cosine_sim({u, dim}, {v, dim});
        return UNISIM_OK;
    } catch (const std::exception&) {
        return UNISIM_ERR_RUNTIME;
    }
}

int unisim_hinge_loss(double s0, double s1, int y, double mu, double* out) {
    if (!out || (y != 0 && y != 1) || mu < 0) return UNISIM_ERR_CONFIG;
    *out = unisim::trainer::hinge_loss(s0, s1, y, mu);
    return UNISIM_OK;
}

int unisim_decide_nafc(const double* scores, size_t n, int* out_index) {
    if (!scores || !out_index || n < 2) return UNISIM_ERR_CONFIG;
    try {
        *out_index = unisim::sim::decide_nafc({scores, n});
        return UNISIM_OK;
    } catch (const std::exception&) {
        return UNISIM_ERR_RUNTIME;
    }
}

}  // extern "C"
