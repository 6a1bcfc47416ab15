#include "unisim/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace unisim::bench {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

EvalOutcome eval_2afc(const std::vector<TripletSample>& samples, const TripletDecider& decide) {
    if (samples.empty()) throw std::invalid_argument("eval_2afc: empty sample set");
    EvalOutcome out;
    out.count = samples.size();
    size_t correct = 0;
    for (const auto& s : samples) {
        const auto choice = decide(s);
        if (!choice) {
            ++out.unparseable;
            continue;
        }
        if (*choice == s.label) ++correct;
    }
    out.accuracy = static_cast<double>(correct) / out.count;
    return out;
}

EvalOutcome eval_ooo(const std::vector<OddOneOutSample>& samples, const OooDecider& decide) {
    if (samples.empty()) throw std::invalid_argument("eval_ooo: empty sample set");
    EvalOutcome out;
    out.count = samples.size();
    size_t correct = 0;
    for (const auto& s : samples) {
        const auto choice = decide(s);
        if (!choice) {
            ++out.unparseable;
            continue;
        }
        if (*choice == s.odd_index) ++correct;
    }
    out.accuracy = static_cast<double>(correct) / out.count;
    return out;
}

TripletDecider encoder_decider(backends::EncoderBackend& backend, backends::EmbeddingCache& cache,
                               backends::IqaScoringMode mode, double tau, sim::TiePolicy tie) {
    return [&backend, &cache, mode, tau, tie](const TripletSample& s) -> std::optional<int> {
        const auto [s0, s1] = backends::score_sample_encoder(backend, cache, s, mode, tau);
        return sim::decide_2afc(s0, s1, tie);
    };
}

OooDecider encoder_ooo_decider(backends::EncoderBackend& backend,
                               backends::EmbeddingCache& cache) {
    return [&backend, &cache](const OddOneOutSample& s) -> std::optional<int> {
        std::vector<EmbeddingRecord> embs;
        for (int i = 0; i < 3; ++i) embs.push_back(cache.get(backend, s.items[i]));
        double m[3][3];
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                m[i][j] = i == j ? 1.0
                                 : sim::cosine_sim_f(embs[i].values, embs[j].values);
            }
        }
        return sim::decide_ooo(m);
    };
}

TripletDecider generative_decider(backends::GenerativeBackend& backend) {
    return [&backend](const TripletSample& s) -> std::optional<int> {
        const auto prompt = backends::render_prompt(s);
        const std::string raw = backend.answer(prompt.instruction, prompt.images);
        return backends::parse_choice(raw, prompt.n_options);
    };
}

OooDecider generative_ooo_decider(backends::GenerativeBackend& backend) {
    return [&backend](const OddOneOutSample& s) -> std::optional<int> {
        const auto prompt = backends::render_prompt(s);
        const std::string raw = backend.answer(prompt.instruction, prompt.images);
        return backends::parse_choice(raw, prompt.n_options);
    };
}

double average_precision(const std::vector<bool>& ranked_relevance) {
    size_t hits = 0;
    double sum = 0.0;
    for (size_t i = 0; i < ranked_relevance.size(); ++i) {
        if (!ranked_relevance[i]) continue;
        ++hits;
        sum += static_cast<double>(hits) / (i + 1);
    }
    return hits == 0 ? 0.0 : sum / hits;
}

RetrievalOutcome eval_retrieval(const RetrievalSplit& split, backends::EncoderBackend& backend,
                                backends::EmbeddingCache& cache, const std::string& difficulty) {
    const auto rel_it = split.relevance.find(difficulty);
    if (rel_it == split.relevance.end()) {
        throw std::invalid_argument("unknown retrieval difficulty: " + difficulty);
    }
    const auto& per_query = rel_it->second;
    if (per_query.size() != split.queries.size()) {
        throw std::invalid_argument("relevance/query count mismatch");
    }

    std::vector<EmbeddingRecord> gallery;
    gallery.reserve(split.gallery.size());
    for (const auto& item : split.gallery) gallery.push_back(cache.get(backend, item));

    RetrievalOutcome out;
    double ap_sum = 0.0;
    for (size_t qi = 0; qi < split.queries.size(); ++qi) {
        const auto& rel = per_query[qi];
        if (rel.positives.empty()) {
            ++out.skipped_queries;
            continue;
        }
        const std::set<int> junk(rel.junk.begin(), rel.junk.end());
        const std::set<int> positives(rel.positives.begin(), rel.positives.end());
        const EmbeddingRecord q = cache.get(backend, split.queries[qi]);

        std::vector<std::pair<double, int>> scored;  // junk removed before ranking
        for (int gi = 0; gi < static_cast<int>(gallery.size()); ++gi) {
            if (junk.count(gi)) continue;
            scored.emplace_back(sim::cosine_sim_f(q.values, gallery[gi].values), gi);
        }
        std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;  // index tie-break keeps runs deterministic
        });
        std::vector<bool> relevance;
        relevance.reserve(scored.size());
        for (const auto& [score, gi] : scored) relevance.push_back(positives.count(gi) > 0);
        ap_sum += average_precision(relevance);
        ++out.evaluated_queries;
    }
    if (out.evaluated_queries == 0) {
        throw std::runtime_error("every query skipped at difficulty " + difficulty);
    }
    out.mean_ap = ap_sum / out.evaluated_queries;
    return out;
}

std::vector<NafcPoint> eval_nafc(const std::vector<forge::RankedGroup>& groups,
                                 const NafcDecider& decide, int n_min, int n_max, uint64_t seed) {
    if (n_min < 2 || n_max < n_min) throw std::invalid_argument("bad NAFC range");
    std::vector<NafcPoint> out;
    for (int n = n_min; n <= n_max; ++n) {
        NafcPoint point;
        point.n = n;
        forge::Rng rng(seed ^ (0x9e3779b97f4a7c15ULL * static_cast<uint64_t>(n)));
        const auto instances = forge::build_nafc_instances(groups, static_cast<size_t>(n), rng);
        for (const auto& g : groups) {
            if (g.entries.size() < static_cast<size_t>(n)) ++point.skipped_groups;
        }
        size_t correct = 0;
        for (const auto& inst : instances) {
            const auto choice = decide(inst);
            if (choice && *choice == inst.correct) ++correct;
        }
        point.instances = instances.size();
        point.accuracy =
            instances.empty() ? 0.0 : static_cast<double>(correct) / instances.size();
        out.push_back(point);
    }
    return out;
}

NafcDecider encoder_nafc_decider(backends::EncoderBackend& backend,
                                 backends::EmbeddingCache& cache, sim::TiePolicy tie) {
    return [&backend, &cache, tie](const forge::NafcInstance& inst) -> std::optional<int> {
        const EmbeddingRecord ref = cache.get(backend, inst.ref);
        std::vector<double> scores;
        scores.reserve(inst.candidates.size());
        for (const auto& c : inst.candidates) {
            scores.push_back(sim::cosine_sim_f(ref.values, cache.get(backend, c).values));
        }
        return sim::decide_nafc(scores, tie);
    };
}

AggregateSummary aggregate(const std::map<std::string, std::map<std::string, double>>& per_task) {
    if (per_task.empty()) throw std::invalid_argument("aggregate: no tasks");
    AggregateSummary out;
    double total = 0.0;
    for (const auto& [task, datasets] : per_task) {
        if (datasets.empty()) throw std::invalid_argument("aggregate: task without datasets");
        double sum = 0.0;
        for (const auto& [name, acc] : datasets) sum += acc;
        const double mean = sum / datasets.size();
        out.task_means[task] = mean;
        total += mean;
    }
    out.overall = total / out.task_means.size();
    return out;
}

std::string display_1dp(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    return buf;
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

RunConfig run_config_from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string raw = buf.str();

    json j;
    try {
        j = json::parse(raw);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }

    RunConfig cfg;
    cfg.config_hash = sha256_hex(raw.data(), raw.size()).substr(0, 16);
    try {
        for (const auto& b : j.at("backends")) {
            cfg.backends.push_back({b.at("id").get<std::string>(), b.at("spec").get<std::string>()});
        }
        for (const auto& d : j.at("datasets")) {
            cfg.datasets.push_back({d.at("name").get<std::string>(),
                                    d.at("task").get<std::string>(),
                                    d.at("path").get<std::string>()});
        }
        cfg.out_dir = j.value("out_dir", std::string());
        cfg.cache_dir = j.value("cache_dir", std::string());
        cfg.seed = j.value("seed", uint64_t{0});
        cfg.tie_policy = sim::tie_policy_from_string(j.value("tie_policy", "prefer_first"));
        cfg.iqa_mode_policy = j.value("iqa_mode_policy", "auto");
        cfg.tau = j.value("tau", 100.0);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config field error: ") + e.what());
    }
    if (cfg.backends.empty()) throw ConfigError("config lists no backends");
    if (cfg.datasets.empty()) throw ConfigError("config lists no datasets");
    if (cfg.iqa_mode_policy != "auto" && cfg.iqa_mode_policy != "default_ref" &&
        cfg.iqa_mode_policy != "prompt_pair") {
        throw ConfigError("unknown iqa_mode_policy: " + cfg.iqa_mode_policy);
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Benchmark run
// ---------------------------------------------------------------------------

namespace {

std::string now_iso8601() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

DatasetResult eval_dataset_cell(backends::EncoderBackend& backend,
                                backends::EmbeddingCache& cache, const DatasetSpec& ds,
                                backends::IqaScoringMode mode, const RunConfig& cfg) {
    DatasetResult row;
    row.backend_id = backend.backend_id();
    row.task = ds.task;
    row.dataset = ds.name;

    if (ds.task == "ooo") {
        const auto samples = read_ooo_file(ds.path);
        const auto outcome = eval_ooo(samples, encoder_ooo_decider(backend, cache));
        row.accuracy = outcome.accuracy;
        row.count = outcome.count;
        return row;
    }
    if (ds.task == "retrieval") {
        std::ifstream in(ds.path, std::ios::binary);
        if (!in) throw IoError("cannot open dataset file: " + ds.path);
        std::string line;
        if (!std::getline(in, line)) throw IoError("empty retrieval file: " + ds.path);
        const RetrievalSplit split = parse_retrieval_line(line);
        const auto medium = eval_retrieval(split, backend, cache, "medium");
        const auto hard = eval_retrieval(split, backend, cache, "hard");
        row.accuracy = 0.5 * (medium.mean_ap + hard.mean_ap);
        row.count = medium.evaluated_queries + hard.evaluated_queries;
        return row;
    }

    const Task task = task_from_string(ds.task);
    const auto samples = read_triplet_file(ds.path);
    const auto scoring_mode = (task == Task::Iqa || task == Task::Paa)
                                  ? mode
                                  : backends::IqaScoringMode::DefaultRef;
    const auto outcome = eval_2afc(
        samples, encoder_decider(backend, cache, scoring_mode, cfg.tau, cfg.tie_policy));
    row.accuracy = outcome.accuracy;
    row.count = outcome.count;
    row.unparseable = outcome.unparseable;
    if (task == Task::Iqa || task == Task::Paa) row.iqa_mode = backends::to_string(scoring_mode);
    return row;
}

}  // namespace

BenchmarkReport run_benchmark(const RunConfig& config) {
    // Fail fast before any evaluation: backends must construct, dataset files
    // must exist.
    std::vector<std::pair<std::string, std::unique_ptr<backends::EncoderBackend>>> encoders;
    for (const auto& b : config.backends) {
        try {
            auto enc = backends::make_encoder(b.spec);
            encoders.emplace_back(b.id, std::move(enc));
        } catch (const std::exception& e) {
            throw ConfigError("backend '" + b.id + "': " + e.what());
        }
    }
    for (const auto& ds : config.datasets) {
        if (!fs::exists(ds.path)) {
            throw ConfigError("dataset '" + ds.name + "' not ingested: missing " + ds.path);
        }
        if (ds.task != "ooo" && ds.task != "retrieval") {
            task_from_string(ds.task);  // throws on an unknown task id
        }
    }

    const std::string cache_dir =
        config.cache_dir.empty()
            ? (fs::temp_directory_path() / "unisim-cache").string()
            : config.cache_dir;
    backends::EmbeddingCache cache(cache_dir);

    BenchmarkReport report;
    report.seed = config.seed;
    report.tie_policy = sim::to_string(config.tie_policy);
    report.config_hash = config.config_hash;
    report.generated_at = now_iso8601();
    report.notes.push_back(
        "Retrieval column is revisited-protocol mean average precision (AP per query after "
        "junk removal, mean over medium and hard query sets).");
    report.notes.push_back("Candidate order is evaluated once as stored (seeded shuffle).");

    for (auto& [backend_id, encoder] : encoders) {
        // Group datasets by task so IQA mode selection sees the whole task.
        std::map<std::string, std::vector<const DatasetSpec*>> by_task;
        for (const auto& ds : config.datasets) by_task[ds.task].push_back(&ds);

        for (const auto& [task_name, specs] : by_task) {
            const bool iqa_like = task_name == "iqa" || task_name == "paa";
            std::vector<backends::IqaScoringMode> modes;
            if (!iqa_like || config.iqa_mode_policy == "default_ref") {
                modes = {backends::IqaScoringMode::DefaultRef};
            } else if (config.iqa_mode_policy == "prompt_pair") {
                modes = {backends::IqaScoringMode::PromptPair};
            } else {
                modes = {backends::IqaScoringMode::DefaultRef,
                         backends::IqaScoringMode::PromptPair};
            }

            // One candidate row set per mode; the mode with the best task mean
            // is the one reported.
            std::vector<std::vector<DatasetResult>> mode_rows(modes.size());
            std::vector<double> mode_mean(modes.size(), -1.0);
            for (size_t mi = 0; mi < modes.size(); ++mi) {
                double sum = 0.0;
                size_t ok = 0;
                for (const auto* ds : specs) {
                    try {
                        auto row = eval_dataset_cell(*encoder, cache, *ds, modes[mi], config);
                        row.backend_id = backend_id;  // rows carry the configured id
                        sum += row.accuracy;
                        ++ok;
                        mode_rows[mi].push_back(std::move(row));
                    } catch (const std::exception& e) {
                        DatasetResult row;
                        row.backend_id = backend_id;
                        row.task = ds->task;
                        row.dataset = ds->name;
                        row.error = e.what();
                        mode_rows[mi].push_back(std::move(row));
                    }
                }
                mode_mean[mi] = ok ? sum / ok : -1.0;
            }
            size_t best = 0;
            for (size_t mi = 1; mi < modes.size(); ++mi) {
                if (mode_mean[mi] > mode_mean[best]) best = mi;
            }
            for (auto& row : mode_rows[best]) {
                if (!row.error.empty()) report.errors.push_back(backend_id + "/" + row.dataset +
                                                                ": " + row.error);
                report.results.push_back(std::move(row));
            }
        }

        std::map<std::string, std::map<std::string, double>> per_task;
        for (const auto& row : report.results) {
            if (row.backend_id != backend_id || !row.error.empty()) continue;
            per_task[row.task][row.dataset] = row.accuracy;
        }
        if (!per_task.empty()) report.summary[backend_id] = aggregate(per_task);
    }

    if (!config.out_dir.empty()) {
        fs::create_directories(config.out_dir);
        write_report_json(report, (fs::path(config.out_dir) / "report.json").string());
        write_report_csv(report, (fs::path(config.out_dir) / "results.csv").string());
        write_radar_csv(report, (fs::path(config.out_dir) / "radar.csv").string());
    }
    return report;
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

void write_report_json(const BenchmarkReport& report, const std::string& path) {
    json j;
    j["seed"] = report.seed;
    j["tie_policy"] = report.tie_policy;
    j["config_hash"] = report.config_hash;
    j["generated_at"] = report.generated_at;
    j["results"] = json::array();
    for (const auto& r : report.results) {
        json row;
        row["backend"] = r.backend_id;
        row["task"] = r.task;
        row["dataset"] = r.dataset;
        if (r.error.empty()) {
            row["accuracy"] = r.accuracy;  // full precision; rounding is display-only
            row["count"] = r.count;
            row["unparseable"] = r.unparseable;
            if (!r.iqa_mode.empty()) row["iqa_mode"] = r.iqa_mode;
        } else {
            row["error"] = r.error;
        }
        j["results"].push_back(std::move(row));
    }
    j["summary"] = json::object();
    for (const auto& [backend, summary] : report.summary) {
        json s;
        s["task_means"] = summary.task_means;
        s["overall"] = summary.overall;
        json display;
        for (const auto& [task, mean] : summary.task_means) {
            display[task] = display_1dp(100.0 * mean);
        }
        display["overall"] = display_1dp(100.0 * summary.overall);
        s["display_percent"] = std::move(display);
        j["summary"][backend] = std::move(s);
    }
    j["errors"] = report.errors;
    j["notes"] = report.notes;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write report: " + path);
    out << j.dump(2) << '\n';
}

void write_report_csv(const BenchmarkReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write csv: " + path);
    out << "backend,task,dataset,accuracy_percent,count,unparseable,iqa_mode,error\n";
    for (const auto& r : report.results) {
        out << r.backend_id << ',' << r.task << ',' << r.dataset << ',';
        if (r.error.empty()) out << display_1dp(100.0 * r.accuracy);
        out << ',' << r.count << ',' << r.unparseable << ',' << r.iqa_mode << ',' << r.error
            << '\n';
    }
}

void write_radar_csv(const BenchmarkReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write radar data: " + path);
    out << "backend,axis,value_percent\n";
    for (const auto& [backend, summary] : report.summary) {
        for (const auto& [task, mean] : summary.task_means) {
            out << backend << ',' << task << ',' << display_1dp(100.0 * mean) << '\n';
        }
    }
}

BenchmarkReport load_report_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open report: " + path);
    json j;
    in >> j;
    BenchmarkReport report;
    report.seed = j.value("seed", uint64_t{0});
    report.tie_policy = j.value("tie_policy", "prefer_first");
    report.config_hash = j.value("config_hash", "");
    report.generated_at = j.value("generated_at", "");
    for (const auto& row : j.at("results")) {
        DatasetResult r;
        r.backend_id = row.at("backend").get<std::string>();
        r.task = row.at("task").get<std::string>();
        r.dataset = row.at("dataset").get<std::string>();
        if (row.contains("error")) {
            r.error = row["error"].get<std::string>();
        } else {
            r.accuracy = row.at("accuracy").get<double>();
            r.count = row.at("count").get<size_t>();
            r.unparseable = row.value("unparseable", size_t{0});
            r.iqa_mode = row.value("iqa_mode", "");
        }
        report.results.push_back(std::move(r));
    }
    if (j.contains("summary")) {
        for (const auto& [backend, s] : j["summary"].items()) {
            AggregateSummary summary;
            for (const auto& [task, mean] : s.at("task_means").items()) {
                summary.task_means[task] = mean.get<double>();
            }
            summary.overall = s.at("overall").get<double>();
            report.summary[backend] = std::move(summary);
        }
    }
    if (j.contains("errors")) {
        for (const auto& e : j["errors"]) report.errors.push_back(e.get<std::string>());
    }
    if (j.contains("notes")) {
        for (const auto& n : j["notes"]) report.notes.push_back(n.get<std::string>());
    }
    return report;
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

std::vector<AblationRow> run_ablation(
    const std::vector<std::vector<TripletSample>>& task_train_pools,
    const std::vector<std::vector<TripletSample>>& task_heldout_pools,
    const std::vector<AblationVariant>& variants, const trainer::TrainConfig& cfg,
    int feature_dim, int embed_dim) {
    if (variants.size() < 2) throw std::invalid_argument("need at least 2 ablation variants");
    if (task_train_pools.size() != task_heldout_pools.size()) {
        throw std::invalid_argument("train/heldout task count mismatch");
    }

    std::vector<AblationRow> rows;
    for (const auto& variant : variants) {
        AblationRow row;
        row.variant = variant.name;
        row.trained_on.assign(task_train_pools.size(), false);

        std::vector<std::vector<TripletSample>> selected;
        for (size_t t : variant.train_tasks) {
            if (t >= task_train_pools.size()) {
                throw std::invalid_argument("ablation variant references unknown task index");
            }
            row.trained_on[t] = true;
            selected.push_back(task_train_pools[t]);
        }

        trainer::ToyDualEncoder enc(feature_dim, embed_dim, cfg);
        trainer::fit(enc, std::move(selected), cfg);

        for (const auto& pool : task_heldout_pools) {
            size_t correct = 0;
            for (const auto& s : pool) {
                const auto [s0, s1] = enc.score(s);
                if (sim::decide_2afc(s0, s1) == s.label) ++correct;
            }
            row.heldout_accuracy.push_back(
                pool.empty() ? 0.0 : static_cast<double>(correct) / pool.size());
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace unisim::bench
