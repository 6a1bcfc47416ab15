#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "unisim/backends.hpp"
#include "unisim/core.hpp"
#include "unisim/forge.hpp"
#include "unisim/similarity.hpp"
#include "unisim/trainer.hpp"

namespace unisim::bench {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Decision callback: chosen candidate index, or nullopt when the answer could
// not be parsed (counted as wrong and tallied separately).
using TripletDecider = std::function<std::optional<int>(const TripletSample&)>;
using OooDecider = std::function<std::optional<int>(const OddOneOutSample&)>;
using NafcDecider = std::function<std::optional<int>(const forge::NafcInstance&)>;

struct EvalOutcome {
    double accuracy = 0.0;
    size_t count = 0;
    size_t unparseable = 0;
};

EvalOutcome eval_2afc(const std::vector<TripletSample>& samples, const TripletDecider& decide);
EvalOutcome eval_ooo(const std::vector<OddOneOutSample>& samples, const OooDecider& decide);

// Encoder-path deciders (cosine scoring; IQA/PAA may use the prompt-pair mode).
TripletDecider encoder_decider(backends::EncoderBackend& backend, backends::EmbeddingCache& cache,
                               backends::IqaScoringMode mode = backends::IqaScoringMode::DefaultRef,
                               double tau = 100.0,
                               sim::TiePolicy tie = sim::TiePolicy::PreferFirst);
OooDecider encoder_ooo_decider(backends::EncoderBackend& backend,
                               backends::EmbeddingCache& cache);

// Generative-path deciders (render instruction, parse the free-form answer).
TripletDecider generative_decider(backends::GenerativeBackend& backend);
OooDecider generative_ooo_decider(backends::GenerativeBackend& backend);

// Average precision of one ranked relevance list (junk already removed).
double average_precision(const std::vector<bool>& ranked_relevance);

struct RetrievalOutcome {
    double mean_ap = 0.0;
    size_t evaluated_queries = 0;
    size_t skipped_queries = 0;  // empty positive set at this difficulty
};

// Revisited protocol: rank the gallery by cosine to the query, drop the junk
// set before ranking, average precision per query, mean over retained queries.
// Throws if every query is skipped.
RetrievalOutcome eval_retrieval(const RetrievalSplit& split, backends::EncoderBackend& backend,
                                backends::EmbeddingCache& cache, const std::string& difficulty);

struct NafcPoint {
    int n = 0;
    double accuracy = 0.0;
    size_t instances = 0;
    size_t skipped_groups = 0;  // fewer than N ranked entries
};

// Accuracy per N over seeded N-way instances built from ranked groups.
std::vector<NafcPoint> eval_nafc(const std::vector<forge::RankedGroup>& groups,
                                 const NafcDecider& decide, int n_min, int n_max, uint64_t seed);

NafcDecider encoder_nafc_decider(backends::EncoderBackend& backend,
                                 backends::EmbeddingCache& cache,
                                 sim::TiePolicy tie = sim::TiePolicy::PreferFirst);

// --- Aggregation ------------------------------------------------------------

struct AggregateSummary {
    std::map<std::string, double> task_means;  // unrounded
    double overall = 0.0;                      // mean of unrounded task means
};

// Table arithmetic: task mean over its datasets, overall over task means, all
// on unrounded values. Input: task -> dataset -> accuracy.
AggregateSummary aggregate(const std::map<std::string, std::map<std::string, double>>& per_task);

// Display rounding, one decimal place (used only at emission).
std::string display_1dp(double v);

// --- Benchmark runs ---------------------------------------------------------

struct DatasetSpec {
    std::string name;
    std::string task;  // task_from_string id; "ooo" uses the ooo sample file
    std::string path;  // canonical JSONL emitted by ingest
};

struct BackendSpec {
    std::string id;
    std::string spec;  // make_encoder registry string
};

struct RunConfig {
    std::vector<BackendSpec> backends;
    std::vector<DatasetSpec> datasets;
    std::string out_dir;
    std::string cache_dir;
    uint64_t seed = 0;
    sim::TiePolicy tie_policy = sim::TiePolicy::PreferFirst;
    std::string iqa_mode_policy = "auto";  // auto | default_ref | prompt_pair
    double tau = 100.0;
    std::string config_hash;  // filled when loaded from a file
};

RunConfig run_config_from_file(const std::string& path);

struct DatasetResult {
    std::string backend_id;
    std::string task;
    std::string dataset;
    double accuracy = 0.0;  // fraction in [0,1]
    size_t count = 0;
    size_t unparseable = 0;
    std::string iqa_mode;  // set for iqa/paa rows
    std::string error;     // quarantined failure, row excluded from means
};

struct BenchmarkReport {
    std::vector<DatasetResult> results;
    // per backend: task -> mean, plus the overall mean
    std::map<std::string, AggregateSummary> summary;
    std::vector<std::string> errors;
    uint64_t seed = 0;
    std::string tie_policy;
    std::string config_hash;
    std::string generated_at;  // excluded from determinism comparisons
    std::vector<std::string> notes;
};

// Runs every (backend, dataset) cell. Fails fast on a missing dataset file or
// unknown backend spec; per-dataset evaluation failures are quarantined into
// the errors section. Writes report.json, results.csv and radar.csv under
// out_dir. Deterministic given config + seed (timestamps aside).
BenchmarkReport run_benchmark(const RunConfig& config);

void write_report_json(const BenchmarkReport& report, const std::string& path);
void write_report_csv(const BenchmarkReport& report, const std::string& path);
// Radar axes: one line per (backend, task) with the task mean.
void write_radar_csv(const BenchmarkReport& report, const std::string& path);

// Re-emission for `report --run <dir> --format ...`.
BenchmarkReport load_report_json(const std::string& path);

// --- Ablation ---------------------------------------------------------------

struct AblationVariant {
    std::string name;
    std::vector<size_t> train_tasks;  // indices into the task pool list
};

struct AblationRow {
    std::string variant;
    std::vector<double> heldout_accuracy;  // per task
    std::vector<bool> trained_on;          // per task, marks in-training datasets
};

// Trains one toy encoder per variant on the selected task subsets and scores
// every task's held-out pool, side by side.
std::vector<AblationRow> run_ablation(
    const std::vector<std::vector<TripletSample>>& task_train_pools,
    const std::vector<std::vector<TripletSample>>& task_heldout_pools,
    const std::vector<AblationVariant>& variants, const trainer::TrainConfig& cfg,
    int feature_dim, int embed_dim);

}  // namespace unisim::bench
