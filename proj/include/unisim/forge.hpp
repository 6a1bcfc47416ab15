#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "unisim/core.hpp"

namespace unisim::forge {

inline constexpr const char* kBuilderVersion = "1";

// Deterministic RNG used by every builder. A fixed seed must reproduce
// byte-identical output files across runs.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    // Uniform draw in [0, n).
    uint64_t below(uint64_t n);
    double unit();  // [0, 1)

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
};

enum class RankOrdering { RankAscendingBest, ScoreHigherBetter };

struct RankedEntry {
    MediaItem item;
    double rank_or_score = 0.0;
};

struct RankedGroup {
    std::string prompt;
    std::vector<RankedEntry> entries;
    RankOrdering ordering = RankOrdering::RankAscendingBest;
};

struct SeverityLadder {
    MediaItem reference;
    std::map<int, MediaItem> rungs;  // severity level -> image, levels > 0
};

struct MacroClassMap {
    // macro-class name -> source class ids (pairwise disjoint)
    std::map<std::string, std::set<std::string>> classes;
};

struct ScoredItem {
    MediaItem item;
    double score = 0.0;
};

struct ScoredCaption {
    std::string text;
    double score = 0.0;
};

// An N-way forced-choice instance (used for the NAFC sweep).
struct NafcInstance {
    MediaItem ref;
    std::vector<MediaItem> candidates;
    int correct = 0;
};

// Pairs the best- and worst-ranked entries of a group; candidate order is
// seeded-random, label marks the best-ranked entry.
TripletSample build_rank_extremes(const RankedGroup& g, const std::string& dataset_id,
                                  Task task, Rng& rng);

// One IQA sample per consecutive severity pair (k, k+1); label marks the less
// corrupted image. Missing successors are skipped.
std::vector<TripletSample> build_adjacent_severity(const SeverityLadder& l,
                                                   const std::string& dataset_id, Rng& rng);

// n random pairs with |score delta| > min_gap; label marks the higher score.
// Throws after 10*n failed rejection-sampling attempts.
std::vector<TripletSample> build_score_pairs(const std::vector<ScoredItem>& pool,
                                             size_t n, double min_gap,
                                             const std::string& dataset_id, Task task,
                                             const MediaItem& ref, Rng& rng,
                                             const std::map<std::string, std::string>& extra_meta = {});

struct HqEditRecord {
    MediaItem source_image;
    MediaItem target_image;
    std::string source_description;
    std::string target_description;
};

// Each record doubles into two samples per task (one description at a time,
// label swapped accordingly).
std::vector<TripletSample> build_hqedit_pairs(const HqEditRecord& rec, Task task,
                                              const std::string& dataset_id, Rng& rng);

// One Text-2AFC sample per generated caption scoring <= 0.5; label marks the
// reference caption.
std::vector<TripletSample> build_caption_negatives(const MediaItem& image,
                                                   const std::string& reference_caption,
                                                   const std::vector<ScoredCaption>& generated,
                                                   const std::string& dataset_id, Rng& rng);

// n triplets of two same-macro-class images plus one odd image; the odd
// position is uniform under the seed.
std::vector<OddOneOutSample> build_ooo_triplets(
    const MacroClassMap& map, const std::map<std::string, std::vector<MediaItem>>& images,
    size_t n, const std::string& dataset_id, Rng& rng);

// N-way instances from ranked groups: correct candidate is the top-ranked
// image, distractors are sampled from the remaining ranked images. Groups with
// fewer than N entries are skipped.
std::vector<NafcInstance> build_nafc_instances(const std::vector<RankedGroup>& groups,
                                               size_t n_way, Rng& rng);

// Reads a ranked_groups.jsonl raw annotation file (see docs/raw_layouts.md).
std::vector<RankedGroup> load_ranked_groups(const std::string& path);

struct IngestResult {
    std::string dataset_id;
    std::string sample_path;
    std::string manifest_path;
    size_t count = 0;
};

// Dataset ids with an ingestion adapter (raw layouts documented in
// docs/raw_layouts.md).
std::vector<std::string> supported_datasets();

// Turns the raw annotations of one dataset into a canonical JSONL sample file
// plus a manifest {dataset, count, seed, builder_version}.
IngestResult ingest_dataset(const std::string& name, const std::string& raw_dir,
                            const std::string& out_dir, uint64_t seed);

// Instruction-tuning annotation emission: one {images, instruction, answer}
// record per sample, templates rotated deterministically, optional external
// annotation files concatenated and shuffled under the seed.
size_t emit_instruction_annotations(const std::vector<TripletSample>& samples,
                                    const std::string& out_path, uint64_t seed,
                                    const std::vector<std::string>& extra_files = {});

}  // namespace unisim::forge
