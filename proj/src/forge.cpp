#include "unisim/forge.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <fstream>
#include <functional>
#include <sstream>

#include <nlohmann/json.hpp>

namespace unisim::forge {

namespace fs = std::filesystem;
using nlohmann::json;

uint64_t Rng::below(uint64_t n) {
    // Rejection sampling against modulo bias; stable across platforms.
    const uint64_t limit = std::numeric_limits<uint64_t>::max() - std::numeric_limits<uint64_t>::max() % n;
    uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % n;
}

double Rng::unit() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

namespace {

std::string locator_of(const MediaItem& m) {
    return m.kind == MediaKind::Image ? m.uri : m.text;
}

// Builds a pair sample with seeded-random candidate order; the ground-truth
// winner is recorded in meta so label correctness stays re-derivable.
TripletSample make_pair_sample(const MediaItem& winner, const MediaItem& loser,
                               const std::string& dataset_id, Task task,
                               const MediaItem& ref, Rng& rng,
                               std::map<std::string, std::string> meta) {
    TripletSample s;
    s.task = task;
    s.dataset_id = dataset_id;
    s.ref = ref;
    const bool winner_first = rng.below(2) == 0;
    s.cand[0] = winner_first ? winner : loser;
    s.cand[1] = winner_first ? loser : winner;
    s.label = winner_first ? 0 : 1;
    meta["preferred"] = locator_of(winner);
    s.meta = std::move(meta);
    return s;
}

}  // namespace

TripletSample build_rank_extremes(const RankedGroup& g, const std::string& dataset_id,
                                  Task task, Rng& rng) {
    if (g.entries.size() < 2) {
        throw std::invalid_argument("ranked group needs at least 2 entries");
    }
    auto better = [&](const RankedEntry& a, const RankedEntry& b) {
        return g.ordering == RankOrdering::RankAscendingBest ? a.rank_or_score < b.rank_or_score
                                                             : a.rank_or_score > b.rank_or_score;
    };
    const RankedEntry* best = &g.entries[0];
    const RankedEntry* worst = &g.entries[0];
    for (const auto& e : g.entries) {
        if (better(e, *best)) best = &e;
        if (better(*worst, e)) worst = &e;
    }
    if (best->rank_or_score == worst->rank_or_score) {
        throw std::invalid_argument("tied rank extremes");
    }
    return make_pair_sample(best->item, worst->item, dataset_id, task,
                            MediaItem::make_text(g.prompt), rng, {});
}

std::vector<TripletSample> build_adjacent_severity(const SeverityLadder& l,
                                                   const std::string& dataset_id, Rng& rng) {
    std::vector<TripletSample> out;
    for (const auto& [level, item] : l.rungs) {
        if (level <= 0) throw std::invalid_argument("severity levels must be positive");
        auto next = l.rungs.find(level + 1);
        if (next == l.rungs.end()) continue;
        out.push_back(make_pair_sample(item, next->second, dataset_id, Task::Iqa,
                                       MediaItem::make_text(kIqaReferencePrompt), rng,
                                       {{"severity", std::to_string(level)}}));
    }
    return out;
}

std::vector<TripletSample> build_score_pairs(const std::vector<ScoredItem>& pool,
                                             size_t n, double min_gap,
                                             const std::string& dataset_id, Task task,
                                             const MediaItem& ref, Rng& rng,
                                             const std::map<std::string, std::string>& extra_meta) {
    if (pool.size() < 2) throw std::invalid_argument("pool needs at least 2 items");
    if (min_gap < 0) throw std::invalid_argument("min_gap must be >= 0");
    std::vector<TripletSample> out;
    size_t attempts = 0;
    const size_t max_attempts = 10 * n;
    while (out.size() < n) {
        if (attempts++ >= max_attempts) {
            throw std::runtime_error("insufficient eligible pairs after " +
                                     std::to_string(max_attempts) + " attempts");
        }
        const auto& a = pool[rng.below(pool.size())];
        const auto& b = pool[rng.below(pool.size())];
        if (&a == &b) continue;
        if (!(std::abs(a.score - b.score) > min_gap)) continue;
        const auto& winner = a.score > b.score ? a : b;
        const auto& loser = a.score > b.score ? b : a;
        out.push_back(make_pair_sample(winner.item, loser.item, dataset_id, task, ref, rng,
                                       extra_meta));
    }
    return out;
}

std::vector<TripletSample> build_hqedit_pairs(const HqEditRecord& rec, Task task,
                                              const std::string& dataset_id, Rng& rng) {
    if (rec.source_description.empty() || rec.target_description.empty() ||
        rec.source_image.uri.empty() || rec.target_image.uri.empty()) {
        throw std::invalid_argument("hq-edit record is missing a field");
    }
    std::map<std::string, std::string> meta;
    if (rec.source_description == rec.target_description) meta["degenerate"] = "true";

    std::vector<TripletSample> out;
    if (task == Task::It2afc) {
        // One sample per description; the matching image carries the label.
        out.push_back(make_pair_sample(rec.target_image, rec.source_image, dataset_id, task,
                                       MediaItem::make_text(rec.target_description), rng, meta));
        out.push_back(make_pair_sample(rec.source_image, rec.target_image, dataset_id, task,
                                       MediaItem::make_text(rec.source_description), rng, meta));
    } else if (task == Task::Text2afc) {
        out.push_back(make_pair_sample(MediaItem::make_text(rec.source_description),
                                       MediaItem::make_text(rec.target_description), dataset_id,
                                       task, rec.source_image, rng, meta));
        out.push_back(make_pair_sample(MediaItem::make_text(rec.target_description),
                                       MediaItem::make_text(rec.source_description), dataset_id,
                                       task, rec.target_image, rng, meta));
    } else {
        throw std::invalid_argument("hq-edit supports it2afc and text2afc only");
    }
    return out;
}

std::vector<TripletSample> build_caption_negatives(const MediaItem& image,
                                                   const std::string& reference_caption,
                                                   const std::vector<ScoredCaption>& generated,
                                                   const std::string& dataset_id, Rng& rng) {
    std::vector<TripletSample> out;
    for (const auto& cap : generated) {
        if (cap.score > 0.5) continue;  // threshold is inclusive: "0.5 or lower"
        out.push_back(make_pair_sample(MediaItem::make_text(reference_caption),
                                       MediaItem::make_text(cap.text), dataset_id,
                                       Task::Text2afc, image, rng, {}));
    }
    return out;
}

std::vector<OddOneOutSample> build_ooo_triplets(
    const MacroClassMap& map, const std::map<std::string, std::vector<MediaItem>>& images,
    size_t n, const std::string& dataset_id, Rng& rng) {
    // Flatten per macro-class pools.
    std::vector<std::pair<std::string, std::vector<MediaItem>>> pools;
    for (const auto& [macro, class_ids] : map.classes) {
        std::vector<MediaItem> pool;
        for (const auto& cid : class_ids) {
            auto it = images.find(cid);
            if (it == images.end()) continue;
            pool.insert(pool.end(), it->second.begin(), it->second.end());
        }
        if (!pool.empty()) pools.emplace_back(macro, std::move(pool));
    }
    std::vector<size_t> pair_classes;  // indices with >= 2 images
    for (size_t i = 0; i < pools.size(); ++i) {
        if (pools[i].second.size() >= 2) pair_classes.push_back(i);
    }
    if (pools.size() < 2 || pair_classes.empty()) {
        throw std::invalid_argument("need >= 2 macro-classes, one with >= 2 images");
    }

    std::vector<OddOneOutSample> out;
    out.reserve(n);
    while (out.size() < n) {
        const size_t same = pair_classes[rng.below(pair_classes.size())];
        size_t other = rng.below(pools.size());
        if (other == same) continue;
        const auto& same_pool = pools[same].second;
        const auto& other_pool = pools[other].second;
        const size_t a = rng.below(same_pool.size());
        size_t b = rng.below(same_pool.size());
        if (b == a) continue;
        const MediaItem& odd = other_pool[rng.below(other_pool.size())];

        OddOneOutSample s;
        s.dataset_id = dataset_id;
        const int odd_pos = static_cast<int>(rng.below(3));
        int filled = 0;
        const MediaItem* same_items[2] = {&same_pool[a], &same_pool[b]};
        for (int pos = 0; pos < 3; ++pos) {
            s.items[pos] = pos == odd_pos ? odd : *same_items[filled++];
        }
        s.odd_index = odd_pos;
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<NafcInstance> build_nafc_instances(const std::vector<RankedGroup>& groups,
                                               size_t n_way, Rng& rng) {
    if (n_way < 2) throw std::invalid_argument("n_way must be >= 2");
    std::vector<NafcInstance> out;
    for (const auto& g : groups) {
        if (g.entries.size() < n_way) continue;
        auto better = [&](const RankedEntry& a, const RankedEntry& b) {
            return g.ordering == RankOrdering::RankAscendingBest
                       ? a.rank_or_score < b.rank_or_score
                       : a.rank_or_score > b.rank_or_score;
        };
        size_t best = 0;
        for (size_t i = 1; i < g.entries.size(); ++i) {
            if (better(g.entries[i], g.entries[best])) best = i;
        }
        std::vector<size_t> distractors;
        for (size_t i = 0; i < g.entries.size(); ++i) {
            if (i != best) distractors.push_back(i);
        }
        rng.shuffle(distractors);
        distractors.resize(n_way - 1);

        std::vector<size_t> chosen = {best};
        chosen.insert(chosen.end(), distractors.begin(), distractors.end());
        rng.shuffle(chosen);

        NafcInstance inst;
        inst.ref = MediaItem::make_text(g.prompt);
        for (size_t i = 0; i < chosen.size(); ++i) {
            inst.candidates.push_back(g.entries[chosen[i]].item);
            if (chosen[i] == best) inst.correct = static_cast<int>(i);
        }
        out.push_back(std::move(inst));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Ingestion adapters. Raw layouts are documented in docs/raw_layouts.md; each
// adapter fails fast with a per-field error message via json::at().
// ---------------------------------------------------------------------------

namespace {

std::vector<json> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open raw annotation file: " + path);
    std::vector<json> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

json read_optional_config(const std::string& raw_dir) {
    const fs::path p = fs::path(raw_dir) / "config.json";
    if (!fs::exists(p)) return json::object();
    std::ifstream in(p);
    json j;
    in >> j;
    return j;
}

std::vector<ScoredItem> load_scores(const std::string& path) {
    std::vector<ScoredItem> pool;
    for (const auto& j : read_jsonl(path)) {
        pool.push_back({MediaItem::image(j.at("image").get<std::string>()),
                        j.at("score").get<double>()});
    }
    return pool;
}

const MediaItem& paa_ref_prompt(PaaAttribute a) {
    static const MediaItem brightness = MediaItem::make_text("A bright photo.");
    static const MediaItem colorfulness = MediaItem::make_text("A colorful photo.");
    static const MediaItem contrast = MediaItem::make_text("A high contrast photo.");
    static const MediaItem sharpness = MediaItem::make_text("A sharp photo.");
    switch (a) {
        case PaaAttribute::Brightness: return brightness;
        case PaaAttribute::Colorfulness: return colorfulness;
        case PaaAttribute::Contrast: return contrast;
        case PaaAttribute::Sharpness: return sharpness;
    }
    throw std::invalid_argument("unknown attribute");
}

std::vector<TripletSample> ingest_score_pairs(const std::string& raw_dir,
                                              const std::string& dataset_id, Task task,
                                              const MediaItem& ref, Rng& rng,
                                              const std::map<std::string, std::string>& meta = {}) {
    auto pool = load_scores((fs::path(raw_dir) / "scores.jsonl").string());
    const json cfg = read_optional_config(raw_dir);
    const size_t n = cfg.value("n_pairs", pool.size());
    const double min_gap = cfg.value("min_gap", 0.0);
    return build_score_pairs(pool, n, min_gap, dataset_id, task, ref, rng, meta);
}

std::vector<TripletSample> ingest_ranked_groups(const std::string& raw_dir,
                                                const std::string& dataset_id, Task task,
                                                Rng& rng) {
    std::vector<TripletSample> out;
    for (const auto& g : load_ranked_groups((fs::path(raw_dir) / "ranked_groups.jsonl").string())) {
        out.push_back(build_rank_extremes(g, dataset_id, task, rng));
    }
    return out;
}

std::vector<TripletSample> ingest_prepaired_triplets(const std::string& raw_dir,
                                                     const std::string& dataset_id, Task task) {
    std::vector<TripletSample> out;
    for (const auto& j : read_jsonl((fs::path(raw_dir) / "triplets.jsonl").string())) {
        TripletSample s;
        s.task = task;
        s.dataset_id = dataset_id;
        s.ref = MediaItem::image(j.at("ref").get<std::string>());
        s.cand[0] = MediaItem::image(j.at("cand0").get<std::string>());
        s.cand[1] = MediaItem::image(j.at("cand1").get<std::string>());
        s.label = j.at("label").get<int>();
        s.meta["preferred"] = locator_of(s.cand[s.label]);
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<TripletSample> ingest_bapps(const std::string& raw_dir,
                                        const std::string& dataset_id, Rng& rng) {
    // Fractional preferences binarized at 0.5; exact ties dropped.
    std::vector<TripletSample> out;
    for (const auto& j : read_jsonl((fs::path(raw_dir) / "triplets.jsonl").string())) {
        const double pref = j.at("preference").get<double>();  // fraction preferring cand1
        if (pref == 0.5) continue;
        TripletSample s;
        s.task = Task::Img2afc;
        s.dataset_id = dataset_id;
        s.ref = MediaItem::image(j.at("ref").get<std::string>());
        s.cand[0] = MediaItem::image(j.at("cand0").get<std::string>());
        s.cand[1] = MediaItem::image(j.at("cand1").get<std::string>());
        s.label = pref > 0.5 ? 1 : 0;
        s.meta["preference"] = j.at("preference").dump();
        s.meta["preferred"] = locator_of(s.cand[s.label]);
        out.push_back(std::move(s));
    }
    const json cfg = read_optional_config(raw_dir);
    if (cfg.contains("subsample")) {
        const size_t n = cfg.at("subsample").get<size_t>();
        if (n < out.size()) {
            rng.shuffle(out);
            out.resize(n);
        }
    }
    return out;
}

std::vector<TripletSample> ingest_magicbrush(const std::string& raw_dir,
                                             const std::string& dataset_id, Rng& rng) {
    // The edit instruction serves as the reference text; the edited target
    // image is the preferred candidate.
    std::vector<TripletSample> out;
    for (const auto& j : read_jsonl((fs::path(raw_dir) / "edits.jsonl").string())) {
        out.push_back(make_pair_sample(MediaItem::image(j.at("target_image").get<std::string>()),
                                       MediaItem::image(j.at("source_image").get<std::string>()),
                                       dataset_id, Task::It2afc,
                                       MediaItem::make_text(j.at("instruction").get<std::string>()),
                                       rng, {{"ref_is_instruction", "true"}}));
    }
    return out;
}

std::vector<TripletSample> ingest_hqedit(const std::string& raw_dir,
                                         const std::string& dataset_id, Task task, Rng& rng) {
    std::vector<TripletSample> out;
    for (const auto& j : read_jsonl((fs::path(raw_dir) / "edits.jsonl").string())) {
        HqEditRecord rec;
        rec.source_image = MediaItem::image(j.at("source_image").get<std::string>());
        rec.target_image = MediaItem::image(j.at("target_image").get<std::string>());
        rec.source_description = j.at("source_description").get<std::string>();
        rec.target_description = j.at("target_description").get<std::string>();
        auto pair = build_hqedit_pairs(rec, task, dataset_id, rng);
        out.insert(out.end(), pair.begin(), pair.end());
    }
    return out;
}

std::vector<TripletSample> ingest_polaris(const std::string& raw_dir,
                                          const std::string& dataset_id, Rng& rng) {
    std::vector<TripletSample> out;
    for (const auto& j : read_jsonl((fs::path(raw_dir) / "captions.jsonl").string())) {
        std::vector<ScoredCaption> generated;
        for (const auto& g : j.at("generated")) {
            generated.push_back({g.at("text").get<std::string>(), g.at("score").get<double>()});
        }
        auto samples = build_caption_negatives(
            MediaItem::image(j.at("image").get<std::string>()),
            j.at("reference_caption").get<std::string>(), generated, dataset_id, rng);
        out.insert(out.end(), samples.begin(), samples.end());
    }
    return out;
}

std::vector<TripletSample> ingest_cdcoco(const std::string& raw_dir,
                                         const std::string& dataset_id, Rng& rng) {
    // Records with negative votes are pruned; each kept fused caption pairs
    // against each of the original captions.
    std::vector<TripletSample> out;
    for (const auto& j : read_jsonl((fs::path(raw_dir) / "cdcoco.jsonl").string())) {
        if (j.at("votes").get<double>() < 0) continue;
        const MediaItem image = MediaItem::image(j.at("image").get<std::string>());
        const std::string fused = j.at("fused_caption").get<std::string>();
        for (const auto& orig : j.at("original_captions")) {
            out.push_back(make_pair_sample(MediaItem::make_text(fused),
                                           MediaItem::make_text(orig.get<std::string>()),
                                           dataset_id, Task::Text2afc, image, rng, {}));
        }
    }
    return out;
}

std::vector<TripletSample> ingest_pieapp_iqa(const std::string& raw_dir,
                                             const std::string& dataset_id, Rng& rng) {
    std::vector<TripletSample> out;
    for (const auto& j : read_jsonl((fs::path(raw_dir) / "pairs.jsonl").string())) {
        out.push_back(make_pair_sample(
            MediaItem::image(j.at("reference_image").get<std::string>()),
            MediaItem::image(j.at("distorted_image").get<std::string>()), dataset_id, Task::Iqa,
            MediaItem::make_text(kIqaReferencePrompt), rng, {}));
    }
    return out;
}

std::vector<TripletSample> ingest_kadid(const std::string& raw_dir,
                                        const std::string& dataset_id, Rng& rng) {
    std::vector<TripletSample> out;
    for (const auto& j : read_jsonl((fs::path(raw_dir) / "ladders.jsonl").string())) {
        SeverityLadder ladder;
        ladder.reference = MediaItem::image(j.at("reference").get<std::string>());
        for (const auto& [level, img] : j.at("rungs").items()) {
            ladder.rungs[std::stoi(level)] = MediaItem::image(img.get<std::string>());
        }
        auto samples = build_adjacent_severity(ladder, dataset_id, rng);
        out.insert(out.end(), samples.begin(), samples.end());
    }
    return out;
}

std::vector<OddOneOutSample> ingest_ooo(const std::string& raw_dir,
                                        const std::string& dataset_id, Rng& rng) {
    std::ifstream in(fs::path(raw_dir) / "ooo.json");
    if (!in) throw IoError("cannot open raw annotation file: " + raw_dir + "/ooo.json");
    json j;
    in >> j;
    MacroClassMap map;
    std::set<std::string> seen;
    for (const auto& [macro, ids] : j.at("macro_classes").items()) {
        for (const auto& id : ids) {
            const std::string s = id.get<std::string>();
            if (!seen.insert(s).second) {
                throw std::runtime_error("macro-class sets are not disjoint at class " + s);
            }
            map.classes[macro].insert(s);
        }
    }
    std::map<std::string, std::vector<MediaItem>> images;
    for (const auto& [cid, paths] : j.at("images").items()) {
        for (const auto& p : paths) images[cid].push_back(MediaItem::image(p.get<std::string>()));
    }
    return build_ooo_triplets(map, images, j.at("n").get<size_t>(), dataset_id, rng);
}

RetrievalSplit ingest_retrieval(const std::string& raw_dir, const std::string& dataset_id) {
    std::ifstream in(fs::path(raw_dir) / "retrieval.json");
    if (!in) throw IoError("cannot open raw annotation file: " + raw_dir + "/retrieval.json");
    json j;
    in >> j;
    RetrievalSplit split;
    split.dataset_id = dataset_id;
    for (const auto& q : j.at("queries")) split.queries.push_back(MediaItem::image(q.get<std::string>()));
    for (const auto& g : j.at("gallery")) split.gallery.push_back(MediaItem::image(g.get<std::string>()));
    for (const auto& [difficulty, rels] : j.at("relevance").items()) {
        std::vector<RetrievalRelevance> out;
        for (const auto& r : rels) {
            RetrievalRelevance rel;
            rel.positives = r.at("positive").get<std::vector<int>>();
            rel.junk = r.at("junk").get<std::vector<int>>();
            std::set<int> pos(rel.positives.begin(), rel.positives.end());
            for (int idx : rel.junk) {
                if (pos.count(idx)) throw std::runtime_error("positive and junk sets overlap");
            }
            out.push_back(std::move(rel));
        }
        split.relevance[difficulty] = std::move(out);
    }
    if (split.relevance.count("medium") && split.relevance.at("medium").size() != split.queries.size()) {
        throw std::runtime_error("medium relevance entries must match query count");
    }
    return split;
}

void write_manifest(const std::string& path, const std::string& dataset, size_t count,
                    uint64_t seed) {
    json j;
    j["dataset"] = dataset;
    j["count"] = count;
    j["seed"] = seed;
    j["builder_version"] = kBuilderVersion;
    std::ofstream out(path, std::ios::binary);
    out << j.dump(2) << '\n';
}

}  // namespace

std::vector<RankedGroup> load_ranked_groups(const std::string& path) {
    std::vector<RankedGroup> out;
    for (const auto& j : read_jsonl(path)) {
        RankedGroup g;
        g.prompt = j.at("prompt").get<std::string>();
        g.ordering = j.value("ordering", "rank_ascending_best") == "score_higher_better"
                         ? RankOrdering::ScoreHigherBetter
                         : RankOrdering::RankAscendingBest;
        std::set<double> ranks;
        for (const auto& e : j.at("entries")) {
            RankedEntry entry;
            entry.item = MediaItem::image(e.at("image").get<std::string>());
            entry.rank_or_score = e.at("rank").get<double>();
            if (g.ordering == RankOrdering::RankAscendingBest &&
                !ranks.insert(entry.rank_or_score).second) {
                throw std::runtime_error("duplicate rank in group: " + g.prompt);
            }
            g.entries.push_back(std::move(entry));
        }
        out.push_back(std::move(g));
    }
    return out;
}

std::vector<std::string> supported_datasets() {
    return {
        "nights",         "bapps",           "pieapp_img2afc",
        "imagereward",    "hpdv2",           "agiqa3k_it2afc",
        "magicbrush",     "hqedit_it2afc",   "hqedit_text2afc",
        "cdcoco",         "polaris",         "kadid10k",
        "koniq10k_iqa",   "pieapp_iqa",      "agiqa3k_iqa",
        "pipal",          "sice_brightness", "koniq10k_brightness",
        "koniq10k_colorfulness", "koniq10k_contrast", "koniq10k_sharpness",
        "cifar100_ooo",   "imagenet_ooo",    "roxford",
        "rparis",
    };
}

IngestResult ingest_dataset(const std::string& name, const std::string& raw_dir,
                            const std::string& out_dir, uint64_t seed) {
    fs::create_directories(out_dir);
    Rng rng(seed);
    const std::string sample_path = (fs::path(out_dir) / (name + ".jsonl")).string();
    const std::string manifest_path = (fs::path(out_dir) / (name + ".manifest.json")).string();
    const MediaItem iqa_ref = MediaItem::make_text(kIqaReferencePrompt);

    std::vector<TripletSample> triplets;
    if (name == "nights") {
        triplets = ingest_prepaired_triplets(raw_dir, name, Task::Img2afc);
    } else if (name == "bapps") {
        triplets = ingest_bapps(raw_dir, name, rng);
    } else if (name == "pieapp_img2afc") {
        triplets = ingest_prepaired_triplets(raw_dir, name, Task::Img2afc);
    } else if (name == "imagereward" || name == "hpdv2") {
        triplets = ingest_ranked_groups(raw_dir, name, Task::It2afc, rng);
    } else if (name == "agiqa3k_it2afc") {
        // Filter out the bottom quality quartile, then pair by alignment score
        // within each prompt group.
        auto records = read_jsonl((fs::path(raw_dir) / "agiqa.jsonl").string());
        std::vector<double> quality;
        for (const auto& j : records) quality.push_back(j.at("quality").get<double>());
        std::sort(quality.begin(), quality.end());
        const json cfg = read_optional_config(raw_dir);
        const double quantile = cfg.value("quality_filter_quantile", 0.25);
        const double cutoff = quality.empty() ? 0.0 : quality[static_cast<size_t>(quantile * (quality.size() - 1))];
        std::map<std::string, std::vector<ScoredItem>> by_prompt;
        for (const auto& j : records) {
            if (j.at("quality").get<double>() < cutoff) continue;
            by_prompt[j.at("prompt").get<std::string>()].push_back(
                {MediaItem::image(j.at("image").get<std::string>()),
                 j.at("alignment").get<double>()});
        }
        for (const auto& [prompt, pool] : by_prompt) {
            if (pool.size() < 2) continue;
            auto pair = build_score_pairs(pool, 1, 0.0, name, Task::It2afc,
                                          MediaItem::make_text(prompt), rng);
            triplets.insert(triplets.end(), pair.begin(), pair.end());
        }
    } else if (name == "magicbrush") {
        triplets = ingest_magicbrush(raw_dir, name, rng);
    } else if (name == "hqedit_it2afc") {
        triplets = ingest_hqedit(raw_dir, name, Task::It2afc, rng);
    } else if (name == "hqedit_text2afc") {
        triplets = ingest_hqedit(raw_dir, name, Task::Text2afc, rng);
    } else if (name == "cdcoco") {
        triplets = ingest_cdcoco(raw_dir, name, rng);
    } else if (name == "polaris") {
        triplets = ingest_polaris(raw_dir, name, rng);
    } else if (name == "kadid10k") {
        triplets = ingest_kadid(raw_dir, name, rng);
    } else if (name == "koniq10k_iqa" || name == "agiqa3k_iqa" || name == "pipal") {
        triplets = ingest_score_pairs(raw_dir, name, Task::Iqa, iqa_ref, rng);
    } else if (name == "pieapp_iqa") {
        triplets = ingest_pieapp_iqa(raw_dir, name, rng);
    } else if (name == "sice_brightness" || name.rfind("koniq10k_", 0) == 0) {
        const std::string attr_name = name.substr(name.rfind('_') + 1);
        const PaaAttribute attr = paa_attribute_from_string(attr_name);
        triplets = ingest_score_pairs(raw_dir, name, Task::Paa, paa_ref_prompt(attr), rng,
                                      {{"attribute", attr_name}});
    } else if (name == "cifar100_ooo" || name == "imagenet_ooo") {
        auto samples = ingest_ooo(raw_dir, name, rng);
        write_ooo_file(sample_path, samples);
        write_manifest(manifest_path, name, samples.size(), seed);
        return {name, sample_path, manifest_path, samples.size()};
    } else if (name == "roxford" || name == "rparis") {
        auto split = ingest_retrieval(raw_dir, name);
        std::ofstream out(sample_path, std::ios::binary);
        out << serialize_line(split) << '\n';
        write_manifest(manifest_path, name, split.queries.size(), seed);
        return {name, sample_path, manifest_path, split.queries.size()};
    } else {
        std::string supported;
        for (const auto& s : supported_datasets()) supported += s + " ";
        throw std::invalid_argument("unknown dataset id '" + name + "'; supported: " + supported);
    }

    for (const auto& s : triplets) {
        auto violations = validate_sample(s);
        if (!violations.empty()) {
            throw std::runtime_error("builder emitted invalid sample: " + violations.front());
        }
    }
    write_triplet_file(sample_path, triplets);
    write_manifest(manifest_path, name, triplets.size(), seed);
    return {name, sample_path, manifest_path, triplets.size()};
}

// ---------------------------------------------------------------------------
// Instruction-tuning annotation emission
// ---------------------------------------------------------------------------

namespace {

struct Templates {
    std::vector<std::string> instructions;
    std::vector<std::string> answers;
};

// Instruction variants per task; each keeps the canonical task phrase so that
// fine-tuned models see consistent wording with inference prompts.
const Templates& templates_for(Task task) {
    static const Templates img2afc{
        {"Answer the following multiple-choice question:\nHere are three images: <image> <image> "
         "<image>.\nIf image 1 is the reference image, which image of the other two is more "
         "similar to the reference image?\nOptions:\n(A) Image 2\n(B) Image 3",
         "Here are three images: <image> <image> <image>. Image 1 is the reference. Which image "
         "of the other two is more similar to the reference image?\nOptions:\n(A) Image 2\n(B) "
         "Image 3"},
        {"(A) Image 2|(B) Image 3", "The answer is (A).|The answer is (B)."}};
    static const Templates it2afc{
        {"Answer the following question:\nHere are two images: <image> <image>, and here is the "
         "reference caption: {prompt}. which of the two images is more aligned to the reference "
         "caption?\nOptions:\n(A) Image 1\n(B) Image 2",
         "Here are two images: <image> <image>. Reference caption: {prompt}. Which of the two "
         "images is more aligned to the reference caption?\nOptions:\n(A) Image 1\n(B) Image 2"},
        {"(A) Image 1|(B) Image 2", "The answer is (A).|The answer is (B)."}};
    static const Templates text2afc{
        {"Answer the following multiple-choice question:\nGiven the reference image: <image> and "
         "two captions, caption 1: {caption1}, caption 2: {caption2}\nwhich caption has a better "
         "alignment with the reference image?\nOptions:\n(A) Caption 1\n(B) Caption 2",
         "Given the reference image: <image> and two captions, caption 1: {caption1}, caption 2: "
         "{caption2}, which caption has a better alignment with the reference "
         "image?\nOptions:\n(A) Caption 1\n(B) Caption 2"},
        {"(A) Caption 1|(B) Caption 2", "The answer is (A).|The answer is (B)."}};
    static const Templates iqa{
        {"Answer the following multiple-choice question:\nGiven two images: <image> <image>\n"
         "which image has a better quality?\nOptions:\n(A) Image 1\n(B) Image 2",
         "Given two images: <image> <image>, which image has a better quality?\nOptions:\n(A) "
         "Image 1\n(B) Image 2"},
        {"(A) Image 1|(B) Image 2", "The answer is (A).|The answer is (B)."}};
    static const Templates paa{
        {"Answer the following multiple-choice question:\nGiven two images: <image> <image>\n"
         "which image is more {perceptual attribute}?\nOptions:\n(A) Image 1\n(B) Image 2",
         "Given two images: <image> <image>, which image is more {perceptual "
         "attribute}?\nOptions:\n(A) Image 1\n(B) Image 2"},
        {"(A) Image 1|(B) Image 2", "The answer is (A).|The answer is (B)."}};
    switch (task) {
        case Task::Img2afc: return img2afc;
        case Task::It2afc: return it2afc;
        case Task::Text2afc: return text2afc;
        case Task::Iqa: return iqa;
        case Task::Paa: return paa;
        default: throw std::invalid_argument("no instruction template for task");
    }
}

void replace_all(std::string& s, const std::string& from, const std::string& to) {
    size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
}

}  // namespace

size_t emit_instruction_annotations(const std::vector<TripletSample>& samples,
                                    const std::string& out_path, uint64_t seed,
                                    const std::vector<std::string>& extra_files) {
    std::vector<std::string> lines;
    size_t index = 0;
    for (const auto& s : samples) {
        auto violations = validate_sample(s);
        if (!violations.empty()) {
            throw std::runtime_error("invalid sample in annotation stream: " + violations.front());
        }
        const Templates& tpl = templates_for(s.task);
        std::string instruction = tpl.instructions[index % tpl.instructions.size()];
        const std::string answer_pair = tpl.answers[index % tpl.answers.size()];
        const size_t bar = answer_pair.find('|');
        const std::string answer =
            s.label == 0 ? answer_pair.substr(0, bar) : answer_pair.substr(bar + 1);

        json rec;
        json images = json::array();
        switch (s.task) {
            case Task::Img2afc:
                images.push_back(s.ref.uri);
                images.push_back(s.cand[0].uri);
                images.push_back(s.cand[1].uri);
                break;
            case Task::It2afc:
                replace_all(instruction, "{prompt}", s.ref.text);
                images.push_back(s.cand[0].uri);
                images.push_back(s.cand[1].uri);
                break;
            case Task::Text2afc:
                replace_all(instruction, "{caption1}", s.cand[0].text);
                replace_all(instruction, "{caption2}", s.cand[1].text);
                images.push_back(s.ref.uri);
                break;
            case Task::Iqa:
                images.push_back(s.cand[0].uri);
                images.push_back(s.cand[1].uri);
                break;
            case Task::Paa: {
                auto attr = paa_attribute_of(s);
                if (!attr) throw std::runtime_error("paa sample without attribute");
                replace_all(instruction, "{perceptual attribute}", to_string(*attr));
                images.push_back(s.cand[0].uri);
                images.push_back(s.cand[1].uri);
                break;
            }
            default:
                throw std::invalid_argument("task has no annotation format");
        }
        rec["images"] = std::move(images);
        rec["instruction"] = instruction;
        rec["answer"] = answer;
        lines.push_back(rec.dump());
        ++index;
    }

    for (const auto& path : extra_files) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open extra annotation file: " + path);
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty()) lines.push_back(line);
        }
    }

    Rng rng(seed);
    rng.shuffle(lines);

    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw IoError("cannot write annotation file: " + out_path);
    for (const auto& l : lines) out << l << '\n';
    return lines.size();
}

}  // namespace unisim::forge
