#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace unisim {

// Schema tags written to every JSONL line.
inline constexpr const char* kTripletSchema = "unisim.triplet.v1";
inline constexpr const char* kOooSchema = "unisim.ooo.v1";
inline constexpr const char* kRetrievalSchema = "unisim.retrieval.v1";

// Fixed reference prompt that completes IQA pairs into triplets.
inline constexpr const char* kIqaReferencePrompt = "A high quality photo.";

enum class MediaKind { Image, Text };

enum class Task {
    Img2afc,
    It2afc,
    Text2afc,
    Iqa,
    Paa,
    Ooo,
    Retrieval,
};

enum class PaaAttribute { Brightness, Colorfulness, Contrast, Sharpness };

std::string to_string(Task t);
Task task_from_string(const std::string& s);
std::string to_string(PaaAttribute a);
PaaAttribute paa_attribute_from_string(const std::string& s);

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One image (by path/URI) or one text snippet (inline), content-addressed.
struct MediaItem {
    MediaKind kind = MediaKind::Text;
    std::string uri;   // populated iff kind == Image
    std::string text;  // populated iff kind == Text

    static MediaItem image(std::string uri);
    static MediaItem make_text(std::string content);

    bool operator==(const MediaItem&) const = default;
};

// The universal 2AFC unit: reference, two candidates, preferred-candidate label.
struct TripletSample {
    Task task = Task::Img2afc;
    std::string dataset_id;
    MediaItem ref;
    MediaItem cand[2];
    int label = 0;  // y in {0,1}; y=0 means cand[0] is human-preferred
    std::map<std::string, std::string> meta;

    bool operator==(const TripletSample&) const = default;
};

struct OddOneOutSample {
    std::string dataset_id;
    MediaItem items[3];
    int odd_index = 0;

    bool operator==(const OddOneOutSample&) const = default;
};

struct RetrievalRelevance {
    std::vector<int> positives;  // gallery indices
    std::vector<int> junk;       // excluded from ranking

    bool operator==(const RetrievalRelevance&) const = default;
};

struct RetrievalSplit {
    std::string dataset_id;
    std::vector<MediaItem> queries;
    std::vector<MediaItem> gallery;
    // per difficulty ("medium", "hard"): one relevance entry per query
    std::map<std::string, std::vector<RetrievalRelevance>> relevance;

    bool operator==(const RetrievalSplit&) const = default;
};

struct EmbeddingRecord {
    std::string backend_id;
    std::string item_hash;
    std::vector<float> values;
};

// SHA-256 hex digest of canonical content bytes. Images hash their raw
// file bytes; text is normalized to NFC with trailing whitespace stripped.
std::string canonical_hash(const MediaItem& item);
std::string sha256_hex(const void* data, size_t len);
std::string normalize_text(const std::string& text);

// Modality-pattern and label-range checks. Violations are returned, not thrown.
std::vector<std::string> validate_sample(const TripletSample& s);
std::vector<std::string> validate_sample(const OddOneOutSample& s);

// For PAA samples the attribute sub-tag travels in meta["attribute"].
std::optional<PaaAttribute> paa_attribute_of(const TripletSample& s);

// JSONL (de)serialization. One sample per line, LF endings, UTF-8.
nlohmann::json to_json(const MediaItem& item);
MediaItem media_item_from_json(const nlohmann::json& j);

std::string serialize_line(const TripletSample& s);
std::string serialize_line(const OddOneOutSample& s);
std::string serialize_line(const RetrievalSplit& s);

TripletSample parse_triplet_line(const std::string& line);
OddOneOutSample parse_ooo_line(const std::string& line);
RetrievalSplit parse_retrieval_line(const std::string& line);

// Reads a whole JSONL file of triplet samples.
std::vector<TripletSample> read_triplet_file(const std::string& path);
std::vector<OddOneOutSample> read_ooo_file(const std::string& path);
void write_triplet_file(const std::string& path, const std::vector<TripletSample>& samples);
void write_ooo_file(const std::string& path, const std::vector<OddOneOutSample>& samples);

}  // namespace unisim
