#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "unisim/core.hpp"
#include "unisim/similarity.hpp"

namespace unisim::backends {

// Dual-encoder contract: images and texts share one latent dimension and the
// embedding of an item is deterministic per (backend_id, content).
class EncoderBackend {
public:
    virtual ~EncoderBackend() = default;
    virtual std::string backend_id() const = 0;
    virtual size_t dim() const = 0;
    virtual std::vector<float> embed_image(const MediaItem& item) = 0;
    virtual std::vector<float> embed_text(const MediaItem& item) = 0;

    std::vector<float> embed(const MediaItem& item) {
        return item.kind == MediaKind::Image ? embed_image(item) : embed_text(item);
    }
};

// Instruction-following contract. Instructions reference images positionally
// ("Image 1/2/3"), so implementations must respect the given order.
class GenerativeBackend {
public:
    virtual ~GenerativeBackend() = default;
    virtual std::string backend_id() const = 0;
    virtual std::string answer(const std::string& instruction,
                               const std::vector<MediaItem>& images) = 0;
};

struct RenderedPrompt {
    std::string instruction;
    std::vector<MediaItem> images;
    int n_options = 2;
};

// Inference instruction for a sample, following the per-task instruction
// table. Throws if a placeholder cannot be filled.
RenderedPrompt render_prompt(const TripletSample& s);
RenderedPrompt render_prompt(const OddOneOutSample& s);

// Option index parsed from a free-form generative answer, or nullopt when no
// unambiguous option pattern is found (callers count those as incorrect and
// tally them separately).
std::optional<int> parse_choice(const std::string& raw, int n_options);

// Content-addressed on-disk embedding cache realizing the embed-once reuse
// contract. Layout: <cache_dir>/<backend_id>/<item_hash>.emb with magic
// "UEMB", u32 version=1, u32 dim, then dim little-endian float32 values.
class EmbeddingCache {
public:
    explicit EmbeddingCache(std::string cache_dir);

    // Each unique item is encoded at most once per backend across the process
    // and across runs. Safe under concurrent callers (per-item single-flight,
    // write-temp-then-rename publish).
    EmbeddingRecord get(EncoderBackend& backend, const MediaItem& item);

    std::vector<EmbeddingRecord> get_many(EncoderBackend& backend,
                                          const std::vector<MediaItem>& items);

    const std::string& dir() const { return cache_dir_; }

private:
    std::string cache_dir_;
    std::mutex mu_;
    std::map<std::string, EmbeddingRecord> memory_;                  // key: backend/hash
    std::map<std::string, std::shared_ptr<std::mutex>> in_flight_;

    std::shared_ptr<std::mutex> flight_lock(const std::string& key);
};

// Binary .emb (de)serialization, exposed for tests and external tooling.
void write_emb_file(const std::string& path, const std::vector<float>& values);
std::optional<std::vector<float>> read_emb_file(const std::string& path);

enum class IqaScoringMode { DefaultRef, PromptPair };

const char* to_string(IqaScoringMode m);
IqaScoringMode iqa_mode_from_string(const std::string& s);

// Opposed prompt pair used by the prompt-pair scoring path ("Good photo." /
// "Bad photo." for IQA; attribute/anti-attribute wording for PAA).
std::pair<std::string, std::string> prompt_pair_for(const TripletSample& s);

// Candidate scores for one triplet. Default path: cosine of each candidate to
// the reference embedding. Prompt-pair path (IQA/PAA only): softmax weight of
// the positive prompt at temperature tau.
std::pair<double, double> score_sample_encoder(EncoderBackend& backend, EmbeddingCache& cache,
                                               const TripletSample& s,
                                               IqaScoringMode mode = IqaScoringMode::DefaultRef,
                                               double tau = 100.0);

// --- Test/synthetic backends -----------------------------------------------

// Parses literal vectors from item content of the form "vec:a,b,c"; both
// texts and image URIs may carry the encoding. Used for hand-computable
// synthetic evaluations.
class VectorEncoder : public EncoderBackend {
public:
    explicit VectorEncoder(size_t dim, std::string id = "mock-vector");
    std::string backend_id() const override { return id_; }
    size_t dim() const override { return dim_; }
    std::vector<float> embed_image(const MediaItem& item) override;
    std::vector<float> embed_text(const MediaItem& item) override;

private:
    size_t dim_;
    std::string id_;
};

// Deterministic pseudo-random unit embedding derived from the content hash;
// behaves like a random-direction encoder (chance-level decisions) while
// staying reproducible.
class HashEncoder : public EncoderBackend {
public:
    explicit HashEncoder(size_t dim, std::string id = "mock-hash");
    std::string backend_id() const override { return id_; }
    size_t dim() const override { return dim_; }
    std::vector<float> embed_image(const MediaItem& item) override;
    std::vector<float> embed_text(const MediaItem& item) override;

private:
    std::vector<float> embed_any(const MediaItem& item);
    size_t dim_;
    std::string id_;
};

// Scripted generative mock: answers are looked up by substring of the
// instruction, with a fixed fallback.
class ScriptedGenerative : public GenerativeBackend {
public:
    explicit ScriptedGenerative(std::string id = "mock-lmm") : id_(std::move(id)) {}
    std::string backend_id() const override { return id_; }

    void add_rule(std::string instruction_substring, std::string reply);
    void set_fallback(std::string reply) { fallback_ = std::move(reply); }

    std::string answer(const std::string& instruction,
                       const std::vector<MediaItem>& images) override;

private:
    std::string id_;
    std::vector<std::pair<std::string, std::string>> rules_;
    std::string fallback_ = "I cannot tell.";
};

// Backend registry used by run configs: "vector:<dim>" or "hash:<dim>".
std::unique_ptr<EncoderBackend> make_encoder(const std::string& spec);

}  // namespace unisim::backends
