#include "unisim/backends.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace unisim::backends {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Prompt rendering
// ---------------------------------------------------------------------------

namespace {

void replace_placeholder(std::string& body, const std::string& key, const std::string& value) {
    const size_t pos = body.find(key);
    if (pos == std::string::npos) {
        throw std::runtime_error("template is missing placeholder " + key);
    }
    body.replace(pos, key.size(), value);
}

}  // namespace

RenderedPrompt render_prompt(const TripletSample& s) {
    auto violations = validate_sample(s);
    if (!violations.empty()) {
        throw std::invalid_argument("sample does not validate: " + violations.front());
    }
    RenderedPrompt p;
    p.n_options = 2;
    switch (s.task) {
        case Task::Img2afc:
            p.instruction =
                "Answer the following multiple-choice question:\nHere are three images: <image> "
                "<image> <image>.\nIf image 1 is the reference image, which image of the other "
                "two is more similar to the reference image?\nOptions:\n(A) Image 2\n(B) Image 3";
            p.images = {s.ref, s.cand[0], s.cand[1]};
            break;
        case Task::It2afc:
            p.instruction =
                "Answer the following question:\nHere are two images: <image> <image>, and here "
                "is the reference caption: {prompt}. which of the two images is more aligned to "
                "the reference caption?\nOptions:\n(A) Image 1\n(B) Image 2";
            replace_placeholder(p.instruction, "{prompt}", s.ref.text);
            p.images = {s.cand[0], s.cand[1]};
            break;
        case Task::Text2afc:
            p.instruction =
                "Answer the following multiple-choice question:\nGiven the reference image: "
                "<image> and two captions, caption 1: {caption1}, caption 2: {caption2}\nwhich "
                "caption has a better alignment with the reference image?\nOptions:\n(A) Caption "
                "1\n(B) Caption 2";
            replace_placeholder(p.instruction, "{caption1}", s.cand[0].text);
            replace_placeholder(p.instruction, "{caption2}", s.cand[1].text);
            p.images = {s.ref};
            break;
        case Task::Iqa:
            p.instruction =
                "Answer the following multiple-choice question:\nGiven two images: <image> "
                "<image>\nwhich image has a better quality?\nOptions:\n(A) Image 1\n(B) Image 2";
            p.images = {s.cand[0], s.cand[1]};
            break;
        case Task::Paa: {
            auto attr = paa_attribute_of(s);
            if (!attr) throw std::runtime_error("paa sample without attribute");
            p.instruction =
                "Answer the following multiple-choice question:\nGiven two images: <image> "
                "<image>\nwhich image is more {perceptual attribute}?\nOptions:\n(A) Image 1\n(B) "
                "Image 2";
            replace_placeholder(p.instruction, "{perceptual attribute}", to_string(*attr));
            p.images = {s.cand[0], s.cand[1]};
            break;
        }
        default:
            throw std::invalid_argument("task has no triplet prompt");
    }
    return p;
}

RenderedPrompt render_prompt(const OddOneOutSample& s) {
    RenderedPrompt p;
    p.n_options = 3;
    p.instruction =
        "Answer the following multiple-choice question:\nHere are three images: <image> <image> "
        "<image>,\nWhich one (A, B, C) is the odd-one-out of the group?\nOptions:\n(A) Image "
        "1\n(B) Image 2\n(C) Image 3";
    p.images = {s.items[0], s.items[1], s.items[2]};
    return p;
}

// ---------------------------------------------------------------------------
// Answer parsing
// ---------------------------------------------------------------------------

std::optional<int> parse_choice(const std::string& raw, int n_options) {
    if (n_options < 2 || n_options > 3) {
        throw std::invalid_argument("n_options must be 2 or 3");
    }
    std::string text;
    text.reserve(raw.size());
    for (char c : raw) text.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));

    auto is_boundary = [&](size_t i) {
        if (i >= text.size()) return true;
        const char c = text[i];
        return !(std::isalnum(static_cast<unsigned char>(c)));
    };

    std::optional<int> found;
    bool conflict = false;
    auto record = [&](int idx) {
        if (found && *found != idx) conflict = true;
        found = idx;
    };

    // Tier 1: option letters — "(a)", "a)", standalone "a". Letters are
    // authoritative; "Image N" wording is consulted only when no letter
    // matched (answers like "(B) Image 2" restate the option).
    for (int opt = 0; opt < n_options; ++opt) {
        const char letter = static_cast<char>('a' + opt);
        for (size_t i = 0; i < text.size(); ++i) {
            if (text[i] != letter) continue;
            const bool close = i + 1 < text.size() && text[i + 1] == ')';
            const bool standalone = (i == 0 || is_boundary(i - 1)) && is_boundary(i + 1);
            if (close || standalone) record(opt);
        }
    }
    if (conflict) return std::nullopt;
    if (found) return found;

    // Tier 2: "image N" / "caption N" with the 1-based option numbering.
    for (const std::string& word : {std::string("image "), std::string("caption ")}) {
        size_t pos = 0;
        while ((pos = text.find(word, pos)) != std::string::npos) {
            const size_t digit = pos + word.size();
            if (digit < text.size() && std::isdigit(static_cast<unsigned char>(text[digit])) &&
                is_boundary(digit + 1)) {
                const int idx = (text[digit] - '0') - 1;
                if (idx >= 0 && idx < n_options) record(idx);
            }
            pos = digit;
        }
    }
    if (conflict) return std::nullopt;
    return found;
}

// ---------------------------------------------------------------------------
// Embedding cache
// ---------------------------------------------------------------------------

namespace {
constexpr char kMagic[4] = {'U', 'E', 'M', 'B'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& buf, uint32_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
    buf.push_back(static_cast<char>((v >> 16) & 0xff));
    buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

uint32_t get_u32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
}  // namespace

void write_emb_file(const std::string& path, const std::vector<float>& values) {
    std::string buf;
    buf.append(kMagic, 4);
    put_u32(buf, kVersion);
    put_u32(buf, static_cast<uint32_t>(values.size()));
    for (float v : values) {
        uint32_t bits;
        static_assert(sizeof(bits) == sizeof(v));
        std::memcpy(&bits, &v, sizeof(bits));
        put_u32(buf, bits);
    }
    const std::string tmp = path + ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot write cache file: " + tmp);
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    }
    fs::rename(tmp, path);
}

std::optional<std::vector<float>> read_emb_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string buf = ss.str();
    if (buf.size() < 12 || std::memcmp(buf.data(), kMagic, 4) != 0) return std::nullopt;
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
    if (get_u32(p + 4) != kVersion) return std::nullopt;
    const uint32_t dim = get_u32(p + 8);
    if (buf.size() != 12 + 4ull * dim) return std::nullopt;
    std::vector<float> values(dim);
    for (uint32_t i = 0; i < dim; ++i) {
        const uint32_t bits = get_u32(p + 12 + 4 * i);
        std::memcpy(&values[i], &bits, sizeof(float));
    }
    return values;
}

EmbeddingCache::EmbeddingCache(std::string cache_dir) : cache_dir_(std::move(cache_dir)) {
    fs::create_directories(cache_dir_);
}

std::shared_ptr<std::mutex> EmbeddingCache::flight_lock(const std::string& key) {
    std::lock_guard<std::mutex> lock(mu_);
    auto& slot = in_flight_[key];
    if (!slot) slot = std::make_shared<std::mutex>();
    return slot;
}

namespace {

// Cache key: canonical content hash where the bytes are reachable; synthetic
// image locators (no file behind the uri) key on the locator string instead.
std::string cache_key_hash(const MediaItem& item) {
    try {
        return canonical_hash(item);
    } catch (const IoError&) {
        if (item.kind != MediaKind::Image) throw;
        const std::string tagged = "uri:" + item.uri;
        return sha256_hex(tagged.data(), tagged.size());
    }
}

}  // namespace

EmbeddingRecord EmbeddingCache::get(EncoderBackend& backend, const MediaItem& item) {
    const std::string hash = cache_key_hash(item);
    const std::string key = backend.backend_id() + "/" + hash;

    {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = memory_.find(key);
        if (it != memory_.end()) return it->second;
    }

    // Single-flight per key: concurrent callers for the same item wait here
    // while one of them computes or loads.
    auto flight = flight_lock(key);
    std::lock_guard<std::mutex> key_lock(*flight);
    {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = memory_.find(key);
        if (it != memory_.end()) return it->second;
    }

    const fs::path dir = fs::path(cache_dir_) / backend.backend_id();
    const fs::path file = dir / (hash + ".emb");

    EmbeddingRecord rec;
    rec.backend_id = backend.backend_id();
    rec.item_hash = hash;

    if (auto cached = read_emb_file(file.string()); cached && cached->size() == backend.dim()) {
        rec.values = std::move(*cached);
    } else {
        if (fs::exists(file)) {
            // Corrupt or wrong-shape entry: treat as a miss and rewrite.
            fprintf(stderr, "unisim: recomputing corrupt cache entry %s\n", file.string().c_str());
        }
        try {
            rec.values = backend.embed(item);
        } catch (const std::exception& e) {
            throw std::runtime_error("backend '" + backend.backend_id() + "' failed on item '" +
                                     (item.kind == MediaKind::Image ? item.uri : item.text) +
                                     "': " + e.what());
        }
        fs::create_directories(dir);
        write_emb_file(file.string(), rec.values);
    }

    std::lock_guard<std::mutex> lock(mu_);
    memory_[key] = rec;
    return rec;
}

std::vector<EmbeddingRecord> EmbeddingCache::get_many(EncoderBackend& backend,
                                                      const std::vector<MediaItem>& items) {
    std::vector<EmbeddingRecord> out;
    out.reserve(items.size());
    for (const auto& item : items) out.push_back(get(backend, item));
    return out;
}

// ---------------------------------------------------------------------------
// Encoder scoring
// ---------------------------------------------------------------------------

const char* to_string(IqaScoringMode m) {
    return m == IqaScoringMode::DefaultRef ? "default_ref" : "prompt_pair";
}

IqaScoringMode iqa_mode_from_string(const std::string& s) {
    if (s == "default_ref") return IqaScoringMode::DefaultRef;
    if (s == "prompt_pair") return IqaScoringMode::PromptPair;
    throw std::invalid_argument("unknown IQA scoring mode: " + s);
}

std::pair<std::string, std::string> prompt_pair_for(const TripletSample& s) {
    if (s.task == Task::Iqa) {
        return {"Good photo.", "Bad photo."};
    }
    if (s.task == Task::Paa) {
        auto attr = paa_attribute_of(s);
        if (!attr) throw std::runtime_error("paa sample without attribute");
        switch (*attr) {
            case PaaAttribute::Brightness: return {"A bright photo.", "A dark photo."};
            case PaaAttribute::Colorfulness: return {"A colorful photo.", "A dull photo."};
            case PaaAttribute::Contrast:
                return {"A high contrast photo.", "A low contrast photo."};
            case PaaAttribute::Sharpness: return {"A sharp photo.", "A blurry photo."};
        }
    }
    throw std::invalid_argument("prompt pairs exist only for iqa/paa samples");
}

std::pair<double, double> score_sample_encoder(EncoderBackend& backend, EmbeddingCache& cache,
                                               const TripletSample& s, IqaScoringMode mode,
                                               double tau) {
    auto violations = validate_sample(s);
    if (!violations.empty()) {
        throw std::invalid_argument("sample does not validate: " + violations.front());
    }
    if (mode == IqaScoringMode::PromptPair && (s.task == Task::Iqa || s.task == Task::Paa)) {
        const auto [good, bad] = prompt_pair_for(s);
        const auto good_emb = cache.get(backend, MediaItem::make_text(good)).values;
        const auto bad_emb = cache.get(backend, MediaItem::make_text(bad)).values;
        double gap[2];
        for (int i = 0; i < 2; ++i) {
            const auto emb = cache.get(backend, s.cand[i]).values;
            gap[i] = sim::cosine_sim_f(emb, good_emb) - sim::cosine_sim_f(emb, bad_emb);
        }
        double scores[2] = {sim::iqa_prompt_pair_score(gap[0], 0.0, tau),
                            sim::iqa_prompt_pair_score(gap[1], 0.0, tau)};
        if (scores[0] == scores[1] && gap[0] != gap[1]) {
            // Large tau saturates the logistic and can collapse distinct gaps
            // onto the same double. The softmax is monotone in the gap, so a
            // reduced tau induces the identical decision without the collapse.
            const double safe_tau =
                std::min(tau, 30.0 / std::max(std::abs(gap[0]), std::abs(gap[1])));
            scores[0] = sim::iqa_prompt_pair_score(gap[0], 0.0, safe_tau);
            scores[1] = sim::iqa_prompt_pair_score(gap[1], 0.0, safe_tau);
        }
        return {scores[0], scores[1]};
    }
    const auto ref_emb = cache.get(backend, s.ref).values;
    const auto c0 = cache.get(backend, s.cand[0]).values;
    const auto c1 = cache.get(backend, s.cand[1]).values;
    return {sim::cosine_sim_f(ref_emb, c0), sim::cosine_sim_f(ref_emb, c1)};
}

// ---------------------------------------------------------------------------
// Test/synthetic backends
// ---------------------------------------------------------------------------

namespace {

std::vector<float> parse_vec(const std::string& content, size_t dim) {
    const std::string prefix = "vec:";
    const size_t pos = content.find(prefix);
    if (pos == std::string::npos) {
        throw std::runtime_error("VectorEncoder expects 'vec:a,b,c' content, got: " + content);
    }
    std::vector<float> out;
    std::stringstream ss(content.substr(pos + prefix.size()));
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stof(tok));
    if (out.size() != dim) {
        throw std::runtime_error("VectorEncoder dim mismatch in: " + content);
    }
    return out;
}

}  // namespace

VectorEncoder::VectorEncoder(size_t dim, std::string id) : dim_(dim), id_(std::move(id)) {}

std::vector<float> VectorEncoder::embed_image(const MediaItem& item) {
    return parse_vec(item.uri, dim_);
}

std::vector<float> VectorEncoder::embed_text(const MediaItem& item) {
    return parse_vec(item.text, dim_);
}

HashEncoder::HashEncoder(size_t dim, std::string id) : dim_(dim), id_(std::move(id)) {}

std::vector<float> HashEncoder::embed_any(const MediaItem& item) {
    const std::string content = item.kind == MediaKind::Image ? item.uri : item.text;
    const std::string hash = sha256_hex(content.data(), content.size());
    uint64_t seed = 0;
    for (int i = 0; i < 16; ++i) {
        seed = seed * 16 + static_cast<uint64_t>(hash[i] <= '9' ? hash[i] - '0' : hash[i] - 'a' + 10);
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    std::vector<float> out(dim_);
    double norm2 = 0.0;
    for (auto& v : out) {
        v = normal(rng);
        norm2 += static_cast<double>(v) * v;
    }
    const float inv = static_cast<float>(1.0 / std::sqrt(std::max(norm2, 1e-30)));
    for (auto& v : out) v *= inv;
    return out;
}

std::vector<float> HashEncoder::embed_image(const MediaItem& item) { return embed_any(item); }
std::vector<float> HashEncoder::embed_text(const MediaItem& item) { return embed_any(item); }

void ScriptedGenerative::add_rule(std::string instruction_substring, std::string reply) {
    rules_.emplace_back(std::move(instruction_substring), std::move(reply));
}

std::string ScriptedGenerative::answer(const std::string& instruction,
                                       const std::vector<MediaItem>& images) {
    (void)images;
    for (const auto& [needle, reply] : rules_) {
        if (instruction.find(needle) != std::string::npos) return reply;
    }
    return fallback_;
}

std::unique_ptr<EncoderBackend> make_encoder(const std::string& spec) {
    const size_t colon = spec.find(':');
    if (colon == std::string::npos) {
        throw std::invalid_argument("backend spec must be '<kind>:<dim>', got: " + spec);
    }
    const std::string kind = spec.substr(0, colon);
    const size_t dim = std::stoul(spec.substr(colon + 1));
    if (kind == "vector") return std::make_unique<VectorEncoder>(dim, "vector-" + std::to_string(dim));
    if (kind == "hash") return std::make_unique<HashEncoder>(dim, "hash-" + std::to_string(dim));
    throw std::invalid_argument("unknown encoder kind: " + kind);
}

}  // namespace unisim::backends
