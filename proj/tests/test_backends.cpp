#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include "unisim/backends.hpp"

using namespace unisim;
using namespace unisim::backends;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "unisim-test-backends" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

TripletSample iqa_sample(const std::string& c0 = "vec:1,0", const std::string& c1 = "vec:0,1") {
    TripletSample s;
    s.task = Task::Iqa;
    s.dataset_id = "koniq10k_iqa";
    s.ref = MediaItem::make_text(kIqaReferencePrompt);
    s.cand[0] = MediaItem::image(c0);
    s.cand[1] = MediaItem::image(c1);
    s.label = 0;
    return s;
}

// Counts backend invocations to verify the cache dedup contract.
class CountingEncoder : public EncoderBackend {
public:
    explicit CountingEncoder(std::string id = "counting") : id_(std::move(id)) {}
    std::string backend_id() const override { return id_; }
    size_t dim() const override { return 2; }
    std::vector<float> embed_image(const MediaItem& item) override { return embed_any(item); }
    std::vector<float> embed_text(const MediaItem& item) override { return embed_any(item); }
    std::atomic<int> calls{0};

private:
    std::vector<float> embed_any(const MediaItem& item) {
        ++calls;
        const std::string& c = item.kind == MediaKind::Image ? item.uri : item.text;
        return {static_cast<float>(c.size()), 1.0f};
    }
    std::string id_;
};

}  // namespace

TEST_CASE("render_prompt uses the per-task instruction wording") {
    SUBCASE("iqa") {
        const auto p = render_prompt(iqa_sample());
        CHECK(p.instruction.find("which image has a better quality?") != std::string::npos);
        CHECK(p.images.size() == 2);
        CHECK(p.n_options == 2);
    }
    SUBCASE("img2afc") {
        TripletSample s;
        s.task = Task::Img2afc;
        s.ref = MediaItem::image("r.png");
        s.cand[0] = MediaItem::image("a.png");
        s.cand[1] = MediaItem::image("b.png");
        const auto p = render_prompt(s);
        CHECK(p.instruction.find("more similar to the reference image?") != std::string::npos);
        REQUIRE(p.images.size() == 3);
        CHECK(p.images[0].uri == "r.png");  // reference travels as image 1
    }
    SUBCASE("it2afc substitutes the prompt") {
        TripletSample s;
        s.task = Task::It2afc;
        s.ref = MediaItem::make_text("a red bicycle");
        s.cand[0] = MediaItem::image("a.png");
        s.cand[1] = MediaItem::image("b.png");
        const auto p = render_prompt(s);
        CHECK(p.instruction.find("a red bicycle") != std::string::npos);
        CHECK(p.instruction.find("{prompt}") == std::string::npos);
        CHECK(p.images.size() == 2);
    }
    SUBCASE("text2afc substitutes both captions") {
        TripletSample s;
        s.task = Task::Text2afc;
        s.ref = MediaItem::image("r.png");
        s.cand[0] = MediaItem::make_text("first caption");
        s.cand[1] = MediaItem::make_text("second caption");
        const auto p = render_prompt(s);
        CHECK(p.instruction.find("first caption") != std::string::npos);
        CHECK(p.instruction.find("second caption") != std::string::npos);
        CHECK(p.images.size() == 1);
    }
    SUBCASE("paa substitutes the attribute word") {
        auto s = iqa_sample();
        s.task = Task::Paa;
        s.ref = MediaItem::make_text("A sharp photo.");
        s.meta["attribute"] = "sharpness";
        const auto p = render_prompt(s);
        CHECK(p.instruction.find("more sharpness") != std::string::npos);
        CHECK(p.instruction.find("{perceptual attribute}") == std::string::npos);
    }
    SUBCASE("ooo prompt offers three options") {
        OddOneOutSample s;
        s.items[0] = MediaItem::image("a");
        s.items[1] = MediaItem::image("b");
        s.items[2] = MediaItem::image("c");
        const auto p = render_prompt(s);
        CHECK(p.n_options == 3);
        CHECK(p.instruction.find("odd-one-out") != std::string::npos);
    }
    SUBCASE("invalid sample is rejected") {
        auto s = iqa_sample();
        s.ref = MediaItem::image("not text");
        CHECK_THROWS(render_prompt(s));
    }
}

TEST_CASE("parse_choice handles the documented patterns") {
    CHECK(parse_choice("(B) Image 2", 2) == 1);
    CHECK(parse_choice("The answer is A.", 2) == 0);
    CHECK(parse_choice("both look fine", 2) == std::nullopt);
    CHECK(parse_choice("b)", 2) == 1);
    CHECK(parse_choice("answer: (C)", 3) == 2);
    CHECK(parse_choice("Image 2", 2) == 1);
    CHECK(parse_choice("I pick caption 1", 2) == 0);
    CHECK(parse_choice("image 3 is the odd one", 3) == 2);
    CHECK(parse_choice("either A or B", 2) == std::nullopt);    // conflicting letters
    CHECK(parse_choice("image 1 or image 2", 2) == std::nullopt);
    CHECK(parse_choice("(C)", 2) == std::nullopt);  // out-of-range option
    CHECK(parse_choice("", 2) == std::nullopt);
    CHECK_THROWS(parse_choice("(A)", 4));
    // Letters win over image numbering when both appear.
    CHECK(parse_choice("(A) Image 2", 2) == 0);
}

TEST_CASE("emb files round-trip bit-exactly and reject corruption") {
    const auto dir = fresh_dir("emb");
    const fs::path path = dir / "x.emb";
    const std::vector<float> values{1.5f, -2.25f, 3.141592f, 0.0f, -0.0f};
    write_emb_file(path.string(), values);
    const auto back = read_emb_file(path.string());
    REQUIRE(back.has_value());
    REQUIRE(back->size() == values.size());
    for (size_t i = 0; i < values.size(); ++i) {
        CHECK(std::memcmp(&(*back)[i], &values[i], sizeof(float)) == 0);
    }

    std::ofstream(dir / "bad.emb", std::ios::binary) << "NOPE this is not an embedding";
    CHECK(!read_emb_file((dir / "bad.emb").string()).has_value());
    std::ofstream(dir / "short.emb", std::ios::binary) << "UE";
    CHECK(!read_emb_file((dir / "short.emb").string()).has_value());
}

TEST_CASE("cache invokes the backend once per unique item") {
    const auto dir = fresh_dir("cache1");
    CountingEncoder enc;
    EmbeddingCache cache(dir.string());
    const MediaItem item = MediaItem::make_text("hello");
    const auto r1 = cache.get(enc, item);
    const auto r2 = cache.get(enc, item);
    CHECK(enc.calls == 1);
    CHECK(r1.values == r2.values);
    CHECK(r1.backend_id == "counting");
    CHECK(r1.item_hash == canonical_hash(item));

    // A fresh cache over the same directory (a second run) hits the disk only.
    CountingEncoder enc2("counting");
    EmbeddingCache cache2(dir.string());
    cache2.get(enc2, item);
    CHECK(enc2.calls == 0);
}

TEST_CASE("cache isolates backends and recovers from corrupt entries") {
    const auto dir = fresh_dir("cache2");
    CountingEncoder a("backend-a"), b("backend-b");
    EmbeddingCache cache(dir.string());
    const MediaItem item = MediaItem::make_text("shared");
    cache.get(a, item);
    cache.get(b, item);
    CHECK(a.calls == 1);
    CHECK(b.calls == 1);
    CHECK(fs::exists(dir / "backend-a" / (canonical_hash(item) + ".emb")));
    CHECK(fs::exists(dir / "backend-b" / (canonical_hash(item) + ".emb")));

    // Corrupt one entry; a fresh run recomputes and rewrites it.
    const fs::path entry = dir / "backend-a" / (canonical_hash(item) + ".emb");
    std::ofstream(entry, std::ios::binary) << "garbage";
    CountingEncoder a2("backend-a");
    EmbeddingCache cache2(dir.string());
    const auto rec = cache2.get(a2, item);
    CHECK(a2.calls == 1);
    CHECK(rec.values.size() == 2);
    CHECK(read_emb_file(entry.string()).has_value());
}

TEST_CASE("cache is safe and consistent under concurrent callers") {
    const auto dir = fresh_dir("cache3");
    CountingEncoder enc;
    EmbeddingCache cache(dir.string());
    std::vector<MediaItem> items;
    for (int i = 0; i < 20; ++i) items.push_back(MediaItem::make_text("item " + std::to_string(i)));

    std::vector<std::thread> threads;
    std::vector<std::vector<EmbeddingRecord>> results(8);
    for (int t = 0; t < 8; ++t) {
        threads.emplace_back([&, t] { results[t] = cache.get_many(enc, items); });
    }
    for (auto& th : threads) th.join();
    CHECK(enc.calls == 20);  // single-flight: one computation per item
    for (int t = 1; t < 8; ++t) {
        for (size_t i = 0; i < items.size(); ++i) {
            REQUIRE(results[t][i].values == results[0][i].values);
        }
    }
}

TEST_CASE("score_sample_encoder default path matches hand cosines") {
    const auto dir = fresh_dir("score1");
    VectorEncoder enc(2);
    EmbeddingCache cache(dir.string());

    TripletSample s;
    s.task = Task::Img2afc;
    s.dataset_id = "nights";
    s.ref = MediaItem::image("vec:1,0");
    s.cand[0] = MediaItem::image("vec:1,1");
    s.cand[1] = MediaItem::image("vec:0,1");
    s.label = 0;
    const auto [s0, s1] = score_sample_encoder(enc, cache, s);
    CHECK(s0 == doctest::Approx(0.7071).epsilon(1e-4));
    CHECK(s1 == doctest::Approx(0.0));

    // Swapping candidates swaps the scores.
    std::swap(s.cand[0], s.cand[1]);
    s.label = 1;
    const auto [t0, t1] = score_sample_encoder(enc, cache, s);
    CHECK(t0 == doctest::Approx(s1));
    CHECK(t1 == doctest::Approx(s0));

    // Candidate embedding equal to the reference scores 1.
    s.cand[0] = MediaItem::image("vec:2,0");  // same direction as ref
    const auto [u0, u1] = score_sample_encoder(enc, cache, s);
    CHECK(u0 == doctest::Approx(1.0));
    (void)u1;
}

TEST_CASE("prompt-pair scoring path") {
    const auto dir = fresh_dir("score2");
    VectorEncoder enc(2);
    EmbeddingCache cache(dir.string());

    // "Good photo." and "Bad photo." need vec-encodings; use a wrapper sample
    // whose prompts the VectorEncoder cannot parse is not possible, so embed
    // the prompts through a scripted mapping instead.
    class PromptAwareEncoder : public EncoderBackend {
    public:
        std::string backend_id() const override { return "prompt-aware"; }
        size_t dim() const override { return 2; }
        std::vector<float> embed_image(const MediaItem& item) override {
            return parse(item.uri);
        }
        std::vector<float> embed_text(const MediaItem& item) override {
            if (item.text == "Good photo.") return {1.0f, 0.0f};
            if (item.text == "Bad photo.") return {0.0f, 1.0f};
            if (item.text == "A bright photo.") return {1.0f, 0.0f};
            if (item.text == "A dark photo.") return {0.0f, 1.0f};
            return {1.0f, 1.0f};
        }

    private:
        std::vector<float> parse(const std::string& uri) {
            const size_t pos = uri.find("vec:");
            std::vector<float> out;
            std::stringstream ss(uri.substr(pos + 4));
            std::string tok;
            while (std::getline(ss, tok, ',')) out.push_back(std::stof(tok));
            return out;
        }
    };
    PromptAwareEncoder pe;

    SUBCASE("equidistant candidates score 0.5 each") {
        auto s = iqa_sample("vec:1,1", "vec:2,2");
        const auto [s0, s1] =
            score_sample_encoder(pe, cache, s, IqaScoringMode::PromptPair, 100.0);
        CHECK(s0 == doctest::Approx(0.5));
        CHECK(s1 == doctest::Approx(0.5));
    }
    SUBCASE("closer to the good prompt wins; tau does not change the decision") {
        auto s = iqa_sample("vec:1,0.1", "vec:0.1,1");  // saturating gaps at tau=100
        for (double tau : {1.0, 10.0, 100.0, 1000.0}) {
            const auto [s0, s1] =
                score_sample_encoder(pe, cache, s, IqaScoringMode::PromptPair, tau);
            CHECK(s0 > s1);
        }
    }
    SUBCASE("paa attributes pick their own prompt pair") {
        auto s = iqa_sample("vec:1,0", "vec:0,1");
        s.task = Task::Paa;
        s.ref = MediaItem::make_text("A bright photo.");
        s.meta["attribute"] = "brightness";
        const auto [s0, s1] =
            score_sample_encoder(pe, cache, s, IqaScoringMode::PromptPair, 10.0);
        CHECK(s0 > 0.5);
        CHECK(s1 < 0.5);
        const auto pair = prompt_pair_for(s);
        CHECK(pair.first == "A bright photo.");
        CHECK(pair.second == "A dark photo.");
    }
    SUBCASE("prompt pairs are fixed per attribute") {
        auto s = iqa_sample();
        CHECK(prompt_pair_for(s) == std::make_pair(std::string("Good photo."),
                                                   std::string("Bad photo.")));
        s.task = Task::Paa;
        s.meta["attribute"] = "colorfulness";
        CHECK(prompt_pair_for(s).second == "A dull photo.");
        s.meta["attribute"] = "contrast";
        CHECK(prompt_pair_for(s).first == "A high contrast photo.");
        s.meta["attribute"] = "sharpness";
        CHECK(prompt_pair_for(s).second == "A blurry photo.");
        s.task = Task::Img2afc;
        CHECK_THROWS(prompt_pair_for(s));
    }
}

TEST_CASE("scripted generative backend and the registry") {
    ScriptedGenerative gen;
    gen.add_rule("better quality", "(A) Image 1");
    gen.set_fallback("no idea");
    CHECK(gen.answer("which image has a better quality?", {}) == "(A) Image 1");
    CHECK(gen.answer("unrelated question", {}) == "no idea");

    auto v = make_encoder("vector:4");
    CHECK(v->dim() == 4);
    CHECK(v->backend_id() == "vector-4");
    auto h = make_encoder("hash:16");
    CHECK(h->dim() == 16);
    CHECK_THROWS(make_encoder("bogus:4"));
    CHECK_THROWS(make_encoder("vector"));

    // Hash embeddings: deterministic, unit norm, content-sensitive.
    const auto e1 = h->embed_image(MediaItem::image("img-x"));
    const auto e2 = h->embed_image(MediaItem::image("img-x"));
    const auto e3 = h->embed_image(MediaItem::image("img-y"));
    CHECK(e1 == e2);
    CHECK(e1 != e3);
    double n2 = 0;
    for (float x : e1) n2 += static_cast<double>(x) * x;
    CHECK(std::abs(n2 - 1.0) < 1e-5);
}
