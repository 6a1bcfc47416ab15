#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "unisim/core.hpp"

using namespace unisim;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    const fs::path dir = fs::temp_directory_path() / "unisim-test-core";
    fs::create_directories(dir);
    return dir;
}

TripletSample sample_iqa() {
    TripletSample s;
    s.task = Task::Iqa;
    s.dataset_id = "koniq10k_iqa";
    s.ref = MediaItem::make_text(kIqaReferencePrompt);
    s.cand[0] = MediaItem::image("img/a.png");
    s.cand[1] = MediaItem::image("img/b.png");
    s.label = 0;
    s.meta["note"] = "kept verbatim";
    return s;
}

}  // namespace

TEST_CASE("text hashing is deterministic and strips trailing whitespace") {
    const auto a = canonical_hash(MediaItem::make_text("a"));
    CHECK(a == canonical_hash(MediaItem::make_text("a")));
    CHECK(a == canonical_hash(MediaItem::make_text("a ")));
    CHECK(a == canonical_hash(MediaItem::make_text("a\n")));
    CHECK(a == canonical_hash(MediaItem::make_text("a \t\r\n")));
    CHECK(a != canonical_hash(MediaItem::make_text(" a")));
    CHECK(a.size() == 64);
}

TEST_CASE("image hashing reads raw bytes") {
    const fs::path dir = temp_dir();
    const fs::path f1 = dir / "one.bin";
    const fs::path f2 = dir / "two.bin";
    std::ofstream(f1, std::ios::binary) << "payload-one";
    std::ofstream(f2, std::ios::binary) << "payload-two";
    const auto h1 = canonical_hash(MediaItem::image(f1.string()));
    const auto h2 = canonical_hash(MediaItem::image(f2.string()));
    CHECK(h1 != h2);
    CHECK(h1 == canonical_hash(MediaItem::image(f1.string())));
    CHECK_THROWS_AS(canonical_hash(MediaItem::image((dir / "missing.bin").string())), IoError);
}

TEST_CASE("sha256 matches the published test vector") {
    // FIPS 180-2 vector for "abc".
    CHECK(sha256_hex("abc", 3) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("no hash collisions across a corpus of distinct contents") {
    std::set<std::string> digests;
    for (int i = 0; i < 2000; ++i) {
        digests.insert(canonical_hash(MediaItem::make_text("corpus item " + std::to_string(i))));
    }
    CHECK(digests.size() == 2000);
}

TEST_CASE("validate_sample enforces modality patterns") {
    SUBCASE("img2afc with text ref") {
        TripletSample s;
        s.task = Task::Img2afc;
        s.ref = MediaItem::make_text("not an image");
        s.cand[0] = MediaItem::image("a");
        s.cand[1] = MediaItem::image("b");
        const auto v = validate_sample(s);
        REQUIRE(!v.empty());
        CHECK(v.front() == "ref must be image");
    }
    SUBCASE("iqa with the fixed reference prompt is ok") {
        CHECK(validate_sample(sample_iqa()).empty());
    }
    SUBCASE("label out of range") {
        auto s = sample_iqa();
        s.label = 2;
        CHECK(!validate_sample(s).empty());
    }
    SUBCASE("it2afc wants text ref and image candidates") {
        TripletSample s;
        s.task = Task::It2afc;
        s.ref = MediaItem::make_text("a prompt");
        s.cand[0] = MediaItem::image("a");
        s.cand[1] = MediaItem::image("b");
        CHECK(validate_sample(s).empty());
        s.cand[1] = MediaItem::make_text("oops");
        CHECK(!validate_sample(s).empty());
    }
    SUBCASE("text2afc wants image ref and text candidates") {
        TripletSample s;
        s.task = Task::Text2afc;
        s.ref = MediaItem::image("a");
        s.cand[0] = MediaItem::make_text("x");
        s.cand[1] = MediaItem::make_text("y");
        CHECK(validate_sample(s).empty());
    }
    SUBCASE("paa needs a valid attribute in meta") {
        auto s = sample_iqa();
        s.task = Task::Paa;
        CHECK(!validate_sample(s).empty());
        s.meta["attribute"] = "brightness";
        CHECK(validate_sample(s).empty());
        s.meta["attribute"] = "loudness";
        CHECK(!validate_sample(s).empty());
    }
    SUBCASE("ooo sample checks") {
        OddOneOutSample s;
        s.items[0] = MediaItem::image("a");
        s.items[1] = MediaItem::image("b");
        s.items[2] = MediaItem::image("c");
        s.odd_index = 2;
        CHECK(validate_sample(s).empty());
        s.odd_index = 3;
        CHECK(!validate_sample(s).empty());
        s.odd_index = 0;
        s.items[1] = MediaItem::make_text("oops");
        CHECK(!validate_sample(s).empty());
    }
}

TEST_CASE("triplet serialization round-trips field by field") {
    const auto s = sample_iqa();
    const std::string line = serialize_line(s);
    const TripletSample back = parse_triplet_line(line);
    CHECK(back == s);

    // Exact wire field names per the schema contract.
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("schema") == kTripletSchema);
    CHECK(j.contains("task"));
    CHECK(j.at("dataset") == "koniq10k_iqa");
    CHECK(j.at("ref").at("kind") == "text");
    CHECK(j.at("ref").contains("text"));
    CHECK(j.at("cand").size() == 2);
    CHECK(j.at("cand")[0].at("kind") == "image");
    CHECK(j.at("cand")[0].contains("uri"));
    CHECK(j.at("label") == 0);
    CHECK(j.at("meta").at("note") == "kept verbatim");
}

TEST_CASE("ooo and retrieval lines round-trip") {
    OddOneOutSample s;
    s.dataset_id = "cifar100_ooo";
    s.items[0] = MediaItem::image("a");
    s.items[1] = MediaItem::image("b");
    s.items[2] = MediaItem::image("c");
    s.odd_index = 1;
    const std::string line = serialize_line(s);
    CHECK(parse_ooo_line(line) == s);
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("schema") == kOooSchema);
    CHECK(j.at("items").size() == 3);
    CHECK(j.at("odd") == 1);

    RetrievalSplit split;
    split.dataset_id = "roxford";
    split.queries = {MediaItem::image("q0"), MediaItem::image("q1")};
    split.gallery = {MediaItem::image("g0"), MediaItem::image("g1"), MediaItem::image("g2")};
    split.relevance["medium"] = {{{0, 2}, {1}}, {{1}, {}}};
    split.relevance["hard"] = {{{2}, {}}, {{}, {0}}};
    CHECK(parse_retrieval_line(serialize_line(split)) == split);
}

TEST_CASE("jsonl files use LF endings and preserve order") {
    const fs::path path = temp_dir() / "roundtrip.jsonl";
    std::vector<TripletSample> samples;
    for (int i = 0; i < 5; ++i) {
        auto s = sample_iqa();
        s.meta["i"] = std::to_string(i);
        samples.push_back(s);
    }
    write_triplet_file(path.string(), samples);

    std::ifstream in(path, std::ios::binary);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(content.find('\r') == std::string::npos);
    CHECK(read_triplet_file(path.string()) == samples);
}

TEST_CASE("task and attribute names round-trip") {
    for (Task t : {Task::Img2afc, Task::It2afc, Task::Text2afc, Task::Iqa, Task::Paa, Task::Ooo,
                   Task::Retrieval}) {
        CHECK(task_from_string(to_string(t)) == t);
    }
    for (PaaAttribute a : {PaaAttribute::Brightness, PaaAttribute::Colorfulness,
                           PaaAttribute::Contrast, PaaAttribute::Sharpness}) {
        CHECK(paa_attribute_from_string(to_string(a)) == a);
    }
    CHECK_THROWS(task_from_string("bogus"));
}
