#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "unisim.h"

namespace fs = std::filesystem;

namespace {

const std::string kFixtures = UNISIM_FIXTURES;

fs::path scratch_dir(const std::string& leaf) {
    const fs::path p = fs::temp_directory_path() / "unisim-test-capi" / leaf;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

struct Ctx {
    unisim_ctx* p = unisim_ctx_new();
    ~Ctx() { unisim_ctx_free(p); }
};

}  // namespace

TEST_CASE("version and scalar helpers") {
    CHECK(std::string(unisim_version()) == "0.1.0");

    const double u[2] = {1, 0};
    const double v[2] = {0, 1};
    double out = -1;
    CHECK(unisim_cosine(u, v, 2, &out) == UNISIM_OK);
    CHECK(out == doctest::Approx(0.0));
    CHECK(unisim_cosine(u, u, 2, &out) == UNISIM_OK);
    CHECK(out == doctest::Approx(1.0));
    CHECK(unisim_cosine(nullptr, v, 2, &out) == UNISIM_ERR_CONFIG);
    const double zero[2] = {0, 0};
    CHECK(unisim_cosine(u, zero, 2, &out) == UNISIM_ERR_RUNTIME);

    CHECK(unisim_hinge_loss(0.9, 0.1, 1, 0.05, &out) == UNISIM_OK);
    CHECK(out == doctest::Approx(0.85));
    CHECK(unisim_hinge_loss(0.9, 0.1, 2, 0.05, &out) == UNISIM_ERR_CONFIG);
    CHECK(unisim_hinge_loss(0.9, 0.1, 1, -0.1, &out) == UNISIM_ERR_CONFIG);

    const double scores[3] = {0.2, 0.9, 0.1};
    int idx = -1;
    CHECK(unisim_decide_nafc(scores, 3, &idx) == UNISIM_OK);
    CHECK(idx == 1);
    CHECK(unisim_decide_nafc(scores, 1, &idx) == UNISIM_ERR_CONFIG);
}

TEST_CASE("context error reporting") {
    Ctx ctx;
    CHECK(std::string(unisim_last_error(ctx.p)).empty());
    CHECK(unisim_ingest(ctx.p, "no-such-set", "/tmp", "/tmp", 0, nullptr) == UNISIM_ERR_CONFIG);
    CHECK(std::string(unisim_last_error(ctx.p)).find("no-such-set") != std::string::npos);
    CHECK(unisim_last_error(nullptr) != nullptr);
    CHECK(unisim_ingest(nullptr, "nights", "/tmp", "/tmp", 0, nullptr) == UNISIM_ERR_CONFIG);
}

TEST_CASE("ingest emits canonical files through the C surface") {
    Ctx ctx;
    const fs::path out = scratch_dir("ingest");
    size_t count = 0;
    const int rc = unisim_ingest(ctx.p, "nights", (kFixtures + "/nights").c_str(),
                                 out.string().c_str(), 7, &count);
    REQUIRE(rc == UNISIM_OK);
    CHECK(count == 12);
    CHECK(std::string(unisim_last_error(ctx.p)).empty());
    bool found_samples = false, found_manifest = false;
    for (const auto& e : fs::recursive_directory_iterator(out)) {
        if (e.path().extension() == ".jsonl") found_samples = true;
        if (e.path().filename().string().ends_with(".manifest.json")) found_manifest = true;
    }
    CHECK(found_samples);
    CHECK(found_manifest);
}

TEST_CASE("eval maps clean, partial and broken runs onto status codes") {
    Ctx ctx;
    const fs::path work = scratch_dir("eval");
    size_t n = 0;
    REQUIRE(unisim_ingest(ctx.p, "nights", (kFixtures + "/nights").c_str(),
                          (work / "canon").string().c_str(), 5, &n) == UNISIM_OK);
    REQUIRE(unisim_ingest(ctx.p, "imagereward", (kFixtures + "/imagereward").c_str(),
                          (work / "canon").string().c_str(), 5, &n) == UNISIM_OK);

    auto write_cfg = [&](const fs::path& path, const std::string& backends,
                         const std::string& datasets) {
        std::ofstream(path) << "{\"backends\":[" << backends << "],\"datasets\":[" << datasets
                            << "],\"out_dir\":\"" << (work / "run").string()
                            << "\",\"cache_dir\":\"" << (work / "cache").string()
                            << "\",\"seed\":3}";
    };
    const std::string nights_ds = "{\"name\":\"nights\",\"task\":\"img2afc\",\"path\":\"" +
                                  (work / "canon" / "nights.jsonl").string() + "\"}";
    const std::string ir_ds = "{\"name\":\"imagereward\",\"task\":\"it2afc\",\"path\":\"" +
                              (work / "canon" / "imagereward.jsonl").string() + "\"}";

    write_cfg(work / "clean.json", "{\"id\":\"h\",\"spec\":\"hash:4\"}", nights_ds + "," + ir_ds);
    CHECK(unisim_eval(ctx.p, (work / "clean.json").string().c_str(), nullptr, nullptr) ==
          UNISIM_OK);
    CHECK(fs::exists(work / "run" / "report.json"));

    // The literal-vector backend cannot embed the text prompts: partial run.
    write_cfg(work / "partial.json", "{\"id\":\"v\",\"spec\":\"vector:4\"}",
              nights_ds + "," + ir_ds);
    CHECK(unisim_eval(ctx.p, (work / "partial.json").string().c_str(), nullptr, nullptr) ==
          UNISIM_ERR_PARTIAL);
    CHECK(std::string(unisim_last_error(ctx.p)).find("imagereward") != std::string::npos);

    // Task filter cuts the failing dataset back out.
    CHECK(unisim_eval(ctx.p, (work / "partial.json").string().c_str(), nullptr, "img2afc") ==
          UNISIM_OK);
    CHECK(unisim_eval(ctx.p, (work / "partial.json").string().c_str(), "nope", nullptr) ==
          UNISIM_ERR_CONFIG);
    CHECK(unisim_eval(ctx.p, (work / "partial.json").string().c_str(), nullptr, "retrieval") ==
          UNISIM_ERR_CONFIG);
    CHECK(unisim_eval(ctx.p, (work / "absent.json").string().c_str(), nullptr, nullptr) ==
          UNISIM_ERR_CONFIG);
}

TEST_CASE("report render returns heap strings per format") {
    Ctx ctx;
    const fs::path work = scratch_dir("render");
    size_t n = 0;
    REQUIRE(unisim_ingest(ctx.p, "nights", (kFixtures + "/nights").c_str(),
                          (work / "canon").string().c_str(), 5, &n) == UNISIM_OK);
    std::ofstream(work / "cfg.json")
        << "{\"backends\":[{\"id\":\"h\",\"spec\":\"hash:4\"}],\"datasets\":[{\"name\":"
           "\"nights\",\"task\":\"img2afc\",\"path\":\""
        << (work / "canon" / "nights.jsonl").string() << "\"}],\"out_dir\":\""
        << (work / "run").string() << "\",\"cache_dir\":\"" << (work / "cache").string() << "\"}";
    REQUIRE(unisim_eval(ctx.p, (work / "cfg.json").string().c_str(), nullptr, nullptr) ==
            UNISIM_OK);

    for (const std::string fmt : {"json", "csv", "radar"}) {
        char* out = nullptr;
        REQUIRE(unisim_report_render(ctx.p, (work / "run").string().c_str(), fmt.c_str(), &out) ==
                UNISIM_OK);
        REQUIRE(out != nullptr);
        CHECK(std::strlen(out) > 0);
        unisim_string_free(out);
    }
    char* out = nullptr;
    CHECK(unisim_report_render(ctx.p, (work / "run").string().c_str(), "xml", &out) ==
          UNISIM_ERR_CONFIG);
    CHECK(unisim_report_render(ctx.p, (work / "nowhere").string().c_str(), "json", &out) ==
          UNISIM_ERR_CONFIG);
}

TEST_CASE("train runs the toy fit from a config file") {
    Ctx ctx;
    const fs::path work = scratch_dir("train");
    size_t n = 0;
    REQUIRE(unisim_ingest(ctx.p, "nights", (kFixtures + "/nights").c_str(),
                          (work / "canon").string().c_str(), 5, &n) == UNISIM_OK);
    const std::string triplets = (work / "canon" / "nights.jsonl").string();

    std::ofstream(work / "train.json")
        << "{\"tasks\":[\"" << triplets << "\"],\"out_dir\":\"" << (work / "ckpt").string()
        << "\",\"feature_dim\":4,\"embed_dim\":4,\"total_steps\":20,\"warmup_steps\":5,"
           "\"max_lr\":0.01,\"weight_decay\":0.0,\"lora_dropout\":0.0,\"seed\":1}";
    REQUIRE(unisim_train(ctx.p, (work / "train.json").string().c_str()) == UNISIM_OK);
    CHECK(fs::exists(work / "ckpt" / "adapter.json"));
    CHECK(fs::exists(work / "ckpt" / "trace.csv"));

    std::ofstream(work / "nosteps.json") << "{\"tasks\":[\"" << triplets << "\"]}";
    CHECK(unisim_train(ctx.p, (work / "nosteps.json").string().c_str()) == UNISIM_ERR_CONFIG);
    std::ofstream(work / "notasks.json") << "{\"total_steps\":10}";
    CHECK(unisim_train(ctx.p, (work / "notasks.json").string().c_str()) == UNISIM_ERR_CONFIG);
    CHECK(unisim_train(ctx.p, nullptr) == UNISIM_ERR_CONFIG);
}

TEST_CASE("nafc sweep writes the accuracy CSV") {
    Ctx ctx;
    const fs::path work = scratch_dir("nafc");
    const std::string groups = kFixtures + "/hpdv2/ranked_groups.jsonl";
    const std::string csv = (work / "nafc.csv").string();
    REQUIRE(unisim_nafc(ctx.p, groups.c_str(), "hash:8", 2, 4, 9, csv.c_str()) == UNISIM_OK);

    std::ifstream in(csv);
    std::string header;
    REQUIRE(std::getline(in, header));
    CHECK(header == "n,accuracy,instances,skipped_groups");
    size_t rows = 0;
    std::string line;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 3);

    CHECK(unisim_nafc(ctx.p, groups.c_str(), "hash:8", 1, 4, 9, csv.c_str()) ==
          UNISIM_ERR_CONFIG);
    CHECK(unisim_nafc(ctx.p, (work / "none.jsonl").string().c_str(), "hash:8", 2, 4, 9,
                      csv.c_str()) != UNISIM_OK);
    CHECK(unisim_nafc(ctx.p, groups.c_str(), "warp:8", 2, 4, 9, csv.c_str()) ==
          UNISIM_ERR_CONFIG);
}
