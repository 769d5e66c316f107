// Exercises the shared-library surface the way an external caller would:
// only sstoken.h, opaque handles, status codes.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "sstoken.h"

namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
    const auto dir = fs::temp_directory_path() / "sst_capi_tests" / tag;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string micro_run_config(const fs::path& data, const fs::path& out,
                             const std::string& selector, int seed) {
    return std::string("{") + "\"train_path\":\"" +
           (data / "train.jsonl").string() + "\"," + "\"heldout_path\":\"" +
           (data / "heldout.jsonl").string() + "\"," + "\"out_dir\":\"" +
           out.string() + "\"," + "\"selector\":\"" + selector + "\"," +
           "\"model\":{\"d_model\":16,\"n_layers\":2,\"n_heads\":2,"
           "\"d_ff\":32,\"max_seq_len\":128}," +
           "\"epochs\":1,\"batch_size\":8,\"export_masks\":-1,\"seed\":" +
           std::to_string(seed) + "}";
}

}  // namespace

TEST_CASE("version and error strings are always available") {
    CHECK(sst_version() != nullptr);
    CHECK(sst_last_error() != nullptr);
}

TEST_CASE("corpus and model handles round-trip through a full run") {
    const auto data = fresh_dir("data");
    const auto out = fresh_dir("runs");

    REQUIRE(sst_gen_corpus(data.string().c_str(), 24, 8, 0.3, 11) == SST_OK);

    sst_corpus* corpus = nullptr;
    REQUIRE(sst_corpus_open((data / "train.jsonl").string().c_str(), 128,
                            &corpus) == SST_OK);
    REQUIRE(corpus != nullptr);
    CHECK(sst_corpus_size(corpus) == 24);
    CHECK(sst_corpus_skipped(corpus) == 0);

    char run_dir[1024] = {0};
    const auto config = micro_run_config(data, out, "sstoken", 3);
    REQUIRE(sst_run_json(config.c_str(), run_dir, sizeof(run_dir)) == SST_OK);
    CHECK(std::strlen(run_dir) > 0);

    sst_model* model = nullptr;
    const auto ckpt = (fs::path(run_dir) / "model.ckpt").string();
    REQUIRE(sst_model_load(ckpt.c_str(), &model) == SST_OK);
    REQUIRE(model != nullptr);

    char* cfg_json = nullptr;
    REQUIRE(sst_model_config_json(model, &cfg_json) == SST_OK);
    REQUIRE(cfg_json != nullptr);
    CHECK(std::string(cfg_json).find("\"d_model\":16") != std::string::npos);
    sst_string_free(cfg_json);

    // score one sample: trained model vs. itself as history
    char* score_json = nullptr;
    REQUIRE(sst_score_sample(model, model, corpus, 0, 0.5, 0.6, -1,
                             &score_json) == SST_OK);
    REQUIRE(score_json != nullptr);
    const std::string scored(score_json);
    CHECK(scored.find("\"bits\"") != std::string::npos);
    CHECK(scored.find("\"fused\"") != std::string::npos);
    CHECK(scored.find("\"rel\"") != std::string::npos);
    sst_string_free(score_json);

    // render the first exported sample
    const auto html = (out / "sample0.html").string();
    const auto text = (out / "sample0.txt").string();
    REQUIRE(sst_render(run_dir, 0, html.c_str(), text.c_str()) == SST_OK);
    CHECK(fs::file_size(html) > 0);
    CHECK(fs::file_size(text) > 0);

    // a second run then a summary over both
    const auto config2 = micro_run_config(data, out, "full", 3);
    REQUIRE(sst_run_json(config2.c_str(), nullptr, 0) == SST_OK);
    const auto summary = (out / "summary.csv").string();
    REQUIRE(sst_summarize(out.string().c_str(), summary.c_str()) == SST_OK);
    std::ifstream in(summary);
    std::string all((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
    CHECK(all.find("sstoken") != std::string::npos);
    CHECK(all.find("full") != std::string::npos);

    sst_model_close(model);
    sst_corpus_close(corpus);
}

TEST_CASE("run configs from files behave like inline JSON") {
    const auto data = fresh_dir("file_data");
    const auto out = fresh_dir("file_runs");
    REQUIRE(sst_gen_corpus(data.string().c_str(), 12, 4, 0.2, 5) == SST_OK);

    const auto cfg_path = (data / "run.json").string();
    {
        std::ofstream f(cfg_path);
        f << micro_run_config(data, out, "random", 9);
    }
    char run_dir[1024] = {0};
    REQUIRE(sst_run_file(cfg_path.c_str(), run_dir, sizeof(run_dir)) == SST_OK);
    CHECK(fs::exists(fs::path(run_dir) / "metrics.json"));
}

TEST_CASE("failures come back as status codes with messages") {
    CHECK(sst_gen_corpus(nullptr, 10, 2, 0.1, 1) == SST_ERR_INVALID);
    CHECK(std::strlen(sst_last_error()) > 0);

    sst_corpus* corpus = nullptr;
    CHECK(sst_corpus_open("/nonexistent/corpus.jsonl", 64, &corpus) ==
          SST_ERR_IO);
    CHECK(corpus == nullptr);

    sst_model* model = nullptr;
    CHECK(sst_model_load("/nonexistent/model.ckpt", &model) == SST_ERR_IO);

    // invalid JSON config
    CHECK(sst_run_json("not json at all", nullptr, 0) == SST_ERR_FORMAT);

    // out-of-domain selector parameters
    const auto data = fresh_dir("err_data");
    REQUIRE(sst_gen_corpus(data.string().c_str(), 6, 2, 0.1, 1) == SST_OK);
    const std::string bad_gamma =
        std::string("{\"train_path\":\"") + (data / "train.jsonl").string() +
        "\",\"gamma\":2.5}";
    CHECK(sst_run_json(bad_gamma.c_str(), nullptr, 0) == SST_ERR_INVALID);

    CHECK(sst_corpus_size(nullptr) == -1);
    CHECK(sst_summarize(data.string().c_str(), (data / "s.csv").string().c_str()) ==
          SST_ERR_INVALID);
}

TEST_CASE("gen-corpus rejects a degenerate noise rate") {
    const auto dir = fresh_dir("bad_noise");
    CHECK(sst_gen_corpus(dir.string().c_str(), 10, 2, 1.0, 1) ==
          SST_ERR_INVALID);
}
