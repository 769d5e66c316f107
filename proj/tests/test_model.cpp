#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "ref_model.hpp"
#include "sst/model.hpp"

using namespace sst;

TEST_CASE("all-zero parameters give a uniform predictive distribution") {
    ModelSnapshot m;
    m.config = oracle::small_config();
    m.params = ParamSet::zeros(m.config);

    const auto sample = oracle::random_sample(3, 4, 6);
    const auto lp = forward_logprobs(m, sample);
    REQUIRE(lp.size() == 6);
    const double expect = -std::log(static_cast<double>(m.config.vocab_size));
    for (double v : lp.logp) {
        CHECK(v == doctest::Approx(expect).epsilon(1e-14));
    }
}

TEST_CASE("log-probs are finite and non-positive") {
    for (uint64_t seed = 0; seed < 8; ++seed) {
        const auto m = oracle::random_model(oracle::small_config(), seed);
        const auto sample = oracle::random_sample(seed + 100, 3, 8);
        const auto lp = forward_logprobs(m, sample);
        REQUIRE(lp.size() == sample.resp_len());
        for (double v : lp.logp) {
            CHECK(std::isfinite(v));
            CHECK(v <= 0.0);
        }
    }
}

TEST_CASE("forward matches the dense reference implementation") {
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        const auto m = oracle::random_model(oracle::small_config(), seed);
        const auto sample = oracle::random_sample(seed + 50, 5, 9);
        const auto lp = forward_logprobs(m, sample);
        const auto ref = refm::reference_forward(m, sample);
        REQUIRE(lp.size() == ref.logprobs.size());
        for (size_t i = 0; i < lp.size(); ++i) {
            CHECK(std::abs(lp.logp[i] - ref.logprobs[i]) <= 1e-10);
        }
    }
}

TEST_CASE("capture does not change the log-probs") {
    const auto m = oracle::random_model(oracle::small_config(), 11);
    const auto sample = oracle::random_sample(12, 4, 7);
    const auto plain = forward_logprobs(m, sample);
    const auto cap = forward_with_capture(m, sample);
    REQUIRE(plain.size() == cap.logprobs.size());
    for (size_t i = 0; i < plain.size(); ++i) {
        // bitwise: the two entry points share one forward implementation
        CHECK(plain.logp[i] == cap.logprobs.logp[i]);
    }
    CHECK(cap.layer == m.config.n_layers - 1);
    CHECK(cap.hidden.size() == sample.total_len() * size_t(m.config.d_model));
}

TEST_CASE("captured states at layer 0 equal the normalized embedding sum") {
    const auto m = oracle::random_model(oracle::small_config(), 21);
    const auto sample = oracle::random_sample(22, 3, 5);
    const auto cap = forward_with_capture(m, sample, 0);
    REQUIRE(cap.layer == 0);

    const auto ref = refm::reference_forward(m, sample);
    const int d = m.config.d_model;
    for (size_t t = 0; t < sample.total_len(); ++t) {
        for (int i = 0; i < d; ++i) {
            CHECK(std::abs(cap.hidden[t * d + i] - ref.ln1_out[0][t][i]) <=
                  1e-12);
        }
    }
}

TEST_CASE("recompute_attention equals the attention of a full forward") {
    for (uint64_t seed = 30; seed < 36; ++seed) {
        const auto m = oracle::random_model(oracle::small_config(), seed);
        const auto sample = oracle::random_sample(seed, 4, 8);
        const auto cap = forward_with_capture(m, sample);
        const auto slice = recompute_attention(m, cap, sample);
        const auto ref = refm::reference_forward(m, sample);

        const size_t L = sample.total_len();
        double max_diff = 0.0;
        for (int h = 0; h < m.config.n_heads; ++h) {
            for (size_t i = 0; i < L; ++i) {
                for (size_t j = 0; j < L; ++j) {
                    max_diff = std::max(
                        max_diff, std::abs(slice.at(h, i, j) -
                                           ref.attention[slice.layer][h][i][j]));
                }
            }
        }
        CHECK(max_diff <= 1e-6);
    }
}

TEST_CASE("attention rows are causal distributions") {
    const auto m = oracle::random_model(oracle::small_config(), 40);
    const auto sample = oracle::random_sample(41, 5, 10);
    const auto cap = forward_with_capture(m, sample);
    const auto slice = recompute_attention(m, cap, sample);
    const size_t L = slice.seq_len;
    for (int h = 0; h < slice.n_heads; ++h) {
        for (size_t i = 0; i < L; ++i) {
            double sum = 0.0;
            for (size_t j = 0; j < L; ++j) {
                const double a = slice.at(h, i, j);
                if (j > i) {
                    CHECK(a == 0.0);  // exact zeros above the diagonal
                } else {
                    CHECK(a >= 0.0);
                    sum += a;
                }
            }
            CHECK(std::abs(sum - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("zero query/key weights give uniform rows over the visible prefix") {
    ModelSnapshot m = oracle::random_model(oracle::small_config(), 50);
    for (auto& layer : m.params.layers) {
        std::fill(layer.wq.data.begin(), layer.wq.data.end(), 0.0);
        std::fill(layer.wk.data.begin(), layer.wk.data.end(), 0.0);
    }
    const auto sample = oracle::random_sample(51, 3, 5);
    const auto cap = forward_with_capture(m, sample);
    const auto slice = recompute_attention(m, cap, sample);
    for (int h = 0; h < slice.n_heads; ++h) {
        for (size_t i = 0; i < slice.seq_len; ++i) {
            for (size_t j = 0; j <= i; ++j) {
                CHECK(slice.at(h, i, j) ==
                      doctest::Approx(1.0 / (i + 1)).epsilon(1e-12));
            }
        }
    }

    SUBCASE("uniform rows give the prompt-fraction attention score") {
        // L_prompt keys of i+1 visible ones
        const auto scores = attn_prompt_mass(slice, sample);
        REQUIRE(scores.size() == sample.resp_len());
        // absolute position 4 with prompt_len 3: 3 of 5 visible keys
        CHECK(scores[1] == doctest::Approx(3.0 / 5.0).epsilon(1e-12));
    }
}

TEST_CASE("attn_prompt_mass averages heads and stays in [0,1]") {
    AttentionSlice slice;
    slice.layer = 0;
    slice.n_heads = 2;
    slice.seq_len = 2;
    slice.att.assign(2 * 2 * 2, 0.0);
    // head 0: row 1 puts 0.2 on the prompt column; head 1 puts 0.8
    slice.att[0 * 4 + 1 * 2 + 0] = 0.2;
    slice.att[0 * 4 + 1 * 2 + 1] = 0.8;
    slice.att[1 * 4 + 1 * 2 + 0] = 0.8;
    slice.att[1 * 4 + 1 * 2 + 1] = 0.2;

    TokenizedSample sample;
    sample.ids = {kUserToken, kEndToken};
    sample.prompt_len = 1;
    const auto scores = attn_prompt_mass(slice, sample);
    REQUIRE(scores.size() == 1);
    CHECK(scores[0] == doctest::Approx(0.5).epsilon(1e-12));

    for (uint64_t seed = 60; seed < 64; ++seed) {
        const auto m = oracle::random_model(oracle::small_config(), seed);
        const auto s = oracle::random_sample(seed, 6, 9);
        const auto cap = forward_with_capture(m, s);
        const auto sl = recompute_attention(m, cap, s);
        for (double v : attn_prompt_mass(sl, s)) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("attn_prompt_mass rejects promptless slices") {
    AttentionSlice slice;
    slice.n_heads = 1;
    slice.seq_len = 3;
    slice.att.assign(9, 0.0);
    TokenizedSample sample;
    sample.ids = {kUserToken, kUserToken, kEndToken};
    sample.prompt_len = 3;  // no response positions
    try {
        (void)attn_prompt_mass(slice, sample);
        FAIL("expected IndexError");
    } catch (const Error& e) {
        CHECK(e.code() == Err::Index);
    }
}

TEST_CASE("causality: a perturbed token changes no earlier log-prob") {
    const auto m = oracle::random_model(oracle::small_config(), 70);
    auto sample = oracle::random_sample(71, 4, 10);
    auto perturbed = sample;
    const size_t p = sample.total_len() - 3;  // inside the response
    perturbed.ids[p] = static_cast<TokenId>((perturbed.ids[p] + 7) % kVocabSize);

    const auto a = forward_logprobs(m, sample);
    const auto b = forward_logprobs(m, perturbed);
    for (size_t i = sample.prompt_len; i < p; ++i) {
        // log P(x_i | x_<i) depends only on ids[0..i]
        CHECK(a.logp[i - sample.prompt_len] == b.logp[i - sample.prompt_len]);
    }
    CHECK(a.logp[p - sample.prompt_len] != b.logp[p - sample.prompt_len]);
}

TEST_CASE("forward is deterministic bitwise") {
    const auto m = oracle::random_model(oracle::small_config(), 80);
    const auto sample = oracle::random_sample(81, 5, 7);
    const auto a = forward_logprobs(m, sample);
    const auto b = forward_logprobs(m, sample);
    CHECK(a.logp == b.logp);
}

TEST_CASE("shape errors") {
    const auto m = oracle::random_model(oracle::small_config(16, 2, 2, 32, 8), 90);
    auto sample = oracle::random_sample(91, 4, 8);  // 12 > max_seq_len 8
    CHECK_THROWS_AS((void)forward_logprobs(m, sample), Error);

    auto bad = oracle::random_sample(92, 2, 3);
    bad.ids[0] = kVocabSize + 5;
    CHECK_THROWS_AS((void)forward_logprobs(m, bad), Error);
}

TEST_CASE("capture overhead stays under twice one layer's activations") {
    ModelConfig c;
    c.d_model = 128;
    c.n_layers = 4;
    c.n_heads = 4;
    c.d_ff = 512;
    c.max_seq_len = 256;
    const size_t L = 256;
    CHECK(capture_bytes(c, L) < 2 * layer_activation_bytes(c, L));

    // and measured on a real capture at the same shape
    const auto m = ModelSnapshot::init(c, 1);
    auto sample = oracle::random_sample(5, 128, 128);
    const auto cap = forward_with_capture(m, sample);
    CHECK(cap.hidden.size() * sizeof(double) ==
          capture_bytes(c, sample.total_len()));
}

#include <filesystem>
#include <fstream>

#include "sst/checkpoint.hpp"

TEST_CASE("checkpoints round-trip parameters, config and role") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "sst_ckpt_tests";
    fs::create_directories(dir);
    const auto path = (dir / "model.ckpt").string();

    auto m = oracle::random_model(oracle::small_config(16, 2, 2, 32, 48), 7);
    m.role = "history";
    m.config.attn_layer_index = 1;
    save_checkpoint(m, path);

    const auto loaded = load_checkpoint(path);
    CHECK(loaded.role == "history");
    CHECK(loaded.config == m.config);
    auto ta = m.params.named_tensors();
    auto tb = loaded.params.named_tensors();
    for (size_t t = 0; t < ta.size(); ++t) {
        CHECK(ta[t].second->data == tb[t].second->data);  // bitwise
        CHECK(ta[t].second->shape == tb[t].second->shape);
    }

    SUBCASE("identical snapshots serialize to identical bytes") {
        const auto path2 = (dir / "model2.ckpt").string();
        save_checkpoint(m, path2);
        std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
        std::string ba((std::istreambuf_iterator<char>(a)),
                       std::istreambuf_iterator<char>());
        std::string bb((std::istreambuf_iterator<char>(b)),
                       std::istreambuf_iterator<char>());
        CHECK(ba == bb);
    }
}

TEST_CASE("checkpoint loading rejects damaged files") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "sst_ckpt_tests";
    fs::create_directories(dir);

    try {
        (void)load_checkpoint("/nonexistent/model.ckpt");
        FAIL("expected IoError");
    } catch (const Error& e) {
        CHECK(e.code() == Err::Io);
    }

    const auto bad_magic = (dir / "bad_magic.ckpt").string();
    {
        std::ofstream out(bad_magic, std::ios::binary);
        out << "NOTACKPT garbage";
    }
    try {
        (void)load_checkpoint(bad_magic);
        FAIL("expected FormatError");
    } catch (const Error& e) {
        CHECK(e.code() == Err::Format);
    }

    // truncating the tensor payload must be detected
    const auto good = (dir / "trunc_src.ckpt").string();
    const auto m = oracle::random_model(oracle::small_config(16, 1, 2, 32, 48), 8);
    save_checkpoint(m, good);
    const auto truncated = (dir / "trunc.ckpt").string();
    {
        std::ifstream in(good, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
        std::ofstream out(truncated, std::ios::binary);
        out.write(bytes.data(),
                  static_cast<std::streamsize>(bytes.size() - 64));
    }
    CHECK_THROWS_AS((void)load_checkpoint(truncated), Error);
}
