#include "sstoken.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "sst/checkpoint.hpp"
#include "sst/harness.hpp"

namespace fs = std::filesystem;

struct sst_corpus {
    sst::Corpus corpus;
};

struct sst_model {
    sst::ModelSnapshot model;
};

namespace {

thread_local std::string g_last_error = "";

int set_error(const std::exception& e) {
    g_last_error = e.what();
    if (const auto* err = dynamic_cast<const sst::Error*>(&e)) {
        switch (err->code()) {
            case sst::Err::Io: return SST_ERR_IO;
            case sst::Err::Format: return SST_ERR_FORMAT;
            case sst::Err::Shape:
            case sst::Err::LengthMismatch: return SST_ERR_SHAPE;
            case sst::Err::Internal: return SST_ERR_INTERNAL;
            default: return SST_ERR_INVALID;
        }
    }
    return SST_ERR_INTERNAL;
}

int invalid_arg(const char* what) {
    g_last_error = what;
    return SST_ERR_INVALID;
}

char* dup_string(const std::string& s) {
    char* out = new char[s.size() + 1];
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

void copy_path(const std::string& s, char* dst, size_t cap) {
    if (!dst || cap == 0) return;
    const size_t n = std::min(cap - 1, s.size());
    std::memcpy(dst, s.data(), n);
    dst[n] = '\0';
}

template <typename F>
int guarded(F&& f) {
    try {
        f();
        return SST_OK;
    } catch (const std::exception& e) {
        return set_error(e);
    } catch (...) {
        g_last_error = "unknown error";
        return SST_ERR_INTERNAL;
    }
}

}  // namespace

extern "C" {

const char* sst_version(void) { return "0.1.0"; }

const char* sst_last_error(void) { return g_last_error.c_str(); }

void sst_string_free(char* s) { delete[] s; }

int sst_gen_corpus(const char* out_dir, long train_samples,
                   long heldout_samples, double noise_rate,
                   unsigned long long seed) {
    if (!out_dir) return invalid_arg("out_dir is NULL");
    return guarded([&] {
        sst::GenOptions opts;
        opts.train_samples = train_samples;
        opts.heldout_samples = heldout_samples;
        opts.noise_rate = noise_rate;
        opts.seed = seed;
        sst::gen_synthetic_corpus(out_dir, opts);
    });
}

int sst_corpus_open(const char* jsonl_path, long max_seq_len,
                    sst_corpus** out) {
    if (!jsonl_path || !out) return invalid_arg("NULL argument");
    *out = nullptr;
    return guarded([&] {
        sst::TemplateSpec tmpl;
        if (max_seq_len > 0) tmpl.max_seq_len = static_cast<size_t>(max_seq_len);
        auto corpus = sst::load_corpus(jsonl_path, tmpl, 0);
        *out = new sst_corpus{std::move(corpus)};
    });
}

void sst_corpus_close(sst_corpus* corpus) { delete corpus; }

long sst_corpus_size(const sst_corpus* corpus) {
    return corpus ? static_cast<long>(corpus->corpus.size()) : -1;
}

long sst_corpus_skipped(const sst_corpus* corpus) {
    return corpus ? static_cast<long>(corpus->corpus.skipped.total()) : -1;
}

int sst_model_load(const char* checkpoint_path, sst_model** out) {
    if (!checkpoint_path || !out) return invalid_arg("NULL argument");
    *out = nullptr;
    return guarded([&] {
        *out = new sst_model{sst::load_checkpoint(checkpoint_path)};
    });
}

void sst_model_close(sst_model* model) { delete model; }

int sst_model_config_json(const sst_model* model, char** out_json) {
    if (!model || !out_json) return invalid_arg("NULL argument");
    return guarded([&] {
        const auto& c = model->model.config;
        nlohmann::json j{{"vocab_size", c.vocab_size},
                         {"d_model", c.d_model},
                         {"n_layers", c.n_layers},
                         {"n_heads", c.n_heads},
                         {"d_ff", c.d_ff},
                         {"max_seq_len", c.max_seq_len},
                         {"attn_layer_index", c.attn_layer_index},
                         {"role", model->model.role}};
        *out_json = dup_string(j.dump());
    });
}

int sst_run_json(const char* config_json, char* run_dir_out,
                 size_t run_dir_cap) {
    if (!config_json) return invalid_arg("config_json is NULL");
    return guarded([&] {
        const auto cfg = sst::RunConfig::from_json_text(config_json);
        const auto [row, dir] = sst::run_one(cfg);
        (void)row;
        copy_path(dir, run_dir_out, run_dir_cap);
    });
}

int sst_run_file(const char* config_path, char* run_dir_out,
                 size_t run_dir_cap) {
    if (!config_path) return invalid_arg("config_path is NULL");
    return guarded([&] {
        const auto cfg = sst::RunConfig::from_json_file(config_path);
        const auto [row, dir] = sst::run_one(cfg);
        (void)row;
        copy_path(dir, run_dir_out, run_dir_cap);
    });
}

int sst_sweep_file(const char* plan_path) {
    if (!plan_path) return invalid_arg("plan_path is NULL");
    return guarded([&] {
        const auto plan = sst::ExperimentPlan::from_json_file(plan_path);
        sst::run_plan(plan);
    });
}

int sst_summarize(const char* runs_dir, const char* out_csv_path) {
    if (!runs_dir || !out_csv_path) return invalid_arg("NULL argument");
    return guarded([&] {
        std::vector<sst::MetricsRow> rows;
        std::vector<fs::path> dirs;
        for (const auto& entry : fs::directory_iterator(runs_dir)) {
            if (entry.is_directory() &&
                fs::exists(entry.path() / "metrics.json")) {
                dirs.push_back(entry.path());
            }
        }
        std::sort(dirs.begin(), dirs.end());
        for (const auto& d : dirs) rows.push_back(sst::read_metrics(d.string()));
        if (rows.empty()) {
            sst::fail(sst::Err::EmptyInput,
                      std::string("no completed runs under ") + runs_dir);
        }
        std::ofstream out(out_csv_path, std::ios::trunc);
        if (!out) {
            sst::fail(sst::Err::Io, std::string("cannot write ") + out_csv_path);
        }
        out << sst::summarize(rows);
    });
}

int sst_render(const char* run_dir, long sample_index, const char* html_path,
               const char* text_path) {
    if (!run_dir) return invalid_arg("run_dir is NULL");
    return guarded([&] {
        const auto cfg = sst::RunConfig::from_json_file(
            (fs::path(run_dir) / "config.json").string());
        sst::TemplateSpec tmpl;
        tmpl.max_seq_len = static_cast<size_t>(cfg.model.max_seq_len);
        const auto corpus = sst::load_corpus(cfg.train_path, tmpl, cfg.seed);

        std::ifstream masks((fs::path(run_dir) / "masks.jsonl").string());
        if (!masks) sst::fail(sst::Err::Io, "run has no masks.jsonl");
        std::string line;
        bool found = false;
        sst::TokenScores scores;
        sst::SelectionMask mask;
        while (std::getline(masks, line)) {
            if (line.empty()) continue;
            auto j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded()) continue;
            if (j.value("sample", -1L) != sample_index) continue;
            mask.rho = j.value("rho", 1.0);
            mask.k = j.value("k", size_t{0});
            scores.gamma = j.value("gamma", 0.5);
            const std::string bits = j.value("bits", "");
            mask.bits.assign(bits.size(), 0);
            for (size_t i = 0; i < bits.size(); ++i) {
                mask.bits[i] = bits[i] == '1';
            }
            for (const auto& tok : j["tokens"]) {
                scores.fused.push_back(tok.value("fused", 0.0));
                scores.rel_norm.push_back(tok.value("rel_norm", 0.0));
                scores.attn.push_back(tok.value("attn", 0.0));
            }
            found = true;
            break;
        }
        if (!found) {
            sst::fail(sst::Err::Index,
                      "sample " + std::to_string(sample_index) +
                          " not present in mask export");
        }
        if (sample_index < 0 ||
            static_cast<size_t>(sample_index) >= corpus.size()) {
            sst::fail(sst::Err::Index, "sample index out of corpus range");
        }
        const auto& sample = corpus.samples[static_cast<size_t>(sample_index)];

        // The pure loss-delta mask marks attention-dominant tokens; only
        // meaningful for the fused selector.
        sst::SelectionMask g1 =
            cfg.selector.kind == sst::SelectorKind::sstoken
                ? sst::select_topk(scores.rel_norm, mask.rho)
                : mask;
        const auto rendered = sst::render_selection(sample, scores, mask, g1);
        if (html_path) {
            std::ofstream out(html_path, std::ios::trunc);
            if (!out) sst::fail(sst::Err::Io, "cannot write html output");
            out << rendered.html;
        }
        if (text_path) {
            std::ofstream out(text_path, std::ios::trunc);
            if (!out) sst::fail(sst::Err::Io, "cannot write text output");
            out << rendered.text;
        }
    });
}

int sst_score_sample(const sst_model* current, const sst_model* history,
                     const sst_corpus* corpus, long sample_index, double gamma,
                     double rho, int attn_layer, char** out_json) {
    if (!current || !history || !corpus || !out_json) {
        return invalid_arg("NULL argument");
    }
    return guarded([&] {
        if (sample_index < 0 ||
            static_cast<size_t>(sample_index) >= corpus->corpus.size()) {
            sst::fail(sst::Err::Index, "sample index out of range");
        }
        sst::SelectorSpec spec;
        spec.kind = sst::SelectorKind::sstoken;
        spec.gamma = gamma;
        spec.rho = rho;
        spec.attn_layer = attn_layer;
        const auto& sample =
            corpus->corpus.samples[static_cast<size_t>(sample_index)];
        const auto scored = sst::score_sample(current->model, &history->model,
                                              sample, spec,
                                              static_cast<uint64_t>(sample_index));
        nlohmann::json j =
            nlohmann::json::parse(sst::mask_export_line(
                static_cast<size_t>(sample_index), scored.scores, scored.mask));
        j["rel"] = scored.scores.rel;
        *out_json = dup_string(j.dump());
    });
}

}  // extern "C"
