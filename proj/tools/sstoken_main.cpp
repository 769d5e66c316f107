// Command-line driver for the sstoken laboratory. Talks to the shared
// library strictly through the C API in sstoken.h.

#include <cctype>
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sstoken.h"

namespace {

int report(int status, const char* what) {
    if (status != SST_OK) {
        std::fprintf(stderr, "%s failed: %s\n", what, sst_last_error());
    }
    return status;
}

// Assembles the run-config JSON from CLI flags without pulling a JSON
// library into the CLI; values are numeric or escaped-free paths.
std::string json_str(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    out += '"';
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ssToken laboratory: token-selection SFT experiments"};
    app.require_subcommand(1);

    // gen-corpus
    auto* gen = app.add_subcommand("gen-corpus",
                                   "generate a synthetic noisy corpus");
    std::string gen_out = "data";
    long gen_train = 2000, gen_heldout = 200;
    double gen_noise = 0.3;
    unsigned long long gen_seed = 1;
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--train-samples", gen_train, "training samples");
    gen->add_option("--heldout-samples", gen_heldout, "held-out samples");
    gen->add_option("--noise-rate", gen_noise, "per-token corruption rate");
    gen->add_option("--seed", gen_seed, "generator seed");

    // run
    auto* run = app.add_subcommand("run", "execute one training run");
    std::string run_config;
    std::string run_train, run_heldout, run_out, run_selector;
    double run_gamma = -1, run_rho = -1;
    long long run_seed = -1;
    int run_epochs = -1, run_layer = -2;
    run->add_option("--config", run_config, "run-config JSON file");
    run->add_option("--train", run_train, "train corpus path (overrides config)");
    run->add_option("--heldout", run_heldout, "held-out corpus path");
    run->add_option("--out", run_out, "output directory");
    run->add_option("--selector", run_selector,
                    "full|random|rho1|tokencleaning_global|sstoken");
    run->add_option("--gamma", run_gamma, "balance coefficient");
    run->add_option("--rho", run_rho, "selection ratio");
    run->add_option("--layer", run_layer, "attention layer (-1 = deepest)");
    run->add_option("--seed", run_seed, "run seed");
    run->add_option("--epochs", run_epochs, "training epochs");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "execute an experiment plan");
    std::string sweep_plan;
    sweep->add_option("--plan", sweep_plan, "plan JSON file")->required();

    // summarize
    auto* summ = app.add_subcommand("summarize", "aggregate run metrics");
    std::string summ_runs, summ_out = "summary.csv";
    summ->add_option("--runs", summ_runs, "directory of run outputs")
        ->required();
    summ->add_option("--out", summ_out, "summary CSV path");

    // render
    auto* rend = app.add_subcommand("render", "visualize token selection");
    std::string rend_run, rend_html = "selection.html", rend_text;
    long rend_sample = 0;
    rend->add_option("--run", rend_run, "run directory")->required();
    rend->add_option("--sample", rend_sample, "sample index");
    rend->add_option("--html", rend_html, "HTML output path");
    rend->add_option("--text", rend_text, "plain-text output path");

    CLI11_PARSE(app, argc, argv);

    if (gen->parsed()) {
        const int rc = report(sst_gen_corpus(gen_out.c_str(), gen_train,
                                             gen_heldout, gen_noise, gen_seed),
                              "gen-corpus");
        if (rc == SST_OK) {
            std::printf("wrote %s/train.jsonl, heldout.jsonl, train.noise.jsonl\n",
                        gen_out.c_str());
        }
        return rc;
    }

    if (run->parsed()) {
        std::string config = "{}";
        if (!run_config.empty()) {
            FILE* f = std::fopen(run_config.c_str(), "rb");
            if (!f) {
                std::fprintf(stderr, "cannot open %s\n", run_config.c_str());
                return 1;
            }
            config.clear();
            char buf[4096];
            size_t n;
            while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0) {
                config.append(buf, n);
            }
            std::fclose(f);
        }
        // fold flag overrides into the JSON object
        std::string overrides;
        auto add = [&overrides](const std::string& kv) {
            if (!overrides.empty()) overrides += ',';
            overrides += kv;
        };
        if (!run_train.empty()) add("\"train_path\":" + json_str(run_train));
        if (!run_heldout.empty())
            add("\"heldout_path\":" + json_str(run_heldout));
        if (!run_out.empty()) add("\"out_dir\":" + json_str(run_out));
        if (!run_selector.empty())
            add("\"selector\":" + json_str(run_selector));
        if (run_gamma >= 0) add("\"gamma\":" + std::to_string(run_gamma));
        if (run_rho >= 0) add("\"rho\":" + std::to_string(run_rho));
        if (run_layer >= -1) add("\"attn_layer\":" + std::to_string(run_layer));
        if (run_seed >= 0) add("\"seed\":" + std::to_string(run_seed));
        if (run_epochs >= 0) add("\"epochs\":" + std::to_string(run_epochs));
        if (!overrides.empty()) {
            const auto close = config.find_last_of('}');
            if (close == std::string::npos) {
                std::fprintf(stderr, "config is not a JSON object\n");
                return 1;
            }
            std::string head = config.substr(0, close);
            // avoid a dangling comma for an empty object
            bool has_field = false;
            for (size_t i = config.find('{') + 1; i < close; ++i) {
                if (!std::isspace(static_cast<unsigned char>(config[i]))) {
                    has_field = true;
                    break;
                }
            }
            config = head + (has_field ? "," : "") + overrides + "}";
        }

        char run_dir[4096] = {0};
        const int rc = report(sst_run_json(config.c_str(), run_dir,
                                           sizeof(run_dir)),
                              "run");
        if (rc == SST_OK) std::printf("run complete: %s\n", run_dir);
        return rc;
    }

    if (sweep->parsed()) {
        const int rc = report(sst_sweep_file(sweep_plan.c_str()), "sweep");
        if (rc == SST_OK) std::printf("sweep complete\n");
        return rc;
    }

    if (summ->parsed()) {
        const int rc = report(sst_summarize(summ_runs.c_str(),
                                            summ_out.c_str()),
                              "summarize");
        if (rc == SST_OK) std::printf("summary written to %s\n", summ_out.c_str());
        return rc;
    }

    if (rend->parsed()) {
        const int rc = report(
            sst_render(rend_run.c_str(), rend_sample, rend_html.c_str(),
                       rend_text.empty() ? nullptr : rend_text.c_str()),
            "render");
        if (rc == SST_OK) std::printf("rendered sample %ld\n", rend_sample);
        return rc;
    }

    return 0;
}
