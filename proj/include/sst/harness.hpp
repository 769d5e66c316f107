#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sst/corpus.hpp"
#include "sst/select.hpp"
#include "sst/train.hpp"

namespace sst {

struct GenOptions {
    long train_samples = 2000;
    long heldout_samples = 200;
    double noise_rate = 0.3;  // per response token, train split only
    uint64_t seed = 1;
};

struct GenResult {
    std::string train_path;
    std::string heldout_path;
    std::string sidecar_path;  // ground-truth noise positions, JSONL
    size_t train_response_tokens = 0;
    size_t train_noise_tokens = 0;
};

// Deterministic prompt->response tasks (copy, reverse, small-integer
// addition); each train response byte is independently corrupted with
// probability noise_rate and the position recorded in the sidecar. The
// held-out split is generated clean.
GenResult gen_synthetic_corpus(const std::string& out_dir,
                               const GenOptions& opts);

// Ground-truth noise positions per sample, response-relative.
std::vector<std::vector<size_t>> load_noise_sidecar(const std::string& path);

struct MetricsRow {
    std::string run_id;
    std::string selector;
    double gamma = 0.5;
    double rho = 0.6;
    int layer = -1;
    uint64_t seed = 0;
    std::optional<double> heldout_nll;
    std::optional<double> noise_sel_rate;
    std::optional<double> random_noise_rate;
    std::optional<double> overlap_gamma1;
    std::optional<double> overlap_gamma0;
    double wall_clock_s = 0.0;  // kept out of the deterministic metrics file
};

// Executes one run end to end: corpora, training, a final scoring pass,
// metrics, mask export, checkpoint. Skips (and re-reads) runs whose
// metrics file already exists. Returns the row and the run directory.
std::pair<MetricsRow, std::string> run_one(const RunConfig& cfg);

MetricsRow read_metrics(const std::string& run_dir);

struct ExperimentPlan {
    std::string out_dir = "sweep";
    std::string train_path;
    std::string heldout_path;
    std::vector<std::string> selectors{"sstoken"};
    std::vector<double> gammas{0.5};
    std::vector<double> rhos{0.6};
    std::vector<int> layers{-1};
    std::vector<uint64_t> seeds{1};
    RunConfig base;  // template for per-run configs

    static ExperimentPlan from_json_text(const std::string& text);
    static ExperimentPlan from_json_file(const std::string& path);
    void validate() const;
    std::vector<RunConfig> expand() const;
};

struct PlanOutcome {
    std::vector<MetricsRow> rows;
    std::vector<std::string> failures;  // "run_id: error"
};

// Runs every grid point (failures isolated), then writes metrics.csv and
// metrics.jsonl plus summary.csv under the plan directory.
PlanOutcome run_plan(const ExperimentPlan& plan);

std::string metrics_csv(const std::vector<MetricsRow>& rows);
std::string metrics_jsonl(const std::vector<MetricsRow>& rows);

// Per (selector, gamma, rho, layer) aggregates across seeds; population
// stddev, noted in the header.
std::string summarize(const std::vector<MetricsRow>& rows);

struct Rendered {
    std::string html;
    std::string text;
};

// Selected tokens carry marker A; tokens selected by the fused score but
// absent from the pure loss-delta (gamma=1) mask carry marker B.
Rendered render_selection(const TokenizedSample& sample,
                          const TokenScores& scores, const SelectionMask& mask,
                          const SelectionMask& mask_gamma1);

// Resolves the effective output directory, honoring SSTOKEN_OUT_ROOT.
std::string resolve_out_dir(const std::string& out_dir);

std::string derive_run_id(const RunConfig& cfg);

}  // namespace sst
