#include "sst/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "sst/checkpoint.hpp"

namespace fs = std::filesystem;

namespace sst {

namespace {

std::string fmt_num(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(Err::Io, "cannot write " + path);
    out << content;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Err::Io, "cannot read " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string json_escape_dump(const nlohmann::json& j) { return j.dump(); }

// Generates one clean record. Tasks are chosen per sample so every corpus
// mixes prompt-dependent mappings (copy/reverse) with arithmetic. Prompts
// carry an instruction-style preamble and responses close with a fixed
// template tail, mirroring the shape of chat-templated SFT records.
RawRecord make_record(Rng& rng) {
    static const char letters[] = "abcdefghijklmnopqrstuvwxyz";
    constexpr const char* kTail = " ; done";
    const uint64_t task = rng.below(3);
    if (task == 2) {
        const auto a = static_cast<int>(rng.below(100));
        const auto b = static_cast<int>(rng.below(100));
        return {"Compute the integer sum of the two numbers. expression: " +
                    std::to_string(a) + "+" + std::to_string(b),
                std::to_string(a + b) + kTail};
    }
    const size_t len = 4 + rng.below(9);
    std::string payload(len, 'a');
    for (char& c : payload) c = letters[rng.below(26)];
    if (task == 0) {
        return {"Repeat the payload characters exactly in order. payload: " +
                    payload,
                payload + kTail};
    }
    std::string rev(payload.rbegin(), payload.rend());
    return {"Write the payload characters in reverse order. payload: " +
                payload,
            rev + kTail};
}

}  // namespace

GenResult gen_synthetic_corpus(const std::string& out_dir,
                               const GenOptions& opts) {
    if (opts.noise_rate < 0.0 || opts.noise_rate >= 1.0) {
        fail(Err::Domain, "noise_rate must be in [0,1)");
    }
    if (opts.train_samples < 1) fail(Err::Domain, "train_samples must be >= 1");
    fs::create_directories(out_dir);

    GenResult res;
    res.train_path = (fs::path(out_dir) / "train.jsonl").string();
    res.heldout_path = (fs::path(out_dir) / "heldout.jsonl").string();
    res.sidecar_path = (fs::path(out_dir) / "train.noise.jsonl").string();

    {
        Rng rng(mix_seed(opts.seed, "gen_train"));
        std::ostringstream corpus_out, noise_out;
        for (long i = 0; i < opts.train_samples; ++i) {
            RawRecord rec = make_record(rng);
            std::vector<size_t> noise_positions;
            for (size_t p = 0; p < rec.response.size(); ++p) {
                res.train_response_tokens++;
                if (rng.uniform() < opts.noise_rate) {
                    // printable replacement, always different from the original
                    char repl;
                    do {
                        repl = static_cast<char>(33 + rng.below(94));
                    } while (repl == rec.response[p]);
                    rec.response[p] = repl;
                    noise_positions.push_back(p);
                    res.train_noise_tokens++;
                }
            }
            corpus_out << json_escape_dump({{"prompt", rec.prompt},
                                            {"response", rec.response}})
                       << "\n";
            noise_out << json_escape_dump({{"sample", i},
                                           {"noise", noise_positions}})
                      << "\n";
        }
        write_file(res.train_path, corpus_out.str());
        write_file(res.sidecar_path, noise_out.str());
    }
    {
        Rng rng(mix_seed(opts.seed, "gen_heldout"));
        std::ostringstream out;
        for (long i = 0; i < opts.heldout_samples; ++i) {
            const RawRecord rec = make_record(rng);
            out << json_escape_dump({{"prompt", rec.prompt},
                                     {"response", rec.response}})
                << "\n";
        }
        write_file(res.heldout_path, out.str());
    }
    return res;
}

std::vector<std::vector<size_t>> load_noise_sidecar(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Err::Io, "cannot open sidecar " + path);
    std::vector<std::vector<size_t>> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("noise")) {
            fail(Err::Format, "bad sidecar line in " + path);
        }
        out.push_back(j["noise"].get<std::vector<size_t>>());
    }
    return out;
}

std::string resolve_out_dir(const std::string& out_dir) {
    const char* root = std::getenv("SSTOKEN_OUT_ROOT");
    if (!root || !*root || fs::path(out_dir).is_absolute()) return out_dir;
    return (fs::path(root) / out_dir).string();
}

std::string derive_run_id(const RunConfig& cfg) {
    std::ostringstream os;
    os << selector_to_string(cfg.selector.kind) << "_g"
       << fmt_num(cfg.selector.gamma) << "_r" << fmt_num(cfg.selector.rho)
       << "_l" << cfg.selector.attn_layer << "_s" << cfg.seed;
    return os.str();
}

namespace {

nlohmann::json row_to_json(const MetricsRow& row) {
    nlohmann::json j;
    j["run_id"] = row.run_id;
    j["selector"] = row.selector;
    j["gamma"] = row.gamma;
    j["rho"] = row.rho;
    j["layer"] = row.layer;
    j["seed"] = row.seed;
    auto set_opt = [&](const char* key, const std::optional<double>& v) {
        if (v) {
            j[key] = *v;
        } else {
            j[key] = nullptr;
        }
    };
    set_opt("heldout_nll", row.heldout_nll);
    set_opt("noise_sel_rate", row.noise_sel_rate);
    set_opt("random_noise_rate", row.random_noise_rate);
    set_opt("overlap_gamma1", row.overlap_gamma1);
    set_opt("overlap_gamma0", row.overlap_gamma0);
    return j;
}

MetricsRow row_from_json(const nlohmann::json& j) {
    MetricsRow row;
    row.run_id = j.value("run_id", "");
    row.selector = j.value("selector", "");
    row.gamma = j.value("gamma", 0.5);
    row.rho = j.value("rho", 0.6);
    row.layer = j.value("layer", -1);
    row.seed = j.value("seed", uint64_t{0});
    auto get_opt = [&](const char* key) -> std::optional<double> {
        if (!j.contains(key) || j[key].is_null()) return std::nullopt;
        return j[key].get<double>();
    };
    row.heldout_nll = get_opt("heldout_nll");
    row.noise_sel_rate = get_opt("noise_sel_rate");
    row.random_noise_rate = get_opt("random_noise_rate");
    row.overlap_gamma1 = get_opt("overlap_gamma1");
    row.overlap_gamma0 = get_opt("overlap_gamma0");
    return row;
}

// Uniformly random k-subset of [0, n), deterministic per stream.
std::vector<uint8_t> random_mask_bits(size_t n, size_t k, Rng& rng) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    for (size_t i = n; i > 1; --i) {
        std::swap(idx[i - 1], idx[rng.below(i)]);
    }
    std::vector<uint8_t> bits(n, 0);
    for (size_t i = 0; i < k && i < n; ++i) bits[idx[i]] = 1;
    return bits;
}

struct ScoringSummary {
    std::vector<SampleScore> per_sample;
    std::optional<double> noise_sel_rate;
    std::optional<double> random_noise_rate;
    std::optional<double> overlap_gamma1;
    std::optional<double> overlap_gamma0;
};

// Scores the train corpus with the run's final state and accumulates the
// noise/overlap bookkeeping.
ScoringSummary final_scoring_pass(const RunConfig& cfg, const Corpus& corpus,
                                  const TrainResult& trained,
                                  const ModelSnapshot& reference) {
    SelectorSpec spec = cfg.selector;
    spec.seed = cfg.seed;

    ScoringSummary sum;
    sum.per_sample.reserve(corpus.size());

    if (cfg.selector.kind == SelectorKind::tokencleaning_global) {
        // the run's masks are the fixed pool-wide selection
        const ModelSnapshot initial = base_model_for(cfg);
        auto masks = tokencleaning_masks(initial, reference, corpus, spec.rho);
        for (size_t i = 0; i < corpus.size(); ++i) {
            const auto cur_lp = forward_logprobs(initial, corpus.samples[i]);
            const auto ref_lp = forward_logprobs(reference, corpus.samples[i]);
            SampleScore s;
            s.scores.gamma = spec.gamma;
            s.scores.rel = excess_loss(cur_lp, ref_lp);
            s.scores.rel_norm = normalize_rel(s.scores.rel);
            s.scores.attn.assign(s.scores.rel.size(), 0.0);
            s.scores.fused = s.scores.rel_norm;
            s.mask = std::move(masks[i]);
            sum.per_sample.push_back(std::move(s));
        }
    } else {
        LogProbCache aux_cache(corpus.size());
        for (size_t i = 0; i < corpus.size(); ++i) {
            const auto& sample = corpus.samples[i];
            const ModelSnapshot* aux = nullptr;
            const TokenLogProbs* aux_lp = nullptr;
            if (spec.kind == SelectorKind::sstoken) {
                aux = &trained.history;
                aux_lp = &aux_cache.get_or_compute(trained.history, sample, i);
            } else if (spec.kind == SelectorKind::rho1) {
                aux = &reference;
                aux_lp = &aux_cache.get_or_compute(reference, sample, i);
            }
            sum.per_sample.push_back(
                score_sample(trained.model, aux, sample, spec, i, aux_lp));
        }
    }

    // Overlap of the fused-score mask with the two single-signal masks.
    if (spec.kind == SelectorKind::sstoken) {
        size_t inter1 = 0, inter0 = 0, total_k = 0;
        for (const auto& s : sum.per_sample) {
            const auto g1 = select_topk(s.scores.rel_norm, s.mask.rho);
            const auto g0 = select_topk(s.scores.attn, s.mask.rho);
            for (size_t r = 0; r < s.mask.bits.size(); ++r) {
                if (s.mask.bits[r] && g1.bits[r]) inter1++;
                if (s.mask.bits[r] && g0.bits[r]) inter0++;
            }
            total_k += s.mask.k;
        }
        if (total_k > 0) {
            sum.overlap_gamma1 = static_cast<double>(inter1) / total_k;
            sum.overlap_gamma0 = static_cast<double>(inter0) / total_k;
        }
    }
    return sum;
}

void apply_noise_metrics(ScoringSummary& sum, const RunConfig& cfg,
                         const std::vector<std::vector<size_t>>& noise) {
    if (noise.size() != sum.per_sample.size()) {
        fail(Err::LengthMismatch, "noise sidecar does not match corpus");
    }
    size_t sel_total = 0, sel_noise = 0, rnd_total = 0, rnd_noise = 0;
    for (size_t i = 0; i < sum.per_sample.size(); ++i) {
        const auto& mask = sum.per_sample[i].mask;
        std::vector<uint8_t> is_noise(mask.bits.size(), 0);
        for (size_t p : noise[i]) {
            if (p < is_noise.size()) is_noise[p] = 1;
        }
        Rng rng(mix_seed(mix_seed(cfg.seed, "noise_baseline"), i));
        const auto rnd_bits = random_mask_bits(mask.bits.size(), mask.k, rng);
        for (size_t r = 0; r < mask.bits.size(); ++r) {
            if (mask.bits[r]) {
                sel_total++;
                sel_noise += is_noise[r];
            }
            if (rnd_bits[r]) {
                rnd_total++;
                rnd_noise += is_noise[r];
            }
        }
    }
    if (sel_total > 0) {
        sum.noise_sel_rate = static_cast<double>(sel_noise) / sel_total;
    }
    if (rnd_total > 0) {
        sum.random_noise_rate = static_cast<double>(rnd_noise) / rnd_total;
    }
}

}  // namespace

std::pair<MetricsRow, std::string> run_one(const RunConfig& raw_cfg) {
    RunConfig cfg = raw_cfg;
    cfg.out_dir = resolve_out_dir(cfg.out_dir);
    if (cfg.run_id.empty()) cfg.run_id = derive_run_id(cfg);
    cfg.validate();

    const fs::path run_dir = fs::path(cfg.out_dir) / cfg.run_id;
    const auto metrics_path = (run_dir / "metrics.json").string();
    if (fs::exists(metrics_path)) {
        return {read_metrics(run_dir.string()), run_dir.string()};
    }
    fs::create_directories(run_dir);

    const auto wall_start = std::chrono::steady_clock::now();

    TemplateSpec tmpl;
    tmpl.max_seq_len = static_cast<size_t>(cfg.model.max_seq_len);
    const Corpus train_corpus =
        load_corpus(cfg.train_path, tmpl, cfg.seed, Split::train);
    Corpus heldout;
    const bool have_heldout = !cfg.heldout_path.empty();
    if (have_heldout) {
        heldout = load_corpus(cfg.heldout_path, tmpl, cfg.seed, Split::heldout);
    }

    const TrainResult trained =
        train(train_corpus, have_heldout ? &heldout : nullptr, cfg);

    ModelSnapshot reference = base_model_for(cfg);
    reference.role = "reference";
    if (!cfg.ref_checkpoint.empty()) {
        reference = load_checkpoint(cfg.ref_checkpoint);
        reference.role = "reference";
    }

    ScoringSummary scoring =
        final_scoring_pass(cfg, train_corpus, trained, reference);

    // noise accounting requires the generator sidecar next to the corpus
    const auto sidecar =
        fs::path(cfg.train_path).replace_extension(".noise.jsonl").string();
    if (fs::exists(sidecar)) {
        apply_noise_metrics(scoring, cfg, load_noise_sidecar(sidecar));
    }

    MetricsRow row;
    row.run_id = cfg.run_id;
    row.selector = selector_to_string(cfg.selector.kind);
    row.gamma = cfg.selector.gamma;
    row.rho = cfg.selector.rho;
    row.layer = cfg.selector.attn_layer;
    row.seed = cfg.seed;
    if (!trained.report.epochs.empty()) {
        row.heldout_nll = trained.report.epochs.back().heldout_nll;
    }
    row.noise_sel_rate = scoring.noise_sel_rate;
    row.random_noise_rate = scoring.random_noise_rate;
    row.overlap_gamma1 = scoring.overlap_gamma1;
    row.overlap_gamma0 = scoring.overlap_gamma0;

    // deterministic artifacts
    write_file((run_dir / "config.json").string(), cfg.to_json_text() + "\n");
    {
        std::ostringstream report;
        report << nlohmann::json{{"event", "corpus_loaded"},
                                 {"train_samples", train_corpus.size()},
                                 {"skipped", train_corpus.skipped.total()},
                                 {"skipped_detail",
                                  train_corpus.skipped.describe()}}
                      .dump()
               << "\n";
        for (const auto& e : trained.report.epochs) {
            report << nlohmann::json{{"event", "epoch"},
                                     {"epoch", e.epoch},
                                     {"heldout_nll", e.heldout_nll}}
                          .dump()
                   << "\n";
        }
        for (const auto& s : trained.report.steps) {
            report << nlohmann::json{{"event", "step"},
                                     {"step", s.step},
                                     {"loss", s.loss}}
                          .dump()
                   << "\n";
        }
        write_file((run_dir / "report.jsonl").string(), report.str());
    }
    {
        std::ostringstream masks;
        const size_t limit =
            cfg.export_masks < 0
                ? scoring.per_sample.size()
                : std::min<size_t>(cfg.export_masks, scoring.per_sample.size());
        for (size_t i = 0; i < limit; ++i) {
            masks << mask_export_line(i, scoring.per_sample[i].scores,
                                      scoring.per_sample[i].mask)
                  << "\n";
        }
        write_file((run_dir / "masks.jsonl").string(), masks.str());
    }
    save_checkpoint(trained.model, (run_dir / "model.ckpt").string());

    const auto wall_end = std::chrono::steady_clock::now();
    row.wall_clock_s =
        std::chrono::duration<double>(wall_end - wall_start).count();

    write_file(metrics_path, row_to_json(row).dump(2) + "\n");
    {
        std::ostringstream timing;
        timing << nlohmann::json{{"wall_clock_s", row.wall_clock_s}}.dump()
               << "\n";
        for (const auto& s : trained.report.steps) {
            timing << nlohmann::json{{"step", s.step}, {"wall_ms", s.wall_ms}}
                          .dump()
                   << "\n";
        }
        write_file((run_dir / "timing.jsonl").string(), timing.str());
    }

    return {row, run_dir.string()};
}

MetricsRow read_metrics(const std::string& run_dir) {
    const auto text = read_file((fs::path(run_dir) / "metrics.json").string());
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) fail(Err::Format, "bad metrics.json in " + run_dir);
    MetricsRow row = row_from_json(j);
    const auto timing_path = (fs::path(run_dir) / "timing.jsonl").string();
    if (fs::exists(timing_path)) {
        std::ifstream in(timing_path);
        std::string first;
        if (std::getline(in, first)) {
            auto t = nlohmann::json::parse(first, nullptr, false);
            if (!t.is_discarded() && t.contains("wall_clock_s")) {
                row.wall_clock_s = t["wall_clock_s"].get<double>();
            }
        }
    }
    return row;
}

ExperimentPlan ExperimentPlan::from_json_text(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        fail(Err::Format, "plan: invalid JSON");
    }
    ExperimentPlan plan;
    if (j.contains("base")) {
        plan.base = RunConfig::from_json_text(j["base"].dump());
    }
    if (j.contains("out_dir")) plan.out_dir = j["out_dir"].get<std::string>();
    if (j.contains("train_path")) plan.train_path = j["train_path"].get<std::string>();
    if (j.contains("heldout_path"))
        plan.heldout_path = j["heldout_path"].get<std::string>();
    if (j.contains("selectors"))
        plan.selectors = j["selectors"].get<std::vector<std::string>>();
    if (j.contains("gammas")) plan.gammas = j["gammas"].get<std::vector<double>>();
    if (j.contains("rhos")) plan.rhos = j["rhos"].get<std::vector<double>>();
    if (j.contains("layers")) plan.layers = j["layers"].get<std::vector<int>>();
    if (j.contains("seeds"))
        plan.seeds = j["seeds"].get<std::vector<uint64_t>>();
    plan.validate();
    return plan;
}

ExperimentPlan ExperimentPlan::from_json_file(const std::string& path) {
    return from_json_text(read_file(path));
}

void ExperimentPlan::validate() const {
    if (selectors.empty() || gammas.empty() || rhos.empty() || layers.empty() ||
        seeds.empty()) {
        fail(Err::Config, "plan: every grid axis must be non-empty");
    }
    for (size_t i = 0; i < seeds.size(); ++i) {
        for (size_t k = i + 1; k < seeds.size(); ++k) {
            if (seeds[i] == seeds[k]) fail(Err::Config, "plan: duplicate seed");
        }
    }
    if (train_path.empty()) fail(Err::Config, "plan: train_path required");
}

std::vector<RunConfig> ExperimentPlan::expand() const {
    validate();
    std::vector<RunConfig> runs;
    for (const auto& sel : selectors) {
        for (double gamma : gammas) {
            for (double rho : rhos) {
                for (int layer : layers) {
                    for (uint64_t seed : seeds) {
                        RunConfig cfg = base;
                        cfg.out_dir = out_dir;
                        cfg.train_path = train_path;
                        cfg.heldout_path = heldout_path;
                        cfg.selector.kind = selector_from_string(sel);
                        cfg.selector.gamma = gamma;
                        cfg.selector.rho = rho;
                        cfg.selector.attn_layer = layer;
                        cfg.seed = seed;
                        cfg.run_id.clear();
                        runs.push_back(std::move(cfg));
                    }
                }
            }
        }
    }
    return runs;
}

PlanOutcome run_plan(const ExperimentPlan& plan) {
    PlanOutcome outcome;
    for (const auto& cfg : plan.expand()) {
        try {
            outcome.rows.push_back(run_one(cfg).first);
        } catch (const std::exception& e) {
            outcome.failures.push_back(derive_run_id(cfg) + ": " + e.what());
        }
    }
    std::sort(outcome.rows.begin(), outcome.rows.end(),
              [](const MetricsRow& a, const MetricsRow& b) {
                  return a.run_id < b.run_id;
              });

    const auto dir = resolve_out_dir(plan.out_dir);
    fs::create_directories(dir);
    write_file((fs::path(dir) / "metrics.csv").string(),
               metrics_csv(outcome.rows));
    write_file((fs::path(dir) / "metrics.jsonl").string(),
               metrics_jsonl(outcome.rows));
    write_file((fs::path(dir) / "summary.csv").string(),
               summarize(outcome.rows));
    if (!outcome.failures.empty()) {
        std::ostringstream os;
        for (const auto& f : outcome.failures) os << f << "\n";
        write_file((fs::path(dir) / "failures.log").string(), os.str());
    }
    return outcome;
}

namespace {

std::string opt_cell(const std::optional<double>& v) {
    return v ? fmt_num(*v) : "";
}

}  // namespace

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::ostringstream os;
    os << "run_id,selector,gamma,rho,layer,seed,heldout_nll,noise_sel_rate,"
          "random_noise_rate,overlap_gamma1,overlap_gamma0,wall_clock_s\n";
    for (const auto& r : rows) {
        os << r.run_id << ',' << r.selector << ',' << fmt_num(r.gamma) << ','
           << fmt_num(r.rho) << ',' << r.layer << ',' << r.seed << ','
           << opt_cell(r.heldout_nll) << ',' << opt_cell(r.noise_sel_rate)
           << ',' << opt_cell(r.random_noise_rate) << ','
           << opt_cell(r.overlap_gamma1) << ',' << opt_cell(r.overlap_gamma0)
           << ',' << fmt_num(r.wall_clock_s) << "\n";
    }
    return os.str();
}

std::string metrics_jsonl(const std::vector<MetricsRow>& rows) {
    std::ostringstream os;
    for (const auto& r : rows) {
        auto j = row_to_json(r);
        j["wall_clock_s"] = r.wall_clock_s;
        os << j.dump() << "\n";
    }
    return os.str();
}

std::string summarize(const std::vector<MetricsRow>& rows) {
    if (rows.empty()) fail(Err::EmptyInput, "summarize: no rows");

    struct Agg {
        size_t count = 0;
        std::vector<double> nll, noise, rnd_noise;
    };
    std::map<std::string, Agg> groups;
    for (const auto& r : rows) {
        std::string key = r.selector + "," + fmt_num(r.gamma) + "," +
                          fmt_num(r.rho) + "," + std::to_string(r.layer);
        auto& g = groups[key];
        g.count++;
        if (r.heldout_nll) g.nll.push_back(*r.heldout_nll);
        if (r.noise_sel_rate) g.noise.push_back(*r.noise_sel_rate);
        if (r.random_noise_rate) g.rnd_noise.push_back(*r.random_noise_rate);
    }

    auto mean_of = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    // population convention: divide by n, single observation -> 0
    auto stddev_of = [&](const std::vector<double>& v) {
        const double m = mean_of(v);
        double s = 0.0;
        for (double x : v) s += (x - m) * (x - m);
        return std::sqrt(s / static_cast<double>(v.size()));
    };
    auto mean_cell = [&](const std::vector<double>& v) {
        return v.empty() ? std::string() : fmt_num(mean_of(v));
    };
    auto std_cell = [&](const std::vector<double>& v) {
        return v.empty() ? std::string() : fmt_num(stddev_of(v));
    };

    std::ostringstream os;
    os << "# aggregates across seeds; stddev is population (divide by n)\n";
    os << "selector,gamma,rho,layer,n_runs,heldout_nll_mean,heldout_nll_std,"
          "noise_sel_rate_mean,noise_sel_rate_std,random_noise_rate_mean\n";
    for (const auto& [key, g] : groups) {
        os << key << ',' << g.count << ',' << mean_cell(g.nll) << ','
           << std_cell(g.nll) << ',' << mean_cell(g.noise) << ','
           << std_cell(g.noise) << ',' << mean_cell(g.rnd_noise) << "\n";
    }
    return os.str();
}

namespace {

std::string html_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

Rendered render_selection(const TokenizedSample& sample,
                          const TokenScores& scores, const SelectionMask& mask,
                          const SelectionMask& mask_gamma1) {
    const size_t R = sample.resp_len();
    if (mask.bits.size() != R || mask_gamma1.bits.size() != R ||
        scores.fused.size() != R) {
        fail(Err::LengthMismatch, "render_selection: masks do not match sample");
    }

    std::string prompt_text;
    for (size_t t = 0; t < sample.prompt_len; ++t) {
        prompt_text += token_display(sample.ids[t]);
    }

    std::ostringstream html, text;
    html << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">\n<style>\n"
            "body { font-family: monospace; white-space: pre-wrap; }\n"
            ".sel { background: #bcd9ff; }\n"
            ".attn-dom { background: #ffc98a; }\n"
            "</style></head><body>\n";
    html << "<p><b>prompt:</b> " << html_escape(prompt_text) << "</p>\n";
    html << "<p><b>response:</b> ";
    text << "prompt: " << prompt_text << "\n" << "response: ";

    for (size_t r = 0; r < R; ++r) {
        const std::string tok = token_display(sample.ids[sample.prompt_len + r]);
        const bool selected = mask.bits[r] != 0;
        // attention-dominant: chosen by the fused score, not by gamma=1
        const bool attn_dom = selected && !mask_gamma1.bits[r];
        if (attn_dom) {
            html << "<span class=\"attn-dom\">" << html_escape(tok) << "</span>";
            text << "{" << tok << "}";
        } else if (selected) {
            html << "<span class=\"sel\">" << html_escape(tok) << "</span>";
            text << "[" << tok << "]";
        } else {
            html << html_escape(tok);
            text << tok;
        }
    }
    html << "</p>\n<p>legend: <span class=\"sel\">selected</span> "
            "<span class=\"attn-dom\">attention-dominant</span></p>\n"
            "</body></html>\n";
    text << "\nlegend: [selected] {attention-dominant}\n";

    return {html.str(), text.str()};
}

}  // namespace sst
