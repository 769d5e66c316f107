#include "sst/select.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

namespace sst {

SelectorKind selector_from_string(const std::string& s) {
    if (s == "full") return SelectorKind::full;
    if (s == "random") return SelectorKind::random;
    if (s == "rho1") return SelectorKind::rho1;
    if (s == "tokencleaning_global") return SelectorKind::tokencleaning_global;
    if (s == "sstoken") return SelectorKind::sstoken;
    fail(Err::Config, "unknown selector '" + s + "'");
}

std::string selector_to_string(SelectorKind kind) {
    switch (kind) {
        case SelectorKind::full: return "full";
        case SelectorKind::random: return "random";
        case SelectorKind::rho1: return "rho1";
        case SelectorKind::tokencleaning_global: return "tokencleaning_global";
        case SelectorKind::sstoken: return "sstoken";
    }
    fail(Err::Internal, "bad selector kind");
}

void SelectorSpec::validate() const {
    if (gamma < 0.0 || gamma > 1.0) fail(Err::Domain, "gamma must be in [0,1]");
    if (!(rho > 0.0) || rho > 1.0) fail(Err::Domain, "rho must be in (0,1]");
}

size_t SelectionMask::popcount() const {
    size_t n = 0;
    for (uint8_t b : bits) n += b;
    return n;
}

std::vector<double> excess_loss(const TokenLogProbs& cur,
                                const TokenLogProbs& ref) {
    if (cur.size() != ref.size()) {
        fail(Err::LengthMismatch, "excess_loss: length mismatch");
    }
    std::vector<double> el(cur.size());
    for (size_t i = 0; i < el.size(); ++i) {
        el[i] = ref.logp[i] - cur.logp[i];
    }
    return el;
}

std::vector<double> retrospective_excess_loss(const TokenLogProbs& his,
                                              const TokenLogProbs& cur) {
    if (his.size() != cur.size()) {
        fail(Err::LengthMismatch, "retrospective_excess_loss: length mismatch");
    }
    std::vector<double> rel(cur.size());
    for (size_t i = 0; i < rel.size(); ++i) {
        rel[i] = cur.logp[i] - his.logp[i];
    }
    return rel;
}

std::vector<double> normalize_rel(std::span<const double> rel) {
    if (rel.empty()) fail(Err::EmptyInput, "normalize_rel: empty input");
    const auto [mn_it, mx_it] = std::minmax_element(rel.begin(), rel.end());
    const double mn = *mn_it, mx = *mx_it;
    std::vector<double> out(rel.size());
    if (mx == mn) {
        std::fill(out.begin(), out.end(), 0.5);
        return out;
    }
    const double inv = 1.0 / (mx - mn);
    for (size_t i = 0; i < rel.size(); ++i) {
        out[i] = (rel[i] - mn) * inv;
    }
    return out;
}

std::vector<double> fuse_scores(std::span<const double> rel_norm,
                                std::span<const double> attn, double gamma) {
    if (rel_norm.size() != attn.size()) {
        fail(Err::LengthMismatch, "fuse_scores: length mismatch");
    }
    if (gamma < 0.0 || gamma > 1.0) {
        fail(Err::Domain, "fuse_scores: gamma out of [0,1]");
    }
    for (double x : rel_norm) {
        if (!(x >= 0.0 && x <= 1.0)) {
            fail(Err::Domain, "fuse_scores: rel_norm entry out of [0,1]");
        }
    }
    for (double x : attn) {
        if (!(x >= 0.0 && x <= 1.0)) {
            fail(Err::Domain, "fuse_scores: attn entry out of [0,1]");
        }
    }
    std::vector<double> fused(rel_norm.size());
    if (gamma == 1.0) {
        std::copy(rel_norm.begin(), rel_norm.end(), fused.begin());
    } else if (gamma == 0.0) {
        std::copy(attn.begin(), attn.end(), fused.begin());
    } else {
        for (size_t i = 0; i < fused.size(); ++i) {
            fused[i] = gamma * rel_norm[i] + (1.0 - gamma) * attn[i];
        }
    }
    return fused;
}

namespace {

size_t topk_count(size_t n, double rho) {
    // round half up, at least one token per sample
    const auto k = static_cast<size_t>(std::floor(rho * static_cast<double>(n) + 0.5));
    return std::max<size_t>(1, std::min(k, n));
}

}  // namespace

SelectionMask select_topk(std::span<const double> scores, double rho) {
    if (scores.empty()) fail(Err::EmptyInput, "select_topk: empty scores");
    if (!(rho > 0.0) || rho > 1.0) {
        fail(Err::Domain, "select_topk: rho out of (0,1]");
    }
    const size_t n = scores.size();
    const size_t k = topk_count(n, rho);

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });

    SelectionMask mask;
    mask.bits.assign(n, 0);
    mask.k = k;
    mask.rho = rho;
    for (size_t r = 0; r < k; ++r) mask.bits[order[r]] = 1;
    return mask;
}

std::vector<SelectionMask> select_global_topk(
    const std::vector<std::vector<double>>& pool_scores, double rho) {
    if (pool_scores.empty()) {
        fail(Err::EmptyInput, "select_global_topk: empty pool");
    }
    if (!(rho > 0.0) || rho > 1.0) {
        fail(Err::Domain, "select_global_topk: rho out of (0,1]");
    }

    struct Entry {
        double score;
        size_t sample;
        size_t pos;
    };
    std::vector<Entry> entries;
    size_t total = 0;
    for (size_t s = 0; s < pool_scores.size(); ++s) {
        total += pool_scores[s].size();
        for (size_t p = 0; p < pool_scores[s].size(); ++p) {
            entries.push_back({pool_scores[s][p], s, p});
        }
    }
    if (total == 0) fail(Err::EmptyInput, "select_global_topk: no tokens");

    const auto budget = static_cast<size_t>(
        std::ceil(rho * static_cast<double>(total) - 1e-12));
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.sample != b.sample) return a.sample < b.sample;
        return a.pos < b.pos;
    });

    std::vector<SelectionMask> masks(pool_scores.size());
    for (size_t s = 0; s < masks.size(); ++s) {
        masks[s].bits.assign(pool_scores[s].size(), 0);
        masks[s].k = 0;
        masks[s].rho = rho;
    }
    for (size_t r = 0; r < budget && r < entries.size(); ++r) {
        masks[entries[r].sample].bits[entries[r].pos] = 1;
        masks[entries[r].sample].k++;
    }
    return masks;
}

namespace {

std::vector<double> random_scores(uint64_t seed, uint64_t sample_id, size_t n) {
    Rng rng(mix_seed(mix_seed(seed, "random_selector"), sample_id));
    std::vector<double> s(n);
    for (double& x : s) x = rng.uniform();
    return s;
}

}  // namespace

SampleScore score_sample(const ModelSnapshot& cur, const ModelSnapshot* aux,
                         const TokenizedSample& sample, const SelectorSpec& spec,
                         uint64_t sample_id, const TokenLogProbs* aux_logprobs) {
    spec.validate();
    const size_t n = sample.resp_len();

    SampleScore out;
    out.scores.gamma = spec.gamma;
    out.scores.rel.assign(n, 0.0);
    out.scores.rel_norm.assign(n, 0.0);
    out.scores.attn.assign(n, 0.0);
    out.scores.fused.assign(n, 0.0);

    auto aux_lp = [&]() -> TokenLogProbs {
        if (aux_logprobs) return *aux_logprobs;
        if (!aux) fail(Err::Config, "selector needs an auxiliary model");
        return forward_logprobs(*aux, sample);
    };

    switch (spec.kind) {
        case SelectorKind::full: {
            std::fill(out.scores.fused.begin(), out.scores.fused.end(), 1.0);
            out.mask.bits.assign(n, 1);
            out.mask.k = n;
            out.mask.rho = 1.0;
            return out;
        }
        case SelectorKind::random: {
            out.scores.fused = random_scores(spec.seed, sample_id, n);
            out.mask = select_topk(out.scores.fused, spec.rho);
            return out;
        }
        case SelectorKind::rho1:
        case SelectorKind::tokencleaning_global: {
            // Both rank by excess loss against a reference model; the raw EL
            // is kept in `rel`, the bounded per-sample min-max in the fused
            // slot (an increasing transform, so per-sample ranking is
            // unchanged). Global budgeting across the pool is the trainer's
            // job; the per-sample path here applies the top-rho rule.
            const TokenLogProbs cur_lp = forward_logprobs(cur, sample);
            out.scores.rel = excess_loss(cur_lp, aux_lp());
            out.scores.rel_norm = normalize_rel(out.scores.rel);
            out.scores.fused = out.scores.rel_norm;
            out.mask = select_topk(out.scores.rel, spec.rho);
            return out;
        }
        case SelectorKind::sstoken: {
            const CaptureResult cap =
                forward_with_capture(cur, sample, spec.attn_layer);
            const AttentionSlice slice = recompute_attention(cur, cap, sample);
            out.scores.attn = attn_prompt_mass(slice, sample);
            if (spec.normalize_attn) {
                out.scores.attn = normalize_rel(out.scores.attn);
            }
            out.scores.rel = retrospective_excess_loss(aux_lp(), cap.logprobs);
            out.scores.rel_norm = normalize_rel(out.scores.rel);
            out.scores.fused =
                fuse_scores(out.scores.rel_norm, out.scores.attn, spec.gamma);
            out.mask = select_topk(out.scores.fused, spec.rho);
            return out;
        }
    }
    fail(Err::Internal, "score_sample: bad selector kind");
}

std::string mask_export_line(size_t sample_index, const TokenScores& scores,
                             const SelectionMask& mask) {
    nlohmann::json j;
    j["sample"] = sample_index;
    j["rho"] = mask.rho;
    j["gamma"] = scores.gamma;
    j["k"] = mask.k;
    std::string bits(mask.bits.size(), '0');
    for (size_t i = 0; i < mask.bits.size(); ++i) {
        if (mask.bits[i]) bits[i] = '1';
    }
    j["bits"] = bits;
    nlohmann::json tokens = nlohmann::json::array();
    for (size_t i = 0; i < scores.fused.size(); ++i) {
        tokens.push_back({{"fused", scores.fused[i]},
                          {"rel_norm", scores.rel_norm[i]},
                          {"attn", scores.attn[i]}});
    }
    j["tokens"] = std::move(tokens);
    return j.dump();
}

}  // namespace sst
