#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sst/model.hpp"

namespace sst {

enum class SelectorKind { full, random, rho1, tokencleaning_global, sstoken };

SelectorKind selector_from_string(const std::string& s);
std::string selector_to_string(SelectorKind kind);

struct SelectorSpec {
    SelectorKind kind = SelectorKind::sstoken;
    double gamma = 0.5;   // balance between loss-delta and attention signals
    double rho = 0.6;     // fraction of response tokens kept per sample
    int attn_layer = -1;  // -1 = deepest
    // Optional per-sample min-max normalization of the attention signal;
    // off by default (the attention mass is already bounded in [0,1]).
    bool normalize_attn = false;
    uint64_t seed = 0;    // stream for the random selector

    void validate() const;
};

struct TokenScores {
    std::vector<double> rel;       // loss delta vs. the auxiliary model (nats)
    std::vector<double> rel_norm;  // per-sample min-max of rel, in [0,1]
    std::vector<double> attn;      // prompt attention mass, in [0,1]
    std::vector<double> fused;     // ranking score, in [0,1]
    double gamma = 0.5;
};

struct SelectionMask {
    std::vector<uint8_t> bits;  // one per response token, in position order
    size_t k = 0;
    double rho = 1.0;

    size_t popcount() const;
};

// EL(x_i) = L_cur(x_i) - L_ref(x_i) = log(P_ref / P_cur), per token.
std::vector<double> excess_loss(const TokenLogProbs& cur,
                                const TokenLogProbs& ref);

// REL(x_i) = L_his(x_i) - L_cur(x_i) = log(P_cur / P_his), per token.
// Positive where the current model improved over its history.
std::vector<double> retrospective_excess_loss(const TokenLogProbs& his,
                                              const TokenLogProbs& cur);

// Per-sample min-max to [0,1]; a constant vector maps to all 0.5 so the
// blended score stays neutral when the signal is degenerate.
std::vector<double> normalize_rel(std::span<const double> rel);

// fused_i = gamma * rel_norm_i + (1 - gamma) * attn_i.
std::vector<double> fuse_scores(std::span<const double> rel_norm,
                                std::span<const double> attn, double gamma);

// Marks the k = max(1, round(rho * n)) highest scores, round half up.
// Ties break toward the earlier position.
SelectionMask select_topk(std::span<const double> scores, double rho);

// Pool-wide budget of ceil(rho * total_tokens); per-sample masks may come
// back empty (k = 0) and such samples are skipped by the loss.
std::vector<SelectionMask> select_global_topk(
    const std::vector<std::vector<double>>& pool_scores, double rho);

struct SampleScore {
    TokenScores scores;
    SelectionMask mask;
};

// One full scoring pass for a sample under the given selector. `aux` is the
// history model for sstoken and the reference model for rho1; it may be
// null for full/random. `aux_logprobs`, when provided, replaces the aux
// forward pass (frozen-history caching).
SampleScore score_sample(const ModelSnapshot& cur, const ModelSnapshot* aux,
                         const TokenizedSample& sample, const SelectorSpec& spec,
                         uint64_t sample_id,
                         const TokenLogProbs* aux_logprobs = nullptr);

// Line-delimited JSON export consumed by the harness visualizer.
std::string mask_export_line(size_t sample_index, const TokenScores& scores,
                             const SelectionMask& mask);

}  // namespace sst
