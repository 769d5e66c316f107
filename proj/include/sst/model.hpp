#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sst/common.hpp"
#include "sst/corpus.hpp"

namespace sst {

struct ModelConfig {
    int vocab_size = kVocabSize;
    int d_model = 128;
    int n_layers = 4;
    int n_heads = 4;
    int d_ff = 512;
    int max_seq_len = 256;
    // -1 selects the deepest layer; semantic signals sharpen with depth.
    int attn_layer_index = -1;

    int d_head() const { return d_model / n_heads; }
    int resolved_attn_layer() const {
        return attn_layer_index < 0 ? n_layers - 1 : attn_layer_index;
    }
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct Tensor {
    std::vector<size_t> shape;
    std::vector<double> data;

    static Tensor zeros(std::vector<size_t> shape);
    size_t numel() const { return data.size(); }
    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }
};

struct LayerParams {
    Tensor ln1_g, ln1_b;          // [d]
    Tensor wq, wk, wv, wo;        // [d, d], row-major out x in
    Tensor ln2_g, ln2_b;          // [d]
    Tensor w_fc, b_fc;            // [d_ff, d], [d_ff]
    Tensor w_proj, b_proj;        // [d, d_ff], [d]
};

// One full parameter set. Shared by model weights, gradients and
// optimizer moments so they can be iterated in lockstep.
struct ParamSet {
    Tensor wte;                   // [vocab, d]
    Tensor wpe;                   // [max_seq_len, d]
    std::vector<LayerParams> layers;
    Tensor lnf_g, lnf_b;          // [d]
    Tensor w_head;                // [vocab, d]

    static ParamSet zeros(const ModelConfig& config);

    // Fixed iteration order; the same order is used by the optimizer,
    // EMA updates, checkpoints and gradient checks.
    std::vector<std::pair<std::string, Tensor*>> named_tensors();
    std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;

    bool all_finite() const;
    bool same_shape_as(const ParamSet& other) const;
};

struct ModelSnapshot {
    ModelConfig config;
    ParamSet params;
    std::string role = "model";
    uint32_t version = 1;

    // GPT-2 style init: N(0, 0.02) weights, residual projections scaled
    // by 1/sqrt(2*n_layers), unit norm gains, zero biases.
    static ModelSnapshot init(const ModelConfig& config, uint64_t seed);
};

// log P(x_i | x_<i) for each response position, natural log.
struct TokenLogProbs {
    std::vector<double> logp;

    size_t size() const { return logp.size(); }
    double nll_mean() const;
};

// Per-head causal attention rows of one layer: att[h][i][j], exact zeros
// for j > i, each row a distribution over keys 0..i.
struct AttentionSlice {
    int layer = 0;
    int n_heads = 0;
    size_t seq_len = 0;
    std::vector<double> att;  // n_heads * seq_len * seq_len

    double at(int h, size_t i, size_t j) const {
        return att[(static_cast<size_t>(h) * seq_len + i) * seq_len + j];
    }
};

struct CaptureResult {
    TokenLogProbs logprobs;
    // Post-input-norm activations entering the target layer's attention,
    // seq_len x d_model.
    std::vector<double> hidden;
    size_t seq_len = 0;
    int layer = 0;
};

TokenLogProbs forward_logprobs(const ModelSnapshot& model,
                               const TokenizedSample& sample);

// Same log-probs as forward_logprobs (bitwise), plus the captured states
// needed to recompute the target layer's attention later. A non-negative
// layer_override replaces the config's attention layer.
CaptureResult forward_with_capture(const ModelSnapshot& model,
                                   const TokenizedSample& sample,
                                   int layer_override = -1);

// Recomputes the captured layer's attention from the stored hidden states;
// taking the capture bundle ties the recomputation to the layer it came from.
AttentionSlice recompute_attention(const ModelSnapshot& model,
                                   const CaptureResult& captured,
                                   const TokenizedSample& sample);

// AttnScore per response token: head-averaged attention mass on the
// prompt positions.
std::vector<double> attn_prompt_mass(const AttentionSlice& slice,
                                     const TokenizedSample& sample);

// Accounting used by the capture-overhead check.
size_t capture_bytes(const ModelConfig& config, size_t seq_len);
size_t layer_activation_bytes(const ModelConfig& config, size_t seq_len);

}  // namespace sst
