// Shared test-side oracles and fixtures: random models/samples, a
// brute-force top-k selection, and finite-difference gradients.
#pragma once

#include <algorithm>
#include <vector>

#include "sst/model.hpp"
#include "sst/select.hpp"
#include "sst/train.hpp"

namespace oracle {

inline sst::ModelConfig small_config(int d_model = 16, int n_layers = 2,
                                     int n_heads = 2, int d_ff = 32,
                                     int max_seq_len = 64) {
    sst::ModelConfig c;
    c.d_model = d_model;
    c.n_layers = n_layers;
    c.n_heads = n_heads;
    c.d_ff = d_ff;
    c.max_seq_len = max_seq_len;
    return c;
}

// Random model with perturbed norm parameters so every tensor class has
// nontrivial gradients.
inline sst::ModelSnapshot random_model(const sst::ModelConfig& config,
                                       uint64_t seed) {
    auto m = sst::ModelSnapshot::init(config, seed);
    sst::Rng rng(sst::mix_seed(seed, "norm_jitter"));
    for (auto& [name, t] : m.params.named_tensors()) {
        if (name.find("ln") == std::string::npos) continue;
        for (double& x : t->data) x += 0.05 * rng.normal();
    }
    return m;
}

inline sst::TokenizedSample random_sample(uint64_t seed, size_t prompt_len,
                                          size_t resp_len,
                                          int vocab = sst::kVocabSize) {
    sst::Rng rng(sst::mix_seed(seed, "sample"));
    sst::TokenizedSample s;
    s.prompt_len = prompt_len;
    s.ids.resize(prompt_len + resp_len);
    for (auto& id : s.ids) {
        id = static_cast<sst::TokenId>(rng.below(vocab));
    }
    return s;
}

// Repeated first-max scan: independent of the library's sort-based top-k.
inline std::vector<uint8_t> brute_force_topk(const std::vector<double>& scores,
                                             size_t k) {
    std::vector<uint8_t> bits(scores.size(), 0);
    for (size_t round = 0; round < k; ++round) {
        size_t best = scores.size();
        for (size_t i = 0; i < scores.size(); ++i) {
            if (bits[i]) continue;
            if (best == scores.size() || scores[i] > scores[best]) best = i;
        }
        bits[best] = 1;
    }
    return bits;
}

// Pool-wide analogue with the same (score desc, sample asc, pos asc) rule.
inline std::vector<std::vector<uint8_t>> brute_force_global_topk(
    const std::vector<std::vector<double>>& pool, size_t budget) {
    std::vector<std::vector<uint8_t>> bits;
    bits.reserve(pool.size());
    for (const auto& s : pool) bits.emplace_back(s.size(), 0);
    for (size_t round = 0; round < budget; ++round) {
        size_t bs = pool.size(), bp = 0;
        for (size_t s = 0; s < pool.size(); ++s) {
            for (size_t p = 0; p < pool[s].size(); ++p) {
                if (bits[s][p]) continue;
                if (bs == pool.size() || pool[s][p] > pool[bs][bp]) {
                    bs = s;
                    bp = p;
                }
            }
        }
        if (bs == pool.size()) break;
        bits[bs][bp] = 1;
    }
    return bits;
}

// Central finite difference of the masked loss w.r.t. one parameter entry.
inline double fd_gradient(sst::ModelSnapshot& model, size_t tensor_idx,
                          size_t entry, const sst::MaskedBatch& batch,
                          double h = 1e-5) {
    auto tensors = model.params.named_tensors();
    double& p = tensors[tensor_idx].second->data[entry];
    const double orig = p;
    p = orig + h;
    const double lp = sst::masked_loss(model, batch);
    p = orig - h;
    const double lm = sst::masked_loss(model, batch);
    p = orig;
    return (lp - lm) / (2.0 * h);
}

}  // namespace oracle
