#include "sst/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "kernels.hpp"
#include "sst/checkpoint.hpp"

namespace sst {

void MaskedBatch::validate() const {
    if (samples.empty()) fail(Err::EmptyInput, "batch is empty");
    if (samples.size() != masks.size()) {
        fail(Err::LengthMismatch, "batch samples/masks size mismatch");
    }
    for (size_t s = 0; s < samples.size(); ++s) {
        if (masks[s].bits.size() != samples[s].resp_len()) {
            fail(Err::LengthMismatch, "mask length does not match response");
        }
        if (masks[s].popcount() != masks[s].k) {
            fail(Err::LengthMismatch, "mask popcount does not match k");
        }
        if (masks[s].k == 0) {
            fail(Err::EmptyMask, "sample " + std::to_string(s) +
                                     " has an empty selection");
        }
    }
}

namespace {

// Activations of one block, kept for the backward pass.
struct LayerCache {
    std::vector<double> x_in;       // L x d, block input
    std::vector<double> ln1_out;    // L x d
    std::vector<double> ln1_mean, ln1_rstd;  // L
    std::vector<double> q, k, v;    // L x d
    std::vector<double> att;        // H x L x L
    std::vector<double> concat;     // L x d
    std::vector<double> x_mid;      // L x d, after attention residual
    std::vector<double> ln2_out;    // L x d
    std::vector<double> ln2_mean, ln2_rstd;  // L
    std::vector<double> h_pre;      // L x F
    std::vector<double> h_act;      // L x F
};

struct TrainCache {
    size_t L = 0;
    std::vector<LayerCache> layers;
    std::vector<double> x_out;      // L x d
    std::vector<double> lnf_out;    // L x d
    std::vector<double> lnf_mean, lnf_rstd;  // L
    std::vector<double> logits;     // resp_len x V, rows for predictor t = i-1
};

void forward_train(const ModelSnapshot& model, const TokenizedSample& sample,
                   TrainCache& cache) {
    const auto& c = model.config;
    const auto& p = model.params;
    const size_t L = sample.total_len();
    const int d = c.d_model;
    const int H = c.n_heads;
    const int F = c.d_ff;
    const int V = c.vocab_size;

    cache.L = L;
    cache.layers.assign(c.n_layers, {});

    std::vector<double> x(L * d);
    for (size_t t = 0; t < L; ++t) {
        const double* te = p.wte.ptr() + static_cast<size_t>(sample.ids[t]) * d;
        const double* pe = p.wpe.ptr() + t * d;
        for (int i = 0; i < d; ++i) x[t * d + i] = te[i] + pe[i];
    }

    for (int layer = 0; layer < c.n_layers; ++layer) {
        auto& lc = cache.layers[layer];
        const auto& lp = p.layers[layer];
        lc.x_in = x;
        lc.ln1_out.resize(L * d);
        lc.ln1_mean.resize(L);
        lc.ln1_rstd.resize(L);
        lc.q.resize(L * d);
        lc.k.resize(L * d);
        lc.v.resize(L * d);
        lc.att.resize(static_cast<size_t>(H) * L * L);
        lc.concat.resize(L * d);
        for (size_t t = 0; t < L; ++t) {
            kern::layernorm(lc.x_in.data() + t * d, d, lp.ln1_g.ptr(),
                            lp.ln1_b.ptr(), lc.ln1_out.data() + t * d,
                            &lc.ln1_mean[t], &lc.ln1_rstd[t]);
            kern::linear(lc.ln1_out.data() + t * d, d, d, lp.wq.ptr(), nullptr,
                         lc.q.data() + t * d);
            kern::linear(lc.ln1_out.data() + t * d, d, d, lp.wk.ptr(), nullptr,
                         lc.k.data() + t * d);
            kern::linear(lc.ln1_out.data() + t * d, d, d, lp.wv.ptr(), nullptr,
                         lc.v.data() + t * d);
        }
        kern::attention_forward(lc.q.data(), lc.k.data(), lc.v.data(), L, d, H,
                                lc.att.data(), lc.concat.data());
        std::vector<double> proj(d);
        for (size_t t = 0; t < L; ++t) {
            kern::linear(lc.concat.data() + t * d, d, d, lp.wo.ptr(), nullptr,
                         proj.data());
            for (int i = 0; i < d; ++i) x[t * d + i] += proj[i];
        }
        lc.x_mid = x;
        lc.ln2_out.resize(L * d);
        lc.ln2_mean.resize(L);
        lc.ln2_rstd.resize(L);
        lc.h_pre.resize(L * F);
        lc.h_act.resize(L * F);
        std::vector<double> mlp_out(d);
        for (size_t t = 0; t < L; ++t) {
            kern::layernorm(lc.x_mid.data() + t * d, d, lp.ln2_g.ptr(),
                            lp.ln2_b.ptr(), lc.ln2_out.data() + t * d,
                            &lc.ln2_mean[t], &lc.ln2_rstd[t]);
            kern::linear(lc.ln2_out.data() + t * d, d, F, lp.w_fc.ptr(),
                         lp.b_fc.ptr(), lc.h_pre.data() + t * F);
            for (int i = 0; i < F; ++i) {
                lc.h_act[t * F + i] = kern::gelu(lc.h_pre[t * F + i]);
            }
            kern::linear(lc.h_act.data() + t * F, F, d, lp.w_proj.ptr(),
                         lp.b_proj.ptr(), mlp_out.data());
            for (int i = 0; i < d; ++i) x[t * d + i] += mlp_out[i];
        }
    }

    cache.x_out = x;
    cache.lnf_out.resize(L * d);
    cache.lnf_mean.resize(L);
    cache.lnf_rstd.resize(L);
    for (size_t t = 0; t < L; ++t) {
        kern::layernorm(cache.x_out.data() + t * d, d, p.lnf_g.ptr(),
                        p.lnf_b.ptr(), cache.lnf_out.data() + t * d,
                        &cache.lnf_mean[t], &cache.lnf_rstd[t]);
    }
    const size_t R = sample.resp_len();
    cache.logits.resize(R * static_cast<size_t>(V));
    for (size_t i = sample.prompt_len; i < L; ++i) {
        const size_t t = i - 1;
        kern::linear(cache.lnf_out.data() + t * d, d, V, p.w_head.ptr(), nullptr,
                     cache.logits.data() + (i - sample.prompt_len) * V);
    }
}

double loss_from_cache(const TrainCache& cache, const TokenizedSample& sample,
                       const SelectionMask& mask, int vocab) {
    double acc = 0.0;
    for (size_t r = 0; r < sample.resp_len(); ++r) {
        if (!mask.bits[r]) continue;
        const double* row = cache.logits.data() + r * static_cast<size_t>(vocab);
        acc -= kern::log_softmax_at(row, vocab,
                                    sample.ids[sample.prompt_len + r]);
    }
    return acc / static_cast<double>(mask.k);
}

// dx += layernorm backward; accumulates into dg/db.
void layernorm_backward(const double* dy, const double* x_in, double mean,
                        double rstd, const double* g, int n, double* dx,
                        double* dg, double* db) {
    double mean_dyg = 0.0, mean_dyg_xhat = 0.0;
    for (int i = 0; i < n; ++i) {
        const double xhat = (x_in[i] - mean) * rstd;
        const double dyg = dy[i] * g[i];
        mean_dyg += dyg;
        mean_dyg_xhat += dyg * xhat;
    }
    mean_dyg /= n;
    mean_dyg_xhat /= n;
    for (int i = 0; i < n; ++i) {
        const double xhat = (x_in[i] - mean) * rstd;
        const double dyg = dy[i] * g[i];
        dx[i] += rstd * (dyg - mean_dyg - xhat * mean_dyg_xhat);
        dg[i] += dy[i] * xhat;
        db[i] += dy[i];
    }
}

// dW[o,i] += dy[o] x[i]; dx[i] += sum_o W[o,i] dy[o]
void linear_backward(const double* dy, const double* x, const double* w, int in,
                     int out, double* dw, double* dbias, double* dx) {
    for (int o = 0; o < out; ++o) {
        const double g = dy[o];
        if (g == 0.0) continue;
        double* dwrow = dw + static_cast<size_t>(o) * in;
        for (int i = 0; i < in; ++i) dwrow[i] += g * x[i];
        if (dbias) dbias[o] += g;
        const double* wrow = w + static_cast<size_t>(o) * in;
        for (int i = 0; i < in; ++i) dx[i] += wrow[i] * g;
    }
}

// Accumulates gradients of (weight * per-sample masked NLL) into grads.
void backward_sample(const ModelSnapshot& model, const TokenizedSample& sample,
                     const SelectionMask& mask, const TrainCache& cache,
                     double weight, ParamSet& grads) {
    const auto& c = model.config;
    const auto& p = model.params;
    const size_t L = cache.L;
    const int d = c.d_model;
    const int H = c.n_heads;
    const int dk = c.d_head();
    const int F = c.d_ff;
    const int V = c.vocab_size;
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dk));
    const double coeff = weight / static_cast<double>(mask.k);

    std::vector<double> d_lnf_out(L * d, 0.0);
    std::vector<double> probs(V), dlogits(V);
    for (size_t r = 0; r < sample.resp_len(); ++r) {
        if (!mask.bits[r]) continue;
        const size_t i = sample.prompt_len + r;
        const size_t t = i - 1;
        const double* row = cache.logits.data() + r * static_cast<size_t>(V);
        double maxv = row[0];
        for (int j = 1; j < V; ++j) maxv = std::max(maxv, row[j]);
        double denom = 0.0;
        for (int j = 0; j < V; ++j) {
            probs[j] = std::exp(row[j] - maxv);
            denom += probs[j];
        }
        const double inv = 1.0 / denom;
        for (int j = 0; j < V; ++j) dlogits[j] = coeff * probs[j] * inv;
        dlogits[sample.ids[i]] -= coeff;

        linear_backward(dlogits.data(), cache.lnf_out.data() + t * d,
                        p.w_head.ptr(), d, V, grads.w_head.ptr(), nullptr,
                        d_lnf_out.data() + t * d);
    }

    std::vector<double> dx(L * d, 0.0);
    for (size_t t = 0; t < L; ++t) {
        layernorm_backward(d_lnf_out.data() + t * d, cache.x_out.data() + t * d,
                           cache.lnf_mean[t], cache.lnf_rstd[t], p.lnf_g.ptr(),
                           d, dx.data() + t * d, grads.lnf_g.ptr(),
                           grads.lnf_b.ptr());
    }

    std::vector<double> d_ln2_out(L * d), d_h_pre(F), d_h_act(F);
    std::vector<double> d_concat(L * d), d_ln1_out(L * d);
    std::vector<double> dq(L * d), dk_(L * d), dv(L * d);
    std::vector<double> datt_row(L);

    for (int layer = c.n_layers - 1; layer >= 0; --layer) {
        const auto& lc = cache.layers[layer];
        const auto& lp = p.layers[layer];
        auto& gl = grads.layers[layer];

        // MLP branch; dx currently holds d(block output).
        std::fill(d_ln2_out.begin(), d_ln2_out.end(), 0.0);
        for (size_t t = 0; t < L; ++t) {
            std::fill(d_h_act.begin(), d_h_act.end(), 0.0);
            linear_backward(dx.data() + t * d, lc.h_act.data() + t * F,
                            lp.w_proj.ptr(), F, d, gl.w_proj.ptr(),
                            gl.b_proj.ptr(), d_h_act.data());
            for (int i = 0; i < F; ++i) {
                d_h_pre[i] = d_h_act[i] * kern::gelu_grad(lc.h_pre[t * F + i]);
            }
            linear_backward(d_h_pre.data(), lc.ln2_out.data() + t * d,
                            lp.w_fc.ptr(), d, F, gl.w_fc.ptr(), gl.b_fc.ptr(),
                            d_ln2_out.data() + t * d);
        }
        // residual: d(x_mid) = d(block output) + LN2 backward of the branch
        for (size_t t = 0; t < L; ++t) {
            layernorm_backward(d_ln2_out.data() + t * d,
                               lc.x_mid.data() + t * d, lc.ln2_mean[t],
                               lc.ln2_rstd[t], lp.ln2_g.ptr(), d,
                               dx.data() + t * d, gl.ln2_g.ptr(),
                               gl.ln2_b.ptr());
        }

        // Attention branch.
        std::fill(d_concat.begin(), d_concat.end(), 0.0);
        for (size_t t = 0; t < L; ++t) {
            linear_backward(dx.data() + t * d, lc.concat.data() + t * d,
                            lp.wo.ptr(), d, d, gl.wo.ptr(), nullptr,
                            d_concat.data() + t * d);
        }

        std::fill(dq.begin(), dq.end(), 0.0);
        std::fill(dk_.begin(), dk_.end(), 0.0);
        std::fill(dv.begin(), dv.end(), 0.0);
        for (int h = 0; h < H; ++h) {
            const int off = h * dk;
            for (size_t i = 0; i < L; ++i) {
                const double* att_row =
                    lc.att.data() + (static_cast<size_t>(h) * L + i) * L;
                const double* dci = d_concat.data() + i * d + off;
                // dA and the softmax Jacobian, restricted to j <= i.
                double dot = 0.0;
                for (size_t j = 0; j <= i; ++j) {
                    double da = 0.0;
                    const double* vj = lc.v.data() + j * d + off;
                    for (int cc = 0; cc < dk; ++cc) da += dci[cc] * vj[cc];
                    datt_row[j] = da;
                    dot += att_row[j] * da;
                }
                for (size_t j = 0; j <= i; ++j) {
                    const double ds = att_row[j] * (datt_row[j] - dot) * attn_scale;
                    const double* kj = lc.k.data() + j * d + off;
                    const double* qi = lc.q.data() + i * d + off;
                    double* dqi = dq.data() + i * d + off;
                    double* dkj = dk_.data() + j * d + off;
                    for (int cc = 0; cc < dk; ++cc) {
                        dqi[cc] += ds * kj[cc];
                        dkj[cc] += ds * qi[cc];
                    }
                    // dv[j] += A[i][j] * d_concat[i]
                    const double w = att_row[j];
                    double* dvj = dv.data() + j * d + off;
                    for (int cc = 0; cc < dk; ++cc) dvj[cc] += w * dci[cc];
                }
            }
        }

        std::fill(d_ln1_out.begin(), d_ln1_out.end(), 0.0);
        for (size_t t = 0; t < L; ++t) {
            linear_backward(dq.data() + t * d, lc.ln1_out.data() + t * d,
                            lp.wq.ptr(), d, d, gl.wq.ptr(), nullptr,
                            d_ln1_out.data() + t * d);
            linear_backward(dk_.data() + t * d, lc.ln1_out.data() + t * d,
                            lp.wk.ptr(), d, d, gl.wk.ptr(), nullptr,
                            d_ln1_out.data() + t * d);
            linear_backward(dv.data() + t * d, lc.ln1_out.data() + t * d,
                            lp.wv.ptr(), d, d, gl.wv.ptr(), nullptr,
                            d_ln1_out.data() + t * d);
        }
        // residual: d(x_in) = d(x_mid) + LN1 backward of the branch
        for (size_t t = 0; t < L; ++t) {
            layernorm_backward(d_ln1_out.data() + t * d, lc.x_in.data() + t * d,
                               lc.ln1_mean[t], lc.ln1_rstd[t], lp.ln1_g.ptr(),
                               d, dx.data() + t * d, gl.ln1_g.ptr(),
                               gl.ln1_b.ptr());
        }
    }

    for (size_t t = 0; t < L; ++t) {
        double* dwte = grads.wte.ptr() + static_cast<size_t>(sample.ids[t]) * d;
        double* dwpe = grads.wpe.ptr() + t * d;
        const double* dxt = dx.data() + t * d;
        for (int i = 0; i < d; ++i) {
            dwte[i] += dxt[i];
            dwpe[i] += dxt[i];
        }
    }
}

}  // namespace

double masked_loss(const ModelSnapshot& model, const MaskedBatch& batch) {
    batch.validate();
    double total = 0.0;
    for (size_t s = 0; s < batch.samples.size(); ++s) {
        const auto lp = forward_logprobs(model, batch.samples[s]);
        const auto& mask = batch.masks[s];
        double acc = 0.0;
        for (size_t r = 0; r < lp.size(); ++r) {
            if (mask.bits[r]) acc -= lp.logp[r];
        }
        total += acc / static_cast<double>(mask.k);
    }
    return total / static_cast<double>(batch.samples.size());
}

std::pair<double, ParamSet> loss_and_grad(const ModelSnapshot& model,
                                          const MaskedBatch& batch) {
    batch.validate();
    ParamSet grads = ParamSet::zeros(model.config);
    const double weight = 1.0 / static_cast<double>(batch.samples.size());
    double total = 0.0;
    TrainCache cache;
    for (size_t s = 0; s < batch.samples.size(); ++s) {
        forward_train(model, batch.samples[s], cache);
        total += loss_from_cache(cache, batch.samples[s], batch.masks[s],
                                 model.config.vocab_size);
        backward_sample(model, batch.samples[s], batch.masks[s], cache, weight,
                        grads);
    }
    return {total * weight, grads};
}

ParamSet backward(const ModelSnapshot& model, const MaskedBatch& batch) {
    return loss_and_grad(model, batch).second;
}

OptimizerState OptimizerState::init(const ModelConfig& config) {
    OptimizerState st;
    st.step = 0;
    st.m = ParamSet::zeros(config);
    st.v = ParamSet::zeros(config);
    return st;
}

void adamw_update(double* p, const double* g, double* m, double* v, size_t n,
                  const OptimizerConfig& oc, int64_t step) {
    const double bc1 = 1.0 - std::pow(oc.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(oc.beta2, static_cast<double>(step));
    for (size_t i = 0; i < n; ++i) {
        m[i] = oc.beta1 * m[i] + (1.0 - oc.beta1) * g[i];
        v[i] = oc.beta2 * v[i] + (1.0 - oc.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] -= oc.lr * (mhat / (std::sqrt(vhat) + oc.eps) +
                         oc.weight_decay * p[i]);
    }
}

std::pair<ModelSnapshot, OptimizerState> optimizer_step(
    const ModelSnapshot& model, const ParamSet& grads,
    const OptimizerState& state, const OptimizerConfig& oc) {
    if (!model.params.same_shape_as(grads)) {
        fail(Err::Shape, "optimizer_step: gradient shapes differ from params");
    }
    if (!grads.all_finite()) {
        fail(Err::NonFiniteGradient, "optimizer_step: non-finite gradient");
    }

    ModelSnapshot next = model;
    OptimizerState st;
    st.step = state.step + 1;
    st.m = state.m;
    st.v = state.v;

    auto pt = next.params.named_tensors();
    auto gt = grads.named_tensors();
    auto mt = st.m.named_tensors();
    auto vt = st.v.named_tensors();
    for (size_t t = 0; t < pt.size(); ++t) {
        adamw_update(pt[t].second->ptr(), gt[t].second->ptr(),
                     mt[t].second->ptr(), vt[t].second->ptr(),
                     pt[t].second->numel(), oc, st.step);
    }
    return {std::move(next), std::move(st)};
}

double eval_nll(const ModelSnapshot& model, const Corpus& corpus) {
    if (corpus.samples.empty()) fail(Err::EmptyInput, "eval_nll: empty corpus");
    double total = 0.0;
    for (const auto& s : corpus.samples) {
        total += forward_logprobs(model, s).nll_mean();
    }
    return total / static_cast<double>(corpus.samples.size());
}

namespace {

nlohmann::json selector_to_json(const SelectorSpec& s) {
    return {{"kind", selector_to_string(s.kind)},
            {"gamma", s.gamma},
            {"rho", s.rho},
            {"attn_layer", s.attn_layer},
            {"normalize_attn", s.normalize_attn}};
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        fail(Err::Format, "run config: invalid JSON");
    }
    RunConfig cfg;
    auto get = [&](const char* key, auto& dst) {
        if (j.contains(key)) dst = j[key].template get<std::decay_t<decltype(dst)>>();
    };
    get("run_id", cfg.run_id);
    get("out_dir", cfg.out_dir);
    get("train_path", cfg.train_path);
    get("heldout_path", cfg.heldout_path);
    get("ref_checkpoint", cfg.ref_checkpoint);
    get("init_checkpoint", cfg.init_checkpoint);
    get("epochs", cfg.epochs);
    get("batch_size", cfg.batch_size);
    get("seed", cfg.seed);
    get("export_masks", cfg.export_masks);

    if (j.contains("selector")) {
        const auto& s = j["selector"];
        if (s.is_string()) {
            cfg.selector.kind = selector_from_string(s.get<std::string>());
        } else {
            if (s.contains("kind"))
                cfg.selector.kind = selector_from_string(s["kind"]);
            if (s.contains("gamma")) cfg.selector.gamma = s["gamma"];
            if (s.contains("rho")) cfg.selector.rho = s["rho"];
            if (s.contains("attn_layer")) cfg.selector.attn_layer = s["attn_layer"];
            if (s.contains("normalize_attn"))
                cfg.selector.normalize_attn = s["normalize_attn"];
        }
    }
    if (j.contains("gamma")) cfg.selector.gamma = j["gamma"];
    if (j.contains("rho")) cfg.selector.rho = j["rho"];
    if (j.contains("attn_layer")) cfg.selector.attn_layer = j["attn_layer"];

    if (j.contains("history")) {
        const auto& h = j["history"];
        if (h.contains("mode"))
            cfg.history.mode = history_mode_from_string(h["mode"]);
        if (h.contains("alpha")) cfg.history.alpha = h["alpha"];
        if (h.contains("update_every")) cfg.history.update_every = h["update_every"];
    }
    if (j.contains("model")) {
        const auto& m = j["model"];
        auto geti = [&](const char* key, int& dst) {
            if (m.contains(key)) dst = m[key].get<int>();
        };
        geti("vocab_size", cfg.model.vocab_size);
        geti("d_model", cfg.model.d_model);
        geti("n_layers", cfg.model.n_layers);
        geti("n_heads", cfg.model.n_heads);
        geti("d_ff", cfg.model.d_ff);
        geti("max_seq_len", cfg.model.max_seq_len);
        geti("attn_layer_index", cfg.model.attn_layer_index);
    }
    if (j.contains("optim")) {
        const auto& o = j["optim"];
        auto getd = [&](const char* key, double& dst) {
            if (o.contains(key)) dst = o[key].get<double>();
        };
        getd("lr", cfg.optim.lr);
        getd("beta1", cfg.optim.beta1);
        getd("beta2", cfg.optim.beta2);
        getd("eps", cfg.optim.eps);
        getd("weight_decay", cfg.optim.weight_decay);
    }
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::from_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Err::Io, "run config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    return from_json_text(text);
}

std::string RunConfig::to_json_text() const {
    nlohmann::json j;
    j["run_id"] = run_id;
    j["out_dir"] = out_dir;
    j["train_path"] = train_path;
    j["heldout_path"] = heldout_path;
    j["ref_checkpoint"] = ref_checkpoint;
    j["init_checkpoint"] = init_checkpoint;
    j["selector"] = selector_to_json(selector);
    j["history"] = {{"mode", history_mode_to_string(history.mode)},
                    {"alpha", history.alpha},
                    {"update_every", history.update_every}};
    j["model"] = {{"vocab_size", model.vocab_size},
                  {"d_model", model.d_model},
                  {"n_layers", model.n_layers},
                  {"n_heads", model.n_heads},
                  {"d_ff", model.d_ff},
                  {"max_seq_len", model.max_seq_len},
                  {"attn_layer_index", model.attn_layer_index}};
    j["optim"] = {{"lr", optim.lr},
                  {"beta1", optim.beta1},
                  {"beta2", optim.beta2},
                  {"eps", optim.eps},
                  {"weight_decay", optim.weight_decay}};
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["seed"] = seed;
    j["export_masks"] = export_masks;
    return j.dump(2);
}

void RunConfig::validate() const {
    selector.validate();
    history.validate();
    model.validate();
    if (epochs < 0) fail(Err::Config, "epochs must be >= 0");
    if (batch_size < 1) fail(Err::Config, "batch_size must be >= 1");
    if (selector.attn_layer >= model.n_layers) {
        fail(Err::Config, "selector attn_layer out of range");
    }
}

std::vector<SelectionMask> tokencleaning_masks(const ModelSnapshot& initial,
                                               const ModelSnapshot& reference,
                                               const Corpus& corpus, double rho) {
    std::vector<std::vector<double>> pool(corpus.size());
    for (size_t i = 0; i < corpus.size(); ++i) {
        const auto cur_lp = forward_logprobs(initial, corpus.samples[i]);
        const auto ref_lp = forward_logprobs(reference, corpus.samples[i]);
        pool[i] = excess_loss(cur_lp, ref_lp);
    }
    return select_global_topk(pool, rho);
}

ModelSnapshot base_model_for(const RunConfig& cfg) {
    if (!cfg.init_checkpoint.empty()) {
        ModelSnapshot base = load_checkpoint(cfg.init_checkpoint);
        base.role = "model";
        if (base.config.vocab_size != cfg.model.vocab_size ||
            base.config.d_model != cfg.model.d_model ||
            base.config.n_layers != cfg.model.n_layers ||
            base.config.n_heads != cfg.model.n_heads ||
            base.config.d_ff != cfg.model.d_ff) {
            fail(Err::Shape, "init checkpoint shape differs from run model");
        }
        return base;
    }
    return ModelSnapshot::init(cfg.model, mix_seed(cfg.seed, "base_model"));
}

TrainResult train(const Corpus& train_corpus, const Corpus* heldout,
                  const RunConfig& cfg) {
    cfg.validate();
    if (train_corpus.samples.empty()) {
        fail(Err::EmptyInput, "train: empty corpus");
    }

    const ModelSnapshot base = base_model_for(cfg);
    ModelSnapshot model = base;
    ModelSnapshot history = init_history(base);

    // rho1 / tokencleaning reference: an externally provided checkpoint, or
    // the base snapshot when none is given.
    ModelSnapshot reference = base;
    reference.role = "reference";
    const bool needs_ref = cfg.selector.kind == SelectorKind::rho1 ||
                           cfg.selector.kind == SelectorKind::tokencleaning_global;
    if (needs_ref && !cfg.ref_checkpoint.empty()) {
        reference = load_checkpoint(cfg.ref_checkpoint);
        reference.role = "reference";
        if (!reference.params.same_shape_as(base.params) ||
            reference.config.vocab_size != cfg.model.vocab_size) {
            fail(Err::Shape, "reference checkpoint shape differs from run model");
        }
    }

    const size_t N = train_corpus.size();
    LogProbCache his_cache(N);
    LogProbCache ref_cache(N);

    SelectorSpec spec = cfg.selector;
    spec.seed = cfg.seed;

    // TokenCleaning's fixed-model variant: one pool-wide excess-loss pass
    // with the initial model, masks frozen for the whole run.
    std::vector<SelectionMask> fixed_global_masks;
    if (cfg.selector.kind == SelectorKind::tokencleaning_global) {
        fixed_global_masks =
            tokencleaning_masks(model, reference, train_corpus, spec.rho);
    }

    TrainResult result{model, history, {}};
    auto eval_epoch = [&](int epoch, const ModelSnapshot& m) {
        if (heldout && !heldout->samples.empty()) {
            result.report.epochs.push_back({epoch, eval_nll(m, *heldout)});
        }
    };
    eval_epoch(0, model);

    OptimizerState opt = OptimizerState::init(cfg.model);
    std::vector<size_t> order(N);
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(mix_seed(cfg.seed, "shuffle"), epoch));
        for (size_t i = N; i > 1; --i) {
            std::swap(order[i - 1], order[shuffle_rng.below(i)]);
        }

        for (size_t start = 0; start < N; start += cfg.batch_size) {
            const size_t end = std::min(N, start + cfg.batch_size);
            MaskedBatch batch;
            for (size_t b = start; b < end; ++b) {
                const size_t idx = order[b];
                const auto& sample = train_corpus.samples[idx];
                SelectionMask mask;
                switch (spec.kind) {
                    case SelectorKind::full: {
                        mask.bits.assign(sample.resp_len(), 1);
                        mask.k = sample.resp_len();
                        mask.rho = 1.0;
                        break;
                    }
                    case SelectorKind::random: {
                        mask = score_sample(model, nullptr, sample, spec, idx)
                                   .mask;
                        break;
                    }
                    case SelectorKind::rho1: {
                        const auto& ref_lp =
                            ref_cache.get_or_compute(reference, sample, idx);
                        mask = score_sample(model, &reference, sample, spec, idx,
                                            &ref_lp)
                                   .mask;
                        break;
                    }
                    case SelectorKind::tokencleaning_global: {
                        mask = fixed_global_masks[idx];
                        if (mask.k == 0) continue;  // skipped this step
                        break;
                    }
                    case SelectorKind::sstoken: {
                        const TokenLogProbs* his_lp = nullptr;
                        if (cfg.history.mode == HistoryMode::frozen_base) {
                            his_lp = &his_cache.get_or_compute(history, sample, idx);
                        }
                        mask = score_sample(model, &history, sample, spec, idx,
                                            his_lp)
                                   .mask;
                        break;
                    }
                }
                batch.samples.push_back(sample);
                batch.masks.push_back(std::move(mask));
            }
            if (batch.samples.empty()) continue;

            const auto t0 = std::chrono::steady_clock::now();
            auto [loss, grads] = loss_and_grad(model, batch);
            auto [next_model, next_opt] = optimizer_step(model, grads, opt, cfg.optim);
            model = std::move(next_model);
            opt = std::move(next_opt);
            const auto t1 = std::chrono::steady_clock::now();

            if (history_update_due(cfg.history, opt.step)) {
                history = ema_update(history, model, cfg.history.alpha);
                his_cache.invalidate();
            }

            result.report.steps.push_back(
                {opt.step, loss,
                 std::chrono::duration<double, std::milli>(t1 - t0).count()});
        }
        eval_epoch(epoch + 1, model);
    }

    result.model = std::move(model);
    result.history = std::move(history);
    return result;
}

}  // namespace sst
