#include "sst/model.hpp"

#include <cmath>

#include "kernels.hpp"

namespace sst {

void ModelConfig::validate() const {
    if (vocab_size < 2) fail(Err::Config, "vocab_size must be >= 2");
    if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0 ||
        max_seq_len <= 0) {
        fail(Err::Config, "model dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
        fail(Err::Config, "d_model must be divisible by n_heads");
    }
    if (attn_layer_index >= n_layers) {
        fail(Err::Config, "attn_layer_index out of range");
    }
}

Tensor Tensor::zeros(std::vector<size_t> shape) {
    Tensor t;
    size_t n = 1;
    for (size_t d : shape) n *= d;
    t.shape = std::move(shape);
    t.data.assign(n, 0.0);
    return t;
}

ParamSet ParamSet::zeros(const ModelConfig& c) {
    const auto d = static_cast<size_t>(c.d_model);
    const auto v = static_cast<size_t>(c.vocab_size);
    const auto f = static_cast<size_t>(c.d_ff);

    ParamSet p;
    p.wte = Tensor::zeros({v, d});
    p.wpe = Tensor::zeros({static_cast<size_t>(c.max_seq_len), d});
    p.layers.resize(c.n_layers);
    for (auto& l : p.layers) {
        l.ln1_g = Tensor::zeros({d});
        l.ln1_b = Tensor::zeros({d});
        l.wq = Tensor::zeros({d, d});
        l.wk = Tensor::zeros({d, d});
        l.wv = Tensor::zeros({d, d});
        l.wo = Tensor::zeros({d, d});
        l.ln2_g = Tensor::zeros({d});
        l.ln2_b = Tensor::zeros({d});
        l.w_fc = Tensor::zeros({f, d});
        l.b_fc = Tensor::zeros({f});
        l.w_proj = Tensor::zeros({d, f});
        l.b_proj = Tensor::zeros({d});
    }
    p.lnf_g = Tensor::zeros({d});
    p.lnf_b = Tensor::zeros({d});
    p.w_head = Tensor::zeros({v, d});
    return p;
}

std::vector<std::pair<std::string, Tensor*>> ParamSet::named_tensors() {
    std::vector<std::pair<std::string, Tensor*>> out;
    out.reserve(4 + layers.size() * 12);
    out.emplace_back("wte", &wte);
    out.emplace_back("wpe", &wpe);
    for (size_t i = 0; i < layers.size(); ++i) {
        const std::string pre = "layer" + std::to_string(i) + ".";
        auto& l = layers[i];
        out.emplace_back(pre + "ln1_g", &l.ln1_g);
        out.emplace_back(pre + "ln1_b", &l.ln1_b);
        out.emplace_back(pre + "wq", &l.wq);
        out.emplace_back(pre + "wk", &l.wk);
        out.emplace_back(pre + "wv", &l.wv);
        out.emplace_back(pre + "wo", &l.wo);
        out.emplace_back(pre + "ln2_g", &l.ln2_g);
        out.emplace_back(pre + "ln2_b", &l.ln2_b);
        out.emplace_back(pre + "w_fc", &l.w_fc);
        out.emplace_back(pre + "b_fc", &l.b_fc);
        out.emplace_back(pre + "w_proj", &l.w_proj);
        out.emplace_back(pre + "b_proj", &l.b_proj);
    }
    out.emplace_back("lnf_g", &lnf_g);
    out.emplace_back("lnf_b", &lnf_b);
    out.emplace_back("w_head", &w_head);
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> ParamSet::named_tensors() const {
    auto mut = const_cast<ParamSet*>(this)->named_tensors();
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(mut.size());
    for (auto& [name, t] : mut) out.emplace_back(name, t);
    return out;
}

bool ParamSet::all_finite() const {
    for (const auto& [name, t] : named_tensors()) {
        for (double x : t->data) {
            if (!std::isfinite(x)) return false;
        }
    }
    return true;
}

bool ParamSet::same_shape_as(const ParamSet& other) const {
    auto a = named_tensors();
    auto b = other.named_tensors();
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i].first != b[i].first || a[i].second->shape != b[i].second->shape)
            return false;
    }
    return true;
}

ModelSnapshot ModelSnapshot::init(const ModelConfig& config, uint64_t seed) {
    config.validate();
    ModelSnapshot m;
    m.config = config;
    m.params = ParamSet::zeros(config);

    Rng rng(mix_seed(seed, "model_init"));
    const double std_base = 0.02;
    const double std_resid = std_base / std::sqrt(2.0 * config.n_layers);

    auto fill = [&rng](Tensor& t, double std) {
        for (double& x : t.data) x = rng.normal() * std;
    };
    auto ones = [](Tensor& t) {
        for (double& x : t.data) x = 1.0;
    };

    fill(m.params.wte, std_base);
    fill(m.params.wpe, std_base);
    for (auto& l : m.params.layers) {
        ones(l.ln1_g);
        fill(l.wq, std_base);
        fill(l.wk, std_base);
        fill(l.wv, std_base);
        fill(l.wo, std_resid);
        ones(l.ln2_g);
        fill(l.w_fc, std_base);
        fill(l.w_proj, std_resid);
    }
    ones(m.params.lnf_g);
    fill(m.params.w_head, std_base);
    return m;
}

double TokenLogProbs::nll_mean() const {
    if (logp.empty()) fail(Err::EmptyInput, "nll_mean on empty log-probs");
    double s = 0.0;
    for (double lp : logp) s -= lp;
    return s / static_cast<double>(logp.size());
}

namespace {

void check_sample(const ModelConfig& c, const TokenizedSample& s) {
    c.validate();
    if (s.total_len() == 0 || s.prompt_len == 0 || s.resp_len() == 0) {
        fail(Err::Shape, "sample must have non-empty prompt and response");
    }
    if (s.total_len() > static_cast<size_t>(c.max_seq_len)) {
        fail(Err::Shape, "sample length exceeds model max_seq_len");
    }
    for (TokenId id : s.ids) {
        if (id < 0 || id >= c.vocab_size) {
            fail(Err::Shape, "token id out of vocabulary range");
        }
    }
}

// Single forward implementation shared by forward_logprobs and
// forward_with_capture so their log-probs agree bitwise. Per-layer buffers
// are reused across layers; only the target layer's post-norm input is
// copied out when capturing.
TokenLogProbs forward_eval(const ModelSnapshot& model,
                           const TokenizedSample& sample, int capture_layer,
                           std::vector<double>* capture_out) {
    check_sample(model.config, sample);
    const auto& c = model.config;
    const auto& p = model.params;
    const size_t L = sample.total_len();
    const int d = c.d_model;
    const int H = c.n_heads;
    const int F = c.d_ff;
    const int V = c.vocab_size;

    std::vector<double> x(L * d);
    for (size_t t = 0; t < L; ++t) {
        const double* te = p.wte.ptr() + static_cast<size_t>(sample.ids[t]) * d;
        const double* pe = p.wpe.ptr() + t * d;
        double* xt = x.data() + t * d;
        for (int i = 0; i < d; ++i) xt[i] = te[i] + pe[i];
    }

    std::vector<double> a(L * d), q(L * d), k(L * d), v(L * d);
    std::vector<double> att(static_cast<size_t>(H) * L * L);
    std::vector<double> concat(L * d), proj(d), h1(L * F), h2(L * F);

    for (int layer = 0; layer < c.n_layers; ++layer) {
        const auto& lp = p.layers[layer];
        for (size_t t = 0; t < L; ++t) {
            kern::layernorm(x.data() + t * d, d, lp.ln1_g.ptr(), lp.ln1_b.ptr(),
                            a.data() + t * d, nullptr, nullptr);
        }
        if (layer == capture_layer && capture_out) {
            capture_out->assign(a.begin(), a.end());
        }
        for (size_t t = 0; t < L; ++t) {
            kern::linear(a.data() + t * d, d, d, lp.wq.ptr(), nullptr,
                         q.data() + t * d);
            kern::linear(a.data() + t * d, d, d, lp.wk.ptr(), nullptr,
                         k.data() + t * d);
            kern::linear(a.data() + t * d, d, d, lp.wv.ptr(), nullptr,
                         v.data() + t * d);
        }
        kern::attention_forward(q.data(), k.data(), v.data(), L, d, H,
                                att.data(), concat.data());
        for (size_t t = 0; t < L; ++t) {
            kern::linear(concat.data() + t * d, d, d, lp.wo.ptr(), nullptr,
                         proj.data());
            double* xt = x.data() + t * d;
            for (int i = 0; i < d; ++i) xt[i] += proj[i];
        }
        for (size_t t = 0; t < L; ++t) {
            kern::layernorm(x.data() + t * d, d, lp.ln2_g.ptr(), lp.ln2_b.ptr(),
                            a.data() + t * d, nullptr, nullptr);
            kern::linear(a.data() + t * d, d, F, lp.w_fc.ptr(), lp.b_fc.ptr(),
                         h1.data() + t * F);
            for (int i = 0; i < F; ++i) {
                h2[t * F + i] = kern::gelu(h1[t * F + i]);
            }
            kern::linear(h2.data() + t * F, F, d, lp.w_proj.ptr(),
                         lp.b_proj.ptr(), a.data() + t * d);
            double* xt = x.data() + t * d;
            for (int i = 0; i < d; ++i) xt[i] += a[t * d + i];
        }
    }

    // Logits are only needed at positions that predict a response token.
    TokenLogProbs out;
    out.logp.resize(sample.resp_len());
    std::vector<double> xf(d), logits(V);
    for (size_t i = sample.prompt_len; i < L; ++i) {
        const size_t t = i - 1;
        kern::layernorm(x.data() + t * d, d, p.lnf_g.ptr(), p.lnf_b.ptr(),
                        xf.data(), nullptr, nullptr);
        kern::linear(xf.data(), d, V, p.w_head.ptr(), nullptr, logits.data());
        out.logp[i - sample.prompt_len] =
            kern::log_softmax_at(logits.data(), V, sample.ids[i]);
    }
    return out;
}

}  // namespace

TokenLogProbs forward_logprobs(const ModelSnapshot& model,
                               const TokenizedSample& sample) {
    return forward_eval(model, sample, -1, nullptr);
}

CaptureResult forward_with_capture(const ModelSnapshot& model,
                                   const TokenizedSample& sample,
                                   int layer_override) {
    CaptureResult r;
    r.layer = layer_override >= 0 ? layer_override
                                  : model.config.resolved_attn_layer();
    if (r.layer >= model.config.n_layers) {
        fail(Err::Config, "capture layer out of range");
    }
    r.seq_len = sample.total_len();
    r.logprobs = forward_eval(model, sample, r.layer, &r.hidden);
    return r;
}

AttentionSlice recompute_attention(const ModelSnapshot& model,
                                   const CaptureResult& captured,
                                   const TokenizedSample& sample) {
    check_sample(model.config, sample);
    const auto& c = model.config;
    const size_t L = sample.total_len();
    const int d = c.d_model;
    const int H = c.n_heads;
    const std::span<const double> hidden(captured.hidden);
    if (hidden.size() != L * static_cast<size_t>(d) || captured.seq_len != L) {
        fail(Err::Shape, "captured hidden states do not match sample shape");
    }
    const int layer = captured.layer;
    if (layer < 0 || layer >= c.n_layers) {
        fail(Err::Shape, "captured layer out of range");
    }
    const auto& lp = model.params.layers[layer];

    std::vector<double> q(L * d), k(L * d);
    for (size_t t = 0; t < L; ++t) {
        kern::linear(hidden.data() + t * d, d, d, lp.wq.ptr(), nullptr,
                     q.data() + t * d);
        kern::linear(hidden.data() + t * d, d, d, lp.wk.ptr(), nullptr,
                     k.data() + t * d);
    }

    AttentionSlice slice;
    slice.layer = layer;
    slice.n_heads = H;
    slice.seq_len = L;
    slice.att.resize(static_cast<size_t>(H) * L * L);
    kern::attention_scores(q.data(), k.data(), L, d, H, slice.att.data());
    return slice;
}

std::vector<double> attn_prompt_mass(const AttentionSlice& slice,
                                     const TokenizedSample& sample) {
    if (sample.prompt_len >= sample.total_len()) {
        fail(Err::Index, "attn_prompt_mass: sample has no response positions");
    }
    if (slice.seq_len != sample.total_len()) {
        fail(Err::Shape, "attention slice does not cover the sample");
    }
    const size_t L = slice.seq_len;
    const int H = slice.n_heads;

    std::vector<double> scores(sample.resp_len());
    for (size_t i = sample.prompt_len; i < L; ++i) {
        double acc = 0.0;
        for (int h = 0; h < H; ++h) {
            const double* row = slice.att.data() +
                                (static_cast<size_t>(h) * L + i) * L;
            for (size_t j = 0; j < sample.prompt_len; ++j) acc += row[j];
        }
        scores[i - sample.prompt_len] = acc / H;
    }
    return scores;
}

size_t capture_bytes(const ModelConfig& config, size_t seq_len) {
    return seq_len * static_cast<size_t>(config.d_model) * sizeof(double);
}

size_t layer_activation_bytes(const ModelConfig& config, size_t seq_len) {
    const auto d = static_cast<size_t>(config.d_model);
    const auto f = static_cast<size_t>(config.d_ff);
    const auto h = static_cast<size_t>(config.n_heads);
    // a, q, k, v, concat + attention rows + both MLP activations.
    const size_t doubles =
        5 * seq_len * d + h * seq_len * seq_len + 2 * seq_len * f;
    return doubles * sizeof(double);
}

}  // namespace sst
