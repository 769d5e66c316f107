// Internal numeric primitives shared by the scoring and training passes.
#pragma once

#include <cmath>
#include <cstddef>

namespace sst::kern {

inline constexpr double kLnEps = 1e-5;

// y = g * (x - mean) / sqrt(var + eps) + b, per position.
inline void layernorm(const double* x, int n, const double* g, const double* b,
                      double* y, double* mean_out, double* rstd_out) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += x[i];
    mean /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) {
        const double d = x[i] - mean;
        var += d * d;
    }
    var /= n;
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    for (int i = 0; i < n; ++i) {
        y[i] = g[i] * ((x[i] - mean) * rstd) + b[i];
    }
    if (mean_out) *mean_out = mean;
    if (rstd_out) *rstd_out = rstd;
}

// y[o] = sum_i w[o*in + i] * x[i] (+ bias[o])
inline void linear(const double* x, int in, int out, const double* w,
                   const double* bias, double* y) {
    for (int o = 0; o < out; ++o) {
        const double* wrow = w + static_cast<size_t>(o) * in;
        double acc = bias ? bias[o] : 0.0;
        for (int i = 0; i < in; ++i) acc += wrow[i] * x[i];
        y[o] = acc;
    }
}

inline double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
}

inline double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014326779;
    return cdf + x * pdf;
}

// Attention probabilities of one layer: att is n_heads x seq_len x seq_len
// with exact zeros above the diagonal, each row softmaxed over keys 0..i.
inline void attention_scores(const double* q, const double* k, size_t seq_len,
                             int d, int n_heads, double* att) {
    const int dk = d / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    for (int h = 0; h < n_heads; ++h) {
        const int off = h * dk;
        for (size_t i = 0; i < seq_len; ++i) {
            double* row = att + (static_cast<size_t>(h) * seq_len + i) * seq_len;
            const double* qi = q + i * d + off;
            double maxlogit = -1e300;
            for (size_t j = 0; j <= i; ++j) {
                const double* kj = k + j * d + off;
                double dot = 0.0;
                for (int c = 0; c < dk; ++c) dot += qi[c] * kj[c];
                row[j] = dot * scale;
                if (row[j] > maxlogit) maxlogit = row[j];
            }
            double denom = 0.0;
            for (size_t j = 0; j <= i; ++j) {
                row[j] = std::exp(row[j] - maxlogit);
                denom += row[j];
            }
            const double inv = 1.0 / denom;
            for (size_t j = 0; j <= i; ++j) row[j] *= inv;
            for (size_t j = i + 1; j < seq_len; ++j) row[j] = 0.0;
        }
    }
}

// Full attention application over precomputed q/k/v (each seq_len x d);
// writes the probabilities into att and the merged head outputs into
// concat (seq_len x d).
inline void attention_forward(const double* q, const double* k, const double* v,
                              size_t seq_len, int d, int n_heads, double* att,
                              double* concat) {
    attention_scores(q, k, seq_len, d, n_heads, att);
    const int dk = d / n_heads;
    for (int h = 0; h < n_heads; ++h) {
        const int off = h * dk;
        for (size_t i = 0; i < seq_len; ++i) {
            const double* row = att + (static_cast<size_t>(h) * seq_len + i) * seq_len;
            double* out = concat + i * d + off;
            for (int c = 0; c < dk; ++c) out[c] = 0.0;
            for (size_t j = 0; j <= i; ++j) {
                const double w = row[j];
                const double* vj = v + j * d + off;
                for (int c = 0; c < dk; ++c) out[c] += w * vj[c];
            }
        }
    }
}

// log softmax(logits)[target] with max-subtracted stabilization.
inline double log_softmax_at(const double* logits, int n, int target) {
    double maxv = logits[0];
    for (int i = 1; i < n; ++i) {
        if (logits[i] > maxv) maxv = logits[i];
    }
    double denom = 0.0;
    for (int i = 0; i < n; ++i) denom += std::exp(logits[i] - maxv);
    return logits[target] - maxv - std::log(denom);
}

}  // namespace sst::kern
