#pragma once

#include <cmath>
#include <vector>

#include "eclab/autodiff.hpp"
#include "eclab/matrix.hpp"
#include "eclab/power_iteration.hpp"

namespace eclab {

struct AttentionConfig {
    std::size_t d_model = 64;
    std::size_t n_heads = 1;
    std::size_t head_dim = 64;   // n_a per head
    std::size_t value_dim = 64;  // n_v per head
    bool use_sqrt_d_scaling = true;
    double temperature = 1.0;

    void validate() const {
        if (n_heads * head_dim != d_model)
            throw ConfigError("AttentionConfig: n_heads * head_dim != d_model");
        if (temperature <= 0.0) throw ConfigError("AttentionConfig: temperature must be > 0");
    }
};

struct AttentionStats {
    double mean_entropy = 0.0;       // nats, averaged over query positions and heads
    double min_row_entropy = 0.0;
    double max_logit_row_norm = 0.0; // max_i ||a_i||_2
    double sigma_kq = 0.0;           // ||W_K W_Q^T||_2 estimate
    double sigma_x = 0.0;            // ||X X^T||_2 estimate
};

struct AttendResult {
    Matrix output;  // T x (n_heads * value_dim)
    Matrix logits;  // heads stacked vertically: (n_heads*T) x T, pre-softmax a
    Matrix attn;    // same stacking, row-stochastic
};

/// Dot-product self-attention: a = X W_K W_Q^T X^T per head, A = softmax of
/// a (optionally /sqrt(head_dim), always /temperature), output = A X W_V.
/// Multi-head uses per-head column slices of the weight matrices; logits and
/// attention rows of all heads are stacked vertically.
inline AttendResult attend(const Matrix& x, const Matrix& wk, const Matrix& wq,
                           const Matrix& wv, const AttentionConfig& cfg, bool causal = false) {
    cfg.validate();
    const std::size_t T = x.rows();
    if (x.cols() != cfg.d_model || wk.rows() != cfg.d_model || wq.rows() != cfg.d_model ||
        wv.rows() != cfg.d_model || wk.cols() != cfg.n_heads * cfg.head_dim ||
        wq.cols() != cfg.n_heads * cfg.head_dim || wv.cols() != cfg.n_heads * cfg.value_dim)
        throw ShapeError("attend: weight shapes inconsistent with config");

    const Matrix k = matmul(x, wk);
    const Matrix q = matmul(x, wq);
    const Matrix v = matmul(x, wv);

    AttendResult r;
    r.output = Matrix(T, cfg.n_heads * cfg.value_dim);
    r.logits = Matrix(cfg.n_heads * T, T);
    r.attn = Matrix(cfg.n_heads * T, T);

    const double scale = cfg.use_sqrt_d_scaling ? 1.0 / std::sqrt(static_cast<double>(cfg.head_dim))
                                                : 1.0;
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
        const std::size_t k0 = h * cfg.head_dim;
        const std::size_t v0 = h * cfg.value_dim;
        for (std::size_t i = 0; i < T; ++i)
            for (std::size_t j = 0; j < T; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < cfg.head_dim; ++c) s += k(i, k0 + c) * q(j, k0 + c);
                r.logits(h * T + i, j) = s * scale;
            }

        ad::Tape t;
        Matrix head_logits(T, T);
        for (std::size_t i = 0; i < T; ++i)
            for (std::size_t j = 0; j < T; ++j) head_logits(i, j) = r.logits(h * T + i, j);
        Matrix head_attn =
            t.value(t.rowwise_softmax(t.leaf(head_logits), cfg.temperature, causal));
        for (std::size_t i = 0; i < T; ++i)
            for (std::size_t j = 0; j < T; ++j) r.attn(h * T + i, j) = head_attn(i, j);

        for (std::size_t i = 0; i < T; ++i)
            for (std::size_t c = 0; c < cfg.value_dim; ++c) {
                double s = 0.0;
                for (std::size_t j = 0; j < T; ++j) s += head_attn(i, j) * v(j, v0 + c);
                r.output(i, v0 + c) = s;
            }
    }
    return r;
}

struct EntropyResult {
    std::vector<double> per_row;  // nats, one per attention row
    double mean = 0.0;
};

/// Shannon entropy of each row of a row-stochastic matrix, 0 log 0 = 0.
/// Masked (causal) zeros contribute nothing by the same convention.
inline EntropyResult attention_entropy(const Matrix& attn) {
    EntropyResult r;
    r.per_row.reserve(attn.rows());
    for (std::size_t i = 0; i < attn.rows(); ++i) {
        double sum = 0.0, ent = 0.0;
        for (std::size_t j = 0; j < attn.cols(); ++j) {
            const double p = attn(i, j);
            if (p < 0.0)
                throw ContractError("attention_entropy: negative entry at row " +
                                    std::to_string(i));
            sum += p;
            if (p > 0.0) ent -= p * std::log(p);
        }
        if (std::fabs(sum - 1.0) > 1e-9)
            throw ContractError("attention_entropy: row " + std::to_string(i) +
                                " sums to " + std::to_string(sum));
        r.per_row.push_back(ent);
        r.mean += ent;
    }
    if (!r.per_row.empty()) r.mean /= static_cast<double>(r.per_row.size());
    return r;
}

/// Per-layer instrumentation: entropies, logit row norms and the spectral
/// norms entering the entropy bound (sigma on W_K W_Q^T, sigma_x on X X^T).
inline AttentionStats collect_stats(const Matrix& x, const Matrix& wk, const Matrix& wq,
                                    const Matrix& attn, const Matrix& logits,
                                    double tol = 1e-8, int max_steps = 200) {
    AttentionStats s;
    EntropyResult ent = attention_entropy(attn);
    s.mean_entropy = ent.mean;
    s.min_row_entropy = ent.per_row.empty()
                            ? 0.0
                            : *std::min_element(ent.per_row.begin(), ent.per_row.end());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        double n = 0.0;
        for (std::size_t j = 0; j < logits.cols(); ++j) n += logits(i, j) * logits(i, j);
        s.max_logit_row_norm = std::max(s.max_logit_row_norm, std::sqrt(n));
    }
    s.sigma_kq = spectral_norm_converged(matmul(wk, transpose(wq)), tol, max_steps).sigma;
    s.sigma_x = spectral_norm_converged(matmul(x, transpose(x)), tol, max_steps).sigma;
    return s;
}

}  // namespace eclab
