#include <gtest/gtest.h>

#include <cmath>

#include "eclab/attention.hpp"
#include "eclab/rng.hpp"

using namespace eclab;

namespace {

AttentionConfig theory_config(std::size_t d, std::size_t t) {
    (void)t;
    AttentionConfig cfg;
    cfg.d_model = d;
    cfg.n_heads = 1;
    cfg.head_dim = d;
    cfg.value_dim = d;
    cfg.use_sqrt_d_scaling = false;  // Theorem bookkeeping configuration
    cfg.temperature = 1.0;
    return cfg;
}

}  // namespace

TEST(Attend, ZeroWeightsUniformRows) {
    const std::size_t T = 6, d = 4;
    Rng rng(1);
    Matrix x = rng.normal_matrix(T, d);
    AttentionConfig cfg = theory_config(d, T);
    AttendResult r = attend(x, Matrix(d, d), Matrix(d, d), Matrix(d, d), cfg);
    for (std::size_t i = 0; i < T; ++i)
        for (std::size_t j = 0; j < T; ++j)
            EXPECT_NEAR(r.attn(i, j), 1.0 / static_cast<double>(T), 1e-15);
    EntropyResult ent = attention_entropy(r.attn);
    EXPECT_NEAR(ent.mean, std::log(static_cast<double>(T)), 1e-12);
}

TEST(Attend, SingleTokenIsDegenerate) {
    Rng rng(2);
    const std::size_t d = 3;
    AttentionConfig cfg = theory_config(d, 1);
    AttendResult r = attend(rng.normal_matrix(1, d), rng.normal_matrix(d, d),
                            rng.normal_matrix(d, d), rng.normal_matrix(d, d), cfg);
    EXPECT_EQ(r.attn.rows(), 1u);
    EXPECT_DOUBLE_EQ(r.attn(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(attention_entropy(r.attn).mean, 0.0);
}

TEST(Attend, MatchesNaivePerRowSoftmax) {
    Rng rng(3);
    const std::size_t T = 4, d = 4;
    Matrix x = rng.normal_matrix(T, d);
    Matrix wk = rng.normal_matrix(d, d, 0.5), wq = rng.normal_matrix(d, d, 0.5),
           wv = rng.normal_matrix(d, d, 0.5);
    AttentionConfig cfg = theory_config(d, T);
    AttendResult r = attend(x, wk, wq, wv, cfg);

    Matrix a = matmul(matmul(matmul(x, wk), transpose(wq)), transpose(x));
    for (std::size_t i = 0; i < T; ++i) {
        double z = 0.0, mx = a(i, 0);
        for (std::size_t j = 1; j < T; ++j) mx = std::max(mx, a(i, j));
        for (std::size_t j = 0; j < T; ++j) z += std::exp(a(i, j) - mx);
        for (std::size_t j = 0; j < T; ++j) {
            EXPECT_NEAR(r.logits(i, j), a(i, j), 1e-12);
            EXPECT_NEAR(r.attn(i, j), std::exp(a(i, j) - mx) / z, 1e-12);
        }
    }
}

TEST(Attend, MultiHeadOutputMatchesPerHeadAssembly) {
    Rng rng(4);
    const std::size_t T = 5, d = 6, heads = 2, hd = 3;
    Matrix x = rng.normal_matrix(T, d);
    Matrix wk = rng.normal_matrix(d, d, 0.4), wq = rng.normal_matrix(d, d, 0.4),
           wv = rng.normal_matrix(d, d, 0.4);
    AttentionConfig cfg;
    cfg.d_model = d;
    cfg.n_heads = heads;
    cfg.head_dim = hd;
    cfg.value_dim = hd;
    cfg.use_sqrt_d_scaling = true;
    AttendResult multi = attend(x, wk, wq, wv, cfg);
    EXPECT_EQ(multi.attn.rows(), heads * T);

    // each head must equal a single-head attend over its column slice
    for (std::size_t h = 0; h < heads; ++h) {
        Matrix wkh(d, hd), wqh(d, hd), wvh(d, hd);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < hd; ++j) {
                wkh(i, j) = wk(i, h * hd + j);
                wqh(i, j) = wq(i, h * hd + j);
                wvh(i, j) = wv(i, h * hd + j);
            }
        AttentionConfig one;
        one.d_model = d;
        one.n_heads = 1;
        one.head_dim = hd;  // rectangular head: n_heads*head_dim != d, so build manually
        one.value_dim = hd;
        one.use_sqrt_d_scaling = true;
        // bypass validate by computing logits directly
        Matrix a = scale(matmul(matmul(matmul(x, wkh), transpose(wqh)), transpose(x)),
                         1.0 / std::sqrt(static_cast<double>(hd)));
        for (std::size_t i = 0; i < T; ++i)
            for (std::size_t j = 0; j < T; ++j)
                EXPECT_NEAR(multi.logits(h * T + i, j), a(i, j), 1e-12);
    }
}

TEST(Attend, CausalMaskZerosAndEntropyCap) {
    Rng rng(5);
    const std::size_t T = 6, d = 4;
    AttentionConfig cfg = theory_config(d, T);
    AttendResult r = attend(rng.normal_matrix(T, d), rng.normal_matrix(d, d),
                            rng.normal_matrix(d, d), rng.normal_matrix(d, d), cfg, true);
    EntropyResult ent = attention_entropy(r.attn);
    for (std::size_t i = 0; i < T; ++i) {
        for (std::size_t j = i + 1; j < T; ++j) EXPECT_EQ(r.attn(i, j), 0.0);
        EXPECT_LE(ent.per_row[i], std::log(static_cast<double>(i + 1)) + 1e-12);
    }
}

TEST(AttentionEntropy, ClosedFormCases) {
    Matrix uniform(3, 3);
    for (double& x : uniform.data()) x = 1.0 / 3.0;
    EntropyResult u = attention_entropy(uniform);
    for (double e : u.per_row) EXPECT_NEAR(e, std::log(3.0), 1e-12);

    Matrix onehot{{1, 0, 0}, {0, 0, 1}};
    EXPECT_DOUBLE_EQ(attention_entropy(onehot).mean, 0.0);

    Matrix mixed{{0.5, 0.25, 0.25}};
    EXPECT_NEAR(attention_entropy(mixed).per_row[0], 1.5 * std::log(2.0), 1e-12);
}

TEST(AttentionEntropy, RowSumViolationThrows) {
    Matrix bad{{0.5, 0.2}};
    EXPECT_THROW(attention_entropy(bad), ContractError);
    Matrix neg{{1.5, -0.5}};
    EXPECT_THROW(attention_entropy(neg), ContractError);
}

TEST(AttentionEntropy, TemperatureMonotonicity) {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        Matrix u = rng.normal_matrix(1, 8, 2.0);
        double prev = -1.0;
        for (double tau : {0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 16.0}) {
            const double ent = attention_entropy(ad::rowwise_softmax(u, tau)).mean;
            EXPECT_GE(ent, prev - 1e-12) << "tau " << tau;
            prev = ent;
        }
    }
}

TEST(CollectStats, ZeroWeights) {
    Rng rng(7);
    const std::size_t T = 5, d = 3;
    Matrix x = rng.normal_matrix(T, d);
    AttentionConfig cfg = theory_config(d, T);
    AttendResult r = attend(x, Matrix(d, d), Matrix(d, d), Matrix(d, d), cfg);
    AttentionStats s = collect_stats(x, Matrix(d, d), Matrix(d, d), r.attn, r.logits);
    EXPECT_NEAR(s.mean_entropy, std::log(static_cast<double>(T)), 1e-12);
    EXPECT_EQ(s.sigma_kq, 0.0);
    EXPECT_EQ(s.max_logit_row_norm, 0.0);
}

TEST(CollectStats, IdentityCollapseConstruction) {
    const std::size_t T = 4;
    Matrix logits = scale(Matrix::identity(T), 50.0);
    ad::Tape t;
    Matrix attn = t.value(t.rowwise_softmax(t.leaf(logits), 1.0));
    Matrix x = Matrix::identity(T);
    AttentionStats s = collect_stats(x, Matrix(T, T), Matrix(T, T), attn, logits);
    EXPECT_LT(s.min_row_entropy, 1e-10);
}

TEST(CollectStats, LogitRowNormBoundedBySigmaChain) {
    Rng rng(8);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t T = 6, d = 4;
        Matrix x = rng.normal_matrix(T, d, 0.7);
        Matrix wk = rng.normal_matrix(d, d, 0.5), wq = rng.normal_matrix(d, d, 0.5);
        AttentionConfig cfg = theory_config(d, T);
        AttendResult r = attend(x, wk, wq, rng.normal_matrix(d, d), cfg);
        AttentionStats s = collect_stats(x, wk, wq, r.attn, r.logits, 1e-10, 2000);
        EXPECT_LE(s.max_logit_row_norm, s.sigma_kq * s.sigma_x + 1e-9);
    }
}

TEST(Attend, RowStochasticityProperty) {
    Rng rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t T = 7, d = 4;
        AttentionConfig cfg = theory_config(d, T);
        cfg.temperature = 0.5 + rng.uniform() * 3.0;
        AttendResult r = attend(rng.normal_matrix(T, d), rng.normal_matrix(d, d),
                                rng.normal_matrix(d, d), rng.normal_matrix(d, d), cfg,
                                trial % 2 == 0);
        for (std::size_t i = 0; i < r.attn.rows(); ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < r.attn.cols(); ++j) s += r.attn(i, j);
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
    }
}
