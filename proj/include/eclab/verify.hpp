#pragma once

// Self-check suites behind `verify`: entropy bound, adaptive-update bound,
// power iteration, and autodiff finite differences, each reported as a
// pass/fail table row.

#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "eclab/attention.hpp"
#include "eclab/autodiff.hpp"
#include "eclab/diagnostics.hpp"
#include "eclab/reparam.hpp"
#include "eclab/rng.hpp"
#include "eclab/svd.hpp"

namespace eclab {

struct VerifyCheck {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct VerifySuiteResult {
    std::string suite;
    std::vector<VerifyCheck> checks;

    bool all_passed() const {
        for (const VerifyCheck& c : checks)
            if (!c.passed) return false;
        return true;
    }
};

namespace detail {

inline const std::vector<double>& bound_sigmas() {
    static const std::vector<double> v{0.0, 0.5, 1.0, 2.0, 5.0, 10.0};
    return v;
}
inline const std::vector<std::size_t>& bound_ts() {
    static const std::vector<std::size_t> v{2, 4, 8, 64};
    return v;
}

/// Central-difference check of d(scalar graph)/d(leaves); returns worst
/// relative error over sampled coordinates.
inline double fd_worst_rel(
    const std::function<ad::NodeId(ad::Tape&, const std::vector<ad::NodeId>&)>& build,
    const std::vector<Matrix>& leaves, std::uint64_t seed, std::size_t coords_per_leaf) {
    auto eval = [&](const std::vector<Matrix>& vals) {
        ad::Tape t;
        std::vector<ad::NodeId> ids;
        for (const Matrix& m : vals) ids.push_back(t.leaf(m));
        return t.value(build(t, ids))(0, 0);
    };
    ad::Tape t;
    std::vector<ad::NodeId> ids;
    for (const Matrix& m : leaves) ids.push_back(t.leaf(m));
    t.backward(build(t, ids));

    Rng rng(seed);
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        const Matrix& g = t.grad(ids[li]);
        for (std::size_t c = 0; c < coords_per_leaf; ++c) {
            const std::size_t k = rng.integer(leaves[li].size());
            std::vector<Matrix> plus = leaves, minus = leaves;
            plus[li].data()[k] += h;
            minus[li].data()[k] -= h;
            const double fd = (eval(plus) - eval(minus)) / (2.0 * h);
            const double an = g.data()[k];
            const double rel =
                std::fabs(an - fd) / std::max({1e-8, std::fabs(an), std::fabs(fd)});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace detail

/// Entropy lower bound: validity on random rows, tightness of the closed-form
/// minimizer, and the sigma=0 boundary value log T.
inline VerifySuiteResult verify_bound(std::uint64_t seed, std::size_t samples_per_cell = 2000) {
    VerifySuiteResult res{"bound", {}};
    Rng rng(derive_seed(seed, SeedStream::Oracle));

    bool valid = true, tight = true, boundary = true;
    double worst_violation = 0.0, worst_gap = 0.0, worst_boundary = 0.0;
    for (double sigma : detail::bound_sigmas()) {
        for (std::size_t t : detail::bound_ts()) {
            const double bound = entropy_lower_bound(sigma, t);
            for (std::size_t s = 0; s < samples_per_cell; ++s) {
                std::vector<double> u = rng.unit_vector(t);
                const double r = sigma * std::pow(rng.uniform(), 1.0 / t);
                for (double& x : u) x *= r;
                const double ent = softmax_entropy(u);
                worst_violation = std::max(worst_violation, bound - ent);
                if (ent < bound - 1e-12) valid = false;
            }
            const double ent_min = softmax_entropy(tight_minimizer(sigma, t));
            worst_gap = std::max(worst_gap, std::fabs(ent_min - bound));
            if (std::fabs(ent_min - bound) > 1e-10) tight = false;
            if (sigma == 0.0) {
                const double gap = std::fabs(bound - std::log(static_cast<double>(t)));
                worst_boundary = std::max(worst_boundary, gap);
                if (gap > 1e-14) boundary = false;
            }
        }
    }
    res.checks.push_back({"validity on random rows", valid,
                          "worst violation " + std::to_string(worst_violation)});
    res.checks.push_back(
        {"tight minimizer matches bound", tight, "worst gap " + std::to_string(worst_gap)});
    res.checks.push_back({"sigma=0 boundary equals log T", boundary,
                          "worst gap " + std::to_string(worst_boundary)});
    return res;
}

/// Adaptive-update spectral bound: closed forms and a random sweep.
inline VerifySuiteResult verify_prop32(std::uint64_t seed, std::size_t trials_per_w = 250) {
    VerifySuiteResult res{"prop32", {}};
    Rng rng(derive_seed(seed, SeedStream::Oracle));

    bool closed = true;
    for (std::size_t w : {2u, 4u, 8u}) {
        Matrix mu(w, w);
        for (std::size_t i = 0; i < mu.size(); ++i)
            mu.data()[i] = 0.5 + static_cast<double>(i % 7);
        AdaptiveUpdateBound nf = adaptive_update_bound(mu, Matrix(w, w));
        if (std::fabs(nf.lower_bound - std::sqrt(static_cast<double>(w))) > 1e-12)
            closed = false;
        AdaptiveUpdateBound eq = adaptive_update_bound(mu, mu);
        if (std::fabs(eq.lower_bound - std::sqrt(static_cast<double>(w) / 2.0)) > 1e-12)
            closed = false;
    }
    res.checks.push_back({"closed forms (n=0, n=mu)", closed, "w in {2,4,8}"});

    bool sweep = true;
    double worst = 0.0;
    for (std::size_t w : {2u, 4u, 8u, 16u}) {
        for (std::size_t trial = 0; trial < trials_per_w; ++trial) {
            Matrix mu(w, w), noise(w, w);
            for (double& x : mu.data()) x = rng.normal(0.0, 2.0);
            for (double& x : noise.data()) x = std::fabs(rng.normal(0.0, 2.0));
            AdaptiveUpdateBound r = adaptive_update_bound(mu, noise);
            worst = std::max(worst, r.lower_bound - r.sigma_delta);
            if (r.sigma_delta < r.lower_bound - 1e-10) sweep = false;
        }
    }
    res.checks.push_back({"random sweep never violated", sweep,
                          "worst margin " + std::to_string(worst)});
    return res;
}

/// Power iteration vs the Jacobi SVD oracle, plus the reparameterized
/// spectral-norm identity sigma(W_hat) = |gamma|.
inline VerifySuiteResult verify_power(std::uint64_t seed, std::size_t n_matrices = 50) {
    VerifySuiteResult res{"power", {}};
    Rng rng(derive_seed(seed, SeedStream::Oracle));

    bool converges = true;
    double worst_rel = 0.0;
    for (std::size_t trial = 0; trial < n_matrices; ++trial) {
        const std::size_t m = 2 + rng.integer(63), n = 2 + rng.integer(63);
        Matrix w = rng.normal_matrix(m, n);
        // plant a spike along the top singular pair: square gaussians can have
        // a vanishing spectral gap, which no fixed step budget survives
        SvdResult sv = svd(w);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                w(i, j) += sv.singular_values[0] * sv.left_vectors(i, 0) *
                           sv.right_vectors(j, 0);
        std::vector<double> u = rng.unit_vector(m), v = rng.unit_vector(n);
        PowerStepResult step{u, v, 0.0};
        for (int i = 0; i < 100; ++i) step = power_iteration_step(w, step.u, step.v);
        const double oracle = sigma_svd(w);
        const double rel = std::fabs(step.sigma - oracle) / oracle;
        worst_rel = std::max(worst_rel, rel);
        if (rel > 1e-6) converges = false;
    }
    res.checks.push_back({"100-step estimate vs SVD oracle", converges,
                          "worst rel " + std::to_string(worst_rel)});

    bool identity = true;
    double worst_id = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        Matrix w = rng.normal_matrix(12, 9);
        SpectralState s = SpectralState::init(12, 9, rng);
        s.gamma = 0.25 + rng.uniform() * 3.0;
        for (int i = 0; i < 400; ++i) reparam_forward(w, s, true);
        const double sig = sigma_svd(reparam_forward(w, s, false).w_hat);
        const double rel = std::fabs(sig - std::fabs(s.gamma)) / std::fabs(s.gamma);
        worst_id = std::max(worst_id, rel);
        if (rel > 1e-6) identity = false;
    }
    res.checks.push_back({"sigma(W_hat) equals |gamma|", identity,
                          "worst rel " + std::to_string(worst_id)});
    return res;
}

/// Finite-difference gradient checks over the main differentiable ops.
inline VerifySuiteResult verify_gradcheck(std::uint64_t seed) {
    VerifySuiteResult res{"gradcheck", {}};
    Rng rng(derive_seed(seed, SeedStream::Oracle));

    struct Case {
        std::string name;
        std::function<ad::NodeId(ad::Tape&, const std::vector<ad::NodeId>&)> build;
        std::vector<Matrix> leaves;
    };
    std::vector<Case> cases;
    cases.push_back({"matmul + gelu chain",
                     [](ad::Tape& t, const std::vector<ad::NodeId>& in) {
                         return t.reduce_mean(t.gelu(t.matmul(in[0], in[1])));
                     },
                     {rng.normal_matrix(4, 5), rng.normal_matrix(5, 3)}});
    cases.push_back({"temperature softmax",
                     [](ad::Tape& t, const std::vector<ad::NodeId>& in) {
                         // gelu keeps the reduction sensitive: a plain mean of
                         // row-stochastic outputs has an identically zero grad
                         return t.reduce_mean(t.gelu(t.rowwise_softmax(in[0], 0.7)));
                     },
                     {rng.normal_matrix(4, 4)}});
    cases.push_back({"layernorm",
                     [](ad::Tape& t, const std::vector<ad::NodeId>& in) {
                         return t.reduce_mean(t.layernorm(in[0], in[1], in[2]));
                     },
                     {rng.normal_matrix(3, 6), rng.normal_matrix(1, 6, 0.5),
                      rng.normal_matrix(1, 6, 0.5)}});
    cases.push_back({"cross entropy",
                     [](ad::Tape& t, const std::vector<ad::NodeId>& in) {
                         return t.cross_entropy_mean(in[0], {1, 0, 2});
                     },
                     {rng.normal_matrix(3, 4)}});
    cases.push_back({"row weight norm",
                     [](ad::Tape& t, const std::vector<ad::NodeId>& in) {
                         return t.reduce_mean(t.gelu(t.row_weightnorm(in[0], in[1])));
                     },
                     {rng.normal_matrix(4, 6), rng.normal_matrix(1, 4, 0.3)}});

    for (const Case& c : cases) {
        const double worst = detail::fd_worst_rel(c.build, c.leaves, seed + 17, 20);
        res.checks.push_back(
            {c.name, worst <= 1e-5, "worst rel " + std::to_string(worst)});
    }
    return res;
}

inline std::vector<VerifySuiteResult> run_verify(const std::string& suite,
                                                 std::uint64_t seed) {
    std::vector<VerifySuiteResult> out;
    if (suite == "bound" || suite == "all") out.push_back(verify_bound(seed));
    if (suite == "prop32" || suite == "all") out.push_back(verify_prop32(seed));
    if (suite == "power" || suite == "all") out.push_back(verify_power(seed));
    if (suite == "gradcheck" || suite == "all") out.push_back(verify_gradcheck(seed));
    if (out.empty()) throw ConfigError("verify: unknown suite " + suite);
    return out;
}

inline bool print_verify_table(std::ostream& os,
                               const std::vector<VerifySuiteResult>& results) {
    bool all = true;
    for (const VerifySuiteResult& suite : results) {
        for (const VerifyCheck& c : suite.checks) {
            os << (c.passed ? "PASS" : "FAIL") << "  " << suite.suite << ": " << c.name
               << "  (" << c.detail << ")\n";
            all = all && c.passed;
        }
    }
    os << (all ? "ALL PASS" : "FAILURES PRESENT") << "\n";
    return all;
}

}  // namespace eclab
