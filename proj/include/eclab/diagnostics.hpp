#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "eclab/attention.hpp"
#include "eclab/matrix.hpp"
#include "eclab/rng.hpp"
#include "eclab/svd.hpp"

namespace eclab {

/// Tight lower bound on softmax row entropy for logit rows with
/// ||u|| <= sigma_bar:
///   log(1 + (T-1) b) + sigma_bar sqrt(T(T-1)) b / (1 + (T-1) b),
/// b = exp(-sigma_bar sqrt(T/(T-1))). At sigma_bar = 0 this is exactly log T;
/// for large sigma_bar b underflows and the bound decays smoothly to 0.
inline double entropy_lower_bound(double sigma_bar, std::size_t t) {
    if (t < 2) throw DomainError("entropy_lower_bound: need T >= 2");
    if (sigma_bar < 0.0) throw DomainError("entropy_lower_bound: sigma_bar must be >= 0");
    const double T = static_cast<double>(t);
    const double b = std::exp(-sigma_bar * std::sqrt(T / (T - 1.0)));
    const double tb = (T - 1.0) * b;
    const double bound = std::log1p(tb) + sigma_bar * std::sqrt(T * (T - 1.0)) * b / (1.0 + tb);
    return std::max(bound, 0.0);
}

/// The explicit minimizer: one component sigma_bar*sqrt(1 - 1/T) and T-1
/// components -sigma_bar/sqrt(T(T-1)); has norm exactly sigma_bar and its
/// softmax entropy attains entropy_lower_bound.
inline std::vector<double> tight_minimizer(double sigma_bar, std::size_t t) {
    if (t < 2) throw DomainError("tight_minimizer: need T >= 2");
    if (sigma_bar < 0.0) throw DomainError("tight_minimizer: sigma_bar must be >= 0");
    const double T = static_cast<double>(t);
    const double pos = sigma_bar * std::sqrt(1.0 - 1.0 / T);
    const double neg = -sigma_bar * std::sqrt(1.0 / (T * (T - 1.0)));
    std::vector<double> u(t, neg);
    u[0] = pos;
    return u;
}

/// Softmax entropy of a logit row (stable, 0 log 0 = 0).
inline double softmax_entropy(const std::vector<double>& u) {
    const double mx = *std::max_element(u.begin(), u.end());
    double z = 0.0;
    for (double x : u) z += std::exp(x - mx);
    double ent = 0.0;
    for (double x : u) {
        const double p = std::exp(x - mx) / z;
        if (p > 0.0) ent -= p * std::log(p);
    }
    return ent;
}

/// Brute-force minimum of softmax entropy over the sphere ||u|| = sigma_bar:
/// random directions plus projected-gradient refinement from the best
/// candidates. Serves as the independent oracle for the bound's tightness.
inline double entropy_min_oracle(double sigma_bar, std::size_t t, std::size_t n_samples,
                                 std::uint64_t seed) {
    if (sigma_bar == 0.0) return std::log(static_cast<double>(t));
    Rng rng(seed);

    std::vector<std::pair<double, std::vector<double>>> best;
    double min_ent = std::log(static_cast<double>(t));
    for (std::size_t s = 0; s < n_samples; ++s) {
        std::vector<double> u = rng.unit_vector(t);
        for (double& x : u) x *= sigma_bar;
        const double ent = softmax_entropy(u);
        min_ent = std::min(min_ent, ent);
        best.emplace_back(ent, std::move(u));
        if (best.size() > 10) {
            std::nth_element(best.begin(), best.begin() + 9, best.end(),
                             [](const auto& a, const auto& b) { return a.first < b.first; });
            best.resize(10);
        }
    }

    // Projected gradient descent on the sphere from the best samples.
    // dEnt/du_k = -p_k (log p_k + Ent(u)).
    for (auto& [ent0, u] : best) {
        std::vector<double> u_cur = u;
        double lr = 0.5;
        for (int step = 0; step < 500; ++step) {
            const double mx = *std::max_element(u_cur.begin(), u_cur.end());
            double z = 0.0;
            for (double x : u_cur) z += std::exp(x - mx);
            double ent = 0.0;
            std::vector<double> p(t);
            for (std::size_t k = 0; k < t; ++k) {
                p[k] = std::exp(u_cur[k] - mx) / z;
                if (p[k] > 0.0) ent -= p[k] * std::log(p[k]);
            }
            std::vector<double> g(t);
            for (std::size_t k = 0; k < t; ++k)
                g[k] = -p[k] * ((p[k] > 0.0 ? std::log(p[k]) : -745.0) + ent);
            // remove the radial component, then retract onto the sphere
            const double radial = dot(g, u_cur) / (sigma_bar * sigma_bar);
            for (std::size_t k = 0; k < t; ++k) g[k] -= radial * u_cur[k];
            std::vector<double> trial(t);
            for (std::size_t k = 0; k < t; ++k) trial[k] = u_cur[k] - lr * g[k];
            const double n = norm2(trial);
            if (n < 1e-300) break;
            for (double& x : trial) x *= sigma_bar / n;
            if (softmax_entropy(trial) <= ent) {
                u_cur = std::move(trial);
            } else {
                lr *= 0.5;
                if (lr < 1e-12) break;
            }
        }
        min_ent = std::min(min_ent, softmax_entropy(u_cur));
    }
    return min_ent;
}

struct EntropyBoundCertificate {
    double sigma_bar = 0.0;
    std::size_t t = 0;
    double beta = 0.0;  // exp(-sigma_bar sqrt(T/(T-1)))
    double bound_nats = 0.0;
    double measured_min_row_entropy = 0.0;
    bool satisfied = false;
    std::vector<std::size_t> violating_rows;  // rows with ||a_i|| > sigma_bar
};

/// Compare measured per-row attention entropies against the lower bound.
/// Only rows whose logit norm actually obeys ||a_i|| <= sigma_bar are in
/// scope; rows exceeding it are listed and excluded from the verdict.
inline EntropyBoundCertificate check_attention_bound(const AttentionStats& stats,
                                                     const Matrix& logits) {
    EntropyBoundCertificate cert;
    cert.t = logits.cols();
    cert.sigma_bar = stats.sigma_kq * stats.sigma_x;
    const double T = static_cast<double>(cert.t);
    cert.beta = std::exp(-cert.sigma_bar * std::sqrt(T / (T - 1.0)));
    cert.bound_nats = entropy_lower_bound(cert.sigma_bar, cert.t);

    double min_ent = std::numeric_limits<double>::infinity();
    bool any_applicable = false;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        double n = 0.0;
        for (std::size_t j = 0; j < logits.cols(); ++j) n += logits(i, j) * logits(i, j);
        if (std::sqrt(n) > cert.sigma_bar + 1e-9) {
            cert.violating_rows.push_back(i);
            continue;
        }
        any_applicable = true;
        min_ent = std::min(min_ent, softmax_entropy(logits.row(i)));
    }
    cert.measured_min_row_entropy = any_applicable ? min_ent : 0.0;
    cert.satisfied = !any_applicable || min_ent >= cert.bound_nats - 1e-9;
    return cert;
}

// ---- Hessian sharpness machinery ----

/// Gradient of the training loss as a function of the flat parameter vector.
using GradientFn = std::function<std::vector<double>(const std::vector<double>&)>;

/// Hessian-vector product by central differences of the gradient:
/// (grad(theta + eps v) - grad(theta - eps v)) / (2 eps).
inline std::vector<double> hvp(const GradientFn& grad_fn, const std::vector<double>& theta,
                               const std::vector<double>& v, double eps) {
    if (eps <= 0.0) throw DomainError("hvp: eps must be > 0");
    std::vector<double> plus = theta, minus = theta;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        plus[i] += eps * v[i];
        minus[i] -= eps * v[i];
    }
    std::vector<double> gp = grad_fn(plus);
    std::vector<double> gm = grad_fn(minus);
    std::vector<double> out(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) {
        out[i] = (gp[i] - gm[i]) / (2.0 * eps);
        if (!std::isfinite(out[i])) throw NumericalError("hvp: non-finite gradient component");
    }
    return out;
}

struct SharpnessProbe {
    std::size_t top_k = 0;
    std::vector<double> eigenvalues;  // sorted by |lambda| descending
    double hvp_epsilon = 0.0;
    std::size_t lanczos_iters = 0;
    std::size_t n_params = 0;
    double threshold = 0.0;  // Gamma, filled by the harness for AdamW runs
    bool breakdown = false;  // Lanczos stopped early on a zero beta

    double sharpness() const { return eigenvalues.empty() ? 0.0 : std::fabs(eigenvalues[0]); }
};

using LinearOperator = std::function<std::vector<double>(const std::vector<double>&)>;

/// Lanczos with full reorthogonalization on a symmetric operator; returns the
/// k Ritz values of largest magnitude.
inline SharpnessProbe lanczos_top_eigs(const LinearOperator& op, std::size_t dim, std::size_t k,
                                       std::size_t iters, std::uint64_t seed) {
    if (k > iters || iters > dim)
        throw DomainError("lanczos_top_eigs: need k <= iters <= dim");
    Rng rng(seed);

    std::vector<std::vector<double>> basis;
    std::vector<double> alpha, beta;
    std::vector<double> q = rng.unit_vector(dim);
    basis.push_back(q);

    SharpnessProbe probe;
    probe.top_k = k;
    probe.lanczos_iters = iters;
    probe.n_params = dim;

    for (std::size_t j = 0; j < iters; ++j) {
        std::vector<double> w = op(basis[j]);
        const double a = dot(w, basis[j]);
        alpha.push_back(a);
        // full reorthogonalization, twice for fp robustness
        for (int pass = 0; pass < 2; ++pass)
            for (const auto& qb : basis) {
                const double c = dot(w, qb);
                for (std::size_t i = 0; i < dim; ++i) w[i] -= c * qb[i];
            }
        const double b = norm2(w);
        if (j + 1 == iters) break;
        if (b < 1e-10 * std::max(1.0, std::fabs(a))) {
            probe.breakdown = true;
            break;
        }
        beta.push_back(b);
        for (double& x : w) x /= b;
        basis.push_back(std::move(w));
    }

    const std::size_t m = alpha.size();
    Matrix tri(m, m);
    for (std::size_t i = 0; i < m; ++i) {
        tri(i, i) = alpha[i];
        if (i + 1 < m) tri(i, i + 1) = tri(i + 1, i) = beta[i];
    }
    SymmetricEigenResult eig = symmetric_eigen(tri);
    std::vector<double> ritz = eig.eigenvalues;
    std::sort(ritz.begin(), ritz.end(),
              [](double a, double b) { return std::fabs(a) > std::fabs(b); });
    ritz.resize(std::min(k, ritz.size()));
    probe.eigenvalues = std::move(ritz);
    return probe;
}

/// AdamW stability threshold Gamma = (2 + 2 beta1) / ((1 - beta1) eta);
/// 38/eta at the default beta1 = 0.9.
inline double adamw_stability_threshold(double beta1, double lr) {
    if (lr <= 0.0) throw DomainError("adamw_stability_threshold: lr must be > 0");
    if (beta1 < 0.0 || beta1 >= 1.0)
        throw DomainError("adamw_stability_threshold: beta1 must be in [0, 1)");
    // scale numerator and denominator by 10 so the common beta1 = 0.9 case
    // yields 38 / lr without rounding (10 * 0.9 and 20 * 0.9 are exact)
    return (20.0 + 20.0 * beta1) / (10.0 - 10.0 * beta1) / lr;
}

}  // namespace eclab
