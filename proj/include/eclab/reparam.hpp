#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <vector>

#include "eclab/autodiff.hpp"
#include "eclab/matrix.hpp"
#include "eclab/power_iteration.hpp"
#include "eclab/rng.hpp"
#include "eclab/svd.hpp"

namespace eclab {

enum class ReparamMode {
    Plain,
    SigmaReparam,
    SpectralNormOnly,  // gamma pinned to 1, non-learnable
    WeightNorm,        // per-output-row normalization with learned gains
};

/// Per-layer state of the reparameterization: running singular-vector
/// estimates, the learned scale, and the inference-time frozen weight.
struct SpectralState {
    std::vector<double> u;  // length d_out
    std::vector<double> v;  // length d_in
    double gamma = 1.0;
    double sigma_cached = 0.0;
    bool frozen = false;
    Matrix frozen_w_hat;  // valid iff frozen

    static SpectralState init(std::size_t d_out, std::size_t d_in, Rng& rng,
                              double gamma0 = 1.0) {
        SpectralState s;
        s.u = rng.unit_vector(d_out);
        s.v = rng.unit_vector(d_in);
        s.gamma = gamma0;
        return s;
    }
};

struct ReparamForwardResult {
    Matrix w_hat;
    double sigma = 0.0;
};

/// W_hat = (gamma / sigma) W with sigma = u^T W v. In training mode (and not
/// frozen) exactly one power-iteration step refreshes u, v first; in eval
/// mode u, v are untouched. The frozen path returns the cached matrix.
inline ReparamForwardResult reparam_forward(const Matrix& w, SpectralState& state,
                                            bool training) {
    if (state.frozen) return {state.frozen_w_hat, state.sigma_cached};
    if (training) {
        PowerStepResult step = power_iteration_step(w, state.u, state.v);
        state.u = std::move(step.u);
        state.v = std::move(step.v);
    }
    const double sigma = dot(state.u, matvec(w, state.v));
    if (std::fabs(sigma) < 1e-30)
        throw NumericalError("reparam_forward: degenerate weight, sigma ~ 0");
    state.sigma_cached = sigma;
    return {scale(w, state.gamma / sigma), sigma};
}

/// Inference-time freeze: compute W_hat once with fully converged power
/// iteration and reuse it for every subsequent forward.
inline Matrix freeze(SpectralState& state, const Matrix& w) {
    SpectralNormResult r = spectral_norm_converged(w, 1e-10, 10000);
    state.u = r.u;
    state.v = r.v;
    state.sigma_cached = r.sigma;
    if (std::fabs(r.sigma) < 1e-30)
        throw NumericalError("freeze: degenerate weight, sigma ~ 0");
    state.frozen_w_hat = scale(w, state.gamma / r.sigma);
    state.frozen = true;
    return state.frozen_w_hat;
}

/// On-tape sigma-reparam forward for training: the power step mutates state
/// outside the graph (u, v detached), then sigma = u^T W v participates in
/// the forward as a bilinear form so gradient reaches W through it, and
/// gamma through the division. detach_sigma switches to the stop-gradient
/// variant where sigma is a plain constant of the step.
inline ad::NodeId reparam_on_tape(ad::Tape& tape, ad::NodeId w_node, ad::NodeId gamma_node,
                                  SpectralState& state, bool training,
                                  bool detach_sigma = false) {
    const Matrix& w = tape.value(w_node);
    if (training && !state.frozen) {
        PowerStepResult step = power_iteration_step(w, state.u, state.v);
        state.u = std::move(step.u);
        state.v = std::move(step.v);
    }
    const double sigma_now = dot(state.u, matvec(w, state.v));
    if (std::fabs(sigma_now) < 1e-30)
        throw NumericalError("reparam_on_tape: degenerate weight, sigma ~ 0");
    state.sigma_cached = sigma_now;

    if (detach_sigma) {
        return tape.mul_scalar_node(w_node, tape.scalar_mul(gamma_node, 1.0 / sigma_now));
    }
    ad::NodeId sigma_node = tape.bilinear_form(w_node, state.u, state.v);
    ad::NodeId ratio = tape.div_scalar_node(gamma_node, sigma_node);
    return tape.mul_scalar_node(w_node, ratio);
}

/// WeightNorm baseline: each output row scaled to unit norm times its gain.
inline ad::NodeId weightnorm_on_tape(ad::Tape& tape, ad::NodeId w_node, ad::NodeId gains_node) {
    return tape.row_weightnorm(w_node, gains_node);
}

struct AdaptiveUpdateBound {
    double lower_bound = 0.0;
    double sigma_delta = 0.0;
    Matrix delta;
};

/// Ideal adaptive update Delta_ij = mu_ij / sqrt(mu_ij^2 + n_ij^2) and its
/// spectral-norm lower bound sqrt(w) sqrt(1 - (1/w^2) sum n^2/(mu^2+n^2)).
inline AdaptiveUpdateBound adaptive_update_bound(const Matrix& mu, const Matrix& noise) {
    if (!mu.same_shape(noise) || mu.rows() != mu.cols())
        throw ShapeError("adaptive_update_bound: mu and n must be square and same shape");
    const double w = static_cast<double>(mu.rows());
    AdaptiveUpdateBound r;
    r.delta = Matrix(mu.rows(), mu.cols());
    double noise_fraction = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const double m = mu.data()[i];
        const double n = noise.data()[i];
        if (n < 0.0) throw DomainError("adaptive_update_bound: noise entries must be >= 0");
        const double denom = m * m + n * n;
        if (denom == 0.0)
            throw DomainError("adaptive_update_bound: mu^2 + n^2 = 0 at an entry");
        r.delta.data()[i] = m / std::sqrt(denom);
        noise_fraction += n * n / denom;
    }
    r.lower_bound = std::sqrt(w) * std::sqrt(std::max(0.0, 1.0 - noise_fraction / (w * w)));
    r.sigma_delta = sigma_svd(r.delta);
    return r;
}

// ---- SpectralState serialization (checkpoint block) ----

inline void write_spectral_state(std::ostream& os, const SpectralState& s) {
    write_matrix(os, Matrix::row_vector(s.u));
    write_matrix(os, Matrix::row_vector(s.v));
    Matrix meta(1, 3);
    meta(0, 0) = s.gamma;
    meta(0, 1) = s.sigma_cached;
    meta(0, 2) = s.frozen ? 1.0 : 0.0;
    write_matrix(os, meta);
    if (s.frozen) write_matrix(os, s.frozen_w_hat);
}

inline SpectralState read_spectral_state(std::istream& is) {
    SpectralState s;
    s.u = read_matrix(is).data();
    s.v = read_matrix(is).data();
    Matrix meta = read_matrix(is);
    s.gamma = meta(0, 0);
    s.sigma_cached = meta(0, 1);
    s.frozen = meta(0, 2) != 0.0;
    if (s.frozen) s.frozen_w_hat = read_matrix(is);
    return s;
}

}  // namespace eclab
