// Acceptance gate: one pass/fail line per criterion, exit code = number of
// failures. Tolerances and grids are pinned; runtime budgets are enforced.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "eclab/diagnostics.hpp"
#include "eclab/harness.hpp"
#include "eclab/power_iteration.hpp"
#include "eclab/reparam.hpp"
#include "eclab/rng.hpp"
#include "eclab/svd.hpp"
#include "eclab/transformer.hpp"
#include "gradcheck.hpp"

using namespace eclab;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

const std::vector<double> kSigmas{0.0, 0.5, 1.0, 2.0, 5.0, 10.0};
const std::vector<std::size_t> kTs{2, 4, 8, 64};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// criterion 1: bound validity on 1e5 random rows per (sigma, T) cell
Outcome criterion1() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(derive_seed(101, SeedStream::Oracle));
    const std::size_t n_rows = 100000;
    double worst = 0.0;
    for (double sigma : kSigmas) {
        for (std::size_t t : kTs) {
            const double bound = entropy_lower_bound(sigma, t);
            for (std::size_t s = 0; s < n_rows; ++s) {
                std::vector<double> u = rng.unit_vector(t);
                // half the draws on the sphere ||u|| = sigma, half interior
                const double r =
                    s % 2 ? sigma : sigma * std::pow(rng.uniform(), 1.0 / static_cast<double>(t));
                for (double& x : u) x *= r;
                const double ent = softmax_entropy(u);
                worst = std::max(worst, bound - ent);
                if (ent < bound - 1e-12) {
                    char buf[128];
                    std::snprintf(buf, sizeof buf,
                                  "violated at sigma=%g T=%zu (ent-bound=%.3e)", sigma, t,
                                  ent - bound);
                    return {false, buf};
                }
            }
        }
    }
    const double el = seconds_since(t0);
    char buf[128];
    std::snprintf(buf, sizeof buf, "worst slack %.2e, %.1f s", worst, el);
    return {el <= 120.0, buf};
}

// criterion 2: tightness of the closed-form minimizer + sampled oracle
Outcome criterion2() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst_gap = 0.0, worst_oracle = 0.0;
    for (double sigma : kSigmas) {
        for (std::size_t t : kTs) {
            const double bound = entropy_lower_bound(sigma, t);
            const double ent_min = softmax_entropy(tight_minimizer(sigma, t));
            worst_gap = std::max(worst_gap, std::fabs(ent_min - bound));
            if (std::fabs(ent_min - bound) > 1e-10)
                return {false, "minimizer gap " + std::to_string(ent_min - bound)};
            if (t <= 4) {
                const double oracle = entropy_min_oracle(sigma, t, 2000, 202);
                worst_oracle = std::max(worst_oracle, oracle - bound);
                if (oracle < bound - 1e-9 || oracle > bound + 1e-4)
                    return {false, "oracle off bound by " + std::to_string(oracle - bound)};
            }
        }
    }
    const double el = seconds_since(t0);
    char buf[160];
    std::snprintf(buf, sizeof buf, "worst minimizer gap %.2e, worst oracle excess %.2e, %.1f s",
                  worst_gap, worst_oracle, el);
    return {el <= 300.0, buf};
}

// criterion 3: sigma = 0 boundary equals log T
Outcome criterion3() {
    double worst = 0.0;
    for (std::size_t t : kTs) {
        const double gap =
            std::fabs(entropy_lower_bound(0.0, t) - std::log(static_cast<double>(t)));
        worst = std::max(worst, gap);
        if (gap > 1e-14) return {false, "gap " + std::to_string(gap) + " at T=" + std::to_string(t)};
    }
    return {true, "worst gap " + std::to_string(worst)};
}

// criterion 4: power iteration vs SVD oracle + reparameterized norm identity
Outcome criterion4() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(derive_seed(104, SeedStream::Oracle));
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t m = trial == 0 ? 128 : 2 + rng.integer(127);
        const std::size_t n = trial == 0 ? 512 : 2 + rng.integer(511);
        Matrix w = rng.normal_matrix(m, n);
        // double the top singular component: the oracle becomes exactly
        // 2 sigma_1 and the spectral gap is bounded away from 1, which a
        // fixed 100-step budget requires
        SvdResult sv = svd(w);
        const double oracle = 2.0 * sv.singular_values[0];
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                w(i, j) += sv.singular_values[0] * sv.left_vectors(i, 0) * sv.right_vectors(j, 0);

        PowerStepResult step{rng.unit_vector(m), rng.unit_vector(n), 0.0};
        for (int s = 0; s < 100; ++s) step = power_iteration_step(w, step.u, step.v);
        const double rel = std::fabs(step.sigma - oracle) / oracle;
        worst = std::max(worst, rel);
        if (rel > 1e-6)
            return {false, "trial " + std::to_string(trial) + " rel err " + std::to_string(rel)};
    }

    double worst_id = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        Matrix w = rng.normal_matrix(12, 9);
        SpectralState s = SpectralState::init(12, 9, rng);
        s.gamma = 0.25 + rng.uniform() * 3.0;
        for (int i = 0; i < 500; ++i) reparam_forward(w, s, true);
        const double sig = sigma_svd(reparam_forward(w, s, false).w_hat);
        const double rel = std::fabs(sig - std::fabs(s.gamma)) / std::fabs(s.gamma);
        worst_id = std::max(worst_id, rel);
        if (rel > 1e-6) return {false, "norm identity rel err " + std::to_string(rel)};
    }
    const double el = seconds_since(t0);
    char buf[160];
    std::snprintf(buf, sizeof buf, "worst rel %.2e, identity rel %.2e, %.1f s", worst,
                  worst_id, el);
    return {el <= 60.0, buf};
}

// criterion 5: adaptive-update spectral bound
Outcome criterion5() {
    Rng rng(derive_seed(105, SeedStream::Oracle));
    for (std::size_t w : {2u, 4u, 8u, 16u}) {
        Matrix mu(w, w);
        for (std::size_t i = 0; i < mu.size(); ++i)
            mu.data()[i] = 0.25 + static_cast<double>(i % 5);
        AdaptiveUpdateBound nf = adaptive_update_bound(mu, Matrix(w, w));
        if (std::fabs(nf.lower_bound - std::sqrt(static_cast<double>(w))) > 1e-12)
            return {false, "noise-free closed form off at w=" + std::to_string(w)};
        AdaptiveUpdateBound eq = adaptive_update_bound(mu, mu);
        if (std::fabs(eq.lower_bound - std::sqrt(static_cast<double>(w) / 2.0)) > 1e-12)
            return {false, "equal-noise closed form off at w=" + std::to_string(w)};

        for (int trial = 0; trial < 1000; ++trial) {
            Matrix m2(w, w), noise(w, w);
            for (double& x : m2.data()) x = rng.normal(0.0, 2.0);
            for (double& x : noise.data()) x = std::fabs(rng.normal(0.0, 2.0));
            AdaptiveUpdateBound r = adaptive_update_bound(m2, noise);
            if (r.sigma_delta < r.lower_bound - 1e-10)
                return {false, "violated at w=" + std::to_string(w) + " trial " +
                                   std::to_string(trial)};
        }
    }
    return {true, "4000 draws + closed forms"};
}

// criterion 6: per-op gradient checks plus the assembled 2-layer model
Outcome criterion6() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(derive_seed(106, SeedStream::Oracle));
    using Build = std::function<ad::NodeId(ad::Tape&, const std::vector<ad::NodeId>&)>;
    struct Case {
        std::string name;
        Build build;
        std::vector<Matrix> leaves;
    };
    std::vector<Case> ops;
    ops.push_back({"matmul",
                   [](ad::Tape& t, const std::vector<ad::NodeId>& in) {
                       return t.reduce_mean(t.gelu(t.matmul(in[0], in[1])));
                   },
                   {rng.normal_matrix(5, 7), rng.normal_matrix(7, 4)}});
    ops.push_back({"add broadcast",
                   [](ad::Tape& t, const std::vector<ad::NodeId>& in) {
                       return t.reduce_mean(t.gelu(t.add(in[0], in[1])));
                   },
                   {rng.normal_matrix(5, 6), rng.normal_matrix(1, 6)}});
    ops.push_back({"scalar ops",
                   [](ad::Tape& t, const std::vector<ad::NodeId>& in) {
                       ad::NodeId y = t.scalar_mul(in[0], 1.7);
                       y = t.mul_scalar_node(y, in[1]);
                       y = t.reduce_mean(t.gelu(y));
                       return t.div_scalar_node(y, in[2]);
                   },
                   {rng.normal_matrix(4, 4), Matrix{{1.3}}, Matrix{{0.8}}}});
    {
        std::vector<double> u(4), v(4);
        for (auto& x : u) x = rng.normal();
        for (auto& x : v) x = rng.normal();
        ops.push_back({"bilinear form",
                       [u, v](ad::Tape& t, const std::vector<ad::NodeId>& in) {
                           return t.bilinear_form(in[0], u, v);
                       },
                       {rng.normal_matrix(4, 4)}});
    }
    ops.push_back({"softmax (temperature)",
                   [](ad::Tape& t, const std::vector<ad::NodeId>& in) {
                       return t.reduce_mean(t.gelu(t.rowwise_softmax(in[0], 0.6)));
                   },
                   {rng.normal_matrix(5, 5)}});
    ops.push_back({"softmax (causal)",
                   [](ad::Tape& t, const std::vector<ad::NodeId>& in) {
                       return t.reduce_mean(t.gelu(t.rowwise_softmax(in[0], 1.2, true)));
                   },
                   {rng.normal_matrix(5, 5)}});
    ops.push_back({"gelu",
                   [](ad::Tape& t, const std::vector<ad::NodeId>& in) {
                       return t.reduce_mean(t.gelu(in[0]));
                   },
                   {rng.normal_matrix(6, 6)}});
    ops.push_back({"layernorm",
                   [](ad::Tape& t, const std::vector<ad::NodeId>& in) {
                       return t.reduce_mean(t.gelu(t.layernorm(in[0], in[1], in[2])));
                   },
                   {rng.normal_matrix(4, 8), rng.normal_matrix(1, 8, 0.5),
                    rng.normal_matrix(1, 8, 0.5)}});
    ops.push_back({"embedding lookup",
                   [](ad::Tape& t, const std::vector<ad::NodeId>& in) {
                       return t.reduce_mean(t.gelu(t.embedding_lookup(in[0], {2, 0, 3, 2})));
                   },
                   {rng.normal_matrix(5, 6)}});
    ops.push_back({"cross entropy",
                   [](ad::Tape& t, const std::vector<ad::NodeId>& in) {
                       return t.cross_entropy_mean(in[0], {1, 3, 0});
                   },
                   {rng.normal_matrix(3, 5)}});
    ops.push_back({"structural (transpose/concat/slice)",
                   [](ad::Tape& t, const std::vector<ad::NodeId>& in) {
                       ad::NodeId a = t.transpose(in[0]);
                       ad::NodeId b = t.concat_cols({a, a});
                       ad::NodeId c = t.concat_rows(b, b);
                       ad::NodeId d = t.slice_rows(c, 1, 3);
                       return t.reduce_mean(t.gelu(t.slice_cols(d, 2, 4)));
                   },
                   {rng.normal_matrix(4, 5)}});
    ops.push_back({"row weight norm",
                   [](ad::Tape& t, const std::vector<ad::NodeId>& in) {
                       return t.reduce_mean(t.gelu(t.row_weightnorm(in[0], in[1])));
                   },
                   {rng.normal_matrix(4, 6), rng.normal_matrix(1, 4, 0.4)}});

    for (const Case& c : ops) {
        auto rep = eclab::testing::gradcheck(c.build, c.leaves, 1061, 50);
        if (rep.failed != 0)
            return {false, c.name + ": " + std::to_string(rep.failed) + " coords failed, worst rel " +
                               std::to_string(rep.worst_rel)};
    }

    // assembled 2-layer model, >= 50 coords per parameter matrix
    for (auto [mode, norm] : std::vector<std::pair<ReparamMode, NormMode>>{
             {ReparamMode::Plain, NormMode::PostLN},
             {ReparamMode::SigmaReparam, NormMode::None},
             {ReparamMode::WeightNorm, NormMode::PreLN}}) {
        ModelConfig cfg;
        cfg.n_layers = 2;
        cfg.d_model = 8;
        cfg.n_heads = 2;
        cfg.mlp_dim = 16;
        cfg.vocab_size = 6;
        cfg.max_seq_len = 5;
        cfg.norm_mode = norm;
        cfg.reparam_mode = mode;
        cfg.init_std = 0.5;  // O(1) conditioning for the fp64 difference oracle
        cfg.seed = 1066;
        Model m = build_model(cfg);
        for (auto& [name, state] : m.spectral) {
            SpectralNormResult r = spectral_norm_converged(m.param(name), 1e-13, 5000);
            state.u = r.u;
            state.v = r.v;
        }
        Batch batch;
        Rng brng(7);
        for (int b = 0; b < 2; ++b) {
            std::vector<std::size_t> in(4);
            for (auto& x : in) x = brng.integer(6);
            std::vector<std::size_t> tg(in.rbegin(), in.rend());
            batch.inputs.push_back(in);
            batch.targets.push_back(tg);
        }
        ForwardPass fp = m.forward(batch, {.training = false, .with_spectra = false});
        backward_into(m, fp);
        Rng crng(1067);
        // smaller step than the per-op checks: the assembled model has larger
        // third derivatives (layernorm chains), and fp64 round-off at 1e-6 is
        // still two orders below the tolerance
        const double h = 1e-6;
        for (const Param& p : m.params) {
            if (!p.trainable) continue;
            const std::size_t n_coords = std::min<std::size_t>(50, p.value.size());
            for (std::size_t c = 0; c < n_coords; ++c) {
                const std::size_t k =
                    p.value.size() <= 50 ? c : crng.integer(p.value.size());
                Model probe = m;
                probe.params[probe.param_index.at(p.name)].value.data()[k] += h;
                const double fplus =
                    probe.forward(batch, {.training = false, .with_spectra = false}).loss;
                probe.params[probe.param_index.at(p.name)].value.data()[k] -= 2.0 * h;
                const double fminus =
                    probe.forward(batch, {.training = false, .with_spectra = false}).loss;
                const double fd = (fplus - fminus) / (2.0 * h);
                const double an = p.grad.data()[k];
                if (std::fabs(an - fd) > 1e-8 + 1e-5 * std::max(std::fabs(an), std::fabs(fd)))
                    return {false, "model param " + p.name + " coord " + std::to_string(k) +
                                       ": an=" + std::to_string(an) + " fd=" + std::to_string(fd)};
            }
        }
    }
    char buf[96];
    std::snprintf(buf, sizeof buf, "%zu ops + 3 model configs, %.1f s", ops.size(),
                  seconds_since(t0));
    return {true, buf};
}

ExperimentConfig collapse_base(ReparamMode mode, NormMode norm) {
    ExperimentConfig cfg;
    cfg.seed = 1;
    cfg.model.n_layers = 2;
    cfg.model.d_model = 32;
    cfg.model.n_heads = 4;
    cfg.model.mlp_dim = 64;
    cfg.model.vocab_size = 8;
    cfg.model.max_seq_len = 12;
    cfg.model.norm_mode = norm;
    cfg.model.reparam_mode = mode;
    cfg.task = {TaskKind::Reverse, 512, 64, 0};
    cfg.optimizer.lr = 3e-3;
    cfg.schedule.warmup_steps = 50;
    cfg.steps = 500;
    cfg.batch_size = 32;
    cfg.log_interval = 50;
    return cfg;
}

// criterion 7: collapse in the plain post-LN sweep, none under sigma-reparam
Outcome criterion7() {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<double> lrs{3e-3, 6e-3, 1.2e-2, 2.4e-2};

    int baseline_events = 0;
    double best_stable_baseline = -1.0;
    for (double lr : lrs) {
        ExperimentConfig cfg = collapse_base(ReparamMode::Plain, NormMode::PostLN);
        cfg.optimizer.lr = lr;
        ExperimentResult r = run_experiment(cfg);
        if (r.first_collapse_step >= 0 || r.status == RunStatus::Diverged) ++baseline_events;
        if (r.status == RunStatus::Completed)
            best_stable_baseline = std::max(best_stable_baseline, r.final_eval);
    }

    int reparam_events = 0;
    double best_reparam = -1.0;
    for (double lr : lrs) {
        ExperimentConfig cfg = collapse_base(ReparamMode::SigmaReparam, NormMode::None);
        cfg.optimizer.lr = lr;
        ExperimentResult r = run_experiment(cfg);
        if (r.first_collapse_step >= 0 || r.status == RunStatus::Diverged) ++reparam_events;
        best_reparam = std::max(best_reparam, r.final_eval);
    }

    const double el = seconds_since(t0);
    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "baseline events %d/4, reparam events %d/4, best eval %.3f vs %.3f, %.1f s",
                  baseline_events, reparam_events, best_reparam, best_stable_baseline, el);
    const bool ok = baseline_events >= 1 && reparam_events == 0 &&
                    best_reparam >= best_stable_baseline - 0.02 && el <= 1200.0;
    return {ok, buf};
}

// criterion 8: temperature interventions, >= 3 of 4 seeds per branch
Outcome criterion8() {
    const auto t0 = std::chrono::steady_clock::now();
    const double log_t = std::log(12.0);

    int a_pass = 0;
    for (std::uint64_t seed : {1, 2, 3, 4}) {
        ExperimentConfig cfg = collapse_base(ReparamMode::Plain, NormMode::PostLN);
        cfg.seed = seed;
        cfg.model.n_layers = 1;
        cfg.model.n_heads = 1;
        cfg.optimizer.lr = 1.5e-2;
        cfg.intervention = {InterventionKind::Temperature, 45, 0.1};
        cfg.steps = 120;
        cfg.log_interval = 5;
        cfg.steps_per_epoch = 15;  // sharpness probe cadence
        cfg.sharpness_probe = true;
        ExperimentResult r = run_experiment(cfg);

        double pre_sharp = 0.0, post_sharp = 0.0, min_ent = 1e300;
        for (const MetricRecord& rec : r.records) {
            if (rec.has_sharpness && rec.step < 45) pre_sharp = rec.sharpness;
            if (rec.has_sharpness && rec.step >= 45 && rec.step <= 95)
                post_sharp = std::max(post_sharp, rec.sharpness);
            if (rec.step > 45 && rec.step <= 95)
                min_ent = std::min(min_ent, rec.layers[0].mean_entropy);
        }
        if (min_ent < 0.2 && pre_sharp > 0.0 && post_sharp >= 2.0 * pre_sharp) ++a_pass;
    }

    int b_pass = 0;
    for (std::uint64_t seed : {1, 2, 3, 4}) {
        ExperimentConfig cfg = collapse_base(ReparamMode::SigmaReparam, NormMode::None);
        cfg.seed = seed;
        cfg.intervention = {InterventionKind::Temperature, 100, 0.5};
        cfg.steps = 400;
        cfg.log_interval = 25;
        ExperimentResult r = run_experiment(cfg);
        double max_ent = -1.0;
        for (const MetricRecord& rec : r.records)
            if (rec.step > 100 && rec.step <= 400)
                max_ent = std::max(max_ent, rec.layers[0].mean_entropy);
        if (r.status == RunStatus::Completed && max_ent > 0.5 * log_t) ++b_pass;
    }

    char buf[128];
    std::snprintf(buf, sizeof buf, "collapse branch %d/4 seeds, recovery branch %d/4, %.1f s",
                  a_pass, b_pass, seconds_since(t0));
    return {a_pass >= 3 && b_pass >= 3, buf};
}

// criterion 9: AdamW threshold closed form + Lanczos vs dense oracle
Outcome criterion9() {
    for (double lr : {1.0, 0.5, 1e-1, 1e-2, 1e-3, 3e-4}) {
        if (adamw_stability_threshold(0.9, lr) != 38.0 / lr)
            return {false, "threshold mismatch at lr=" + std::to_string(lr)};
    }

    Rng rng(derive_seed(109, SeedStream::Oracle));
    Matrix a(50, 50);
    for (std::size_t i = 0; i < 50; ++i)
        for (std::size_t j = 0; j <= i; ++j) a(i, j) = a(j, i) = rng.normal();
    SymmetricEigenResult dense = symmetric_eigen(a);
    std::vector<double> by_mag = dense.eigenvalues;
    std::sort(by_mag.begin(), by_mag.end(),
              [](double x, double y) { return std::fabs(x) > std::fabs(y); });

    LinearOperator op = [&a](const std::vector<double>& v) {
        std::vector<double> out(50, 0.0);
        for (std::size_t i = 0; i < 50; ++i)
            for (std::size_t j = 0; j < 50; ++j) out[i] += a(i, j) * v[j];
        return out;
    };
    SharpnessProbe probe = lanczos_top_eigs(op, 50, 5, 50, 1090);
    double worst = 0.0;
    for (std::size_t k = 0; k < 5; ++k) {
        const double rel =
            std::fabs(probe.eigenvalues[k] - by_mag[k]) / std::fabs(by_mag[k]);
        worst = std::max(worst, rel);
        if (rel > 1e-6)
            return {false, "eig " + std::to_string(k) + " rel err " + std::to_string(rel)};
    }
    return {true, "threshold exact, Lanczos worst rel " + std::to_string(worst)};
}

// criterion 10: byte-identical metrics on a repeated run
Outcome criterion10() {
    ExperimentConfig cfg = collapse_base(ReparamMode::Plain, NormMode::PostLN);
    cfg.steps = 60;
    cfg.log_interval = 10;
    cfg.sharpness_probe = true;
    cfg.steps_per_epoch = 30;
    std::ostringstream a, b;
    run_experiment(cfg, &a);
    run_experiment(cfg, &b);
    if (a.str().empty() || a.str() != b.str()) return {false, "metric streams differ"};
    return {true, std::to_string(a.str().size()) + " bytes reproduced"};
}

}  // namespace

int main() {
    struct Criterion {
        int number;
        const char* name;
        Outcome (*fn)();
    };
    const std::vector<Criterion> criteria{
        {1, "entropy bound validity", criterion1},
        {2, "entropy bound tightness", criterion2},
        {3, "sigma=0 boundary equals log T", criterion3},
        {4, "power iteration vs SVD oracle", criterion4},
        {5, "adaptive-update spectral bound", criterion5},
        {6, "autodiff gradient checks", criterion6},
        {7, "collapse reproduction sweep", criterion7},
        {8, "temperature interventions", criterion8},
        {9, "stability threshold and Lanczos", criterion9},
        {10, "deterministic metric streams", criterion10},
    };

    int failures = 0;
    for (const Criterion& c : criteria) {
        Outcome out;
        try {
            out = c.fn();
        } catch (const std::exception& e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        std::printf("%s  criterion %d: %s — %s\n", out.passed ? "PASS" : "FAIL", c.number,
                    c.name, out.detail.c_str());
        std::fflush(stdout);
        if (!out.passed) ++failures;
    }
    std::printf("%d/10 criteria passed\n", 10 - failures);
    return failures;
}
