#pragma once

// Experiment engine: optimizers, schedules, synthetic tasks, the training
// loop with entropy/collapse bookkeeping, and JSONL metric emission.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "eclab/diagnostics.hpp"
#include "eclab/errors.hpp"
#include "eclab/rng.hpp"
#include "eclab/transformer.hpp"

namespace eclab {

// ---- optimizer ----

enum class OptimizerKind { SGD, SGDMomentum, Adam, AdamW, LARS };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::AdamW;
    double lr = 1e-3;
    double beta1 = 0.9;  // matches the stability-threshold derivation
    double beta2 = 0.999;
    double weight_decay = 0.0;
    double momentum = 0.9;
    double eps = 1e-8;
    double grad_clip = 0.0;  // <= 0: off; else global l2 clip

    void validate() const {
        if (lr < 0.0) throw ConfigError("optimizer: lr must be >= 0");
        if (beta1 < 0.0 || beta1 >= 1.0) throw ConfigError("optimizer: beta1 in [0, 1)");
        if (beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("optimizer: beta2 in [0, 1)");
        if (weight_decay < 0.0) throw ConfigError("optimizer: weight_decay must be >= 0");
        if (eps <= 0.0) throw ConfigError("optimizer: eps must be > 0");
    }
};

/// Per-parameter optimizer slots, aligned with the model's trainable params.
struct OptState {
    std::vector<std::vector<double>> m;  // first moment / momentum buffer
    std::vector<std::vector<double>> v;  // second moment (Adam family)
    std::size_t t = 0;                   // completed update count
    int consecutive_bad = 0;             // non-finite grad streak

    static OptState init(const Model& model) {
        OptState s;
        for (const Param& p : model.params) {
            if (!p.trainable) continue;
            s.m.emplace_back(p.value.size(), 0.0);
            s.v.emplace_back(p.value.size(), 0.0);
        }
        return s;
    }
};

/// One optimizer update in place. Returns false (and skips the step) when any
/// gradient entry is non-finite; callers treat that as a divergence event.
inline bool optimizer_step(const OptimizerConfig& cfg, Model& model, OptState& state,
                           double lr_t) {
    cfg.validate();
    for (const Param& p : model.params) {
        if (!p.trainable) continue;
        if (!p.grad.all_finite()) {
            ++state.consecutive_bad;
            return false;
        }
    }
    state.consecutive_bad = 0;

    double clip_scale = 1.0;
    if (cfg.grad_clip > 0.0) {
        double sq = 0.0;
        for (const Param& p : model.params) {
            if (!p.trainable) continue;
            const double f = p.grad.frobenius_norm();
            sq += f * f;
        }
        const double gnorm = std::sqrt(sq);
        if (gnorm > cfg.grad_clip) clip_scale = cfg.grad_clip / gnorm;
    }

    ++state.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));

    std::size_t slot = 0;
    for (Param& p : model.params) {
        if (!p.trainable) continue;
        double* th = p.value.data().data();
        const double* gr = p.grad.data().data();
        std::vector<double>& m = state.m[slot];
        std::vector<double>& v = state.v[slot];
        const std::size_t n = p.value.size();

        switch (cfg.kind) {
            case OptimizerKind::SGD:
                for (std::size_t i = 0; i < n; ++i) {
                    const double g = gr[i] * clip_scale + cfg.weight_decay * th[i];
                    th[i] -= lr_t * g;
                }
                break;
            case OptimizerKind::SGDMomentum:
                for (std::size_t i = 0; i < n; ++i) {
                    const double g = gr[i] * clip_scale + cfg.weight_decay * th[i];
                    m[i] = cfg.momentum * m[i] + g;
                    th[i] -= lr_t * m[i];
                }
                break;
            case OptimizerKind::Adam:
                for (std::size_t i = 0; i < n; ++i) {
                    const double g = gr[i] * clip_scale + cfg.weight_decay * th[i];
                    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                    // same association as AdamW so wd=0 trajectories coincide
                    th[i] -= lr_t * ((m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.eps));
                }
                break;
            case OptimizerKind::AdamW:
                for (std::size_t i = 0; i < n; ++i) {
                    const double g = gr[i] * clip_scale;
                    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                    // decoupled weight decay
                    th[i] -= lr_t * ((m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.eps) +
                                     cfg.weight_decay * th[i]);
                }
                break;
            case OptimizerKind::LARS: {
                double thn = 0.0, gn = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    thn += th[i] * th[i];
                    const double g = gr[i] * clip_scale + cfg.weight_decay * th[i];
                    gn += g * g;
                }
                thn = std::sqrt(thn);
                gn = std::sqrt(gn);
                const double trust = (thn > 0.0 && gn > 0.0) ? thn / gn : 1.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double g = gr[i] * clip_scale + cfg.weight_decay * th[i];
                    m[i] = cfg.momentum * m[i] + trust * g;
                    th[i] -= lr_t * m[i];
                }
                break;
            }
        }
        ++slot;
    }
    return true;
}

// ---- schedule ----

enum class DecayKind { Constant, Cosine, Step };

struct SchedulePlan {
    std::size_t warmup_steps = 0;
    DecayKind decay = DecayKind::Constant;
    std::vector<std::size_t> step_points;  // for Step decay
    double step_factor = 0.1;
    double base_lr = -1.0;  // < 0: take the optimizer lr

    /// lr(t): linear warmup from 0, then the chosen decay over the remainder.
    double lr_at(std::size_t step, std::size_t total_steps, double fallback_base) const {
        const double base = base_lr < 0.0 ? fallback_base : base_lr;
        if (warmup_steps > 0 && step < warmup_steps)
            return base * static_cast<double>(step) / static_cast<double>(warmup_steps);
        switch (decay) {
            case DecayKind::Constant:
                return base;
            case DecayKind::Cosine: {
                const std::size_t span =
                    total_steps > warmup_steps ? total_steps - warmup_steps : 1;
                const double u = static_cast<double>(step - warmup_steps) /
                                 static_cast<double>(span);
                return base * 0.5 * (1.0 + std::cos(3.14159265358979323846 * u));
            }
            case DecayKind::Step: {
                double f = 1.0;
                for (std::size_t p : step_points)
                    if (step >= p) f *= step_factor;
                return base * f;
            }
        }
        return base;
    }
};

// ---- interventions ----

enum class InterventionKind { None, Temperature };

struct InterventionPlan {
    InterventionKind kind = InterventionKind::None;
    std::size_t intervention_step = 0;
    double tau_target = 1.0;

    void validate() const {
        if (kind == InterventionKind::Temperature && tau_target <= 0.0)
            throw ConfigError("intervention: tau_target must be > 0");
    }
};

// ---- synthetic tasks ----

enum class TaskKind { Copy, Reverse, Majority };

struct Dataset {
    std::vector<std::vector<std::size_t>> inputs;
    std::vector<std::vector<std::size_t>> targets;  // per-token, or single label
    bool seq = true;
};

/// Deterministic seeded datasets. Copy: target = input. Reverse: target =
/// reversed input. Majority: single label = modal token (ties -> smallest id).
inline Dataset make_task(TaskKind kind, std::size_t vocab, std::size_t t, std::size_t n,
                         std::uint64_t seed) {
    if (vocab < 2) throw DomainError("make_task: vocab must be >= 2");
    if (t < 2) throw DomainError("make_task: t must be >= 2");
    Rng rng(seed);
    Dataset ds;
    ds.seq = kind != TaskKind::Majority;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> in(t);
        for (auto& x : in) x = rng.integer(vocab);
        std::vector<std::size_t> tg;
        switch (kind) {
            case TaskKind::Copy:
                tg = in;
                break;
            case TaskKind::Reverse:
                tg.assign(in.rbegin(), in.rend());
                break;
            case TaskKind::Majority: {
                std::vector<std::size_t> counts(vocab, 0);
                for (std::size_t x : in) ++counts[x];
                tg = {static_cast<std::size_t>(
                    std::max_element(counts.begin(), counts.end()) - counts.begin())};
                break;
            }
        }
        ds.inputs.push_back(std::move(in));
        ds.targets.push_back(std::move(tg));
    }
    return ds;
}

// ---- metric records ----

struct LayerMetrics {
    double mean_entropy = 0.0;
    double min_entropy = 0.0;
    double sigma_kq = 0.0;
    double grad_inf_norm = 0.0;
};

struct MetricRecord {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double eval_metric = 0.0;
    double lr = 0.0;
    double tau = 1.0;
    std::vector<LayerMetrics> layers;
    bool has_sharpness = false;
    double sharpness = 0.0;
    double threshold = 0.0;
    bool has_wall_ms = false;
    double wall_ms = 0.0;
};

namespace detail {

/// Shortest decimal that round-trips; stable across runs for determinism.
inline std::string fmt_double(double x) {
    if (!std::isfinite(x)) return "null";  // keep the JSONL parseable
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    double back = 0.0;
    for (int prec = 1; prec <= 16; ++prec) {
        char probe[40];
        std::snprintf(probe, sizeof probe, "%.*g", prec, x);
        std::sscanf(probe, "%lf", &back);
        if (back == x) return probe;
    }
    return buf;
}

}  // namespace detail

inline std::string to_json_line(const MetricRecord& r) {
    std::string s = "{";
    auto num = [&s](const char* key, double v, bool comma = true) {
        s += '"';
        s += key;
        s += "\":";
        s += detail::fmt_double(v);
        if (comma) s += ',';
    };
    s += "\"step\":" + std::to_string(r.step) + ",";
    s += "\"epoch\":" + std::to_string(r.epoch) + ",";
    num("train_loss", r.train_loss);
    num("eval_metric", r.eval_metric);
    num("lr", r.lr);
    num("tau", r.tau);
    s += "\"layers\":[";
    for (std::size_t i = 0; i < r.layers.size(); ++i) {
        if (i) s += ',';
        s += '{';
        num("mean_entropy", r.layers[i].mean_entropy);
        num("min_entropy", r.layers[i].min_entropy);
        num("sigma_kq", r.layers[i].sigma_kq);
        num("grad_inf_norm", r.layers[i].grad_inf_norm, false);
        s += '}';
    }
    s += ']';
    if (r.has_sharpness) {
        s += ',';
        num("sharpness", r.sharpness);
        num("threshold", r.threshold, false);
    }
    if (r.has_wall_ms) {
        s += ',';
        num("wall_ms", r.wall_ms, false);
    }
    s += '}';
    return s;
}

// ---- experiment configuration and loop ----

struct TaskConfig {
    TaskKind kind = TaskKind::Reverse;
    std::size_t n_train = 512;
    std::size_t n_eval = 128;
    std::size_t seq_len = 0;  // 0: model max_seq_len
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    ModelConfig model;
    TaskConfig task;
    OptimizerConfig optimizer;
    SchedulePlan schedule;
    InterventionPlan intervention;
    std::size_t steps = 400;
    std::size_t batch_size = 32;
    std::size_t log_interval = 10;
    std::size_t steps_per_epoch = 200;
    double collapse_threshold = 0.1;  // collapse event below this fraction of log T
    bool sharpness_probe = false;
    std::size_t probe_lanczos_iters = 20;
    double probe_hvp_epsilon = 1e-3;
    bool record_wall_time = false;  // off by default: keeps metrics byte-stable

    void validate() const {
        model.validate();
        optimizer.validate();
        intervention.validate();
        if (steps == 0) throw ConfigError("experiment: steps must be > 0");
        if (batch_size == 0) throw ConfigError("experiment: batch_size must be > 0");
        if (log_interval == 0) throw ConfigError("experiment: log_interval must be > 0");
        if (steps_per_epoch == 0) throw ConfigError("experiment: steps_per_epoch must be > 0");
        if (collapse_threshold <= 0.0)
            throw ConfigError("experiment: collapse_threshold must be > 0");
        if (task.n_train == 0 || task.n_eval == 0)
            throw ConfigError("experiment: task needs train and eval examples");
        const std::size_t t = task.seq_len ? task.seq_len : model.max_seq_len;
        if (t < 2 || t > model.max_seq_len)
            throw ConfigError("experiment: seq_len must be in [2, max_seq_len]");
    }
};

enum class RunStatus { Completed, Diverged };

inline const char* to_string(RunStatus s) {
    return s == RunStatus::Completed ? "COMPLETED" : "DIVERGED";
}

struct ExperimentResult {
    RunStatus status = RunStatus::Completed;
    double final_loss = 0.0;
    double final_eval = 0.0;
    std::ptrdiff_t first_collapse_step = -1;  // -1: no collapse event
    double max_sharpness = 0.0;
    double threshold = 0.0;  // AdamW Gamma at base lr; 0 for other optimizers
    std::vector<MetricRecord> records;
};

namespace detail {

inline Batch gather_batch(const Dataset& ds, const std::vector<std::size_t>& idx) {
    Batch b;
    for (std::size_t i : idx) {
        b.inputs.push_back(ds.inputs[i]);
        b.targets.push_back(ds.targets[i]);
    }
    return b;
}

/// Fraction of correct argmax predictions over a dataset.
inline double eval_accuracy(Model& model, const Dataset& ds, std::size_t batch_size) {
    std::size_t correct = 0, total = 0;
    for (std::size_t start = 0; start < ds.inputs.size(); start += batch_size) {
        const std::size_t end = std::min(start + batch_size, ds.inputs.size());
        std::vector<std::size_t> idx(end - start);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
        Batch batch = gather_batch(ds, idx);
        ForwardPass fp =
            model.forward(batch, {.training = false, .with_spectra = false});
        for (std::size_t b = 0; b < batch.inputs.size(); ++b) {
            const Matrix& out = fp.tape.value(fp.output_nodes[b]);
            const auto& tg = batch.targets[b];
            const std::size_t n_pos = ds.seq ? tg.size() : 1;
            for (std::size_t p = 0; p < n_pos; ++p) {
                std::size_t best = 0;
                for (std::size_t c = 1; c < out.cols(); ++c)
                    if (out(p, c) > out(p, best)) best = c;
                correct += best == tg[p];
                ++total;
            }
        }
    }
    return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

inline double probe_sharpness(Model& model, const Batch& batch, std::size_t lanczos_iters,
                              double hvp_eps, std::uint64_t seed) {
    const std::vector<double> theta0 = model.flat_params();
    GradientFn grad_fn = [&model, &batch](const std::vector<double>& th) {
        model.set_flat_params(th);
        ForwardPass fp = model.forward(batch, {.training = false, .with_spectra = false});
        backward_into(model, fp);
        std::vector<double> g;
        for (const Param& p : model.params) {
            if (!p.trainable) continue;
            g.insert(g.end(), p.grad.data().begin(), p.grad.data().end());
        }
        return g;
    };
    LinearOperator op = [&](const std::vector<double>& v) {
        return hvp(grad_fn, theta0, v, hvp_eps);
    };
    const std::size_t iters = std::min(lanczos_iters, theta0.size());
    SharpnessProbe probe = lanczos_top_eigs(op, theta0.size(), 1, iters, seed);
    model.set_flat_params(theta0);
    return probe.sharpness();
}

}  // namespace detail

/// Train per the config, emitting one MetricRecord JSONL line per log
/// interval to `metrics` (when given). `final_model` receives the trained
/// model for checkpointing.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       std::ostream* metrics = nullptr,
                                       Model* final_model = nullptr) {
    cfg.validate();

    ModelConfig mc = cfg.model;
    mc.seed = derive_seed(cfg.seed, SeedStream::Init);
    Model model = build_model(mc);

    const std::size_t t = cfg.task.seq_len ? cfg.task.seq_len : mc.max_seq_len;
    const std::uint64_t data_seed = derive_seed(cfg.seed, SeedStream::Data);
    std::uint64_t eval_state = data_seed;
    const std::uint64_t eval_seed = splitmix64(eval_state);
    Dataset train = make_task(cfg.task.kind, mc.vocab_size, t, cfg.task.n_train, data_seed);
    Dataset eval = make_task(cfg.task.kind, mc.vocab_size, t, cfg.task.n_eval, eval_seed);

    Rng batch_rng(splitmix64(eval_state));
    OptState opt = OptState::init(model);
    ExperimentResult result;
    if (cfg.optimizer.kind == OptimizerKind::AdamW && cfg.optimizer.lr > 0.0)
        result.threshold = adamw_stability_threshold(cfg.optimizer.beta1, cfg.optimizer.lr);

    // fixed held-out batch for the sharpness probe
    std::vector<std::size_t> probe_idx(std::min(cfg.batch_size, eval.inputs.size()));
    for (std::size_t i = 0; i < probe_idx.size(); ++i) probe_idx[i] = i;
    const Batch probe_batch = detail::gather_batch(eval, probe_idx);
    const std::uint64_t probe_seed = derive_seed(cfg.seed, SeedStream::Probe);

    const double log_t = std::log(static_cast<double>(t));
    double last_loss = 0.0, last_eval = 0.0;
    const auto t_start = std::chrono::steady_clock::now();

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        if (cfg.intervention.kind == InterventionKind::Temperature &&
            step == cfg.intervention.intervention_step)
            set_global_temperature(model, cfg.intervention.tau_target);

        const double lr_t = cfg.schedule.lr_at(step, cfg.steps, cfg.optimizer.lr);
        const bool log_step = step % cfg.log_interval == 0 || step + 1 == cfg.steps;
        const bool epoch_start = step % cfg.steps_per_epoch == 0;

        // full-batch when the budget covers the dataset (fixed-loss contract
        // at lr=0), otherwise sampled with replacement
        std::vector<std::size_t> idx;
        if (cfg.batch_size >= train.inputs.size()) {
            idx.resize(train.inputs.size());
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        } else {
            idx.resize(cfg.batch_size);
            for (auto& i : idx) i = batch_rng.integer(train.inputs.size());
        }
        Batch batch = detail::gather_batch(train, idx);

        ForwardPass fp = model.forward(batch, {.training = true, .with_spectra = log_step});
        bool bad = !std::isfinite(fp.loss);
        if (!bad) {
            last_loss = fp.loss;
            backward_into(model, fp);
            bad = !optimizer_step(cfg.optimizer, model, opt, lr_t);
        } else {
            ++opt.consecutive_bad;
        }
        if (bad && opt.consecutive_bad >= 3) {
            result.status = RunStatus::Diverged;
            break;
        }

        // collapse bookkeeping on the min layer
        double min_layer_mean = std::numeric_limits<double>::infinity();
        for (const LayerSnapshot& s : fp.snapshots)
            min_layer_mean = std::min(min_layer_mean, s.attention_stats.mean_entropy);
        if (result.first_collapse_step < 0 &&
            min_layer_mean < cfg.collapse_threshold * log_t)
            result.first_collapse_step = static_cast<std::ptrdiff_t>(step);

        if (log_step) {
            MetricRecord rec;
            rec.step = step;
            rec.epoch = step / cfg.steps_per_epoch;
            rec.train_loss = fp.loss;
            rec.lr = lr_t;
            rec.tau = model.temperature;
            last_eval = detail::eval_accuracy(model, eval, cfg.batch_size);
            rec.eval_metric = last_eval;
            for (const LayerSnapshot& s : fp.snapshots)
                rec.layers.push_back({s.attention_stats.mean_entropy,
                                      s.attention_stats.min_row_entropy,
                                      s.attention_stats.sigma_kq, s.grad_inf_norm});
            if (cfg.sharpness_probe && epoch_start && !bad) {
                try {
                    rec.sharpness = detail::probe_sharpness(model, probe_batch,
                                                            cfg.probe_lanczos_iters,
                                                            cfg.probe_hvp_epsilon, probe_seed);
                    rec.has_sharpness = true;
                    rec.threshold = result.threshold;
                    result.max_sharpness = std::max(result.max_sharpness, rec.sharpness);
                } catch (const NumericalError&) {
                    // loss surface too wild for the probe; skip the reading
                }
            }
            if (cfg.record_wall_time) {
                rec.has_wall_ms = true;
                rec.wall_ms = std::chrono::duration<double, std::milli>(
                                  std::chrono::steady_clock::now() - t_start)
                                  .count();
            }
            result.records.push_back(rec);
            if (metrics) *metrics << to_json_line(rec) << '\n';
        }
    }

    result.final_loss = last_loss;
    result.final_eval = last_eval;
    if (final_model) *final_model = std::move(model);
    return result;
}

// ---- sweep summary ----

struct SweepRow {
    std::string run_id;
    RunStatus status = RunStatus::Completed;
    double final_loss = 0.0;
    double final_eval = 0.0;
    std::ptrdiff_t first_collapse_step = -1;
    double max_sharpness = 0.0;
    double threshold = 0.0;
};

inline void write_sweep_summary(std::ostream& os, const std::vector<SweepRow>& rows) {
    os << "run_id,status,final_loss,final_eval,first_collapse_step,max_sharpness,threshold\n";
    for (const SweepRow& r : rows) {
        os << r.run_id << ',' << to_string(r.status) << ','
           << detail::fmt_double(r.final_loss) << ',' << detail::fmt_double(r.final_eval)
           << ',' << r.first_collapse_step << ',' << detail::fmt_double(r.max_sharpness)
           << ',' << detail::fmt_double(r.threshold) << '\n';
    }
}

inline SweepRow summary_row(const std::string& run_id, const ExperimentResult& r) {
    return {run_id,       r.status,        r.final_loss, r.final_eval,
            r.first_collapse_step, r.max_sharpness, r.threshold};
}

}  // namespace eclab
