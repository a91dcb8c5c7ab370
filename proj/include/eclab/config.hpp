#pragma once

// Strict JSON (de)serialization of ExperimentConfig and grid sweeps.
// Unknown fields are rejected recursively; parse -> serialize -> parse is
// the identity.

#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "eclab/errors.hpp"
#include "eclab/harness.hpp"
#include "json.hpp"

namespace eclab {

namespace detail {

using json = nlohmann::json;

template <typename Enum>
struct EnumNames {
    std::vector<std::pair<Enum, const char*>> pairs;

    std::string name(Enum e) const {
        for (const auto& [v, n] : pairs)
            if (v == e) return n;
        throw ConfigError("unknown enum value");
    }
    Enum value(const std::string& s, const char* field) const {
        for (const auto& [v, n] : pairs)
            if (s == n) return v;
        throw ConfigError(std::string("config: bad value '") + s + "' for " + field);
    }
};

inline const EnumNames<NormMode>& norm_names() {
    static const EnumNames<NormMode> e{{{NormMode::PreLN, "pre_ln"},
                                        {NormMode::PostLN, "post_ln"},
                                        {NormMode::None, "none"}}};
    return e;
}
inline const EnumNames<ReparamMode>& reparam_names() {
    static const EnumNames<ReparamMode> e{
        {{ReparamMode::Plain, "plain"},
         {ReparamMode::SigmaReparam, "sigma_reparam"},
         {ReparamMode::SpectralNormOnly, "spectral_norm_only"},
         {ReparamMode::WeightNorm, "weight_norm"}}};
    return e;
}
inline const EnumNames<OptimizerKind>& optimizer_names() {
    static const EnumNames<OptimizerKind> e{{{OptimizerKind::SGD, "sgd"},
                                             {OptimizerKind::SGDMomentum, "sgd_momentum"},
                                             {OptimizerKind::Adam, "adam"},
                                             {OptimizerKind::AdamW, "adamw"},
                                             {OptimizerKind::LARS, "lars"}}};
    return e;
}
inline const EnumNames<DecayKind>& decay_names() {
    static const EnumNames<DecayKind> e{{{DecayKind::Constant, "constant"},
                                         {DecayKind::Cosine, "cosine"},
                                         {DecayKind::Step, "step"}}};
    return e;
}
inline const EnumNames<InterventionKind>& intervention_names() {
    static const EnumNames<InterventionKind> e{
        {{InterventionKind::None, "none"}, {InterventionKind::Temperature, "temperature"}}};
    return e;
}
inline const EnumNames<TaskKind>& task_names() {
    static const EnumNames<TaskKind> e{{{TaskKind::Copy, "copy"},
                                        {TaskKind::Reverse, "reverse"},
                                        {TaskKind::Majority, "majority"}}};
    return e;
}

/// Strict field reader: every key consumed must be declared, extras throw.
class FieldReader {
public:
    FieldReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j.is_object()) throw ConfigError("config: " + path_ + " must be an object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            out = it->get<T>();
        } catch (const json::exception&) {
            throw ConfigError("config: bad type for " + path_ + key);
        }
    }

    template <typename Enum>
    void get_enum(const char* key, Enum& out, const EnumNames<Enum>& names) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        if (!it->is_string())
            throw ConfigError("config: " + path_ + key + " must be a string");
        out = names.value(it->get<std::string>(), (path_ + key).c_str());
    }

    const json* object(const char* key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (const auto& [key, val] : j_.items())
            if (!seen_.count(key))
                throw ConfigError("config: unknown field " + path_ + key);
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

}  // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
    using namespace detail;
    json j;
    j["schema_version"] = 1;
    j["seed"] = c.seed;

    json m;
    m["n_layers"] = c.model.n_layers;
    m["d_model"] = c.model.d_model;
    m["n_heads"] = c.model.n_heads;
    m["mlp_dim"] = c.model.mlp_dim;
    m["vocab_size"] = c.model.vocab_size;
    m["max_seq_len"] = c.model.max_seq_len;
    m["norm_mode"] = norm_names().name(c.model.norm_mode);
    m["reparam_mode"] = reparam_names().name(c.model.reparam_mode);
    m["causal"] = c.model.causal;
    m["use_sqrt_d_scaling"] = c.model.use_sqrt_d_scaling;
    m["init_std"] = c.model.init_std;
    m["gamma_svd_init"] = c.model.gamma_svd_init;
    m["detach_sigma"] = c.model.detach_sigma;
    m["joint_kqv"] = c.model.joint_kqv;
    j["model"] = m;

    json t;
    t["kind"] = task_names().name(c.task.kind);
    t["n_train"] = c.task.n_train;
    t["n_eval"] = c.task.n_eval;
    t["seq_len"] = c.task.seq_len;
    j["task"] = t;

    json o;
    o["kind"] = optimizer_names().name(c.optimizer.kind);
    o["lr"] = c.optimizer.lr;
    o["beta1"] = c.optimizer.beta1;
    o["beta2"] = c.optimizer.beta2;
    o["weight_decay"] = c.optimizer.weight_decay;
    o["momentum"] = c.optimizer.momentum;
    o["eps"] = c.optimizer.eps;
    o["grad_clip"] = c.optimizer.grad_clip;
    j["optimizer"] = o;

    json s;
    s["warmup_steps"] = c.schedule.warmup_steps;
    s["decay"] = decay_names().name(c.schedule.decay);
    s["step_points"] = c.schedule.step_points;
    s["step_factor"] = c.schedule.step_factor;
    s["base_lr"] = c.schedule.base_lr;
    j["schedule"] = s;

    json iv;
    iv["kind"] = intervention_names().name(c.intervention.kind);
    iv["intervention_step"] = c.intervention.intervention_step;
    iv["tau_target"] = c.intervention.tau_target;
    j["intervention"] = iv;

    j["steps"] = c.steps;
    j["batch_size"] = c.batch_size;
    j["log_interval"] = c.log_interval;
    j["steps_per_epoch"] = c.steps_per_epoch;
    j["collapse_threshold"] = c.collapse_threshold;
    j["sharpness_probe"] = c.sharpness_probe;
    j["probe_lanczos_iters"] = c.probe_lanczos_iters;
    j["probe_hvp_epsilon"] = c.probe_hvp_epsilon;
    j["record_wall_time"] = c.record_wall_time;
    return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    using namespace detail;
    ExperimentConfig c;
    FieldReader root(j, "");

    int schema = 0;
    root.get("schema_version", schema);
    if (schema != 1) throw ConfigError("config: schema_version must be 1");
    root.get("seed", c.seed);

    if (const json* m = root.object("model")) {
        FieldReader r(*m, "model.");
        r.get("n_layers", c.model.n_layers);
        r.get("d_model", c.model.d_model);
        r.get("n_heads", c.model.n_heads);
        r.get("mlp_dim", c.model.mlp_dim);
        r.get("vocab_size", c.model.vocab_size);
        r.get("max_seq_len", c.model.max_seq_len);
        r.get_enum("norm_mode", c.model.norm_mode, norm_names());
        r.get_enum("reparam_mode", c.model.reparam_mode, reparam_names());
        r.get("causal", c.model.causal);
        r.get("use_sqrt_d_scaling", c.model.use_sqrt_d_scaling);
        r.get("init_std", c.model.init_std);
        r.get("gamma_svd_init", c.model.gamma_svd_init);
        r.get("detach_sigma", c.model.detach_sigma);
        r.get("joint_kqv", c.model.joint_kqv);
        r.finish();
    }
    if (const json* t = root.object("task")) {
        FieldReader r(*t, "task.");
        r.get_enum("kind", c.task.kind, task_names());
        r.get("n_train", c.task.n_train);
        r.get("n_eval", c.task.n_eval);
        r.get("seq_len", c.task.seq_len);
        r.finish();
    }
    if (const json* o = root.object("optimizer")) {
        FieldReader r(*o, "optimizer.");
        r.get_enum("kind", c.optimizer.kind, optimizer_names());
        r.get("lr", c.optimizer.lr);
        r.get("beta1", c.optimizer.beta1);
        r.get("beta2", c.optimizer.beta2);
        r.get("weight_decay", c.optimizer.weight_decay);
        r.get("momentum", c.optimizer.momentum);
        r.get("eps", c.optimizer.eps);
        r.get("grad_clip", c.optimizer.grad_clip);
        r.finish();
    }
    if (const json* s = root.object("schedule")) {
        FieldReader r(*s, "schedule.");
        r.get("warmup_steps", c.schedule.warmup_steps);
        r.get_enum("decay", c.schedule.decay, decay_names());
        r.get("step_points", c.schedule.step_points);
        r.get("step_factor", c.schedule.step_factor);
        r.get("base_lr", c.schedule.base_lr);
        r.finish();
    }
    if (const json* iv = root.object("intervention")) {
        FieldReader r(*iv, "intervention.");
        r.get_enum("kind", c.intervention.kind, intervention_names());
        r.get("intervention_step", c.intervention.intervention_step);
        r.get("tau_target", c.intervention.tau_target);
        r.finish();
    }
    root.get("steps", c.steps);
    root.get("batch_size", c.batch_size);
    root.get("log_interval", c.log_interval);
    root.get("steps_per_epoch", c.steps_per_epoch);
    root.get("collapse_threshold", c.collapse_threshold);
    root.get("sharpness_probe", c.sharpness_probe);
    root.get("probe_lanczos_iters", c.probe_lanczos_iters);
    root.get("probe_hvp_epsilon", c.probe_hvp_epsilon);
    root.get("record_wall_time", c.record_wall_time);
    root.finish();

    c.validate();
    return c;
}

inline ExperimentConfig parse_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    return config_from_json(j);
}

// ---- grid sweeps ----

struct SweepRun {
    std::string run_id;
    ExperimentConfig cfg;
};

/// Cartesian product of overrides applied to the base config. Keys are
/// dot-separated JSON paths, e.g. "optimizer.lr".
inline std::vector<SweepRun> expand_grid(
    const ExperimentConfig& base,
    const std::vector<std::pair<std::string, std::vector<nlohmann::json>>>& grid) {
    nlohmann::json base_json = to_json(base);
    for (const auto& [path, values] : grid) {
        if (values.empty()) throw ConfigError("sweep: empty value list for " + path);
        std::string q = "/" + path;
        for (auto& ch : q)
            if (ch == '.') ch = '/';
        if (!base_json.contains(nlohmann::json::json_pointer(q)))
            throw ConfigError("sweep: unknown config path " + path);
    }

    std::vector<std::pair<std::string, nlohmann::json>> assignment;
    std::vector<SweepRun> out;
    std::function<void(std::size_t)> rec = [&](std::size_t level) {
        if (level == grid.size()) {
            nlohmann::json j = base_json;
            std::string id;
            for (const auto& [path, value] : assignment) {
                std::string q = "/" + path;  // dot path -> JSON pointer
                for (auto& ch : q)
                    if (ch == '.') ch = '/';
                j[nlohmann::json::json_pointer(q)] = value;
                if (!id.empty()) id += "__";
                std::string vs = value.is_string() ? value.get<std::string>() : value.dump();
                id += path + "=" + vs;
            }
            if (id.empty()) id = "base";
            out.push_back({id, config_from_json(j)});
            return;
        }
        for (const nlohmann::json& v : grid[level].second) {
            assignment.emplace_back(grid[level].first, v);
            rec(level + 1);
            assignment.pop_back();
        }
    };
    rec(0);
    return out;
}

/// Run every grid point sequentially; `sink` (when given) observes each
/// finished run in order.
inline std::vector<ExperimentResult> grid_sweep(
    const ExperimentConfig& base,
    const std::vector<std::pair<std::string, std::vector<nlohmann::json>>>& grid,
    const std::function<void(const SweepRun&, const ExperimentResult&)>& sink = {}) {
    std::vector<SweepRun> runs = expand_grid(base, grid);
    std::vector<ExperimentResult> results;
    results.reserve(runs.size());
    for (const SweepRun& run : runs) {
        results.push_back(run_experiment(run.cfg));
        if (sink) sink(run, results.back());
    }
    return results;
}

}  // namespace eclab
