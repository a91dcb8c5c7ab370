#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "eclab/attention.hpp"
#include "eclab/autodiff.hpp"
#include "eclab/matrix.hpp"
#include "eclab/reparam.hpp"
#include "eclab/rng.hpp"
#include "eclab/svd.hpp"

namespace eclab {

enum class NormMode { PreLN, PostLN, None };

struct ModelConfig {
    std::size_t n_layers = 2;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t mlp_dim = 256;
    std::size_t vocab_size = 32;
    std::size_t max_seq_len = 32;  // T
    NormMode norm_mode = NormMode::PostLN;
    ReparamMode reparam_mode = ReparamMode::Plain;
    bool causal = false;
    bool use_sqrt_d_scaling = true;
    double init_std = -1.0;  // < 0: 0.02 for Plain/WN, 0.1 for sigma-reparam modes
    bool gamma_svd_init = false;   // gamma <- sigma_svd(W) at init instead of 1
    bool detach_sigma = false;     // stop-gradient through sigma = u^T W v
    bool joint_kqv = false;        // single jointly reparameterized K/Q/V matrix
    std::uint64_t seed = 0;

    void validate() const {
        if (n_layers == 0 || d_model == 0 || vocab_size < 2 || max_seq_len == 0)
            throw ConfigError("ModelConfig: degenerate sizes");
        if (n_heads == 0 || d_model % n_heads != 0)
            throw ConfigError("ModelConfig: n_heads must divide d_model");
        if (norm_mode == NormMode::None && reparam_mode == ReparamMode::Plain)
            throw ConfigError("ModelConfig: no-LN requires a reparameterized mode");
    }

    double effective_init_std() const {
        if (init_std > 0.0) return init_std;
        return (reparam_mode == ReparamMode::SigmaReparam ||
                reparam_mode == ReparamMode::SpectralNormOnly)
                   ? 0.1
                   : 0.02;
    }
};

struct LayerSnapshot {
    std::size_t layer_index = 0;
    AttentionStats attention_stats;
    double grad_inf_norm = 0.0;  // l-inf over attention weight grads
    double grad_l2_norm = 0.0;
    std::map<std::string, double> sigma_per_matrix;
};

struct Param {
    std::string name;
    Matrix value;
    Matrix grad;
    bool trainable = true;
};

struct Batch {
    std::vector<std::vector<std::size_t>> inputs;   // B rows of T token ids
    std::vector<std::vector<std::size_t>> targets;  // per-token targets, or 1 label per row
};

class Model;

/// One forward build: owns the tape so callers can run backward and read
/// gradients / intermediate attention values.
struct ForwardPass {
    double loss = 0.0;
    std::vector<LayerSnapshot> snapshots;
    ad::Tape tape;
    ad::NodeId loss_node = 0;
    std::vector<ad::NodeId> param_nodes;  // aligned with Model::params order
    std::vector<ad::NodeId> output_nodes;  // per-example T x vocab logits
};

class Model {
public:
    ModelConfig cfg;
    std::vector<Param> params;
    std::map<std::string, std::size_t> param_index;
    std::map<std::string, SpectralState> spectral;  // reparameterized weight name -> state
    double temperature = 1.0;

    const Matrix& param(const std::string& name) const {
        return params[param_index.at(name)].value;
    }
    Matrix& mutable_param(const std::string& name) { return params[param_index.at(name)].value; }

    std::size_t n_scalar_params(bool trainable_only = true) const {
        std::size_t n = 0;
        for (const Param& p : params)
            if (!trainable_only || p.trainable) n += p.value.size();
        return n;
    }

    std::vector<double> flat_params(bool trainable_only = true) const {
        std::vector<double> out;
        out.reserve(n_scalar_params(trainable_only));
        for (const Param& p : params)
            if (!trainable_only || p.trainable)
                out.insert(out.end(), p.value.data().begin(), p.value.data().end());
        return out;
    }

    void set_flat_params(const std::vector<double>& theta, bool trainable_only = true) {
        std::size_t k = 0;
        for (Param& p : params) {
            if (trainable_only && !p.trainable) continue;
            if (k + p.value.size() > theta.size())
                throw ShapeError("set_flat_params: vector too short");
            std::copy(theta.begin() + static_cast<std::ptrdiff_t>(k),
                      theta.begin() + static_cast<std::ptrdiff_t>(k + p.value.size()),
                      p.value.data().begin());
            k += p.value.size();
        }
        if (k != theta.size()) throw ShapeError("set_flat_params: vector too long");
    }

    bool is_seq_task(const Batch& batch) const {
        return !batch.targets.empty() && batch.targets[0].size() == batch.inputs[0].size();
    }

    struct ForwardOptions {
        bool training = true;
        bool with_spectra = true;
        double tau_override = 0.0;  // <= 0: use model temperature
    };

    ForwardPass forward(const Batch& batch, const ForwardOptions& opts);
    ForwardPass forward(const Batch& batch) { return forward(batch, ForwardOptions{}); }

private:
    friend Model build_model(const ModelConfig&);

    void add_param(const std::string& name, Matrix m, bool trainable = true) {
        param_index[name] = params.size();
        params.push_back({name, std::move(m), Matrix(), trainable});
    }

    bool reparam_active() const {
        return cfg.reparam_mode == ReparamMode::SigmaReparam ||
               cfg.reparam_mode == ReparamMode::SpectralNormOnly;
    }

    // Effective weight of a named linear layer under the configured mode.
    ad::NodeId effective_weight(ad::Tape& t, std::map<std::string, ad::NodeId>& nodes,
                                const std::string& name, bool training) {
        const ad::NodeId w = nodes.at(name);
        switch (cfg.reparam_mode) {
            case ReparamMode::Plain:
                return w;
            case ReparamMode::SigmaReparam:
            case ReparamMode::SpectralNormOnly:
                return reparam_on_tape(t, w, nodes.at(name + ".gamma"), spectral.at(name),
                                       training, cfg.detach_sigma);
            case ReparamMode::WeightNorm:
                // per-output-unit (column) normalization of x*W layouts
                return t.transpose(
                    t.row_weightnorm(t.transpose(w), nodes.at(name + ".wngain")));
        }
        throw ConfigError("effective_weight: unknown mode");
    }
};

/// Deterministic model construction: all parameters drawn from the seed's
/// Init sub-stream in declaration order.
inline Model build_model(const ModelConfig& cfg) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    Rng rng(derive_seed(cfg.seed, SeedStream::Init));
    const double std0 = cfg.effective_init_std();
    const std::size_t d = cfg.d_model;

    m.add_param("tok_emb", rng.trunc_normal_matrix(cfg.vocab_size, d, 0.02));
    m.add_param("pos_emb", rng.trunc_normal_matrix(cfg.max_seq_len, d, 0.02));

    auto add_linear = [&](const std::string& name, std::size_t din, std::size_t dout) {
        m.add_param(name, rng.trunc_normal_matrix(din, dout, std0));
        if (m.cfg.reparam_mode == ReparamMode::SigmaReparam ||
            m.cfg.reparam_mode == ReparamMode::SpectralNormOnly) {
            const Matrix& w = m.param(name);
            double gamma0 = 1.0;
            if (m.cfg.gamma_svd_init) gamma0 = sigma_svd(w);
            Matrix g(1, 1);
            g(0, 0) = gamma0;
            m.add_param(name + ".gamma", std::move(g),
                        m.cfg.reparam_mode == ReparamMode::SigmaReparam);
            m.spectral[name] = SpectralState::init(din, dout, rng, gamma0);
        } else if (m.cfg.reparam_mode == ReparamMode::WeightNorm) {
            Matrix g(1, dout);
            for (std::size_t j = 0; j < dout; ++j) {
                double n = 0.0;
                for (std::size_t i = 0; i < din; ++i)
                    n += m.param(name)(i, j) * m.param(name)(i, j);
                g(0, j) = std::sqrt(n);  // init so the layer starts equal to plain
            }
            m.add_param(name + ".wngain", std::move(g));
        }
    };
    auto add_ln = [&](const std::string& name) {
        Matrix gain(1, d);
        for (double& x : gain.data()) x = 1.0;
        m.add_param(name + ".g", std::move(gain));
        m.add_param(name + ".b", Matrix(1, d));
    };

    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "l" + std::to_string(l) + ".";
        if (cfg.norm_mode != NormMode::None) add_ln(p + "ln1");
        if (cfg.joint_kqv) {
            add_linear(p + "attn.wkqv", d, 3 * d);
        } else {
            add_linear(p + "attn.wk", d, d);
            add_linear(p + "attn.wq", d, d);
            add_linear(p + "attn.wv", d, d);
        }
        add_linear(p + "attn.wo", d, d);
        if (cfg.norm_mode != NormMode::None) add_ln(p + "ln2");
        add_linear(p + "mlp.w1", d, cfg.mlp_dim);
        m.add_param(p + "mlp.b1", Matrix(1, cfg.mlp_dim));
        add_linear(p + "mlp.w2", cfg.mlp_dim, d);
        m.add_param(p + "mlp.b2", Matrix(1, d));
    }
    if (cfg.norm_mode == NormMode::PreLN) add_ln("ln_f");
    add_linear("head.w", d, cfg.vocab_size);

    for (Param& p : m.params) p.grad = Matrix(p.value.rows(), p.value.cols());
    return m;
}

inline void set_global_temperature(Model& model, double tau) {
    if (tau <= 0.0) throw DomainError("set_global_temperature: tau must be > 0");
    model.temperature = tau;
}

inline ForwardPass Model::forward(const Batch& batch, const ForwardOptions& opts) {
    cfg.validate();
    if (batch.inputs.empty()) throw ShapeError("forward: empty batch");
    const std::size_t T = batch.inputs[0].size();
    const std::size_t B = batch.inputs.size();
    if (T > cfg.max_seq_len) throw ShapeError("forward: sequence longer than max_seq_len");
    for (const auto& row : batch.inputs)
        for (std::size_t tok : row)
            if (tok >= cfg.vocab_size) throw DomainError("forward: token id out of vocab");
    const double tau = opts.tau_override > 0.0 ? opts.tau_override : temperature;
    if (tau <= 0.0) throw DomainError("forward: temperature must be > 0");
    const bool seq_task = is_seq_task(batch);

    ForwardPass fp;
    ad::Tape& t = fp.tape;

    std::map<std::string, ad::NodeId> nodes;
    fp.param_nodes.reserve(params.size());
    for (const Param& p : params) {
        const ad::NodeId id = t.leaf(p.value);
        nodes[p.name] = id;
        fp.param_nodes.push_back(id);
    }

    // Effective weights are built once per step (one power-iteration refresh
    // per training forward) and shared by all examples in the batch.
    struct LayerWeights {
        ad::NodeId wk, wq, wv, wo, w1, w2;
    };
    std::vector<LayerWeights> weights(cfg.n_layers);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "l" + std::to_string(l) + ".";
        if (cfg.joint_kqv) {
            const ad::NodeId wkqv =
                effective_weight(t, nodes, p + "attn.wkqv", opts.training);
            weights[l].wk = t.slice_cols(wkqv, 0, cfg.d_model);
            weights[l].wq = t.slice_cols(wkqv, cfg.d_model, cfg.d_model);
            weights[l].wv = t.slice_cols(wkqv, 2 * cfg.d_model, cfg.d_model);
        } else {
            weights[l].wk = effective_weight(t, nodes, p + "attn.wk", opts.training);
            weights[l].wq = effective_weight(t, nodes, p + "attn.wq", opts.training);
            weights[l].wv = effective_weight(t, nodes, p + "attn.wv", opts.training);
        }
        weights[l].wo = effective_weight(t, nodes, p + "attn.wo", opts.training);
        weights[l].w1 = effective_weight(t, nodes, p + "mlp.w1", opts.training);
        weights[l].w2 = effective_weight(t, nodes, p + "mlp.w2", opts.training);
    }
    const ad::NodeId head_w = effective_weight(t, nodes, "head.w", opts.training);

    const std::size_t head_dim = cfg.d_model / cfg.n_heads;
    const double scale_factor =
        cfg.use_sqrt_d_scaling ? 1.0 / std::sqrt(static_cast<double>(head_dim)) : 1.0;

    // per-layer recorded attention node ids for stats
    std::vector<std::vector<ad::NodeId>> attn_nodes(cfg.n_layers), logit_nodes(cfg.n_layers);
    std::vector<ad::NodeId> first_example_x(cfg.n_layers);  // layer input, example 0

    auto layernorm_site = [&](ad::NodeId x, const std::string& name) {
        return t.layernorm(x, nodes.at(name + ".g"), nodes.at(name + ".b"));
    };

    ad::NodeId total_loss = 0;
    bool have_loss = false;

    for (std::size_t b = 0; b < B; ++b) {
        ad::NodeId x = t.add(t.embedding_lookup(nodes.at("tok_emb"), batch.inputs[b]),
                             t.slice_rows(nodes.at("pos_emb"), 0, T));

        for (std::size_t l = 0; l < cfg.n_layers; ++l) {
            if (b == 0) first_example_x[l] = x;
            const std::string p = "l" + std::to_string(l) + ".";

            ad::NodeId attn_in = cfg.norm_mode == NormMode::PreLN
                                     ? layernorm_site(x, p + "ln1")
                                     : x;
            ad::NodeId k = t.matmul(attn_in, weights[l].wk);
            ad::NodeId q = t.matmul(attn_in, weights[l].wq);
            ad::NodeId v = t.matmul(attn_in, weights[l].wv);

            std::vector<ad::NodeId> head_outs;
            for (std::size_t h = 0; h < cfg.n_heads; ++h) {
                ad::NodeId kh = t.slice_cols(k, h * head_dim, head_dim);
                ad::NodeId qh = t.slice_cols(q, h * head_dim, head_dim);
                ad::NodeId vh = t.slice_cols(v, h * head_dim, head_dim);
                ad::NodeId logits = t.matmul(kh, t.transpose(qh));
                if (scale_factor != 1.0) logits = t.scalar_mul(logits, scale_factor);
                ad::NodeId attn = t.rowwise_softmax(logits, tau, cfg.causal);
                logit_nodes[l].push_back(logits);
                attn_nodes[l].push_back(attn);
                head_outs.push_back(t.matmul(attn, vh));
            }
            ad::NodeId attn_out =
                t.matmul(cfg.n_heads == 1 ? head_outs[0] : t.concat_cols(head_outs),
                         weights[l].wo);
            x = t.add(x, attn_out);
            if (cfg.norm_mode == NormMode::PostLN) x = layernorm_site(x, p + "ln1");

            ad::NodeId mlp_in = cfg.norm_mode == NormMode::PreLN
                                    ? layernorm_site(x, p + "ln2")
                                    : x;
            ad::NodeId hdn = t.gelu(
                t.add(t.matmul(mlp_in, weights[l].w1), nodes.at(p + "mlp.b1")));
            ad::NodeId mlp_out = t.add(t.matmul(hdn, weights[l].w2), nodes.at(p + "mlp.b2"));
            x = t.add(x, mlp_out);
            if (cfg.norm_mode == NormMode::PostLN) x = layernorm_site(x, p + "ln2");
        }

        if (cfg.norm_mode == NormMode::PreLN) x = layernorm_site(x, "ln_f");
        ad::NodeId out_logits = t.matmul(x, head_w);
        fp.output_nodes.push_back(out_logits);

        ad::NodeId example_loss;
        if (seq_task) {
            example_loss = t.cross_entropy_mean(out_logits, batch.targets[b]);
        } else {
            example_loss =
                t.cross_entropy_mean(t.slice_rows(out_logits, 0, 1), batch.targets[b]);
        }
        total_loss = have_loss ? t.add(total_loss, example_loss) : example_loss;
        have_loss = true;
    }

    fp.loss_node = t.scalar_mul(total_loss, 1.0 / static_cast<double>(B));
    fp.loss = t.value(fp.loss_node)(0, 0);

    // ---- layer snapshots ----
    fp.snapshots.resize(cfg.n_layers);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        LayerSnapshot& snap = fp.snapshots[l];
        snap.layer_index = l;
        double ent_sum = 0.0;
        std::size_t ent_count = 0;
        double ent_min = std::numeric_limits<double>::infinity();
        double max_row_norm = 0.0;
        for (std::size_t i = 0; i < attn_nodes[l].size(); ++i) {
            EntropyResult er = attention_entropy(t.value(attn_nodes[l][i]));
            for (double e : er.per_row) {
                ent_sum += e;
                ent_min = std::min(ent_min, e);
            }
            ent_count += er.per_row.size();
            const Matrix& lg = t.value(logit_nodes[l][i]);
            for (std::size_t r = 0; r < lg.rows(); ++r) {
                double n = 0.0;
                for (std::size_t c = 0; c < lg.cols(); ++c) n += lg(r, c) * lg(r, c);
                max_row_norm = std::max(max_row_norm, std::sqrt(n));
            }
        }
        snap.attention_stats.mean_entropy = ent_count ? ent_sum / ent_count : 0.0;
        snap.attention_stats.min_row_entropy = ent_count ? ent_min : 0.0;
        snap.attention_stats.max_logit_row_norm = max_row_norm;

        if (opts.with_spectra) {
            const Matrix& wk_eff = t.value(weights[l].wk);
            const Matrix& wq_eff = t.value(weights[l].wq);
            snap.attention_stats.sigma_kq =
                spectral_norm_converged(matmul(wk_eff, transpose(wq_eff)), 1e-8, 200).sigma;
            const Matrix& x0 = t.value(first_example_x[l]);
            snap.attention_stats.sigma_x =
                spectral_norm_converged(matmul(x0, transpose(x0)), 1e-8, 200).sigma;
            snap.sigma_per_matrix["wk"] = spectral_norm_converged(wk_eff, 1e-8, 200).sigma;
            snap.sigma_per_matrix["wq"] = spectral_norm_converged(wq_eff, 1e-8, 200).sigma;
            snap.sigma_per_matrix["wv"] =
                spectral_norm_converged(t.value(weights[l].wv), 1e-8, 200).sigma;
            snap.sigma_per_matrix["wo"] =
                spectral_norm_converged(t.value(weights[l].wo), 1e-8, 200).sigma;
        }
    }
    return fp;
}

/// Run backward on a pass and copy leaf gradients into the model's grad
/// buffers; also fills per-layer gradient norms of the attention weights.
inline void backward_into(Model& model, ForwardPass& fp) {
    fp.tape.backward(fp.loss_node);
    for (std::size_t i = 0; i < model.params.size(); ++i)
        model.params[i].grad = fp.tape.grad(fp.param_nodes[i]);

    for (LayerSnapshot& snap : fp.snapshots) {
        const std::string p = "l" + std::to_string(snap.layer_index) + ".attn.";
        double inf = 0.0, l2sq = 0.0;
        for (const char* suffix : {"wk", "wq", "wv", "wo", "wkqv"}) {
            auto it = model.param_index.find(p + suffix);
            if (it == model.param_index.end()) continue;
            const Matrix& g = model.params[it->second].grad;
            inf = std::max(inf, g.max_abs());
            const double f = g.frobenius_norm();
            l2sq += f * f;
        }
        snap.grad_inf_norm = inf;
        snap.grad_l2_norm = std::sqrt(l2sq);
    }
}

// ---- checkpoints: "ECKP\x01" + params + spectral states + temperature ----

inline void save_checkpoint(std::ostream& os, const Model& model) {
    os.write("ECKP\x01", 5);
    detail::put_u32(os, static_cast<std::uint32_t>(model.params.size()));
    for (const Param& p : model.params) {
        detail::put_u32(os, static_cast<std::uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_matrix(os, p.value);
    }
    detail::put_u32(os, static_cast<std::uint32_t>(model.spectral.size()));
    for (const auto& [name, state] : model.spectral) {
        detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_spectral_state(os, state);
    }
    detail::put_f64(os, model.temperature);
}

/// Restores parameter values, spectral states and temperature into a model
/// built from the same config.
inline void load_checkpoint(std::istream& is, Model& model) {
    char magic[5];
    is.read(magic, 5);
    if (!is || std::memcmp(magic, "ECKP\x01", 5) != 0)
        throw IoError("checkpoint: bad magic/version");
    const std::uint32_t n = detail::get_u32(is);
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint32_t len = detail::get_u32(is);
        std::string name(len, '\0');
        is.read(name.data(), len);
        Matrix m = read_matrix(is);
        auto it = model.param_index.find(name);
        if (it == model.param_index.end())
            throw IoError("checkpoint: unknown parameter " + name);
        if (!model.params[it->second].value.same_shape(m))
            throw IoError("checkpoint: shape mismatch for " + name);
        model.params[it->second].value = std::move(m);
    }
    const std::uint32_t ns = detail::get_u32(is);
    for (std::uint32_t i = 0; i < ns; ++i) {
        const std::uint32_t len = detail::get_u32(is);
        std::string name(len, '\0');
        is.read(name.data(), len);
        model.spectral[name] = read_spectral_state(is);
    }
    model.temperature = detail::get_f64(is);
}

}  // namespace eclab
