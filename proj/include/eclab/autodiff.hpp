#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "eclab/matrix.hpp"

namespace eclab::ad {

using NodeId = std::size_t;

enum class Op {
    Leaf,
    MatMul,
    Add,            // same shape, or rhs 1 x cols broadcast over rows
    ScalarMul,      // constant factor
    MulScalarNode,  // matrix * (1x1 node)
    DivScalarNode,  // (1x1) / (1x1)
    BilinearForm,   // u^T W v with constant u, v
    RowSoftmax,     // temperature + optional causal mask
    Gelu,
    LayerNorm,  // last axis, learned gain/bias
    EmbeddingLookup,
    CrossEntropyMean,  // fused log-softmax + NLL, mean over rows
    Transpose,
    ConcatRows,
    ConcatCols,
    SliceRows,
    SliceCols,
    ReduceMean,
    RowWeightNorm,  // per-row normalization times learned per-row gains
};

struct Node {
    Op op = Op::Leaf;
    std::vector<NodeId> parents;
    Matrix value;
    Matrix grad;  // same shape as value, zeroed before each backward

    double scalar = 0.0;                // ScalarMul factor / softmax tau / layernorm eps
    bool flag = false;                  // softmax causal mask
    std::vector<std::size_t> indices;   // embedding ids / cross-entropy targets
    std::size_t offset = 0, extent = 0; // slice window
    std::vector<double> const_u, const_v;  // bilinear-form constants
};

/// Append-only reverse-mode tape over a fixed op set. Values are computed
/// eagerly at node creation; backward replays the list once in reverse.
class Tape {
public:
    std::size_t size() const { return nodes_.size(); }
    const Node& node(NodeId id) const { return nodes_.at(id); }
    const Matrix& value(NodeId id) const { return nodes_.at(id).value; }
    const Matrix& grad(NodeId id) const { return nodes_.at(id).grad; }

    NodeId leaf(Matrix m) {
        Node n;
        n.op = Op::Leaf;
        n.value = std::move(m);
        return push(std::move(n));
    }

    NodeId matmul(NodeId a, NodeId b) {
        const Matrix& va = val(a, "matmul lhs");
        const Matrix& vb = val(b, "matmul rhs");
        if (va.cols() != vb.rows()) throw shape_error("matmul", a, b);
        Node n;
        n.op = Op::MatMul;
        n.parents = {a, b};
        n.value = eclab::matmul(va, vb);
        return push(std::move(n));
    }

    NodeId add(NodeId a, NodeId b) {
        const Matrix& va = val(a, "add lhs");
        const Matrix& vb = val(b, "add rhs");
        Node n;
        n.op = Op::Add;
        n.parents = {a, b};
        if (va.same_shape(vb)) {
            n.value = eclab::add(va, vb);
        } else if (vb.rows() == 1 && vb.cols() == va.cols()) {
            n.value = va;
            for (std::size_t i = 0; i < va.rows(); ++i)
                for (std::size_t j = 0; j < va.cols(); ++j) n.value(i, j) += vb(0, j);
        } else {
            throw shape_error("add", a, b);
        }
        return push(std::move(n));
    }

    NodeId scalar_mul(NodeId a, double c) {
        Node n;
        n.op = Op::ScalarMul;
        n.parents = {a};
        n.scalar = c;
        n.value = scale(val(a, "scalar_mul"), c);
        return push(std::move(n));
    }

    NodeId mul_scalar_node(NodeId a, NodeId s) {
        const Matrix& vs = val(s, "mul_scalar_node scalar");
        if (vs.rows() != 1 || vs.cols() != 1) throw shape_error("mul_scalar_node", a, s);
        Node n;
        n.op = Op::MulScalarNode;
        n.parents = {a, s};
        n.value = scale(val(a, "mul_scalar_node"), vs(0, 0));
        return push(std::move(n));
    }

    NodeId div_scalar_node(NodeId a, NodeId b) {
        const Matrix& va = val(a, "div lhs");
        const Matrix& vb = val(b, "div rhs");
        if (va.size() != 1 || vb.size() != 1) throw shape_error("div_scalar_node", a, b);
        Node n;
        n.op = Op::DivScalarNode;
        n.parents = {a, b};
        n.value = Matrix(1, 1);
        n.value(0, 0) = va(0, 0) / vb(0, 0);
        return push(std::move(n));
    }

    /// 1x1 node u^T W v with u, v treated as constants (no gradient to them).
    NodeId bilinear_form(NodeId w, std::vector<double> u, std::vector<double> v) {
        const Matrix& vw = val(w, "bilinear_form");
        if (u.size() != vw.rows() || v.size() != vw.cols())
            throw ShapeError("bilinear_form: u/v lengths do not match node " + std::to_string(w));
        Node n;
        n.op = Op::BilinearForm;
        n.parents = {w};
        n.value = Matrix(1, 1);
        n.value(0, 0) = dot(u, matvec(vw, v));
        n.const_u = std::move(u);
        n.const_v = std::move(v);
        return push(std::move(n));
    }

    NodeId rowwise_softmax(NodeId a, double tau, bool causal = false) {
        if (tau <= 0.0) throw DomainError("rowwise_softmax: tau must be > 0");
        const Matrix& va = val(a, "rowwise_softmax");
        if (causal && va.rows() != va.cols())
            throw ShapeError("rowwise_softmax: causal mask needs square logits, node " +
                             std::to_string(a));
        Node n;
        n.op = Op::RowSoftmax;
        n.parents = {a};
        n.scalar = tau;
        n.flag = causal;
        n.value = Matrix(va.rows(), va.cols());
        for (std::size_t i = 0; i < va.rows(); ++i) {
            const std::size_t limit = causal ? i + 1 : va.cols();
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < limit; ++j) mx = std::max(mx, va(i, j) / tau);
            double z = 0.0;
            for (std::size_t j = 0; j < limit; ++j) {
                const double e = std::exp(va(i, j) / tau - mx);
                n.value(i, j) = e;
                z += e;
            }
            for (std::size_t j = 0; j < limit; ++j) n.value(i, j) /= z;
        }
        return push(std::move(n));
    }

    NodeId gelu(NodeId a) {
        Node n;
        n.op = Op::Gelu;
        n.parents = {a};
        n.value = val(a, "gelu");
        for (double& x : n.value.data()) x = 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
        return push(std::move(n));
    }

    NodeId layernorm(NodeId x, NodeId gain, NodeId bias, double eps = 1e-5) {
        const Matrix& vx = val(x, "layernorm input");
        const Matrix& vg = val(gain, "layernorm gain");
        const Matrix& vb = val(bias, "layernorm bias");
        if (vg.rows() != 1 || vg.cols() != vx.cols() || vb.rows() != 1 || vb.cols() != vx.cols())
            throw ShapeError("layernorm: gain/bias must be 1x" + std::to_string(vx.cols()) +
                             ", node " + std::to_string(x));
        Node n;
        n.op = Op::LayerNorm;
        n.parents = {x, gain, bias};
        n.scalar = eps;
        n.value = Matrix(vx.rows(), vx.cols());
        const double d = static_cast<double>(vx.cols());
        for (std::size_t i = 0; i < vx.rows(); ++i) {
            double mu = 0.0;
            for (std::size_t j = 0; j < vx.cols(); ++j) mu += vx(i, j);
            mu /= d;
            double var = 0.0;
            for (std::size_t j = 0; j < vx.cols(); ++j) {
                const double c = vx(i, j) - mu;
                var += c * c;
            }
            var /= d;
            const double inv = 1.0 / std::sqrt(var + eps);
            for (std::size_t j = 0; j < vx.cols(); ++j)
                n.value(i, j) = vg(0, j) * (vx(i, j) - mu) * inv + vb(0, j);
        }
        return push(std::move(n));
    }

    NodeId embedding_lookup(NodeId table, std::vector<std::size_t> ids) {
        const Matrix& vt = val(table, "embedding table");
        Node n;
        n.op = Op::EmbeddingLookup;
        n.parents = {table};
        n.value = Matrix(ids.size(), vt.cols());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] >= vt.rows())
                throw DomainError("embedding_lookup: index " + std::to_string(ids[i]) +
                                  " out of range, node " + std::to_string(table));
            for (std::size_t j = 0; j < vt.cols(); ++j) n.value(i, j) = vt(ids[i], j);
        }
        n.indices = std::move(ids);
        return push(std::move(n));
    }

    /// Mean over rows of [logsumexp(row) - row[target]]; fused softmax + NLL.
    NodeId cross_entropy_mean(NodeId logits, std::vector<std::size_t> targets) {
        const Matrix& vl = val(logits, "cross_entropy logits");
        if (targets.size() != vl.rows())
            throw ShapeError("cross_entropy_mean: one target per row required, node " +
                             std::to_string(logits));
        Node n;
        n.op = Op::CrossEntropyMean;
        n.parents = {logits};
        double total = 0.0;
        for (std::size_t i = 0; i < vl.rows(); ++i) {
            if (targets[i] >= vl.cols())
                throw DomainError("cross_entropy_mean: target out of range at row " +
                                  std::to_string(i));
            double mx = vl(i, 0);
            for (std::size_t j = 1; j < vl.cols(); ++j) mx = std::max(mx, vl(i, j));
            double z = 0.0;
            for (std::size_t j = 0; j < vl.cols(); ++j) z += std::exp(vl(i, j) - mx);
            total += mx + std::log(z) - vl(i, targets[i]);
        }
        n.value = Matrix(1, 1);
        n.value(0, 0) = total / static_cast<double>(vl.rows());
        n.indices = std::move(targets);
        return push(std::move(n));
    }

    NodeId transpose(NodeId a) {
        Node n;
        n.op = Op::Transpose;
        n.parents = {a};
        n.value = eclab::transpose(val(a, "transpose"));
        return push(std::move(n));
    }

    NodeId concat_rows(NodeId a, NodeId b) {
        const Matrix& va = val(a, "concat_rows lhs");
        const Matrix& vb = val(b, "concat_rows rhs");
        if (va.cols() != vb.cols()) throw shape_error("concat_rows", a, b);
        Node n;
        n.op = Op::ConcatRows;
        n.parents = {a, b};
        n.value = Matrix(va.rows() + vb.rows(), va.cols());
        std::copy(va.data().begin(), va.data().end(), n.value.data().begin());
        std::copy(vb.data().begin(), vb.data().end(),
                  n.value.data().begin() + static_cast<std::ptrdiff_t>(va.size()));
        return push(std::move(n));
    }

    NodeId concat_cols(const std::vector<NodeId>& parts) {
        if (parts.empty()) throw ShapeError("concat_cols: no parts");
        std::size_t rows = val(parts[0], "concat_cols").rows(), cols = 0;
        for (NodeId p : parts) {
            const Matrix& vp = val(p, "concat_cols part");
            if (vp.rows() != rows) throw ShapeError("concat_cols: row mismatch");
            cols += vp.cols();
        }
        Node n;
        n.op = Op::ConcatCols;
        n.parents = parts;
        n.value = Matrix(rows, cols);
        std::size_t c0 = 0;
        for (NodeId p : parts) {
            const Matrix& vp = nodes_[p].value;
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < vp.cols(); ++j) n.value(i, c0 + j) = vp(i, j);
            c0 += vp.cols();
        }
        return push(std::move(n));
    }

    NodeId slice_rows(NodeId a, std::size_t r0, std::size_t count) {
        const Matrix& va = val(a, "slice_rows");
        if (r0 + count > va.rows())
            throw ShapeError("slice_rows: window out of range, node " + std::to_string(a));
        Node n;
        n.op = Op::SliceRows;
        n.parents = {a};
        n.offset = r0;
        n.extent = count;
        n.value = Matrix(count, va.cols());
        for (std::size_t i = 0; i < count; ++i)
            for (std::size_t j = 0; j < va.cols(); ++j) n.value(i, j) = va(r0 + i, j);
        return push(std::move(n));
    }

    NodeId slice_cols(NodeId a, std::size_t c0, std::size_t count) {
        const Matrix& va = val(a, "slice_cols");
        if (c0 + count > va.cols())
            throw ShapeError("slice_cols: window out of range, node " + std::to_string(a));
        Node n;
        n.op = Op::SliceCols;
        n.parents = {a};
        n.offset = c0;
        n.extent = count;
        n.value = Matrix(va.rows(), count);
        for (std::size_t i = 0; i < va.rows(); ++i)
            for (std::size_t j = 0; j < count; ++j) n.value(i, j) = va(i, c0 + j);
        return push(std::move(n));
    }

    /// y_i = gains_i * w_i / ||w_i|| per row; gains is a 1 x rows node.
    NodeId row_weightnorm(NodeId w, NodeId gains) {
        const Matrix& vw = val(w, "row_weightnorm");
        const Matrix& vg = val(gains, "row_weightnorm gains");
        if (vg.rows() != 1 || vg.cols() != vw.rows()) throw shape_error("row_weightnorm", w, gains);
        Node n;
        n.op = Op::RowWeightNorm;
        n.parents = {w, gains};
        n.value = Matrix(vw.rows(), vw.cols());
        for (std::size_t i = 0; i < vw.rows(); ++i) {
            double r = 0.0;
            for (std::size_t j = 0; j < vw.cols(); ++j) r += vw(i, j) * vw(i, j);
            r = std::sqrt(r);
            if (r < 1e-30)
                throw DomainError("row_weightnorm: zero row " + std::to_string(i) + " in node " +
                                  std::to_string(w));
            for (std::size_t j = 0; j < vw.cols(); ++j) n.value(i, j) = vg(0, i) * vw(i, j) / r;
        }
        return push(std::move(n));
    }

    NodeId reduce_mean(NodeId a) {
        const Matrix& va = val(a, "reduce_mean");
        Node n;
        n.op = Op::ReduceMean;
        n.parents = {a};
        n.value = Matrix(1, 1);
        double s = 0.0;
        for (double x : va.data()) s += x;
        n.value(0, 0) = s / static_cast<double>(va.size());
        return push(std::move(n));
    }

    /// Values are computed eagerly at construction; this returns the cached
    /// value after validating the node exists.
    const Matrix& forward(NodeId root) const { return val(root, "forward root"); }

    void backward(NodeId root, double seed = 1.0) {
        const Matrix& vr = val(root, "backward root");
        if (vr.size() != 1)
            throw ContractError("backward: root must be scalar (1x1), node " +
                                std::to_string(root));
        for (Node& n : nodes_) {
            n.grad = Matrix(n.value.rows(), n.value.cols());
        }
        nodes_[root].grad(0, 0) = seed;
        for (std::size_t idx = root + 1; idx-- > 0;) {
            propagate(idx);
        }
    }

private:
    std::vector<Node> nodes_;

    NodeId push(Node n) {
        nodes_.push_back(std::move(n));
        return nodes_.size() - 1;
    }

    const Matrix& val(NodeId id, const char* what) const {
        if (id >= nodes_.size())
            throw ShapeError(std::string(what) + ": unknown node " + std::to_string(id));
        return nodes_[id].value;
    }

    ShapeError shape_error(const char* op, NodeId a, NodeId b) const {
        return ShapeError(std::string(op) + ": shape mismatch between node " + std::to_string(a) +
                          " (" + std::to_string(nodes_[a].value.rows()) + "x" +
                          std::to_string(nodes_[a].value.cols()) + ") and node " +
                          std::to_string(b) + " (" + std::to_string(nodes_[b].value.rows()) + "x" +
                          std::to_string(nodes_[b].value.cols()) + ")");
    }

    void propagate(NodeId id) {
        Node& n = nodes_[id];
        const Matrix& g = n.grad;
        if (g.max_abs() == 0.0) return;
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::MatMul: {
                const Matrix& a = nodes_[n.parents[0]].value;
                const Matrix& b = nodes_[n.parents[1]].value;
                accumulate(n.parents[0], eclab::matmul(g, eclab::transpose(b)));
                accumulate(n.parents[1], eclab::matmul(eclab::transpose(a), g));
                break;
            }
            case Op::Add: {
                accumulate(n.parents[0], g);
                Matrix& gb = nodes_[n.parents[1]].grad;
                if (gb.same_shape(g)) {
                    for (std::size_t i = 0; i < g.size(); ++i) gb.data()[i] += g.data()[i];
                } else {  // broadcast row: column sums
                    for (std::size_t i = 0; i < g.rows(); ++i)
                        for (std::size_t j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
                }
                break;
            }
            case Op::ScalarMul:
                accumulate(n.parents[0], scale(g, n.scalar));
                break;
            case Op::MulScalarNode: {
                const Matrix& a = nodes_[n.parents[0]].value;
                const double s = nodes_[n.parents[1]].value(0, 0);
                accumulate(n.parents[0], scale(g, s));
                double ds = 0.0;
                for (std::size_t i = 0; i < g.size(); ++i) ds += g.data()[i] * a.data()[i];
                nodes_[n.parents[1]].grad(0, 0) += ds;
                break;
            }
            case Op::DivScalarNode: {
                const double a = nodes_[n.parents[0]].value(0, 0);
                const double b = nodes_[n.parents[1]].value(0, 0);
                nodes_[n.parents[0]].grad(0, 0) += g(0, 0) / b;
                nodes_[n.parents[1]].grad(0, 0) -= g(0, 0) * a / (b * b);
                break;
            }
            case Op::BilinearForm: {
                Matrix& gw = nodes_[n.parents[0]].grad;
                const double s = g(0, 0);
                for (std::size_t i = 0; i < gw.rows(); ++i)
                    for (std::size_t j = 0; j < gw.cols(); ++j)
                        gw(i, j) += s * n.const_u[i] * n.const_v[j];
                break;
            }
            case Op::RowSoftmax: {
                Matrix& ga = nodes_[n.parents[0]].grad;
                const Matrix& y = n.value;
                const double inv_tau = 1.0 / n.scalar;
                for (std::size_t i = 0; i < y.rows(); ++i) {
                    const std::size_t limit = n.flag ? i + 1 : y.cols();
                    double dotgy = 0.0;
                    for (std::size_t j = 0; j < limit; ++j) dotgy += g(i, j) * y(i, j);
                    for (std::size_t j = 0; j < limit; ++j)
                        ga(i, j) += inv_tau * y(i, j) * (g(i, j) - dotgy);
                }
                break;
            }
            case Op::Gelu: {
                const Matrix& x = nodes_[n.parents[0]].value;
                Matrix& ga = nodes_[n.parents[0]].grad;
                constexpr double inv_sqrt_2pi = 0.3989422804014327;
                for (std::size_t i = 0; i < x.size(); ++i) {
                    const double xi = x.data()[i];
                    const double phi = 0.5 * (1.0 + std::erf(xi * M_SQRT1_2));
                    const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xi * xi);
                    ga.data()[i] += g.data()[i] * (phi + xi * pdf);
                }
                break;
            }
            case Op::LayerNorm: {
                const Matrix& x = nodes_[n.parents[0]].value;
                const Matrix& gain = nodes_[n.parents[1]].value;
                Matrix& gx = nodes_[n.parents[0]].grad;
                Matrix& ggain = nodes_[n.parents[1]].grad;
                Matrix& gbias = nodes_[n.parents[2]].grad;
                const double d = static_cast<double>(x.cols());
                for (std::size_t i = 0; i < x.rows(); ++i) {
                    double mu = 0.0;
                    for (std::size_t j = 0; j < x.cols(); ++j) mu += x(i, j);
                    mu /= d;
                    double var = 0.0;
                    for (std::size_t j = 0; j < x.cols(); ++j) {
                        const double c = x(i, j) - mu;
                        var += c * c;
                    }
                    var /= d;
                    const double inv = 1.0 / std::sqrt(var + n.scalar);
                    double m1 = 0.0, m2 = 0.0;  // mean(dxhat), mean(dxhat * xhat)
                    for (std::size_t j = 0; j < x.cols(); ++j) {
                        const double xh = (x(i, j) - mu) * inv;
                        const double dxh = g(i, j) * gain(0, j);
                        m1 += dxh;
                        m2 += dxh * xh;
                        ggain(0, j) += g(i, j) * xh;
                        gbias(0, j) += g(i, j);
                    }
                    m1 /= d;
                    m2 /= d;
                    for (std::size_t j = 0; j < x.cols(); ++j) {
                        const double xh = (x(i, j) - mu) * inv;
                        const double dxh = g(i, j) * gain(0, j);
                        gx(i, j) += inv * (dxh - m1 - xh * m2);
                    }
                }
                break;
            }
            case Op::EmbeddingLookup: {
                Matrix& gt = nodes_[n.parents[0]].grad;
                for (std::size_t i = 0; i < n.indices.size(); ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j)
                        gt(n.indices[i], j) += g(i, j);
                break;
            }
            case Op::CrossEntropyMean: {
                const Matrix& u = nodes_[n.parents[0]].value;
                Matrix& gu = nodes_[n.parents[0]].grad;
                const double s = g(0, 0) / static_cast<double>(u.rows());
                for (std::size_t i = 0; i < u.rows(); ++i) {
                    double mx = u(i, 0);
                    for (std::size_t j = 1; j < u.cols(); ++j) mx = std::max(mx, u(i, j));
                    double z = 0.0;
                    for (std::size_t j = 0; j < u.cols(); ++j) z += std::exp(u(i, j) - mx);
                    for (std::size_t j = 0; j < u.cols(); ++j) {
                        const double p = std::exp(u(i, j) - mx) / z;
                        gu(i, j) += s * (p - (j == n.indices[i] ? 1.0 : 0.0));
                    }
                }
                break;
            }
            case Op::Transpose:
                accumulate(n.parents[0], eclab::transpose(g));
                break;
            case Op::ConcatRows: {
                Matrix& ga = nodes_[n.parents[0]].grad;
                Matrix& gb = nodes_[n.parents[1]].grad;
                for (std::size_t i = 0; i < ga.size(); ++i) ga.data()[i] += g.data()[i];
                for (std::size_t i = 0; i < gb.size(); ++i)
                    gb.data()[i] += g.data()[ga.size() + i];
                break;
            }
            case Op::ConcatCols: {
                std::size_t c0 = 0;
                for (NodeId p : n.parents) {
                    Matrix& gp = nodes_[p].grad;
                    for (std::size_t i = 0; i < gp.rows(); ++i)
                        for (std::size_t j = 0; j < gp.cols(); ++j) gp(i, j) += g(i, c0 + j);
                    c0 += gp.cols();
                }
                break;
            }
            case Op::SliceRows: {
                Matrix& ga = nodes_[n.parents[0]].grad;
                for (std::size_t i = 0; i < n.extent; ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j) ga(n.offset + i, j) += g(i, j);
                break;
            }
            case Op::SliceCols: {
                Matrix& ga = nodes_[n.parents[0]].grad;
                for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < n.extent; ++j) ga(i, n.offset + j) += g(i, j);
                break;
            }
            case Op::RowWeightNorm: {
                const Matrix& w = nodes_[n.parents[0]].value;
                const Matrix& gains = nodes_[n.parents[1]].value;
                Matrix& gw = nodes_[n.parents[0]].grad;
                Matrix& gg = nodes_[n.parents[1]].grad;
                for (std::size_t i = 0; i < w.rows(); ++i) {
                    double r2 = 0.0;
                    for (std::size_t j = 0; j < w.cols(); ++j) r2 += w(i, j) * w(i, j);
                    const double r = std::sqrt(r2);
                    double gdotwhat = 0.0;
                    for (std::size_t j = 0; j < w.cols(); ++j)
                        gdotwhat += g(i, j) * w(i, j) / r;
                    gg(0, i) += gdotwhat;
                    const double s = gains(0, i) / r;
                    for (std::size_t j = 0; j < w.cols(); ++j)
                        gw(i, j) += s * (g(i, j) - gdotwhat * w(i, j) / r);
                }
                break;
            }
            case Op::ReduceMean: {
                Matrix& ga = nodes_[n.parents[0]].grad;
                const double s = g(0, 0) / static_cast<double>(ga.size());
                for (double& x : ga.data()) x += s;
                break;
            }
        }
    }

    void accumulate(NodeId id, const Matrix& delta) {
        Matrix& gp = nodes_[id].grad;
        for (std::size_t i = 0; i < gp.size(); ++i) gp.data()[i] += delta.data()[i];
    }
};

/// Standalone temperature softmax over each row (the op outside any tape);
/// row-max subtraction keeps it stable for entries up to ~700*tau.
inline Matrix rowwise_softmax(const Matrix& u, double tau) {
    Tape t;
    return t.value(t.rowwise_softmax(t.leaf(u), tau));
}

}  // namespace eclab::ad
