#pragma once

// Reverse-mode autodiff on a tape of primitive applications. Forward values
// are computed eagerly as nodes are appended, so the tape is topologically
// ordered by construction; backward() walks it in reverse. Templated on the
// scalar type: training uses float, gradient checks use double.

#include "comchain/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace comchain {

struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

// c = a(m,k) * b(k,n); accumulate adds into c
template <typename F>
void mm_nn(const F* a, const F* b, F* c, int64_t m, int64_t k, int64_t n, bool acc) {
    for (int64_t i = 0; i < m; ++i) {
        F* crow = c + i * n;
        if (!acc) std::fill(crow, crow + n, F(0));
        const F* arow = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const F av = arow[p];
            const F* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c = a(m,k) * b(n,k)^T. The dot-product form defeats auto-vectorization
// (strict FP forbids reassociating the reduction), so materialize b^T once
// and reuse the nn kernel; the transpose is O(nk) against O(mnk) work.
template <typename F>
void mm_nt(const F* a, const F* b, F* c, int64_t m, int64_t k, int64_t n, bool acc) {
    std::vector<F> bt(static_cast<size_t>(k * n));
    for (int64_t j = 0; j < n; ++j)
        for (int64_t p = 0; p < k; ++p) bt[static_cast<size_t>(p * n + j)] = b[j * k + p];
    mm_nn(a, bt.data(), c, m, k, n, acc);
}

// c = a(k,m)^T * b(k,n)
template <typename F>
void mm_tn(const F* a, const F* b, F* c, int64_t m, int64_t k, int64_t n, bool acc) {
    if (!acc) std::fill(c, c + m * n, F(0));
    for (int64_t p = 0; p < k; ++p) {
        const F* arow = a + p * m;
        const F* brow = b + p * n;
        for (int64_t i = 0; i < m; ++i) {
            const F av = arow[i];
            F* crow = c + i * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace detail

template <typename F>
class Graph {
public:
    struct Node {
        TensorT<F> value;
        TensorT<F> grad;                   // allocated lazily during backward
        std::vector<int> parents;
        std::vector<TensorT<F>> saved;     // activations kept for backward
        std::string op;
        std::string leaf_name;             // set for named parameter leaves
        bool requires_grad = false;
        std::function<void(Graph&, int)> backprop;
    };

    std::vector<Node> nodes;

    const TensorT<F>& value(int id) const { return nodes[static_cast<size_t>(id)].value; }
    TensorT<F>& value(int id) { return nodes[static_cast<size_t>(id)].value; }
    F scalar(int id) const {
        const auto& v = value(id);
        if (v.numel() != 1) throw ContractError("node is not a scalar");
        return v.data[0];
    }

    int leaf(const std::string& name, TensorT<F> v) {
        Node n;
        n.value = std::move(v);
        n.op = "leaf";
        n.leaf_name = name;
        n.requires_grad = true;
        nodes.push_back(std::move(n));
        return static_cast<int>(nodes.size()) - 1;
    }

    int input(TensorT<F> v) {
        Node n;
        n.value = std::move(v);
        n.op = "input";
        nodes.push_back(std::move(n));
        return static_cast<int>(nodes.size()) - 1;
    }

    // Gradients of a scalar loss with respect to every named leaf. Leaves the
    // loss does not reach get zero gradients.
    std::map<std::string, TensorT<F>> backward(int loss_id) {
        if (value(loss_id).numel() != 1)
            throw ContractError("backward requires a scalar loss node, got shape " +
                                shape_str(value(loss_id).shape));
        for (auto& n : nodes) n.grad = TensorT<F>();
        auto& loss = nodes[static_cast<size_t>(loss_id)];
        loss.grad = TensorT<F>(loss.value.shape, F(0));
        loss.grad.data[0] = F(1);
        for (int id = loss_id; id >= 0; --id) {
            Node& n = nodes[static_cast<size_t>(id)];
            if (n.grad.data.empty() || !n.requires_grad || !n.backprop) continue;
            n.backprop(*this, id);
        }
        std::map<std::string, TensorT<F>> grads;
        for (auto& n : nodes) {
            if (n.leaf_name.empty()) continue;
            grads[n.leaf_name] =
                n.grad.data.empty() ? TensorT<F>(n.value.shape, F(0)) : std::move(n.grad);
        }
        return grads;
    }

    // -- helpers used by primitive implementations --------------------------

    TensorT<F>& grad_of(int id) {
        Node& n = nodes[static_cast<size_t>(id)];
        if (n.grad.data.empty()) n.grad = TensorT<F>(n.value.shape, F(0));
        return n.grad;
    }

    bool wants_grad(int id) const { return nodes[static_cast<size_t>(id)].requires_grad; }

    int emit(std::string op, std::vector<int> parents, TensorT<F> out,
             std::function<void(Graph&, int)> backprop,
             std::vector<TensorT<F>> saved = {}) {
        Node n;
        n.value = std::move(out);
        n.parents = std::move(parents);
        n.op = std::move(op);
        n.saved = std::move(saved);
        n.backprop = std::move(backprop);
        for (int p : n.parents)
            n.requires_grad = n.requires_grad || nodes[static_cast<size_t>(p)].requires_grad;
        nodes.push_back(std::move(n));
        return static_cast<int>(nodes.size()) - 1;
    }
};

// ---------------------------------------------------------------------------
// Primitive catalog. Every function appends one tape record and returns the
// output node id. Shape violations throw DimError naming the primitive.

namespace ops {

template <typename F>
void require(bool cond, const std::string& prim, const std::string& what) {
    if (!cond) throw DimError(prim + ": " + what);
}

template <typename F>
int matmul(Graph<F>& g, int a, int b) {
    const auto& av = g.value(a);
    const auto& bv = g.value(b);
    require<F>(av.shape.size() == 2 && bv.shape.size() == 2 && av.shape[1] == bv.shape[0],
               "matmul", "shapes " + shape_str(av.shape) + " x " + shape_str(bv.shape));
    const int64_t m = av.shape[0], k = av.shape[1], n = bv.shape[1];
    TensorT<F> out({m, n});
    detail::mm_nn(av.data.data(), bv.data.data(), out.data.data(), m, k, n, false);
    return g.emit("matmul", {a, b}, std::move(out), [a, b, m, k, n](Graph<F>& gr, int self) {
        const auto& go = gr.nodes[static_cast<size_t>(self)].grad;
        if (gr.wants_grad(a))
            detail::mm_nt(go.data.data(), gr.value(b).data.data(), gr.grad_of(a).data.data(),
                          m, n, k, true);
        if (gr.wants_grad(b))
            detail::mm_tn(gr.value(a).data.data(), go.data.data(), gr.grad_of(b).data.data(),
                          k, m, n, true);
    });
}

template <typename F>
int transpose(Graph<F>& g, int x) {
    const auto& xv = g.value(x);
    require<F>(xv.shape.size() == 2, "transpose", "rank-2 input required");
    const int64_t r = xv.shape[0], c = xv.shape[1];
    TensorT<F> out({c, r});
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out.data[static_cast<size_t>(j * r + i)] = xv.data[static_cast<size_t>(i * c + j)];
    return g.emit("transpose", {x}, std::move(out), [x, r, c](Graph<F>& gr, int self) {
        if (!gr.wants_grad(x)) return;
        const auto& go = gr.nodes[static_cast<size_t>(self)].grad;
        auto& gx = gr.grad_of(x);
        for (int64_t j = 0; j < c; ++j)
            for (int64_t i = 0; i < r; ++i) gx.data[static_cast<size_t>(i * c + j)] += go.data[static_cast<size_t>(j * r + i)];
    });
}

template <typename F>
int add(Graph<F>& g, int a, int b) {
    const auto& av = g.value(a);
    const auto& bv = g.value(b);
    require<F>(av.shape == bv.shape, "add",
               "shapes " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    TensorT<F> out = av;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
    return g.emit("add", {a, b}, std::move(out), [a, b](Graph<F>& gr, int self) {
        const auto& go = gr.nodes[static_cast<size_t>(self)].grad;
        for (int p : {a, b}) {
            if (!gr.wants_grad(p)) continue;
            auto& gp = gr.grad_of(p);
            for (size_t i = 0; i < go.data.size(); ++i) gp.data[i] += go.data[i];
        }
    });
}

// x (R,C) plus a bias row broadcast over rows; bias may be (C) or (1,C)
template <typename F>
int bias_add(Graph<F>& g, int x, int b) {
    const auto& xv = g.value(x);
    const auto& bv = g.value(b);
    require<F>(xv.shape.size() == 2 && bv.numel() == xv.shape[1], "bias_add",
               "shapes " + shape_str(xv.shape) + " vs " + shape_str(bv.shape));
    const int64_t r = xv.shape[0], c = xv.shape[1];
    TensorT<F> out = xv;
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out.data[static_cast<size_t>(i * c + j)] += bv.data[static_cast<size_t>(j)];
    return g.emit("bias_add", {x, b}, std::move(out), [x, b, r, c](Graph<F>& gr, int self) {
        const auto& go = gr.nodes[static_cast<size_t>(self)].grad;
        if (gr.wants_grad(x)) {
            auto& gx = gr.grad_of(x);
            for (size_t i = 0; i < go.data.size(); ++i) gx.data[i] += go.data[i];
        }
        if (gr.wants_grad(b)) {
            auto& gb = gr.grad_of(b);
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < c; ++j) gb.data[static_cast<size_t>(j)] += go.data[static_cast<size_t>(i * c + j)];
        }
    });
}

template <typename F>
int scale(Graph<F>& g, int x, double c) {
    TensorT<F> out = g.value(x);
    for (auto& v : out.data) v *= static_cast<F>(c);
    return g.emit("scale", {x}, std::move(out), [x, c](Graph<F>& gr, int self) {
        if (!gr.wants_grad(x)) return;
        const auto& go = gr.nodes[static_cast<size_t>(self)].grad;
        auto& gx = gr.grad_of(x);
        for (size_t i = 0; i < go.data.size(); ++i) gx.data[i] += go.data[i] * static_cast<F>(c);
    });
}

// multiply a tensor by a scalar node (e.g. the learnable logit scale)
template <typename F>
int scale_by(Graph<F>& g, int x, int s) {
    require<F>(g.value(s).numel() == 1, "scale_by", "scale must be a scalar node");
    const F sv = g.value(s).data[0];
    TensorT<F> out = g.value(x);
    for (auto& v : out.data) v *= sv;
    return g.emit("scale_by", {x, s}, std::move(out), [x, s, sv](Graph<F>& gr, int self) {
        const auto& go = gr.nodes[static_cast<size_t>(self)].grad;
        const auto& xv = gr.value(x);
        if (gr.wants_grad(x)) {
            auto& gx = gr.grad_of(x);
            for (size_t i = 0; i < go.data.size(); ++i) gx.data[i] += go.data[i] * sv;
        }
        if (gr.wants_grad(s)) {
            F acc = 0;
            for (size_t i = 0; i < go.data.size(); ++i) acc += go.data[i] * xv.data[i];
            gr.grad_of(s).data[0] += acc;
        }
    });
}

template <typename F>
int slice_rows(Graph<F>& g, int x, int64_t r0, int64_t r1) {
    const auto& xv = g.value(x);
    require<F>(xv.shape.size() == 2 && 0 <= r0 && r0 < r1 && r1 <= xv.shape[0], "slice",
               "row range [" + std::to_string(r0) + "," + std::to_string(r1) + ") of " +
                   shape_str(xv.shape));
    const int64_t c = xv.shape[1];
    TensorT<F> out({r1 - r0, c});
    std::copy(xv.data.begin() + r0 * c, xv.data.begin() + r1 * c, out.data.begin());
    return g.emit("slice", {x}, std::move(out), [x, r0, c](Graph<F>& gr, int self) {
        if (!gr.wants_grad(x)) return;
        const auto& go = gr.nodes[static_cast<size_t>(self)].grad;
        auto& gx = gr.grad_of(x);
        for (size_t i = 0; i < go.data.size(); ++i) gx.data[static_cast<size_t>(r0 * c) + i] += go.data[i];
    });
}

template <typename F>
int slice_cols(Graph<F>& g, int x, int64_t c0, int64_t c1) {
    const auto& xv = g.value(x);
    require<F>(xv.shape.size() == 2 && 0 <= c0 && c0 < c1 && c1 <= xv.shape[1], "slice",
               "col range [" + std::to_string(c0) + "," + std::to_string(c1) + ") of " +
                   shape_str(xv.shape));
    const int64_t r = xv.shape[0], c = xv.shape[1], w = c1 - c0;
    TensorT<F> out({r, w});
    for (int64_t i = 0; i < r; ++i)
        std::copy(xv.data.begin() + i * c + c0, xv.data.begin() + i * c + c1,
                  out.data.begin() + i * w);
    return g.emit("slice", {x}, std::move(out), [x, c0, r, c, w](Graph<F>& gr, int self) {
        if (!gr.wants_grad(x)) return;
        const auto& go = gr.nodes[static_cast<size_t>(self)].grad;
        auto& gx = gr.grad_of(x);
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < w; ++j) gx.data[static_cast<size_t>(i * c + c0 + j)] += go.data[static_cast<size_t>(i * w + j)];
    });
}

template <typename F>
int concat_rows(Graph<F>& g, int a, int b) {
    const auto& av = g.value(a);
    const auto& bv = g.value(b);
    require<F>(av.shape.size() == 2 && bv.shape.size() == 2 && av.shape[1] == bv.shape[1],
               "concat", "shapes " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    TensorT<F> out({av.shape[0] + bv.shape[0], av.shape[1]});
    std::copy(av.data.begin(), av.data.end(), out.data.begin());
    std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + av.numel());
    const int64_t na = av.numel();
    return g.emit("concat", {a, b}, std::move(out), [a, b, na](Graph<F>& gr, int self) {
        const auto& go = gr.nodes[static_cast<size_t>(self)].grad;
        if (gr.wants_grad(a)) {
            auto& ga = gr.grad_of(a);
            for (int64_t i = 0; i < na; ++i) ga.data[static_cast<size_t>(i)] += go.data[static_cast<size_t>(i)];
        }
        if (gr.wants_grad(b)) {
            auto& gb = gr.grad_of(b);
            for (size_t i = static_cast<size_t>(na); i < go.data.size(); ++i)
                gb.data[i - static_cast<size_t>(na)] += go.data[i];
        }
    });
}

template <typename F>
int softmax(Graph<F>& g, int x) {
    const auto& xv = g.value(x);
    require<F>(xv.shape.size() == 2, "softmax", "rank-2 input required");
    const int64_t r = xv.shape[0], c = xv.shape[1];
    TensorT<F> out({r, c});
    for (int64_t i = 0; i < r; ++i) {
        const F* row = xv.data.data() + i * c;
        F* orow = out.data.data() + i * c;
        F mx = row[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        F sum = 0;
        for (int64_t j = 0; j < c; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        for (int64_t j = 0; j < c; ++j) orow[j] /= sum;
    }
    return g.emit("softmax", {x}, std::move(out), [x, r, c](Graph<F>& gr, int self) {
        if (!gr.wants_grad(x)) return;
        const auto& go = gr.nodes[static_cast<size_t>(self)].grad;
        const auto& y = gr.value(self);
        auto& gx = gr.grad_of(x);
        for (int64_t i = 0; i < r; ++i) {
            const F* yr = y.data.data() + i * c;
            const F* gr_ = go.data.data() + i * c;
            F dot = 0;
            for (int64_t j = 0; j < c; ++j) dot += yr[j] * gr_[j];
            F* gxr = gx.data.data() + i * c;
            for (int64_t j = 0; j < c; ++j) gxr[j] += yr[j] * (gr_[j] - dot);
        }
    });
}

template <typename F>
int layer_norm(Graph<F>& g, int x, int gain, int bias, double eps = 1e-5) {
    const auto& xv = g.value(x);
    const auto& gv = g.value(gain);
    require<F>(xv.shape.size() == 2 && gv.numel() == xv.shape[1] &&
                   g.value(bias).numel() == xv.shape[1],
               "layer_norm", "x " + shape_str(xv.shape) + ", gain " + shape_str(gv.shape));
    const int64_t r = xv.shape[0], c = xv.shape[1];
    TensorT<F> out({r, c});
    TensorT<F> xhat({r, c});
    TensorT<F> inv({r});
    const auto& bv = g.value(bias);
    for (int64_t i = 0; i < r; ++i) {
        const F* row = xv.data.data() + i * c;
        F mu = 0;
        for (int64_t j = 0; j < c; ++j) mu += row[j];
        mu /= static_cast<F>(c);
        F var = 0;
        for (int64_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<F>(c);
        const F iv = F(1) / std::sqrt(var + static_cast<F>(eps));
        inv.data[static_cast<size_t>(i)] = iv;
        for (int64_t j = 0; j < c; ++j) {
            const F xh = (row[j] - mu) * iv;
            xhat.data[static_cast<size_t>(i * c + j)] = xh;
            out.data[static_cast<size_t>(i * c + j)] = xh * gv.data[static_cast<size_t>(j)] + bv.data[static_cast<size_t>(j)];
        }
    }
    return g.emit(
        "layer_norm", {x, gain, bias}, std::move(out),
        [x, gain, bias, r, c](Graph<F>& gr, int self) {
            const auto& go = gr.nodes[static_cast<size_t>(self)].grad;
            const auto& xh = gr.nodes[static_cast<size_t>(self)].saved[0];
            const auto& inv = gr.nodes[static_cast<size_t>(self)].saved[1];
            const auto& gv = gr.value(gain);
            for (int64_t i = 0; i < r; ++i) {
                const F* gor = go.data.data() + i * c;
                const F* xhr = xh.data.data() + i * c;
                if (gr.wants_grad(gain)) {
                    auto& gg = gr.grad_of(gain);
                    for (int64_t j = 0; j < c; ++j) gg.data[static_cast<size_t>(j)] += gor[j] * xhr[j];
                }
                if (gr.wants_grad(bias)) {
                    auto& gb = gr.grad_of(bias);
                    for (int64_t j = 0; j < c; ++j) gb.data[static_cast<size_t>(j)] += gor[j];
                }
                if (gr.wants_grad(x)) {
                    F m1 = 0, m2 = 0;
                    for (int64_t j = 0; j < c; ++j) {
                        const F d = gor[j] * gv.data[static_cast<size_t>(j)];
                        m1 += d;
                        m2 += d * xhr[j];
                    }
                    m1 /= static_cast<F>(c);
                    m2 /= static_cast<F>(c);
                    auto& gx = gr.grad_of(x);
                    F* gxr = gx.data.data() + i * c;
                    const F iv = inv.data[static_cast<size_t>(i)];
                    for (int64_t j = 0; j < c; ++j) {
                        const F d = gor[j] * gv.data[static_cast<size_t>(j)];
                        gxr[j] += iv * (d - m1 - xhr[j] * m2);
                    }
                }
            }
        },
        {std::move(xhat), std::move(inv)});
}

template <typename F>
int gelu(Graph<F>& g, int x) {
    const auto& xv = g.value(x);
    TensorT<F> out(xv.shape);
    TensorT<F> deriv(xv.shape);  // cdf + x*pdf, cached for backward
    constexpr double inv_sqrt2 = 0.7071067811865476;
    constexpr double inv_sqrt2pi = 0.3989422804014327;
    for (size_t i = 0; i < xv.data.size(); ++i) {
        const double v = static_cast<double>(xv.data[i]);
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
        out.data[i] = static_cast<F>(v * cdf);
        deriv.data[i] = static_cast<F>(cdf + v * pdf);
    }
    return g.emit(
        "gelu", {x}, std::move(out),
        [x](Graph<F>& gr, int self) {
            if (!gr.wants_grad(x)) return;
            const auto& go = gr.nodes[static_cast<size_t>(self)].grad;
            const auto& deriv2 = gr.nodes[static_cast<size_t>(self)].saved[0];
            auto& gx = gr.grad_of(x);
            for (size_t i = 0; i < go.data.size(); ++i) gx.data[i] += go.data[i] * deriv2.data[i];
        },
        {std::move(deriv)});
}

// rows scaled to unit L2 norm; norms below 1e-12 are clamped
template <typename F>
int l2_normalize(Graph<F>& g, int x) {
    const auto& xv = g.value(x);
    require<F>(xv.shape.size() == 2, "l2_normalize", "rank-2 input required");
    const int64_t r = xv.shape[0], c = xv.shape[1];
    TensorT<F> out({r, c});
    TensorT<F> norms({r});
    for (int64_t i = 0; i < r; ++i) {
        const F* row = xv.data.data() + i * c;
        F s = 0;
        for (int64_t j = 0; j < c; ++j) s += row[j] * row[j];
        const F n = std::max(std::sqrt(s), static_cast<F>(1e-12));
        norms.data[static_cast<size_t>(i)] = n;
        for (int64_t j = 0; j < c; ++j) out.data[static_cast<size_t>(i * c + j)] = row[j] / n;
    }
    return g.emit(
        "l2_normalize", {x}, std::move(out),
        [x, r, c](Graph<F>& gr, int self) {
            if (!gr.wants_grad(x)) return;
            const auto& go = gr.nodes[static_cast<size_t>(self)].grad;
            const auto& y = gr.value(self);
            const auto& norms = gr.nodes[static_cast<size_t>(self)].saved[0];
            auto& gx = gr.grad_of(x);
            for (int64_t i = 0; i < r; ++i) {
                const F* yr = y.data.data() + i * c;
                const F* gor = go.data.data() + i * c;
                F dot = 0;
                for (int64_t j = 0; j < c; ++j) dot += yr[j] * gor[j];
                const F n = norms.data[static_cast<size_t>(i)];
                F* gxr = gx.data.data() + i * c;
                for (int64_t j = 0; j < c; ++j) gxr[j] += (gor[j] - yr[j] * dot) / n;
            }
        },
        {std::move(norms)});
}

template <typename F>
int mean(Graph<F>& g, int x) {
    const auto& xv = g.value(x);
    F s = 0;
    for (F v : xv.data) s += v;
    const int64_t n = xv.numel();
    TensorT<F> out({1, 1});
    out.data[0] = s / static_cast<F>(n);
    return g.emit("mean", {x}, std::move(out), [x, n](Graph<F>& gr, int self) {
        if (!gr.wants_grad(x)) return;
        const F go = gr.nodes[static_cast<size_t>(self)].grad.data[0] / static_cast<F>(n);
        auto& gx = gr.grad_of(x);
        for (auto& v : gx.data) v += go;
    });
}

template <typename F>
int sum_of_squares(Graph<F>& g, int x) {
    const auto& xv = g.value(x);
    F s = 0;
    for (F v : xv.data) s += v * v;
    TensorT<F> out({1, 1});
    out.data[0] = s;
    return g.emit("sum_of_squares", {x}, std::move(out), [x](Graph<F>& gr, int self) {
        if (!gr.wants_grad(x)) return;
        const F go = gr.nodes[static_cast<size_t>(self)].grad.data[0];
        const auto& xv2 = gr.value(x);
        auto& gx = gr.grad_of(x);
        for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += F(2) * go * xv2.data[i];
    });
}

// Multi-head scaled dot-product attention over a packed qkv activation.
// qkv is (B*seq, 3*width) with columns [Q | K | V]; output is (B*seq, width).
template <typename F>
int attention(Graph<F>& g, int qkv, int64_t heads, int64_t seq) {
    const auto& qv = g.value(qkv);
    require<F>(qv.shape.size() == 2 && qv.shape[1] % 3 == 0, "attention",
               "qkv shape " + shape_str(qv.shape));
    const int64_t width = qv.shape[1] / 3;
    require<F>(width % heads == 0 && qv.shape[0] % seq == 0, "attention",
               "width " + std::to_string(width) + " heads " + std::to_string(heads) +
                   " rows " + std::to_string(qv.shape[0]) + " seq " + std::to_string(seq));
    const int64_t batch = qv.shape[0] / seq;
    const int64_t hd = width / heads;
    const F scale = static_cast<F>(1.0 / std::sqrt(static_cast<double>(hd)));
    TensorT<F> out({batch * seq, width});
    TensorT<F> probs({batch * heads * seq, seq});
    std::vector<F> srow(static_cast<size_t>(seq));
    for (int64_t b = 0; b < batch; ++b) {
        const F* base = qv.data.data() + b * seq * 3 * width;
        for (int64_t h = 0; h < heads; ++h) {
            const int64_t qo = h * hd, ko = width + h * hd, vo = 2 * width + h * hd;
            F* prob = probs.data.data() + (b * heads + h) * seq * seq;
            for (int64_t i = 0; i < seq; ++i) {
                const F* qrow = base + i * 3 * width + qo;
                F mx = -std::numeric_limits<F>::infinity();
                for (int64_t j = 0; j < seq; ++j) {
                    const F* krow = base + j * 3 * width + ko;
                    F s = 0;
                    for (int64_t d = 0; d < hd; ++d) s += qrow[d] * krow[d];
                    srow[static_cast<size_t>(j)] = s * scale;
                    mx = std::max(mx, srow[static_cast<size_t>(j)]);
                }
                F sum = 0;
                F* prow = prob + i * seq;
                for (int64_t j = 0; j < seq; ++j) {
                    prow[j] = std::exp(srow[static_cast<size_t>(j)] - mx);
                    sum += prow[j];
                }
                F* orow = out.data.data() + (b * seq + i) * width + h * hd;
                std::fill(orow, orow + hd, F(0));
                for (int64_t j = 0; j < seq; ++j) {
                    prow[j] /= sum;
                    const F* vrow = base + j * 3 * width + vo;
                    for (int64_t d = 0; d < hd; ++d) orow[d] += prow[j] * vrow[d];
                }
            }
        }
    }
    return g.emit(
        "attention", {qkv}, std::move(out),
        [qkv, heads, seq, width, hd, scale](Graph<F>& gr, int self) {
            if (!gr.wants_grad(qkv)) return;
            const auto& go = gr.nodes[static_cast<size_t>(self)].grad;
            const auto& probs = gr.nodes[static_cast<size_t>(self)].saved[0];
            const auto& qv2 = gr.value(qkv);
            auto& gq = gr.grad_of(qkv);
            const int64_t batch = qv2.shape[0] / seq;
            std::vector<F> dp(static_cast<size_t>(seq));
            for (int64_t b = 0; b < batch; ++b) {
                const F* base = qv2.data.data() + b * seq * 3 * width;
                F* gbase = gq.data.data() + b * seq * 3 * width;
                for (int64_t h = 0; h < heads; ++h) {
                    const int64_t qo = h * hd, ko = width + h * hd, vo = 2 * width + h * hd;
                    const F* prob = probs.data.data() + (b * heads + h) * seq * seq;
                    for (int64_t i = 0; i < seq; ++i) {
                        const F* gorow = go.data.data() + (b * seq + i) * width + h * hd;
                        const F* prow = prob + i * seq;
                        // dV and dP
                        F pdot = 0;
                        for (int64_t j = 0; j < seq; ++j) {
                            const F* vrow = base + j * 3 * width + vo;
                            F s = 0;
                            for (int64_t d = 0; d < hd; ++d) s += gorow[d] * vrow[d];
                            dp[static_cast<size_t>(j)] = s;
                            pdot += s * prow[j];
                            F* gvrow = gbase + j * 3 * width + vo;
                            for (int64_t d = 0; d < hd; ++d) gvrow[d] += prow[j] * gorow[d];
                        }
                        // dS = P o (dP - sum(dP o P)), then dQ, dK
                        const F* qrow = base + i * 3 * width + qo;
                        F* gqrow = gbase + i * 3 * width + qo;
                        for (int64_t j = 0; j < seq; ++j) {
                            const F ds = prow[j] * (dp[static_cast<size_t>(j)] - pdot) * scale;
                            const F* krow = base + j * 3 * width + ko;
                            F* gkrow = gbase + j * 3 * width + ko;
                            for (int64_t d = 0; d < hd; ++d) {
                                gqrow[d] += ds * krow[d];
                                gkrow[d] += ds * qrow[d];
                            }
                        }
                    }
                }
            }
        },
        {std::move(probs)});
}

// Embedding lookup: out[r] = table[ids[r]]. Backward scatter-adds in row order.
template <typename F>
int gather_rows(Graph<F>& g, int table, std::vector<int64_t> ids) {
    const auto& tv = g.value(table);
    require<F>(tv.shape.size() == 2, "gather_rows", "rank-2 table required");
    const int64_t v = tv.shape[0], c = tv.shape[1];
    for (int64_t id : ids)
        if (id < 0 || id >= v)
            throw ContractError("gather_rows: index " + std::to_string(id) +
                                " out of range [0," + std::to_string(v) + ")");
    TensorT<F> out({static_cast<int64_t>(ids.size()), c});
    for (size_t r = 0; r < ids.size(); ++r)
        std::copy(tv.data.begin() + ids[r] * c, tv.data.begin() + (ids[r] + 1) * c,
                  out.data.begin() + static_cast<int64_t>(r) * c);
    return g.emit("gather_rows", {table}, std::move(out),
                  [table, ids = std::move(ids), c](Graph<F>& gr, int self) {
                      if (!gr.wants_grad(table)) return;
                      const auto& go = gr.nodes[static_cast<size_t>(self)].grad;
                      auto& gt = gr.grad_of(table);
                      for (size_t r = 0; r < ids.size(); ++r)
                          for (int64_t j = 0; j < c; ++j)
                              gt.data[static_cast<size_t>(ids[r] * c + j)] +=
                                  go.data[static_cast<size_t>(static_cast<int64_t>(r) * c + j)];
                  });
}

// x is (B*seq, C); pos (seq, C) is added to every sample's rows
template <typename F>
int add_position(Graph<F>& g, int x, int pos, int64_t seq) {
    const auto& xv = g.value(x);
    const auto& pv = g.value(pos);
    require<F>(xv.shape.size() == 2 && pv.shape.size() == 2 && pv.shape[0] == seq &&
                   pv.shape[1] == xv.shape[1] && xv.shape[0] % seq == 0,
               "add_position", "x " + shape_str(xv.shape) + ", pos " + shape_str(pv.shape));
    const int64_t c = xv.shape[1], rows = xv.shape[0];
    TensorT<F> out = xv;
    for (int64_t r = 0; r < rows; ++r) {
        const F* prow = pv.data.data() + (r % seq) * c;
        F* orow = out.data.data() + r * c;
        for (int64_t j = 0; j < c; ++j) orow[j] += prow[j];
    }
    return g.emit("add_position", {x, pos}, std::move(out),
                  [x, pos, seq, c, rows](Graph<F>& gr, int self) {
                      const auto& go = gr.nodes[static_cast<size_t>(self)].grad;
                      if (gr.wants_grad(x)) {
                          auto& gx = gr.grad_of(x);
                          for (size_t i = 0; i < go.data.size(); ++i) gx.data[i] += go.data[i];
                      }
                      if (gr.wants_grad(pos)) {
                          auto& gp = gr.grad_of(pos);
                          for (int64_t r = 0; r < rows; ++r) {
                              F* prow = gp.data.data() + (r % seq) * c;
                              const F* gorow = go.data.data() + r * c;
                              for (int64_t j = 0; j < c; ++j) prow[j] += gorow[j];
                          }
                      }
                  });
}

// Inserts a copy of `row` (the class token) before each sample's `seq` rows.
template <typename F>
int prepend_row(Graph<F>& g, int x, int row, int64_t seq) {
    const auto& xv = g.value(x);
    const auto& rv = g.value(row);
    require<F>(xv.shape.size() == 2 && rv.numel() == xv.shape[1] && xv.shape[0] % seq == 0,
               "prepend_row", "x " + shape_str(xv.shape) + ", row " + shape_str(rv.shape));
    const int64_t c = xv.shape[1], batch = xv.shape[0] / seq;
    TensorT<F> out({batch * (seq + 1), c});
    for (int64_t b = 0; b < batch; ++b) {
        std::copy(rv.data.begin(), rv.data.end(), out.data.begin() + b * (seq + 1) * c);
        std::copy(xv.data.begin() + b * seq * c, xv.data.begin() + (b + 1) * seq * c,
                  out.data.begin() + (b * (seq + 1) + 1) * c);
    }
    return g.emit("prepend_row", {x, row}, std::move(out),
                  [x, row, seq, c, batch](Graph<F>& gr, int self) {
                      const auto& go = gr.nodes[static_cast<size_t>(self)].grad;
                      if (gr.wants_grad(row)) {
                          auto& grw = gr.grad_of(row);
                          for (int64_t b = 0; b < batch; ++b)
                              for (int64_t j = 0; j < c; ++j)
                                  grw.data[static_cast<size_t>(j)] += go.data[static_cast<size_t>(b * (seq + 1) * c + j)];
                      }
                      if (gr.wants_grad(x)) {
                          auto& gx = gr.grad_of(x);
                          for (int64_t b = 0; b < batch; ++b)
                              for (int64_t i = 0; i < seq * c; ++i)
                                  gx.data[static_cast<size_t>(b * seq * c + i)] +=
                                      go.data[static_cast<size_t>((b * (seq + 1) + 1) * c + i)];
                      }
                  });
}

// Picks rows offset, offset+stride, ... (pooling one position per sample).
template <typename F>
int take_rows_strided(Graph<F>& g, int x, int64_t stride, int64_t offset) {
    const auto& xv = g.value(x);
    require<F>(xv.shape.size() == 2 && stride >= 1 && offset >= 0 && offset < stride &&
                   xv.shape[0] % stride == 0,
               "take_rows_strided", "x " + shape_str(xv.shape) + ", stride " +
                   std::to_string(stride) + ", offset " + std::to_string(offset));
    const int64_t c = xv.shape[1], n = xv.shape[0] / stride;
    TensorT<F> out({n, c});
    for (int64_t i = 0; i < n; ++i)
        std::copy(xv.data.begin() + (i * stride + offset) * c,
                  xv.data.begin() + (i * stride + offset + 1) * c, out.data.begin() + i * c);
    return g.emit("take_rows_strided", {x}, std::move(out),
                  [x, stride, offset, c, n](Graph<F>& gr, int self) {
                      if (!gr.wants_grad(x)) return;
                      const auto& go = gr.nodes[static_cast<size_t>(self)].grad;
                      auto& gx = gr.grad_of(x);
                      for (int64_t i = 0; i < n; ++i)
                          for (int64_t j = 0; j < c; ++j)
                              gx.data[static_cast<size_t>((i * stride + offset) * c + j)] +=
                                  go.data[static_cast<size_t>(i * c + j)];
                  });
}

// Per-row negative log softmax at one target column: out[r] = lse(row) - row[t].
template <typename F>
int nll_rows(Graph<F>& g, int logits, std::vector<int64_t> targets) {
    const auto& lv = g.value(logits);
    require<F>(lv.shape.size() == 2 && static_cast<int64_t>(targets.size()) == lv.shape[0],
               "nll_rows", "logits " + shape_str(lv.shape) + ", " +
                   std::to_string(targets.size()) + " targets");
    const int64_t r = lv.shape[0], c = lv.shape[1];
    for (int64_t t : targets)
        if (t < 0 || t >= c) throw ContractError("nll_rows: target column out of range");
    TensorT<F> out({r, 1});
    TensorT<F> probs({r, c});
    for (int64_t i = 0; i < r; ++i) {
        const F* row = lv.data.data() + i * c;
        F mx = row[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        F sum = 0;
        F* prow = probs.data.data() + i * c;
        for (int64_t j = 0; j < c; ++j) {
            prow[j] = std::exp(row[j] - mx);
            sum += prow[j];
        }
        for (int64_t j = 0; j < c; ++j) prow[j] /= sum;
        out.data[static_cast<size_t>(i)] = std::log(sum) + mx - row[targets[static_cast<size_t>(i)]];
    }
    return g.emit(
        "nll_rows", {logits}, std::move(out),
        [logits, targets = std::move(targets), r, c](Graph<F>& gr, int self) {
            if (!gr.wants_grad(logits)) return;
            const auto& go = gr.nodes[static_cast<size_t>(self)].grad;
            const auto& probs = gr.nodes[static_cast<size_t>(self)].saved[0];
            auto& gl = gr.grad_of(logits);
            for (int64_t i = 0; i < r; ++i) {
                const F gi = go.data[static_cast<size_t>(i)];
                const F* prow = probs.data.data() + i * c;
                F* grow = gl.data.data() + i * c;
                for (int64_t j = 0; j < c; ++j) grow[j] += gi * prow[j];
                grow[targets[static_cast<size_t>(i)]] -= gi;
            }
        },
        {std::move(probs)});
}

// Per-row NLL averaged over a group of positive columns: row r's positives
// are columns [r*group, (r+1)*group). Requires cols == rows * group.
template <typename F>
int nll_group_rows(Graph<F>& g, int logits, int64_t group) {
    const auto& lv = g.value(logits);
    require<F>(lv.shape.size() == 2 && group >= 1 && lv.shape[1] == lv.shape[0] * group,
               "nll_group_rows", "logits " + shape_str(lv.shape) + ", group " +
                   std::to_string(group));
    const int64_t r = lv.shape[0], c = lv.shape[1];
    TensorT<F> out({r, 1});
    TensorT<F> probs({r, c});
    for (int64_t i = 0; i < r; ++i) {
        const F* row = lv.data.data() + i * c;
        F mx = row[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        F sum = 0;
        F* prow = probs.data.data() + i * c;
        for (int64_t j = 0; j < c; ++j) {
            prow[j] = std::exp(row[j] - mx);
            sum += prow[j];
        }
        F pos = 0;
        for (int64_t j = 0; j < group; ++j) pos += row[i * group + j];
        for (int64_t j = 0; j < c; ++j) prow[j] /= sum;
        out.data[static_cast<size_t>(i)] = std::log(sum) + mx - pos / static_cast<F>(group);
    }
    return g.emit(
        "nll_group_rows", {logits}, std::move(out),
        [logits, group, r, c](Graph<F>& gr, int self) {
            if (!gr.wants_grad(logits)) return;
            const auto& go = gr.nodes[static_cast<size_t>(self)].grad;
            const auto& probs = gr.nodes[static_cast<size_t>(self)].saved[0];
            auto& gl = gr.grad_of(logits);
            for (int64_t i = 0; i < r; ++i) {
                const F gi = go.data[static_cast<size_t>(i)];
                const F* prow = probs.data.data() + i * c;
                F* grow = gl.data.data() + i * c;
                for (int64_t j = 0; j < c; ++j) grow[j] += gi * prow[j];
                for (int64_t j = 0; j < group; ++j)
                    grow[i * group + j] -= gi / static_cast<F>(group);
            }
        },
        {std::move(probs)});
}

// exp of a scalar node, clamped above: the CLIP logit-scale nonlinearity
template <typename F>
int exp_clamped(Graph<F>& g, int s, double cap) {
    require<F>(g.value(s).numel() == 1, "exp_clamped", "scalar input required");
    const F ev = std::exp(g.value(s).data[0]);
    const bool clamped = static_cast<double>(ev) > cap;
    TensorT<F> out({1, 1});
    out.data[0] = clamped ? static_cast<F>(cap) : ev;
    return g.emit("exp_clamped", {s}, std::move(out), [s, ev, clamped](Graph<F>& gr, int self) {
        if (!gr.wants_grad(s) || clamped) return;
        gr.grad_of(s).data[0] += gr.nodes[static_cast<size_t>(self)].grad.data[0] * ev;
    });
}

}  // namespace ops

// ---------------------------------------------------------------------------
// Gradient checking against central finite differences (64-bit only).
// `build` receives the graph plus the leaf ids for `points` (named x0, x1, ...)
// and returns the scalar loss node. Result is the max over coordinates of
// |autodiff - fd| / max(|autodiff|, 1e-8).

template <typename Builder>
double grad_check(std::vector<TensorT<double>> points, Builder&& build, double h = 1e-5) {
    auto eval = [&](const std::vector<TensorT<double>>& pts) {
        Graph<double> g;
        std::vector<int> ids;
        for (size_t i = 0; i < pts.size(); ++i) ids.push_back(g.leaf("x" + std::to_string(i), pts[i]));
        return g.scalar(build(g, ids));
    };

    Graph<double> g;
    std::vector<int> ids;
    for (size_t i = 0; i < points.size(); ++i)
        ids.push_back(g.leaf("x" + std::to_string(i), points[i]));
    auto grads = g.backward(build(g, ids));

    double worst = 0.0;
    for (size_t i = 0; i < points.size(); ++i) {
        const auto& ad = grads.at("x" + std::to_string(i));
        for (size_t j = 0; j < points[i].data.size(); ++j) {
            auto perturbed = points;
            perturbed[i].data[j] += h;
            const double fp = eval(perturbed);
            perturbed[i].data[j] -= 2 * h;
            const double fm = eval(perturbed);
            const double fd = (fp - fm) / (2 * h);
            const double err = std::fabs(ad.data[j] - fd) / std::max(std::fabs(ad.data[j]), 1e-8);
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace comchain
