#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace specmap::ad {

template <typename Real>
struct Tensor {
    std::vector<int> shape;
    std::vector<Real> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(size_t(count(shape)), Real(0)) {}
    Tensor(std::vector<int> s, std::vector<Real> d) : shape(std::move(s)), data(std::move(d)) {
        if (int64_t(data.size()) != count(shape))
            throw std::invalid_argument("Tensor: data size does not match shape");
    }

    static int64_t count(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    int64_t size() const { return int64_t(data.size()); }
    int rows() const { return shape.size() == 2 ? shape[0] : throw_2d(); }
    int cols() const { return shape.size() == 2 ? shape[1] : throw_2d(); }
    static int throw_2d() { throw std::invalid_argument("Tensor: expected 2-D"); }

    static Tensor scalar(Real v) { return Tensor({1}, {v}); }
};

using NodeId = int;

// Define-by-run graph with re-runnable forward closures. Values are computed
// eagerly as nodes are added; recompute() re-executes every node in order
// (used by finite-difference checks after poking leaf values) and
// backward(loss) runs one reverse sweep accumulating gradients.
template <typename Real>
class Graph {
  public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    NodeId value(Tensor<Real> t, bool needs_grad = true) {
        return add_node(std::move(t), needs_grad, {}, nullptr, nullptr);
    }

    NodeId constant(Tensor<Real> t) { return value(std::move(t), false); }

    const Tensor<Real>& val(NodeId id) const { return nodes_[size_t(id)].value; }
    const Tensor<Real>& grad(NodeId id) const { return nodes_[size_t(id)].grad; }
    bool needs_grad(NodeId id) const { return nodes_[size_t(id)].needs_grad; }
    size_t node_count() const { return nodes_.size(); }

    void set_leaf(NodeId id, const std::vector<Real>& data) {
        Node& n = nodes_[size_t(id)];
        if (n.forward) throw std::logic_error("Graph::set_leaf: node is not a leaf");
        if (data.size() != n.value.data.size())
            throw std::invalid_argument("Graph::set_leaf: size mismatch");
        n.value.data = data;
    }

    void recompute() {
        for (Node& n : nodes_)
            if (n.forward) n.forward();
    }

    // Reverse sweep from a scalar loss. Gradients of all needs_grad nodes are
    // (re)accumulated from scratch on every call.
    void backward(NodeId loss) {
        if (nodes_.empty()) throw std::logic_error("Graph::backward: empty graph");
        if (val(loss).size() != 1)
            throw std::logic_error("Graph::backward: loss must be scalar");
        for (Node& n : nodes_) std::fill(n.grad.data.begin(), n.grad.data.end(), Real(0));
        nodes_[size_t(loss)].grad.data[0] = Real(1);
        for (size_t i = nodes_.size(); i-- > 0;) {
            Node& n = nodes_[i];
            if (n.needs_grad && n.backward) n.backward();
        }
    }

    // ---- ops -----------------------------------------------------------

    NodeId add(NodeId a, NodeId b) {
        require_same_shape(a, b, "add");
        Tensor<Real> out(val(a).shape);
        const NodeId id = add_node(std::move(out), needs_grad(a) || needs_grad(b), {a, b},
                                   [this, a, b](Node& n) {
                                       const auto& x = val(a).data;
                                       const auto& y = val(b).data;
                                       for (size_t i = 0; i < x.size(); ++i)
                                           n.value.data[i] = x[i] + y[i];
                                   },
                                   [this, a, b](Node& n) {
                                       axpy(a, n.grad.data, Real(1));
                                       axpy(b, n.grad.data, Real(1));
                                   });
        return id;
    }

    NodeId sub(NodeId a, NodeId b) {
        require_same_shape(a, b, "sub");
        Tensor<Real> out(val(a).shape);
        return add_node(std::move(out), needs_grad(a) || needs_grad(b), {a, b},
                        [this, a, b](Node& n) {
                            const auto& x = val(a).data;
                            const auto& y = val(b).data;
                            for (size_t i = 0; i < x.size(); ++i) n.value.data[i] = x[i] - y[i];
                        },
                        [this, a, b](Node& n) {
                            axpy(a, n.grad.data, Real(1));
                            axpy(b, n.grad.data, Real(-1));
                        });
    }

    NodeId mul(NodeId a, NodeId b) {
        require_same_shape(a, b, "mul");
        Tensor<Real> out(val(a).shape);
        return add_node(std::move(out), needs_grad(a) || needs_grad(b), {a, b},
                        [this, a, b](Node& n) {
                            const auto& x = val(a).data;
                            const auto& y = val(b).data;
                            for (size_t i = 0; i < x.size(); ++i) n.value.data[i] = x[i] * y[i];
                        },
                        [this, a, b](Node& n) {
                            if (needs_grad(a)) {
                                auto& ga = mutable_grad(a);
                                const auto& y = val(b).data;
                                for (size_t i = 0; i < y.size(); ++i)
                                    ga[i] += n.grad.data[i] * y[i];
                            }
                            if (needs_grad(b)) {
                                auto& gb = mutable_grad(b);
                                const auto& x = val(a).data;
                                for (size_t i = 0; i < x.size(); ++i)
                                    gb[i] += n.grad.data[i] * x[i];
                            }
                        });
    }

    NodeId scale(NodeId a, Real c) {
        Tensor<Real> out(val(a).shape);
        return add_node(std::move(out), needs_grad(a), {a},
                        [this, a, c](Node& n) {
                            const auto& x = val(a).data;
                            for (size_t i = 0; i < x.size(); ++i) n.value.data[i] = c * x[i];
                        },
                        [this, a, c](Node& n) { axpy(a, n.grad.data, c); });
    }

    // a: [m, n], bias: [n]
    NodeId add_bias(NodeId a, NodeId bias) {
        const auto& as = val(a).shape;
        const auto& bs = val(bias).shape;
        if (as.size() != 2 || bs.size() != 1 || bs[0] != as[1])
            throw std::invalid_argument("add_bias: want [m,n] plus [n]");
        Tensor<Real> out(as);
        return add_node(std::move(out), needs_grad(a) || needs_grad(bias), {a, bias},
                        [this, a, bias](Node& n) {
                            const int m = val(a).shape[0], c = val(a).shape[1];
                            const auto& x = val(a).data;
                            const auto& b = val(bias).data;
                            for (int i = 0; i < m; ++i)
                                for (int j = 0; j < c; ++j)
                                    n.value.data[size_t(i * c + j)] = x[size_t(i * c + j)] + b[size_t(j)];
                        },
                        [this, a, bias](Node& n) {
                            const int m = val(a).shape[0], c = val(a).shape[1];
                            axpy(a, n.grad.data, Real(1));
                            if (needs_grad(bias)) {
                                auto& gb = mutable_grad(bias);
                                for (int i = 0; i < m; ++i)
                                    for (int j = 0; j < c; ++j)
                                        gb[size_t(j)] += n.grad.data[size_t(i * c + j)];
                            }
                        });
    }

    // [m,k] x [k,n] -> [m,n]
    NodeId matmul(NodeId a, NodeId b) {
        const auto& as = val(a).shape;
        const auto& bs = val(b).shape;
        if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0])
            throw std::invalid_argument("matmul: inner dimensions differ");
        Tensor<Real> out({as[0], bs[1]});
        return add_node(std::move(out), needs_grad(a) || needs_grad(b), {a, b},
                        [this, a, b](Node& n) {
                            const int m = val(a).shape[0], k = val(a).shape[1], p = val(b).shape[1];
                            const Real* A = val(a).data.data();
                            const Real* B = val(b).data.data();
                            Real* C = n.value.data.data();
                            std::fill(n.value.data.begin(), n.value.data.end(), Real(0));
                            for (int i = 0; i < m; ++i)
                                for (int l = 0; l < k; ++l) {
                                    const Real av = A[i * k + l];
                                    const Real* Br = B + l * p;
                                    Real* Cr = C + i * p;
                                    for (int j = 0; j < p; ++j) Cr[j] += av * Br[j];
                                }
                        },
                        [this, a, b](Node& n) {
                            const int m = val(a).shape[0], k = val(a).shape[1], p = val(b).shape[1];
                            const Real* G = n.grad.data.data();
                            if (needs_grad(a)) {
                                Real* GA = mutable_grad(a).data();
                                const Real* B = val(b).data.data();
                                for (int i = 0; i < m; ++i)
                                    for (int l = 0; l < k; ++l) {
                                        Real acc = Real(0);
                                        const Real* Gr = G + i * p;
                                        const Real* Br = B + l * p;
                                        for (int j = 0; j < p; ++j) acc += Gr[j] * Br[j];
                                        GA[i * k + l] += acc;
                                    }
                            }
                            if (needs_grad(b)) {
                                Real* GB = mutable_grad(b).data();
                                const Real* A = val(a).data.data();
                                for (int l = 0; l < k; ++l)
                                    for (int i = 0; i < m; ++i) {
                                        const Real av = A[i * k + l];
                                        const Real* Gr = G + i * p;
                                        Real* GBr = GB + l * p;
                                        for (int j = 0; j < p; ++j) GBr[j] += av * Gr[j];
                                    }
                            }
                        });
    }

    NodeId relu(NodeId a) {
        Tensor<Real> out(val(a).shape);
        return add_node(std::move(out), needs_grad(a), {a},
                        [this, a](Node& n) {
                            const auto& x = val(a).data;
                            for (size_t i = 0; i < x.size(); ++i)
                                n.value.data[i] = x[i] > Real(0) ? x[i] : Real(0);
                        },
                        [this, a](Node& n) {
                            auto& g = mutable_grad(a);
                            const auto& x = val(a).data;
                            for (size_t i = 0; i < x.size(); ++i)
                                if (x[i] > Real(0)) g[i] += n.grad.data[i];
                        });
    }

    // max-stabilized softmax along `axis`
    NodeId softmax(NodeId a, int axis) {
        const auto& s = val(a).shape;
        if (axis < 0 || axis >= int(s.size())) throw std::invalid_argument("softmax: bad axis");
        Tensor<Real> out(s);
        const auto [outer, k, inner] = lane_split(s, axis);
        return add_node(
            std::move(out), needs_grad(a), {a},
            [this, a, outer = outer, k = k, inner = inner](Node& n) {
                const auto& x = val(a).data;
                for (int64_t o = 0; o < outer; ++o)
                    for (int64_t in = 0; in < inner; ++in) {
                        const int64_t base = o * k * inner + in;
                        Real mx = x[size_t(base)];
                        for (int64_t j = 1; j < k; ++j)
                            mx = std::max(mx, x[size_t(base + j * inner)]);
                        Real denom = Real(0);
                        for (int64_t j = 0; j < k; ++j) {
                            const Real e = std::exp(x[size_t(base + j * inner)] - mx);
                            n.value.data[size_t(base + j * inner)] = e;
                            denom += e;
                        }
                        for (int64_t j = 0; j < k; ++j) n.value.data[size_t(base + j * inner)] /= denom;
                    }
            },
            [this, a, outer = outer, k = k, inner = inner](Node& n) {
                auto& g = mutable_grad(a);
                const auto& y = n.value.data;
                const auto& gy = n.grad.data;
                for (int64_t o = 0; o < outer; ++o)
                    for (int64_t in = 0; in < inner; ++in) {
                        const int64_t base = o * k * inner + in;
                        Real dot = Real(0);
                        for (int64_t j = 0; j < k; ++j)
                            dot += gy[size_t(base + j * inner)] * y[size_t(base + j * inner)];
                        for (int64_t j = 0; j < k; ++j)
                            g[size_t(base + j * inner)] +=
                                y[size_t(base + j * inner)] * (gy[size_t(base + j * inner)] - dot);
                    }
            });
    }

    NodeId concat(const std::vector<NodeId>& parts, int axis) {
        if (parts.empty()) throw std::invalid_argument("concat: no inputs");
        const auto& s0 = val(parts[0]).shape;
        if (axis < 0 || axis >= int(s0.size())) throw std::invalid_argument("concat: bad axis");
        std::vector<int> out_shape = s0;
        int total = 0;
        for (NodeId p : parts) {
            const auto& s = val(p).shape;
            if (s.size() != s0.size()) throw std::invalid_argument("concat: rank mismatch");
            for (size_t d = 0; d < s.size(); ++d)
                if (int(d) != axis && s[d] != s0[d])
                    throw std::invalid_argument("concat: shape mismatch off-axis");
            total += s[size_t(axis)];
        }
        out_shape[size_t(axis)] = total;
        bool ng = false;
        for (NodeId p : parts) ng = ng || needs_grad(p);

        const auto [outer, _, inner] = lane_split(s0, axis);
        Tensor<Real> out(out_shape);
        return add_node(
            std::move(out), ng, parts,
            [this, parts, outer = outer, inner = inner, total](Node& n) {
                int64_t off = 0;
                for (NodeId p : parts) {
                    const auto& x = val(p).data;
                    const int64_t k_in = int64_t(x.size()) / (outer * inner);
                    for (int64_t o = 0; o < outer; ++o)
                        for (int64_t j = 0; j < k_in; ++j)
                            for (int64_t in = 0; in < inner; ++in)
                                n.value.data[size_t((o * total + off + j) * inner + in)] =
                                    x[size_t((o * k_in + j) * inner + in)];
                    off += k_in;
                }
            },
            [this, parts, outer = outer, inner = inner, total](Node& n) {
                int64_t off = 0;
                for (NodeId p : parts) {
                    const int64_t k_in = val(p).size() / (outer * inner);
                    if (needs_grad(p)) {
                        auto& g = mutable_grad(p);
                        for (int64_t o = 0; o < outer; ++o)
                            for (int64_t j = 0; j < k_in; ++j)
                                for (int64_t in = 0; in < inner; ++in)
                                    g[size_t((o * k_in + j) * inner + in)] +=
                                        n.grad.data[size_t((o * total + off + j) * inner + in)];
                    }
                    off += k_in;
                }
            });
    }

    // table: [L, C]; out row i = table[rows[i]]
    NodeId gather_rows(NodeId table, std::vector<int> rows) {
        const auto& s = val(table).shape;
        if (s.size() != 2) throw std::invalid_argument("gather_rows: table must be 2-D");
        for (int r : rows)
            if (r < 0 || r >= s[0]) throw std::invalid_argument("gather_rows: row out of range");
        Tensor<Real> out({int(rows.size()), s[1]});
        auto rows_ptr = std::make_shared<std::vector<int>>(std::move(rows));
        return add_node(std::move(out), needs_grad(table), {table},
                        [this, table, rows_ptr](Node& n) {
                            const int c = val(table).shape[1];
                            const auto& t = val(table).data;
                            for (size_t i = 0; i < rows_ptr->size(); ++i)
                                std::copy_n(t.begin() + int64_t((*rows_ptr)[i]) * c, c,
                                            n.value.data.begin() + int64_t(i) * c);
                        },
                        [this, table, rows_ptr](Node& n) {
                            const int c = val(table).shape[1];
                            auto& g = mutable_grad(table);
                            for (size_t i = 0; i < rows_ptr->size(); ++i)
                                for (int j = 0; j < c; ++j)
                                    g[size_t((*rows_ptr)[i] * c + j)] +=
                                        n.grad.data[size_t(int64_t(i) * c + j)];
                        });
    }

    // a: [n, C], gate: [n]; row i scaled by gate[i]
    NodeId mul_rows(NodeId a, NodeId gate) {
        const auto& as = val(a).shape;
        const auto& gs = val(gate).shape;
        if (as.size() != 2 || gs.size() != 1 || gs[0] != as[0])
            throw std::invalid_argument("mul_rows: want [n,C] with gate [n]");
        Tensor<Real> out(as);
        return add_node(std::move(out), needs_grad(a) || needs_grad(gate), {a, gate},
                        [this, a, gate](Node& n) {
                            const int m = val(a).shape[0], c = val(a).shape[1];
                            const auto& x = val(a).data;
                            const auto& g = val(gate).data;
                            for (int i = 0; i < m; ++i)
                                for (int j = 0; j < c; ++j)
                                    n.value.data[size_t(i * c + j)] = x[size_t(i * c + j)] * g[size_t(i)];
                        },
                        [this, a, gate](Node& n) {
                            const int m = val(a).shape[0], c = val(a).shape[1];
                            if (needs_grad(a)) {
                                auto& ga = mutable_grad(a);
                                const auto& g = val(gate).data;
                                for (int i = 0; i < m; ++i)
                                    for (int j = 0; j < c; ++j)
                                        ga[size_t(i * c + j)] += n.grad.data[size_t(i * c + j)] * g[size_t(i)];
                            }
                            if (needs_grad(gate)) {
                                auto& gg = mutable_grad(gate);
                                const auto& x = val(a).data;
                                for (int i = 0; i < m; ++i) {
                                    Real acc = Real(0);
                                    for (int j = 0; j < c; ++j)
                                        acc += n.grad.data[size_t(i * c + j)] * x[size_t(i * c + j)];
                                    gg[size_t(i)] += acc;
                                }
                            }
                        });
    }

    // mean of squared entries -> scalar
    NodeId mean_sq(NodeId a) {
        Tensor<Real> out({1});
        return add_node(std::move(out), needs_grad(a), {a},
                        [this, a](Node& n) {
                            const auto& x = val(a).data;
                            Real acc = Real(0);
                            for (Real v : x) acc += v * v;
                            n.value.data[0] = acc / Real(x.size());
                        },
                        [this, a](Node& n) {
                            auto& g = mutable_grad(a);
                            const auto& x = val(a).data;
                            const Real c = Real(2) * n.grad.data[0] / Real(x.size());
                            for (size_t i = 0; i < x.size(); ++i) g[i] += c * x[i];
                        });
    }

    NodeId sum(NodeId a) {
        Tensor<Real> out({1});
        return add_node(std::move(out), needs_grad(a), {a},
                        [this, a](Node& n) {
                            const auto& x = val(a).data;
                            n.value.data[0] = std::accumulate(x.begin(), x.end(), Real(0));
                        },
                        [this, a](Node& n) {
                            if (!needs_grad(a)) return;
                            auto& g = mutable_grad(a);
                            for (Real& v : g) v += n.grad.data[0];
                        });
    }

    // scalar [1] broadcast to [rows, cols]
    NodeId scalar_fill(NodeId s, int rows, int cols) {
        if (val(s).size() != 1) throw std::invalid_argument("scalar_fill: source must be scalar");
        Tensor<Real> out({rows, cols});
        return add_node(std::move(out), needs_grad(s), {s},
                        [this, s](Node& n) {
                            std::fill(n.value.data.begin(), n.value.data.end(), val(s).data[0]);
                        },
                        [this, s](Node& n) {
                            auto& g = mutable_grad(s);
                            g[0] += std::accumulate(n.grad.data.begin(), n.grad.data.end(), Real(0));
                        });
    }

    // Summed cross entropy of row-wise logits against integer targets.
    NodeId cross_entropy_logits(NodeId logits, std::vector<int> targets) {
        const auto& s = val(logits).shape;
        if (s.size() != 2 || int(targets.size()) != s[0])
            throw std::invalid_argument("cross_entropy_logits: want [n,L] logits with n targets");
        for (int t : targets)
            if (t < 0 || t >= s[1])
                throw std::invalid_argument("cross_entropy_logits: target out of range");
        Tensor<Real> out({1});
        auto tgt = std::make_shared<std::vector<int>>(std::move(targets));
        return add_node(
            std::move(out), needs_grad(logits), {logits},
            [this, logits, tgt](Node& n) {
                const int m = val(logits).shape[0], L = val(logits).shape[1];
                const auto& x = val(logits).data;
                Real loss = Real(0);
                for (int i = 0; i < m; ++i) {
                    const Real* row = x.data() + int64_t(i) * L;
                    Real mx = row[0];
                    for (int j = 1; j < L; ++j) mx = std::max(mx, row[j]);
                    Real denom = Real(0);
                    for (int j = 0; j < L; ++j) denom += std::exp(row[j] - mx);
                    loss += mx + std::log(denom) - row[(*tgt)[size_t(i)]];
                }
                n.value.data[0] = loss;
            },
            [this, logits, tgt](Node& n) {
                const int m = val(logits).shape[0], L = val(logits).shape[1];
                const auto& x = val(logits).data;
                auto& g = mutable_grad(logits);
                const Real go = n.grad.data[0];
                for (int i = 0; i < m; ++i) {
                    const Real* row = x.data() + int64_t(i) * L;
                    Real mx = row[0];
                    for (int j = 1; j < L; ++j) mx = std::max(mx, row[j]);
                    Real denom = Real(0);
                    for (int j = 0; j < L; ++j) denom += std::exp(row[j] - mx);
                    for (int j = 0; j < L; ++j) {
                        const Real p = std::exp(row[j] - mx) / denom;
                        g[size_t(int64_t(i) * L + j)] +=
                            go * (p - Real(j == (*tgt)[size_t(i)] ? 1 : 0));
                    }
                }
            });
    }

    // Nearest-neighbor upsampling of a token grid by 2x per axis. Tokens are
    // rows of a [n, C] tensor laid out x-major over src_shape; dst token
    // (i,j,k) copies src token (i/2, j/2, k/2). dst dims may be 2d or 2d-1.
    NodeId nearest_upsample_3d(NodeId a, std::array<int, 3> src_shape,
                               std::array<int, 3> dst_shape) {
        const auto& s = val(a).shape;
        if (s.size() != 2 || s[0] != src_shape[0] * src_shape[1] * src_shape[2])
            throw std::invalid_argument("nearest_upsample_3d: token count mismatch");
        for (int d = 0; d < 3; ++d)
            if (dst_shape[size_t(d)] > 2 * src_shape[size_t(d)] ||
                dst_shape[size_t(d)] < 2 * src_shape[size_t(d)] - 1)
                throw std::invalid_argument("nearest_upsample_3d: dst must be 2x (or 2x-1) of src");
        const int n_dst = dst_shape[0] * dst_shape[1] * dst_shape[2];
        auto map_idx = std::make_shared<std::vector<int>>();
        map_idx->reserve(size_t(n_dst));
        for (int i = 0; i < dst_shape[0]; ++i)
            for (int j = 0; j < dst_shape[1]; ++j)
                for (int k = 0; k < dst_shape[2]; ++k)
                    map_idx->push_back(((i / 2) * src_shape[1] + (j / 2)) * src_shape[2] + (k / 2));
        Tensor<Real> out({n_dst, s[1]});
        return add_node(std::move(out), needs_grad(a), {a},
                        [this, a, map_idx](Node& n) {
                            const int c = val(a).shape[1];
                            const auto& x = val(a).data;
                            for (size_t i = 0; i < map_idx->size(); ++i)
                                std::copy_n(x.begin() + int64_t((*map_idx)[i]) * c, c,
                                            n.value.data.begin() + int64_t(i) * c);
                        },
                        [this, a, map_idx](Node& n) {
                            const int c = val(a).shape[1];
                            auto& g = mutable_grad(a);
                            for (size_t i = 0; i < map_idx->size(); ++i)
                                for (int j = 0; j < c; ++j)
                                    g[size_t((*map_idx)[i] * c + j)] +=
                                        n.grad.data[size_t(int64_t(i) * c + j)];
                        });
    }

    // Scaled-dot-product attention restricted to per-query neighbor lists.
    // q,k: [n, Dk], v: [n, Dv]. Queries with an empty list emit zero rows
    // (callers gate those rows away). Weights are recomputed in backward.
    NodeId windowed_attention(NodeId q, NodeId k, NodeId v,
                              std::shared_ptr<const std::vector<std::vector<int>>> neighbors,
                              Real inv_sqrt_dk) {
        const auto& qs = val(q).shape;
        const auto& ks = val(k).shape;
        const auto& vs = val(v).shape;
        if (qs.size() != 2 || ks.size() != 2 || vs.size() != 2 || qs[1] != ks[1] ||
            qs[0] != ks[0] || ks[0] != vs[0])
            throw std::invalid_argument("windowed_attention: bad q/k/v shapes");
        if (int(neighbors->size()) != qs[0])
            throw std::invalid_argument("windowed_attention: neighbor list count mismatch");
        Tensor<Real> out({qs[0], vs[1]});

        auto compute_weights = [this, q, k, neighbors, inv_sqrt_dk](int i, std::vector<Real>& w) {
            const int dk = val(q).shape[1];
            const auto& nb = (*neighbors)[size_t(i)];
            const Real* Q = val(q).data.data() + int64_t(i) * dk;
            w.resize(nb.size());
            Real mx = -std::numeric_limits<Real>::infinity();
            for (size_t t = 0; t < nb.size(); ++t) {
                const Real* K = val(k).data.data() + int64_t(nb[t]) * dk;
                Real s = Real(0);
                for (int d = 0; d < dk; ++d) s += Q[d] * K[d];
                w[t] = s * inv_sqrt_dk;
                mx = std::max(mx, w[t]);
            }
            Real denom = Real(0);
            for (Real& x : w) {
                x = std::exp(x - mx);
                denom += x;
            }
            for (Real& x : w) x /= denom;
        };

        return add_node(
            std::move(out), needs_grad(q) || needs_grad(k) || needs_grad(v), {q, k, v},
            [this, v, neighbors, compute_weights](Node& n) {
                const int dv = val(v).shape[1];
                std::vector<Real> w;
                for (size_t i = 0; i < neighbors->size(); ++i) {
                    Real* O = n.value.data.data() + int64_t(i) * dv;
                    std::fill(O, O + dv, Real(0));
                    const auto& nb = (*neighbors)[i];
                    if (nb.empty()) continue;
                    compute_weights(int(i), w);
                    for (size_t t = 0; t < nb.size(); ++t) {
                        const Real* V = val(v).data.data() + int64_t(nb[t]) * dv;
                        for (int d = 0; d < dv; ++d) O[d] += w[t] * V[d];
                    }
                }
            },
            [this, q, k, v, neighbors, compute_weights, inv_sqrt_dk](Node& n) {
                const int dk = val(q).shape[1];
                const int dv = val(v).shape[1];
                std::vector<Real> w, ds;
                for (size_t i = 0; i < neighbors->size(); ++i) {
                    const auto& nb = (*neighbors)[i];
                    if (nb.empty()) continue;
                    compute_weights(int(i), w);
                    const Real* GO = n.grad.data.data() + int64_t(i) * dv;
                    // dL/dscore_t = w_t * (go.v_t - sum_u w_u go.v_u)
                    ds.resize(nb.size());
                    Real mix = Real(0);
                    for (size_t t = 0; t < nb.size(); ++t) {
                        const Real* V = val(v).data.data() + int64_t(nb[t]) * dv;
                        Real dot = Real(0);
                        for (int d = 0; d < dv; ++d) dot += GO[d] * V[d];
                        ds[t] = dot;
                        mix += w[t] * dot;
                    }
                    for (size_t t = 0; t < nb.size(); ++t) ds[t] = w[t] * (ds[t] - mix);

                    if (needs_grad(v)) {
                        auto& gv = mutable_grad(v);
                        for (size_t t = 0; t < nb.size(); ++t) {
                            Real* GV = gv.data() + int64_t(nb[t]) * dv;
                            for (int d = 0; d < dv; ++d) GV[d] += w[t] * GO[d];
                        }
                    }
                    if (needs_grad(q)) {
                        auto& gq = mutable_grad(q);
                        Real* GQ = gq.data() + int64_t(i) * dk;
                        for (size_t t = 0; t < nb.size(); ++t) {
                            const Real* K = val(k).data.data() + int64_t(nb[t]) * dk;
                            const Real c = ds[t] * inv_sqrt_dk;
                            for (int d = 0; d < dk; ++d) GQ[d] += c * K[d];
                        }
                    }
                    if (needs_grad(k)) {
                        auto& gk = mutable_grad(k);
                        const Real* Q = val(q).data.data() + int64_t(i) * dk;
                        for (size_t t = 0; t < nb.size(); ++t) {
                            Real* GK = gk.data() + int64_t(nb[t]) * dk;
                            const Real c = ds[t] * inv_sqrt_dk;
                            for (int d = 0; d < dk; ++d) GK[d] += c * Q[d];
                        }
                    }
                }
            });
    }

    // Reassemble per-token patch rows [n_tokens, patch^3] into a flat map
    // column [N, 1], cropping any padding beyond the grid.
    NodeId patches_to_map(NodeId a, std::array<int, 3> token_shape, std::array<int, 3> grid_blocks,
                          int patch) {
        const auto& s = val(a).shape;
        const int n_tokens = token_shape[0] * token_shape[1] * token_shape[2];
        if (s.size() != 2 || s[0] != n_tokens || s[1] != patch * patch * patch)
            throw std::invalid_argument("patches_to_map: shape mismatch");
        const int N = grid_blocks[0] * grid_blocks[1] * grid_blocks[2];
        // source element index per map cell
        auto src = std::make_shared<std::vector<int64_t>>();
        src->reserve(size_t(N));
        const int pv = patch * patch * patch;
        for (int x = 0; x < grid_blocks[0]; ++x)
            for (int y = 0; y < grid_blocks[1]; ++y)
                for (int z = 0; z < grid_blocks[2]; ++z) {
                    const int ti = x / patch, tj = y / patch, tk = z / patch;
                    const int token = (ti * token_shape[1] + tj) * token_shape[2] + tk;
                    const int off = ((x % patch) * patch + (y % patch)) * patch + (z % patch);
                    src->push_back(int64_t(token) * pv + off);
                }
        Tensor<Real> out({N, 1});
        return add_node(std::move(out), needs_grad(a), {a},
                        [this, a, src](Node& n) {
                            const auto& x = val(a).data;
                            for (size_t i = 0; i < src->size(); ++i)
                                n.value.data[i] = x[size_t((*src)[i])];
                        },
                        [this, a, src](Node& n) {
                            auto& g = mutable_grad(a);
                            for (size_t i = 0; i < src->size(); ++i)
                                g[size_t((*src)[i])] += n.grad.data[i];
                        });
    }

    // Straight-through estimator: value of `surrogate` (a constant snapshot),
    // gradient copied to `path` unchanged.
    NodeId straight_through(NodeId path, const Tensor<Real>& surrogate_value) {
        if (surrogate_value.shape != val(path).shape)
            throw std::invalid_argument("straight_through: shape mismatch");
        Tensor<Real> offset(surrogate_value.shape);
        for (size_t i = 0; i < offset.data.size(); ++i)
            offset.data[i] = surrogate_value.data[i] - val(path).data[i];
        return add(path, constant(std::move(offset)));
    }

  private:
    struct Node {
        Tensor<Real> value;
        Tensor<Real> grad;
        bool needs_grad = false;
        std::function<void(Node&)> fwd;
        std::function<void(Node&)> bwd;
        std::function<void()> forward;   // bound wrappers
        std::function<void()> backward;
    };

    std::deque<Node> nodes_;

    NodeId add_node(Tensor<Real> value, bool needs_grad, const std::vector<NodeId>& inputs,
                    std::function<void(Node&)> fwd, std::function<void(Node&)> bwd) {
        (void)inputs;
        nodes_.emplace_back();
        Node& n = nodes_.back();
        n.value = std::move(value);
        n.grad = Tensor<Real>(n.value.shape);
        n.needs_grad = needs_grad;
        n.fwd = std::move(fwd);
        n.bwd = std::move(bwd);
        Node* raw = &n;
        if (n.fwd) {
            n.forward = [raw]() { raw->fwd(*raw); };
            n.forward();
        }
        if (n.bwd) n.backward = [raw]() { raw->bwd(*raw); };
        return NodeId(nodes_.size() - 1);
    }

    std::vector<Real>& mutable_grad(NodeId id) { return nodes_[size_t(id)].grad.data; }

    void axpy(NodeId dst, const std::vector<Real>& g, Real c) {
        if (!needs_grad(dst)) return;
        auto& d = mutable_grad(dst);
        for (size_t i = 0; i < d.size(); ++i) d[i] += c * g[i];
    }

    void require_same_shape(NodeId a, NodeId b, const char* op) const {
        if (val(a).shape != val(b).shape)
            throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }

    static std::tuple<int64_t, int64_t, int64_t> lane_split(const std::vector<int>& s, int axis) {
        int64_t outer = 1, inner = 1;
        for (int d = 0; d < axis; ++d) outer *= s[size_t(d)];
        for (size_t d = size_t(axis) + 1; d < s.size(); ++d) inner *= s[d];
        return {outer, int64_t(s[size_t(axis)]), inner};
    }
};

}  // namespace specmap::ad
