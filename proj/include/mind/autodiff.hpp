#pragma once
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <unordered_set>
#include <vector>

#include "mind/tensor.hpp"

// Minimal reverse-mode automatic differentiation over Tensor<T>. A Var wraps
// a graph node holding the value, a lazily allocated gradient, parent links
// and a backward closure. backward() walks the graph once in reverse
// topological order; evaluation order is fixed, so results are reproducible.

namespace mind {

template <class T>
struct Node {
    Tensor<T> val;
    Tensor<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backward_fn;

    bool has_grad() const { return !grad.data.empty(); }
    void accum(const Tensor<T>& g) {
        if (!requires_grad) return;
        if (grad.data.empty()) grad = Tensor<T>::zeros(val.shape);
        for (size_t i = 0; i < g.data.size(); ++i) grad.data[i] += g.data[i];
    }
    void zero_grad() { grad = Tensor<T>(); }
};

inline thread_local bool g_no_grad = false;

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(g_no_grad) { g_no_grad = true; }
    ~NoGradGuard() { g_no_grad = prev; }
};

template <class T>
class Var {
public:
    std::shared_ptr<Node<T>> n;

    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> node) : n(std::move(node)) {}

    static Var constant(Tensor<T> v) {
        auto node = std::make_shared<Node<T>>();
        node->val = std::move(v);
        return Var(std::move(node));
    }
    static Var param(Tensor<T> v) {
        auto node = std::make_shared<Node<T>>();
        node->val = std::move(v);
        node->requires_grad = true;
        return Var(std::move(node));
    }

    bool defined() const { return n != nullptr; }
    const Tensor<T>& val() const { return n->val; }
    Tensor<T>& val() { return n->val; }
    const Tensor<T>& grad() const { return n->grad; }
    const std::vector<int>& shape() const { return n->val.shape; }
    std::int64_t numel() const { return n->val.numel(); }
    bool requires_grad() const { return n && n->requires_grad; }
};

namespace ad_detail {

template <class T>
inline Var<T> make_node(Tensor<T> val, std::vector<Var<T>> inputs,
                        std::function<void(Node<T>&)> backward) {
    auto node = std::make_shared<Node<T>>();
    node->val = std::move(val);
    bool need = false;
    if (!g_no_grad)
        for (const auto& v : inputs) need = need || v.requires_grad();
    node->requires_grad = need;
    if (need) {
        node->parents.reserve(inputs.size());
        for (auto& v : inputs) node->parents.push_back(v.n);
        node->backward_fn = std::move(backward);
    }
    return Var<T>(std::move(node));
}

}  // namespace ad_detail

/// Reverse pass from a root (seed gradient = ones unless given).
template <class T>
inline void backward(const Var<T>& root, const Tensor<T>* seed = nullptr) {
    if (!root.requires_grad()) return;
    // iterative post-order DFS
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, size_t>> stack;
    stack.push_back({root.n.get(), 0});
    visited.insert(root.n.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node<T>* p = node->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root.n->accum(seed ? *seed : Tensor<T>::full(root.n->val.shape, T(1)));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward_fn && node->has_grad()) node->backward_fn(*node);
    }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <class T>
inline Var<T> add(const Var<T>& a, const Var<T>& b) {
    if (!a.val().same_shape(b.val())) throw DimensionError("add: shape mismatch");
    Tensor<T> out = a.val();
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.val().data[i];
    return ad_detail::make_node<T>(std::move(out), {a, b}, [pa = a.n, pb = b.n](Node<T>& self) {
        pa->accum(self.grad);
        pb->accum(self.grad);
    });
}

template <class T>
inline Var<T> sub(const Var<T>& a, const Var<T>& b) {
    if (!a.val().same_shape(b.val())) throw DimensionError("sub: shape mismatch");
    Tensor<T> out = a.val();
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.val().data[i];
    return ad_detail::make_node<T>(std::move(out), {a, b}, [pa = a.n, pb = b.n](Node<T>& self) {
        pa->accum(self.grad);
        if (pb->requires_grad) {
            Tensor<T> g = self.grad;
            for (auto& v : g.data) v = -v;
            pb->accum(g);
        }
    });
}

template <class T>
inline Var<T> mul(const Var<T>& a, const Var<T>& b) {
    if (!a.val().same_shape(b.val())) throw DimensionError("mul: shape mismatch");
    Tensor<T> out = a.val();
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.val().data[i];
    return ad_detail::make_node<T>(std::move(out), {a, b}, [pa = a.n, pb = b.n](Node<T>& self) {
        if (pa->requires_grad) {
            Tensor<T> g = self.grad;
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] *= pb->val.data[i];
            pa->accum(g);
        }
        if (pb->requires_grad) {
            Tensor<T> g = self.grad;
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] *= pa->val.data[i];
            pb->accum(g);
        }
    });
}

template <class T>
inline Var<T> div_v(const Var<T>& a, const Var<T>& b) {
    if (!a.val().same_shape(b.val())) throw DimensionError("div: shape mismatch");
    Tensor<T> out = a.val();
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] /= b.val().data[i];
    return ad_detail::make_node<T>(std::move(out), {a, b}, [pa = a.n, pb = b.n](Node<T>& self) {
        if (pa->requires_grad) {
            Tensor<T> g = self.grad;
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] /= pb->val.data[i];
            pa->accum(g);
        }
        if (pb->requires_grad) {
            Tensor<T> g = self.grad;
            for (size_t i = 0; i < g.data.size(); ++i) {
                const T bv = pb->val.data[i];
                g.data[i] *= -pa->val.data[i] / (bv * bv);
            }
            pb->accum(g);
        }
    });
}

template <class T>
inline Var<T> scale(const Var<T>& a, T s) {
    Tensor<T> out = a.val();
    for (auto& v : out.data) v *= s;
    return ad_detail::make_node<T>(std::move(out), {a}, [pa = a.n, s](Node<T>& self) {
        Tensor<T> g = self.grad;
        for (auto& v : g.data) v *= s;
        pa->accum(g);
    });
}

template <class T>
inline Var<T> relu(const Var<T>& a) {
    Tensor<T> out = a.val();
    for (auto& v : out.data) v = v > T(0) ? v : T(0);
    return ad_detail::make_node<T>(std::move(out), {a}, [pa = a.n](Node<T>& self) {
        Tensor<T> g = self.grad;
        for (size_t i = 0; i < g.data.size(); ++i)
            if (pa->val.data[i] <= T(0)) g.data[i] = T(0);
        pa->accum(g);
    });
}

template <class T>
inline Var<T> sigmoid_v(const Var<T>& a) {
    Tensor<T> out = a.val();
    for (auto& v : out.data) {
        double x = double(v);
        v = T(x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)));
    }
    Tensor<T> saved = out;
    return ad_detail::make_node<T>(std::move(out), {a}, [pa = a.n, saved](Node<T>& self) {
        Tensor<T> g = self.grad;
        for (size_t i = 0; i < g.data.size(); ++i) {
            const T y = saved.data[i];
            g.data[i] *= y * (T(1) - y);
        }
        pa->accum(g);
    });
}

template <class T>
inline Var<T> tanh_v(const Var<T>& a) {
    Tensor<T> out = a.val();
    for (auto& v : out.data) v = T(std::tanh(double(v)));
    Tensor<T> saved = out;
    return ad_detail::make_node<T>(std::move(out), {a}, [pa = a.n, saved](Node<T>& self) {
        Tensor<T> g = self.grad;
        for (size_t i = 0; i < g.data.size(); ++i) {
            const T y = saved.data[i];
            g.data[i] *= T(1) - y * y;
        }
        pa->accum(g);
    });
}

template <class T>
inline Var<T> square(const Var<T>& a) {
    Tensor<T> out = a.val();
    for (auto& v : out.data) v *= v;
    return ad_detail::make_node<T>(std::move(out), {a}, [pa = a.n](Node<T>& self) {
        Tensor<T> g = self.grad;
        for (size_t i = 0; i < g.data.size(); ++i) g.data[i] *= T(2) * pa->val.data[i];
        pa->accum(g);
    });
}

/// sqrt with guarded derivative at 0 (input assumed >= 0).
template <class T>
inline Var<T> sqrt_v(const Var<T>& a) {
    Tensor<T> out = a.val();
    for (auto& v : out.data) v = T(std::sqrt(double(v)));
    Tensor<T> saved = out;
    return ad_detail::make_node<T>(std::move(out), {a}, [pa = a.n, saved](Node<T>& self) {
        Tensor<T> g = self.grad;
        for (size_t i = 0; i < g.data.size(); ++i) {
            const T y = std::max(saved.data[i], T(1e-20));
            g.data[i] *= T(0.5) / y;
        }
        pa->accum(g);
    });
}

template <class T>
inline Var<T> abs_v(const Var<T>& a) {
    Tensor<T> out = a.val();
    for (auto& v : out.data) v = v < T(0) ? -v : v;
    return ad_detail::make_node<T>(std::move(out), {a}, [pa = a.n](Node<T>& self) {
        Tensor<T> g = self.grad;
        for (size_t i = 0; i < g.data.size(); ++i) {
            const T x = pa->val.data[i];
            g.data[i] *= x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0));
        }
        pa->accum(g);
    });
}

template <class T>
inline Var<T> log_v(const Var<T>& a) {
    Tensor<T> out = a.val();
    for (auto& v : out.data) v = T(std::log(double(v)));
    return ad_detail::make_node<T>(std::move(out), {a}, [pa = a.n](Node<T>& self) {
        Tensor<T> g = self.grad;
        for (size_t i = 0; i < g.data.size(); ++i) g.data[i] /= pa->val.data[i];
        pa->accum(g);
    });
}

/// Clamp to [lo, hi]; subgradient passes where lo <= x <= hi.
template <class T>
inline Var<T> clamp_v(const Var<T>& a, T lo, T hi) {
    Tensor<T> out = a.val();
    for (auto& v : out.data) v = std::min(hi, std::max(lo, v));
    return ad_detail::make_node<T>(std::move(out), {a}, [pa = a.n, lo, hi](Node<T>& self) {
        Tensor<T> g = self.grad;
        for (size_t i = 0; i < g.data.size(); ++i) {
            const T x = pa->val.data[i];
            if (x < lo || x > hi) g.data[i] = T(0);
        }
        pa->accum(g);
    });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <class T>
inline Var<T> sum_all(const Var<T>& a) {
    T s = T(0);
    for (T v : a.val().data) s += v;
    return ad_detail::make_node<T>(Tensor<T>::full({1}, s), {a}, [pa = a.n](Node<T>& self) {
        pa->accum(Tensor<T>::full(pa->val.shape, self.grad.data[0]));
    });
}

template <class T>
inline Var<T> mean_all(const Var<T>& a) {
    T s = T(0);
    for (T v : a.val().data) s += v;
    const T inv = T(1) / T(a.val().numel());
    return ad_detail::make_node<T>(Tensor<T>::full({1}, s * inv), {a}, [pa = a.n, inv](Node<T>& self) {
        pa->accum(Tensor<T>::full(pa->val.shape, self.grad.data[0] * inv));
    });
}

/// sum(a * r) against a fixed tensor; the random-projection scalar used by
/// the gradient checker.
template <class T>
inline Var<T> dot_const(const Var<T>& a, Tensor<T> r) {
    if (!a.val().same_shape(r)) throw DimensionError("dot_const: shape mismatch");
    T s = T(0);
    for (size_t i = 0; i < r.data.size(); ++i) s += a.val().data[i] * r.data[i];
    return ad_detail::make_node<T>(Tensor<T>::full({1}, s), {a},
                                   [pa = a.n, r = std::move(r)](Node<T>& self) {
                                       Tensor<T> g = r;
                                       for (auto& v : g.data) v *= self.grad.data[0];
                                       pa->accum(g);
                                   });
}

// ---------------------------------------------------------------------------
// matrix ops
// ---------------------------------------------------------------------------

/// C = op(A) op(B); shapes checked against the transpose flags.
template <class T>
inline Var<T> matmul(const Var<T>& a, const Var<T>& b, bool ta = false, bool tb = false) {
    if (a.shape().size() != 2 || b.shape().size() != 2) throw DimensionError("matmul: rank-2 only");
    const int am = a.shape()[0], an = a.shape()[1];
    const int bm = b.shape()[0], bn = b.shape()[1];
    const int m = ta ? an : am, ka = ta ? am : an;
    const int kb = tb ? bn : bm, n = tb ? bm : bn;
    if (ka != kb) throw DimensionError("matmul: inner dimensions disagree");
    Tensor<T> out({m, n});
    gemm<T>(ta, tb, m, n, ka, T(1), a.val().data.data(), an, b.val().data.data(), bn, T(0),
            out.data.data(), n);
    return ad_detail::make_node<T>(
        std::move(out), {a, b}, [pa = a.n, pb = b.n, ta, tb, m, n, k = ka](Node<T>& self) {
            const int an = int(pa->val.shape[1]);
            const int bn = int(pb->val.shape[1]);
            if (pa->requires_grad) {
                Tensor<T> ga(pa->val.shape);
                // A = op_a^-1(dC op(B)^T)
                if (!ta)
                    gemm<T>(false, !tb, m, k, n, T(1), self.grad.data.data(), n, pb->val.data.data(),
                            bn, T(0), ga.data.data(), k);
                else
                    gemm<T>(tb, true, k, m, n, T(1), pb->val.data.data(), bn, self.grad.data.data(),
                            n, T(0), ga.data.data(), m);
                pa->accum(ga);
            }
            if (pb->requires_grad) {
                Tensor<T> gb(pb->val.shape);
                if (!tb)
                    gemm<T>(!ta, false, k, n, m, T(1), pa->val.data.data(), an, self.grad.data.data(),
                            n, T(0), gb.data.data(), n);
                else
                    gemm<T>(true, ta, n, k, m, T(1), self.grad.data.data(), n, pa->val.data.data(),
                            an, T(0), gb.data.data(), k);
                pb->accum(gb);
            }
        });
}

/// X [N x D] + v broadcast over rows.
template <class T>
inline Var<T> add_row_broadcast(const Var<T>& x, const Var<T>& v) {
    if (x.shape().size() != 2 || v.shape().size() != 1 || x.shape()[1] != v.shape()[0])
        throw DimensionError("add_row_broadcast: shape mismatch");
    const int n = x.shape()[0], d = x.shape()[1];
    Tensor<T> out = x.val();
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) out.data[size_t(r) * d + c] += v.val().data[size_t(c)];
    return ad_detail::make_node<T>(std::move(out), {x, v},
                                   [px = x.n, pv = v.n, n, d](Node<T>& self) {
                                       px->accum(self.grad);
                                       if (pv->requires_grad) {
                                           Tensor<T> gv({d});
                                           for (int r = 0; r < n; ++r)
                                               for (int c = 0; c < d; ++c)
                                                   gv.data[size_t(c)] += self.grad.data[size_t(r) * d + c];
                                           pv->accum(gv);
                                       }
                                   });
}

template <class T>
inline Var<T> softmax_rows(const Var<T>& a) {
    if (a.shape().size() != 2) throw DimensionError("softmax_rows: rank-2 only");
    const int n = a.shape()[0], d = a.shape()[1];
    Tensor<T> out = a.val();
    for (int r = 0; r < n; ++r) {
        T* row = &out.data[size_t(r) * d];
        T mx = row[0];
        for (int c = 1; c < d; ++c) mx = std::max(mx, row[c]);
        double sum = 0;
        for (int c = 0; c < d; ++c) {
            row[c] = T(std::exp(double(row[c] - mx)));
            sum += double(row[c]);
        }
        const T inv = T(1.0 / sum);
        for (int c = 0; c < d; ++c) row[c] *= inv;
    }
    Tensor<T> saved = out;
    return ad_detail::make_node<T>(std::move(out), {a}, [pa = a.n, saved, n, d](Node<T>& self) {
        Tensor<T> g(pa->val.shape);
        for (int r = 0; r < n; ++r) {
            const T* y = &saved.data[size_t(r) * d];
            const T* dy = &self.grad.data[size_t(r) * d];
            T dot = T(0);
            for (int c = 0; c < d; ++c) dot += dy[c] * y[c];
            T* gr = &g.data[size_t(r) * d];
            for (int c = 0; c < d; ++c) gr[c] = (dy[c] - dot) * y[c];
        }
        pa->accum(g);
    });
}

/// Per-row layer normalization with learned gain/bias.
template <class T>
inline Var<T> layernorm_rows(const Var<T>& x, const Var<T>& gain, const Var<T>& bias,
                             T eps = T(1e-5)) {
    if (x.shape().size() != 2) throw DimensionError("layernorm_rows: rank-2 only");
    const int n = x.shape()[0], d = x.shape()[1];
    if (gain.shape() != std::vector<int>{d} || bias.shape() != std::vector<int>{d})
        throw DimensionError("layernorm_rows: gain/bias must be [D]");
    Tensor<T> out({n, d});
    Tensor<T> xhat({n, d});
    Tensor<T> inv_sd({n});
    for (int r = 0; r < n; ++r) {
        const T* row = &x.val().data[size_t(r) * d];
        double mu = 0;
        for (int c = 0; c < d; ++c) mu += double(row[c]);
        mu /= d;
        double var = 0;
        for (int c = 0; c < d; ++c) {
            const double t = double(row[c]) - mu;
            var += t * t;
        }
        var /= d;
        const T is = T(1.0 / std::sqrt(var + double(eps)));
        inv_sd.data[size_t(r)] = is;
        for (int c = 0; c < d; ++c) {
            const T xh = T((double(row[c]) - mu)) * is;
            xhat.data[size_t(r) * d + c] = xh;
            out.data[size_t(r) * d + c] = xh * gain.val().data[size_t(c)] + bias.val().data[size_t(c)];
        }
    }
    return ad_detail::make_node<T>(
        std::move(out), {x, gain, bias},
        [px = x.n, pg = gain.n, pb = bias.n, xhat, inv_sd, n, d](Node<T>& self) {
            if (pg->requires_grad) {
                Tensor<T> gg({d});
                for (int r = 0; r < n; ++r)
                    for (int c = 0; c < d; ++c)
                        gg.data[size_t(c)] +=
                            self.grad.data[size_t(r) * d + c] * xhat.data[size_t(r) * d + c];
                pg->accum(gg);
            }
            if (pb->requires_grad) {
                Tensor<T> gb({d});
                for (int r = 0; r < n; ++r)
                    for (int c = 0; c < d; ++c) gb.data[size_t(c)] += self.grad.data[size_t(r) * d + c];
                pb->accum(gb);
            }
            if (px->requires_grad) {
                Tensor<T> gx({n, d});
                for (int r = 0; r < n; ++r) {
                    const T* dy = &self.grad.data[size_t(r) * d];
                    const T* xh = &xhat.data[size_t(r) * d];
                    double m1 = 0, m2 = 0;
                    for (int c = 0; c < d; ++c) {
                        const double dxh = double(dy[c]) * double(pg->val.data[size_t(c)]);
                        m1 += dxh;
                        m2 += dxh * double(xh[c]);
                    }
                    m1 /= d;
                    m2 /= d;
                    const T is = inv_sd.data[size_t(r)];
                    for (int c = 0; c < d; ++c) {
                        const double dxh = double(dy[c]) * double(pg->val.data[size_t(c)]);
                        gx.data[size_t(r) * d + c] = T((dxh - m1 - double(xh[c]) * m2)) * is;
                    }
                }
                px->accum(gx);
            }
        });
}

// ---------------------------------------------------------------------------
// convolution and feature-map ops (tensors are [C,H,W])
// ---------------------------------------------------------------------------

enum class Pad { reflect, valid };

namespace ad_detail {

inline int reflect101(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n - 2;
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

// Source spatial index for each (kernel offset, output position).
inline std::vector<std::int32_t> conv_index_table(int h, int w, int kh, int kw, int stride,
                                                  Pad pad, int& ho, int& wo) {
    if (pad == Pad::reflect) {
        ho = (h - 1) / stride + 1;
        wo = (w - 1) / stride + 1;
        const int py = kh / 2, px = kw / 2;
        if (py > h - 1 || px > w - 1) throw DimensionError("conv: image too small for reflect padding");
        std::vector<std::int32_t> idx(size_t(kh) * kw * ho * wo);
        size_t q = 0;
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx)
                for (int oy = 0; oy < ho; ++oy) {
                    const int sy = reflect101(oy * stride + ky - py, h);
                    for (int ox = 0; ox < wo; ++ox) {
                        const int sx = reflect101(ox * stride + kx - px, w);
                        idx[q++] = sy * w + sx;
                    }
                }
        return idx;
    }
    if (h < kh || w < kw) throw DimensionError("conv: image smaller than kernel");
    ho = (h - kh) / stride + 1;
    wo = (w - kw) / stride + 1;
    std::vector<std::int32_t> idx(size_t(kh) * kw * ho * wo);
    size_t q = 0;
    for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) idx[q++] = (oy * stride + ky) * w + ox * stride + kx;
    return idx;
}

template <class T>
inline void im2col(const T* x, int cin, int hw_in, const std::vector<std::int32_t>& idx, int khkw,
                   int n_out, std::vector<T>& cols) {
    cols.resize(size_t(cin) * khkw * n_out);
    for (int ci = 0; ci < cin; ++ci) {
        const T* src = x + size_t(ci) * hw_in;
        T* dst = cols.data() + size_t(ci) * khkw * n_out;
        for (int t = 0; t < khkw; ++t) {
            const std::int32_t* ix = idx.data() + size_t(t) * n_out;
            T* row = dst + size_t(t) * n_out;
            for (int o = 0; o < n_out; ++o) row[o] = src[ix[o]];
        }
    }
}

}  // namespace ad_detail

/// 2-D convolution: x [Cin,H,W] * w [Cout,Cin,kh,kw] (+ bias [Cout]).
template <class T>
inline Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, int stride = 1,
                     Pad pad = Pad::reflect) {
    if (x.shape().size() != 3 || w.shape().size() != 4) throw DimensionError("conv2d: bad ranks");
    const int cin = x.shape()[0], h = x.shape()[1], wd = x.shape()[2];
    const int cout = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
    if (w.shape()[1] != cin) throw DimensionError("conv2d: channel mismatch");
    const bool has_bias = bias.defined();
    if (has_bias && bias.shape() != std::vector<int>{cout})
        throw DimensionError("conv2d: bias must be [Cout]");
    int ho = 0, wo = 0;
    auto idx = ad_detail::conv_index_table(h, wd, kh, kw, stride, pad, ho, wo);
    const int khkw = kh * kw, n_out = ho * wo, k_in = cin * khkw;
    std::vector<T> cols;
    ad_detail::im2col(x.val().data.data(), cin, h * wd, idx, khkw, n_out, cols);
    Tensor<T> out({cout, ho, wo});
    gemm<T>(false, false, cout, n_out, k_in, T(1), w.val().data.data(), k_in, cols.data(), n_out,
            T(0), out.data.data(), n_out);
    if (has_bias)
        for (int co = 0; co < cout; ++co) {
            const T b = bias.val().data[size_t(co)];
            T* o = &out.data[size_t(co) * n_out];
            for (int i = 0; i < n_out; ++i) o[i] += b;
        }
    std::vector<Var<T>> inputs = {x, w};
    if (has_bias) inputs.push_back(bias);
    return ad_detail::make_node<T>(
        std::move(out), std::move(inputs),
        [px = x.n, pw = w.n, pb = has_bias ? bias.n : nullptr, idx = std::move(idx), cin, h, wd,
         cout, khkw, n_out, k_in](Node<T>& self) {
            const T* dout = self.grad.data.data();
            if (pb && pb->requires_grad) {
                Tensor<T> gb({cout});
                for (int co = 0; co < cout; ++co) {
                    T s = T(0);
                    const T* o = dout + size_t(co) * n_out;
                    for (int i = 0; i < n_out; ++i) s += o[i];
                    gb.data[size_t(co)] = s;
                }
                pb->accum(gb);
            }
            if (pw->requires_grad) {
                std::vector<T> cols;
                ad_detail::im2col(px->val.data.data(), cin, h * wd, idx, khkw, n_out, cols);
                Tensor<T> gw(pw->val.shape);
                gemm<T>(false, true, cout, k_in, n_out, T(1), dout, n_out, cols.data(), n_out, T(0),
                        gw.data.data(), k_in);
                pw->accum(gw);
            }
            if (px->requires_grad) {
                std::vector<T> dcols(size_t(k_in) * n_out);
                gemm<T>(true, false, k_in, n_out, cout, T(1), pw->val.data.data(), k_in, dout, n_out,
                        T(0), dcols.data(), n_out);
                Tensor<T> gx({cin, h, wd});
                for (int ci = 0; ci < cin; ++ci) {
                    T* dst = &gx.data[size_t(ci) * h * wd];
                    const T* src = dcols.data() + size_t(ci) * khkw * n_out;
                    for (int t = 0; t < khkw; ++t) {
                        const std::int32_t* ix = idx.data() + size_t(t) * n_out;
                        const T* row = src + size_t(t) * n_out;
                        for (int o = 0; o < n_out; ++o) dst[ix[o]] += row[o];
                    }
                }
                px->accum(gx);
            }
        });
}

template <class T>
inline Var<T> upsample_nearest2(const Var<T>& x) {
    if (x.shape().size() != 3) throw DimensionError("upsample: rank-3 only");
    const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    Tensor<T> out({c, 2 * h, 2 * w});
    for (int ci = 0; ci < c; ++ci)
        for (int r = 0; r < 2 * h; ++r)
            for (int cc = 0; cc < 2 * w; ++cc)
                out.data[(size_t(ci) * 2 * h + r) * 2 * w + cc] =
                    x.val().data[(size_t(ci) * h + r / 2) * w + cc / 2];
    return ad_detail::make_node<T>(std::move(out), {x}, [px = x.n, c, h, w](Node<T>& self) {
        Tensor<T> g({c, h, w});
        for (int ci = 0; ci < c; ++ci)
            for (int r = 0; r < 2 * h; ++r)
                for (int cc = 0; cc < 2 * w; ++cc)
                    g.data[(size_t(ci) * h + r / 2) * w + cc / 2] +=
                        self.grad.data[(size_t(ci) * 2 * h + r) * 2 * w + cc];
        px->accum(g);
    });
}

/// Mean over H x W per channel -> [C].
template <class T>
inline Var<T> global_mean_hw(const Var<T>& x) {
    if (x.shape().size() != 3) throw DimensionError("global_mean_hw: rank-3 only");
    const int c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
    Tensor<T> out({c});
    for (int ci = 0; ci < c; ++ci) {
        double s = 0;
        const T* p = &x.val().data[size_t(ci) * hw];
        for (int i = 0; i < hw; ++i) s += double(p[i]);
        out.data[size_t(ci)] = T(s / hw);
    }
    return ad_detail::make_node<T>(std::move(out), {x}, [px = x.n, c, hw](Node<T>& self) {
        Tensor<T> g(px->val.shape);
        for (int ci = 0; ci < c; ++ci) {
            const T gv = self.grad.data[size_t(ci)] / T(hw);
            T* p = &g.data[size_t(ci) * hw];
            for (int i = 0; i < hw; ++i) p[i] = gv;
        }
        px->accum(g);
    });
}

/// Mean across channels -> [1,H,W].
template <class T>
inline Var<T> channel_mean(const Var<T>& x) {
    const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    const int hw = h * w;
    Tensor<T> out({1, h, w});
    for (int i = 0; i < hw; ++i) {
        double s = 0;
        for (int ci = 0; ci < c; ++ci) s += double(x.val().data[size_t(ci) * hw + i]);
        out.data[size_t(i)] = T(s / c);
    }
    return ad_detail::make_node<T>(std::move(out), {x}, [px = x.n, c, hw](Node<T>& self) {
        Tensor<T> g(px->val.shape);
        for (int i = 0; i < hw; ++i) {
            const T gv = self.grad.data[size_t(i)] / T(c);
            for (int ci = 0; ci < c; ++ci) g.data[size_t(ci) * hw + i] = gv;
        }
        px->accum(g);
    });
}

/// Max across channels -> [1,H,W]; gradient routes to the first argmax.
template <class T>
inline Var<T> channel_max(const Var<T>& x) {
    const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    const int hw = h * w;
    Tensor<T> out({1, h, w});
    std::vector<std::int32_t> arg(static_cast<size_t>(hw));
    for (int i = 0; i < hw; ++i) {
        T best = x.val().data[size_t(i)];
        int bi = 0;
        for (int ci = 1; ci < c; ++ci) {
            const T v = x.val().data[size_t(ci) * hw + i];
            if (v > best) { best = v; bi = ci; }
        }
        out.data[size_t(i)] = best;
        arg[size_t(i)] = bi;
    }
    return ad_detail::make_node<T>(std::move(out), {x},
                                   [px = x.n, arg = std::move(arg), hw](Node<T>& self) {
                                       Tensor<T> g(px->val.shape);
                                       for (int i = 0; i < hw; ++i)
                                           g.data[size_t(arg[size_t(i)]) * hw + i] = self.grad.data[size_t(i)];
                                       px->accum(g);
                                   });
}

template <class T>
inline Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
    const int ca = a.shape()[0], cb = b.shape()[0];
    const int h = a.shape()[1], w = a.shape()[2];
    if (b.shape()[1] != h || b.shape()[2] != w) throw DimensionError("concat_channels: H,W mismatch");
    Tensor<T> out({ca + cb, h, w});
    std::copy(a.val().data.begin(), a.val().data.end(), out.data.begin());
    std::copy(b.val().data.begin(), b.val().data.end(), out.data.begin() + size_t(ca) * h * w);
    return ad_detail::make_node<T>(std::move(out), {a, b},
                                   [pa = a.n, pb = b.n, ca, cb, hw = h * w](Node<T>& self) {
                                       if (pa->requires_grad) {
                                           Tensor<T> g(pa->val.shape);
                                           std::copy(self.grad.data.begin(),
                                                     self.grad.data.begin() + size_t(ca) * hw,
                                                     g.data.begin());
                                           pa->accum(g);
                                       }
                                       if (pb->requires_grad) {
                                           Tensor<T> g(pb->val.shape);
                                           std::copy(self.grad.data.begin() + size_t(ca) * hw,
                                                     self.grad.data.end(), g.data.begin());
                                           pb->accum(g);
                                       }
                                   });
}

/// x [C,H,W] scaled per channel by s [C].
template <class T>
inline Var<T> mul_channel(const Var<T>& x, const Var<T>& s) {
    const int c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
    if (s.shape() != std::vector<int>{c}) throw DimensionError("mul_channel: scale must be [C]");
    Tensor<T> out = x.val();
    for (int ci = 0; ci < c; ++ci) {
        const T sv = s.val().data[size_t(ci)];
        T* p = &out.data[size_t(ci) * hw];
        for (int i = 0; i < hw; ++i) p[i] *= sv;
    }
    return ad_detail::make_node<T>(std::move(out), {x, s}, [px = x.n, ps = s.n, c, hw](Node<T>& self) {
        if (px->requires_grad) {
            Tensor<T> g = self.grad;
            for (int ci = 0; ci < c; ++ci) {
                const T sv = ps->val.data[size_t(ci)];
                T* p = &g.data[size_t(ci) * hw];
                for (int i = 0; i < hw; ++i) p[i] *= sv;
            }
            px->accum(g);
        }
        if (ps->requires_grad) {
            Tensor<T> g({c});
            for (int ci = 0; ci < c; ++ci) {
                double acc = 0;
                const T* gp = &self.grad.data[size_t(ci) * hw];
                const T* xp = &px->val.data[size_t(ci) * hw];
                for (int i = 0; i < hw; ++i) acc += double(gp[i]) * double(xp[i]);
                g.data[size_t(ci)] = T(acc);
            }
            ps->accum(g);
        }
    });
}

/// Per-channel affine gamma[c] * x[c] + beta[c].
template <class T>
inline Var<T> affine_channel(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta) {
    const int c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
    if (gamma.shape() != std::vector<int>{c} || beta.shape() != std::vector<int>{c})
        throw DimensionError("affine_channel: params must be [C]");
    Tensor<T> out = x.val();
    for (int ci = 0; ci < c; ++ci) {
        const T g = gamma.val().data[size_t(ci)], b = beta.val().data[size_t(ci)];
        T* p = &out.data[size_t(ci) * hw];
        for (int i = 0; i < hw; ++i) p[i] = g * p[i] + b;
    }
    return ad_detail::make_node<T>(
        std::move(out), {x, gamma, beta},
        [px = x.n, pg = gamma.n, pb = beta.n, c, hw](Node<T>& self) {
            if (px->requires_grad) {
                Tensor<T> g = self.grad;
                for (int ci = 0; ci < c; ++ci) {
                    const T gv = pg->val.data[size_t(ci)];
                    T* p = &g.data[size_t(ci) * hw];
                    for (int i = 0; i < hw; ++i) p[i] *= gv;
                }
                px->accum(g);
            }
            if (pg->requires_grad) {
                Tensor<T> g({c});
                for (int ci = 0; ci < c; ++ci) {
                    double acc = 0;
                    const T* gp = &self.grad.data[size_t(ci) * hw];
                    const T* xp = &px->val.data[size_t(ci) * hw];
                    for (int i = 0; i < hw; ++i) acc += double(gp[i]) * double(xp[i]);
                    g.data[size_t(ci)] = T(acc);
                }
                pg->accum(g);
            }
            if (pb->requires_grad) {
                Tensor<T> g({c});
                for (int ci = 0; ci < c; ++ci) {
                    double acc = 0;
                    const T* gp = &self.grad.data[size_t(ci) * hw];
                    for (int i = 0; i < hw; ++i) acc += double(gp[i]);
                    g.data[size_t(ci)] = T(acc);
                }
                pb->accum(g);
            }
        });
}

/// x [C,H,W] gated by a spatial map m [1,H,W].
template <class T>
inline Var<T> mul_spatial(const Var<T>& x, const Var<T>& m) {
    const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    if (m.shape() != std::vector<int>{1, h, w}) throw DimensionError("mul_spatial: map must be [1,H,W]");
    const int hw = h * w;
    Tensor<T> out = x.val();
    for (int ci = 0; ci < c; ++ci) {
        T* p = &out.data[size_t(ci) * hw];
        const T* mp = m.val().data.data();
        for (int i = 0; i < hw; ++i) p[i] *= mp[i];
    }
    return ad_detail::make_node<T>(std::move(out), {x, m}, [px = x.n, pm = m.n, c, hw](Node<T>& self) {
        if (px->requires_grad) {
            Tensor<T> g = self.grad;
            for (int ci = 0; ci < c; ++ci) {
                T* p = &g.data[size_t(ci) * hw];
                const T* mp = pm->val.data.data();
                for (int i = 0; i < hw; ++i) p[i] *= mp[i];
            }
            px->accum(g);
        }
        if (pm->requires_grad) {
            Tensor<T> g({1, px->val.shape[1], px->val.shape[2]});
            for (int i = 0; i < hw; ++i) {
                double acc = 0;
                for (int ci = 0; ci < c; ++ci)
                    acc += double(self.grad.data[size_t(ci) * hw + i]) * double(px->val.data[size_t(ci) * hw + i]);
                g.data[size_t(i)] = T(acc);
            }
            pm->accum(g);
        }
    });
}

// ---------------------------------------------------------------------------
// token <-> image reshaping
// ---------------------------------------------------------------------------

/// x [1,H,W] -> [ (H/p)(W/p), p^2 ] patch rows (gy-major, then gx; inner py,px).
template <class T>
inline Var<T> patchify(const Var<T>& x, int p) {
    const int h = x.shape()[1], w = x.shape()[2];
    if (x.shape()[0] != 1) throw DimensionError("patchify: single-channel input expected");
    if (h % p || w % p) throw DimensionError("patchify: dimensions must be divisible by patch size");
    const int gh = h / p, gw = w / p;
    Tensor<T> out({gh * gw, p * p});
    size_t q = 0;
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx)
            for (int py = 0; py < p; ++py)
                for (int px = 0; px < p; ++px)
                    out.data[q++] = x.val().data[size_t(gy * p + py) * w + gx * p + px];
    return ad_detail::make_node<T>(std::move(out), {x}, [pn = x.n, p, h, w](Node<T>& self) {
        Tensor<T> g({1, h, w});
        const int gh = h / p, gw = w / p;
        size_t q = 0;
        for (int gy = 0; gy < gh; ++gy)
            for (int gx = 0; gx < gw; ++gx)
                for (int py = 0; py < p; ++py)
                    for (int px = 0; px < p; ++px)
                        g.data[size_t(gy * p + py) * w + gx * p + px] = self.grad.data[q++];
        pn->accum(g);
    });
}

/// tokens [ (H/p)(W/p), C p^2 ] -> [C,H,W]; inner token layout (c, py, px).
template <class T>
inline Var<T> unpatchify(const Var<T>& t, int c, int h, int w, int p) {
    const int gh = h / p, gw = w / p;
    if (t.shape() != std::vector<int>{gh * gw, c * p * p}) throw DimensionError("unpatchify: bad shape");
    Tensor<T> out({c, h, w});
    size_t q = 0;
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx)
            for (int ci = 0; ci < c; ++ci)
                for (int py = 0; py < p; ++py)
                    for (int px = 0; px < p; ++px)
                        out.data[(size_t(ci) * h + gy * p + py) * w + gx * p + px] = t.val().data[q++];
    return ad_detail::make_node<T>(std::move(out), {t}, [pn = t.n, c, h, w, p](Node<T>& self) {
        Tensor<T> g(pn->val.shape);
        const int gh = h / p, gw = w / p;
        size_t q = 0;
        for (int gy = 0; gy < gh; ++gy)
            for (int gx = 0; gx < gw; ++gx)
                for (int ci = 0; ci < c; ++ci)
                    for (int py = 0; py < p; ++py)
                        for (int px = 0; px < p; ++px)
                            g.data[q++] = self.grad.data[(size_t(ci) * h + gy * p + py) * w + gx * p + px];
        pn->accum(g);
    });
}

template <class T>
inline Var<T> concat_rows(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const int d = parts[0].shape()[1];
    int total = 0;
    for (const auto& p : parts) {
        if (p.shape().size() != 2 || p.shape()[1] != d) throw DimensionError("concat_rows: width mismatch");
        total += p.shape()[0];
    }
    Tensor<T> out({total, d});
    size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.val().data.begin(), p.val().data.end(), out.data.begin() + off);
        off += p.val().data.size();
    }
    return ad_detail::make_node<T>(std::move(out), parts, [parts, d](Node<T>& self) {
        size_t off = 0;
        for (const auto& p : parts) {
            if (p.n->requires_grad) {
                Tensor<T> g(p.n->val.shape);
                std::copy(self.grad.data.begin() + off, self.grad.data.begin() + off + g.data.size(),
                          g.data.begin());
                p.n->accum(g);
            }
            off += p.n->val.data.size();
        }
    });
}

/// Z [Bn x D] -> mean over B equal blocks -> [n x D].
template <class T>
inline Var<T> mean_blocks(const Var<T>& z, int blocks) {
    const int l = z.shape()[0], d = z.shape()[1];
    if (l % blocks) throw DimensionError("mean_blocks: rows not divisible");
    const int n = l / blocks;
    Tensor<T> out({n, d});
    for (int b = 0; b < blocks; ++b)
        for (size_t i = 0; i < size_t(n) * d; ++i) out.data[i] += z.val().data[size_t(b) * n * d + i];
    const T inv = T(1) / T(blocks);
    for (auto& v : out.data) v *= inv;
    return ad_detail::make_node<T>(std::move(out), {z}, [pz = z.n, blocks, n, d, inv](Node<T>& self) {
        Tensor<T> g(pz->val.shape);
        for (int b = 0; b < blocks; ++b)
            for (size_t i = 0; i < size_t(n) * d; ++i) g.data[size_t(b) * n * d + i] = self.grad.data[i] * inv;
        pz->accum(g);
    });
}

template <class T>
inline Var<T> reshape(const Var<T>& x, std::vector<int> shape) {
    if (Tensor<T>::numel_of(shape) != x.numel()) throw DimensionError("reshape: element count mismatch");
    Tensor<T> out;
    out.shape = shape;
    out.data = x.val().data;
    return ad_detail::make_node<T>(std::move(out), {x}, [px = x.n](Node<T>& self) {
        Tensor<T> g;
        g.shape = px->val.shape;
        g.data = self.grad.data;
        px->accum(g);
    });
}

/// out = a + s elementwise.
template <class T>
inline Var<T> shift(const Var<T>& a, T s) {
    Tensor<T> out = a.val();
    for (auto& v : out.data) v += s;
    return ad_detail::make_node<T>(std::move(out), {a},
                                   [pa = a.n](Node<T>& self) { pa->accum(self.grad); });
}

// ---------------------------------------------------------------------------
// named parameter registry
// ---------------------------------------------------------------------------

template <class T>
struct ParamSet {
    std::map<std::string, Var<T>> entries;

    Var<T> add(const std::string& name, Tensor<T> init) {
        auto v = Var<T>::param(std::move(init));
        auto [it, fresh] = entries.emplace(name, v);
        if (!fresh) throw ParameterError("duplicate parameter name '" + name + "'");
        return v;
    }
    void zero_grads() {
        for (auto& [name, v] : entries) v.n->zero_grad();
    }
    std::int64_t count() const {
        std::int64_t n = 0;
        for (const auto& [name, v] : entries) n += v.numel();
        return n;
    }
};

}  // namespace mind
