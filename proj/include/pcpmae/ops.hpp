#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>

#include "pcpmae/tensor.hpp"

namespace pcpmae {

namespace detail {

inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        std::int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        std::int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw std::invalid_argument("broadcast: incompatible shapes " + shape_str(a) +
                                        " and " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `in` aligned to an output of rank `out_rank`; 0 where the
// input dimension is broadcast.
inline Shape aligned_strides(const Shape& in, const Shape& out) {
    Shape nat = strides_of(in);
    Shape st(out.size(), 0);
    const std::size_t off = out.size() - in.size();
    for (std::size_t i = 0; i < in.size(); ++i)
        st[off + i] = (in[i] == 1 && out[off + i] != 1) ? 0 : nat[i];
    return st;
}

// Walks every index of `out`, passing (out_idx, a_idx, b_idx) to f.
template <class F>
void for_each_broadcast(const Shape& out, const Shape& sa, const Shape& sb, F&& f) {
    const std::int64_t n = numel_of(out);
    if (n == 0) return;
    const Shape st_a = aligned_strides(sa, out);
    const Shape st_b = aligned_strides(sb, out);
    const std::size_t r = out.size();
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t ia = 0, ib = 0;
    for (std::int64_t io = 0; io < n; ++io) {
        f(static_cast<std::size_t>(io), static_cast<std::size_t>(ia), static_cast<std::size_t>(ib));
        for (std::int64_t d = static_cast<std::int64_t>(r) - 1; d >= 0; --d) {
            ia += st_a[d];
            ib += st_b[d];
            if (++idx[d] < out[d]) break;
            idx[d] = 0;
            ia -= st_a[d] * out[d];
            ib -= st_b[d] * out[d];
        }
    }
}

template <class Real>
Tensor<Real> make_op_node(Shape shape, const char* op,
                          std::vector<std::shared_ptr<Node<Real>>> parents) {
    Tensor<Real> t = Tensor<Real>::zeros(std::move(shape));
    auto n = t.node();
    n->op = op;
    bool rg = false;
    for (auto& p : parents) rg = rg || p->requires_grad;
    n->requires_grad = rg;
    n->parents = std::move(parents);
    return t;
}

// Splits a shape into (outer, axis, inner) extents around `axis`.
inline void axis_extents(const Shape& s, std::size_t axis, std::int64_t& outer,
                         std::int64_t& len, std::int64_t& inner) {
    outer = 1;
    inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    len = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

inline void check_axis(const Shape& s, std::size_t axis, const char* op) {
    if (axis >= s.size())
        throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) +
                                    " out of range for shape " + shape_str(s));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary operations with numpy-style broadcasting
// ---------------------------------------------------------------------------

namespace detail {

// Generic broadcast binary op. dfa/dfb give d(out)/da and d(out)/db from
// the two operand values.
template <class Real, class Fwd, class Dfa, class Dfb>
Tensor<Real> broadcast_binary(const Tensor<Real>& a, const Tensor<Real>& b, const char* name,
                              Fwd fwd, Dfa dfa, Dfb dfb) {
    Shape out_shape = broadcast_shapes(a.shape(), b.shape());
    Tensor<Real> out = make_op_node<Real>(out_shape, name, {a.node(), b.node()});
    auto* an = a.node().get();
    auto* bn = b.node().get();
    auto& ov = out.data();
    for_each_broadcast(out_shape, a.shape(), b.shape(),
                       [&](std::size_t io, std::size_t ia, std::size_t ib) {
                           ov[io] = fwd(an->value[ia], bn->value[ib]);
                       });
    if (out.requires_grad()) {
        out.node()->backward = [dfa, dfb](Node<Real>& self) {
            Node<Real>* pa = self.parents[0].get();
            Node<Real>* pb = self.parents[1].get();
            for_each_broadcast(self.shape, pa->shape, pb->shape,
                               [&](std::size_t io, std::size_t ia, std::size_t ib) {
                                   const Real g = self.grad[io];
                                   if (pa->requires_grad)
                                       pa->grad[ia] += g * dfa(pa->value[ia], pb->value[ib]);
                                   if (pb->requires_grad)
                                       pb->grad[ib] += g * dfb(pa->value[ia], pb->value[ib]);
                               });
        };
    }
    return out;
}

}  // namespace detail

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::broadcast_binary(
        a, b, "add", [](Real x, Real y) { return x + y; }, [](Real, Real) { return Real(1); },
        [](Real, Real) { return Real(1); });
}

template <class Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::broadcast_binary(
        a, b, "sub", [](Real x, Real y) { return x - y; }, [](Real, Real) { return Real(1); },
        [](Real, Real) { return Real(-1); });
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::broadcast_binary(
        a, b, "mul", [](Real x, Real y) { return x * y; }, [](Real, Real y) { return y; },
        [](Real x, Real) { return x; });
}

template <class Real>
Tensor<Real> scalar_mul(const Tensor<Real>& a, Real c) {
    Tensor<Real> out = detail::make_op_node<Real>(a.shape(), "scalar_mul", {a.node()});
    const auto& av = a.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * c;
    if (out.requires_grad()) {
        out.node()->backward = [c](Node<Real>& self) {
            Node<Real>* p = self.parents[0].get();
            if (!p->requires_grad) return;
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * c;
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Matrix multiplication with broadcastable batch dimensions
// ---------------------------------------------------------------------------

namespace detail {

template <class Real>
void gemm_nn_acc(const Real* __restrict a, const Real* __restrict b, Real* __restrict c,
                 std::int64_t r, std::int64_t s, std::int64_t t) {
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t k = 0; k < s; ++k) {
            const Real av = a[i * s + k];
            const Real* brow = b + k * t;
            Real* crow = c + i * t;
            for (std::int64_t j = 0; j < t; ++j) crow[j] += av * brow[j];
        }
}

// c[r,s] += a[r,t] * b[s,t]^T. Runs over a transposed copy of b so the
// inner loop is a contiguous non-reducing accumulation.
template <class Real>
void gemm_nt_acc(const Real* __restrict a, const Real* __restrict b, Real* __restrict c,
                 std::int64_t r, std::int64_t t, std::int64_t s) {
    static thread_local std::vector<Real> scratch;
    scratch.resize(static_cast<std::size_t>(t * s));
    for (std::int64_t k = 0; k < s; ++k)
        for (std::int64_t j = 0; j < t; ++j) scratch[j * s + k] = b[k * t + j];
    gemm_nn_acc(a, scratch.data(), c, r, t, s);
}

// c[s,t] += a[r,s]^T * b[r,t]
template <class Real>
void gemm_tn_acc(const Real* __restrict a, const Real* __restrict b, Real* __restrict c,
                 std::int64_t r, std::int64_t s, std::int64_t t) {
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t k = 0; k < s; ++k) {
            const Real av = a[i * s + k];
            const Real* brow = b + i * t;
            Real* crow = c + k * t;
            for (std::int64_t j = 0; j < t; ++j) crow[j] += av * brow[j];
        }
}

// Iterates broadcast batch elements of a matmul, calling f with the three
// flat offsets of the current a/b/out matrices.
template <class F>
void for_each_batch(const Shape& batch, const Shape& a_batch, const Shape& b_batch, F&& f,
                    std::int64_t a_mat, std::int64_t b_mat, std::int64_t o_mat) {
    std::int64_t nb = numel_of(batch);
    if (batch.empty()) nb = 1;
    Shape st_a = aligned_strides(a_batch, batch);
    Shape st_b = aligned_strides(b_batch, batch);
    std::vector<std::int64_t> idx(batch.size(), 0);
    std::int64_t ia = 0, ib = 0;
    for (std::int64_t io = 0; io < nb; ++io) {
        f(io * o_mat, ia * a_mat, ib * b_mat);
        for (std::int64_t d = static_cast<std::int64_t>(batch.size()) - 1; d >= 0; --d) {
            ia += st_a[d];
            ib += st_b[d];
            if (++idx[d] < batch[d]) break;
            idx[d] = 0;
            ia -= st_a[d] * batch[d];
            ib -= st_b[d] * batch[d];
        }
    }
}

}  // namespace detail

template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2)
        throw std::invalid_argument("matmul: operands must have rank >= 2, got " + shape_str(sa) +
                                    " and " + shape_str(sb));
    const std::int64_t r = sa[sa.size() - 2], s = sa[sa.size() - 1];
    const std::int64_t s2 = sb[sb.size() - 2], t = sb[sb.size() - 1];
    if (s != s2)
        throw std::invalid_argument("matmul: inner dimensions disagree for shapes " +
                                    shape_str(sa) + " and " + shape_str(sb));
    Shape a_batch(sa.begin(), sa.end() - 2);
    Shape b_batch(sb.begin(), sb.end() - 2);
    Shape batch = detail::broadcast_shapes(a_batch, b_batch);
    Shape out_shape = batch;
    out_shape.push_back(r);
    out_shape.push_back(t);

    Tensor<Real> out = detail::make_op_node<Real>(out_shape, "matmul", {a.node(), b.node()});
    const Real* ap = a.data().data();
    const Real* bp = b.data().data();
    Real* op = out.data().data();
    detail::for_each_batch(
        batch, a_batch, b_batch,
        [&](std::int64_t oo, std::int64_t ao, std::int64_t bo) {
            detail::gemm_nn_acc(ap + ao, bp + bo, op + oo, r, s, t);
        },
        r * s, s * t, r * t);

    if (out.requires_grad()) {
        out.node()->backward = [batch, a_batch, b_batch, r, s, t](Node<Real>& self) {
            Node<Real>* pa = self.parents[0].get();
            Node<Real>* pb = self.parents[1].get();
            const Real* gp = self.grad.data();
            detail::for_each_batch(
                batch, a_batch, b_batch,
                [&](std::int64_t oo, std::int64_t ao, std::int64_t bo) {
                    if (pa->requires_grad)
                        detail::gemm_nt_acc(gp + oo, pb->value.data() + bo, pa->grad.data() + ao,
                                            r, t, s);
                    if (pb->requires_grad)
                        detail::gemm_tn_acc(pa->value.data() + ao, gp + oo, pb->grad.data() + bo,
                                            r, s, t);
                },
                r * s, s * t, r * t);
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> reshape(const Tensor<Real>& a, Shape shape) {
    if (numel_of(shape) != a.numel())
        throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                    shape_str(shape));
    Tensor<Real> out = detail::make_op_node<Real>(std::move(shape), "reshape", {a.node()});
    out.data() = a.data();
    if (out.requires_grad()) {
        out.node()->backward = [](Node<Real>& self) {
            Node<Real>* p = self.parents[0].get();
            if (!p->requires_grad) return;
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        };
    }
    return out;
}

template <class Real>
Tensor<Real> permute(const Tensor<Real>& a, std::vector<std::size_t> perm) {
    const Shape& s = a.shape();
    if (perm.size() != s.size())
        throw std::invalid_argument("permute: axes list does not match rank of " + shape_str(s));
    Shape out_shape(s.size());
    for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = s[perm[i]];
    Tensor<Real> out = detail::make_op_node<Real>(out_shape, "permute", {a.node()});

    const Shape in_str = strides_of(s);
    Shape gather(s.size());  // stride in input per output axis
    for (std::size_t i = 0; i < perm.size(); ++i) gather[i] = in_str[perm[i]];

    const auto& av = a.data();
    auto& ov = out.data();
    const std::int64_t n = out.numel();
    std::vector<std::int64_t> idx(s.size(), 0);
    std::int64_t src = 0;
    for (std::int64_t io = 0; io < n; ++io) {
        ov[io] = av[src];
        for (std::int64_t d = static_cast<std::int64_t>(s.size()) - 1; d >= 0; --d) {
            src += gather[d];
            if (++idx[d] < out_shape[d]) break;
            idx[d] = 0;
            src -= gather[d] * out_shape[d];
        }
    }
    if (out.requires_grad()) {
        out.node()->backward = [gather, out_shape](Node<Real>& self) {
            Node<Real>* p = self.parents[0].get();
            if (!p->requires_grad) return;
            const std::int64_t n = numel_of(out_shape);
            std::vector<std::int64_t> idx(out_shape.size(), 0);
            std::int64_t src = 0;
            for (std::int64_t io = 0; io < n; ++io) {
                p->grad[src] += self.grad[io];
                for (std::int64_t d = static_cast<std::int64_t>(out_shape.size()) - 1; d >= 0; --d) {
                    src += gather[d];
                    if (++idx[d] < out_shape[d]) break;
                    idx[d] = 0;
                    src -= gather[d] * out_shape[d];
                }
            }
        };
    }
    return out;
}

template <class Real>
Tensor<Real> concat(const Tensor<Real>& a, const Tensor<Real>& b, std::size_t axis) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    detail::check_axis(sa, axis, "concat");
    if (sa.size() != sb.size())
        throw std::invalid_argument("concat: rank mismatch between " + shape_str(sa) + " and " +
                                    shape_str(sb));
    for (std::size_t i = 0; i < sa.size(); ++i)
        if (i != axis && sa[i] != sb[i])
            throw std::invalid_argument("concat: shapes " + shape_str(sa) + " and " +
                                        shape_str(sb) + " differ outside axis " +
                                        std::to_string(axis));
    Shape out_shape = sa;
    out_shape[axis] += sb[axis];

    std::int64_t outer, la, inner;
    detail::axis_extents(sa, axis, outer, la, inner);
    const std::int64_t lb = sb[axis];

    Tensor<Real> out = detail::make_op_node<Real>(out_shape, "concat", {a.node(), b.node()});
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (std::int64_t o = 0; o < outer; ++o) {
        std::copy_n(av.begin() + o * la * inner, la * inner,
                    ov.begin() + o * (la + lb) * inner);
        std::copy_n(bv.begin() + o * lb * inner, lb * inner,
                    ov.begin() + o * (la + lb) * inner + la * inner);
    }
    if (out.requires_grad()) {
        out.node()->backward = [outer, la, lb, inner](Node<Real>& self) {
            Node<Real>* pa = self.parents[0].get();
            Node<Real>* pb = self.parents[1].get();
            for (std::int64_t o = 0; o < outer; ++o) {
                const std::int64_t base = o * (la + lb) * inner;
                if (pa->requires_grad)
                    for (std::int64_t i = 0; i < la * inner; ++i)
                        pa->grad[o * la * inner + i] += self.grad[base + i];
                if (pb->requires_grad)
                    for (std::int64_t i = 0; i < lb * inner; ++i)
                        pb->grad[o * lb * inner + i] += self.grad[base + la * inner + i];
            }
        };
    }
    return out;
}

template <class Real>
Tensor<Real> slice(const Tensor<Real>& a, std::size_t axis, std::int64_t start, std::int64_t len) {
    const Shape& s = a.shape();
    detail::check_axis(s, axis, "slice");
    if (start < 0 || len < 0 || start + len > s[axis])
        throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                    std::to_string(start + len) + ") out of bounds for shape " +
                                    shape_str(s));
    Shape out_shape = s;
    out_shape[axis] = len;
    std::int64_t outer, l, inner;
    detail::axis_extents(s, axis, outer, l, inner);

    Tensor<Real> out = detail::make_op_node<Real>(out_shape, "slice", {a.node()});
    const auto& av = a.data();
    auto& ov = out.data();
    for (std::int64_t o = 0; o < outer; ++o)
        std::copy_n(av.begin() + (o * l + start) * inner, len * inner,
                    ov.begin() + o * len * inner);
    if (out.requires_grad()) {
        out.node()->backward = [outer, l, inner, start, len](Node<Real>& self) {
            Node<Real>* p = self.parents[0].get();
            if (!p->requires_grad) return;
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t i = 0; i < len * inner; ++i)
                    p->grad[(o * l + start) * inner + i] += self.grad[o * len * inner + i];
        };
    }
    return out;
}

// Replicates a size-1 axis `times` times.
template <class Real>
Tensor<Real> repeat(const Tensor<Real>& a, std::size_t axis, std::int64_t times) {
    const Shape& s = a.shape();
    detail::check_axis(s, axis, "repeat");
    if (s[axis] != 1)
        throw std::invalid_argument("repeat: axis " + std::to_string(axis) +
                                    " of shape " + shape_str(s) + " must have extent 1");
    Shape out_shape = s;
    out_shape[axis] = times;
    std::int64_t outer, l, inner;
    detail::axis_extents(s, axis, outer, l, inner);

    Tensor<Real> out = detail::make_op_node<Real>(out_shape, "repeat", {a.node()});
    const auto& av = a.data();
    auto& ov = out.data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t rep = 0; rep < times; ++rep)
            std::copy_n(av.begin() + o * inner, inner, ov.begin() + (o * times + rep) * inner);
    if (out.requires_grad()) {
        out.node()->backward = [outer, inner, times](Node<Real>& self) {
            Node<Real>* p = self.parents[0].get();
            if (!p->requires_grad) return;
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t rep = 0; rep < times; ++rep)
                    for (std::int64_t i = 0; i < inner; ++i)
                        p->grad[o * inner + i] += self.grad[(o * times + rep) * inner + i];
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> softmax(const Tensor<Real>& a, std::size_t axis) {
    const Shape& s = a.shape();
    detail::check_axis(s, axis, "softmax");
    std::int64_t outer, len, inner;
    detail::axis_extents(s, axis, outer, len, inner);

    Tensor<Real> out = detail::make_op_node<Real>(s, "softmax", {a.node()});
    const auto& av = a.data();
    auto& ov = out.data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t in = 0; in < inner; ++in) {
            const std::int64_t base = o * len * inner + in;
            Real mx = -std::numeric_limits<Real>::infinity();
            for (std::int64_t j = 0; j < len; ++j) mx = std::max(mx, av[base + j * inner]);
            Real sum = 0;
            for (std::int64_t j = 0; j < len; ++j) {
                const Real e = std::exp(av[base + j * inner] - mx);
                ov[base + j * inner] = e;
                sum += e;
            }
            for (std::int64_t j = 0; j < len; ++j) ov[base + j * inner] /= sum;
        }
    if (out.requires_grad()) {
        out.node()->backward = [outer, len, inner](Node<Real>& self) {
            Node<Real>* p = self.parents[0].get();
            if (!p->requires_grad) return;
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t in = 0; in < inner; ++in) {
                    const std::int64_t base = o * len * inner + in;
                    Real dot = 0;
                    for (std::int64_t j = 0; j < len; ++j)
                        dot += self.grad[base + j * inner] * self.value[base + j * inner];
                    for (std::int64_t j = 0; j < len; ++j)
                        p->grad[base + j * inner] += self.value[base + j * inner] *
                                                     (self.grad[base + j * inner] - dot);
                }
        };
    }
    return out;
}

// Normalizes the last axis to zero mean / unit variance, then applies the
// affine gain and bias.
template <class Real>
Tensor<Real> layer_norm(const Tensor<Real>& a, const Tensor<Real>& gain, const Tensor<Real>& bias,
                        Real eps = Real(1e-5)) {
    const Shape& s = a.shape();
    if (s.empty()) throw std::invalid_argument("layer_norm: input must have rank >= 1");
    const std::int64_t d = s.back();
    if (gain.numel() != d || bias.numel() != d)
        throw std::invalid_argument("layer_norm: gain/bias length must equal last dimension " +
                                    std::to_string(d) + " of " + shape_str(s));
    const std::int64_t rows = a.numel() / std::max<std::int64_t>(d, 1);

    Tensor<Real> out =
        detail::make_op_node<Real>(s, "layer_norm", {a.node(), gain.node(), bias.node()});
    const auto& av = a.data();
    const auto& gv = gain.data();
    const auto& bv = bias.data();
    auto& ov = out.data();
    std::vector<Real> inv_std(rows), mean(rows);
    for (std::int64_t r = 0; r < rows; ++r) {
        const Real* x = av.data() + r * d;
        Real mu = 0;
        for (std::int64_t j = 0; j < d; ++j) mu += x[j];
        mu /= static_cast<Real>(d);
        Real var = 0;
        for (std::int64_t j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= static_cast<Real>(d);
        const Real is = Real(1) / std::sqrt(var + eps);
        mean[r] = mu;
        inv_std[r] = is;
        for (std::int64_t j = 0; j < d; ++j) ov[r * d + j] = (x[j] - mu) * is * gv[j] + bv[j];
    }
    if (out.requires_grad()) {
        out.node()->backward = [rows, d, mean, inv_std](Node<Real>& self) {
            Node<Real>* px = self.parents[0].get();
            Node<Real>* pg = self.parents[1].get();
            Node<Real>* pb = self.parents[2].get();
            for (std::int64_t r = 0; r < rows; ++r) {
                const Real* x = px->value.data() + r * d;
                const Real* dy = self.grad.data() + r * d;
                const Real mu = mean[r], is = inv_std[r];
                if (pb->requires_grad)
                    for (std::int64_t j = 0; j < d; ++j) pb->grad[j] += dy[j];
                if (pg->requires_grad)
                    for (std::int64_t j = 0; j < d; ++j)
                        pg->grad[j] += dy[j] * (x[j] - mu) * is;
                if (px->requires_grad) {
                    Real sum_dxhat = 0, sum_dxhat_xhat = 0;
                    for (std::int64_t j = 0; j < d; ++j) {
                        const Real dxhat = dy[j] * pg->value[j];
                        const Real xhat = (x[j] - mu) * is;
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                    }
                    const Real inv_d = Real(1) / static_cast<Real>(d);
                    for (std::int64_t j = 0; j < d; ++j) {
                        const Real dxhat = dy[j] * pg->value[j];
                        const Real xhat = (x[j] - mu) * is;
                        px->grad[r * d + j] +=
                            is * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
                    }
                }
            }
        };
    }
    return out;
}

namespace detail {
template <class Real>
struct GeluConst {
    static constexpr Real c = Real(0.7978845608028653559);  // sqrt(2/pi)
    static constexpr Real a = Real(0.044715);
};
}  // namespace detail

// Tanh-approximation GELU.
template <class Real>
Tensor<Real> gelu(const Tensor<Real>& a) {
    using K = detail::GeluConst<Real>;
    Tensor<Real> out = detail::make_op_node<Real>(a.shape(), "gelu", {a.node()});
    const auto& av = a.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < av.size(); ++i) {
        const Real x = av[i];
        ov[i] = Real(0.5) * x * (Real(1) + std::tanh(K::c * (x + K::a * x * x * x)));
    }
    if (out.requires_grad()) {
        out.node()->backward = [](Node<Real>& self) {
            Node<Real>* p = self.parents[0].get();
            if (!p->requires_grad) return;
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const Real x = p->value[i];
                const Real u = K::c * (x + K::a * x * x * x);
                const Real th = std::tanh(u);
                const Real sech2 = Real(1) - th * th;
                const Real dydx = Real(0.5) * (Real(1) + th) +
                                  Real(0.5) * x * sech2 * K::c * (Real(1) + Real(3) * K::a * x * x);
                p->grad[i] += self.grad[i] * dydx;
            }
        };
    }
    return out;
}

template <class Real>
Tensor<Real> relu(const Tensor<Real>& a) {
    Tensor<Real> out = detail::make_op_node<Real>(a.shape(), "relu", {a.node()});
    const auto& av = a.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] > Real(0) ? av[i] : Real(0);
    if (out.requires_grad()) {
        out.node()->backward = [](Node<Real>& self) {
            Node<Real>* p = self.parents[0].get();
            if (!p->requires_grad) return;
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (p->value[i] > Real(0)) p->grad[i] += self.grad[i];
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

// Maximum over one axis (axis removed). Ties route the gradient to the
// lowest index.
template <class Real>
Tensor<Real> max_reduce(const Tensor<Real>& a, std::size_t axis) {
    const Shape& s = a.shape();
    detail::check_axis(s, axis, "max_reduce");
    std::int64_t outer, len, inner;
    detail::axis_extents(s, axis, outer, len, inner);
    if (len == 0) throw std::invalid_argument("max_reduce: empty axis in " + shape_str(s));
    Shape out_shape;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (i != axis) out_shape.push_back(s[i]);
    if (out_shape.empty()) out_shape.push_back(1);

    Tensor<Real> out = detail::make_op_node<Real>(out_shape, "max_reduce", {a.node()});
    const auto& av = a.data();
    auto& ov = out.data();
    std::vector<std::int64_t> argmax(static_cast<std::size_t>(outer * inner));
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t in = 0; in < inner; ++in) {
            const std::int64_t base = o * len * inner + in;
            Real best = av[base];
            std::int64_t best_j = 0;
            for (std::int64_t j = 1; j < len; ++j)
                if (av[base + j * inner] > best) {
                    best = av[base + j * inner];
                    best_j = j;
                }
            ov[o * inner + in] = best;
            argmax[o * inner + in] = base + best_j * inner;
        }
    if (out.requires_grad()) {
        out.node()->backward = [argmax](Node<Real>& self) {
            Node<Real>* p = self.parents[0].get();
            if (!p->requires_grad) return;
            for (std::size_t i = 0; i < argmax.size(); ++i) p->grad[argmax[i]] += self.grad[i];
        };
    }
    return out;
}

template <class Real>
Tensor<Real> mean_reduce(const Tensor<Real>& a, std::size_t axis) {
    const Shape& s = a.shape();
    detail::check_axis(s, axis, "mean_reduce");
    std::int64_t outer, len, inner;
    detail::axis_extents(s, axis, outer, len, inner);
    if (len == 0) throw std::invalid_argument("mean_reduce: empty axis in " + shape_str(s));
    Shape out_shape;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (i != axis) out_shape.push_back(s[i]);
    if (out_shape.empty()) out_shape.push_back(1);

    Tensor<Real> out = detail::make_op_node<Real>(out_shape, "mean_reduce", {a.node()});
    const auto& av = a.data();
    auto& ov = out.data();
    const Real scale = Real(1) / static_cast<Real>(len);
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t in = 0; in < inner; ++in) {
            Real acc = 0;
            for (std::int64_t j = 0; j < len; ++j) acc += av[o * len * inner + j * inner + in];
            ov[o * inner + in] = acc * scale;
        }
    if (out.requires_grad()) {
        out.node()->backward = [outer, len, inner, scale](Node<Real>& self) {
            Node<Real>* p = self.parents[0].get();
            if (!p->requires_grad) return;
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t in = 0; in < inner; ++in) {
                    const Real g = self.grad[o * inner + in] * scale;
                    for (std::int64_t j = 0; j < len; ++j)
                        p->grad[o * len * inner + j * inner + in] += g;
                }
        };
    }
    return out;
}

template <class Real>
Tensor<Real> sum_all(const Tensor<Real>& a) {
    Tensor<Real> out = detail::make_op_node<Real>({1}, "sum_all", {a.node()});
    Real acc = 0;
    for (Real v : a.data()) acc += v;
    out.data()[0] = acc;
    if (out.requires_grad()) {
        out.node()->backward = [](Node<Real>& self) {
            Node<Real>* p = self.parents[0].get();
            if (!p->requires_grad) return;
            for (auto& g : p->grad) g += self.grad[0];
        };
    }
    return out;
}

template <class Real>
Tensor<Real> mean_all(const Tensor<Real>& a) {
    if (a.numel() == 0) throw std::invalid_argument("mean_all: empty tensor");
    return scalar_mul(sum_all(a), Real(1) / static_cast<Real>(a.numel()));
}

// ---------------------------------------------------------------------------
// Gradient control
// ---------------------------------------------------------------------------

// Forward identity; the result is a fresh leaf with no backpropagation
// record, so no gradient flows to any ancestor of `a` through this edge.
template <class Real>
Tensor<Real> stop_gradient(const Tensor<Real>& a) {
    Tensor<Real> out = Tensor<Real>::from_data(a.shape(), a.data());
    out.node()->op = "stop_gradient";
    return out;
}

// ---------------------------------------------------------------------------
// Composites
// ---------------------------------------------------------------------------

// x @ W + b on the last axis.
template <class Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b) {
    return add(matmul(x, w), b);
}

}  // namespace pcpmae
