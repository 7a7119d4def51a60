#pragma once

#include "pcpmae/ops.hpp"

namespace pcpmae {

namespace detail {

template <class Real>
void check_target(const Tensor<Real>& pred, const std::vector<Real>& target, const char* op) {
    if (static_cast<std::int64_t>(target.size()) != pred.numel())
        throw std::invalid_argument(std::string(op) + ": prediction " + shape_str(pred.shape()) +
                                    " vs target length " + std::to_string(target.size()));
}

template <class Real>
void check_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(a.shape()) +
                                    " and " + shape_str(b.shape()) + " differ");
}

// Elementwise penalty reduced by mean over all entries, with gradients to
// both operands. pen(d) and dpen(d) act on the residual d = a - b.
template <class Real, class Pen, class DPen>
Tensor<Real> residual_mean_loss(const Tensor<Real>& a, const Tensor<Real>& b, const char* name,
                                Pen pen, DPen dpen) {
    check_same_shape(a, b, name);
    Tensor<Real> out = make_op_node<Real>({1}, name, {a.node(), b.node()});
    const auto& av = a.data();
    const auto& bv = b.data();
    const std::size_t n = av.size();
    Real acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += pen(av[i] - bv[i]);
    out.data()[0] = acc / static_cast<Real>(n);
    if (out.requires_grad()) {
        out.node()->backward = [dpen, n](Node<Real>& self) {
            Node<Real>* pa = self.parents[0].get();
            Node<Real>* pb = self.parents[1].get();
            const Real g = self.grad[0] / static_cast<Real>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const Real d = dpen(pa->value[i] - pb->value[i]) * g;
                if (pa->requires_grad) pa->grad[i] += d;
                if (pb->requires_grad) pb->grad[i] -= d;
            }
        };
    }
    return out;
}

}  // namespace detail

// Mean squared error between two tensors of equal shape.
template <class Real>
Tensor<Real> mse_loss(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::residual_mean_loss(
        a, b, "mse", [](Real d) { return d * d; }, [](Real d) { return Real(2) * d; });
}

template <class Real>
Tensor<Real> l1_loss(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::residual_mean_loss(
        a, b, "l1", [](Real d) { return std::abs(d); },
        [](Real d) { return d > Real(0) ? Real(1) : (d < Real(0) ? Real(-1) : Real(0)); });
}

// Huber with beta = 1, mean-reduced.
template <class Real>
Tensor<Real> smooth_l1_loss(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::residual_mean_loss(
        a, b, "smooth_l1",
        [](Real d) {
            const Real ad = std::abs(d);
            return ad < Real(1) ? Real(0.5) * d * d : ad - Real(0.5);
        },
        [](Real d) { return std::clamp(d, Real(-1), Real(1)); });
}

// Mean over rows of (1 - cosine similarity); rows are the last axis.
// Gradients flow to both operands.
template <class Real>
Tensor<Real> cosine_loss(const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::check_same_shape(a, b, "cosine_loss");
    if (a.rank() < 1) throw std::invalid_argument("cosine_loss: rank >= 1 required");
    const std::int64_t width = a.shape().back();
    const std::int64_t rows = a.numel() / std::max<std::int64_t>(width, 1);
    Tensor<Real> out = detail::make_op_node<Real>({1}, "cosine_loss", {a.node(), b.node()});
    const auto& av = a.data();
    const auto& bv = b.data();
    Real acc = 0;
    for (std::int64_t r = 0; r < rows; ++r) {
        const Real* p = av.data() + r * width;
        const Real* t = bv.data() + r * width;
        Real dot = 0, np = 0, nt = 0;
        for (std::int64_t j = 0; j < width; ++j) {
            dot += p[j] * t[j];
            np += p[j] * p[j];
            nt += t[j] * t[j];
        }
        const Real denom = std::max(std::sqrt(np) * std::sqrt(nt), Real(1e-12));
        acc += Real(1) - dot / denom;
    }
    out.data()[0] = acc / static_cast<Real>(std::max<std::int64_t>(rows, 1));
    if (out.requires_grad()) {
        out.node()->backward = [rows, width](Node<Real>& self) {
            Node<Real>* pa = self.parents[0].get();
            Node<Real>* pb = self.parents[1].get();
            const Real g = self.grad[0] / static_cast<Real>(std::max<std::int64_t>(rows, 1));
            for (std::int64_t r = 0; r < rows; ++r) {
                const Real* p = pa->value.data() + r * width;
                const Real* t = pb->value.data() + r * width;
                Real dot = 0, np = 0, nt = 0;
                for (std::int64_t j = 0; j < width; ++j) {
                    dot += p[j] * t[j];
                    np += p[j] * p[j];
                    nt += t[j] * t[j];
                }
                const Real norm_p = std::sqrt(np), norm_t = std::sqrt(nt);
                const Real denom = std::max(norm_p * norm_t, Real(1e-12));
                for (std::int64_t j = 0; j < width; ++j) {
                    if (pa->requires_grad) {
                        const Real dcos =
                            t[j] / denom - dot * p[j] / std::max(np * denom, Real(1e-12));
                        pa->grad[r * width + j] += -g * dcos;
                    }
                    if (pb->requires_grad) {
                        const Real dcos =
                            p[j] / denom - dot * t[j] / std::max(nt * denom, Real(1e-12));
                        pb->grad[r * width + j] += -g * dcos;
                    }
                }
            }
        };
    }
    return out;
}

// Constant-target conveniences over the two-tensor losses. With pred of
// shape mn x D the mse form is (1/(mnD)) * ||p - t||^2.
template <class Real>
Tensor<Real> mse_to_const(const Tensor<Real>& pred, const std::vector<Real>& target) {
    detail::check_target(pred, target, "mse_to_const");
    return mse_loss(pred, Tensor<Real>::from_data(pred.shape(), target));
}

template <class Real>
Tensor<Real> l1_to_const(const Tensor<Real>& pred, const std::vector<Real>& target) {
    detail::check_target(pred, target, "l1_to_const");
    return l1_loss(pred, Tensor<Real>::from_data(pred.shape(), target));
}

template <class Real>
Tensor<Real> smooth_l1_to_const(const Tensor<Real>& pred, const std::vector<Real>& target) {
    detail::check_target(pred, target, "smooth_l1_to_const");
    return smooth_l1_loss(pred, Tensor<Real>::from_data(pred.shape(), target));
}

template <class Real>
Tensor<Real> cosine_to_const(const Tensor<Real>& pred, const std::vector<Real>& target) {
    detail::check_target(pred, target, "cosine_to_const");
    return cosine_loss(pred, Tensor<Real>::from_data(pred.shape(), target));
}

// Symmetric squared-distance Chamfer loss between predicted and ground-truth
// point patches, averaged over patches. pred has shape [..., k, 3]; target is
// a constant array of the same total shape. The nearest-neighbor assignment
// from the forward pass is held fixed in the backward pass.
template <class Real>
Tensor<Real> chamfer_to_const(const Tensor<Real>& pred, const std::vector<Real>& target) {
    detail::check_target(pred, target, "chamfer_to_const");
    if (pred.rank() < 2 || pred.shape().back() != 3)
        throw std::invalid_argument("chamfer_to_const: expected [..., k, 3], got " +
                                    shape_str(pred.shape()));
    const std::int64_t k = pred.shape()[pred.rank() - 2];
    if (k == 0) throw std::invalid_argument("chamfer_to_const: empty point sets");
    const std::int64_t patches = pred.numel() / (k * 3);

    Tensor<Real> out = detail::make_op_node<Real>({1}, "chamfer", {pred.node()});
    const auto& pv = pred.data();
    // nn_ab[p*k+i]: index of the target point nearest to predicted point i;
    // nn_ba[p*k+j]: index of the predicted point nearest to target point j.
    std::vector<std::int64_t> nn_ab(static_cast<std::size_t>(patches * k));
    std::vector<std::int64_t> nn_ba(static_cast<std::size_t>(patches * k));
    Real total = 0;
    for (std::int64_t p = 0; p < patches; ++p) {
        const Real* a = pv.data() + p * k * 3;
        const Real* b = target.data() + p * k * 3;
        Real t1 = 0, t2 = 0;
        for (std::int64_t i = 0; i < k; ++i) {
            Real best = std::numeric_limits<Real>::infinity();
            std::int64_t bj = 0;
            for (std::int64_t j = 0; j < k; ++j) {
                const Real dx = a[i * 3] - b[j * 3];
                const Real dy = a[i * 3 + 1] - b[j * 3 + 1];
                const Real dz = a[i * 3 + 2] - b[j * 3 + 2];
                const Real d = dx * dx + dy * dy + dz * dz;
                if (d < best) {
                    best = d;
                    bj = j;
                }
            }
            t1 += best;
            nn_ab[p * k + i] = bj;
        }
        for (std::int64_t j = 0; j < k; ++j) {
            Real best = std::numeric_limits<Real>::infinity();
            std::int64_t bi = 0;
            for (std::int64_t i = 0; i < k; ++i) {
                const Real dx = a[i * 3] - b[j * 3];
                const Real dy = a[i * 3 + 1] - b[j * 3 + 1];
                const Real dz = a[i * 3 + 2] - b[j * 3 + 2];
                const Real d = dx * dx + dy * dy + dz * dz;
                if (d < best) {
                    best = d;
                    bi = i;
                }
            }
            t2 += best;
            nn_ba[p * k + j] = bi;
        }
        total += t1 / static_cast<Real>(k) + t2 / static_cast<Real>(k);
    }
    out.data()[0] = total / static_cast<Real>(patches);
    if (out.requires_grad()) {
        out.node()->backward = [target, nn_ab, nn_ba, patches, k](Node<Real>& self) {
            Node<Real>* pn = self.parents[0].get();
            if (!pn->requires_grad) return;
            const Real g = self.grad[0] / static_cast<Real>(patches);
            const Real gk = g * Real(2) / static_cast<Real>(k);
            for (std::int64_t p = 0; p < patches; ++p) {
                const Real* a = pn->value.data() + p * k * 3;
                const Real* b = target.data() + p * k * 3;
                Real* ga = pn->grad.data() + p * k * 3;
                for (std::int64_t i = 0; i < k; ++i) {
                    const std::int64_t j = nn_ab[p * k + i];
                    for (int c = 0; c < 3; ++c)
                        ga[i * 3 + c] += gk * (a[i * 3 + c] - b[j * 3 + c]);
                }
                for (std::int64_t j = 0; j < k; ++j) {
                    const std::int64_t i = nn_ba[p * k + j];
                    for (int c = 0; c < 3; ++c)
                        ga[i * 3 + c] += gk * (a[i * 3 + c] - b[j * 3 + c]);
                }
            }
        };
    }
    return out;
}

// Mean softmax cross-entropy over rows of logits [n, classes].
template <class Real>
Tensor<Real> cross_entropy(const Tensor<Real>& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2)
        throw std::invalid_argument("cross_entropy: logits must be [n, classes], got " +
                                    shape_str(logits.shape()));
    const std::int64_t n = logits.dim(0), c = logits.dim(1);
    if (static_cast<std::int64_t>(labels.size()) != n)
        throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(n) + " rows");
    for (int l : labels)
        if (l < 0 || l >= c)
            throw std::invalid_argument("cross_entropy: label " + std::to_string(l) +
                                        " outside [0," + std::to_string(c) + ")");
    Tensor<Real> out = detail::make_op_node<Real>({1}, "cross_entropy", {logits.node()});
    const auto& zv = logits.data();
    Real total = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const Real* z = zv.data() + i * c;
        Real mx = z[0];
        for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, z[j]);
        Real lse = 0;
        for (std::int64_t j = 0; j < c; ++j) lse += std::exp(z[j] - mx);
        lse = mx + std::log(lse);
        total += lse - z[labels[i]];
    }
    out.data()[0] = total / static_cast<Real>(n);
    if (out.requires_grad()) {
        out.node()->backward = [labels, n, c](Node<Real>& self) {
            Node<Real>* p = self.parents[0].get();
            if (!p->requires_grad) return;
            const Real g = self.grad[0] / static_cast<Real>(n);
            for (std::int64_t i = 0; i < n; ++i) {
                const Real* z = p->value.data() + i * c;
                Real mx = z[0];
                for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, z[j]);
                Real sum = 0;
                for (std::int64_t j = 0; j < c; ++j) sum += std::exp(z[j] - mx);
                for (std::int64_t j = 0; j < c; ++j) {
                    Real soft = std::exp(z[j] - mx) / sum;
                    if (j == labels[i]) soft -= Real(1);
                    p->grad[i * c + j] += g * soft;
                }
            }
        };
    }
    return out;
}

}  // namespace pcpmae
