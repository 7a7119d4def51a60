#pragma once

#include "pcpmae/geometry.hpp"
#include "pcpmae/ops.hpp"

namespace pcpmae {

// ---------------------------------------------------------------------------
// Fixed sin-cos positional embedding of 3-D coordinates
//
// For each coordinate c in {x, y, z} and j = 1..D/6 the pair
// sin(c / w_j), cos(c / w_j) with w_j = e^{2 j / (D/6)} is emitted, and the
// three D/3 blocks are concatenated in x, y, z order.
// ---------------------------------------------------------------------------

inline void check_pe_width(std::int64_t d, const char* op) {
    if (d <= 0 || d % 6 != 0)
        throw std::invalid_argument(std::string(op) + ": embedding width " + std::to_string(d) +
                                    " must be a positive multiple of 6");
}

template <class Real>
std::vector<Real> sincos_pe_row(const Point3& c, std::int64_t d) {
    check_pe_width(d, "sincos_pe");
    const std::int64_t per_block = d / 6;
    std::vector<Real> out(static_cast<std::size_t>(d));
    for (int q = 0; q < 3; ++q) {
        const double coord = c[q];
        for (std::int64_t j = 1; j <= per_block; ++j) {
            const double omega = std::exp(2.0 * static_cast<double>(j) /
                                          static_cast<double>(per_block));
            const std::size_t base = static_cast<std::size_t>(q * (d / 3) + 2 * (j - 1));
            out[base] = static_cast<Real>(std::sin(coord / omega));
            out[base + 1] = static_cast<Real>(std::cos(coord / omega));
        }
    }
    return out;
}

template <class Real>
std::vector<Real> sincos_pe_values(const std::vector<Point3>& centers, std::int64_t d) {
    check_pe_width(d, "sincos_pe");
    std::vector<Real> out;
    out.reserve(centers.size() * static_cast<std::size_t>(d));
    for (const auto& c : centers) {
        auto row = sincos_pe_row<Real>(c, d);
        out.insert(out.end(), row.begin(), row.end());
    }
    return out;
}

// Differentiable form: coords [..., 3] -> [..., D].
template <class Real>
Tensor<Real> sincos_pe_op(const Tensor<Real>& coords, std::int64_t d) {
    check_pe_width(d, "sincos_pe");
    if (coords.rank() < 1 || coords.shape().back() != 3)
        throw std::invalid_argument("sincos_pe: expected [..., 3], got " +
                                    shape_str(coords.shape()));
    const std::int64_t rows = coords.numel() / 3;
    const std::int64_t per_block = d / 6;
    Shape out_shape = coords.shape();
    out_shape.back() = d;
    Tensor<Real> out = detail::make_op_node<Real>(out_shape, "sincos_pe", {coords.node()});
    std::vector<Real> omegas(static_cast<std::size_t>(per_block));
    for (std::int64_t j = 1; j <= per_block; ++j)
        omegas[j - 1] = static_cast<Real>(
            std::exp(2.0 * static_cast<double>(j) / static_cast<double>(per_block)));
    const auto& cv = coords.data();
    auto& ov = out.data();
    for (std::int64_t r = 0; r < rows; ++r)
        for (int q = 0; q < 3; ++q) {
            const Real coord = cv[r * 3 + q];
            for (std::int64_t j = 0; j < per_block; ++j) {
                const Real arg = coord / omegas[j];
                const std::size_t base = static_cast<std::size_t>(r * d + q * (d / 3) + 2 * j);
                ov[base] = std::sin(arg);
                ov[base + 1] = std::cos(arg);
            }
        }
    if (out.requires_grad()) {
        out.node()->backward = [rows, d, per_block, omegas](Node<Real>& self) {
            Node<Real>* p = self.parents[0].get();
            if (!p->requires_grad) return;
            for (std::int64_t r = 0; r < rows; ++r)
                for (int q = 0; q < 3; ++q) {
                    Real acc = 0;
                    for (std::int64_t j = 0; j < per_block; ++j) {
                        const std::size_t base =
                            static_cast<std::size_t>(r * d + q * (d / 3) + 2 * j);
                        const Real s = self.value[base];
                        const Real c = self.value[base + 1];
                        acc += (self.grad[base] * c - self.grad[base + 1] * s) / omegas[j];
                    }
                    p->grad[r * 3 + q] += acc;
                }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// PEM: the learnable map from sin-cos embeddings to model space, shared
// between visible and masked centers.
// ---------------------------------------------------------------------------

template <class Real>
struct PemWeights {
    Tensor<Real> fc1_w, fc1_b, fc2_w, fc2_b;
};

// Two-layer row-wise MLP (D -> D -> D, GELU between).
template <class Real>
Tensor<Real> pem_forward(const Tensor<Real>& x, const PemWeights<Real>& w) {
    if (x.shape().back() != w.fc1_w.dim(0))
        throw std::invalid_argument("pem: input width " + std::to_string(x.shape().back()) +
                                    " does not match weights " + shape_str(w.fc1_w.shape()));
    return linear(gelu(linear(x, w.fc1_w, w.fc1_b)), w.fc2_w, w.fc2_b);
}

// ---------------------------------------------------------------------------
// Mini-PointNet patch tokenizer
//
// Stage 1 lifts each point to 128 features; the per-patch max-pool is
// concatenated back onto every point (256); stage 2 plus a projection map to
// D and a final max-pool gives one token per patch.
// ---------------------------------------------------------------------------

inline constexpr std::int64_t kPointNetStage1 = 128;
inline constexpr std::int64_t kPointNetStage2 = 256;

template <class Real>
struct PointNetWeights {
    Tensor<Real> s1_w, s1_b;      // 3 -> 128
    Tensor<Real> s2_w, s2_b;      // 256 -> 256
    Tensor<Real> proj_w, proj_b;  // 256 -> D
};

// patches [..., k, 3] -> tokens [..., D]; permutation-invariant over the k
// points of each patch.
template <class Real>
Tensor<Real> mini_pointnet_forward(const Tensor<Real>& patches, const PointNetWeights<Real>& w) {
    if (patches.rank() < 2 || patches.shape().back() != 3)
        throw std::invalid_argument("mini_pointnet: expected [..., k, 3], got " +
                                    shape_str(patches.shape()));
    const std::int64_t k = patches.shape()[patches.rank() - 2];
    const std::int64_t groups = patches.numel() / (k * 3);
    const std::int64_t d_out = w.proj_w.dim(1);

    auto x = reshape(patches, {groups, k, 3});
    auto h1 = gelu(linear(x, w.s1_w, w.s1_b));                       // [P, k, 128]
    auto pooled = max_reduce(h1, 1);                                 // [P, 128]
    auto tiled = repeat(reshape(pooled, {groups, 1, kPointNetStage1}), 1, k);
    auto cat = concat(h1, tiled, 2);                                 // [P, k, 256]
    auto h2 = gelu(linear(cat, w.s2_w, w.s2_b));                     // [P, k, 256]
    auto lifted = linear(h2, w.proj_w, w.proj_b);                    // [P, k, D]
    auto token = max_reduce(lifted, 1);                              // [P, D]

    Shape out_shape(patches.shape().begin(), patches.shape().end() - 2);
    out_shape.push_back(d_out);
    return reshape(token, out_shape);
}

}  // namespace pcpmae
