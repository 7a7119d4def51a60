#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcpmae/rng.hpp"

namespace pcpmae {

using Point3 = std::array<double, 3>;

struct PointCloud {
    std::vector<Point3> points;
    int label = -1;

    std::size_t size() const { return points.size(); }
};

// FPS centers plus their KNN neighborhoods, normalized by subtracting the
// center. point_indices[i][j] is the source index of patches[i][j].
struct PatchSet {
    std::vector<Point3> centers;                       // n x 3
    std::vector<std::vector<Point3>> patches;          // n x k x 3, center-relative
    std::vector<std::size_t> center_indices;           // n
    std::vector<std::vector<std::size_t>> point_indices;  // n x k
};

struct MaskSplit {
    std::vector<std::size_t> masked_indices;
    std::vector<std::size_t> visible_indices;
    double ratio = 0.0;
};

inline double squared_dist(const Point3& a, const Point3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

// Greedy farthest point sampling. The first pick is uniform from the given
// generator; each later pick maximizes the minimum squared distance to the
// chosen set, ties broken by lowest index.
inline std::vector<std::size_t> fps(const PointCloud& cloud, std::size_t n, Rng& rng) {
    const std::size_t p = cloud.size();
    if (n < 1 || n > p)
        throw std::invalid_argument("fps: requested " + std::to_string(n) + " centers from " +
                                    std::to_string(p) + " points");
    std::vector<std::size_t> chosen;
    chosen.reserve(n);
    std::size_t cur = static_cast<std::size_t>(rng.uniform_int(p));
    chosen.push_back(cur);
    std::vector<double> min_d(p, std::numeric_limits<double>::infinity());
    for (std::size_t round = 1; round < n; ++round) {
        double best = -1.0;
        std::size_t best_i = 0;
        for (std::size_t i = 0; i < p; ++i) {
            const double d = squared_dist(cloud.points[i], cloud.points[cur]);
            if (d < min_d[i]) min_d[i] = d;
            if (min_d[i] > best) {
                best = min_d[i];
                best_i = i;
            }
        }
        cur = best_i;
        chosen.push_back(cur);
    }
    return chosen;
}

inline std::vector<std::size_t> fps(const PointCloud& cloud, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    return fps(cloud, n, rng);
}

// k nearest points (squared distance, ties by lowest index) per center,
// normalized with the corresponding center. The center itself is at distance
// zero and is always a member of its own patch.
inline PatchSet knn_group(const PointCloud& cloud, const std::vector<std::size_t>& center_indices,
                          std::size_t k) {
    const std::size_t p = cloud.size();
    if (k < 1 || k > p)
        throw std::invalid_argument("knn_group: k=" + std::to_string(k) + " with " +
                                    std::to_string(p) + " points");
    PatchSet out;
    out.center_indices = center_indices;
    out.centers.reserve(center_indices.size());
    out.patches.reserve(center_indices.size());
    out.point_indices.reserve(center_indices.size());

    std::vector<std::pair<double, std::size_t>> order(p);
    for (std::size_t ci : center_indices) {
        if (ci >= p) throw std::invalid_argument("knn_group: center index out of range");
        const Point3& c = cloud.points[ci];
        for (std::size_t i = 0; i < p; ++i) order[i] = {squared_dist(cloud.points[i], c), i};
        std::partial_sort(order.begin(), order.begin() + k, order.end());
        out.centers.push_back(c);
        std::vector<Point3> patch(k);
        std::vector<std::size_t> idx(k);
        for (std::size_t j = 0; j < k; ++j) {
            const Point3& q = cloud.points[order[j].second];
            patch[j] = {q[0] - c[0], q[1] - c[1], q[2] - c[2]};
            idx[j] = order[j].second;
        }
        out.patches.push_back(std::move(patch));
        out.point_indices.push_back(std::move(idx));
    }
    return out;
}

// Symmetric mean of squared nearest-neighbor distances (Chamfer-L2 with
// squared distances, no square root).
inline double chamfer_l2(const std::vector<Point3>& a, const std::vector<Point3>& b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("chamfer_l2: empty point set");
    double t1 = 0;
    for (const auto& x : a) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& y : b) best = std::min(best, squared_dist(x, y));
        t1 += best;
    }
    double t2 = 0;
    for (const auto& y : b) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& x : a) best = std::min(best, squared_dist(x, y));
        t2 += best;
    }
    return t1 / static_cast<double>(a.size()) + t2 / static_cast<double>(b.size());
}

// ---------------------------------------------------------------------------
// Augmentations (all deterministic pure functions of the generator state)
// ---------------------------------------------------------------------------

inline PointCloud scale_translate(const PointCloud& cloud, const Point3& scale,
                                  const Point3& shift) {
    PointCloud out;
    out.label = cloud.label;
    out.points.reserve(cloud.size());
    for (const auto& p : cloud.points)
        out.points.push_back({p[0] * scale[0] + shift[0], p[1] * scale[1] + shift[1],
                              p[2] * scale[2] + shift[2]});
    return out;
}

// Rotation about the vertical (y) axis.
inline PointCloud rotate_y(const PointCloud& cloud, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    PointCloud out;
    out.label = cloud.label;
    out.points.reserve(cloud.size());
    for (const auto& p : cloud.points)
        out.points.push_back({p[0] * c + p[2] * s, p[1], -p[0] * s + p[2] * c});
    return out;
}

// Per-axis uniform scale in [2/3, 3/2] and translation in [-0.2, 0.2].
inline PointCloud augment_scale_translate(const PointCloud& cloud, Rng& rng) {
    Point3 scale, shift;
    for (int c = 0; c < 3; ++c) scale[c] = rng.uniform(2.0 / 3.0, 3.0 / 2.0);
    for (int c = 0; c < 3; ++c) shift[c] = rng.uniform(-0.2, 0.2);
    return scale_translate(cloud, scale, shift);
}

inline PointCloud augment_rotate(const PointCloud& cloud, Rng& rng) {
    return rotate_y(cloud, rng.uniform(0.0, 2.0 * std::numbers::pi));
}

inline PointCloud augment_jitter(const PointCloud& cloud, Rng& rng, double sigma = 0.01,
                                 double clip = 0.05) {
    PointCloud out;
    out.label = cloud.label;
    out.points.reserve(cloud.size());
    for (const auto& p : cloud.points) {
        Point3 q;
        for (int c = 0; c < 3; ++c)
            q[c] = p[c] + std::clamp(rng.normal() * sigma, -clip, clip);
        out.points.push_back(q);
    }
    return out;
}

// Negates the x axis with probability 1/2.
inline PointCloud augment_flip(const PointCloud& cloud, Rng& rng) {
    const bool flip = rng.uniform() < 0.5;
    PointCloud out;
    out.label = cloud.label;
    out.points.reserve(cloud.size());
    for (const auto& p : cloud.points)
        out.points.push_back({flip ? -p[0] : p[0], p[1], p[2]});
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic shapes
// ---------------------------------------------------------------------------

enum class ShapeKind { sphere, cube, cylinder, cone, torus, plane, helix, cross };
inline constexpr int kShapeKinds = 8;

inline const char* shape_name(ShapeKind k) {
    switch (k) {
        case ShapeKind::sphere: return "sphere";
        case ShapeKind::cube: return "cube";
        case ShapeKind::cylinder: return "cylinder";
        case ShapeKind::cone: return "cone";
        case ShapeKind::torus: return "torus";
        case ShapeKind::plane: return "plane";
        case ShapeKind::helix: return "helix";
        case ShapeKind::cross: return "cross";
    }
    return "?";
}

inline ShapeKind shape_from_name(const std::string& s) {
    for (int i = 0; i < kShapeKinds; ++i)
        if (s == shape_name(static_cast<ShapeKind>(i))) return static_cast<ShapeKind>(i);
    throw std::invalid_argument("unknown shape kind '" + s + "'");
}

namespace detail {

inline Point3 sample_sphere(Rng& rng) {
    double x, y, z, n2;
    do {
        x = rng.normal();
        y = rng.normal();
        z = rng.normal();
        n2 = x * x + y * y + z * z;
    } while (n2 < 1e-12);
    const double inv = 1.0 / std::sqrt(n2);
    return {x * inv, y * inv, z * inv};
}

// Surface point of an axis-aligned box, faces weighted by area.
inline Point3 sample_box(Rng& rng, const Point3& lo, const Point3& hi) {
    const double ex = hi[0] - lo[0], ey = hi[1] - lo[1], ez = hi[2] - lo[2];
    const double ax = ey * ez, ay = ex * ez, az = ex * ey;  // per-pair face areas
    const double total = 2 * (ax + ay + az);
    double u = rng.uniform() * total;
    int axis;
    if (u < 2 * ax) {
        axis = 0;
    } else if (u < 2 * ax + 2 * ay) {
        axis = 1;
        u -= 2 * ax;
    } else {
        axis = 2;
        u -= 2 * ax + 2 * ay;
    }
    const bool high = u >= (axis == 0 ? ax : axis == 1 ? ay : az);
    Point3 p;
    for (int c = 0; c < 3; ++c) p[c] = rng.uniform(lo[c], hi[c]);
    p[axis] = high ? hi[axis] : lo[axis];
    return p;
}

}  // namespace detail

// Seeded surface sampling of a primitive, rescaled to fit [-1,1]^3 exactly,
// with optional Gaussian noise applied after normalization. label is the
// kind id.
inline PointCloud gen_synthetic_shape(ShapeKind kind, std::size_t n_points, double noise_sigma,
                                      Rng& rng) {
    if (n_points < 8)
        throw std::invalid_argument("gen_synthetic_shape: need at least 8 points, got " +
                                    std::to_string(n_points));
    PointCloud cloud;
    cloud.label = static_cast<int>(kind);
    cloud.points.reserve(n_points);
    for (std::size_t i = 0; i < n_points; ++i) {
        Point3 p{0, 0, 0};
        switch (kind) {
            case ShapeKind::sphere:
                p = detail::sample_sphere(rng);
                break;
            case ShapeKind::cube:
                p = detail::sample_box(rng, {-1, -1, -1}, {1, 1, 1});
                break;
            case ShapeKind::cylinder: {
                const double r = 0.6, h = 1.8;  // y in [-0.9, 0.9]
                const double lateral = 2 * std::numbers::pi * r * h;
                const double caps = 2 * std::numbers::pi * r * r;
                const double theta = rng.uniform(0.0, 2 * std::numbers::pi);
                if (rng.uniform() * (lateral + caps) < lateral) {
                    p = {r * std::cos(theta), rng.uniform(-h / 2, h / 2), r * std::sin(theta)};
                } else {
                    const double rr = r * std::sqrt(rng.uniform());
                    const double y = rng.uniform() < 0.5 ? -h / 2 : h / 2;
                    p = {rr * std::cos(theta), y, rr * std::sin(theta)};
                }
                break;
            }
            case ShapeKind::cone: {
                const double base_r = 0.8, apex_y = 0.9, base_y = -0.9;
                const double slant = std::sqrt(base_r * base_r + (apex_y - base_y) * (apex_y - base_y));
                const double lateral = std::numbers::pi * base_r * slant;
                const double base = std::numbers::pi * base_r * base_r;
                const double theta = rng.uniform(0.0, 2 * std::numbers::pi);
                if (rng.uniform() * (lateral + base) < lateral) {
                    const double t = std::sqrt(rng.uniform());  // area-uniform along slant
                    const double rr = t * base_r;
                    p = {rr * std::cos(theta), apex_y - t * (apex_y - base_y), rr * std::sin(theta)};
                } else {
                    const double rr = base_r * std::sqrt(rng.uniform());
                    p = {rr * std::cos(theta), base_y, rr * std::sin(theta)};
                }
                break;
            }
            case ShapeKind::torus: {
                const double R = 0.7, r = 0.3;
                double u, v;
                do {
                    u = rng.uniform(0.0, 2 * std::numbers::pi);
                    v = rng.uniform(0.0, 2 * std::numbers::pi);
                } while (rng.uniform() * (R + r) > R + r * std::cos(v));
                const double ring = R + r * std::cos(v);
                p = {ring * std::cos(u), r * std::sin(v), ring * std::sin(u)};
                break;
            }
            case ShapeKind::plane:
                p = {rng.uniform(-1.0, 1.0), 0.0, rng.uniform(-1.0, 1.0)};
                break;
            case ShapeKind::helix: {
                const double turns = 2.0, r = 0.7;
                const double t = rng.uniform(0.0, 1.0);
                const double phi = t * turns * 2 * std::numbers::pi;
                p = {r * std::cos(phi), 1.8 * t - 0.9, r * std::sin(phi)};
                break;
            }
            case ShapeKind::cross: {
                const double half = 0.22;
                if (rng.uniform() < 0.5)
                    p = detail::sample_box(rng, {-1, -half, -half}, {1, half, half});
                else
                    p = detail::sample_box(rng, {-half, -half, -1}, {half, half, 1});
                break;
            }
        }
        cloud.points.push_back(p);
    }
    double max_abs = 0;
    for (const auto& p : cloud.points)
        for (int c = 0; c < 3; ++c) max_abs = std::max(max_abs, std::abs(p[c]));
    if (max_abs > 0) {
        const double inv = 1.0 / max_abs;
        for (auto& p : cloud.points)
            for (int c = 0; c < 3; ++c) p[c] *= inv;
    }
    if (noise_sigma > 0)
        for (auto& p : cloud.points)
            for (int c = 0; c < 3; ++c) p[c] += rng.normal() * noise_sigma;
    return cloud;
}

inline PointCloud gen_synthetic_shape(ShapeKind kind, std::size_t n_points, double noise_sigma,
                                      std::uint64_t seed) {
    Rng rng(seed);
    return gen_synthetic_shape(kind, n_points, noise_sigma, rng);
}

}  // namespace pcpmae
