#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>

#include "pcpmae/geometry.hpp"

using namespace pcpmae;
using Catch::Approx;

namespace {

PointCloud random_cloud(Rng& rng, std::size_t p) {
    PointCloud c;
    c.points.reserve(p);
    for (std::size_t i = 0; i < p; ++i)
        c.points.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    return c;
}

// Brute-force greedy FPS written directly from the definition: recompute the
// full min-distance each round instead of maintaining the running array.
std::vector<std::size_t> oracle_fps(const PointCloud& cloud, std::size_t n, std::size_t first) {
    std::vector<std::size_t> chosen{first};
    while (chosen.size() < n) {
        double best = -1.0;
        std::size_t best_i = 0;
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            double dmin = std::numeric_limits<double>::infinity();
            for (std::size_t c : chosen)
                dmin = std::min(dmin, squared_dist(cloud.points[i], cloud.points[c]));
            if (dmin > best) {
                best = dmin;
                best_i = i;
            }
        }
        chosen.push_back(best_i);
    }
    return chosen;
}

// Exhaustive-sort KNN oracle (squared distance, lowest index on ties).
std::vector<std::size_t> oracle_knn(const PointCloud& cloud, std::size_t center, std::size_t k) {
    std::vector<std::pair<double, std::size_t>> d(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i)
        d[i] = {squared_dist(cloud.points[i], cloud.points[center]), i};
    std::sort(d.begin(), d.end());
    std::vector<std::size_t> out(k);
    for (std::size_t j = 0; j < k; ++j) out[j] = d[j].second;
    return out;
}

}  // namespace

TEST_CASE("fps with n == p returns every index") {
    Rng rng(5);
    auto cloud = random_cloud(rng, 12);
    auto idx = fps(cloud, 12, rng);
    std::set<std::size_t> s(idx.begin(), idx.end());
    CHECK(s.size() == 12);
}

TEST_CASE("fps with n == 1 returns exactly the seeded first pick") {
    Rng make(99);
    auto cloud = random_cloud(make, 20);
    Rng a(31337);
    std::size_t first = static_cast<std::size_t>(Rng(31337).uniform_int(20));
    auto idx = fps(cloud, 1, a);
    REQUIRE(idx.size() == 1);
    CHECK(idx[0] == first);
}

TEST_CASE("fps on colinear points picks the extremes then the middle") {
    PointCloud cloud;
    for (int i = 0; i < 5; ++i) cloud.points.push_back({double(i), 0, 0});
    // seed 6 makes the first uniform draw land on index 0
    Rng rng(6);
    auto idx = fps(cloud, 3, rng);
    CHECK(idx == std::vector<std::size_t>{0, 4, 2});
    CHECK(idx == oracle_fps(cloud, 3, 0));
}

TEST_CASE("fps matches the brute-force greedy oracle on random clouds") {
    Rng rng(2024);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t p = 8 + static_cast<std::size_t>(rng.uniform_int(56));
        auto cloud = random_cloud(rng, p);
        const std::size_t n = 1 + static_cast<std::size_t>(rng.uniform_int(p));
        const std::uint64_t seed = rng.next_u64();
        Rng fps_rng(seed);
        auto got = fps(cloud, n, fps_rng);
        auto want = oracle_fps(cloud, n, static_cast<std::size_t>(Rng(seed).uniform_int(p)));
        CHECK(got == want);
    }
}

TEST_CASE("fps coverage radius never increases as n grows") {
    Rng rng(555);
    auto cloud = random_cloud(rng, 40);
    auto coverage = [&](const std::vector<std::size_t>& centers) {
        double worst = 0;
        for (const auto& q : cloud.points) {
            double dmin = std::numeric_limits<double>::infinity();
            for (std::size_t c : centers) dmin = std::min(dmin, squared_dist(q, cloud.points[c]));
            worst = std::max(worst, dmin);
        }
        return worst;
    };
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t n = 2; n <= 20; n += 3) {
        auto idx = oracle_fps(cloud, n, 7);
        const double cov = coverage(idx);
        CHECK(cov <= prev + 1e-12);
        prev = cov;
    }
}

TEST_CASE("fps rejects more centers than points") {
    Rng rng(1);
    auto cloud = random_cloud(rng, 4);
    CHECK_THROWS_AS(fps(cloud, 5, rng), std::invalid_argument);
}

TEST_CASE("knn_group with k == 1 yields origin-only patches") {
    Rng rng(9);
    auto cloud = random_cloud(rng, 10);
    auto ps = knn_group(cloud, {0, 3, 7}, 1);
    for (const auto& patch : ps.patches) {
        REQUIRE(patch.size() == 1);
        CHECK(patch[0] == Point3{0, 0, 0});
    }
}

TEST_CASE("knn_group with k == p shifts the whole cloud per center") {
    Rng rng(10);
    auto cloud = random_cloud(rng, 6);
    auto ps = knn_group(cloud, {2}, 6);
    REQUIRE(ps.patches[0].size() == 6);
    const auto& c = cloud.points[2];
    // every source point appears exactly once, center-relative
    std::set<std::size_t> seen(ps.point_indices[0].begin(), ps.point_indices[0].end());
    CHECK(seen.size() == 6);
    for (std::size_t j = 0; j < 6; ++j) {
        const auto src = cloud.points[ps.point_indices[0][j]];
        CHECK(ps.patches[0][j][0] == Approx(src[0] - c[0]));
        CHECK(ps.patches[0][j][1] == Approx(src[1] - c[1]));
        CHECK(ps.patches[0][j][2] == Approx(src[2] - c[2]));
    }
}

TEST_CASE("knn_group on a 6-point cloud matches the exhaustive-sort oracle") {
    Rng rng(11);
    auto cloud = random_cloud(rng, 6);
    auto ps = knn_group(cloud, {1, 4}, 3);
    CHECK(ps.point_indices[0] == oracle_knn(cloud, 1, 3));
    CHECK(ps.point_indices[1] == oracle_knn(cloud, 4, 3));
}

TEST_CASE("knn_group equals exhaustive sort on random clouds up to p = 64") {
    Rng rng(404);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t p = 4 + static_cast<std::size_t>(rng.uniform_int(61));
        auto cloud = random_cloud(rng, p);
        const std::size_t k = 1 + static_cast<std::size_t>(rng.uniform_int(p));
        const std::size_t center = static_cast<std::size_t>(rng.uniform_int(p));
        auto ps = knn_group(cloud, {center}, k);
        CHECK(ps.point_indices[0] == oracle_knn(cloud, center, k));
    }
}

TEST_CASE("patch normalization recovers source points exactly") {
    Rng rng(21);
    auto cloud = random_cloud(rng, 32);
    auto centers = fps(cloud, 6, rng);
    auto ps = knn_group(cloud, centers, 8);
    for (std::size_t i = 0; i < ps.patches.size(); ++i)
        for (std::size_t j = 0; j < ps.patches[i].size(); ++j)
            for (int c = 0; c < 3; ++c)
                CHECK(ps.patches[i][j][c] + ps.centers[i][c] ==
                      cloud.points[ps.point_indices[i][j]][c]);
}

TEST_CASE("knn_group rejects k above the point count") {
    Rng rng(3);
    auto cloud = random_cloud(rng, 4);
    CHECK_THROWS_AS(knn_group(cloud, {0}, 5), std::invalid_argument);
}

TEST_CASE("chamfer of identical sets is zero and of unit-offset singletons is two") {
    std::vector<Point3> a{{0, 0, 0}, {1, 2, 3}};
    CHECK(chamfer_l2(a, a) == 0.0);
    // hand evaluation: 1 + 1 = 2
    CHECK(chamfer_l2({{0, 0, 0}}, {{1, 0, 0}}) == Approx(2.0));
}

TEST_CASE("chamfer is symmetric and non-negative") {
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        auto a = random_cloud(rng, 5 + trial).points;
        auto b = random_cloud(rng, 9).points;
        const double ab = chamfer_l2(a, b);
        CHECK(ab == Approx(chamfer_l2(b, a)));
        CHECK(ab >= 0.0);
    }
}

TEST_CASE("chamfer is zero iff the two sets are equal as sets") {
    std::vector<Point3> a{{0, 0, 0}, {1, 1, 1}};
    std::vector<Point3> shuffled{{1, 1, 1}, {0, 0, 0}};
    std::vector<Point3> dup{{0, 0, 0}, {0, 0, 0}, {1, 1, 1}};
    CHECK(chamfer_l2(a, shuffled) == 0.0);
    CHECK(chamfer_l2(a, dup) == 0.0);  // equal as sets despite multiplicity
    std::vector<Point3> other{{0, 0, 0}, {1, 1, 1.001}};
    CHECK(chamfer_l2(a, other) > 0.0);
    CHECK_THROWS_AS(chamfer_l2({}, a), std::invalid_argument);
}

TEST_CASE("scale_translate identity parameters leave the cloud unchanged") {
    Rng rng(51);
    auto cloud = random_cloud(rng, 16);
    auto out = scale_translate(cloud, {1, 1, 1}, {0, 0, 0});
    CHECK(out.points == cloud.points);
}

TEST_CASE("augment_scale_translate preserves count and finiteness") {
    Rng rng(52);
    auto cloud = random_cloud(rng, 30);
    auto out = augment_scale_translate(cloud, rng);
    REQUIRE(out.size() == cloud.size());
    for (const auto& p : out.points)
        for (double c : p) CHECK(std::isfinite(c));
}

TEST_CASE("augment_scale_translate reproduces the recorded transform for seed 123") {
    PointCloud one;
    one.points.push_back({1.0, 1.0, 1.0});
    Rng rng(123);
    auto out = augment_scale_translate(one, rng);
    // golden transform captured once from the seeded generator
    CHECK(out.points[0][0] == Approx(0.92766681556539221 + 0.09452884516892146).epsilon(1e-15));
    CHECK(out.points[0][1] == Approx(1.1299825994957153 - 0.12303697877596674).epsilon(1e-15));
    CHECK(out.points[0][2] == Approx(1.4485709234814741 - 0.12194397428002626).epsilon(1e-15));
}

TEST_CASE("rotation by zero is the identity and rotations preserve distances") {
    Rng rng(53);
    auto cloud = random_cloud(rng, 20);
    CHECK(rotate_y(cloud, 0.0).points == cloud.points);
    auto rot = augment_rotate(cloud, rng);
    for (std::size_t i = 0; i < cloud.size(); ++i)
        for (std::size_t j = i + 1; j < cloud.size(); ++j)
            CHECK(std::sqrt(squared_dist(rot.points[i], rot.points[j])) ==
                  Approx(std::sqrt(squared_dist(cloud.points[i], cloud.points[j]))).margin(1e-6));
}

TEST_CASE("flip applied twice with forced-flip seeds is the identity") {
    Rng make(54);
    auto cloud = random_cloud(make, 10);
    // seed 0 draws below 0.5 on its first uniform, forcing the flip
    Rng f1(0), f2(0);
    auto once = augment_flip(cloud, f1);
    CHECK(once.points != cloud.points);
    auto twice = augment_flip(once, f2);
    CHECK(twice.points == cloud.points);
}

TEST_CASE("jitter stays within the clip bound") {
    Rng rng(55);
    PointCloud cloud;
    for (int i = 0; i < 50; ++i) cloud.points.push_back({0, 0, 0});
    auto out = augment_jitter(cloud, rng, 0.5, 0.05);  // large sigma exercises the clamp
    for (const auto& p : out.points)
        for (double c : p) CHECK(std::abs(c) <= 0.05);
}

TEST_CASE("synthetic sphere has constant radius when noise is zero") {
    auto cloud = gen_synthetic_shape(ShapeKind::sphere, 64, 0.0, std::uint64_t(7));
    const double r0 = std::sqrt(squared_dist(cloud.points[0], {0, 0, 0}));
    for (const auto& p : cloud.points)
        CHECK(std::sqrt(squared_dist(p, {0, 0, 0})) == Approx(r0).margin(1e-6));
    CHECK(cloud.label == int(ShapeKind::sphere));
}

TEST_CASE("synthetic generation is bit-identical for equal seeds") {
    for (int kind = 0; kind < kShapeKinds; ++kind) {
        auto a = gen_synthetic_shape(static_cast<ShapeKind>(kind), 32, 0.01, std::uint64_t(99));
        auto b = gen_synthetic_shape(static_cast<ShapeKind>(kind), 32, 0.01, std::uint64_t(99));
        CHECK(a.points == b.points);
    }
}

TEST_CASE("synthetic cube points lie on faces") {
    auto cloud = gen_synthetic_shape(ShapeKind::cube, 128, 0.0, std::uint64_t(3));
    for (const auto& p : cloud.points) {
        const bool on_face = std::abs(std::abs(p[0]) - 1.0) < 1e-12 ||
                             std::abs(std::abs(p[1]) - 1.0) < 1e-12 ||
                             std::abs(std::abs(p[2]) - 1.0) < 1e-12;
        CHECK(on_face);
    }
}

TEST_CASE("synthetic shapes fit the unit cube and respect the minimum count") {
    for (int kind = 0; kind < kShapeKinds; ++kind) {
        auto cloud = gen_synthetic_shape(static_cast<ShapeKind>(kind), 64, 0.0, std::uint64_t(11));
        for (const auto& p : cloud.points)
            for (double c : p) CHECK(std::abs(c) <= 1.0 + 1e-12);
    }
    Rng rng(0);
    CHECK_THROWS_AS(gen_synthetic_shape(ShapeKind::cube, 7, 0.0, rng), std::invalid_argument);
    CHECK_THROWS_AS(shape_from_name("dodecahedron"), std::invalid_argument);
}
