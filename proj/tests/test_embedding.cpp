#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "pcpmae/embedding.hpp"
#include "support/fd.hpp"

using namespace pcpmae;
using Catch::Approx;
using T = Tensor<double>;

namespace {

std::vector<double> randn_vec(Rng& rng, std::size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal() * scale;
    return v;
}

PemWeights<double> random_pem(ParamStore<double>& store, Rng& rng, std::int64_t d) {
    PemWeights<double> w;
    w.fc1_w = store.add_param("pem.fc1.w", {d, d}, randn_vec(rng, d * d, 0.3));
    w.fc1_b = store.add_param("pem.fc1.b", {d}, randn_vec(rng, d, 0.1));
    w.fc2_w = store.add_param("pem.fc2.w", {d, d}, randn_vec(rng, d * d, 0.3));
    w.fc2_b = store.add_param("pem.fc2.b", {d}, randn_vec(rng, d, 0.1));
    return w;
}

PointNetWeights<double> random_pointnet(ParamStore<double>& store, Rng& rng, std::int64_t d) {
    PointNetWeights<double> w;
    w.s1_w = store.add_param("pn.s1.w", {3, kPointNetStage1},
                             randn_vec(rng, 3 * kPointNetStage1, 0.3));
    w.s1_b = store.add_param("pn.s1.b", {kPointNetStage1}, randn_vec(rng, kPointNetStage1, 0.1));
    w.s2_w = store.add_param("pn.s2.w", {kPointNetStage2, kPointNetStage2},
                             randn_vec(rng, kPointNetStage2 * kPointNetStage2, 0.1));
    w.s2_b = store.add_param("pn.s2.b", {kPointNetStage2}, randn_vec(rng, kPointNetStage2, 0.1));
    w.proj_w = store.add_param("pn.proj.w", {kPointNetStage2, d},
                               randn_vec(rng, kPointNetStage2 * d, 0.1));
    w.proj_b = store.add_param("pn.proj.b", {d}, randn_vec(rng, d, 0.1));
    return w;
}

}  // namespace

TEST_CASE("sincos embedding of the origin alternates zeros and ones") {
    for (std::int64_t d : {6, 96, 384}) {
        auto row = sincos_pe_row<double>({0, 0, 0}, d);
        REQUIRE(row.size() == static_cast<std::size_t>(d));
        for (std::size_t i = 0; i < row.size(); i += 2) {
            CHECK(row[i] == 0.0);
            CHECK(row[i + 1] == 1.0);
        }
    }
}

TEST_CASE("sincos embedding at D = 6 evaluates sin and cos of c / e^2") {
    auto row = sincos_pe_row<double>({1, 1, 1}, 6);
    const double e2 = std::exp(2.0);
    for (int q = 0; q < 3; ++q) {
        CHECK(row[q * 2] == Approx(std::sin(1.0 / e2)).epsilon(1e-14));
        CHECK(row[q * 2 + 1] == Approx(std::cos(1.0 / e2)).epsilon(1e-14));
    }
}

TEST_CASE("sincos embedding has width D with entries in [-1, 1]") {
    Rng rng(71);
    for (std::int64_t d : {6, 96, 384}) {
        std::vector<Point3> centers;
        for (int i = 0; i < 10; ++i)
            centers.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
        auto vals = sincos_pe_values<double>(centers, d);
        REQUIRE(vals.size() == centers.size() * static_cast<std::size_t>(d));
        for (double v : vals) CHECK(std::abs(v) <= 1.0);
    }
}

TEST_CASE("sincos embedding rejects widths not divisible by six") {
    CHECK_THROWS_AS(sincos_pe_row<double>({0, 0, 0}, 8), std::invalid_argument);
    CHECK_THROWS_AS(sincos_pe_row<double>({0, 0, 0}, 0), std::invalid_argument);
}

TEST_CASE("sincos embedding separates distinct centers at D = 384") {
    Rng rng(72);
    std::vector<Point3> centers;
    for (int i = 0; i < 200; ++i)
        centers.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    const std::int64_t d = 384;
    auto vals = sincos_pe_values<double>(centers, d);
    double min_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < centers.size(); ++i)
        for (std::size_t j = i + 1; j < centers.size(); ++j) {
            double acc = 0;
            for (std::int64_t c = 0; c < d; ++c) {
                const double diff = vals[i * d + c] - vals[j * d + c];
                acc += diff * diff;
            }
            min_dist = std::min(min_dist, std::sqrt(acc));
        }
    CHECK(min_dist > 1e-9);
}

TEST_CASE("sincos op agrees with the row evaluation and is differentiable") {
    Rng rng(73);
    ParamStore<double> store;
    auto coords = store.add_param("c", {4, 3}, randn_vec(rng, 12, 0.5));
    auto pe = sincos_pe_op(coords, 12);
    for (int r = 0; r < 4; ++r) {
        Point3 p{coords.data()[r * 3], coords.data()[r * 3 + 1], coords.data()[r * 3 + 2]};
        auto row = sincos_pe_row<double>(p, 12);
        for (int c = 0; c < 12; ++c) CHECK(pe.data()[r * 12 + c] == Approx(row[c]).epsilon(1e-14));
    }
    auto rep = testsupport::fd_check(store, [&] { return mean_all(sincos_pe_op(coords, 12)); });
    INFO(rep.worst);
    CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("pem with zero weights and biases returns zeros") {
    PemWeights<double> w;
    w.fc1_w = T::zeros({6, 6});
    w.fc1_b = T::zeros({6});
    w.fc2_w = T::zeros({6, 6});
    w.fc2_b = T::zeros({6});
    auto x = T::from_data({2, 6}, std::vector<double>(12, 1.0));
    auto y = pem_forward(x, w);
    for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("pem with identity first layer reduces to the second layer of gelu") {
    Rng rng(74);
    const std::int64_t d = 6;
    PemWeights<double> w;
    std::vector<double> eye(d * d, 0.0);
    for (std::int64_t i = 0; i < d; ++i) eye[i * d + i] = 1.0;
    w.fc1_w = T::from_data({d, d}, eye);
    w.fc1_b = T::zeros({d});
    w.fc2_w = T::from_data({d, d}, randn_vec(rng, d * d));
    w.fc2_b = T::zeros({d});
    auto x = T::from_data({3, d}, randn_vec(rng, 3 * d));
    auto got = pem_forward(x, w);
    auto want = matmul(gelu(x), w.fc2_w);  // compositional oracle
    for (std::size_t i = 0; i < got.data().size(); ++i)
        CHECK(got.data()[i] == Approx(want.data()[i]).epsilon(1e-12));
}

TEST_CASE("pem applies identical weights to visible and masked rows") {
    Rng rng(75);
    ParamStore<double> store;
    auto w = random_pem(store, rng, 6);
    auto row = randn_vec(rng, 6);
    std::vector<double> two_rows = row;
    two_rows.insert(two_rows.end(), row.begin(), row.end());
    auto visible = pem_forward(T::from_data({1, 6}, row), w);
    auto masked = pem_forward(T::from_data({2, 6}, two_rows), w);
    for (int c = 0; c < 6; ++c) {
        CHECK(visible.data()[c] == masked.data()[c]);
        CHECK(visible.data()[c] == masked.data()[6 + c]);
    }
}

TEST_CASE("pem gradients match finite differences") {
    Rng rng(76);
    ParamStore<double> store;
    auto w = random_pem(store, rng, 6);
    auto x = T::from_data({3, 6}, randn_vec(rng, 18));
    auto rep = testsupport::fd_check(store, [&] { return mean_all(pem_forward(x, w)); });
    INFO(rep.worst);
    CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("mini_pointnet is permutation-invariant within a patch") {
    Rng rng(77);
    ParamStore<double> store;
    auto w = random_pointnet(store, rng, 12);
    auto pts = randn_vec(rng, 5 * 3);
    std::vector<double> permuted(pts.begin() + 3, pts.end());
    permuted.insert(permuted.end(), pts.begin(), pts.begin() + 3);  // rotate points by one
    auto t1 = mini_pointnet_forward(T::from_data({1, 5, 3}, pts), w);
    auto t2 = mini_pointnet_forward(T::from_data({1, 5, 3}, permuted), w);
    for (std::size_t i = 0; i < t1.data().size(); ++i) CHECK(t1.data()[i] == t2.data()[i]);
}

TEST_CASE("mini_pointnet maps all-zero patches to a bias-determined token") {
    Rng rng(78);
    ParamStore<double> store;
    auto w = random_pointnet(store, rng, 12);
    auto tokens = mini_pointnet_forward(T::zeros({2, 4, 3}), w);
    REQUIRE(tokens.shape() == Shape{2, 12});
    for (int c = 0; c < 12; ++c) CHECK(tokens.data()[c] == tokens.data()[12 + c]);
}

TEST_CASE("mini_pointnet single-patch and batched evaluation agree bit-exactly") {
    Rng rng(79);
    ParamStore<double> store;
    auto w = random_pointnet(store, rng, 12);
    auto patch = randn_vec(rng, 6 * 3);
    std::vector<double> batch = patch;
    auto other = randn_vec(rng, 6 * 3);
    batch.insert(batch.end(), other.begin(), other.end());

    auto single = mini_pointnet_forward(T::from_data({1, 6, 3}, patch), w);
    auto batched = mini_pointnet_forward(T::from_data({2, 6, 3}, batch), w);
    for (int c = 0; c < 12; ++c) CHECK(single.data()[c] == batched.data()[c]);
}

TEST_CASE("mini_pointnet token order follows patch order") {
    Rng rng(80);
    ParamStore<double> store;
    auto w = random_pointnet(store, rng, 12);
    auto a = randn_vec(rng, 4 * 3);
    auto b = randn_vec(rng, 4 * 3);
    std::vector<double> ab = a;
    ab.insert(ab.end(), b.begin(), b.end());
    std::vector<double> ba = b;
    ba.insert(ba.end(), a.begin(), a.end());
    auto t_ab = mini_pointnet_forward(T::from_data({2, 4, 3}, ab), w);
    auto t_ba = mini_pointnet_forward(T::from_data({2, 4, 3}, ba), w);
    for (int c = 0; c < 12; ++c) {
        CHECK(t_ab.data()[c] == t_ba.data()[12 + c]);
        CHECK(t_ab.data()[12 + c] == t_ba.data()[c]);
    }
}

TEST_CASE("mini_pointnet gradients match finite differences") {
    Rng rng(81);
    ParamStore<double> store;
    auto w = random_pointnet(store, rng, 6);
    auto patches = T::from_data({2, 4, 3}, randn_vec(rng, 24));
    auto rep = testsupport::fd_check(
        store, [&] { return mean_all(mini_pointnet_forward(patches, w)); }, 1e-5, 97);
    INFO(rep.worst);
    CHECK(rep.max_rel_err < 1e-4);
}
