#include <catch2/catch_amalgamated.hpp>

#include "pcpmae/losses.hpp"
#include "pcpmae/ops.hpp"
#include "pcpmae/rng.hpp"
#include "support/fd.hpp"

using namespace pcpmae;
using T = Tensor<double>;

namespace {

std::vector<double> randn_vec(Rng& rng, std::size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal() * scale;
    return v;
}

}  // namespace

TEST_CASE("gradients of elementwise and broadcast ops match finite differences") {
    Rng rng(7);
    ParamStore<double> store;
    auto a = store.add_param("a", {2, 3}, randn_vec(rng, 6));
    auto b = store.add_param("b", {3}, randn_vec(rng, 3));
    auto rep = testsupport::fd_check(store, [&] {
        auto s = add(a, b);           // broadcast add
        auto m = mul(s, a);           // elementwise mul
        auto d = sub(m, scalar_mul(b, 0.5));
        return mean_all(gelu(d));
    });
    INFO(rep.worst);
    CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("gradients of matmul with batch broadcast match finite differences") {
    Rng rng(11);
    ParamStore<double> store;
    auto a = store.add_param("a", {2, 3, 4}, randn_vec(rng, 24));
    auto w = store.add_param("w", {4, 2}, randn_vec(rng, 8));
    auto rep = testsupport::fd_check(store, [&] { return mean_all(matmul(a, w)); });
    INFO(rep.worst);
    CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("gradients of softmax, layer_norm, relu match finite differences") {
    Rng rng(13);
    ParamStore<double> store;
    auto x = store.add_param("x", {3, 4}, randn_vec(rng, 12));
    auto g = store.add_param("g", {4}, randn_vec(rng, 4, 0.2));
    auto b = store.add_param("b", {4}, randn_vec(rng, 4, 0.2));
    auto rep = testsupport::fd_check(store, [&] {
        auto y = layer_norm(x, g, b);
        auto s = softmax(y, 1);
        return mean_all(mul(s, relu(x)));
    });
    INFO(rep.worst);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("gradients of shape ops match finite differences") {
    Rng rng(17);
    ParamStore<double> store;
    auto x = store.add_param("x", {2, 3, 2}, randn_vec(rng, 12));
    auto rep = testsupport::fd_check(store, [&] {
        auto p = permute(x, {1, 0, 2});
        auto r = reshape(p, {3, 4});
        auto c = concat(r, r, 1);
        auto s = slice(c, 1, 2, 4);
        auto piece = reshape(slice(x, 0, 0, 1), {1, 6});
        auto rep6 = repeat(reshape(piece, {1, 1, 6}), 1, 2);
        return add(mean_all(s), mean_all(rep6));
    });
    INFO(rep.worst);
    CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("gradients of reductions match finite differences") {
    Rng rng(19);
    ParamStore<double> store;
    auto x = store.add_param("x", {3, 5}, randn_vec(rng, 15));
    auto rep = testsupport::fd_check(store, [&] {
        auto mx = max_reduce(x, 1);
        auto mn = mean_reduce(x, 0);
        return add(mean_all(mx), sum_all(mn));
    });
    INFO(rep.worst);
    CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("gradients of every loss mode match finite differences") {
    Rng rng(23);
    ParamStore<double> store;
    auto p = store.add_param("p", {4, 6}, randn_vec(rng, 24));
    std::vector<double> target = randn_vec(rng, 24);

    SECTION("l2") {
        auto rep = testsupport::fd_check(store, [&] { return mse_to_const(p, target); });
        CHECK(rep.max_rel_err < 1e-6);
    }
    SECTION("l1") {
        auto rep = testsupport::fd_check(store, [&] { return l1_to_const(p, target); }, 1e-6);
        CHECK(rep.max_rel_err < 1e-4);
    }
    SECTION("smooth_l1") {
        auto rep = testsupport::fd_check(store, [&] { return smooth_l1_to_const(p, target); }, 1e-6);
        CHECK(rep.max_rel_err < 1e-4);
    }
    SECTION("cosine") {
        auto rep = testsupport::fd_check(store, [&] { return cosine_to_const(p, target); });
        CHECK(rep.max_rel_err < 1e-5);
    }
}

TEST_CASE("gradient of chamfer loss matches finite differences") {
    Rng rng(29);
    ParamStore<double> store;
    // two patches of five well-separated points each
    auto p = store.add_param("p", {2, 5, 3}, randn_vec(rng, 30));
    std::vector<double> target = randn_vec(rng, 30);
    auto rep = testsupport::fd_check(store, [&] { return chamfer_to_const(p, target); }, 1e-7);
    INFO(rep.worst);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("gradient of cross entropy matches finite differences") {
    Rng rng(31);
    ParamStore<double> store;
    auto z = store.add_param("z", {5, 3}, randn_vec(rng, 15));
    std::vector<int> labels{0, 2, 1, 1, 0};
    auto rep = testsupport::fd_check(store, [&] { return cross_entropy(z, labels); });
    INFO(rep.worst);
    CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("random 3-layer MLP gradients match central finite differences") {
    Rng rng(37);
    ParamStore<double> store;
    auto x = T::from_data({4, 5}, randn_vec(rng, 20));
    auto w1 = store.add_param("w1", {5, 8}, randn_vec(rng, 40, 0.5));
    auto b1 = store.add_param("b1", {8}, randn_vec(rng, 8, 0.1));
    auto w2 = store.add_param("w2", {8, 8}, randn_vec(rng, 64, 0.5));
    auto b2 = store.add_param("b2", {8}, randn_vec(rng, 8, 0.1));
    auto w3 = store.add_param("w3", {8, 2}, randn_vec(rng, 16, 0.5));
    auto b3 = store.add_param("b3", {2}, randn_vec(rng, 2, 0.1));
    auto rep = testsupport::fd_check(store, [&] {
        auto h1 = gelu(linear(x, w1, b1));
        auto h2 = gelu(linear(h1, w2, b2));
        auto out = linear(h2, w3, b3);
        return mean_all(mul(out, out));
    });
    INFO(rep.worst);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("stop-gradient totality: parameters behind sg get exactly zero") {
    Rng rng(41);
    ParamStore<double> store;
    auto w_blocked = store.add_param("w_blocked", {3, 3}, randn_vec(rng, 9));
    auto w_live = store.add_param("w_live", {3, 3}, randn_vec(rng, 9));
    auto x = T::from_data({2, 3}, randn_vec(rng, 6));

    auto hidden = stop_gradient(matmul(x, w_blocked));
    auto out = matmul(hidden, w_live);
    auto grads = backward_gradients(mean_all(mul(out, out)), store);

    for (double g : grads["w_blocked"]) CHECK(g == 0.0);
    bool any_nonzero = false;
    for (double g : grads["w_live"]) any_nonzero = any_nonzero || g != 0.0;
    CHECK(any_nonzero);
}
