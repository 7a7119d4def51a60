#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "pcpmae/losses.hpp"
#include "pcpmae/model.hpp"
#include "support/fd.hpp"

using namespace pcpmae;
using Catch::Approx;
using T = Tensor<double>;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.d_model = 12;
    cfg.encoder_depth = 2;
    cfg.decoder_depth = 1;
    cfg.heads = 2;
    cfg.patch_size = 4;
    cfg.num_patches = 4;
    cfg.num_points = 16;
    return cfg;
}

std::vector<double> randn_vec(Rng& rng, std::size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal() * scale;
    return v;
}

}  // namespace

TEST_CASE("encoder block preserves shape and is permutation-equivariant") {
    auto w = build_model<double>(tiny_config(), 1);
    Rng rng(2);
    const std::int64_t s = 5, d = 12;
    auto vals = randn_vec(rng, s * d);
    auto x = T::from_data({1, s, d}, vals);
    auto y = encoder_block_self(x, w.encoder[0], w.config.heads, w.config.attn_scale);
    REQUIRE(y.shape() == x.shape());

    // cyclic shift of the tokens
    std::vector<double> shifted(vals.end() - d, vals.end());
    shifted.insert(shifted.end(), vals.begin(), vals.end() - d);
    auto ys = encoder_block_self(T::from_data({1, s, d}, shifted), w.encoder[0], w.config.heads,
                                 w.config.attn_scale);
    for (std::int64_t i = 0; i < s; ++i)
        for (std::int64_t c = 0; c < d; ++c) {
            const std::int64_t src = (i + s - 1) % s;  // shifted row i holds original row src
            CHECK(ys.data()[i * d + c] == Approx(y.data()[src * d + c]).margin(1e-9));
        }
}

TEST_CASE("a single visible token attends to itself with weight exactly one") {
    auto w = build_model<double>(tiny_config(), 3);
    Rng rng(4);
    auto x = T::from_data({1, 1, 12}, randn_vec(rng, 12));
    Tensor<double> attn;
    multi_head_attention(x, x, w.encoder[0], w.config.heads, w.config.attn_scale, &attn);
    REQUIRE(attn.numel() == w.config.heads);
    for (double a : attn.data()) CHECK(a == 1.0);
}

TEST_CASE("cross-attention with one visible and one masked token matches a two-key softmax") {
    // identity projections, one head, width 2
    BlockWeights<double> w;
    std::vector<double> eye{1, 0, 0, 1};
    w.wq = T::from_data({2, 2}, eye);
    w.bq = T::zeros({2});
    w.wk = T::from_data({2, 2}, eye);
    w.bk = T::zeros({2});
    w.wv = T::from_data({2, 2}, eye);
    w.bv = T::zeros({2});
    w.attn_proj_w = T::from_data({2, 2}, eye);
    w.attn_proj_b = T::zeros({2});

    const std::vector<double> q{1.0, -0.5};
    const std::vector<double> k_vis{0.8, 0.2};
    const std::vector<double> k_msk{-0.3, 0.9};
    auto q_in = T::from_data({1, 1, 2}, q);
    std::vector<double> kv = k_vis;
    kv.insert(kv.end(), k_msk.begin(), k_msk.end());
    auto kv_in = T::from_data({1, 2, 2}, kv);

    Tensor<double> attn;
    auto out = multi_head_attention(q_in, kv_in, w, 1, AttnScale::per_head, &attn);

    // two-key softmax evaluated by hand
    const double scale = 1.0 / std::sqrt(2.0);
    const double s1 = (q[0] * k_vis[0] + q[1] * k_vis[1]) * scale;
    const double s2 = (q[0] * k_msk[0] + q[1] * k_msk[1]) * scale;
    const double m = std::max(s1, s2);
    const double e1 = std::exp(s1 - m), e2 = std::exp(s2 - m);
    const double a1 = e1 / (e1 + e2), a2 = e2 / (e1 + e2);
    REQUIRE(attn.numel() == 2);
    CHECK(attn.data()[0] == Approx(a1).epsilon(1e-12));
    CHECK(attn.data()[1] == Approx(a2).epsilon(1e-12));
    CHECK(out.data()[0] == Approx(a1 * k_vis[0] + a2 * k_msk[0]).epsilon(1e-12));
    CHECK(out.data()[1] == Approx(a1 * k_vis[1] + a2 * k_msk[1]).epsilon(1e-12));
}

TEST_CASE("with one head the multi-head machinery equals a direct computation") {
    auto cfg = tiny_config();
    cfg.heads = 1;
    auto w = build_model<double>(cfg, 5);
    Rng rng(6);
    auto x = T::from_data({1, 3, 12}, randn_vec(rng, 36));
    auto got = multi_head_attention(x, x, w.encoder[0], 1, AttnScale::per_head);

    const auto& blk = w.encoder[0];
    auto q = linear(x, blk.wq, blk.bq);
    auto k = linear(x, blk.wk, blk.bk);
    auto v = linear(x, blk.wv, blk.bv);
    auto scores = scalar_mul(matmul(q, permute(k, {0, 2, 1})), 1.0 / std::sqrt(12.0));
    auto want = linear(matmul(softmax(scores, 2), v), blk.attn_proj_w, blk.attn_proj_b);
    for (std::size_t i = 0; i < got.data().size(); ++i)
        CHECK(got.data()[i] == Approx(want.data()[i]).epsilon(1e-12));
}

TEST_CASE("pcm cross block with zero visible tokens degenerates to self-attention") {
    auto w = build_model<double>(tiny_config(), 7);
    Rng rng(8);
    auto s = T::from_data({2, 3, 12}, randn_vec(rng, 72));
    auto empty_vis = T::zeros({2, 0, 12});
    auto cross = pcm_block_cross(s, empty_vis, w.pcm[0], w.config.heads, w.config.attn_scale);
    auto self = encoder_block_self(s, w.encoder[0], w.config.heads, w.config.attn_scale);
    REQUIRE(cross.shape() == self.shape());
    for (std::size_t i = 0; i < cross.data().size(); ++i)
        CHECK(cross.data()[i] == self.data()[i]);
}

TEST_CASE("pcm stream keeps shape mn x D through every layer") {
    auto w = build_model<double>(tiny_config(), 9);
    Rng rng(10);
    auto masked = T::from_data({1, 3, 12}, randn_vec(rng, 36));
    auto visible = T::from_data({1, 2, 12}, randn_vec(rng, 24));
    auto out = masked;
    for (int i = 0; i < w.config.encoder_depth; ++i) {
        out = pcm_block_cross(out, visible, w.pcm[i], w.config.heads, w.config.attn_scale);
        REQUIRE(out.shape() == Shape{1, 3, 12});
    }
}

TEST_CASE("joint forward is one-directional: masked inputs cannot touch T_v") {
    auto w = build_model<double>(tiny_config(), 11);
    Rng rng(12);
    auto e_v = T::from_data({2, 3, 12}, randn_vec(rng, 72));
    auto pe_v = T::from_data({2, 3, 12}, randn_vec(rng, 72));
    auto e_m = T::from_data({2, 2, 12}, randn_vec(rng, 48));
    auto base = joint_forward(e_v, pe_v, e_m, w);

    auto e_m2 = T::from_data({2, 2, 12}, randn_vec(rng, 48));  // perturbed masked tokens
    auto again = joint_forward(e_v, pe_v, e_m2, w);
    CHECK(base.visible.data() == again.visible.data());  // bit-identical
    CHECK(base.predicted.data() != again.predicted.data());
}

TEST_CASE("joint forward with no masked patches reduces to the plain encoder") {
    auto w = build_model<double>(tiny_config(), 13);
    Rng rng(14);
    auto e_v = T::from_data({1, 4, 12}, randn_vec(rng, 48));
    auto pe_v = T::from_data({1, 4, 12}, randn_vec(rng, 48));
    auto e_m = T::zeros({1, 0, 12});
    auto out = joint_forward(e_v, pe_v, e_m, w);
    CHECK(out.predicted.numel() == 0);
    auto plain = encoder_forward(e_v, pe_v, w);
    CHECK(out.visible.data() == plain.data());
}

TEST_CASE("center-prediction loss reaches encoder weights through the shared blocks") {
    auto w = build_model<double>(tiny_config(), 15);
    Rng rng(16);
    auto e_v = T::from_data({1, 3, 12}, randn_vec(rng, 36));
    auto pe_v = T::from_data({1, 3, 12}, randn_vec(rng, 36));
    auto e_m = T::from_data({1, 2, 12}, randn_vec(rng, 24));
    std::vector<double> target = randn_vec(rng, 2 * 12);

    auto build = [&] {
        auto out = joint_forward(e_v, pe_v, e_m, w);
        return mse_to_const(out.predicted, target);
    };
    auto grads = backward_gradients(build(), w.store);
    double norm = 0;
    for (double g : grads["enc.block0.attn.wq"]) norm += g * g;
    CHECK(norm > 0);

    // finite-difference spot check on a handful of entries per tensor
    auto rep = testsupport::fd_check(w.store, build, 1e-5, 131);
    INFO(rep.worst);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("decoder output has shape mn x D and honors the stop-gradient firewall") {
    auto w = build_model<double>(tiny_config(), 17);
    Rng rng(18);
    auto e_v = T::from_data({1, 2, 12}, randn_vec(rng, 24));
    auto pe_v = T::from_data({1, 2, 12}, randn_vec(rng, 24));
    auto e_m = T::from_data({1, 2, 12}, randn_vec(rng, 24));
    std::vector<double> gt = randn_vec(rng, 2 * 4 * 3, 0.1);

    auto out = joint_forward(e_v, pe_v, e_m, w);
    auto h_m = decoder_forward(out.visible, pe_v, stop_gradient(out.predicted), w);
    REQUIRE(h_m.shape() == Shape{1, 2, 12});
    auto pred = reconstruction_head(h_m, w);
    REQUIRE(pred.shape() == Shape{1, 2, 4, 3});

    auto grads = backward_gradients(chamfer_to_const(pred, gt), w.store);
    for (const char* name : {"projector.fc1.w", "projector.fc1.b", "projector.ln.g",
                             "projector.ln.b", "projector.fc2.w", "projector.fc2.b"}) {
        for (double g : grads[name]) CHECK(g == 0.0);
    }

    // without stop-gradient the projector is reachable
    auto out2 = joint_forward(e_v, pe_v, e_m, w);
    auto h2 = decoder_forward(out2.visible, pe_v, out2.predicted, w);
    auto grads2 = backward_gradients(chamfer_to_const(reconstruction_head(h2, w), gt), w.store);
    double norm = 0;
    for (double g : grads2["projector.fc2.w"]) norm += g * g;
    CHECK(norm > 0);
}

TEST_CASE("zeroed decoder blocks reduce the decoder to a masked-row layer norm") {
    auto w = build_model<double>(tiny_config(), 19);
    for (auto& e : w.store.entries())
        if (e.name.rfind("dec.block", 0) == 0)
            std::fill(e.tensor.data().begin(), e.tensor.data().end(), 0.0);

    Rng rng(20);
    auto t_v = T::from_data({1, 2, 12}, randn_vec(rng, 24));
    auto pe_v = T::from_data({1, 2, 12}, randn_vec(rng, 24));
    auto pred = T::from_data({1, 3, 12}, randn_vec(rng, 36));
    auto h = decoder_forward(t_v, pe_v, pred, w);

    // function of [M] + masked rows only
    auto want = layer_norm(add(pred, w.mask_token), w.dec_norm_g, w.dec_norm_b);
    for (std::size_t i = 0; i < h.data().size(); ++i)
        CHECK(h.data()[i] == Approx(want.data()[i]).epsilon(1e-12));

    auto t_v2 = T::from_data({1, 2, 12}, randn_vec(rng, 24));
    auto h2 = decoder_forward(t_v2, pe_v, pred, w);
    CHECK(h.data() == h2.data());
}

TEST_CASE("reconstruction head is affine with the expected output size") {
    auto w = build_model<double>(tiny_config(), 21);
    Rng rng(22);
    // zero weights produce all-zero patches
    std::fill(w.head_w.data().begin(), w.head_w.data().end(), 0.0);
    std::fill(w.head_b.data().begin(), w.head_b.data().end(), 0.0);
    auto h = T::from_data({1, 2, 12}, randn_vec(rng, 24));
    auto zero_pred = reconstruction_head(h, w);
    CHECK(zero_pred.numel() == 2 * 4 * 3);
    for (double v : zero_pred.data()) CHECK(v == 0.0);

    // affine identity head(a+b) == head(a) + head(b) - head(0)
    auto w2 = build_model<double>(tiny_config(), 23);
    Rng rng2(24);
    for (auto& x : w2.head_b.data()) x = rng2.normal();
    auto a = T::from_data({1, 1, 12}, randn_vec(rng2, 12));
    auto b = T::from_data({1, 1, 12}, randn_vec(rng2, 12));
    auto ab = reconstruction_head(add(a, b), w2);
    auto ha = reconstruction_head(a, w2);
    auto hb = reconstruction_head(b, w2);
    auto h0 = reconstruction_head(T::zeros({1, 1, 12}), w2);
    for (std::size_t i = 0; i < ab.data().size(); ++i)
        CHECK(ab.data()[i] ==
              Approx(ha.data()[i] + hb.data()[i] - h0.data()[i]).margin(1e-12));
}

TEST_CASE("shared blocks are the same storage and appear once in the store") {
    auto w = build_model<double>(tiny_config(), 25);
    REQUIRE(w.config.share_pcm_weights);
    CHECK(w.encoder[0].wq.node().get() == w.pcm[0].wq.node().get());
    w.encoder[1].wk.data()[0] = 42.0;
    CHECK(w.pcm[1].wk.data()[0] == 42.0);
    CHECK_FALSE(w.store.contains("pcm.block0.attn.wq"));
    CHECK(w.store.total_params() == count_params(w.config));
}

TEST_CASE("non-shared variant grows by exactly the encoder block mass") {
    auto cfg = tiny_config();
    auto shared_count = count_params(cfg);
    cfg.share_pcm_weights = false;
    auto w = build_model<double>(cfg, 26);
    CHECK(w.store.contains("pcm.block0.attn.wq"));
    CHECK(w.encoder[0].wq.node().get() != w.pcm[0].wq.node().get());
    CHECK(w.store.total_params() == count_params(cfg));
    CHECK(count_params(cfg) - shared_count == cfg.encoder_depth * block_param_count(cfg.d_model));
}

TEST_CASE("the paper configuration lands within ten percent of 29.5M parameters") {
    ModelConfig cfg;  // defaults are the paper configuration
    const auto n = count_params(cfg);
    CHECK(std::abs(static_cast<double>(n) - 29.5e6) / 29.5e6 < 0.10);
    auto w = build_model<float>(cfg, 0);
    CHECK(w.store.total_params() == n);
}

TEST_CASE("doubling the width scales block parameters roughly fourfold") {
    const double ratio = static_cast<double>(block_param_count(768)) /
                         static_cast<double>(block_param_count(384));
    CHECK(ratio > 3.9);
    CHECK(ratio < 4.0);
}

TEST_CASE("model config validation rejects inconsistent settings") {
    ModelConfig cfg = tiny_config();
    cfg.d_model = 10;  // not divisible by 6
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = tiny_config();
    cfg.heads = 5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = tiny_config();
    cfg.num_patches = 100;
    cfg.num_points = 50;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("full-dim attention scaling is selectable and changes the result") {
    auto cfg = tiny_config();
    auto w = build_model<double>(cfg, 27);
    Rng rng(28);
    auto x = T::from_data({1, 3, 12}, randn_vec(rng, 36));
    auto per_head = multi_head_attention(x, x, w.encoder[0], cfg.heads, AttnScale::per_head);
    auto full_dim = multi_head_attention(x, x, w.encoder[0], cfg.heads, AttnScale::full_dim);
    CHECK(per_head.data() != full_dim.data());
}
