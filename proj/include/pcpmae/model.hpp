#pragma once

#include "pcpmae/embedding.hpp"
#include "pcpmae/ops.hpp"

namespace pcpmae {

enum class AttnScale { per_head, full_dim };
enum class TargetMode { pem, sincos, coords };

inline const char* target_mode_name(TargetMode m) {
    switch (m) {
        case TargetMode::pem: return "pem";
        case TargetMode::sincos: return "sincos";
        case TargetMode::coords: return "coords";
    }
    return "?";
}

inline TargetMode target_mode_from_name(const std::string& s) {
    if (s == "pem") return TargetMode::pem;
    if (s == "sincos") return TargetMode::sincos;
    if (s == "coords") return TargetMode::coords;
    throw std::invalid_argument("unknown target mode '" + s + "'");
}

struct ModelConfig {
    std::int64_t d_model = 384;
    int encoder_depth = 12;
    int decoder_depth = 4;
    int heads = 6;
    std::int64_t patch_size = 32;   // k
    std::int64_t num_patches = 64;  // n
    std::int64_t num_points = 1024;
    int projector_depth = 0;  // extra Transformer layers ahead of the projector MLP
    bool share_pcm_weights = true;
    AttnScale attn_scale = AttnScale::per_head;
    TargetMode target_mode = TargetMode::pem;
    bool decoder_pe_per_block = false;

    void validate() const {
        if (d_model <= 0 || d_model % 6 != 0)
            throw std::invalid_argument("model width " + std::to_string(d_model) +
                                        " must be a positive multiple of 6");
        if (heads <= 0 || d_model % heads != 0)
            throw std::invalid_argument("model width " + std::to_string(d_model) +
                                        " not divisible by " + std::to_string(heads) + " heads");
        if (encoder_depth < 1 || decoder_depth < 1)
            throw std::invalid_argument("encoder/decoder depth must be at least 1");
        if (projector_depth < 0) throw std::invalid_argument("projector depth must be >= 0");
        if (patch_size < 1 || num_patches < 1 || num_points < 1)
            throw std::invalid_argument("patch geometry must be positive");
        if (num_patches > num_points)
            throw std::invalid_argument("cannot sample " + std::to_string(num_patches) +
                                        " patch centers from " + std::to_string(num_points) +
                                        " points");
    }

    // Width of the center-prediction output (and of the loss target).
    std::int64_t predict_width() const { return target_mode == TargetMode::coords ? 3 : d_model; }
};

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

template <class Real>
struct BlockWeights {
    Tensor<Real> ln1_g, ln1_b;
    Tensor<Real> wq, bq, wk, bk, wv, bv;
    Tensor<Real> attn_proj_w, attn_proj_b;
    Tensor<Real> ln2_g, ln2_b;
    Tensor<Real> mlp1_w, mlp1_b, mlp2_w, mlp2_b;
};

template <class Real>
struct ModelWeights {
    ModelConfig config;
    ParamStore<Real> store;

    PointNetWeights<Real> pointnet;
    PemWeights<Real> pem;
    std::vector<BlockWeights<Real>> encoder;
    // Same tensor handles as `encoder` when weights are shared; separately
    // stored blocks otherwise.
    std::vector<BlockWeights<Real>> pcm;
    Tensor<Real> enc_norm_g, enc_norm_b;
    std::vector<BlockWeights<Real>> projector_blocks;
    Tensor<Real> proj_fc1_w, proj_fc1_b, proj_ln_g, proj_ln_b, proj_fc2_w, proj_fc2_b;
    Tensor<Real> mask_token;  // [D]
    std::vector<BlockWeights<Real>> decoder;
    Tensor<Real> dec_norm_g, dec_norm_b;
    Tensor<Real> head_w, head_b;  // D -> 3k
};

namespace detail {

template <class Real>
std::vector<Real> normal_init(Rng& rng, std::int64_t n, double stddev = 0.02) {
    std::vector<Real> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = static_cast<Real>(rng.normal() * stddev);
    return v;
}

template <class Real>
BlockWeights<Real> build_block(ParamStore<Real>& store, const std::string& prefix, std::int64_t d,
                               Rng& rng) {
    const std::int64_t hidden = 4 * d;
    BlockWeights<Real> b;
    b.ln1_g = store.add_param(prefix + ".ln1.g", {d}, std::vector<Real>(d, Real(1)));
    b.ln1_b = store.add_param(prefix + ".ln1.b", {d}, std::vector<Real>(d, Real(0)));
    b.wq = store.add_param(prefix + ".attn.wq", {d, d}, normal_init<Real>(rng, d * d));
    b.bq = store.add_param(prefix + ".attn.bq", {d}, std::vector<Real>(d, Real(0)));
    b.wk = store.add_param(prefix + ".attn.wk", {d, d}, normal_init<Real>(rng, d * d));
    b.bk = store.add_param(prefix + ".attn.bk", {d}, std::vector<Real>(d, Real(0)));
    b.wv = store.add_param(prefix + ".attn.wv", {d, d}, normal_init<Real>(rng, d * d));
    b.bv = store.add_param(prefix + ".attn.bv", {d}, std::vector<Real>(d, Real(0)));
    b.attn_proj_w =
        store.add_param(prefix + ".attn.proj.w", {d, d}, normal_init<Real>(rng, d * d));
    b.attn_proj_b = store.add_param(prefix + ".attn.proj.b", {d}, std::vector<Real>(d, Real(0)));
    b.ln2_g = store.add_param(prefix + ".ln2.g", {d}, std::vector<Real>(d, Real(1)));
    b.ln2_b = store.add_param(prefix + ".ln2.b", {d}, std::vector<Real>(d, Real(0)));
    b.mlp1_w = store.add_param(prefix + ".mlp.fc1.w", {d, hidden},
                               normal_init<Real>(rng, d * hidden));
    b.mlp1_b = store.add_param(prefix + ".mlp.fc1.b", {hidden},
                               std::vector<Real>(hidden, Real(0)));
    b.mlp2_w = store.add_param(prefix + ".mlp.fc2.w", {hidden, d},
                               normal_init<Real>(rng, hidden * d));
    b.mlp2_b = store.add_param(prefix + ".mlp.fc2.b", {d}, std::vector<Real>(d, Real(0)));
    return b;
}

}  // namespace detail

template <class Real>
ModelWeights<Real> build_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ModelWeights<Real> w;
    w.config = cfg;
    auto& st = w.store;
    const std::int64_t d = cfg.d_model;

    w.pointnet.s1_w = st.add_param("embed.pointnet.s1.w", {3, kPointNetStage1},
                                   detail::normal_init<Real>(rng, 3 * kPointNetStage1));
    w.pointnet.s1_b = st.add_param("embed.pointnet.s1.b", {kPointNetStage1},
                                   std::vector<Real>(kPointNetStage1, Real(0)));
    w.pointnet.s2_w =
        st.add_param("embed.pointnet.s2.w", {kPointNetStage2, kPointNetStage2},
                     detail::normal_init<Real>(rng, kPointNetStage2 * kPointNetStage2));
    w.pointnet.s2_b = st.add_param("embed.pointnet.s2.b", {kPointNetStage2},
                                   std::vector<Real>(kPointNetStage2, Real(0)));
    w.pointnet.proj_w = st.add_param("embed.pointnet.proj.w", {kPointNetStage2, d},
                                     detail::normal_init<Real>(rng, kPointNetStage2 * d));
    w.pointnet.proj_b =
        st.add_param("embed.pointnet.proj.b", {d}, std::vector<Real>(d, Real(0)));

    w.pem.fc1_w = st.add_param("embed.pem.fc1.w", {d, d}, detail::normal_init<Real>(rng, d * d));
    w.pem.fc1_b = st.add_param("embed.pem.fc1.b", {d}, std::vector<Real>(d, Real(0)));
    w.pem.fc2_w = st.add_param("embed.pem.fc2.w", {d, d}, detail::normal_init<Real>(rng, d * d));
    w.pem.fc2_b = st.add_param("embed.pem.fc2.b", {d}, std::vector<Real>(d, Real(0)));

    for (int i = 0; i < cfg.encoder_depth; ++i)
        w.encoder.push_back(detail::build_block(st, "enc.block" + std::to_string(i), d, rng));
    w.enc_norm_g = st.add_param("enc.norm.g", {d}, std::vector<Real>(d, Real(1)));
    w.enc_norm_b = st.add_param("enc.norm.b", {d}, std::vector<Real>(d, Real(0)));

    if (cfg.share_pcm_weights) {
        w.pcm = w.encoder;  // same tensor handles: storage identity
    } else {
        for (int i = 0; i < cfg.encoder_depth; ++i)
            w.pcm.push_back(detail::build_block(st, "pcm.block" + std::to_string(i), d, rng));
    }

    for (int i = 0; i < cfg.projector_depth; ++i)
        w.projector_blocks.push_back(
            detail::build_block(st, "projector.block" + std::to_string(i), d, rng));
    const std::int64_t out_w = cfg.predict_width();
    w.proj_fc1_w = st.add_param("projector.fc1.w", {d, d}, detail::normal_init<Real>(rng, d * d));
    w.proj_fc1_b = st.add_param("projector.fc1.b", {d}, std::vector<Real>(d, Real(0)));
    w.proj_ln_g = st.add_param("projector.ln.g", {d}, std::vector<Real>(d, Real(1)));
    w.proj_ln_b = st.add_param("projector.ln.b", {d}, std::vector<Real>(d, Real(0)));
    w.proj_fc2_w =
        st.add_param("projector.fc2.w", {d, out_w}, detail::normal_init<Real>(rng, d * out_w));
    w.proj_fc2_b = st.add_param("projector.fc2.b", {out_w}, std::vector<Real>(out_w, Real(0)));

    w.mask_token = st.add_param("mask_token", {d}, detail::normal_init<Real>(rng, d));

    for (int i = 0; i < cfg.decoder_depth; ++i)
        w.decoder.push_back(detail::build_block(st, "dec.block" + std::to_string(i), d, rng));
    w.dec_norm_g = st.add_param("dec.norm.g", {d}, std::vector<Real>(d, Real(1)));
    w.dec_norm_b = st.add_param("dec.norm.b", {d}, std::vector<Real>(d, Real(0)));

    const std::int64_t head_out = 3 * cfg.patch_size;
    w.head_w = st.add_param("head.w", {d, head_out},
                            detail::normal_init<Real>(rng, d * head_out));
    w.head_b = st.add_param("head.b", {head_out}, std::vector<Real>(head_out, Real(0)));
    return w;
}

// ---------------------------------------------------------------------------
// Attention and Transformer blocks (pre-norm residual wiring)
// ---------------------------------------------------------------------------

// q_in [B, Sq, D] and kv_in [B, Skv, D] are already normalized. When
// attn_weights is given it receives the [B, H, Sq, Skv] softmax rows.
template <class Real>
Tensor<Real> multi_head_attention(const Tensor<Real>& q_in, const Tensor<Real>& kv_in,
                                  const BlockWeights<Real>& w, int heads, AttnScale scale_mode,
                                  Tensor<Real>* attn_weights = nullptr) {
    const std::int64_t b = q_in.dim(0), sq = q_in.dim(1), d = q_in.dim(2);
    const std::int64_t skv = kv_in.dim(1);
    if (d % heads != 0)
        throw std::invalid_argument("attention width " + std::to_string(d) +
                                    " not divisible by " + std::to_string(heads) + " heads");
    const std::int64_t hd = d / heads;

    auto split = [&](const Tensor<Real>& x, std::int64_t s) {
        return permute(reshape(x, {b, s, heads, hd}), {0, 2, 1, 3});  // [B, H, S, hd]
    };
    auto q = split(linear(q_in, w.wq, w.bq), sq);
    auto k = split(linear(kv_in, w.wk, w.bk), skv);
    auto v = split(linear(kv_in, w.wv, w.bv), skv);

    const Real scale = scale_mode == AttnScale::per_head
                           ? Real(1) / std::sqrt(static_cast<Real>(hd))
                           : Real(1) / std::sqrt(static_cast<Real>(d));
    auto scores = scalar_mul(matmul(q, permute(k, {0, 1, 3, 2})), scale);
    auto attn = softmax(scores, 3);
    if (attn_weights) *attn_weights = attn;
    auto ctx = reshape(permute(matmul(attn, v), {0, 2, 1, 3}), {b, sq, d});
    return linear(ctx, w.attn_proj_w, w.attn_proj_b);
}

template <class Real>
Tensor<Real> block_mlp(const Tensor<Real>& x, const BlockWeights<Real>& w) {
    return linear(gelu(linear(x, w.mlp1_w, w.mlp1_b)), w.mlp2_w, w.mlp2_b);
}

// Standard self-attention block over one token stream.
template <class Real>
Tensor<Real> encoder_block_self(const Tensor<Real>& x, const BlockWeights<Real>& w, int heads,
                                AttnScale scale_mode) {
    auto ln1 = layer_norm(x, w.ln1_g, w.ln1_b);
    auto x1 = add(x, multi_head_attention(ln1, ln1, w, heads, scale_mode));
    return add(x1, block_mlp(layer_norm(x1, w.ln2_g, w.ln2_b), w));
}

// One cross-attention step of the masked stream: queries come from the
// masked stream, keys/values from the concatenation of the (pre-block)
// visible activations and the masked stream, all through the shared
// projections. With no visible tokens this degenerates to self-attention
// among the masked tokens.
template <class Real>
Tensor<Real> pcm_block_cross(const Tensor<Real>& masked, const Tensor<Real>& visible,
                             const BlockWeights<Real>& w, int heads, AttnScale scale_mode,
                             Tensor<Real>* attn_weights = nullptr) {
    auto ln_m = layer_norm(masked, w.ln1_g, w.ln1_b);
    Tensor<Real> kv = ln_m;
    if (visible.dim(1) > 0) {
        auto ln_v = layer_norm(visible, w.ln1_g, w.ln1_b);
        kv = concat(ln_v, ln_m, 1);
    }
    auto x1 = add(masked, multi_head_attention(ln_m, kv, w, heads, scale_mode, attn_weights));
    return add(x1, block_mlp(layer_norm(x1, w.ln2_g, w.ln2_b), w));
}

// ---------------------------------------------------------------------------
// Full forward passes
// ---------------------------------------------------------------------------

template <class Real>
struct JointOutput {
    Tensor<Real> visible;   // T_v: [B, V, D] after the final encoder norm
    Tensor<Real> predicted; // PE^pred_m: [B, M, predict_width]
};

// Plain encoder over one stream (used for fine-tuning and the m = 0 case).
template <class Real>
Tensor<Real> encoder_forward(const Tensor<Real>& tokens, const Tensor<Real>& pe,
                             const ModelWeights<Real>& w) {
    auto t = add(tokens, pe);
    for (const auto& blk : w.encoder)
        t = encoder_block_self(t, blk, w.config.heads, w.config.attn_scale);
    return layer_norm(t, w.enc_norm_g, w.enc_norm_b);
}

// Runs encoder and PCM in depth-lockstep: PCM block i attends over the
// encoder's layer-(i-1) visible activations. Information flows one way; the
// visible stream never sees the masked stream.
template <class Real>
JointOutput<Real> joint_forward(const Tensor<Real>& e_v, const Tensor<Real>& pe_v,
                                const Tensor<Real>& e_m, const ModelWeights<Real>& w) {
    const auto& cfg = w.config;
    const std::int64_t batch = e_m.dim(0);
    const std::int64_t n_vis = e_v.dim(1), n_msk = e_m.dim(1);

    Tensor<Real> t = n_vis > 0 ? add(e_v, pe_v) : e_v;
    Tensor<Real> s = e_m;  // PE^0_m = E_m
    for (int i = 0; i < cfg.encoder_depth; ++i) {
        const auto& enc_blk = w.encoder[i];
        const auto& pcm_blk = w.pcm[i];
        Tensor<Real> s_next;
        if (n_msk > 0)
            s_next = pcm_block_cross(s, t, pcm_blk, cfg.heads, cfg.attn_scale);
        if (n_vis > 0)
            t = encoder_block_self(t, enc_blk, cfg.heads, cfg.attn_scale);
        if (n_msk > 0) s = s_next;
    }
    JointOutput<Real> out;
    out.visible = n_vis > 0 ? layer_norm(t, w.enc_norm_g, w.enc_norm_b) : t;

    if (n_msk > 0) {
        for (const auto& blk : w.projector_blocks)
            s = encoder_block_self(s, blk, cfg.heads, cfg.attn_scale);
        auto h = relu(layer_norm(linear(s, w.proj_fc1_w, w.proj_fc1_b), w.proj_ln_g, w.proj_ln_b));
        out.predicted = linear(h, w.proj_fc2_w, w.proj_fc2_b);
    } else {
        out.predicted = Tensor<Real>::zeros({batch, 0, cfg.predict_width()});
    }
    return out;
}

// Decoder over concat(T_v + PE_v, [M] + masked_pe); the caller wraps
// masked_pe in stop_gradient unless the ablation disables it. Returns the
// last mn positions.
template <class Real>
Tensor<Real> decoder_forward(const Tensor<Real>& t_v, const Tensor<Real>& pe_v,
                             const Tensor<Real>& masked_pe, const ModelWeights<Real>& w) {
    const auto& cfg = w.config;
    const std::int64_t n_vis = t_v.dim(1), n_msk = masked_pe.dim(1);
    auto msk = add(masked_pe, w.mask_token);  // broadcast [M] over all masked positions
    Tensor<Real> seq = n_vis > 0 ? concat(add(t_v, pe_v), msk, 1) : msk;
    Tensor<Real> pe_all;
    if (cfg.decoder_pe_per_block)
        pe_all = n_vis > 0 ? concat(pe_v, masked_pe, 1) : masked_pe;
    for (std::size_t i = 0; i < w.decoder.size(); ++i) {
        if (cfg.decoder_pe_per_block && i > 0) seq = add(seq, pe_all);
        seq = encoder_block_self(seq, w.decoder[i], cfg.heads, cfg.attn_scale);
    }
    seq = layer_norm(seq, w.dec_norm_g, w.dec_norm_b);
    return slice(seq, 1, n_vis, n_msk);
}

// Single linear map D -> 3k reshaped to [.., k, 3] normalized coordinates.
template <class Real>
Tensor<Real> reconstruction_head(const Tensor<Real>& h_m, const ModelWeights<Real>& w) {
    auto flat = linear(h_m, w.head_w, w.head_b);
    Shape out_shape(h_m.shape().begin(), h_m.shape().end() - 1);
    out_shape.push_back(w.config.patch_size);
    out_shape.push_back(3);
    return reshape(flat, out_shape);
}

// ---------------------------------------------------------------------------
// Analytic parameter counting
// ---------------------------------------------------------------------------

struct ParamBreakdown {
    std::int64_t embed = 0;      // mini-PointNet + PEM
    std::int64_t encoder = 0;    // blocks + final norm
    std::int64_t pcm_extra = 0;  // 0 when shared
    std::int64_t projector = 0;
    std::int64_t decoder = 0;
    std::int64_t mask_token = 0;
    std::int64_t head = 0;

    std::int64_t total() const {
        return embed + encoder + pcm_extra + projector + decoder + mask_token + head;
    }
};

inline std::int64_t block_param_count(std::int64_t d) {
    // two norms, qkv + output projection with bias, 4x MLP
    return 12 * d * d + 13 * d;
}

inline ParamBreakdown count_params_breakdown(const ModelConfig& cfg) {
    cfg.validate();
    const std::int64_t d = cfg.d_model;
    ParamBreakdown out;
    out.embed = (3 * kPointNetStage1 + kPointNetStage1) +
                (kPointNetStage2 * kPointNetStage2 + kPointNetStage2) +
                (kPointNetStage2 * d + d) +  // mini-PointNet
                2 * (d * d + d);             // PEM
    out.encoder = cfg.encoder_depth * block_param_count(d) + 2 * d;
    out.pcm_extra = cfg.share_pcm_weights ? 0 : cfg.encoder_depth * block_param_count(d);
    const std::int64_t proj_out = cfg.predict_width();
    out.projector = cfg.projector_depth * block_param_count(d) + (d * d + d) + 2 * d +
                    (d * proj_out + proj_out);
    out.decoder = cfg.decoder_depth * block_param_count(d) + 2 * d;
    out.mask_token = d;
    out.head = d * 3 * cfg.patch_size + 3 * cfg.patch_size;
    return out;
}

inline std::int64_t count_params(const ModelConfig& cfg) {
    return count_params_breakdown(cfg).total();
}

}  // namespace pcpmae
