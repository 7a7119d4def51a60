#pragma once

#include <functional>

#include "pcpmae/geometry.hpp"
#include "pcpmae/losses.hpp"
#include "pcpmae/model.hpp"
#include "pcpmae/optim.hpp"

namespace pcpmae {

enum class PcLoss { l2, l1, smooth_l1, cosine };

inline const char* pc_loss_name(PcLoss p) {
    switch (p) {
        case PcLoss::l2: return "l2";
        case PcLoss::l1: return "l1";
        case PcLoss::smooth_l1: return "smooth_l1";
        case PcLoss::cosine: return "cosine";
    }
    return "?";
}

inline PcLoss pc_loss_from_name(const std::string& s) {
    if (s == "l2") return PcLoss::l2;
    if (s == "l1") return PcLoss::l1;
    if (s == "smooth_l1") return PcLoss::smooth_l1;
    if (s == "cosine") return PcLoss::cosine;
    throw std::invalid_argument("unknown center-prediction loss '" + s + "'");
}

struct TrainConfig {
    ModelConfig model;

    double mask_ratio = 0.6;
    double eta = 0.1;
    int epochs = 200;
    int batch_size = 16;
    double base_lr = 5e-4;
    double min_lr = 1e-6;
    double weight_decay = 0.05;
    int warmup_epochs = 10;
    double grad_clip = 10.0;
    std::uint64_t seed = 0;
    std::vector<std::string> augmentations{"scale_translate", "rotate"};
    PcLoss pc_loss = PcLoss::l2;
    bool stop_gradient_on = true;
    bool target_carries_grad = false;

    // synthetic dataset
    int dataset_size = 200;
    std::int64_t dataset_points = 0;  // 0 -> 2 * model.num_points
    double dataset_noise = 0.01;

    // fine-tuning
    int finetune_epochs = 40;
    double finetune_lr = 1e-3;
    int finetune_batch = 16;
    bool freeze_encoder = false;
    int classes = kShapeKinds;
    int finetune_train_per_class = 12;
    int finetune_test_per_class = 8;

    std::int64_t points_per_cloud() const {
        return dataset_points > 0 ? dataset_points : 2 * model.num_points;
    }

    void validate() const {
        model.validate();
        if (mask_ratio < 0.0 || mask_ratio > 1.0)
            throw std::invalid_argument("mask ratio " + std::to_string(mask_ratio) +
                                        " outside [0,1]");
        if (eta < 0.0) throw std::invalid_argument("eta must be non-negative");
        if (epochs < 1 || batch_size < 1) throw std::invalid_argument("epochs/batch must be >= 1");
        if (base_lr <= 0.0 || min_lr <= 0.0 || finetune_lr <= 0.0)
            throw std::invalid_argument("learning rates must be positive");
        if (warmup_epochs < 0 || warmup_epochs >= epochs)
            throw std::invalid_argument("warmup epochs must sit below total epochs");
        if (dataset_size < 1) throw std::invalid_argument("dataset size must be >= 1");
        if (points_per_cloud() < static_cast<std::int64_t>(model.num_points))
            throw std::invalid_argument("dataset clouds smaller than the sampling budget");
        if (classes < 1 || classes > kShapeKinds)
            throw std::invalid_argument("classes must be in [1," + std::to_string(kShapeKinds) +
                                        "]");
    }
};

// Desk-scale defaults for CI-sized runs.
inline TrainConfig desk_config() {
    TrainConfig cfg;
    cfg.model.d_model = 96;
    cfg.model.encoder_depth = 4;
    cfg.model.decoder_depth = 2;
    cfg.model.heads = 4;
    cfg.model.num_patches = 16;
    cfg.model.patch_size = 16;
    cfg.model.num_points = 512;
    cfg.epochs = 200;
    cfg.batch_size = 16;
    cfg.dataset_size = 200;
    return cfg;
}

// The published pre-training configuration.
inline TrainConfig paper_config() {
    TrainConfig cfg;
    cfg.model = ModelConfig{};  // D = 384, 12 + 4 blocks, 6 heads, n = 64, k = 32
    cfg.epochs = 300;
    cfg.batch_size = 128;
    cfg.dataset_size = 200;  // synthetic stand-in; real corpus loaders are out of scope
    return cfg;
}

// ---------------------------------------------------------------------------
// Masking
// ---------------------------------------------------------------------------

inline std::int64_t masked_count(std::int64_t n, double m) {
    return static_cast<std::int64_t>(std::floor(m * static_cast<double>(n) + 1e-9));
}

// Uniform split with |masked| = floor(m n); both index lists are sorted.
inline MaskSplit mask_split(std::int64_t n, double m, Rng& rng) {
    if (m < 0.0 || m > 1.0)
        throw std::invalid_argument("mask_split: ratio " + std::to_string(m) + " outside [0,1]");
    if (n < 0) throw std::invalid_argument("mask_split: negative patch count");
    const std::int64_t n_mask = masked_count(n, m);
    auto perm = rng.permutation(static_cast<std::size_t>(n));
    MaskSplit split;
    split.ratio = m;
    split.masked_indices.assign(perm.begin(), perm.begin() + n_mask);
    split.visible_indices.assign(perm.begin() + n_mask, perm.end());
    std::sort(split.masked_indices.begin(), split.masked_indices.end());
    std::sort(split.visible_indices.begin(), split.visible_indices.end());
    return split;
}

inline MaskSplit mask_split(std::int64_t n, double m, std::uint64_t seed) {
    Rng rng(seed);
    return mask_split(n, m, rng);
}

// ---------------------------------------------------------------------------
// Synthetic datasets
// ---------------------------------------------------------------------------

inline std::vector<PointCloud> make_synthetic_dataset(int count, std::int64_t points_per_cloud,
                                                      double noise, std::uint64_t seed,
                                                      int num_classes = kShapeKinds) {
    if (num_classes < 1 || num_classes > kShapeKinds)
        throw std::invalid_argument("make_synthetic_dataset: bad class count");
    Rng rng(seed);
    std::vector<PointCloud> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i)
        out.push_back(gen_synthetic_shape(static_cast<ShapeKind>(i % num_classes),
                                          static_cast<std::size_t>(points_per_cloud), noise, rng));
    return out;
}

// ---------------------------------------------------------------------------
// Batch preparation (all randomness happens here; the loss build is pure)
// ---------------------------------------------------------------------------

template <class Real>
struct PreparedBatch {
    std::int64_t batch = 0, visible = 0, masked = 0;
    Tensor<Real> patches;              // [B, n, k, 3], visible patches first
    std::vector<Real> sincos_visible;  // B * V * D
    std::vector<Real> sincos_masked;   // B * M * D
    std::vector<Real> masked_centers;  // B * M * 3
    std::vector<Real> gt_masked;       // B * M * k * 3
    std::vector<MaskSplit> splits;     // per cloud, in original patch indexing
};

inline PointCloud apply_augmentations(const PointCloud& cloud,
                                      const std::vector<std::string>& augs, Rng& rng) {
    PointCloud out = cloud;
    for (const auto& a : augs) {
        if (a == "scale_translate")
            out = augment_scale_translate(out, rng);
        else if (a == "rotate")
            out = augment_rotate(out, rng);
        else if (a == "jitter")
            out = augment_jitter(out, rng);
        else if (a == "flip")
            out = augment_flip(out, rng);
        else if (a != "none")
            throw std::invalid_argument("unknown augmentation '" + a + "'");
    }
    return out;
}

// augment -> FPS-sample the point budget -> patchify -> mask -> reorder
// visible-first. Ground-truth masked patches and centers come along as
// constants for the loss.
template <class Real>
PreparedBatch<Real> prepare_batch(const std::vector<const PointCloud*>& clouds,
                                  const TrainConfig& cfg, double mask_ratio, Rng& rng,
                                  bool augment = true) {
    const auto& mc = cfg.model;
    const std::int64_t b = static_cast<std::int64_t>(clouds.size());
    const std::int64_t n = mc.num_patches, k = mc.patch_size, d = mc.d_model;
    const std::int64_t n_mask = masked_count(n, mask_ratio);
    const std::int64_t n_vis = n - n_mask;

    PreparedBatch<Real> out;
    out.batch = b;
    out.visible = n_vis;
    out.masked = n_mask;
    std::vector<Real> patch_data;
    patch_data.reserve(static_cast<std::size_t>(b * n * k * 3));
    out.sincos_visible.reserve(static_cast<std::size_t>(b * n_vis * d));
    out.sincos_masked.reserve(static_cast<std::size_t>(b * n_mask * d));
    out.masked_centers.reserve(static_cast<std::size_t>(b * n_mask * 3));
    out.gt_masked.reserve(static_cast<std::size_t>(b * n_mask * k * 3));

    for (const PointCloud* cloud : clouds) {
        PointCloud aug = augment ? apply_augmentations(*cloud, cfg.augmentations, rng) : *cloud;
        auto sample_idx = fps(aug, static_cast<std::size_t>(mc.num_points), rng);
        PointCloud sampled;
        sampled.label = aug.label;
        sampled.points.reserve(sample_idx.size());
        for (auto i : sample_idx) sampled.points.push_back(aug.points[i]);

        auto centers = fps(sampled, static_cast<std::size_t>(n), rng);
        auto ps = knn_group(sampled, centers, static_cast<std::size_t>(k));
        auto split = mask_split(n, mask_ratio, rng);

        auto emit_patch = [&](std::size_t pi) {
            for (const auto& p : ps.patches[pi])
                for (int c = 0; c < 3; ++c) patch_data.push_back(static_cast<Real>(p[c]));
        };
        for (auto pi : split.visible_indices) {
            emit_patch(pi);
            auto row = sincos_pe_row<Real>(ps.centers[pi], d);
            out.sincos_visible.insert(out.sincos_visible.end(), row.begin(), row.end());
        }
        for (auto pi : split.masked_indices) {
            emit_patch(pi);
            auto row = sincos_pe_row<Real>(ps.centers[pi], d);
            out.sincos_masked.insert(out.sincos_masked.end(), row.begin(), row.end());
            for (int c = 0; c < 3; ++c)
                out.masked_centers.push_back(static_cast<Real>(ps.centers[pi][c]));
            for (const auto& p : ps.patches[pi])
                for (int c = 0; c < 3; ++c) out.gt_masked.push_back(static_cast<Real>(p[c]));
        }
        out.splits.push_back(std::move(split));
    }
    out.patches = Tensor<Real>::from_data({b, n, k, 3}, std::move(patch_data));
    return out;
}

// ---------------------------------------------------------------------------
// Objective
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> loss_pc(const Tensor<Real>& predicted, const Tensor<Real>& target, PcLoss mode) {
    switch (mode) {
        case PcLoss::l2: return mse_loss(predicted, target);
        case PcLoss::l1: return l1_loss(predicted, target);
        case PcLoss::smooth_l1: return smooth_l1_loss(predicted, target);
        case PcLoss::cosine: return cosine_loss(predicted, target);
    }
    throw std::logic_error("loss_pc: bad mode");
}

template <class Real>
Tensor<Real> total_loss(const Tensor<Real>& pc, const Tensor<Real>& recon, double eta) {
    if (eta < 0.0) throw std::invalid_argument("total_loss: eta must be non-negative");
    return add(scalar_mul(pc, Real(eta)), recon);
}

template <class Real>
struct LossParts {
    Tensor<Real> total, pc, recon;
};

// The PCP-MAE objective on one prepared batch: joint encoder/PCM forward,
// center-prediction loss, decoder with the (optionally stopped) predicted
// positional embeddings, Chamfer reconstruction loss.
template <class Real>
LossParts<Real> build_pretrain_loss(const PreparedBatch<Real>& batch, ModelWeights<Real>& w,
                                    const TrainConfig& cfg) {
    const auto& mc = w.config;
    const std::int64_t b = batch.batch, v = batch.visible, m = batch.masked, d = mc.d_model;
    LossParts<Real> parts;
    if (m == 0) {
        parts.pc = Tensor<Real>::scalar(Real(0));
        parts.recon = Tensor<Real>::scalar(Real(0));
        parts.total = total_loss(parts.pc, parts.recon, cfg.eta);
        return parts;
    }

    auto tokens = mini_pointnet_forward(batch.patches, w.pointnet);  // [B, n, D]
    auto e_v = slice(tokens, 1, 0, v);
    auto e_m = slice(tokens, 1, v, m);
    Tensor<Real> pe_v =
        v > 0 ? pem_forward(Tensor<Real>::from_data({b, v, d}, batch.sincos_visible), w.pem)
              : Tensor<Real>::zeros({b, 0, d});

    auto joint = joint_forward(e_v, pe_v, e_m, w);

    Tensor<Real> target;
    switch (mc.target_mode) {
        case TargetMode::pem: {
            auto t = pem_forward(Tensor<Real>::from_data({b, m, d}, batch.sincos_masked), w.pem);
            target = cfg.target_carries_grad ? t : stop_gradient(t);
            break;
        }
        case TargetMode::sincos:
            target = Tensor<Real>::from_data({b, m, d}, batch.sincos_masked);
            break;
        case TargetMode::coords:
            target = Tensor<Real>::from_data({b, m, 3}, batch.masked_centers);
            break;
    }
    parts.pc = loss_pc(joint.predicted, target, cfg.pc_loss);

    // Complete the embedding pipeline from the predicted stage onward so the
    // decoder always receives a model-space positional embedding.
    Tensor<Real> dec_pe = joint.predicted;
    if (mc.target_mode == TargetMode::coords) dec_pe = sincos_pe_op(dec_pe, d);
    if (mc.target_mode != TargetMode::pem) dec_pe = pem_forward(dec_pe, w.pem);
    if (cfg.stop_gradient_on) dec_pe = stop_gradient(dec_pe);

    auto h_m = decoder_forward(joint.visible, pe_v, dec_pe, w);
    auto pred = reconstruction_head(h_m, w);
    parts.recon = chamfer_to_const(pred, batch.gt_masked);
    parts.total = total_loss(parts.pc, parts.recon, cfg.eta);
    return parts;
}

// Decoder-only objective at full masking with the TRUE center embeddings
// (the center-leakage setup): no encoder, no PCM, no prediction.
template <class Real>
LossParts<Real> build_leakage_loss(const PreparedBatch<Real>& batch, ModelWeights<Real>& w,
                                   const TrainConfig& cfg) {
    const auto& mc = w.config;
    const std::int64_t b = batch.batch, m = batch.masked, d = mc.d_model;
    if (batch.visible != 0)
        throw std::invalid_argument("leakage loss expects a fully masked batch");
    auto pe_m = pem_forward(Tensor<Real>::from_data({b, m, d}, batch.sincos_masked), w.pem);
    auto empty = Tensor<Real>::zeros({b, 0, d});
    auto h_m = decoder_forward(empty, empty, pe_m, w);
    auto pred = reconstruction_head(h_m, w);
    LossParts<Real> parts;
    parts.pc = Tensor<Real>::scalar(Real(0));
    parts.recon = chamfer_to_const(pred, batch.gt_masked);
    parts.total = total_loss(parts.pc, parts.recon, 0.0);
    return parts;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct StepStats {
    double loss = 0, loss_pc = 0, loss_recon = 0;
    std::int64_t visible = 0, masked = 0;
};

template <class Real>
struct TrainState {
    TrainConfig cfg;
    ModelWeights<Real> weights;
    OptimState<Real> optim;
    Rng rng;
    std::vector<std::size_t> perm;  // current epoch order over the dataset
    std::size_t perm_pos = 0;
    std::int64_t step = 0;
};

inline std::uint64_t loop_seed(std::uint64_t seed) { return seed ^ 0x9E3779B97F4A7C15ull; }

template <class Real>
TrainState<Real> init_train_state(const TrainConfig& cfg) {
    cfg.validate();
    TrainState<Real> st;
    st.cfg = cfg;
    st.weights = build_model<Real>(cfg.model, cfg.seed);
    st.optim = OptimState<Real>::init(st.weights.store);
    st.rng = Rng(loop_seed(cfg.seed));
    return st;
}

// One optimizer step on one batch. Throws on a non-finite loss with the
// step diagnostics in the message.
template <class Real>
StepStats run_step(TrainState<Real>& st, const std::vector<const PointCloud*>& batch, double lr,
                   bool leakage_mode) {
    const double mask_ratio = leakage_mode ? 1.0 : st.cfg.mask_ratio;
    auto prep = prepare_batch<Real>(batch, st.cfg, mask_ratio, st.rng);
    auto parts = leakage_mode ? build_leakage_loss(prep, st.weights, st.cfg)
                              : build_pretrain_loss(prep, st.weights, st.cfg);
    StepStats stats;
    stats.loss = parts.total.item();
    stats.loss_pc = parts.pc.item();
    stats.loss_recon = parts.recon.item();
    stats.visible = prep.visible;
    stats.masked = prep.masked;
    if (!std::isfinite(stats.loss) || !std::isfinite(stats.loss_pc) ||
        !std::isfinite(stats.loss_recon))
        throw std::runtime_error("non-finite loss at step " + std::to_string(st.step) +
                                 ": L=" + std::to_string(stats.loss) +
                                 " L_PC=" + std::to_string(stats.loss_pc) +
                                 " L_Recon=" + std::to_string(stats.loss_recon));
    st.weights.store.zero_grad();
    backward(parts.total);
    clip_global_norm(st.weights.store, st.cfg.grad_clip);
    AdamWConfig adam;
    adam.weight_decay = st.cfg.weight_decay;
    adamw_step(st.weights.store, st.optim, lr, adam);
    st.step += 1;
    return stats;
}

struct EpochStats {
    int epoch = 0;
    double loss = 0, loss_pc = 0, loss_recon = 0, lr = 0;
    std::int64_t visible = 0, masked = 0;
};

inline std::int64_t steps_per_epoch(std::size_t dataset_size, int batch_size) {
    return static_cast<std::int64_t>((dataset_size + batch_size - 1) /
                                     static_cast<std::size_t>(batch_size));
}

// Runs epochs until cfg.epochs (or stop_after_steps, when positive, for
// resumability checks and periodic checkpointing); resumable from any saved
// state. The callback fires once per completed epoch.
template <class Real>
void run_training(TrainState<Real>& st, const std::vector<PointCloud>& dataset, bool leakage_mode,
                  const std::function<void(const EpochStats&)>& on_epoch = {},
                  std::int64_t stop_after_steps = 0) {
    const auto spe = steps_per_epoch(dataset.size(), st.cfg.batch_size);
    const std::int64_t total_steps = spe * st.cfg.epochs;
    const std::int64_t warmup_steps = spe * st.cfg.warmup_epochs;

    EpochStats acc;
    std::int64_t steps_in_epoch = st.step % spe;
    while (st.step < total_steps && (stop_after_steps <= 0 || st.step < stop_after_steps)) {
        if (st.perm_pos >= st.perm.size()) {
            st.perm = st.rng.permutation(dataset.size());
            st.perm_pos = 0;
        }
        std::vector<const PointCloud*> batch;
        const std::size_t take = std::min(static_cast<std::size_t>(st.cfg.batch_size),
                                          st.perm.size() - st.perm_pos);
        for (std::size_t i = 0; i < take; ++i) batch.push_back(&dataset[st.perm[st.perm_pos + i]]);
        st.perm_pos += take;

        const double lr =
            cosine_lr(st.step, total_steps, warmup_steps, st.cfg.base_lr, st.cfg.min_lr);
        auto stats = run_step(st, batch, lr, leakage_mode);
        acc.loss += stats.loss;
        acc.loss_pc += stats.loss_pc;
        acc.loss_recon += stats.loss_recon;
        acc.lr = lr;
        acc.visible = stats.visible;
        acc.masked = stats.masked;
        ++steps_in_epoch;

        if (steps_in_epoch == spe) {
            acc.epoch = static_cast<int>(st.step / spe);
            acc.loss /= static_cast<double>(spe);
            acc.loss_pc /= static_cast<double>(spe);
            acc.loss_recon /= static_cast<double>(spe);
            if (on_epoch) on_epoch(acc);
            acc = EpochStats{};
            steps_in_epoch = 0;
        }
    }
}

// Mean reconstruction Chamfer of the decoder-only model over a dataset with
// deterministic (unaugmented) patchification, next to the center-collapse
// baseline that predicts every masked point at its patch center.
struct LeakageEval {
    double model_chamfer = 0;
    double baseline_chamfer = 0;
};

template <class Real>
LeakageEval evaluate_leakage(TrainState<Real>& st, const std::vector<PointCloud>& dataset) {
    const auto& mc = st.cfg.model;
    const std::int64_t k = mc.patch_size;
    double model_total = 0, base_total = 0;
    std::int64_t patches = 0;
    Rng eval_rng(loop_seed(st.cfg.seed) ^ 0x5DEECE66Dull);
    for (const auto& cloud : dataset) {
        std::vector<const PointCloud*> one{&cloud};
        auto prep = prepare_batch<Real>(one, st.cfg, 1.0, eval_rng, /*augment=*/false);
        auto pe_m = pem_forward(
            Tensor<Real>::from_data({1, prep.masked, mc.d_model}, prep.sincos_masked),
            st.weights.pem);
        auto empty = Tensor<Real>::zeros({1, 0, mc.d_model});
        auto pred = reconstruction_head(decoder_forward(empty, empty, pe_m, st.weights),
                                        st.weights);
        for (std::int64_t p = 0; p < prep.masked; ++p) {
            std::vector<Point3> pred_pts(k), gt_pts(k), zero_pts(k, Point3{0, 0, 0});
            for (std::int64_t j = 0; j < k; ++j) {
                for (int c = 0; c < 3; ++c) {
                    pred_pts[j][c] = static_cast<double>(pred.data()[(p * k + j) * 3 + c]);
                    gt_pts[j][c] = static_cast<double>(prep.gt_masked[(p * k + j) * 3 + c]);
                }
            }
            model_total += chamfer_l2(pred_pts, gt_pts);
            base_total += chamfer_l2(zero_pts, gt_pts);
            ++patches;
        }
    }
    LeakageEval out;
    out.model_chamfer = model_total / static_cast<double>(patches);
    out.baseline_chamfer = base_total / static_cast<double>(patches);
    return out;
}

// ---------------------------------------------------------------------------
// Toy fine-tuning
// ---------------------------------------------------------------------------

template <class Real>
struct ClassifierHead {
    Tensor<Real> fc1_w, fc1_b, fc2_w, fc2_b;
};

template <class Real>
ClassifierHead<Real> build_classifier_head(ParamStore<Real>& store, std::int64_t d, int classes,
                                           Rng& rng) {
    ClassifierHead<Real> head;
    head.fc1_w = store.add_param("cls.fc1.w", {2 * d, d}, detail::normal_init<Real>(rng, 2 * d * d));
    head.fc1_b = store.add_param("cls.fc1.b", {d}, std::vector<Real>(d, Real(0)));
    head.fc2_w = store.add_param("cls.fc2.w", {d, classes},
                                 detail::normal_init<Real>(rng, d * classes));
    head.fc2_b = store.add_param("cls.fc2.b", {classes}, std::vector<Real>(classes, Real(0)));
    return head;
}

// concat(mean-pool, max-pool) of the encoder tokens -> 2-layer MLP head.
template <class Real>
Tensor<Real> classify_batch(const PreparedBatch<Real>& prep, ModelWeights<Real>& w,
                            const ClassifierHead<Real>& head) {
    const std::int64_t b = prep.batch, d = w.config.d_model;
    auto tokens = mini_pointnet_forward(prep.patches, w.pointnet);
    auto pe = pem_forward(Tensor<Real>::from_data({b, prep.visible, d}, prep.sincos_visible),
                          w.pem);
    auto encoded = encoder_forward(tokens, pe, w);            // [B, n, D]
    auto pooled = concat(mean_reduce(encoded, 1), max_reduce(encoded, 1), 1);  // [B, 2D]
    return linear(gelu(linear(pooled, head.fc1_w, head.fc1_b)), head.fc2_w, head.fc2_b);
}

struct FinetuneResult {
    double accuracy = 0;          // held-out accuracy after training
    double initial_accuracy = 0;  // before any head update
};

// Trains the classification head (and the encoder stack unless frozen) with
// cross-entropy; reports held-out accuracy.
template <class Real>
FinetuneResult finetune_classifier(ModelWeights<Real>& weights,
                                   const std::vector<PointCloud>& train,
                                   const std::vector<PointCloud>& test, const TrainConfig& cfg,
                                   std::uint64_t seed) {
    for (const auto& c : train)
        if (c.label < 0 || c.label >= cfg.classes)
            throw std::invalid_argument("finetune: label " + std::to_string(c.label) +
                                        " outside [0," + std::to_string(cfg.classes) + ")");
    Rng rng(loop_seed(seed) ^ 0xF1E7);
    ParamStore<Real> trainable;
    if (!cfg.freeze_encoder)
        for (auto& e : weights.store.entries()) trainable.add(e.name, e.tensor);
    auto head = build_classifier_head<Real>(trainable, cfg.model.d_model, cfg.classes, rng);

    auto eval_accuracy = [&](const std::vector<PointCloud>& set) {
        Rng eval_rng(loop_seed(seed) ^ 0xACC);
        int correct = 0;
        for (std::size_t i = 0; i < set.size(); i += cfg.finetune_batch) {
            std::vector<const PointCloud*> batch;
            std::vector<int> labels;
            for (std::size_t j = i; j < std::min(set.size(), i + cfg.finetune_batch); ++j) {
                batch.push_back(&set[j]);
                labels.push_back(set[j].label);
            }
            auto prep = prepare_batch<Real>(batch, cfg, 0.0, eval_rng, /*augment=*/false);
            auto logits = classify_batch(prep, weights, head);
            const std::int64_t classes = logits.dim(1);
            for (std::size_t r = 0; r < batch.size(); ++r) {
                int best = 0;
                for (int c = 1; c < classes; ++c)
                    if (logits.data()[r * classes + c] > logits.data()[r * classes + best])
                        best = c;
                if (best == labels[r]) ++correct;
            }
        }
        return static_cast<double>(correct) / static_cast<double>(set.size());
    };

    FinetuneResult result;
    result.initial_accuracy = eval_accuracy(test);

    auto optim = OptimState<Real>::init(trainable);
    AdamWConfig adam;
    adam.weight_decay = cfg.weight_decay;
    const auto spe = steps_per_epoch(train.size(), cfg.finetune_batch);
    const std::int64_t total_steps = spe * cfg.finetune_epochs;
    const std::int64_t warmup = std::min<std::int64_t>(spe, total_steps - 1);
    std::int64_t step = 0;
    for (int epoch = 0; epoch < cfg.finetune_epochs; ++epoch) {
        auto perm = rng.permutation(train.size());
        for (std::size_t i = 0; i < perm.size(); i += cfg.finetune_batch) {
            std::vector<const PointCloud*> batch;
            std::vector<int> labels;
            for (std::size_t j = i; j < std::min(perm.size(), i + cfg.finetune_batch); ++j) {
                batch.push_back(&train[perm[j]]);
                labels.push_back(train[perm[j]].label);
            }
            auto prep = prepare_batch<Real>(batch, cfg, 0.0, rng, /*augment=*/false);
            auto loss = cross_entropy(classify_batch(prep, weights, head), labels);
            if (!std::isfinite(loss.item()))
                throw std::runtime_error("finetune: non-finite loss at step " +
                                         std::to_string(step));
            trainable.zero_grad();
            backward(loss);
            clip_global_norm(trainable, cfg.grad_clip);
            adamw_step(trainable, optim, cosine_lr(step, total_steps, warmup, cfg.finetune_lr),
                       adam);
            ++step;
        }
    }
    result.accuracy = eval_accuracy(test);
    return result;
}

}  // namespace pcpmae
