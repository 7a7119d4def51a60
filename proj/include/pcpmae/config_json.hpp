#pragma once

#include <json.hpp>

#include "pcpmae/training.hpp"

namespace pcpmae {

// Flat JSON object mirroring the TrainConfig / ModelConfig field names.
// Unknown keys are rejected so typos in config files fail loudly.
inline nlohmann::json config_to_json(const TrainConfig& cfg) {
    nlohmann::json j;
    j["d_model"] = cfg.model.d_model;
    j["encoder_depth"] = cfg.model.encoder_depth;
    j["decoder_depth"] = cfg.model.decoder_depth;
    j["heads"] = cfg.model.heads;
    j["patch_size"] = cfg.model.patch_size;
    j["num_patches"] = cfg.model.num_patches;
    j["num_points"] = cfg.model.num_points;
    j["projector_depth"] = cfg.model.projector_depth;
    j["share_pcm_weights"] = cfg.model.share_pcm_weights;
    j["attn_scale"] = cfg.model.attn_scale == AttnScale::per_head ? "per_head" : "full_dim";
    j["target_mode"] = target_mode_name(cfg.model.target_mode);
    j["decoder_pe_per_block"] = cfg.model.decoder_pe_per_block;

    j["mask_ratio"] = cfg.mask_ratio;
    j["eta"] = cfg.eta;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["base_lr"] = cfg.base_lr;
    j["min_lr"] = cfg.min_lr;
    j["weight_decay"] = cfg.weight_decay;
    j["warmup_epochs"] = cfg.warmup_epochs;
    j["grad_clip"] = cfg.grad_clip;
    j["seed"] = cfg.seed;
    j["augmentations"] = cfg.augmentations;
    j["pc_loss"] = pc_loss_name(cfg.pc_loss);
    j["stop_gradient_on"] = cfg.stop_gradient_on;
    j["target_carries_grad"] = cfg.target_carries_grad;

    j["dataset_size"] = cfg.dataset_size;
    j["dataset_points"] = cfg.dataset_points;
    j["dataset_noise"] = cfg.dataset_noise;

    j["finetune_epochs"] = cfg.finetune_epochs;
    j["finetune_lr"] = cfg.finetune_lr;
    j["finetune_batch"] = cfg.finetune_batch;
    j["freeze_encoder"] = cfg.freeze_encoder;
    j["classes"] = cfg.classes;
    j["finetune_train_per_class"] = cfg.finetune_train_per_class;
    j["finetune_test_per_class"] = cfg.finetune_test_per_class;
    return j;
}

// Applies the keys present in `j` on top of `base`.
inline TrainConfig config_from_json(const nlohmann::json& j, TrainConfig base = desk_config()) {
    TrainConfig cfg = base;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        const auto& v = it.value();
        if (key == "d_model") cfg.model.d_model = v.get<std::int64_t>();
        else if (key == "encoder_depth") cfg.model.encoder_depth = v.get<int>();
        else if (key == "decoder_depth") cfg.model.decoder_depth = v.get<int>();
        else if (key == "heads") cfg.model.heads = v.get<int>();
        else if (key == "patch_size") cfg.model.patch_size = v.get<std::int64_t>();
        else if (key == "num_patches") cfg.model.num_patches = v.get<std::int64_t>();
        else if (key == "num_points") cfg.model.num_points = v.get<std::int64_t>();
        else if (key == "projector_depth") cfg.model.projector_depth = v.get<int>();
        else if (key == "share_pcm_weights") cfg.model.share_pcm_weights = v.get<bool>();
        else if (key == "attn_scale") {
            const std::string s = v.get<std::string>();
            if (s == "per_head") cfg.model.attn_scale = AttnScale::per_head;
            else if (s == "full_dim") cfg.model.attn_scale = AttnScale::full_dim;
            else throw std::invalid_argument("config: attn_scale must be per_head or full_dim");
        } else if (key == "target_mode") cfg.model.target_mode = target_mode_from_name(v.get<std::string>());
        else if (key == "decoder_pe_per_block") cfg.model.decoder_pe_per_block = v.get<bool>();
        else if (key == "mask_ratio") cfg.mask_ratio = v.get<double>();
        else if (key == "eta") cfg.eta = v.get<double>();
        else if (key == "epochs") cfg.epochs = v.get<int>();
        else if (key == "batch_size") cfg.batch_size = v.get<int>();
        else if (key == "base_lr") cfg.base_lr = v.get<double>();
        else if (key == "min_lr") cfg.min_lr = v.get<double>();
        else if (key == "weight_decay") cfg.weight_decay = v.get<double>();
        else if (key == "warmup_epochs") cfg.warmup_epochs = v.get<int>();
        else if (key == "grad_clip") cfg.grad_clip = v.get<double>();
        else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
        else if (key == "augmentations") cfg.augmentations = v.get<std::vector<std::string>>();
        else if (key == "pc_loss") cfg.pc_loss = pc_loss_from_name(v.get<std::string>());
        else if (key == "stop_gradient_on") cfg.stop_gradient_on = v.get<bool>();
        else if (key == "target_carries_grad") cfg.target_carries_grad = v.get<bool>();
        else if (key == "dataset_size") cfg.dataset_size = v.get<int>();
        else if (key == "dataset_points") cfg.dataset_points = v.get<std::int64_t>();
        else if (key == "dataset_noise") cfg.dataset_noise = v.get<double>();
        else if (key == "finetune_epochs") cfg.finetune_epochs = v.get<int>();
        else if (key == "finetune_lr") cfg.finetune_lr = v.get<double>();
        else if (key == "finetune_batch") cfg.finetune_batch = v.get<int>();
        else if (key == "freeze_encoder") cfg.freeze_encoder = v.get<bool>();
        else if (key == "classes") cfg.classes = v.get<int>();
        else if (key == "finetune_train_per_class") cfg.finetune_train_per_class = v.get<int>();
        else if (key == "finetune_test_per_class") cfg.finetune_test_per_class = v.get<int>();
        else throw std::invalid_argument("config: unknown key '" + key + "'");
    }
    return cfg;
}

}  // namespace pcpmae
