#pragma once

#include <CLI11.hpp>

#include "pcpmae/commands.hpp"

namespace pcpmae::cli {

// Builds the option set shared by config-driven subcommands.
inline void add_config_layer(CLI::App* sub, ConfigLayer& layer) {
    sub->add_option("--config", layer.config_path, "JSON config file (flat keys)");
    sub->add_option("--preset", layer.preset, "base preset: desk or paper")
        ->check(CLI::IsMember({"desk", "paper"}));
    auto* seed = sub->add_option("--seed", layer.seed, "run seed");
    seed->each([&layer](const std::string&) { layer.has_seed = true; });
}

inline int run_cli(int argc, const char* const* argv) {
    CLI::App app{"PCP-MAE point-cloud masked autoencoder with center prediction"};
    app.require_subcommand(1);

    PretrainOpts pre;
    auto* sub_pre = app.add_subcommand("pretrain", "run masked pre-training");
    add_config_layer(sub_pre, pre.layer);
    sub_pre->add_option("--out", pre.out_dir, "output directory")->required();
    auto* opt_mr = sub_pre->add_option("--mask-ratio", pre.layer.mask_ratio, "masking ratio m");
    opt_mr->each([&pre](const std::string&) { pre.layer.has_mask_ratio = true; });
    auto* opt_eta = sub_pre->add_option("--eta", pre.layer.eta, "center-loss scale");
    opt_eta->each([&pre](const std::string&) { pre.layer.has_eta = true; });
    auto* opt_ep = sub_pre->add_option("--epochs", pre.layer.epochs, "training epochs");
    opt_ep->each([&pre](const std::string&) { pre.layer.has_epochs = true; });
    sub_pre->add_flag("--no-stop-gradient", pre.layer.no_stop_gradient,
                      "let reconstruction gradients reach the predicted embeddings");
    sub_pre->add_flag("--no-share-weights", pre.layer.no_share_weights,
                      "give the PCM its own Transformer blocks");
    sub_pre->add_option("--target", pre.layer.target, "center-prediction target")
        ->check(CLI::IsMember({"pem", "sincos", "coords"}));
    sub_pre->add_option("--pc-loss", pre.layer.pc_loss, "center-prediction loss")
        ->check(CLI::IsMember({"l2", "l1", "smooth_l1", "cosine"}));
    sub_pre->add_option("--save-every", pre.save_every, "checkpoint period in epochs");

    PretrainOpts leak;
    leak.leakage = true;
    auto* sub_leak = app.add_subcommand("leakage",
                                        "decoder-only training at 100% masking with true centers");
    add_config_layer(sub_leak, leak.layer);
    sub_leak->add_option("--out", leak.out_dir, "output directory")->required();
    auto* opt_lep = sub_leak->add_option("--epochs", leak.layer.epochs, "training epochs");
    opt_lep->each([&leak](const std::string&) { leak.layer.has_epochs = true; });

    AblateOpts abl;
    auto* sub_abl = app.add_subcommand("ablate", "run an ablation grid");
    sub_abl->add_option("--grid", abl.grid_path, "JSON grid file")->required();
    sub_abl->add_option("--out", abl.out_dir, "output directory")->required();
    sub_abl->add_option("--jobs", abl.jobs, "worker threads over cells");

    FinetuneOpts fin;
    std::string seeds_csv;
    auto* sub_fin = app.add_subcommand("finetune", "fine-tune a classifier head");
    add_config_layer(sub_fin, fin.layer);
    sub_fin->add_option("--checkpoint", fin.checkpoint, "pre-trained checkpoint");
    sub_fin->add_flag("--scratch", fin.scratch, "train from random initialization");
    sub_fin->add_option("--out", fin.out_dir, "output directory")->required();
    sub_fin->add_option("--seeds", seeds_csv, "comma-separated seeds (default 1,2,3)");

    ReconstructOpts rec;
    auto* sub_rec = app.add_subcommand("reconstruct", "export masked reconstructions as PLY");
    sub_rec->add_option("--checkpoint", rec.checkpoint, "model checkpoint")->required();
    sub_rec->add_option("--input", rec.input_xyz, "input XYZ cloud")->required();
    sub_rec->add_option("--mask-ratio", rec.mask_ratio, "masking ratio m");
    sub_rec->add_option("--out", rec.out_dir, "output directory")->required();
    sub_rec->add_option("--seed", rec.seed, "sampling seed");

    InfoOpts info;
    auto* sub_info = app.add_subcommand("info", "print parameter counts and the resolved config");
    add_config_layer(sub_info, info.layer);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, exit 0
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    if (!seeds_csv.empty()) {
        fin.seeds.clear();
        std::stringstream ss(seeds_csv);
        std::string item;
        while (std::getline(ss, item, ',')) {
            try {
                fin.seeds.push_back(std::stoull(item));
            } catch (const std::exception&) {
                std::cerr << "usage error: bad seed '" << item << "' in --seeds\n";
                return kExitUsage;
            }
        }
    }

    if (sub_pre->parsed()) return cmd_pretrain(pre);
    if (sub_leak->parsed()) return cmd_pretrain(leak);
    if (sub_abl->parsed()) return cmd_ablate(abl);
    if (sub_fin->parsed()) return cmd_finetune(fin);
    if (sub_rec->parsed()) return cmd_reconstruct(rec);
    if (sub_info->parsed()) return cmd_info(info);
    return kExitUsage;
}

}  // namespace pcpmae::cli
