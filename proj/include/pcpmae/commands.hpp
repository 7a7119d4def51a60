#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <thread>

#include "pcpmae/checkpoint.hpp"
#include "pcpmae/manifest.hpp"
#include "pcpmae/pointcloud_io.hpp"

namespace pcpmae::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

inline std::uint64_t dataset_seed(std::uint64_t seed) { return seed ^ 0xDA7A5E7Dull; }

// ---------------------------------------------------------------------------
// Config resolution: preset defaults <- JSON file <- CLI flags <- PCPMAE_SEED
// ---------------------------------------------------------------------------

struct ConfigLayer {
    std::string preset = "desk";
    std::string config_path;

    bool has_seed = false;
    std::uint64_t seed = 0;
    bool has_mask_ratio = false;
    double mask_ratio = 0;
    bool has_eta = false;
    double eta = 0;
    bool has_epochs = false;
    int epochs = 0;
    bool no_stop_gradient = false;
    bool no_share_weights = false;
    std::string target;   // empty = keep
    std::string pc_loss;  // empty = keep
};

inline TrainConfig resolve_config(const ConfigLayer& layer) {
    TrainConfig cfg;
    if (layer.preset == "desk")
        cfg = desk_config();
    else if (layer.preset == "paper")
        cfg = paper_config();
    else
        throw std::invalid_argument("unknown preset '" + layer.preset + "'");

    if (!layer.config_path.empty()) {
        std::ifstream in(layer.config_path);
        if (!in)
            throw std::invalid_argument("cannot read config file '" + layer.config_path + "'");
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw std::invalid_argument("config file '" + layer.config_path + "': " + e.what());
        }
        cfg = config_from_json(j, cfg);
    }

    if (layer.has_seed) cfg.seed = layer.seed;
    if (layer.has_mask_ratio) cfg.mask_ratio = layer.mask_ratio;
    if (layer.has_eta) cfg.eta = layer.eta;
    if (layer.has_epochs) cfg.epochs = layer.epochs;
    if (layer.no_stop_gradient) cfg.stop_gradient_on = false;
    if (layer.no_share_weights) cfg.model.share_pcm_weights = false;
    if (!layer.target.empty()) cfg.model.target_mode = target_mode_from_name(layer.target);
    if (!layer.pc_loss.empty()) cfg.pc_loss = pc_loss_from_name(layer.pc_loss);

    if (const char* env = std::getenv("PCPMAE_SEED")) {
        try {
            cfg.seed = std::stoull(env);
        } catch (const std::exception&) {
            throw std::invalid_argument("PCPMAE_SEED='" + std::string(env) +
                                        "' is not an unsigned integer");
        }
    }
    // short runs shrink the default warmup instead of failing validation
    if (cfg.warmup_epochs >= cfg.epochs) cfg.warmup_epochs = std::max(0, cfg.epochs - 1);
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

struct PretrainOpts {
    ConfigLayer layer;
    std::string out_dir;
    int save_every = 0;  // epochs; 0 = final checkpoint only
    bool leakage = false;
};

inline nlohmann::json epoch_row(const EpochStats& e) {
    nlohmann::json row;
    row["epoch"] = e.epoch;
    row["loss"] = e.loss;
    row["loss_pc"] = e.loss_pc;
    row["loss_recon"] = e.loss_recon;
    row["lr"] = e.lr;
    row["visible_tokens"] = e.visible;
    row["masked_patches"] = e.masked;
    return row;
}

inline int cmd_pretrain(const PretrainOpts& opts) {
    TrainConfig cfg;
    try {
        cfg = resolve_config(opts.layer);
        if (opts.out_dir.empty()) throw std::invalid_argument("--out is required");
    } catch (const std::exception& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    }
    try {
        fs::create_directories(opts.out_dir);
        const std::string name = opts.leakage ? "leakage" : "pretrain";
        RunManifest manifest;
        manifest.command = name;
        manifest.config = config_to_json(cfg);
        manifest.seed = cfg.seed;
        manifest.started_at = iso_timestamp();
        manifest.extra["masked_patches"] = masked_count(cfg.model.num_patches,
                                                        opts.leakage ? 1.0 : cfg.mask_ratio);

        auto dataset = make_synthetic_dataset(cfg.dataset_size, cfg.points_per_cloud(),
                                              cfg.dataset_noise, dataset_seed(cfg.seed));
        auto st = init_train_state<float>(cfg);
        PartialFlusher partial((fs::path(opts.out_dir) / "metrics.csv.partial").string());

        run_training(st, dataset, opts.leakage, [&](const EpochStats& e) {
            manifest.metrics.push_back(epoch_row(e));
            partial.flush(manifest.metrics);
            if (opts.save_every > 0 && e.epoch % opts.save_every == 0 && e.epoch < cfg.epochs) {
                const auto p =
                    fs::path(opts.out_dir) / ("checkpoint_epoch" + std::to_string(e.epoch) + ".ckpt");
                save_checkpoint(st, p.string());
                manifest.outputs.push_back(p.string());
            }
        });

        const auto final_ckpt = fs::path(opts.out_dir) / "final.ckpt";
        save_checkpoint(st, final_ckpt.string());
        manifest.outputs.push_back(final_ckpt.string());

        if (opts.leakage) {
            auto eval = evaluate_leakage(st, dataset);
            manifest.extra["model_chamfer"] = eval.model_chamfer;
            manifest.extra["baseline_chamfer"] = eval.baseline_chamfer;

            // side-by-side ground truth and reconstruction exports
            Rng export_rng(loop_seed(cfg.seed) ^ 0xB135);
            const int shown = std::min<int>(4, static_cast<int>(dataset.size()));
            for (int i = 0; i < shown; ++i) {
                std::vector<const PointCloud*> one{&dataset[i]};
                auto prep = prepare_batch<float>(one, cfg, 1.0, export_rng, /*augment=*/false);
                auto pe_m = pem_forward(Tensor<float>::from_data(
                                            {1, prep.masked, cfg.model.d_model},
                                            prep.sincos_masked),
                                        st.weights.pem);
                auto empty = Tensor<float>::zeros({1, 0, cfg.model.d_model});
                auto pred = reconstruction_head(
                    decoder_forward(empty, empty, pe_m, st.weights), st.weights);

                PointCloud gt, recon;
                std::vector<Color3> gt_colors, recon_colors;
                const auto k = cfg.model.patch_size;
                for (std::int64_t p = 0; p < prep.masked; ++p) {
                    Point3 center{
                        static_cast<double>(prep.masked_centers[p * 3]),
                        static_cast<double>(prep.masked_centers[p * 3 + 1]),
                        static_cast<double>(prep.masked_centers[p * 3 + 2])};
                    for (std::int64_t j = 0; j < k; ++j) {
                        Point3 g, r;
                        for (int c = 0; c < 3; ++c) {
                            g[c] = prep.gt_masked[(p * k + j) * 3 + c] + center[c];
                            r[c] = pred.data()[(p * k + j) * 3 + c] + center[c];
                        }
                        gt.points.push_back(g);
                        gt_colors.push_back({150, 150, 150});
                        recon.points.push_back(r);
                        recon_colors.push_back({220, 80, 60});
                    }
                }
                const auto gt_path =
                    fs::path(opts.out_dir) / ("leakage_gt_" + std::to_string(i) + ".ply");
                const auto rc_path =
                    fs::path(opts.out_dir) / ("leakage_recon_" + std::to_string(i) + ".ply");
                write_ply(gt, gt_path.string(), &gt_colors);
                write_ply(recon, rc_path.string(), &recon_colors);
                manifest.outputs.push_back(gt_path.string());
                manifest.outputs.push_back(rc_path.string());
            }
        }

        const auto csv_path = fs::path(opts.out_dir) / "metrics.csv";
        write_text_atomic(csv_path.string(), metrics_to_csv(manifest.metrics));
        manifest.outputs.push_back(csv_path.string());
        partial.remove();

        manifest.finished_at = iso_timestamp();
        write_manifest(manifest, (fs::path(opts.out_dir) / "manifest.json").string());
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblateOpts {
    std::string grid_path;
    std::string out_dir;
    int jobs = 1;
};

inline std::vector<nlohmann::json> expand_grid(const nlohmann::json& grid) {
    nlohmann::json base = grid.value("base", nlohmann::json::object());
    std::vector<nlohmann::json> cells;
    if (grid.contains("cells") && grid.contains("axes"))
        throw std::invalid_argument("grid: give either 'cells' or 'axes', not both");
    if (grid.contains("cells")) {
        if (!grid["cells"].is_array()) throw std::invalid_argument("grid: 'cells' must be an array");
        for (const auto& c : grid["cells"]) {
            nlohmann::json cell = base;
            for (auto it = c.begin(); it != c.end(); ++it) cell[it.key()] = it.value();
            cells.push_back(cell);
        }
    } else if (grid.contains("axes")) {
        const auto& axes = grid["axes"];
        if (!axes.is_object()) throw std::invalid_argument("grid: 'axes' must be an object");
        cells.push_back(base);
        for (auto it = axes.begin(); it != axes.end(); ++it) {
            if (!it.value().is_array())
                throw std::invalid_argument("grid: axis '" + it.key() + "' must be an array");
            std::vector<nlohmann::json> next;
            for (const auto& cell : cells)
                for (const auto& v : it.value()) {
                    nlohmann::json c = cell;
                    c[it.key()] = v;
                    next.push_back(c);
                }
            cells = std::move(next);
        }
    } else {
        throw std::invalid_argument("grid: expected a 'cells' array or an 'axes' object");
    }
    if (cells.empty()) throw std::invalid_argument("grid: no cells to run");
    return cells;
}

inline int cmd_ablate(const AblateOpts& opts) {
    std::vector<nlohmann::json> cells;
    std::vector<TrainConfig> configs;
    try {
        std::ifstream in(opts.grid_path);
        if (!in) throw std::invalid_argument("cannot read grid file '" + opts.grid_path + "'");
        nlohmann::json grid;
        try {
            grid = nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw std::invalid_argument("grid file '" + opts.grid_path + "': " + e.what());
        }
        cells = expand_grid(grid);
        for (std::size_t i = 0; i < cells.size(); ++i) {
            try {
                configs.push_back(config_from_json(cells[i], desk_config()));
                configs.back().validate();
            } catch (const std::exception& e) {
                throw std::invalid_argument("grid cell " + std::to_string(i) + ": " + e.what());
            }
        }
        if (opts.out_dir.empty()) throw std::invalid_argument("--out is required");
    } catch (const std::exception& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        fs::create_directories(opts.out_dir);
        struct CellResult {
            bool ok = false;
            std::string error;
            double loss = 0, loss_pc = 0, loss_recon = 0;
            std::int64_t masked = 0;
        };
        std::vector<CellResult> results(cells.size());

        auto run_cell = [&](std::size_t i) {
            const auto& cfg = configs[i];
            const auto cell_dir = fs::path(opts.out_dir) / ("cell_" + std::to_string(i));
            fs::create_directories(cell_dir);
            RunManifest manifest;
            manifest.command = "ablate-cell";
            manifest.config = config_to_json(cfg);
            manifest.seed = cfg.seed;
            manifest.started_at = iso_timestamp();
            manifest.extra["cell_index"] = i;
            manifest.extra["cell_params"] = cells[i];
            manifest.extra["masked_patches"] = masked_count(cfg.model.num_patches, cfg.mask_ratio);

            auto dataset = make_synthetic_dataset(cfg.dataset_size, cfg.points_per_cloud(),
                                                  cfg.dataset_noise, dataset_seed(cfg.seed));
            auto st = init_train_state<float>(cfg);
            PartialFlusher partial((cell_dir / "metrics.csv.partial").string());
            run_training(st, dataset, false, [&](const EpochStats& e) {
                manifest.metrics.push_back(epoch_row(e));
                partial.flush(manifest.metrics);
            });
            const auto csv_path = cell_dir / "metrics.csv";
            write_text_atomic(csv_path.string(), metrics_to_csv(manifest.metrics));
            partial.remove();
            manifest.outputs.push_back(csv_path.string());
            manifest.finished_at = iso_timestamp();
            write_manifest(manifest, (cell_dir / "manifest.json").string());

            const auto& last = manifest.metrics.back();
            results[i].loss = last.at("loss").get<double>();
            results[i].loss_pc = last.at("loss_pc").get<double>();
            results[i].loss_recon = last.at("loss_recon").get<double>();
            results[i].masked = masked_count(cfg.model.num_patches, cfg.mask_ratio);
            results[i].ok = true;
        };

        const int jobs = std::max(1, opts.jobs);
        if (jobs == 1) {
            for (std::size_t i = 0; i < cells.size(); ++i) {
                try {
                    run_cell(i);
                } catch (const std::exception& e) {
                    results[i].error = e.what();
                }
            }
        } else {
            std::atomic<std::size_t> next{0};
            std::vector<std::thread> pool;
            for (int t = 0; t < jobs; ++t)
                pool.emplace_back([&] {
                    for (std::size_t i = next.fetch_add(1); i < cells.size();
                         i = next.fetch_add(1)) {
                        try {
                            run_cell(i);
                        } catch (const std::exception& e) {
                            results[i].error = e.what();
                        }
                    }
                });
            for (auto& t : pool) t.join();
        }

        // combined table: one row per cell, axis keys as columns
        std::set<std::string> keys;
        for (const auto& c : cells)
            for (auto it = c.begin(); it != c.end(); ++it) keys.insert(it.key());
        std::string csv = "cell";
        for (const auto& k : keys) csv += "," + k;
        csv += ",masked_patches,loss,loss_pc,loss_recon,status\n";
        for (std::size_t i = 0; i < cells.size(); ++i) {
            csv += std::to_string(i);
            for (const auto& k : keys)
                csv += "," + (cells[i].contains(k) ? cells[i][k].dump() : "");
            char buf[128];
            std::snprintf(buf, sizeof(buf), ",%lld,%.9g,%.9g,%.9g,%s\n",
                          static_cast<long long>(results[i].masked), results[i].loss,
                          results[i].loss_pc, results[i].loss_recon,
                          results[i].ok ? "ok" : "failed");
            csv += buf;
        }
        write_text_atomic((fs::path(opts.out_dir) / "ablation.csv").string(), csv);

        for (std::size_t i = 0; i < cells.size(); ++i)
            if (!results[i].ok) {
                std::cerr << "error: cell " << i << ": " << results[i].error << "\n";
                return kExitRuntime;
            }
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

// ---------------------------------------------------------------------------
// finetune
// ---------------------------------------------------------------------------

struct FinetuneOpts {
    ConfigLayer layer;
    std::string checkpoint;
    bool scratch = false;
    std::string out_dir;
    std::vector<std::uint64_t> seeds{1, 2, 3};
};

inline int cmd_finetune(const FinetuneOpts& opts) {
    TrainConfig cfg;
    try {
        if (opts.scratch == !opts.checkpoint.empty())
            throw std::invalid_argument("give exactly one of --checkpoint or --scratch");
        if (opts.out_dir.empty()) throw std::invalid_argument("--out is required");
        if (opts.seeds.empty()) throw std::invalid_argument("--seeds must list at least one seed");
        cfg = resolve_config(opts.layer);
        if (!opts.checkpoint.empty()) {
            TrainConfig ckpt_cfg = read_checkpoint_config(opts.checkpoint);
            if (!opts.layer.config_path.empty() &&
                ckpt_cfg.model.d_model != cfg.model.d_model)
                throw std::invalid_argument(
                    "checkpoint width D=" + std::to_string(ckpt_cfg.model.d_model) +
                    " is incompatible with configured D=" + std::to_string(cfg.model.d_model));
            // fine-tuning hyperparameters come from the resolved config; the
            // architecture comes from the checkpoint
            ckpt_cfg.finetune_epochs = cfg.finetune_epochs;
            ckpt_cfg.finetune_lr = cfg.finetune_lr;
            ckpt_cfg.finetune_batch = cfg.finetune_batch;
            ckpt_cfg.freeze_encoder = cfg.freeze_encoder;
            ckpt_cfg.classes = cfg.classes;
            ckpt_cfg.finetune_train_per_class = cfg.finetune_train_per_class;
            ckpt_cfg.finetune_test_per_class = cfg.finetune_test_per_class;
            ckpt_cfg.dataset_noise = cfg.dataset_noise;
            cfg = ckpt_cfg;
        }
    } catch (const std::runtime_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        fs::create_directories(opts.out_dir);
        RunManifest manifest;
        manifest.command = "finetune";
        manifest.config = config_to_json(cfg);
        manifest.seed = opts.seeds.front();
        manifest.started_at = iso_timestamp();
        manifest.extra["mode"] = opts.scratch ? "scratch" : "pretrained";
        if (!opts.scratch) manifest.extra["checkpoint"] = opts.checkpoint;

        // the labeled benchmark is shared across seeds for paired comparisons
        const auto bench_seed = dataset_seed(cfg.seed) ^ 0xBE9C;
        auto train = make_synthetic_dataset(cfg.classes * cfg.finetune_train_per_class,
                                            cfg.points_per_cloud(), cfg.dataset_noise, bench_seed,
                                            cfg.classes);
        auto test = make_synthetic_dataset(cfg.classes * cfg.finetune_test_per_class,
                                           cfg.points_per_cloud(), cfg.dataset_noise,
                                           bench_seed + 1, cfg.classes);

        std::vector<double> accs;
        for (auto seed : opts.seeds) {
            ModelWeights<float> weights =
                opts.scratch ? build_model<float>(cfg.model, seed)
                             : load_checkpoint<float>(opts.checkpoint).weights;
            auto result = finetune_classifier(weights, train, test, cfg, seed);
            accs.push_back(result.accuracy);
            nlohmann::json row;
            row["epoch"] = static_cast<int>(accs.size());
            row["seed"] = seed;
            row["accuracy"] = result.accuracy;
            row["initial_accuracy"] = result.initial_accuracy;
            row["loss"] = 0.0;
            row["loss_pc"] = 0.0;
            row["loss_recon"] = 0.0;
            row["lr"] = cfg.finetune_lr;
            manifest.metrics.push_back(row);
        }
        double mean = 0;
        for (double a : accs) mean += a;
        mean /= static_cast<double>(accs.size());
        double var = 0;
        for (double a : accs) var += (a - mean) * (a - mean);
        const double stddev = std::sqrt(var / static_cast<double>(accs.size()));
        manifest.extra["accuracies"] = accs;
        manifest.extra["mean_accuracy"] = mean;
        manifest.extra["std_accuracy"] = stddev;
        manifest.finished_at = iso_timestamp();
        write_manifest(manifest, (fs::path(opts.out_dir) / "manifest.json").string());
        std::cout << "accuracy " << mean << " +/- " << stddev << " over " << accs.size()
                  << " seeds\n";
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

// ---------------------------------------------------------------------------
// reconstruct
// ---------------------------------------------------------------------------

struct ReconstructOpts {
    std::string checkpoint;
    std::string input_xyz;
    double mask_ratio = 0.6;
    std::string out_dir;
    std::uint64_t seed = 0;
};

inline int cmd_reconstruct(const ReconstructOpts& opts) {
    if (opts.mask_ratio < 0.0 || opts.mask_ratio > 1.0 || opts.out_dir.empty() ||
        opts.checkpoint.empty() || opts.input_xyz.empty()) {
        std::cerr << "usage error: reconstruct needs --checkpoint, --input, --out and a mask "
                     "ratio in [0,1]\n";
        return kExitUsage;
    }
    try {
        auto st = load_checkpoint<float>(opts.checkpoint);
        const auto& cfg = st.cfg;
        const auto& mc = cfg.model;
        PointCloud input = read_xyz(opts.input_xyz);
        if (static_cast<std::int64_t>(input.size()) < mc.num_points)
            throw std::runtime_error("input has " + std::to_string(input.size()) +
                                     " points, need at least " + std::to_string(mc.num_points));
        fs::create_directories(opts.out_dir);

        Rng rng(opts.seed);
        auto sample_idx = fps(input, static_cast<std::size_t>(mc.num_points), rng);
        PointCloud sampled;
        sampled.points.reserve(sample_idx.size());
        for (auto i : sample_idx) sampled.points.push_back(input.points[i]);

        auto centers = fps(sampled, static_cast<std::size_t>(mc.num_patches), rng);
        auto ps = knn_group(sampled, centers, static_cast<std::size_t>(mc.patch_size));
        auto split = mask_split(mc.num_patches, opts.mask_ratio, rng);

        // points partition to their nearest center (lowest index on ties)
        std::vector<std::size_t> owner(sampled.size());
        for (std::size_t i = 0; i < sampled.size(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            std::size_t arg = 0;
            for (std::size_t c = 0; c < ps.centers.size(); ++c) {
                const double d = squared_dist(sampled.points[i], ps.centers[c]);
                if (d < best) {
                    best = d;
                    arg = c;
                }
            }
            owner[i] = arg;
        }
        std::vector<bool> is_masked(ps.centers.size(), false);
        for (auto m : split.masked_indices) is_masked[m] = true;

        const std::int64_t d = mc.d_model, v = split.visible_indices.size(),
                           m = split.masked_indices.size(), k = mc.patch_size;
        Tensor<float> pred;
        if (m > 0) {
            std::vector<float> patch_data;
            std::vector<float> sincos_v, sincos_m;
            auto emit = [&](std::size_t pi) {
                for (const auto& p : ps.patches[pi])
                    for (int c = 0; c < 3; ++c) patch_data.push_back(static_cast<float>(p[c]));
            };
            for (auto pi : split.visible_indices) {
                emit(pi);
                auto row = sincos_pe_row<float>(ps.centers[pi], d);
                sincos_v.insert(sincos_v.end(), row.begin(), row.end());
            }
            for (auto pi : split.masked_indices) {
                emit(pi);
                auto row = sincos_pe_row<float>(ps.centers[pi], d);
                sincos_m.insert(sincos_m.end(), row.begin(), row.end());
            }
            auto patches = Tensor<float>::from_data({1, v + m, k, 3}, std::move(patch_data));
            auto tokens = mini_pointnet_forward(patches, st.weights.pointnet);
            auto e_v = slice(tokens, 1, 0, v);
            auto e_m = slice(tokens, 1, v, m);
            auto pe_v = v > 0 ? pem_forward(Tensor<float>::from_data({1, v, d}, sincos_v),
                                            st.weights.pem)
                              : Tensor<float>::zeros({1, 0, d});
            auto joint = joint_forward(e_v, pe_v, e_m, st.weights);
            Tensor<float> dec_pe = joint.predicted;
            if (mc.target_mode == TargetMode::coords) dec_pe = sincos_pe_op(dec_pe, d);
            if (mc.target_mode != TargetMode::pem) dec_pe = pem_forward(dec_pe, st.weights.pem);
            auto h_m = decoder_forward(joint.visible, pe_v, stop_gradient(dec_pe), st.weights);
            pred = reconstruction_head(h_m, st.weights);
        }

        const Color3 kGray{150, 150, 150}, kBlue{70, 130, 220}, kRed{220, 80, 60};
        PointCloud in_cloud = sampled, vis_cloud, rec_cloud;
        std::vector<Color3> in_colors(sampled.size(), kGray), vis_colors, rec_colors;
        for (std::size_t i = 0; i < sampled.size(); ++i) {
            if (!is_masked[owner[i]]) {
                vis_cloud.points.push_back(sampled.points[i]);
                vis_colors.push_back(kBlue);
                rec_cloud.points.push_back(sampled.points[i]);
                rec_colors.push_back(kBlue);
            }
        }
        for (std::int64_t mi = 0; mi < m; ++mi) {
            const auto pi = split.masked_indices[mi];
            for (std::int64_t j = 0; j < k; ++j) {
                Point3 p;
                for (int c = 0; c < 3; ++c)
                    p[c] = static_cast<double>(pred.data()[(mi * k + j) * 3 + c]) +
                           ps.centers[pi][c];
                rec_cloud.points.push_back(p);
                rec_colors.push_back(kRed);
            }
        }

        RunManifest manifest;
        manifest.command = "reconstruct";
        manifest.config = config_to_json(cfg);
        manifest.seed = opts.seed;
        manifest.started_at = iso_timestamp();
        manifest.extra["mask_ratio"] = opts.mask_ratio;
        manifest.extra["masked_patches"] = m;
        manifest.extra["input_points"] = in_cloud.size();
        manifest.extra["visible_points"] = vis_cloud.size();
        manifest.extra["reconstructed_points"] = rec_cloud.size();
        for (auto [cloud, colors, name] :
             {std::tuple{&in_cloud, &in_colors, "input.ply"},
              std::tuple{&vis_cloud, &vis_colors, "visible.ply"},
              std::tuple{&rec_cloud, &rec_colors, "reconstructed.ply"}}) {
            const auto path = fs::path(opts.out_dir) / name;
            write_ply(*cloud, path.string(), colors);
            manifest.outputs.push_back(path.string());
        }
        manifest.finished_at = iso_timestamp();
        write_manifest(manifest, (fs::path(opts.out_dir) / "manifest.json").string());
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

// ---------------------------------------------------------------------------
// info
// ---------------------------------------------------------------------------

struct InfoOpts {
    ConfigLayer layer;
};

inline int cmd_info(const InfoOpts& opts) {
    TrainConfig cfg;
    try {
        cfg = resolve_config(opts.layer);
    } catch (const std::exception& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    }
    auto breakdown = count_params_breakdown(cfg.model);
    auto non_shared = cfg.model;
    non_shared.share_pcm_weights = false;
    auto shared = cfg.model;
    shared.share_pcm_weights = true;
    const auto shared_total = count_params(shared);
    const auto non_shared_total = count_params(non_shared);

    std::cout << "config " << config_to_json(cfg).dump() << "\n";
    std::cout << "embed_params " << breakdown.embed << "\n";
    std::cout << "encoder_params " << breakdown.encoder << "\n";
    std::cout << "pcm_extra_params " << breakdown.pcm_extra << "\n";
    std::cout << "projector_params " << breakdown.projector << "\n";
    std::cout << "decoder_params " << breakdown.decoder << "\n";
    std::cout << "mask_token_params " << breakdown.mask_token << "\n";
    std::cout << "head_params " << breakdown.head << "\n";
    std::cout << "total_params " << breakdown.total() << "\n";
    std::cout << "total_params_shared " << shared_total << "\n";
    std::cout << "total_params_nonshared " << non_shared_total << "\n";
    std::cout << "shared_saving " << (non_shared_total - shared_total) << "\n";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f", static_cast<double>(breakdown.total()) / 1e6);
    std::cout << "total_params_millions " << buf << "\n";
    return kExitOk;
}

}  // namespace pcpmae::cli
