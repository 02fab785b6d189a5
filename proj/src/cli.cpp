#include "goi/cli.hpp"

#include "goi/binary_io.hpp"
#include "goi/errors.hpp"
#include "goi/eval_harness.hpp"
#include "goi/field_trainer.hpp"
#include "goi/json_io.hpp"
#include "goi/parallel.hpp"
#include "goi/query_engine.hpp"
#include "goi/rasterizer.hpp"
#include "goi/synth_oracle.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>

namespace goi {

namespace {

const Vec3f kOverlayColor{1.f, 0.1f, 0.1f};

Vec3f parse_triple(const std::string& text, const char* flag) {
    Vec3f out{};
    std::stringstream ss(text);
    std::string part;
    std::size_t i = 0;
    while (std::getline(ss, part, ',')) {
        if (i >= 3) {
            throw ValidationError(std::string(flag) + ": expected three comma-separated numbers");
        }
        try {
            std::size_t used = 0;
            out[i] = std::stof(part, &used);
            if (used != part.size()) {
                throw std::invalid_argument(part);
            }
        } catch (const std::exception&) {
            throw ValidationError(std::string(flag) + ": '" + part + "' is not a number");
        }
        ++i;
    }
    if (i != 3) {
        throw ValidationError(std::string(flag) + ": expected three comma-separated numbers");
    }
    return out;
}

struct Common {
    std::uint64_t seed = 0;
    std::size_t threads = 0;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--seed", seed, "Random seed")->capture_default_str();
        cmd->add_option("--threads", threads, "Worker threads (0: GOI_THREADS or 1)")->capture_default_str();
    }
    void apply() const {
        if (threads > 0) {
            set_thread_count(threads);
        }
    }
    void echo(nlohmann::json& j) const {
        j["seed"] = seed;
        j["threads"] = thread_count();
    }
};

void print_config(std::ostream& out, const std::string& command, nlohmann::json j) {
    j["command"] = command;
    out << "config: " << j.dump() << "\n";
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Gaussian semantic field toolkit: train a codebook-compressed semantic field on a frozen "
                 "Gaussian scene and answer open-vocabulary queries."};
    app.name("goi");
    app.require_subcommand(1);
    std::function<void()> action;

    // import-ply
    {
        auto* cmd = app.add_subcommand("import-ply", "Convert a 3DGS PLY file into a GOIS scene");
        auto in = std::make_shared<std::string>();
        auto dst = std::make_shared<std::string>();
        auto dim = std::make_shared<std::size_t>(10);
        cmd->add_option("--in", *in, "Input PLY")->required();
        cmd->add_option("--out", *dst, "Output GOIS")->required();
        cmd->add_option("--feature-dim", *dim, "Low-dimensional feature size")->capture_default_str();
        cmd->callback([&, cmd, in, dst, dim] {
            action = [&, in, dst, dim] {
                print_config(out, "import-ply", {{"in", *in}, {"out", *dst}, {"feature_dim", *dim}});
                const Scene scene = import_ply(*in, *dim);
                save_scene(scene, *dst);
                out << "imported " << scene.size() << " Gaussians\n";
            };
        });
    }

    // init-codebook
    {
        auto* cmd = app.add_subcommand("init-codebook", "Spherical k-means codebook from GT feature maps");
        auto manifest = std::make_shared<std::string>();
        auto dst = std::make_shared<std::string>();
        auto entries = std::make_shared<std::size_t>(kDefaultEntries);
        auto iters = std::make_shared<std::size_t>(20);
        auto common = std::make_shared<Common>();
        cmd->add_option("--manifest", *manifest, "Dataset manifest JSON")->required();
        cmd->add_option("--entries", *entries, "Number of codebook entries")->capture_default_str();
        cmd->add_option("--iters", *iters, "Lloyd iterations")->capture_default_str();
        cmd->add_option("--out", *dst, "Output GOIC")->required();
        common->add_to(cmd);
        cmd->callback([&, manifest, dst, entries, iters, common] {
            action = [&, manifest, dst, entries, iters, common] {
                common->apply();
                nlohmann::json j{{"manifest", *manifest}, {"entries", *entries}, {"iters", *iters}, {"out", *dst}};
                common->echo(j);
                print_config(out, "init-codebook", j);
                const Dataset data = load_dataset(*manifest);
                save_codebook(init_codebook(data, *entries, *iters, common->seed), *dst);
            };
        });
    }

    // train
    {
        auto* cmd = app.add_subcommand("train", "Train per-Gaussian features, codebook and decoder");
        auto scene = std::make_shared<std::string>();
        auto manifest = std::make_shared<std::string>();
        auto codebook = std::make_shared<std::string>();
        auto config = std::make_shared<std::string>();
        auto dst = std::make_shared<std::string>();
        auto common = std::make_shared<Common>();
        auto iterations = std::make_shared<std::optional<std::size_t>>();
        auto lr_feature = std::make_shared<std::optional<double>>();
        auto lr_codebook = std::make_shared<std::optional<double>>();
        auto lr_decoder = std::make_shared<std::optional<double>>();
        auto pixels = std::make_shared<std::optional<std::size_t>>();
        cmd->add_option("--scene", *scene, "Input GOIS scene")->required();
        cmd->add_option("--manifest", *manifest, "Dataset manifest JSON")->required();
        cmd->add_option("--codebook", *codebook, "Initial GOIC codebook")->required();
        cmd->add_option("--config", *config, "TrainConfig JSON; flags below override it");
        cmd->add_option("--out", *dst, "Output model directory")->required();
        cmd->add_option("--iterations", *iterations, "Override iterations");
        cmd->add_option("--lr-feature", *lr_feature, "Override feature learning rate");
        cmd->add_option("--lr-codebook", *lr_codebook, "Override codebook learning rate");
        cmd->add_option("--lr-decoder", *lr_decoder, "Override decoder learning rate");
        cmd->add_option("--pixels-per-iter", *pixels, "Override sampled pixels per iteration");
        auto* seed_opt = cmd->add_option("--seed", common->seed, "Random seed (overrides the config file)");
        cmd->add_option("--threads", common->threads, "Worker threads (0: GOI_THREADS or 1)");
        cmd->callback([&, scene, manifest, codebook, config, dst, common, iterations, lr_feature, lr_codebook,
                       lr_decoder, pixels, seed_opt] {
            const bool seed_given = seed_opt->count() > 0;
            action = [&, scene, manifest, codebook, config, dst, common, iterations, lr_feature, lr_codebook,
                      lr_decoder, pixels, seed_given] {
                common->apply();
                TrainConfig cfg;
                if (!config->empty()) {
                    cfg = config_from_json(read_json_file(*config));
                }
                if (seed_given) {
                    cfg.seed = common->seed;
                }
                if (*iterations) {
                    cfg.iterations = **iterations;
                }
                if (*lr_feature) {
                    cfg.lr_feature = **lr_feature;
                }
                if (*lr_codebook) {
                    cfg.lr_codebook = **lr_codebook;
                }
                if (*lr_decoder) {
                    cfg.lr_decoder = **lr_decoder;
                }
                if (*pixels) {
                    cfg.pixels_per_iter = **pixels;
                }
                nlohmann::json j{{"scene", *scene}, {"manifest", *manifest}, {"codebook", *codebook},
                                 {"out", *dst},     {"train", config_to_json(cfg)}};
                j["threads"] = thread_count();
                print_config(out, "train", j);
                const TrainedModel model =
                    train_semantic_field(load_scene(*scene), load_dataset(*manifest), load_codebook(*codebook), cfg);
                save_model(model, *dst);
                if (!model.loss_trace.empty()) {
                    const auto& last = model.loss_trace.back();
                    out << "final loss " << last[1] << " (ent " << last[2] << ", max " << last[3] << ", joint "
                        << last[4] << ", e2e " << last[5] << ")\n";
                }
            };
        });
    }

    // render
    {
        auto* cmd = app.add_subcommand("render", "Render RGB, low-dimensional features and alpha");
        auto model_dir = std::make_shared<std::string>();
        auto camera = std::make_shared<std::string>();
        auto out_rgb = std::make_shared<std::string>();
        auto out_feat = std::make_shared<std::string>();
        auto out_alpha = std::make_shared<std::string>();
        auto common = std::make_shared<Common>();
        cmd->add_option("--model", *model_dir, "Model directory")->required();
        cmd->add_option("--camera", *camera, "Camera JSON")->required();
        cmd->add_option("--out-rgb", *out_rgb, "Output PPM");
        cmd->add_option("--out-feat", *out_feat, "Output GOIF of rendered low-dimensional features");
        cmd->add_option("--out-alpha", *out_alpha, "Output PGM of accumulated alpha");
        common->add_to(cmd);
        cmd->callback([&, model_dir, camera, out_rgb, out_feat, out_alpha, common] {
            if (out_rgb->empty() && out_feat->empty() && out_alpha->empty()) {
                throw CLI::ValidationError("render", "at least one of --out-rgb, --out-feat, --out-alpha is required");
            }
            action = [&, model_dir, camera, out_rgb, out_feat, out_alpha, common] {
                common->apply();
                nlohmann::json j{{"model", *model_dir},
                                 {"camera", *camera},
                                 {"out_rgb", *out_rgb},
                                 {"out_feat", *out_feat},
                                 {"out_alpha", *out_alpha}};
                common->echo(j);
                print_config(out, "render", j);
                const TrainedModel model = load_model(*model_dir);
                const RenderOutput r = render(model.scene, load_camera(*camera));
                if (!out_rgb->empty()) {
                    save_ppm(r.rgb, *out_rgb);
                }
                if (!out_feat->empty()) {
                    save_feature_map(r.ld_features, *out_feat);
                }
                if (!out_alpha->empty()) {
                    write_file_bytes(*out_alpha, encode_pgm_gray(r.alpha));
                }
            };
        });
    }

    // query
    {
        auto* cmd = app.add_subcommand("query", "Open-vocabulary query: 2D mask and 3D Gaussians of interest");
        auto model_dir = std::make_shared<std::string>();
        auto camera = std::make_shared<std::string>();
        auto text = std::make_shared<std::string>();
        auto embeddings = std::make_shared<std::string>();
        auto pseudo = std::make_shared<std::string>();
        auto no_osh = std::make_shared<bool>(false);
        auto threshold = std::make_shared<double>(OSHConfig{}.init_threshold);
        auto plane_in = std::make_shared<std::string>();
        auto out_mask = std::make_shared<std::string>();
        auto out_overlay = std::make_shared<std::string>();
        auto out_goi = std::make_shared<std::string>();
        auto out_plane = std::make_shared<std::string>();
        auto common = std::make_shared<Common>();
        cmd->add_option("--model", *model_dir, "Model directory")->required();
        cmd->add_option("--camera", *camera, "Camera JSON")->required();
        cmd->add_option("--text", *text, "Query text (key into the embedding table)")->required();
        cmd->add_option("--embeddings", *embeddings, "Embedding table JSON")->required();
        cmd->add_option("--pseudo-mask", *pseudo, "Pseudo-mask PGM for hyperplane refinement");
        cmd->add_flag("--no-osh", *no_osh, "Use the fixed threshold without refinement");
        cmd->add_option("--threshold", *threshold, "Cosine threshold of the initial hyperplane")->capture_default_str();
        cmd->add_option("--hyperplane", *plane_in, "Reuse a saved hyperplane JSON (skips refinement)");
        cmd->add_option("--out-mask", *out_mask, "Output mask PGM")->required();
        cmd->add_option("--out-overlay", *out_overlay, "Output overlay PPM");
        cmd->add_option("--out-goi", *out_goi, "Output JSON of selected Gaussian indices");
        cmd->add_option("--out-hyperplane", *out_plane, "Output hyperplane JSON");
        common->add_to(cmd);
        cmd->callback([&, model_dir, camera, text, embeddings, pseudo, no_osh, threshold, plane_in, out_mask,
                       out_overlay, out_goi, out_plane, common] {
            if (!*no_osh && plane_in->empty() && pseudo->empty()) {
                throw CLI::ValidationError("query", "--pseudo-mask is required unless --no-osh or --hyperplane is given");
            }
            action = [&, model_dir, camera, text, embeddings, pseudo, no_osh, threshold, plane_in, out_mask,
                      out_overlay, out_goi, out_plane, common] {
                common->apply();
                nlohmann::json j{{"model", *model_dir},       {"camera", *camera},       {"text", *text},
                                 {"embeddings", *embeddings}, {"pseudo_mask", *pseudo}, {"osh", !*no_osh},
                                 {"threshold", *threshold},   {"hyperplane", *plane_in}, {"out_mask", *out_mask},
                                 {"out_overlay", *out_overlay}, {"out_goi", *out_goi}, {"out_hyperplane", *out_plane}};
                common->echo(j);
                print_config(out, "query", j);
                const TrainedModel model = load_model(*model_dir);
                const Camera cam = load_camera(*camera);
                const EmbeddingTable table = load_embeddings(*embeddings);
                QueryOptions opts;
                opts.use_osh = !*no_osh;
                opts.osh.init_threshold = *threshold;
                if (!plane_in->empty()) {
                    opts.plane = load_hyperplane(*plane_in);
                }
                std::optional<Mask> mask;
                if (!pseudo->empty()) {
                    mask = load_mask(*pseudo);
                }
                const QueryResult r =
                    open_vocab_query(model, cam, table.lookup(*text), mask ? &*mask : nullptr, opts);
                save_mask(r.mask, *out_mask);
                if (!out_overlay->empty()) {
                    save_ppm(overlay(render(model.scene, cam).rgb, r.mask, kOverlayColor), *out_overlay);
                }
                if (!out_goi->empty()) {
                    save_goi(r.goi_indices, *out_goi);
                }
                if (!out_plane->empty()) {
                    save_hyperplane(r.hyperplane, *out_plane);
                }
                out << "positive pixels " << r.stats.positive_pixels << ", selected Gaussians "
                    << r.stats.selected_gaussians << "\n";
            };
        });
    }

    // manipulate
    {
        auto* cmd = app.add_subcommand("manipulate", "Delete, extract, translate or highlight selected Gaussians");
        auto scene = std::make_shared<std::string>();
        auto goi = std::make_shared<std::string>();
        auto kind = std::make_shared<std::string>();
        auto delta = std::make_shared<std::string>("0,0,0");
        auto color = std::make_shared<std::string>("1,0,0");
        auto dst = std::make_shared<std::string>();
        cmd->add_option("--scene", *scene, "Input GOIS scene")->required();
        cmd->add_option("--goi", *goi, "JSON of selected Gaussian indices")->required();
        cmd->add_option("--action", *kind, "delete | extract | translate | highlight")
            ->required()
            ->check(CLI::IsMember({"delete", "extract", "translate", "highlight"}));
        cmd->add_option("--delta", *delta, "Translation x,y,z")->capture_default_str();
        cmd->add_option("--color", *color, "Highlight color r,g,b in [0,1]")->capture_default_str();
        cmd->add_option("--out", *dst, "Output GOIS")->required();
        cmd->callback([&, scene, goi, kind, delta, color, dst] {
            action = [&, scene, goi, kind, delta, color, dst] {
                print_config(out, "manipulate",
                             {{"scene", *scene},
                              {"goi", *goi},
                              {"action", *kind},
                              {"delta", *delta},
                              {"color", *color},
                              {"out", *dst}});
                Manipulation m;
                m.kind = parse_manipulation_kind(*kind);
                m.delta = parse_triple(*delta, "--delta");
                m.color = parse_triple(*color, "--color");
                const Scene result = manipulate(load_scene(*scene), load_goi(*goi), m);
                save_scene(result, *dst);
                out << "scene now has " << result.size() << " Gaussians\n";
            };
        });
    }

    // eval
    {
        auto* cmd = app.add_subcommand("eval", "Evaluate mIoU, mPA and mP over a test-set manifest");
        auto model_dir = std::make_shared<std::string>();
        auto testset = std::make_shared<std::string>();
        auto no_osh = std::make_shared<bool>(false);
        auto threshold = std::make_shared<double>(OSHConfig{}.init_threshold);
        auto dst = std::make_shared<std::string>();
        auto common = std::make_shared<Common>();
        cmd->add_option("--model", *model_dir, "Model directory")->required();
        cmd->add_option("--testset", *testset, "Test-set manifest JSON")->required();
        cmd->add_flag("--no-osh", *no_osh, "Use the fixed threshold without refinement");
        cmd->add_option("--threshold", *threshold, "Cosine threshold of the initial hyperplane")->capture_default_str();
        cmd->add_option("--out", *dst, "Output report JSON")->required();
        common->add_to(cmd);
        cmd->callback([&, model_dir, testset, no_osh, threshold, dst, common] {
            action = [&, model_dir, testset, no_osh, threshold, dst, common] {
                common->apply();
                nlohmann::json j{{"model", *model_dir},
                                 {"testset", *testset},
                                 {"osh", !*no_osh},
                                 {"threshold", *threshold},
                                 {"out", *dst}};
                common->echo(j);
                print_config(out, "eval", j);
                QueryOptions opts;
                opts.use_osh = !*no_osh;
                opts.osh.init_threshold = *threshold;
                const Metrics m = evaluate(load_model(*model_dir), load_testset(*testset), opts);
                const nlohmann::json report = metrics_to_json(m);
                write_json_file(*dst, report);
                out << "mIoU " << report["mIoU"] << ", mPA " << report["mPA"] << ", mP " << report["mP"] << "\n";
            };
        });
    }

    // synth
    {
        auto* cmd = app.add_subcommand("synth", "Write a synthetic labeled experiment directory");
        auto preset = std::make_shared<std::string>();
        auto dst = std::make_shared<std::string>();
        auto common = std::make_shared<Common>();
        cmd->add_option("--preset", *preset, "Preset name")->required()->check(CLI::IsMember(experiment_preset_names()));
        cmd->add_option("--out", *dst, "Output directory")->required();
        common->add_to(cmd);
        cmd->callback([&, preset, dst, common] {
            action = [&, preset, dst, common] {
                common->apply();
                nlohmann::json j{{"preset", *preset}, {"out", *dst}};
                common->echo(j);
                print_config(out, "synth", j);
                const LabeledScene ls = write_experiment(experiment_preset(*preset), common->seed, *dst);
                out << "wrote " << ls.scene.size() << " Gaussians in " << ls.label_count() << " clusters\n";
            };
        });
    }

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        action();
    } catch (const NumericError& e) {
        err << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitOk;
}

} // namespace goi
