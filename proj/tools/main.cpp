// hinet: image harmonization with a hypernetwork-predicted implicit decoder.
//
// Machine-readable JSON goes to stdout (metrics, bench); human logs go to
// stderr. Exit codes: 0 success, 2 usage error, 1 runtime error.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "hinet/bench.hpp"
#include "hinet/common.hpp"
#include "hinet/metrics.hpp"
#include "hinet/png_io.hpp"
#include "hinet/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hinet;

namespace {

struct Args {
    // harmonize
    std::string image, mask, weights, out, mode = "full", target;
    std::size_t max_batch = 1 << 20;
    bool no_blend = false;
    // video
    std::string frames_dir, masks_dir, out_dir, targets_dir;
    int keyframe_interval = 5;
    // train
    std::string config, data_dir;
    // gradcheck
    std::uint64_t seed = 1;
    // bench
    std::string tiles = "1,4,16", csv;
    // lut
    std::string cube;
    // metrics
    std::string a_path, b_path, mask_path;
};

HarmonizeMode parse_mode(const std::string& mode) {
    if (mode == "full") return HarmonizeMode::kFull;
    if (mode == "tiled") return HarmonizeMode::kTiled;
    if (mode == "region") return HarmonizeMode::kRegion;
    if (mode == "lut-only") return HarmonizeMode::kLutOnly;
    throw CLI::ValidationError("--mode", "expected full|tiled|region|lut-only");
}

std::pair<int, int> parse_target(const std::string& target) {
    const auto x = target.find('x');
    if (x == std::string::npos) throw CLI::ValidationError("--target", "expected WxH");
    const int w = std::stoi(target.substr(0, x));
    const int h = std::stoi(target.substr(x + 1));
    return {h, w};
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto comma = text.find(',', pos);
        out.push_back(std::stoi(text.substr(pos, comma - pos)));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

Mask mask_for(const Args& args, const Image& img) {
    if (!args.mask.empty()) return load_mask_png(args.mask);
    Mask m(img.height, img.width);
    for (auto& v : m.data) v = 1.f;
    return m;
}

int cmd_harmonize(const Args& args) {
    const Model model = load_model(args.weights);
    const auto loaded = load_png(args.image);
    Mask mask = args.mask.empty() && loaded.alpha ? *loaded.alpha : mask_for(args, loaded.image);
    require(mask.height == loaded.image.height && mask.width == loaded.image.width,
            "mask dimensions do not match the image");

    HarmonizeOptions opts;
    opts.mode = parse_mode(args.mode);
    opts.max_batch = args.max_batch;
    opts.blend_with_mask = !args.no_blend;
    if (!args.target.empty()) {
        const auto [h, w] = parse_target(args.target);
        opts.target_h = h;
        opts.target_w = w;
    }
    const auto t0 = std::chrono::steady_clock::now();
    const Image out = harmonize(loaded.image, mask, model, opts);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    save_png(out, args.out);
    std::cerr << "harmonized " << args.image << " -> " << args.out << " (" << out.width << "x"
              << out.height << ", " << ms << " ms)\n";
    return 0;
}

std::vector<std::string> sorted_pngs(const std::string& dir) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".png")
            files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    require(!files.empty(), "no PNG frames found in " + dir);
    return files;
}

int cmd_video(const Args& args) {
    const Model model = load_model(args.weights);
    const auto frame_files = sorted_pngs(args.frames_dir);
    const auto mask_files = sorted_pngs(args.masks_dir);
    require(frame_files.size() == mask_files.size(), "frame/mask counts differ");

    std::vector<Image> frames;
    std::vector<Mask> masks;
    for (std::size_t f = 0; f < frame_files.size(); ++f) {
        frames.push_back(load_png(frame_files[f]).image);
        masks.push_back(load_mask_png(mask_files[f]));
    }
    fs::create_directories(args.out_dir);

    const auto t0 = std::chrono::steady_clock::now();
    const auto out = harmonize_video_lut(frames, masks, model, args.keyframe_interval);
    const double total_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

    std::vector<Image> targets;
    if (!args.targets_dir.empty()) {
        const auto target_files = sorted_pngs(args.targets_dir);
        require(target_files.size() == frame_files.size(), "target/frame counts differ");
        for (const auto& f : target_files) targets.push_back(load_png(f).image);
    }

    json report = json::array();
    for (std::size_t f = 0; f < out.size(); ++f) {
        const std::string name = fs::path(frame_files[f]).filename().string();
        save_png(out[f], (fs::path(args.out_dir) / name).string());
        json row{{"frame", name},
                 {"keyframe", int(f) % args.keyframe_interval == 0 || f + 1 == out.size()},
                 {"ms", total_ms / double(out.size())}};
        if (!targets.empty()) {
            row["mse"] = mse(out[f], targets[f]);
            row["psnr"] = psnr(out[f], targets[f]);
        }
        report.push_back(row);
    }
    std::ofstream sidecar(fs::path(args.out_dir) / "report.json");
    sidecar << report.dump(2) << "\n";
    std::cerr << "harmonized " << out.size() << " frames -> " << args.out_dir << "\n";
    return 0;
}

TrainSample load_sample(const fs::path& data, const std::string& name) {
    TrainSample s;
    s.composite = load_png((data / "composites" / name).string()).image;
    s.mask = load_mask_png((data / "masks" / name).string());
    s.target = load_png((data / "targets" / name).string()).image;
    return s;
}

int cmd_train(const Args& args) {
    std::ifstream cfg_file(args.config);
    require(cfg_file.good(), "cannot open training config " + args.config);
    json cfg = json::parse(cfg_file);

    ModelConfig model_cfg = toy_model_config();
    if (cfg.contains("model")) model_cfg = config_from_json(cfg.at("model").dump());
    validate(model_cfg);

    const std::uint64_t seed = cfg.value("seed", 1);
    const int phase1_steps = cfg.value("phase1_steps", 500);
    const int phase2_steps = cfg.value("phase2_steps", 0);
    const int lr_size = cfg.value("lr_size", 256);
    const int crop_size = cfg.value("crop_size", 256);
    const int batch_size = cfg.value("batch_size", 1);
    const double lr = cfg.value("lr", 3e-3);
    const double lr_min = cfg.value("lr_min", 1e-5);
    LossConfig loss_cfg;
    loss_cfg.lambda_lut = cfg.value("lambda_lut", 0.01);
    OptimizerConfig opt;
    opt.weight_decay = cfg.value("weight_decay", 0.0);
    if (cfg.value("optimizer", std::string("adam")) == "sgd")
        opt.kind = OptimizerConfig::Kind::kSgd;
    const TrainMode mode =
        cfg.value("mode", std::string("decoder")) == "lut-only" ? TrainMode::kLutOnly
                                                                : TrainMode::kDecoder;

    // Samples are matched by filename across composites/, masks/, targets/.
    const fs::path data(args.data_dir);
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(data / "composites"))
        if (entry.path().extension() == ".png") names.push_back(entry.path().filename().string());
    std::sort(names.begin(), names.end());
    require(!names.empty(), "no samples under " + args.data_dir + "/composites");
    std::cerr << "training on " << names.size() << " sample(s)\n";

    std::vector<TrainSample> samples;
    for (const auto& name : names) samples.push_back(load_sample(data, name));

    // Phase 1: low-resolution training; phase 2: high-resolution finetune
    // with Random Step Crop.
    std::vector<PreparedSample> lr_prepared, hr_prepared;
    for (const auto& s : samples) {
        TrainSample lr_sample;
        lr_sample.composite = resize_bilinear(s.composite, lr_size, lr_size);
        lr_sample.mask = resize_bilinear(s.mask, lr_size, lr_size);
        lr_sample.target = resize_bilinear(s.target, lr_size, lr_size);
        lr_prepared.push_back(prepare_sample(lr_sample, model_cfg));
        if (phase2_steps > 0) hr_prepared.push_back(prepare_sample(s, model_cfg));
    }

    auto weights = init_weights<float>(model_cfg, seed);
    OptimizerState<float> opt_state;
    std::mt19937_64 rng(seed + 1);
    const int eval_every = cfg.value("eval_every", 100);
    std::ofstream trace(args.out + ".csv");
    trace << "step,phase,lr,loss,psnr\n";
    auto eval_psnr = [&]() {
        Model m;
        m.cfg = model_cfg;
        m.weights = weights;
        const Image out = mode == TrainMode::kLutOnly
                              ? harmonize_lut_only(samples[0].composite, samples[0].mask, m)
                              : harmonize(samples[0].composite, samples[0].mask, m);
        return psnr(out, samples[0].target);
    };

    const int total = phase1_steps + phase2_steps;
    RscConfig rsc;
    rsc.crop_size = crop_size;
    rsc.stride_multiple = model_cfg.decoder.max_scale();
    for (int step = 0; step < total; ++step) {
        const bool phase2 = step >= phase1_steps;
        const auto& pool = phase2 ? hr_prepared : lr_prepared;
        const double cur_lr = cosine_lr(step, total, lr, lr_min);

        ModelWeights<float> grads = zero_weights<float>(model_cfg);
        double batch_loss = 0.0;
        for (int b = 0; b < batch_size; ++b) {
            const auto& sample = pool[rng() % pool.size()];
            RscCrop crop =
                phase2 ? rsc_crop(sample, model_cfg, rsc, rng)
                       : rsc_crop_at(sample, model_cfg, 0, 0,
                                     std::min(sample.height, sample.width) /
                                             model_cfg.decoder.max_scale() *
                                             model_cfg.decoder.max_scale());
            GraphState<float> state;
            batch_loss += forward_loss(weights, sample, crop, loss_cfg, mode, &state);
            auto g = backward(weights, sample, crop, loss_cfg, mode, state);
            auto grefs = g.registry();
            auto arefs = grads.registry();
            for (std::size_t r = 0; r < grefs.size(); ++r)
                for (std::size_t k = 0; k < grefs[r].size; ++k)
                    arefs[r].data[k] += grefs[r].data[k] / float(batch_size);
        }
        apply_update(weights, grads, cur_lr, opt, opt_state);
        batch_loss /= batch_size;
        trace << step << ',' << (phase2 ? 2 : 1) << ',' << cur_lr << ',' << batch_loss;
        if ((step + 1) % eval_every == 0 || step + 1 == total)
            trace << ',' << eval_psnr();
        trace << '\n';
        if (step % 50 == 0)
            std::cerr << "step " << step << " phase " << (phase2 ? 2 : 1) << " loss " << batch_loss
                      << "\n";
    }

    Model model;
    model.cfg = model_cfg;
    model.weights = std::move(weights);
    save_model(model, args.out);
    std::cerr << "checkpoint written to " << args.out << " (trace: " << args.out << ".csv)\n";
    return 0;
}

int cmd_gradcheck(const Args& args) {
    const auto decoder_report = gradcheck(args.seed, TrainMode::kDecoder);
    const auto lut_report = gradcheck(args.seed, TrainMode::kLutOnly);
    const double worst = std::max(decoder_report.max_rel_err, lut_report.max_rel_err);
    json out{{"seed", args.seed},
             {"decoder_max_rel_err", decoder_report.max_rel_err},
             {"decoder_worst_tensor", decoder_report.worst_tensor},
             {"lut_max_rel_err", lut_report.max_rel_err},
             {"parameters_checked", decoder_report.checked},
             {"threshold", 1e-4},
             {"pass", worst < 1e-4}};
    std::cout << out.dump(2) << "\n";
    std::cerr << "max relative error " << worst << (worst < 1e-4 ? " < 1e-4\n" : " >= 1e-4\n");
    return worst < 1e-4 ? 0 : 1;
}

int cmd_bench(const Args& args) {
    const Model model = load_model(args.weights);
    const auto loaded = load_png(args.image);
    const Mask mask = mask_for(args, loaded.image);
    const auto tile_counts = parse_int_list(args.tiles);
    require(!tile_counts.empty(), "empty tile list");

    json rows = json::array();
    std::vector<SweepRow> sweep;
    for (const int tiles : tile_counts) {
        const TilePlan plan = plan_tiles_by_count(loaded.image.height, loaded.image.width, tiles);
        Image out;
        const BenchResult r =
            measure([&] { out = harmonize_tiled(loaded.image, mask, model, plan); });
        SweepRow row;
        row.height = loaded.image.height;
        row.width = loaded.image.width;
        row.tiles = int(plan.tiles.size());
        row.peak_transient = r.mem.peak_transient();
        row.peak_total = r.mem.peak_total;
        row.wall_ms = r.wall_ms;
        sweep.push_back(row);
        rows.push_back(json{{"tiles", row.tiles},
                            {"peak_transient_floats", row.peak_transient},
                            {"peak_total_floats", row.peak_total},
                            {"wall_ms", row.wall_ms}});
    }
    if (!args.csv.empty()) {
        std::ofstream csv(args.csv);
        csv << sweep_to_csv(sweep);
    }
    std::cout << json{{"image", args.image},
                      {"height", loaded.image.height},
                      {"width", loaded.image.width},
                      {"rows", rows}}
                     .dump(2)
              << "\n";
    return 0;
}

int cmd_lut_export(const Args& args) {
    const Model model = load_model(args.weights);
    Lut3D lut;
    if (!args.image.empty()) {
        const auto loaded = load_png(args.image);
        const Mask mask = args.mask.empty() && loaded.alpha ? *loaded.alpha
                                                            : mask_for(args, loaded.image);
        lut = predict_lut(loaded.image, mask, model);
    } else if (model.lut_override) {
        lut = *model.lut_override;
    } else {
        fail("no --image given and the weight file has no embedded LUT override");
    }
    export_cube(lut, args.cube);
    std::cerr << "wrote " << args.cube << " (dim " << lut.dim << ")\n";
    return 0;
}

int cmd_lut_import(const Args& args) {
    Model model = load_model(args.weights);
    model.lut_override = import_cube(args.cube);
    save_model(model, args.weights);
    std::cerr << "embedded " << args.cube << " into " << args.weights << "\n";
    return 0;
}

int cmd_metrics(const Args& args) {
    const Image a = load_png(args.a_path).image;
    const Image b = load_png(args.b_path).image;
    std::optional<Mask> mask;
    if (!args.mask_path.empty()) mask = load_mask_png(args.mask_path);
    const MetricReport r = compute_metrics(a, b, mask ? &*mask : nullptr);
    json out{{"mse", r.mse}, {"psnr", r.psnr}, {"ssim", r.ssim}};
    if (r.has_fmse) out["fmse"] = r.fmse;
    std::cout << out.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hinet: implicit-network image harmonization"};
    app.require_subcommand(1);
    Args args;

    auto* harmonize_cmd = app.add_subcommand("harmonize", "Harmonize a composite image");
    harmonize_cmd->add_option("--image", args.image, "Composite PNG")->required();
    harmonize_cmd->add_option("--mask", args.mask, "Foreground mask PNG");
    harmonize_cmd->add_option("--weights", args.weights, "Model weight file")->required();
    harmonize_cmd->add_option("--out", args.out, "Output PNG")->required();
    harmonize_cmd->add_option("--mode", args.mode, "full|tiled|region|lut-only");
    harmonize_cmd->add_option("--max-batch", args.max_batch, "Max vectors per tile (tiled mode)");
    harmonize_cmd->add_option("--target", args.target, "Decode resolution WxH");
    harmonize_cmd->add_flag("--no-blend", args.no_blend, "Disable mask blending of the output");

    auto* video_cmd = app.add_subcommand("video", "LUT-based video harmonization");
    video_cmd->add_option("--frames", args.frames_dir, "Directory of frame PNGs")->required();
    video_cmd->add_option("--masks", args.masks_dir, "Directory of mask PNGs")->required();
    video_cmd->add_option("--weights", args.weights, "Model weight file")->required();
    video_cmd->add_option("--out", args.out_dir, "Output directory")->required();
    video_cmd->add_option("--keyframe-interval", args.keyframe_interval, "LUT keyframe interval");
    video_cmd->add_option("--targets", args.targets_dir, "Optional ground-truth frames");

    auto* train_cmd = app.add_subcommand("train", "Train on a toy dataset");
    train_cmd->add_option("--config", args.config, "Training config JSON")->required();
    train_cmd->add_option("--data", args.data_dir, "Dataset directory")->required();
    train_cmd->add_option("--out", args.out, "Checkpoint path")->required();

    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
    gradcheck_cmd->add_option("--seed", args.seed, "RNG seed");

    auto* bench_cmd = app.add_subcommand("bench", "Memory/runtime tile sweep");
    bench_cmd->add_option("--image", args.image, "Composite PNG")->required();
    bench_cmd->add_option("--mask", args.mask, "Foreground mask PNG");
    bench_cmd->add_option("--weights", args.weights, "Model weight file")->required();
    bench_cmd->add_option("--tiles", args.tiles, "Comma-separated tile counts");
    bench_cmd->add_option("--csv", args.csv, "Also write a CSV report");

    auto* lut_cmd = app.add_subcommand("lut", "3D LUT export/import");
    auto* lut_export = lut_cmd->add_subcommand("export", "Write a .cube file");
    lut_export->add_option("--weights", args.weights, "Model weight file")->required();
    lut_export->add_option("--cube", args.cube, "Output .cube path")->required();
    lut_export->add_option("--image", args.image, "Predict the LUT for this composite");
    lut_export->add_option("--mask", args.mask, "Mask for --image");
    auto* lut_import = lut_cmd->add_subcommand("import", "Embed a .cube into the weight file");
    lut_import->add_option("--weights", args.weights, "Model weight file")->required();
    lut_import->add_option("--cube", args.cube, "Input .cube path")->required();
    lut_cmd->require_subcommand(1);

    auto* metrics_cmd = app.add_subcommand("metrics", "MSE/fMSE/PSNR/SSIM as JSON");
    metrics_cmd->add_option("--a", args.a_path, "First PNG")->required();
    metrics_cmd->add_option("--b", args.b_path, "Second PNG")->required();
    metrics_cmd->add_option("--mask", args.mask_path, "Foreground mask for fMSE");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (app.got_subcommand(harmonize_cmd)) return cmd_harmonize(args);
        if (app.got_subcommand(video_cmd)) return cmd_video(args);
        if (app.got_subcommand(train_cmd)) return cmd_train(args);
        if (app.got_subcommand(gradcheck_cmd)) return cmd_gradcheck(args);
        if (app.got_subcommand(bench_cmd)) return cmd_bench(args);
        if (app.got_subcommand(lut_cmd)) {
            if (lut_cmd->got_subcommand(lut_export)) return cmd_lut_export(args);
            return cmd_lut_import(args);
        }
        if (app.got_subcommand(metrics_cmd)) return cmd_metrics(args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
