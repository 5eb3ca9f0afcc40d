// End-to-end checks of the command-line binary (spawned as a subprocess).
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "hinet/bench.hpp"
#include "hinet/png_io.hpp"
#include "hinet/serialize.hpp"
#include "hinet/training.hpp"

using namespace hinet;
using nlohmann::json;

namespace {

struct RunResult {
    int exit_code;
    std::string stdout_text;
};

RunResult run_cli(const std::string& args) {
    const std::string out_file = "cli_stdout.tmp";
    const std::string cmd = std::string(HINET_CLI_PATH) + " " + args + " > " + out_file + " 2> cli_stderr.tmp";
    const int status = std::system(cmd.c_str());
    std::ifstream in(out_file);
    std::stringstream ss;
    ss << in.rdbuf();
    std::remove(out_file.c_str());
    std::remove("cli_stderr.tmp");
    return {WEXITSTATUS(status), ss.str()};
}

void write_test_model(const std::string& path) {
    Model model;
    model.cfg = toy_model_config();
    model.weights = init_weights<float>(model.cfg, 1234);
    save_model(model, path);
}

}  // namespace

TEST_CASE("cli metrics") {
    const Image img = random_image(16, 16, 90);
    save_png(img, "cli_a.png");

    SUBCASE("identical images report mse 0 and the psnr cap") {
        const auto r = run_cli("metrics --a cli_a.png --b cli_a.png");
        REQUIRE(r.exit_code == 0);
        const json out = json::parse(r.stdout_text);
        CHECK(out.at("mse") == 0.0);
        CHECK(out.at("psnr") == 100.0);
        CHECK(out.at("ssim") == 1.0);
    }
    SUBCASE("fmse appears only with a mask") {
        Mask m(16, 16);
        for (auto& v : m.data) v = 1.f;
        save_png(m, "cli_m.png");
        const auto with_mask = run_cli("metrics --a cli_a.png --b cli_a.png --mask cli_m.png");
        CHECK(json::parse(with_mask.stdout_text).contains("fmse"));
        const auto without = run_cli("metrics --a cli_a.png --b cli_a.png");
        CHECK(!json::parse(without.stdout_text).contains("fmse"));
        std::remove("cli_m.png");
    }
    SUBCASE("missing file is a runtime error (exit 1)") {
        CHECK(run_cli("metrics --a cli_a.png --b nope.png").exit_code == 1);
    }
    std::remove("cli_a.png");
}

TEST_CASE("cli usage errors exit with code 2") {
    CHECK(run_cli("metrics --a only_one.png").exit_code == 2);
    CHECK(run_cli("definitely-not-a-subcommand").exit_code == 2);
    CHECK(run_cli("harmonize").exit_code == 2);
}

TEST_CASE("cli help round-trips the documented flags") {
    const auto top = run_cli("--help");
    CHECK(top.exit_code == 0);
    for (const char* sub :
         {"harmonize", "video", "train", "gradcheck", "bench", "lut", "metrics"})
        CHECK(top.stdout_text.find(sub) != std::string::npos);

    const auto h = run_cli("harmonize --help");
    for (const char* flag : {"--image", "--mask", "--weights", "--out", "--mode", "--max-batch",
                             "--target"})
        CHECK(h.stdout_text.find(flag) != std::string::npos);
    const auto v = run_cli("video --help");
    for (const char* flag : {"--frames", "--masks", "--weights", "--out", "--keyframe-interval"})
        CHECK(v.stdout_text.find(flag) != std::string::npos);
    const auto b = run_cli("bench --help");
    for (const char* flag : {"--image", "--weights", "--tiles"})
        CHECK(b.stdout_text.find(flag) != std::string::npos);
}

TEST_CASE("cli harmonize") {
    write_test_model("cli_model.hinet");
    const Image img = random_image(32, 32, 91);
    save_png(img, "cli_comp.png");
    Mask zero(32, 32);
    save_png(zero, "cli_zero_mask.png");

    SUBCASE("all-zero mask returns the input file content") {
        const auto r = run_cli(
            "harmonize --image cli_comp.png --mask cli_zero_mask.png --weights cli_model.hinet "
            "--out cli_out.png");
        REQUIRE(r.exit_code == 0);
        const Image in = load_png("cli_comp.png").image;
        const Image out = load_png("cli_out.png").image;
        REQUIRE(out.data.size() == in.data.size());
        for (std::size_t k = 0; k < in.data.size(); ++k) CHECK(out.data[k] == in.data[k]);
        std::remove("cli_out.png");
    }
    SUBCASE("identical seeded invocations produce byte-identical outputs") {
        Mask m = random_binary_mask(32, 32, 92);
        save_png(m, "cli_mask.png");
        run_cli("harmonize --image cli_comp.png --mask cli_mask.png --weights cli_model.hinet "
                "--out cli_out1.png --mode tiled --max-batch 128");
        run_cli("harmonize --image cli_comp.png --mask cli_mask.png --weights cli_model.hinet "
                "--out cli_out2.png --mode tiled --max-batch 128");
        std::ifstream f1("cli_out1.png", std::ios::binary), f2("cli_out2.png", std::ios::binary);
        std::stringstream s1, s2;
        s1 << f1.rdbuf();
        s2 << f2.rdbuf();
        CHECK(s1.str() == s2.str());
        CHECK(!s1.str().empty());
        std::remove("cli_mask.png");
        std::remove("cli_out1.png");
        std::remove("cli_out2.png");
    }
    SUBCASE("target resolution changes the output size") {
        Mask m = random_binary_mask(32, 32, 93);
        save_png(m, "cli_mask.png");
        const auto r = run_cli(
            "harmonize --image cli_comp.png --mask cli_mask.png --weights cli_model.hinet "
            "--out cli_out.png --target 48x40");
        REQUIRE(r.exit_code == 0);
        const Image out = load_png("cli_out.png").image;
        CHECK(out.width == 48);
        CHECK(out.height == 40);
        std::remove("cli_mask.png");
        std::remove("cli_out.png");
    }
    std::remove("cli_comp.png");
    std::remove("cli_zero_mask.png");
    std::remove("cli_model.hinet");
}

TEST_CASE("outputs are independent of thread count and SIMD backend") {
    write_test_model("cli_model.hinet");
    save_png(random_image(48, 48, 86), "cli_comp.png");
    save_png(random_binary_mask(48, 48, 87), "cli_mask.png");

    const std::string invoke =
        " harmonize --image cli_comp.png --mask cli_mask.png --weights cli_model.hinet --out ";
    auto run_env = [&](const std::string& env, const std::string& out) {
        const std::string cmd = env + " " + std::string(HINET_CLI_PATH) + invoke + out +
                                " > /dev/null 2>&1";
        REQUIRE(std::system(cmd.c_str()) == 0);
        std::ifstream f(out, std::ios::binary);
        std::stringstream ss;
        ss << f.rdbuf();
        std::remove(out.c_str());
        return ss.str();
    };
    const std::string base = run_env("", "cli_env0.png");
    CHECK(run_env("HINET_THREADS=1", "cli_env1.png") == base);
    CHECK(run_env("HINET_THREADS=7", "cli_env2.png") == base);
    CHECK(run_env("HINET_SIMD=scalar", "cli_env3.png") == base);

    std::remove("cli_comp.png");
    std::remove("cli_mask.png");
    std::remove("cli_model.hinet");
}

TEST_CASE("cli bench emits JSON rows") {
    write_test_model("cli_model.hinet");
    save_png(random_image(64, 64, 94), "cli_bench.png");
    const auto r = run_cli("bench --image cli_bench.png --weights cli_model.hinet --tiles 1,4");
    REQUIRE(r.exit_code == 0);
    const json out = json::parse(r.stdout_text);
    REQUIRE(out.at("rows").size() == 2);
    CHECK(out.at("rows")[0].at("peak_transient_floats").get<std::size_t>() >
          out.at("rows")[1].at("peak_transient_floats").get<std::size_t>());
    std::remove("cli_bench.png");
    std::remove("cli_model.hinet");
}

TEST_CASE("cli lut export/import round trip") {
    write_test_model("cli_model.hinet");
    save_png(random_image(32, 32, 95), "cli_comp.png");

    // Predict-and-export, then import back as an override.
    auto r = run_cli("lut export --weights cli_model.hinet --cube cli_lut.cube --image cli_comp.png");
    REQUIRE(r.exit_code == 0);
    r = run_cli("lut import --weights cli_model.hinet --cube cli_lut.cube");
    REQUIRE(r.exit_code == 0);
    const Model model = load_model("cli_model.hinet");
    REQUIRE(model.lut_override.has_value());
    CHECK(model.lut_override->dim == model.cfg.encoder.lut_dim);
    // Export without --image now returns the embedded override.
    r = run_cli("lut export --weights cli_model.hinet --cube cli_lut2.cube");
    REQUIRE(r.exit_code == 0);
    const Lut3D a = import_cube("cli_lut.cube");
    const Lut3D b = import_cube("cli_lut2.cube");
    CHECK(a.lattice == b.lattice);
    std::remove("cli_lut.cube");
    std::remove("cli_lut2.cube");
    std::remove("cli_comp.png");
    std::remove("cli_model.hinet");
}

TEST_CASE("cli train runs a short toy job") {
    // Tiny dataset: one synthetic sample.
    const TrainSample sample = make_synthetic_sample(64, 96);
    std::system("mkdir -p cli_data/composites cli_data/masks cli_data/targets");
    save_png(sample.composite, "cli_data/composites/s0.png");
    save_png(sample.mask, "cli_data/masks/s0.png");
    save_png(sample.target, "cli_data/targets/s0.png");
    {
        std::ofstream cfg("cli_train.json");
        cfg << R"({"seed": 3, "phase1_steps": 4, "phase2_steps": 2, "lr": 1e-3,
                   "lr_size": 64, "crop_size": 32})";
    }
    const auto r = run_cli("train --config cli_train.json --data cli_data --out cli_ckpt.hinet");
    REQUIRE(r.exit_code == 0);
    const Model model = load_model("cli_ckpt.hinet");
    CHECK(model.cfg.decoder.hidden_width == 32);
    std::ifstream trace("cli_ckpt.hinet.csv");
    CHECK(trace.good());
    std::system("rm -rf cli_data cli_train.json cli_ckpt.hinet cli_ckpt.hinet.csv");
}

TEST_CASE("cli video writes frames and a report") {
    write_test_model("cli_model.hinet");
    std::system("mkdir -p cli_frames cli_masks");
    for (int f = 0; f < 4; ++f) {
        char name[64];
        std::snprintf(name, sizeof name, "cli_frames/f%02d.png", f);
        save_png(random_image(24, 24, 970 + f), name);
        std::snprintf(name, sizeof name, "cli_masks/f%02d.png", f);
        save_png(random_binary_mask(24, 24, 980 + f), name);
    }
    const auto r = run_cli(
        "video --frames cli_frames --masks cli_masks --weights cli_model.hinet --out cli_vout "
        "--keyframe-interval 2");
    REQUIRE(r.exit_code == 0);
    std::ifstream report("cli_vout/report.json");
    REQUIRE(report.good());
    json rj;
    report >> rj;
    CHECK(rj.size() == 4);
    const Image frame0 = load_png("cli_vout/f00.png").image;
    CHECK(frame0.width == 24);
    std::system("rm -rf cli_frames cli_masks cli_vout cli_model.hinet");
}
