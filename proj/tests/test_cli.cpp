#include <doctest.h>

#include <filesystem>

#include "mren/dataset.hpp"
#include "mren/image.hpp"

#include "helpers.hpp"

using testutil::run_cli;
namespace fs = std::filesystem;

TEST_CASE("cli usage errors exit with status 1") {
    CHECK(run_cli("").status == 1);
    CHECK(run_cli("definitely-not-a-command").status == 1);
    CHECK(run_cli("train --no-such-flag").status == 1);
    CHECK(run_cli("eval --model bicubic").status == 1); // missing required --hr-dir
}

TEST_CASE("cli help exits cleanly") {
    auto r = run_cli("--help");
    CHECK(r.status == 0);
    CHECK(r.out.find("train") != std::string::npos);
    CHECK(r.out.find("analyze") != std::string::npos);
    CHECK(run_cli("infer --help").status == 0);
}

TEST_CASE("cli maps data problems to status 2") {
    auto r = run_cli("eval --model bicubic --hr-dir /nonexistent/dir --scale 2");
    CHECK(r.status == 2);
    CHECK(r.out.find("/nonexistent/dir") != std::string::npos);

    testutil::TempDir tmp("cli_io");
    testutil::spit(tmp.file("fake.mren"), "not a checkpoint");
    auto r2 = run_cli("infer --model " + tmp.file("fake.mren") + " --input x.png --output y.png");
    CHECK(r2.status == 2);
}

TEST_CASE("cli rejects malformed configs with status 1") {
    testutil::TempDir tmp("cli_cfg");
    testutil::spit(tmp.file("bad.json"), R"({"model": {"no_such_knob": 1}})");
    auto r = run_cli("analyze --config " + tmp.file("bad.json"));
    CHECK(r.status == 1);
    CHECK(r.out.find("no_such_knob") != std::string::npos);
}

TEST_CASE("analyze prints the frozen accounting") {
    auto r = run_cli("analyze");
    REQUIRE(r.status == 0);
    CHECK(r.out.find("total parameters: 264183") != std::string::npos);
    CHECK(r.out.find("264.2K") != std::string::npos);
    CHECK(r.out.find("design target") != std::string::npos);
    CHECK(r.out.find("30815") != std::string::npos);  // per-MREB subtotal
    CHECK(r.out.find("229263") != std::string::npos); // osa sweep row
    CHECK(r.out.find("468663") != std::string::npos); // oca sweep row
    CHECK(r.out.find("23.8G") != std::string::npos);  // informational flops line
    CHECK(r.out.find("mac") != std::string::npos);
}

TEST_CASE("analyze honors resolution and convention flags") {
    auto r = run_cli("analyze --resolution 1280x720 --convention mac2");
    REQUIRE(r.status == 0);
    CHECK(r.out.find("mac2") != std::string::npos);
    CHECK(run_cli("analyze --resolution 1281x720").status == 1);
    CHECK(run_cli("analyze --convention wild").status == 1);
}

TEST_CASE("eval runs the bicubic baseline and writes csv") {
    testutil::TempDir tmp("cli_eval");
    for (int i = 0; i < 2; ++i)
        mren::image::save_png(mren::data::synth_texture(40, 40, static_cast<std::uint64_t>(i + 3)),
                              tmp.file("t" + std::to_string(i) + ".png"));
    const std::string csv = tmp.file("scores.csv");
    auto r = run_cli("eval --model bicubic --hr-dir " + tmp.path.string() +
                     " --scale 2 --csv " + csv);
    REQUIRE(r.status == 0);
    CHECK(r.out.find("t0.png") != std::string::npos);
    CHECK(r.out.find("mean") != std::string::npos);
    REQUIRE(fs::exists(csv));
    const std::string body = testutil::slurp(csv);
    CHECK(body.find("image") != std::string::npos);
    CHECK(body.find("\r\n") != std::string::npos);
}

TEST_CASE("train then infer round-trips through the cli") {
    testutil::TempDir tmp("cli_train");
    fs::create_directories(tmp.file("hr"));
    for (int i = 0; i < 3; ++i)
        mren::image::save_png(mren::data::synth_texture(48, 48, static_cast<std::uint64_t>(i + 1)),
                              tmp.file("hr/t" + std::to_string(i) + ".png"));

    testutil::spit(tmp.file("cfg.json"), R"({
      "model": {"scale": 2, "n_mreb": 1, "base_channels": 16,
                 "branch_channels": 4, "distill_channels": 8},
      "train": {"total_epochs": 1, "iterations_per_epoch": 2, "batch": 2, "patch": 16},
      "data": {"hr_dir": ")" + tmp.file("hr") + R"("}
    })");

    auto train = run_cli("train --config " + tmp.file("cfg.json") + " --out " + tmp.file("run") +
                         " --seed 3");
    REQUIRE(train.status == 0);
    REQUIRE(fs::exists(tmp.file("run/model_final.mren")));
    CHECK(fs::exists(tmp.file("run/train_log.csv")));

    mren::image::save_png(mren::data::synth_texture(20, 18, 9), tmp.file("lr.png"));
    auto infer = run_cli("infer --model " + tmp.file("run/model_final.mren") + " --input " +
                         tmp.file("lr.png") + " --output " + tmp.file("sr.png"));
    REQUIRE(infer.status == 0);
    auto sr = mren::image::load_png(tmp.file("sr.png"));
    CHECK(sr.width == 40);
    CHECK(sr.height == 36);

    // resuming from the final checkpoint continues without error
    auto resume = run_cli("train --config " + tmp.file("cfg.json") + " --out " + tmp.file("run2") +
                          " --resume " + tmp.file("run/ckpt_epoch_0001.mren"));
    CHECK(resume.status == 0);
}

TEST_CASE("ablate sweeps one axis end to end") {
    testutil::TempDir tmp("cli_ablate");
    fs::create_directories(tmp.file("hr"));
    for (int i = 0; i < 2; ++i)
        mren::image::save_png(mren::data::synth_texture(56, 56, static_cast<std::uint64_t>(i + 5)),
                              tmp.file("hr/t" + std::to_string(i) + ".png"));

    auto r = run_cli("ablate --axis w --values 0,0.5 --data-dir " + tmp.file("hr") +
                     " --budget-iters 2 --scale 2 --seed 1");
    REQUIRE(r.status == 0);
    CHECK(r.out.find("0.5") != std::string::npos);
    CHECK(r.out.find("final_loss") != std::string::npos);

    CHECK(run_cli("ablate --axis bogus --data-dir " + tmp.file("hr")).status == 1);
}
