#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "mren/checkpoint.hpp"
#include "mren/error.hpp"
#include "mren/training.hpp"

#include "helpers.hpp"
#include "oracles.hpp"

using namespace mren;
using namespace mren::train;
namespace o = oracle;
namespace fs = std::filesystem;

namespace {

model::ModelConfig tiny_config() {
    model::ModelConfig cfg;
    cfg.scale = 2;
    cfg.n_mreb = 1;
    cfg.base_channels = 16;
    cfg.branch_channels = 4;
    cfg.distill_channels = 8;
    return cfg;
}

TrainConfig desk_train() {
    TrainConfig tc;
    tc.total_epochs = 2;
    tc.iterations_per_epoch = 3;
    tc.batch = 2;
    tc.patch = 16;
    tc.seed = 5;
    return tc;
}

std::vector<data::NamedImage> desk_images() {
    std::vector<data::NamedImage> images;
    for (int i = 0; i < 3; ++i)
        images.push_back({"t" + std::to_string(i) + ".png",
                          data::synth_texture(40, 40, static_cast<std::uint64_t>(i + 1))});
    return images;
}

bool same_bits_f(const Tensor4f& a, const Tensor4f& b) {
    return a.dims() == b.dims() &&
           std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.count())) == 0;
}

} // namespace

TEST_CASE("step decay halves on schedule") {
    TrainConfig tc; // lr0 5e-4, period 600, factor 0.5
    CHECK(lr_at(0, tc) == 5e-4);
    CHECK(lr_at(599, tc) == 5e-4);
    CHECK(lr_at(600, tc) == 2.5e-4);
    CHECK(lr_at(1199, tc) == 2.5e-4);
    CHECK(lr_at(1200, tc) == doctest::Approx(1.25e-4).epsilon(1e-15));
}

TEST_CASE("train config json round-trips and rejects junk") {
    TrainConfig tc;
    tc.lr0 = 1e-3;
    tc.batch = 4;
    tc.seed = 42;
    auto back = TrainConfig::from_json_text(tc.to_json_text());
    CHECK(back.lr0 == 1e-3);
    CHECK(back.batch == 4);
    CHECK(back.seed == 42);
    CHECK_THROWS_AS(TrainConfig::from_json_text(R"({"lr00": 1})"), ConfigError);

    TrainConfig bad;
    bad.batch = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("adam single step closed form") {
    ParamStore<float> params;
    auto& p = params.add("w", Tensor4f(Dims4{1, 1, 1, 1}, 0.0f));
    p.grad.fill(1.0f);
    p.grad_valid = true;

    AdamState adam;
    adam.init(params);
    TrainConfig tc;
    adam.apply(params, 0.1, tc);
    // from zero moments the corrections cancel: w = -lr / (1 + eps),
    // stored at float precision
    CHECK(params.at("w").value.data()[0] == static_cast<float>(-0.09999999900000002));
    CHECK(adam.step() == 1);
}

TEST_CASE("adam tracks the textbook recurrence") {
    Rng rng(31);
    ParamStore<float> params;
    params.add("a", o::random_tensor<float>({1, 2, 2, 2}, rng));
    params.add("b", o::random_tensor<float>({1, 1, 1, 3}, rng));
    AdamState adam;
    adam.init(params);
    TrainConfig tc;

    std::vector<float> ref;
    for (auto& p : params)
        for (std::int64_t i = 0; i < p.value.count(); ++i) ref.push_back(p.value.data()[i]);
    o::AdamRef oracle_state;

    for (int step = 0; step < 5; ++step) {
        std::vector<float> grads;
        for (auto& p : params) {
            for (std::int64_t i = 0; i < p.grad.count(); ++i) {
                p.grad.data()[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
                grads.push_back(p.grad.data()[i]);
            }
            p.grad_valid = true;
        }
        adam.apply(params, 3e-3, tc);
        oracle_state.step(ref, grads, 3e-3, tc.beta1, tc.beta2, tc.eps);
    }

    std::size_t k = 0;
    for (auto& p : params)
        for (std::int64_t i = 0; i < p.value.count(); ++i, ++k)
            CHECK(p.value.data()[i] == doctest::Approx(ref[k]).epsilon(5e-5));
}

TEST_CASE("adam refuses missing gradients and foreign stores") {
    ParamStore<float> params;
    params.add("conv.weight", Tensor4f(Dims4{1, 1, 1, 1}, 0.0f));
    AdamState adam;
    adam.init(params);
    TrainConfig tc;
    CHECK_THROWS_WITH_AS(adam.apply(params, 1e-3, tc),
                         doctest::Contains("conv.weight"), UsageError);

    AdamState uninit;
    CHECK_THROWS_AS(uninit.apply(params, 1e-3, tc), UsageError);
}

TEST_CASE("train_step reduces loss on a fixed batch") {
    auto cfg = tiny_config();
    model::MrenModelf m(cfg, 3);
    auto images = desk_images();
    Rng rng(7);
    auto batch = sample_patches(images, cfg.scale, 16, 2, rng);

    AdamState adam;
    adam.init(m.params());
    TrainConfig tc;
    float first = 0, last = 0;
    for (int i = 0; i < 30; ++i) {
        const float loss = train_step(m, batch, adam, 1e-3, tc);
        if (i == 0) first = loss;
        last = loss;
        CHECK(std::isfinite(loss));
    }
    CHECK(last < first);
}

TEST_CASE("non-finite loss raises a numeric error") {
    auto cfg = tiny_config();
    model::MrenModelf m(cfg, 3);
    m.params().at(m.head().name + ".weight").value.fill(
        std::numeric_limits<float>::quiet_NaN());
    auto images = desk_images();
    Rng rng(7);
    auto batch = sample_patches(images, cfg.scale, 16, 2, rng);
    AdamState adam;
    adam.init(m.params());
    TrainConfig tc;
    CHECK_THROWS_AS(train_step(m, batch, adam, 1e-3, tc), NumericError);
}

TEST_CASE("checkpoint files survive a save/load/save cycle byte for byte") {
    testutil::TempDir tmp("ckpt");
    auto cfg = tiny_config();
    model::MrenModelf m(cfg, 11);
    auto ck = make_checkpoint(m, 4, nullptr, "");
    const auto p1 = tmp.file("a.mren");
    const auto p2 = tmp.file("b.mren");
    ckpt::save_checkpoint(p1, ck);
    auto loaded = ckpt::load_checkpoint(p1);
    ckpt::save_checkpoint(p2, loaded);
    CHECK(testutil::slurp(p1) == testutil::slurp(p2));
    CHECK_FALSE(fs::exists(p1 + ".tmp"));

    auto m2 = model_from_checkpoint(loaded);
    Rng rng(13);
    auto x = o::random_tensor<float>({1, 3, 8, 8}, rng, 0.0, 1.0);
    CHECK(same_bits_f(m.forward_eval(x), m2.forward_eval(x)));
}

TEST_CASE("checkpoint loader flags corruption") {
    testutil::TempDir tmp("corrupt");
    auto cfg = tiny_config();
    model::MrenModelf m(cfg, 11);
    const auto path = tmp.file("good.mren");
    ckpt::save_checkpoint(path, make_checkpoint(m, 1, nullptr, ""));
    const std::string blob = testutil::slurp(path);

    auto write_variant = [&](const std::string& name, std::string bytes) {
        const auto p = tmp.file(name);
        testutil::spit(p, bytes);
        return p;
    };

    std::string bad_magic = blob;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(ckpt::load_checkpoint(write_variant("magic.mren", bad_magic)),
                    IntegrityError);

    CHECK_THROWS_AS(
        ckpt::load_checkpoint(write_variant("trunc.mren", blob.substr(0, blob.size() / 2))),
        IntegrityError);

    CHECK_THROWS_AS(ckpt::load_checkpoint(write_variant("tail.mren", blob + "zz")),
                    IntegrityError);

    std::string bad_version = blob;
    bad_version[4] = 9;
    CHECK_THROWS_AS(ckpt::load_checkpoint(write_variant("ver.mren", bad_version)),
                    IntegrityError);

    CHECK_THROWS_AS(ckpt::load_checkpoint(tmp.file("absent.mren")), IoError);
}

TEST_CASE("model restore validates the tensor set") {
    auto cfg = tiny_config();
    model::MrenModelf m(cfg, 11);
    auto ck = make_checkpoint(m, 1, nullptr, "");

    auto missing = ck;
    missing.tensors.erase(missing.tensors.begin());
    CHECK_THROWS_AS(model_from_checkpoint(missing), IntegrityError);

    auto misshapen = ck;
    misshapen.tensors[0].second = Tensor4f(Dims4{1, 1, 1, 1}, 0.0f);
    CHECK_THROWS_AS(model_from_checkpoint(misshapen), IntegrityError);

    auto alien = ck;
    alien.tensors.push_back({"mystery.weight", Tensor4f(Dims4{1, 1, 1, 1}, 0.0f)});
    CHECK_THROWS_AS(model_from_checkpoint(alien), IntegrityError);
}

TEST_CASE("fit writes checkpoints and a parseable log") {
    testutil::TempDir tmp("fit");
    auto cfg = tiny_config();
    model::MrenModelf m(cfg, 2);
    auto tc = desk_train();
    auto log = fit(m, desk_images(), tc, tmp.path.string());

    REQUIRE(log.rows.size() == 6); // 2 epochs x 3 iterations
    CHECK(log.rows.front().iteration == 0);
    CHECK(log.rows.back().iteration == 5); // zero-based global index
    CHECK(log.rows.back().epoch == 1);
    CHECK(fs::exists(tmp.file("ckpt_epoch_0001.mren")));
    CHECK(fs::exists(tmp.file("ckpt_epoch_0002.mren")));
    CHECK(fs::exists(tmp.file("model_final.mren")));

    const std::string csv = testutil::slurp(tmp.file("train_log.csv"));
    CHECK(csv.rfind("iteration,epoch,lr,loss,seconds", 0) == 0);

    // final model equals the last epoch checkpoint
    CHECK(testutil::slurp(tmp.file("model_final.mren")) ==
          testutil::slurp(tmp.file("ckpt_epoch_0002.mren")));

    // optimizer round-trip through the checkpoint
    auto resumed = trainer_from_checkpoint(ckpt::load_checkpoint(tmp.file("ckpt_epoch_0002.mren")));
    CHECK(resumed.has_optimizer);
    CHECK(resumed.state.start_epoch == 2);
    CHECK(resumed.state.adam.step() == 6);
    CHECK_FALSE(resumed.state.rng_state.empty());
    REQUIRE(resumed.state.adam.moments().size() == m.params().size());
}

TEST_CASE("fit requires at least one usable image") {
    testutil::TempDir tmp("fit_small");
    auto cfg = tiny_config();
    model::MrenModelf m(cfg, 2);
    auto tc = desk_train(); // patch 16
    std::vector<data::NamedImage> tiny;
    tiny.push_back({"dot.png", data::synth_texture(8, 8, 1)});
    CHECK_THROWS_AS(fit(m, tiny, tc, tmp.path.string()), IoError);
}

TEST_CASE("evaluation with a zeroed tail equals the bicubic baseline") {
    testutil::TempDir tmp("eval");
    for (int i = 0; i < 2; ++i)
        image::save_png(data::synth_texture(40, 36, static_cast<std::uint64_t>(i + 9)),
                        tmp.file("img" + std::to_string(i) + ".png"));

    auto cfg = tiny_config();
    model::MrenModelf m(cfg, 4);
    m.params().at(m.tail().name + ".weight").value.fill(0.0f);
    m.params().at(m.tail().name + ".bias").value.fill(0.0f);

    auto base = evaluate(nullptr, tmp.path.string(), 2, false);
    auto net = evaluate(&m, tmp.path.string(), 2, false);
    REQUIRE(base.rows.size() == 2);
    REQUIRE(net.rows.size() == 2);
    for (std::size_t i = 0; i < base.rows.size(); ++i) {
        CHECK(net.rows[i].psnr == doctest::Approx(base.rows[i].psnr).epsilon(1e-12));
        CHECK(net.rows[i].ssim == doctest::Approx(base.rows[i].ssim).epsilon(1e-12));
    }
    CHECK(base.mean_psnr > 20.0); // sanity: smooth textures upscale decently

    // cached LR inputs land next to the originals and reproduce the scores
    auto cached = evaluate(nullptr, tmp.path.string(), 2, true);
    CHECK(fs::is_directory(tmp.file("LRx2")));
    CHECK(cached.mean_psnr == doctest::Approx(base.mean_psnr).epsilon(1e-12));
    auto cached2 = evaluate(nullptr, tmp.path.string(), 2, true);
    CHECK(cached2.mean_psnr == doctest::Approx(base.mean_psnr).epsilon(1e-12));
}
