#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mren/analysis.hpp"
#include "mren/dataset.hpp"
#include "mren/error.hpp"
#include "mren/image.hpp"
#include "mren/model.hpp"
#include "mren/training.hpp"

namespace {

using namespace mren;
using nlohmann::json;

// JSON experiment file: {"model": {...}, "train": {...}, "data": {...}},
// each section optional, unknown keys rejected. Flags override file values.
struct FileConfig {
    model::ModelConfig model;
    train::TrainConfig train;
    std::string hr_dir;
    bool cache_lr = false;
};

FileConfig load_file_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();

    json j;
    try {
        j = json::parse(ss.str());
    } catch (const json::exception& e) {
        throw ConfigError("invalid JSON in '" + path + "': " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config file must hold a JSON object");

    FileConfig fc;
    for (const auto& [key, value] : j.items()) {
        if (key == "model") {
            fc.model = model::ModelConfig::from_json_text(value.dump());
        } else if (key == "train") {
            fc.train = train::TrainConfig::from_json_text(value.dump());
        } else if (key == "data") {
            if (!value.is_object()) throw ConfigError("config section 'data' must be an object");
            for (const auto& [dk, dv] : value.items()) {
                try {
                    if (dk == "hr_dir") fc.hr_dir = dv.get<std::string>();
                    else if (dk == "cache_lr") fc.cache_lr = dv.get<bool>();
                    else throw ConfigError("unknown config key 'data." + dk + "'");
                } catch (const json::exception& e) {
                    throw ConfigError("bad config value 'data." + dk + "': " + e.what());
                }
            }
        } else {
            throw ConfigError("unknown config section '" + key + "'");
        }
    }
    return fc;
}

struct TrainArgs {
    std::string config;
    std::string data_dir;
    std::string out;
    std::string resume;
    int scale = 0;
    std::uint64_t seed = 0;
    bool has_scale = false;
    bool has_seed = false;
};

int run_train(const TrainArgs& a) {
    FileConfig fc = a.config.empty() ? FileConfig{} : load_file_config(a.config);
    if (!a.data_dir.empty()) fc.hr_dir = a.data_dir;
    if (fc.hr_dir.empty()) throw UsageError("no data directory (use --data-dir or data.hr_dir)");
    if (a.has_scale) fc.model.scale = a.scale;
    if (a.has_seed) {
        fc.model.rng_seed = a.seed;
        fc.train.seed = a.seed;
    }
    fc.model.validate();
    fc.train.validate();

    auto images = data::load_images(fc.hr_dir);

    std::optional<model::MrenModelf> m;
    train::FitState state;
    if (!a.resume.empty()) {
        auto rp = train::trainer_from_checkpoint(ckpt::load_checkpoint(a.resume));
        if (!rp.has_optimizer)
            throw UsageError("checkpoint '" + a.resume + "' carries no optimizer state");
        m.emplace(std::move(rp.model));
        state = std::move(rp.state);
        std::cout << "resuming from '" << a.resume << "' at epoch " << state.start_epoch << "\n";
    } else {
        m.emplace(fc.model);
    }

    const auto log = train::fit(*m, images, fc.train, a.out, std::move(state), &std::cout);
    std::cout << "wrote " << log.rows.size() << " log rows and checkpoints to '" << a.out << "'\n";
    return 0;
}

struct InferArgs {
    std::string model;
    std::string input;
    std::string output;
};

int run_infer(const InferArgs& a) {
    auto m = train::model_from_checkpoint(ckpt::load_checkpoint(a.model));
    const auto in = image::load_png(a.input);
    const auto sr = m.forward_eval(image::image_to_tensor<float>(in));
    const auto out = image::tensor_to_image(sr);
    image::save_png(out, a.output);
    std::cout << "wrote '" << a.output << "' (" << out.width << "x" << out.height << ", x"
              << m.config().scale << ")\n";
    return 0;
}

struct EvalArgs {
    std::string model;
    std::string hr_dir;
    std::string csv;
    int scale = 4;
    bool has_scale = false;
    bool cache_lr = false;
};

int run_eval(const EvalArgs& a) {
    std::optional<model::MrenModelf> m;
    int scale = a.scale;
    if (a.model != "bicubic") {
        m.emplace(train::model_from_checkpoint(ckpt::load_checkpoint(a.model)));
        if (a.has_scale && a.scale != m->config().scale)
            throw UsageError("--scale disagrees with the checkpoint's scale");
        scale = m->config().scale;
    }

    const auto report = train::evaluate(m ? &*m : nullptr, a.hr_dir, scale, a.cache_lr);

    analysis::Table t;
    t.header = {"image", "psnr_db", "ssim"};
    for (const auto& r : report.rows)
        t.rows.push_back({r.name, analysis::format_psnr(r.psnr), analysis::format_ssim(r.ssim)});
    t.rows.push_back({"mean", analysis::format_psnr(report.mean_psnr),
                      analysis::format_ssim(report.mean_ssim)});
    std::cout << (a.model == "bicubic" ? "bicubic baseline" : "model '" + a.model + "'") << ", x"
              << scale << ", " << report.rows.size() << " images\n"
              << analysis::table_text(t);
    if (!a.csv.empty()) {
        std::ofstream f(a.csv, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open '" + a.csv + "' for writing");
        f << analysis::table_csv(t);
    }
    return 0;
}

struct AnalyzeArgs {
    std::string config;
    std::string resolution = "1280x720";
    std::string convention = "mac";
};

std::pair<int, int> parse_resolution(const std::string& s) {
    int w = 0, h = 0;
    char extra = 0;
    if (std::sscanf(s.c_str(), "%dx%d%c", &w, &h, &extra) != 2 || w < 1 || h < 1)
        throw UsageError("bad --resolution '" + s + "' (expected WxH)");
    return {w, h};
}

std::string delta_vs(double value, double reference) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%+.1f%%", 100.0 * (value - reference) / reference);
    return buf;
}

int run_analyze(const AnalyzeArgs& a) {
    const FileConfig fc = a.config.empty() ? FileConfig{} : load_file_config(a.config);
    const model::ModelConfig cfg = fc.model;
    cfg.validate();
    const auto [out_w, out_h] = parse_resolution(a.resolution);
    const auto convention = analysis::convention_from_string(a.convention);

    const model::MrenModelf m(cfg);
    const auto params = analysis::count_params(m);

    std::cout << "config: scale x" << cfg.scale << ", " << cfg.n_mreb << " MREB, base "
              << cfg.base_channels << ", branch " << cfg.branch_channels << ", distill "
              << cfg.distill_channels << ", w " << cfg.w_comm << ", variant "
              << model::to_string(cfg.variant) << "\n\n";

    analysis::Table blocks;
    blocks.header = {"block", "params"};
    for (const auto& b : params.blocks)
        blocks.rows.push_back({b.name, analysis::format_count(b.count)});
    std::cout << blocks.rows.size() << " blocks\n" << analysis::table_text(blocks) << "\n";

    std::cout << "total parameters: " << params.total << " ("
              << analysis::human_count(static_cast<double>(params.total))
              << "); design target 298K, delta "
              << delta_vs(static_cast<double>(params.total), 298e3) << "\n";
    if (params.per_mreb > 0)
        std::cout << "per-MREB subtotal: " << params.per_mreb << " ("
                  << analysis::human_count(static_cast<double>(params.per_mreb))
                  << "); design target 34K, delta "
                  << delta_vs(static_cast<double>(params.per_mreb), 34e3) << "\n";
    std::cout << "\n";

    analysis::Table sweep;
    sweep.header = {"n_mreb", "params", "human", "increment"};
    std::int64_t prev = 0;
    for (int n = 3; n <= 8; ++n) {
        const auto vcfg = analysis::build_variant(cfg, {analysis::Axis::n_mreb, std::to_string(n)});
        const model::MrenModelf vm(vcfg);
        const auto total = analysis::count_params(vm).total;
        sweep.rows.push_back({std::to_string(n), analysis::format_count(total),
                              analysis::human_count(static_cast<double>(total)),
                              n == 3 ? "-" : analysis::format_count(total - prev)});
        prev = total;
    }
    std::cout << "MREB count sweep\n" << analysis::table_text(sweep) << "\n";

    auto variant_table = [&cfg](analysis::Axis axis, const std::vector<std::string>& values) {
        analysis::Table t;
        t.header = {to_string(axis), "params", "human"};
        for (const auto& v : values) {
            const auto vcfg = analysis::build_variant(cfg, {axis, v});
            const model::MrenModelf vm(vcfg);
            const auto total = analysis::count_params(vm).total;
            t.rows.push_back({v, analysis::format_count(total),
                              analysis::human_count(static_cast<double>(total))});
        }
        return t;
    };
    std::cout << "SCACB variants\n"
              << analysis::table_text(
                     variant_table(analysis::Axis::scacb_variant, {"osa", "oca", "scnc", "full"}))
              << "\n";
    std::cout << "DRACB variants\n"
              << analysis::table_text(variant_table(
                     analysis::Axis::dracb_variant,
                     {"distill_only", "distill_sigmoid", "distill_skip", "full"}))
              << "\n";

    const auto flops = analysis::estimate_flops(cfg, out_w, out_h, convention);
    std::cout << "FLOPs estimate at " << out_w << "x" << out_h << " output, convention "
              << analysis::to_string(convention)
              << (convention == analysis::FlopsConvention::mac
                      ? " (1 op per MAC and per element-wise element)\n"
                      : " (2 ops per MAC and per element-wise element)\n");

    analysis::Table ft;
    ft.header = {"block", "ops", "human"};
    auto block_of = [](const std::string& name) {
        const auto first = name.find('.');
        if (first == std::string::npos) return name;
        const auto head = name.substr(0, first);
        if (head != "mreb" && head != "rbwa") return head;
        const auto second = name.find('.', first + 1);
        return second == std::string::npos ? name : name.substr(0, second);
    };
    std::vector<analysis::FlopsRow> rolled;
    for (const auto& r : flops.conv_rows) {
        const auto key = block_of(r.name);
        if (!rolled.empty() && rolled.back().name == key) rolled.back().ops += r.ops;
        else rolled.push_back({key, r.ops});
    }
    for (const auto& r : rolled)
        ft.rows.push_back({r.name, analysis::format_count(static_cast<std::int64_t>(r.ops)),
                           analysis::human_count(static_cast<double>(r.ops))});
    for (const auto& r : flops.eltwise_rows)
        ft.rows.push_back({"eltwise:" + r.name,
                           analysis::format_count(static_cast<std::int64_t>(r.ops)),
                           analysis::human_count(static_cast<double>(r.ops))});
    ft.rows.push_back({"total", analysis::format_count(static_cast<std::int64_t>(flops.total)),
                       analysis::human_count(static_cast<double>(flops.total))});
    std::cout << analysis::table_text(ft) << "\n";

    // informational cross-check against the published x2 figure; the counting
    // convention behind it is unspecified, so no tolerance is claimed
    auto x2 = cfg;
    x2.scale = 2;
    const auto ref = analysis::estimate_flops(x2, 1280, 720, analysis::FlopsConvention::mac);
    std::cout << "x2 config at 1280x720, mac convention: "
              << analysis::human_count(static_cast<double>(ref.total))
              << "; design target 23.8G (convention unspecified, informational only)\n";
    return 0;
}

struct AblateArgs {
    std::string axis;
    std::vector<std::string> values;
    std::string data_dir;
    std::string config;
    std::string csv;
    int budget_iters = 10;
    int scale = 0;
    std::uint64_t seed = 0;
    bool has_scale = false;
};

int run_ablate(AblateArgs a) {
    if (a.budget_iters < 1) throw UsageError("--budget-iters must be >= 1");
    const auto axis = analysis::axis_from_string(a.axis);
    if (a.values.empty()) a.values = analysis::axis_default_values(axis);

    FileConfig fc = a.config.empty() ? FileConfig{} : load_file_config(a.config);
    if (a.has_scale) fc.model.scale = a.scale;
    fc.model.validate();

    const auto images = data::load_images(a.data_dir);

    // desk-scale budget: small batches and patches, default schedule
    train::TrainConfig tc = fc.train;
    tc.batch = 2;
    tc.patch = 48;
    tc.total_epochs = 1;
    tc.iterations_per_epoch = a.budget_iters;
    tc.seed = a.seed;
    tc.validate();

    analysis::Table t;
    t.header = {to_string(axis), "params", "final_loss"};
    for (const auto& value : a.values) {
        const auto vcfg = analysis::build_variant(fc.model, {axis, value});
        model::MrenModelf m(vcfg, a.seed);

        std::vector<data::NamedImage> usable;
        for (const auto& im : images) {
            const int cw = im.img.width / vcfg.scale * vcfg.scale;
            const int ch = im.img.height / vcfg.scale * vcfg.scale;
            if (cw >= tc.patch && ch >= tc.patch) usable.push_back(im);
        }
        if (usable.empty()) throw IoError("no image in '" + a.data_dir + "' fits the patch size");

        Rng rng(a.seed);
        train::AdamState adam;
        adam.init(m.params());
        std::vector<float> losses;
        for (int it = 0; it < a.budget_iters; ++it) {
            auto batch = data::sample_patches(usable, vcfg.scale, tc.patch, tc.batch, rng);
            data::augment(batch, rng);
            losses.push_back(train::train_step(m, batch, adam, train::lr_at(0, tc), tc));
        }
        const int window = std::min<int>(5, static_cast<int>(losses.size()));
        double final_loss = 0.0;
        for (int k = 0; k < window; ++k) final_loss += losses[losses.size() - 1 - k];
        final_loss /= window;

        const auto params = analysis::count_params(m).total;
        t.rows.push_back({value, analysis::format_count(params),
                          analysis::format_ssim(final_loss)}); // 4 decimals suits losses too
        std::cout << to_string(axis) << "=" << value << ": params " << params << ", final loss "
                  << analysis::format_ssim(final_loss) << " (" << a.budget_iters << " iters)\n";
    }

    std::cout << "\n" << analysis::table_text(t);
    if (!a.csv.empty()) {
        std::ofstream f(a.csv, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open '" + a.csv + "' for writing");
        f << analysis::table_csv(t);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"MREN lightweight super-resolution toolkit"};
    app.require_subcommand(1);

    TrainArgs ta;
    auto* train_cmd = app.add_subcommand("train", "Train a model");
    train_cmd->add_option("--config", ta.config, "JSON config file (model/train/data sections)");
    train_cmd->add_option("--data-dir", ta.data_dir, "Directory of HR training PNGs");
    auto* ts = train_cmd->add_option("--scale", ta.scale, "Upscaling factor")
                   ->check(CLI::IsMember({2, 3, 4}));
    train_cmd->add_option("--out", ta.out, "Output directory for checkpoints and logs")
        ->required();
    auto* tseed = train_cmd->add_option("--seed", ta.seed, "Seed for init and sampling");
    train_cmd->add_option("--resume", ta.resume, "Checkpoint to continue from");

    InferArgs ia;
    auto* infer_cmd = app.add_subcommand("infer", "Upscale one image");
    infer_cmd->add_option("--model", ia.model, "Checkpoint file")->required();
    infer_cmd->add_option("--input", ia.input, "Input PNG")->required();
    infer_cmd->add_option("--output", ia.output, "Output PNG")->required();

    EvalArgs ea;
    auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM over a directory");
    eval_cmd->add_option("--model", ea.model, "Checkpoint file, or 'bicubic' for the baseline")
        ->required();
    eval_cmd->add_option("--hr-dir", ea.hr_dir, "Directory of HR PNGs")->required();
    eval_cmd->add_option("--csv", ea.csv, "Also write the table as CSV");
    auto* es = eval_cmd->add_option("--scale", ea.scale, "Scale for the bicubic baseline")
                   ->check(CLI::IsMember({2, 3, 4}));
    eval_cmd->add_flag("--cache-lr", ea.cache_lr, "Cache degraded LR images next to the HR set");

    AnalyzeArgs aa;
    auto* analyze_cmd = app.add_subcommand("analyze", "Parameter and FLOPs accounting");
    analyze_cmd->add_option("--config", aa.config, "JSON config file");
    analyze_cmd->add_option("--resolution", aa.resolution, "Output size for FLOPs, WxH")
        ->capture_default_str();
    analyze_cmd->add_option("--convention", aa.convention, "mac|mac2")
        ->check(CLI::IsMember({"mac", "mac2"}))
        ->capture_default_str();

    AblateArgs ba;
    auto* ablate_cmd = app.add_subcommand("ablate", "Short training runs across one axis");
    ablate_cmd->add_option("--axis", ba.axis, "mreb|w|scacb|dracb")->required();
    ablate_cmd->add_option("--values", ba.values, "Comma-separated axis values (default: full domain)")
        ->delimiter(',');
    ablate_cmd->add_option("--data-dir", ba.data_dir, "Directory of HR training PNGs")
        ->required();
    ablate_cmd->add_option("--config", ba.config, "JSON config file for the base model");
    ablate_cmd->add_option("--csv", ba.csv, "Also write the table as CSV");
    ablate_cmd->add_option("--budget-iters", ba.budget_iters, "Optimizer steps per variant")
        ->capture_default_str();
    auto* bs = ablate_cmd->add_option("--scale", ba.scale, "Upscaling factor")
                   ->check(CLI::IsMember({2, 3, 4}));
    ablate_cmd->add_option("--seed", ba.seed, "Seed for init and sampling")
        ->capture_default_str();

    int rc = 0;
    train_cmd->callback([&] {
        ta.has_scale = ts->count() > 0;
        ta.has_seed = tseed->count() > 0;
        rc = run_train(ta);
    });
    infer_cmd->callback([&] { rc = run_infer(ia); });
    eval_cmd->callback([&] {
        ea.has_scale = es->count() > 0;
        rc = run_eval(ea);
    });
    analyze_cmd->callback([&] { rc = run_analyze(aa); });
    ablate_cmd->callback([&] {
        ba.has_scale = bs->count() > 0;
        rc = run_ablate(ba);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const IntegrityError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 2;
    }
    return rc;
}
