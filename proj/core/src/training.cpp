#include "mren/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <unordered_map>

#include <json.hpp>

#include "mren/error.hpp"
#include "mren/metrics.hpp"
#include "mren/ops.hpp"

namespace mren::train {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
    if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw ConfigError("lr0 must be positive");
    if (decay_period < 1) throw ConfigError("decay_period must be >= 1");
    if (!(decay_factor > 0.0) || decay_factor > 1.0)
        throw ConfigError("decay_factor must be in (0, 1]");
    if (total_epochs < 1) throw ConfigError("total_epochs must be >= 1");
    if (iterations_per_epoch < 1) throw ConfigError("iterations_per_epoch must be >= 1");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (patch < 1) throw ConfigError("patch must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must be in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must be in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("eps must be positive");
}

std::string TrainConfig::to_json_text() const {
    json j;
    j["lr0"] = lr0;
    j["decay_period"] = decay_period;
    j["decay_factor"] = decay_factor;
    j["total_epochs"] = total_epochs;
    j["iterations_per_epoch"] = iterations_per_epoch;
    j["batch"] = batch;
    j["patch"] = patch;
    j["beta1"] = beta1;
    j["beta2"] = beta2;
    j["eps"] = eps;
    j["seed"] = seed;
    return j.dump();
}

TrainConfig TrainConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid training config JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("training config must be a JSON object");
    TrainConfig cfg;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "lr0") cfg.lr0 = value.get<double>();
            else if (key == "decay_period") cfg.decay_period = value.get<int>();
            else if (key == "decay_factor") cfg.decay_factor = value.get<double>();
            else if (key == "total_epochs") cfg.total_epochs = value.get<int>();
            else if (key == "iterations_per_epoch") cfg.iterations_per_epoch = value.get<int>();
            else if (key == "batch") cfg.batch = value.get<int>();
            else if (key == "patch") cfg.patch = value.get<int>();
            else if (key == "beta1") cfg.beta1 = value.get<double>();
            else if (key == "beta2") cfg.beta2 = value.get<double>();
            else if (key == "eps") cfg.eps = value.get<double>();
            else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
            else throw ConfigError("unknown training config key '" + key + "'");
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad training config value: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

double lr_at(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw UsageError("epoch must be non-negative");
    const int halvings = epoch / cfg.decay_period;
    return cfg.lr0 * std::pow(cfg.decay_factor, halvings);
}

void AdamState::init(const ParamStore<float>& params) {
    moments_.clear();
    step_ = 0;
    for (const auto& p : params)
        moments_.push_back({p.name, Tensor4f(p.value.dims(), 0.0f), Tensor4f(p.value.dims(), 0.0f)});
}

void AdamState::load_moment(const std::string& name, const Tensor4f& m, const Tensor4f& v) {
    for (auto& mo : moments_) {
        if (mo.name != name) continue;
        if (!(m.dims() == mo.m.dims()) || !(v.dims() == mo.v.dims()))
            throw IntegrityError("optimizer moment shape mismatch for '" + name + "'");
        mo.m = m;
        mo.v = v;
        return;
    }
    throw IntegrityError("optimizer moment for unknown parameter '" + name + "'");
}

void AdamState::apply(ParamStore<float>& params, double lr, const TrainConfig& cfg) {
    if (moments_.size() != params.size())
        throw UsageError("optimizer state does not match the parameter set");
    ++step_;
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    std::size_t i = 0;
    for (auto& p : params) {
        auto& mo = moments_[i++];
        if (mo.name != p.name)
            throw UsageError("optimizer state does not match the parameter set");
        if (!p.grad_valid)
            throw UsageError("missing gradient for parameter '" + p.name + "'");
        float* w = p.value.data();
        const float* g = p.grad.data();
        float* m = mo.m.data();
        float* v = mo.v.data();
        const std::int64_t n = p.value.count();
        for (std::int64_t k = 0; k < n; ++k) {
            const double gk = g[k];
            const double mk = b1 * m[k] + (1.0 - b1) * gk;
            const double vk = b2 * v[k] + (1.0 - b2) * gk * gk;
            m[k] = static_cast<float>(mk);
            v[k] = static_cast<float>(vk);
            const double mhat = mk / bc1;
            const double vhat = vk / bc2;
            w[k] = static_cast<float>(w[k] - lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

float train_step(model::MrenModelf& m, const data::PatchBatch& batch, AdamState& adam,
                 double lr, const TrainConfig& cfg) {
    m.params().zero_grads();
    autograd::Tape<float> tape;
    auto pred = m.forward(&tape, autograd::make_value(Tensor4f(batch.lr)));
    auto loss = autograd::l1_loss(pred, autograd::make_value(Tensor4f(batch.hr)));
    const float value = loss.t().data()[0];
    if (!std::isfinite(value)) throw NumericError("training loss is not finite");
    tape.backward(loss);
    adam.apply(m.params(), lr, cfg);
    return value;
}

std::string TrainLog::to_csv() const {
    std::string out = "iteration,epoch,lr,loss,seconds\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%lld,%d,%.10g,%.8g,%.3f\n",
                      static_cast<long long>(r.iteration), r.epoch, r.lr,
                      static_cast<double>(r.loss), r.seconds);
        out += buf;
    }
    return out;
}

namespace {

void write_text_atomic(const std::string& path, const std::string& text) {
    const fs::path target(path);
    const fs::path tmp = target.parent_path() / (target.filename().string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open '" + tmp.string() + "' for writing");
        f << text;
        f.flush();
        if (!f) throw IoError("write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) throw IoError("cannot rename '" + tmp.string() + "': " + ec.message());
}

std::string epoch_checkpoint_name(int epoch) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "ckpt_epoch_%04d.mren", epoch);
    return buf;
}

} // namespace

TrainLog fit(model::MrenModelf& m, const std::vector<data::NamedImage>& images,
             const TrainConfig& cfg, const std::string& out_dir, FitState state,
             std::ostream* progress) {
    cfg.validate();
    const int scale = m.config().scale;
    if (cfg.patch % scale != 0) throw UsageError("patch size must be divisible by the scale");

    // Filter undersized images once so per-iteration sampling never warns.
    std::vector<data::NamedImage> usable;
    for (const auto& im : images) {
        const int cw = im.img.width / scale * scale;
        const int ch = im.img.height / scale * scale;
        if (cw >= cfg.patch && ch >= cfg.patch) usable.push_back(im);
    }
    if (usable.empty()) throw IoError("no training image is large enough for the patch size");

    fs::create_directories(out_dir);
    Rng rng(cfg.seed);
    if (!state.rng_state.empty()) rng.load_state(state.rng_state);
    if (!state.adam.initialized()) state.adam.init(m.params());

    TrainLog log;
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&t0] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    for (int epoch = state.start_epoch; epoch < cfg.total_epochs; ++epoch) {
        const double lr = lr_at(epoch, cfg);
        double epoch_loss = 0.0;
        for (int it = 0; it < cfg.iterations_per_epoch; ++it) {
            auto batch = data::sample_patches(usable, scale, cfg.patch, cfg.batch, rng);
            data::augment(batch, rng);
            const float loss = train_step(m, batch, state.adam, lr, cfg);
            epoch_loss += loss;
            const std::int64_t iter =
                static_cast<std::int64_t>(epoch) * cfg.iterations_per_epoch + it;
            log.rows.push_back({iter, epoch, lr, loss, elapsed()});
        }
        const auto ck = make_checkpoint(m, epoch + 1, &state.adam, rng.save_state());
        ckpt::save_checkpoint((fs::path(out_dir) / epoch_checkpoint_name(epoch + 1)).string(), ck);
        write_text_atomic((fs::path(out_dir) / "train_log.csv").string(), log.to_csv());
        if (progress) {
            char buf[160];
            std::snprintf(buf, sizeof(buf), "epoch %d/%d  lr %.3g  loss %.6f  (%.1fs)\n",
                          epoch + 1, cfg.total_epochs, lr,
                          epoch_loss / cfg.iterations_per_epoch, elapsed());
            *progress << buf << std::flush;
        }
    }

    const auto final_ck = make_checkpoint(m, cfg.total_epochs, &state.adam, rng.save_state());
    ckpt::save_checkpoint((fs::path(out_dir) / "model_final.mren").string(), final_ck);
    return log;
}

ckpt::Checkpoint make_checkpoint(const model::MrenModelf& m, int next_epoch,
                                 const AdamState* adam, const std::string& rng_state) {
    json j;
    j["model"] = json::parse(m.config().to_json_text());
    j["epoch"] = next_epoch;
    j["has_optimizer"] = adam != nullptr;
    j["adam_step"] = adam ? adam->step() : 0;
    j["rng"] = rng_state;

    ckpt::Checkpoint c;
    c.config_json = j.dump();
    for (const auto& p : m.params()) c.tensors.emplace_back(p.name, p.value);
    if (adam) {
        for (const auto& mo : adam->moments()) {
            c.tensors.emplace_back("adam.m." + mo.name, mo.m);
            c.tensors.emplace_back("adam.v." + mo.name, mo.v);
        }
    }
    return c;
}

namespace {

json parse_ckpt_config(const ckpt::Checkpoint& c) {
    json j;
    try {
        j = json::parse(c.config_json);
    } catch (const json::exception& e) {
        throw IntegrityError(std::string("corrupt checkpoint config: ") + e.what());
    }
    if (!j.is_object() || !j.contains("model"))
        throw IntegrityError("checkpoint config lacks a model section");
    return j;
}

} // namespace

model::MrenModelf model_from_checkpoint(const ckpt::Checkpoint& c) {
    const json j = parse_ckpt_config(c);
    const auto cfg = model::ModelConfig::from_json_text(j.at("model").dump());
    model::MrenModelf m(cfg);

    std::unordered_map<std::string, const Tensor4f*> by_name;
    for (const auto& [name, t] : c.tensors) {
        if (!by_name.emplace(name, &t).second)
            throw IntegrityError("duplicate tensor '" + name + "' in checkpoint");
    }
    std::size_t used = 0;
    for (auto& p : m.params()) {
        auto it = by_name.find(p.name);
        if (it == by_name.end())
            throw IntegrityError("checkpoint is missing parameter '" + p.name + "'");
        if (!(it->second->dims() == p.value.dims()))
            throw IntegrityError("checkpoint parameter '" + p.name + "' has the wrong shape");
        p.value = *it->second;
        ++used;
    }
    for (const auto& [name, t] : c.tensors) {
        (void)t;
        if (name.rfind("adam.", 0) == 0) continue;
        if (!m.params().find(name))
            throw IntegrityError("checkpoint contains unknown tensor '" + name + "'");
    }
    (void)used;
    return m;
}

ResumePoint trainer_from_checkpoint(const ckpt::Checkpoint& c) {
    const json j = parse_ckpt_config(c);
    ResumePoint rp{model_from_checkpoint(c), {}, false};
    try {
        if (j.contains("epoch")) rp.state.start_epoch = j.at("epoch").get<int>();
        if (j.contains("rng")) rp.state.rng_state = j.at("rng").get<std::string>();
        if (j.contains("has_optimizer")) rp.has_optimizer = j.at("has_optimizer").get<bool>();
    } catch (const json::exception& e) {
        throw IntegrityError(std::string("corrupt checkpoint config: ") + e.what());
    }
    if (!rp.has_optimizer) return rp;

    rp.state.adam.init(rp.model.params());
    std::unordered_map<std::string, const Tensor4f*> by_name;
    for (const auto& [name, t] : c.tensors) by_name.emplace(name, &t);
    for (const auto& p : rp.model.params()) {
        auto mi = by_name.find("adam.m." + p.name);
        auto vi = by_name.find("adam.v." + p.name);
        if (mi == by_name.end() || vi == by_name.end())
            throw IntegrityError("checkpoint is missing optimizer state for '" + p.name + "'");
        rp.state.adam.load_moment(p.name, *mi->second, *vi->second);
    }
    try {
        rp.state.adam.set_step(j.at("adam_step").get<std::int64_t>());
    } catch (const json::exception& e) {
        throw IntegrityError(std::string("corrupt checkpoint config: ") + e.what());
    }
    return rp;
}

EvalReport evaluate(model::MrenModelf* m, const std::string& hr_dir, int scale, bool cache_lr) {
    if (scale < 1) throw UsageError("scale must be >= 1");
    if (m && m->config().scale != scale)
        throw UsageError("model scale does not match the requested scale");

    const auto paths = data::list_images(hr_dir);
    if (paths.empty()) throw IoError("no .png images in '" + hr_dir + "'");
    const fs::path cache_dir = fs::path(hr_dir) / ("LRx" + std::to_string(scale));

    EvalReport report;
    for (const auto& path : paths) {
        const std::string name = fs::path(path).filename().string();
        const auto hr = image::crop_to_multiple(image::load_png(path), scale);

        image::ImageRGB lr;
        const fs::path cached = cache_dir / name;
        if (cache_lr && fs::exists(cached)) {
            lr = image::load_png(cached.string());
            if (lr.width != hr.width / scale || lr.height != hr.height / scale)
                throw IntegrityError("cached LR image '" + cached.string() +
                                     "' does not match its source size");
        } else {
            lr = image::degrade(hr, scale);
            if (cache_lr) {
                fs::create_directories(cache_dir);
                image::save_png(lr, cached.string());
            }
        }

        const auto lr_t = image::image_to_tensor<float>(lr);
        const Tensor4f sr_t =
            m ? m->forward_eval(lr_t) : ops::resize_up(ops::ResizeKind::bicubic, lr_t, scale);
        const auto sr = image::tensor_to_image(sr_t);
        report.rows.push_back(
            {name, metrics::psnr_y(sr, hr, scale), metrics::ssim_y(sr, hr, scale)});
    }
    for (const auto& r : report.rows) {
        report.mean_psnr += r.psnr;
        report.mean_ssim += r.ssim;
    }
    report.mean_psnr /= static_cast<double>(report.rows.size());
    report.mean_ssim /= static_cast<double>(report.rows.size());
    return report;
}

} // namespace mren::train
