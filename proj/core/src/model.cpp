#include "mren/model.hpp"

#include <cmath>

#include <json.hpp>

#include "mren/error.hpp"
#include "mren/rng.hpp"

namespace mren::model {

namespace ag = mren::autograd;
using nlohmann::json;

Variant variant_from_string(const std::string& s) {
    if (s == "full") return Variant::full;
    if (s == "osa") return Variant::osa;
    if (s == "oca") return Variant::oca;
    if (s == "scnc") return Variant::scnc;
    if (s == "distill_only") return Variant::distill_only;
    if (s == "distill_sigmoid") return Variant::distill_sigmoid;
    if (s == "distill_skip") return Variant::distill_skip;
    throw ConfigError("unknown variant '" + s +
                      "' (expected full|osa|oca|scnc|distill_only|distill_sigmoid|distill_skip)");
}

std::string to_string(Variant v) {
    switch (v) {
    case Variant::full: return "full";
    case Variant::osa: return "osa";
    case Variant::oca: return "oca";
    case Variant::scnc: return "scnc";
    case Variant::distill_only: return "distill_only";
    case Variant::distill_sigmoid: return "distill_sigmoid";
    case Variant::distill_skip: return "distill_skip";
    }
    throw ConfigError("invalid variant value");
}

std::vector<int> ModelConfig::rbwa_scales() const {
    if (scale == 4) return {2, 2};
    return {scale};
}

void ModelConfig::validate() const {
    if (scale != 2 && scale != 3 && scale != 4) {
        throw ConfigError("scale must be 2, 3 or 4, got " + std::to_string(scale));
    }
    if (n_mreb < 1) throw ConfigError("n_mreb must be >= 1, got " + std::to_string(n_mreb));
    if (base_channels < 1 || branch_channels < 1 || distill_channels < 1 || wsilbv_ratio < 1) {
        throw ConfigError("channel widths and wsilbv_ratio must be positive");
    }
    if (branch_channels >= base_channels) {
        throw ConfigError("branch_channels (" + std::to_string(branch_channels) +
                          ") must be < base_channels (" + std::to_string(base_channels) + ")");
    }
    if (distill_channels >= base_channels) {
        throw ConfigError("distill_channels (" + std::to_string(distill_channels) +
                          ") must be < base_channels (" + std::to_string(base_channels) + ")");
    }
    if (!(w_comm >= 0.0 && w_comm <= 1.0)) {
        throw ConfigError("w_comm must be a finite value in [0,1]");
    }
    if (base_channels % wsilbv_ratio != 0) {
        throw ConfigError("base_channels (" + std::to_string(base_channels) +
                          ") must be divisible by wsilbv_ratio (" + std::to_string(wsilbv_ratio) +
                          ")");
    }
}

std::string ModelConfig::to_json_text() const {
    json j;
    j["scale"] = scale;
    j["n_mreb"] = n_mreb;
    j["base_channels"] = base_channels;
    j["branch_channels"] = branch_channels;
    j["distill_channels"] = distill_channels;
    j["w_comm"] = w_comm;
    j["wsilbv_ratio"] = wsilbv_ratio;
    j["variant"] = to_string(variant);
    j["rng_seed"] = rng_seed;
    return j.dump();
}

ModelConfig ModelConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
    ModelConfig cfg;
    try {
        for (const auto& [key, val] : j.items()) {
            if (key == "scale") cfg.scale = val.get<int>();
            else if (key == "n_mreb") cfg.n_mreb = val.get<int>();
            else if (key == "base_channels") cfg.base_channels = val.get<int>();
            else if (key == "branch_channels") cfg.branch_channels = val.get<int>();
            else if (key == "distill_channels") cfg.distill_channels = val.get<int>();
            else if (key == "w_comm") cfg.w_comm = val.get<double>();
            else if (key == "wsilbv_ratio") cfg.wsilbv_ratio = val.get<int>();
            else if (key == "variant") cfg.variant = variant_from_string(val.get<std::string>());
            else if (key == "rng_seed") cfg.rng_seed = val.get<std::uint64_t>();
            else throw ConfigError("unknown model config key '" + key + "'");
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad model config value: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

namespace {

// Collects the conv/eltwise inventory while the block metadata is built, so
// construction is the single source of truth for accounting.
struct Builder {
    const ModelConfig& cfg;
    std::vector<LayerDesc>& layers;
    std::vector<EltwiseDesc>& eltwise;
    int sf = 1; // current spatial factor relative to LR

    ConvRef conv(const std::string& name, std::int64_t in_c, std::int64_t out_c, int k,
                 std::int64_t groups = 1, bool unit = false) {
        ConvSpec spec;
        spec.in_channels = in_c;
        spec.out_channels = out_c;
        spec.kh = k;
        spec.kw = k;
        spec.groups = groups;
        spec.validate();
        layers.push_back(LayerDesc{name, spec, sf, unit});
        return ConvRef{name, spec};
    }

    void op(const std::string& kind, std::int64_t channels, bool unit = false) {
        eltwise.push_back(EltwiseDesc{kind, channels, sf, unit});
    }

    WsilbvMeta wsilbv(const std::string& prefix, std::int64_t channels) {
        WsilbvMeta m;
        const std::int64_t mid = channels / cfg.wsilbv_ratio;
        op("global_avg_pool", channels);
        m.reduce = conv(prefix + ".reduce", channels, mid, 1, 1, true);
        op("gelu", mid, true);
        m.expand = conv(prefix + ".expand", mid, channels, 1, 1, true);
        op("sigmoid", channels, true);
        op("mul", channels);
        op("add", channels);
        return m;
    }

    DracbMeta dracb(const std::string& prefix, bool first) {
        DracbMeta m;
        m.first = first;
        m.distill = conv(prefix + ".distill", cfg.base_channels, cfg.distill_channels, 1);
        const Variant v = cfg.variant;
        const bool fuse_prev =
            !first && (v != Variant::distill_only && v != Variant::distill_sigmoid);
        const bool gated = (v != Variant::distill_only && v != Variant::distill_skip);
        if (fuse_prev) op("axpy", cfg.distill_channels);
        if (gated) {
            op("sigmoid", cfg.distill_channels);
            op("mul", cfg.distill_channels);
        }
        return m;
    }

    ScacbMeta scacb(const std::string& prefix) {
        ScacbMeta m;
        const Variant v = cfg.variant;
        m.variant = (v == Variant::osa || v == Variant::oca || v == Variant::scnc)
                        ? v
                        : Variant::full;
        const std::int64_t base = cfg.base_channels;
        const bool single_part = (m.variant == Variant::osa || m.variant == Variant::oca);
        const std::int64_t b = single_part ? 2 * cfg.branch_channels : cfg.branch_channels;
        const int kernels[3] = {1, 3, 5};

        m.compress = conv(prefix + ".compress", base, b, 1);
        op("gelu", b);
        if (m.variant != Variant::osa) {
            for (int k : kernels) {
                m.ch_stages.push_back(conv(prefix + ".ch" + std::to_string(k), b, b, k));
            }
        }
        if (m.variant != Variant::oca) {
            for (int k : kernels) {
                m.sp_stages.push_back(conv(prefix + ".sp" + std::to_string(k), b, b, k, b));
            }
        }
        if (m.variant == Variant::full) op("add", 2 * b); // two cross-part sums
        if (!m.ch_stages.empty()) m.ch_fuse = conv(prefix + ".ch_fuse", 3 * b, b, 1);
        if (!m.sp_stages.empty()) m.sp_fuse = conv(prefix + ".sp_fuse", 3 * b, b, 1);
        const std::int64_t fused = single_part ? b : 2 * b;
        m.restore = conv(prefix + ".restore", fused, base, 1);
        op("add", base); // residual
        return m;
    }

    MrebMeta mreb(const std::string& prefix) {
        MrebMeta m;
        for (int j = 0; j < 3; ++j) {
            m.dracbs.push_back(dracb(prefix + ".dracb." + std::to_string(j), j == 0));
            m.scacbs.push_back(scacb(prefix + ".scacb." + std::to_string(j)));
        }
        m.dracbs.push_back(dracb(prefix + ".dracb.3", false));
        m.fuse = conv(prefix + ".fuse", 4 * cfg.distill_channels, cfg.base_channels, 1);
        m.wsilbv = wsilbv(prefix + ".wsilbv", cfg.base_channels);
        op("add", cfg.base_channels); // residual
        return m;
    }

    RbwaMeta rbwa(const std::string& prefix, int stage_scale) {
        RbwaMeta m;
        m.stage_scale = stage_scale;
        sf *= stage_scale * stage_scale;
        op("resize_bilinear", cfg.base_channels);
        m.conv = conv(prefix + ".conv", cfg.base_channels, cfg.base_channels, 3);
        op("gelu", cfg.base_channels);
        m.wsilbv = wsilbv(prefix + ".wsilbv", cfg.base_channels);
        m.compress = conv(prefix + ".compress", cfg.base_channels, cfg.base_channels, 1);
        return m;
    }
};

} // namespace

template <class T>
MrenModel<T>::MrenModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Builder b{cfg_, layers_, eltwise_};

    head_ = b.conv("head", 3, cfg_.base_channels, 3);
    for (int i = 0; i < cfg_.n_mreb; ++i) mrebs_.push_back(b.mreb("mreb." + std::to_string(i)));
    b.op("add", cfg_.base_channels); // global residual F_n + F_0
    int k = 0;
    for (int s : cfg_.rbwa_scales()) rbwas_.push_back(b.rbwa("rbwa." + std::to_string(k++), s));
    tail_ = b.conv("tail", cfg_.base_channels, 3, 3);
    b.op("resize_bicubic", 3);
    b.op("add", 3);

    Rng rng(seed);
    for (const LayerDesc& layer : layers_) {
        const Dims4 wd = layer.spec.weight_dims();
        const double fan_in =
            static_cast<double>(layer.spec.in_channels / layer.spec.groups) * layer.spec.kh *
            layer.spec.kw;
        const double bound = 1.0 / std::sqrt(fan_in);
        Tensor4<T> w(wd);
        for (std::int64_t i = 0; i < w.count(); ++i) {
            w.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
        }
        params_.add(layer.name + ".weight", std::move(w));
        params_.add(layer.name + ".bias", Tensor4<T>(layer.spec.bias_dims(), T(0)));
    }
}

template <class T>
ag::Value<T> MrenModel<T>::conv(ag::Tape<T>* tape, const ConvRef& layer, const ag::Value<T>& x) {
    ParamEntry<T>& we = params_.at(layer.name + ".weight");
    ParamEntry<T>& be = params_.at(layer.name + ".bias");
    if (tape != nullptr) {
        we.grad_valid = true;
        be.grad_valid = true;
        ag::Value<T> w = tape->leaf(we.value, &we.grad);
        ag::Value<T> bias = tape->leaf(be.value, &be.grad);
        return ag::conv2d(x, w, &bias, layer.spec);
    }
    ag::Value<T> w = ag::make_value(Tensor4<T>(we.value));
    ag::Value<T> bias = ag::make_value(Tensor4<T>(be.value));
    return ag::conv2d(x, w, &bias, layer.spec);
}

template <class T>
ag::Value<T> MrenModel<T>::wsilbv_forward(ag::Tape<T>* tape, const WsilbvMeta& meta,
                                          const ag::Value<T>& x) {
    ag::Value<T> pooled = ag::global_avg_pool(x);
    ag::Value<T> mid = ag::gelu(conv(tape, meta.reduce, pooled));
    ag::Value<T> mask = ag::sigmoid(conv(tape, meta.expand, mid));
    return ag::add(x, ag::scale_channels(x, mask));
}

template <class T>
std::pair<ag::Value<T>, std::optional<ag::Value<T>>> MrenModel<T>::dracb_forward(
    ag::Tape<T>* tape, const DracbMeta& meta, const ag::Value<T>& x,
    const std::optional<ag::Value<T>>& prev) {
    ag::Value<T> fl = conv(tape, meta.distill, x);
    switch (cfg_.variant) {
    case Variant::distill_only:
        return {fl, std::nullopt};
    case Variant::distill_sigmoid:
        return {ag::mul(fl, ag::sigmoid(fl)), std::nullopt};
    case Variant::distill_skip: {
        ag::Value<T> fused = prev ? ag::axpy(static_cast<T>(cfg_.w_comm), *prev, fl) : fl;
        return {fused, fused};
    }
    default: {
        ag::Value<T> fused = prev ? ag::axpy(static_cast<T>(cfg_.w_comm), *prev, fl) : fl;
        return {ag::mul(fused, ag::sigmoid(fused)), fused};
    }
    }
}

template <class T>
ag::Value<T> MrenModel<T>::scacb_forward(ag::Tape<T>* tape, const ScacbMeta& meta,
                                         const ag::Value<T>& x) {
    ag::Value<T> t = ag::gelu(conv(tape, meta.compress, x));
    if (meta.variant == Variant::osa || meta.variant == Variant::oca) {
        const auto& stages = meta.variant == Variant::osa ? meta.sp_stages : meta.ch_stages;
        const auto& fuse = meta.variant == Variant::osa ? *meta.sp_fuse : *meta.ch_fuse;
        std::vector<ag::Value<T>> raw;
        ag::Value<T> in = t;
        for (const ConvRef& stage : stages) {
            in = conv(tape, stage, in);
            raw.push_back(in);
        }
        ag::Value<T> fused = conv(tape, fuse, ag::concat_channels(raw));
        return ag::add(x, conv(tape, meta.restore, fused));
    }
    // full / scnc: two parts over three stages; full adds the matched-stage
    // outputs into each other before the next stage
    std::vector<ag::Value<T>> ch_raw, sp_raw;
    ag::Value<T> ch_in = t, sp_in = t;
    for (std::size_t s = 0; s < meta.ch_stages.size(); ++s) {
        ag::Value<T> c = conv(tape, meta.ch_stages[s], ch_in);
        ag::Value<T> sp = conv(tape, meta.sp_stages[s], sp_in);
        ch_raw.push_back(c);
        sp_raw.push_back(sp);
        if (s + 1 < meta.ch_stages.size()) {
            if (meta.variant == Variant::full) {
                ag::Value<T> u = ag::add(c, sp);
                ch_in = u;
                sp_in = u;
            } else { // scnc: no exchange, chains run independently
                ch_in = c;
                sp_in = sp;
            }
        }
    }
    ag::Value<T> ch_f = conv(tape, *meta.ch_fuse, ag::concat_channels(ch_raw));
    ag::Value<T> sp_f = conv(tape, *meta.sp_fuse, ag::concat_channels(sp_raw));
    ag::Value<T> both = ag::concat_channels<T>({ch_f, sp_f});
    return ag::add(x, conv(tape, meta.restore, both));
}

template <class T>
ag::Value<T> MrenModel<T>::mreb_forward(ag::Tape<T>* tape, const MrebMeta& meta,
                                        const ag::Value<T>& x) {
    std::optional<ag::Value<T>> state;
    ag::Value<T> r = x;
    std::vector<ag::Value<T>> distilled;
    for (int j = 0; j < 3; ++j) {
        auto [d, next] = dracb_forward(tape, meta.dracbs[static_cast<std::size_t>(j)], r, state);
        distilled.push_back(d);
        state = next;
        r = scacb_forward(tape, meta.scacbs[static_cast<std::size_t>(j)], r);
    }
    auto [d4, last] = dracb_forward(tape, meta.dracbs[3], r, state);
    distilled.push_back(d4);
    ag::Value<T> fused = conv(tape, meta.fuse, ag::concat_channels(distilled));
    return ag::add(x, wsilbv_forward(tape, meta.wsilbv, fused));
}

template <class T>
ag::Value<T> MrenModel<T>::rbwa_forward(ag::Tape<T>* tape, const RbwaMeta& meta,
                                        const ag::Value<T>& x) {
    ag::Value<T> up = ag::resize_up(ops::ResizeKind::bilinear, x, meta.stage_scale);
    ag::Value<T> a = ag::gelu(conv(tape, meta.conv, up));
    ag::Value<T> w = wsilbv_forward(tape, meta.wsilbv, a);
    return conv(tape, meta.compress, w);
}

template <class T>
ag::Value<T> MrenModel<T>::forward(ag::Tape<T>* tape, const ag::Value<T>& input) {
    if (input.dims().c != 3) {
        throw ShapeError("mren forward: input channel axis must be 3, got " +
                         std::to_string(input.dims().c));
    }
    ag::Value<T> f0 = conv(tape, head_, input);
    ag::Value<T> f = f0;
    for (const MrebMeta& m : mrebs_) f = mreb_forward(tape, m, f);
    ag::Value<T> g = ag::add(f, f0);
    for (const RbwaMeta& r : rbwas_) g = rbwa_forward(tape, r, g);
    ag::Value<T> residual = conv(tape, tail_, g);
    ag::Value<T> up = ag::resize_up(ops::ResizeKind::bicubic, input, cfg_.scale);
    return ag::add(residual, up);
}

template <class T>
Tensor4<T> MrenModel<T>::forward_eval(const Tensor4<T>& input) {
    ag::Value<T> out = forward(nullptr, ag::make_value(Tensor4<T>(input)));
    return Tensor4<T>(*out.data);
}

template class MrenModel<float>;
template class MrenModel<double>;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.scale = 2;
    cfg.n_mreb = 1;
    cfg.base_channels = 8;
    cfg.branch_channels = 2;
    cfg.distill_channels = 4;
    cfg.wsilbv_ratio = 4;
    return cfg;
}

// (value, sink) pairs for every parameter whose name starts with prefix.
std::vector<std::pair<Tensor4<double>*, Tensor4<double>*>> param_slots(
    MrenModel<double>& m, const std::string& prefix) {
    std::vector<std::pair<Tensor4<double>*, Tensor4<double>*>> slots;
    for (auto& e : m.params()) {
        if (e.name.rfind(prefix, 0) == 0) slots.emplace_back(&e.value, &e.grad);
    }
    return slots;
}

} // namespace

void register_grad_checks() {
    static bool done = false;
    if (done) return;
    done = true;

    ag::register_grad_check("wsilbv", [](const Dims4& d) {
        auto m = std::make_shared<MrenModel<double>>(tiny_config(), 7);
        const Dims4 xd{d.n, m->config().base_channels, d.h, d.w};
        ag::GradCheckCase c;
        c.input_dims = {xd};
        c.extra = param_slots(*m, "mreb.0.wsilbv.");
        c.context = m;
        c.forward = [m](ag::Tape<double>& tape, const std::vector<ag::Value<double>>& in) {
            return m->wsilbv_forward(&tape, m->mrebs()[0].wsilbv, in[0]);
        };
        return c;
    });

    ag::register_grad_check("dracb", [](const Dims4& d) {
        auto m = std::make_shared<MrenModel<double>>(tiny_config(), 11);
        const Dims4 xd{d.n, m->config().base_channels, d.h, d.w};
        const Dims4 pd{d.n, m->config().distill_channels, d.h, d.w};
        ag::GradCheckCase c;
        c.input_dims = {xd, pd};
        c.extra = param_slots(*m, "mreb.0.dracb.1.");
        c.context = m;
        c.forward = [m](ag::Tape<double>& tape, const std::vector<ag::Value<double>>& in) {
            auto [out, next] = m->dracb_forward(&tape, m->mrebs()[0].dracbs[1], in[0],
                                                std::optional<ag::Value<double>>(in[1]));
            return out;
        };
        return c;
    });

    ag::register_grad_check("scacb", [](const Dims4& d) {
        auto m = std::make_shared<MrenModel<double>>(tiny_config(), 13);
        const Dims4 xd{d.n, m->config().base_channels, d.h, d.w};
        ag::GradCheckCase c;
        c.input_dims = {xd};
        c.extra = param_slots(*m, "mreb.0.scacb.0.");
        c.context = m;
        c.forward = [m](ag::Tape<double>& tape, const std::vector<ag::Value<double>>& in) {
            return m->scacb_forward(&tape, m->mrebs()[0].scacbs[0], in[0]);
        };
        return c;
    });

    ag::register_grad_check("mren_x2_1mreb", [](const Dims4& d) {
        auto m = std::make_shared<MrenModel<double>>(tiny_config(), 17);
        const Dims4 xd{d.n, 3, d.h, d.w};
        ag::GradCheckCase c;
        c.input_dims = {xd};
        c.extra = param_slots(*m, "");
        c.context = m;
        // the full stack is ~a dozen convs deep; unit-range weights blow the
        // activations up to ~1e5 and central differences drown in roundoff.
        // the forward is smooth, so the wider step only cuts noise
        c.param_scale = 0.25;
        c.step = 1e-4;
        c.forward = [m](ag::Tape<double>& tape, const std::vector<ag::Value<double>>& in) {
            return m->forward(&tape, in[0]);
        };
        return c;
    });
}

} // namespace mren::model
