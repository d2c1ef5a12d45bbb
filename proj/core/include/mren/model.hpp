#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mren/autograd.hpp"
#include "mren/param_store.hpp"
#include "mren/tensor.hpp"

namespace mren::model {

// osa / oca / scnc alter the SCACB wiring; the distill_* values alter the
// DRACB wiring. full is the complete network.
enum class Variant { full, osa, oca, scnc, distill_only, distill_sigmoid, distill_skip };

Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);

struct ModelConfig {
    int scale = 4;
    int n_mreb = 6;
    int base_channels = 60;
    int branch_channels = 10;
    int distill_channels = 20;
    double w_comm = 0.2;
    int wsilbv_ratio = 4;
    Variant variant = Variant::full;
    std::uint64_t rng_seed = 0;

    int n_rbwa() const { return scale == 4 ? 2 : 1; }
    std::vector<int> rbwa_scales() const;
    void validate() const;

    // Canonical JSON (sorted keys); unknown keys are rejected on parse,
    // absent keys take the defaults above.
    std::string to_json_text() const;
    static ModelConfig from_json_text(const std::string& text);
};

// A conv layer's identity inside the ParamStore ("<name>.weight"/".bias").
struct ConvRef {
    std::string name;
    ConvSpec spec;
};

struct WsilbvMeta {
    ConvRef reduce, expand;
};

struct DracbMeta {
    ConvRef distill;
    bool first = false; // no incoming attention state
};

struct ScacbMeta {
    Variant variant = Variant::full;
    ConvRef compress;
    std::vector<ConvRef> ch_stages; // kernel 1, 3, 5; empty for osa
    std::vector<ConvRef> sp_stages; // depthwise 1, 3, 5; empty for oca
    std::optional<ConvRef> ch_fuse, sp_fuse;
    ConvRef restore;
};

struct MrebMeta {
    std::vector<ScacbMeta> scacbs; // 3 refinement stages
    std::vector<DracbMeta> dracbs; // 4 distillation taps
    ConvRef fuse;
    WsilbvMeta wsilbv;
};

struct RbwaMeta {
    int stage_scale = 2;
    ConvRef conv;
    WsilbvMeta wsilbv;
    ConvRef compress;
};

// Conv inventory entry for parameter/FLOPs accounting. spatial_factor is
// the layer's output area relative to the LR input (grows after each RBWA);
// unit_spatial marks the 1x1-resolution gating convs.
struct LayerDesc {
    std::string name;
    ConvSpec spec;
    int spatial_factor = 1;
    bool unit_spatial = false;
};

// Element-wise / resampling work, one op per element of `channels` planes
// at the given spatial factor.
struct EltwiseDesc {
    std::string op;
    std::int64_t channels = 0;
    int spatial_factor = 1;
    bool unit_spatial = false;
};

template <class T>
class MrenModel {
public:
    explicit MrenModel(const ModelConfig& cfg) : MrenModel(cfg, cfg.rng_seed) {}
    MrenModel(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

    const std::vector<LayerDesc>& conv_layers() const { return layers_; }
    const std::vector<EltwiseDesc>& elementwise_ops() const { return eltwise_; }
    const ConvRef& head() const { return head_; }
    const ConvRef& tail() const { return tail_; }
    const std::vector<MrebMeta>& mrebs() const { return mrebs_; }
    const std::vector<RbwaMeta>& rbwas() const { return rbwas_; }

    // Full Eq. 1-4 pass. tape == nullptr runs untracked (inference).
    autograd::Value<T> forward(autograd::Tape<T>* tape, const autograd::Value<T>& input);
    Tensor4<T> forward_eval(const Tensor4<T>& input);

    // Block entry points (also used by the gradient checks and tests).
    autograd::Value<T> conv(autograd::Tape<T>* tape, const ConvRef& layer,
                            const autograd::Value<T>& x);
    autograd::Value<T> wsilbv_forward(autograd::Tape<T>* tape, const WsilbvMeta& meta,
                                      const autograd::Value<T>& x);
    std::pair<autograd::Value<T>, std::optional<autograd::Value<T>>> dracb_forward(
        autograd::Tape<T>* tape, const DracbMeta& meta, const autograd::Value<T>& x,
        const std::optional<autograd::Value<T>>& prev);
    autograd::Value<T> scacb_forward(autograd::Tape<T>* tape, const ScacbMeta& meta,
                                     const autograd::Value<T>& x);
    autograd::Value<T> mreb_forward(autograd::Tape<T>* tape, const MrebMeta& meta,
                                    const autograd::Value<T>& x);
    autograd::Value<T> rbwa_forward(autograd::Tape<T>* tape, const RbwaMeta& meta,
                                    const autograd::Value<T>& x);

private:
    ModelConfig cfg_;
    ConvRef head_, tail_;
    std::vector<MrebMeta> mrebs_;
    std::vector<RbwaMeta> rbwas_;
    std::vector<LayerDesc> layers_;
    std::vector<EltwiseDesc> eltwise_;
    ParamStore<T> params_;
};

using MrenModelf = MrenModel<float>;
using MrenModeld = MrenModel<double>;

template <class T>
MrenModel<T> init_model(const ModelConfig& cfg, std::uint64_t seed) {
    return MrenModel<T>(cfg, seed);
}

// Registers the composite gradient checks (wsilbv, dracb, scacb,
// mren_x2_1mreb) on a small-width double-precision model. The base dims
// passed to grad_check supply n/h/w; channel counts come from the small
// config. Idempotent.
void register_grad_checks();

} // namespace mren::model
