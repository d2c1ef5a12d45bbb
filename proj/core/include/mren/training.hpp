#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mren/checkpoint.hpp"
#include "mren/dataset.hpp"
#include "mren/model.hpp"

namespace mren::train {

struct TrainConfig {
    double lr0 = 5e-4;
    int decay_period = 600;        // epochs between halvings
    double decay_factor = 0.5;
    int total_epochs = 20;
    int iterations_per_epoch = 50;
    int batch = 16;
    int patch = 192;               // HR patch edge
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;

    void validate() const;
    std::string to_json_text() const;
    static TrainConfig from_json_text(const std::string& text);
};

double lr_at(int epoch, const TrainConfig& cfg);

// Adam with bias correction. Moments are stored per parameter, aligned by
// name, and serialized into checkpoints as adam.m.<name> / adam.v.<name>.
class AdamState {
public:
    struct Moment {
        std::string name;
        Tensor4f m;
        Tensor4f v;
    };

    void init(const ParamStore<float>& params);
    bool initialized() const { return !moments_.empty(); }
    std::int64_t step() const { return step_; }
    void set_step(std::int64_t s) { step_ = s; }

    // One optimizer step over every parameter. Throws UsageError naming the
    // parameter if its gradient was never produced.
    void apply(ParamStore<float>& params, double lr, const TrainConfig& cfg);

    const std::vector<Moment>& moments() const { return moments_; }
    void load_moment(const std::string& name, const Tensor4f& m, const Tensor4f& v);

private:
    std::vector<Moment> moments_;
    std::int64_t step_ = 0;
};

// One optimization step on a sampled batch; returns the pre-update L1 loss.
float train_step(model::MrenModelf& m, const data::PatchBatch& batch, AdamState& adam,
                 double lr, const TrainConfig& cfg);

struct LogRow {
    std::int64_t iteration;
    int epoch;
    double lr;
    float loss;
    double seconds;  // wall time since fit() started
};

struct TrainLog {
    std::vector<LogRow> rows;
    std::string to_csv() const;
};

// Everything needed to continue an interrupted run.
struct FitState {
    AdamState adam;
    std::string rng_state;  // empty: seed fresh from cfg.seed
    int start_epoch = 0;
};

// Trains in place, checkpointing each epoch into out_dir (atomic writes, so a
// kill mid-epoch leaves the previous checkpoint intact). Returns the full log,
// which is also rewritten to out_dir/train_log.csv after every epoch.
TrainLog fit(model::MrenModelf& m, const std::vector<data::NamedImage>& images,
             const TrainConfig& cfg, const std::string& out_dir, FitState state = {},
             std::ostream* progress = nullptr);

// checkpoint assembly / restore

ckpt::Checkpoint make_checkpoint(const model::MrenModelf& m, int next_epoch,
                                 const AdamState* adam, const std::string& rng_state);

// Rebuilds the model from the embedded config and loads every parameter;
// missing or misshapen tensors raise IntegrityError. Optimizer tensors are
// ignored here.
model::MrenModelf model_from_checkpoint(const ckpt::Checkpoint& c);

struct ResumePoint {
    model::MrenModelf model;
    FitState state;
    bool has_optimizer = false;
};

ResumePoint trainer_from_checkpoint(const ckpt::Checkpoint& c);

// evaluation

struct EvalRow {
    std::string name;
    double psnr;
    double ssim;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
};

// Evaluates a model (or, with m == nullptr, the bicubic baseline) over every
// PNG in hr_dir. LR inputs are degraded on the fly, or cached under
// hr_dir/LRx<scale>/ when cache_lr is set.
EvalReport evaluate(model::MrenModelf* m, const std::string& hr_dir, int scale, bool cache_lr);

} // namespace mren::train
