#pragma once

// Single-model training run: AdamW on the multi-caption contrastive loss,
// optionally distilling from a frozen teacher via live forward passes.
// One chain step and one baseline run are the same code path; a baseline is
// simply a run without teacher or expansion.

#include "comchain/data.hpp"
#include "comchain/eval.hpp"
#include "comchain/macs.hpp"
#include "comchain/metrics.hpp"
#include "comchain/model.hpp"
#include "comchain/optim.hpp"

#include <optional>
#include <string>

namespace comchain {

struct TrainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct OptimSettings {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-8;
    double weight_decay = 0.1;
    int64_t warmup_steps = 400;
};

struct DistillSettings {
    enum class Mode { off, ratio, fixed_alpha };
    Mode mode = Mode::ratio;
    double ratio = 0.1;    // target l_ifd / l_task on the first batch
    double alpha = 500.0;  // used by fixed_alpha mode
};

struct TrainJob {
    ModelConfig config;
    ParamSet init_params;
    const Dataset* train = nullptr;
    const Dataset* eval = nullptr;  // optional; evaluated every epoch
    int64_t epochs = 1;
    int64_t batch_size = 32;
    OptimSettings optim;
    DistillSettings distill;                    // applies only with a teacher
    const ParamSet* teacher_params = nullptr;   // frozen
    const ModelConfig* teacher_config = nullptr;
    uint64_t seed = 0;
    std::string run_id;
    std::string metrics_path;                 // empty: no metrics file
    uint64_t initial_cumulative_macs = 0;     // offset for chain accounting
};

struct TrainResult {
    ParamSet params;               // trained model (distill transforms dropped)
    uint64_t run_macs = 0;         // this run only, standard convention
    double calibrated_alpha = -1;  // -1 when distillation was off
    double first_batch_ifd_task_ratio = -1;
    std::optional<EvalResult> final_eval;
    std::vector<MetricsRow> rows;
};

TrainResult train_model(TrainJob job);

}  // namespace comchain
