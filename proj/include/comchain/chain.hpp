#pragma once

// The model-chain relay: the smallest model trains from scratch with the
// task loss only; each successor is initialized by expanding its frozen
// predecessor and trained with task + distillation losses. Checkpoints and
// metrics persist per model, and an interrupted chain resumes from the last
// completed model.

#include "comchain/data.hpp"
#include "comchain/expand.hpp"
#include "comchain/macs.hpp"
#include "comchain/model.hpp"
#include "comchain/trainer.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace comchain {

struct ChainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ChainModel {
    ModelConfig config;
    int64_t epochs = 1;
};

struct ChainSpec {
    std::vector<ChainModel> models;  // ordered smallest to largest
    bool expand_enabled = true;
    ExpandSpec expand;
    DistillSettings distill;
    OptimSettings optim_baseline;  // first model (long warmup)
    OptimSettings optim_chain;     // successors (short warmup)
    int64_t batch_size = 32;
    double lta_threshold = 2.0;  // retrieval points, desk scale
    uint64_t seed = 0;

    void validate() const;
};

struct ChainModelResult {
    std::string model;
    std::string checkpoint;  // path
    std::string sha256;
    uint64_t run_macs = 0;
    uint64_t cumulative_macs = 0;
    double final_metric = -1;  // lta_metric of the last-epoch eval
    double class_top1 = -1;
    double calibrated_alpha = -1;
    double first_batch_ifd_task_ratio = -1;
};

struct ChainState {
    int completed = 0;
    std::vector<ChainModelResult> models;
    uint64_t cumulative_macs = 0;
};

void save_chain_state(const ChainState& state, const std::string& path);
ChainState load_chain_state(const std::string& path);

ChainState run_chain(const ChainSpec& spec, const Dataset& train, const Dataset* eval_split,
                     const std::string& out_dir);

// ---------------------------------------------------------------------------
// Schedule arithmetic and the lossless-acceleration check.

// E_i = max(E_min, E_first_transfer - (i-2)*d) for i = 2..n (the first
// transfer model gets E_first_transfer; sizes grow exponentially while
// epochs decrease linearly).
std::vector<int64_t> allocate_epochs(int64_t first_transfer_epochs, int64_t decrement,
                                     int64_t chain_length, int64_t min_epochs);

// Scales every transfer budget by gamma (> 1), rounding up.
std::vector<int64_t> relax_schedule(const std::vector<int64_t>& epochs, double gamma);

struct LtaVerdict {
    double candidate = 0;
    double baseline = 0;
    double threshold = 0;
    bool pass = false;
};

// pass iff baseline - candidate < threshold (a candidate at or above the
// baseline always passes)
LtaVerdict lta_check(double candidate_metric, double baseline_metric, double threshold);

// Trains the first pair m1 -> m2 and checks LTA for m2 against a known
// baseline metric. On failure, relaxes the schedule by `gamma` and retries
// (fresh m2 training; m1 is reused) up to `max_retries` times.
struct FirstPairResult {
    LtaVerdict verdict;
    ChainSpec spec;  // possibly relaxed
    int relaxations = 0;
    std::vector<double> history;  // candidate metric per attempt
};

FirstPairResult validate_first_pair(const ChainSpec& spec, const Dataset& train,
                                    const Dataset& eval_split, double baseline_metric_m2,
                                    const std::string& out_dir, double gamma = 1.25,
                                    int max_retries = 3);

}  // namespace comchain
