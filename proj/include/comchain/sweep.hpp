#pragma once

// Config-driven sweeps over the chain-design axes: baseline epoch budgets,
// smallest-model choice, expansion ratio, distillation magnitude, and the
// IWI/IFD component grid. Arms run in worker threads (bounded by
// COMCHAIN_THREADS) with isolated output dirs; one arm failing is recorded
// and the sweep continues.

#include "comchain/chain.hpp"

#include <map>
#include <string>
#include <vector>

namespace comchain {

enum class SweepAxis { epochs, smallest_model, expansion_ratio, alpha, components };

SweepAxis sweep_axis_from(const std::string& s);
const char* to_string(SweepAxis axis);

struct SweepConfig {
    SweepAxis axis = SweepAxis::epochs;
    std::vector<std::string> values;
    ChainSpec base;  // full chain the axes perturb
    std::string out_dir;
    int threads = 0;  // 0: COMCHAIN_THREADS env var, default 2
};

struct ArmResult {
    std::string value;
    bool ok = false;
    std::string error;
    double metric = -1;      // final mean R@1 (%) of the arm's last model
    double macs = 0;         // arm training MACs
    double extra = 0;        // axis-dependent (reduced MACs %, accum ratio, ...)
    std::string extra_name;
};

struct SweepReport {
    SweepAxis axis;
    std::vector<ArmResult> arms;
    bool all_ok = false;
    std::string note;  // e.g. trend flags (informational, never asserted)
};

SweepReport run_sweep(const SweepConfig& config, const Dataset& train,
                      const Dataset& eval_split);

void save_sweep_csv(const SweepReport& report, const std::string& path);
void save_sweep_svg(const SweepReport& report, const std::string& path);

// Geometric nano chain between two widths with roughly `param_ratio` growth
// per hop (used by the expansion-ratio axis).
std::vector<ModelConfig> geometric_nano_chain(int64_t width_from, int64_t width_to,
                                              double param_ratio);

}  // namespace comchain
