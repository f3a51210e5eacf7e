#pragma once

// Experiment configuration: one JSON file drives data generation, baseline
// and chain training, sweeps and reports. Schema in docs/formats.md.

#include "comchain/chain.hpp"
#include "comchain/data.hpp"
#include "comchain/sweep.hpp"

#include <string>
#include <vector>

namespace comchain {

struct ExperimentConfig {
    SyntheticSpec dataset;
    std::string train_manifest;  // when set, wins over `dataset`
    std::string eval_manifest;
    std::vector<double> split_fractions{0.95, 0.05};
    uint64_t split_seed = 0;

    std::vector<ChainModel> models;  // name+epochs resolved from presets
    bool expand_enabled = true;
    ExpandSpec expand;
    DistillSettings distill;
    OptimSettings optim_baseline;  // warmup defaults to 400 steps
    OptimSettings optim_chain;     // warmup defaults to 50 steps
    int64_t batch_size = 32;
    double lta_threshold = 2.0;
    uint64_t seed = 0;
    std::string out_dir = "out";
};

// Accepts preset names (nano_t, vit_t16_ref, ...) or nano_w<width>d<depth>.
ModelConfig model_from_name(const std::string& name);

ExperimentConfig load_experiment(const std::string& path);
ChainSpec to_chain_spec(const ExperimentConfig& cfg);

struct ResolvedData {
    DatasetManifest train_manifest;
    DatasetManifest eval_manifest;
    Dataset train;
    Dataset eval;
};

// Generates the dataset (if no manifest given) and the train/eval split
// under <data_dir>; reuses files that already exist.
ResolvedData resolve_data(const ExperimentConfig& cfg, const std::string& data_dir);

}  // namespace comchain
