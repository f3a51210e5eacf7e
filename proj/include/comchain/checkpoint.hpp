#pragma once

// Binary checkpoint: magic "COMC", version, model-config JSON blob, then
// named f32 tensors. Roundtrips are bit-exact; see docs/formats.md.

#include "comchain/model.hpp"

#include <string>

namespace comchain {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Writes params (canonical schema names only) and returns the file's sha256.
std::string save_checkpoint(const ParamSet& params, const ModelConfig& config,
                            const std::string& path);

struct LoadedCheckpoint {
    ParamSet params;
    ModelConfig config;
    std::string sha256;
};

// Loads and validates against the embedded config's schema. When `expect` is
// given, the stored tensors must also match its schema exactly; the first
// offending tensor is named in the error.
LoadedCheckpoint load_checkpoint(const std::string& path, const ModelConfig* expect = nullptr);

}  // namespace comchain
