#pragma once

// Retrieval evaluation on a held-out split: exact-pair R@1 in both
// directions plus class-prototype top-1 (the zero-shot-classification
// analogue, classifying images against mean caption embeddings per class).

#include "comchain/data.hpp"
#include "comchain/model.hpp"

namespace comchain {

struct EvalResult {
    double r1_t2i = 0;
    double r1_i2t = 0;
    double class_top1 = 0;
    int64_t images = 0;
    int64_t captions = 0;
};

EvalResult eval_retrieval(const ParamSet& params, const ModelConfig& config,
                          const Dataset& split);

// Frozen-parameter feature extraction helpers (also used by the trainer for
// teacher inference). Outputs are pre-normalization projections.
Tensor infer_image_features(const ParamSet& params, const ModelConfig& config,
                            const Tensor& images);
Tensor infer_text_features(const ParamSet& params, const ModelConfig& config,
                           const std::vector<int64_t>& tokens);

// The scalar used for lossless-acceleration comparisons: mean of the two
// retrieval directions, in percent.
double lta_metric(const EvalResult& r);

}  // namespace comchain
