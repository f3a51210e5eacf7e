#pragma once

// Inverse weight initialization: maps a trained smaller model onto a larger
// architecture. Width grows by duplication (tiling), interpolation (bilinear
// resize) or insertion (teacher block at the leading coordinates, remainder
// freshly initialized); depth grows by constant, interval or duplicate block
// placement.

#include "comchain/model.hpp"
#include "comchain/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace comchain {

enum class WidthMethod { duplication, interpolation, insertion };
enum class DepthMethod { constant, interval, duplicate };

const char* to_string(WidthMethod m);
const char* to_string(DepthMethod m);
WidthMethod width_method_from(const std::string& s);
DepthMethod depth_method_from(const std::string& s);

struct ExpandSpec {
    WidthMethod width_method = WidthMethod::insertion;
    DepthMethod depth_method = DepthMethod::duplicate;
    double random_fill_std = 0.02;  // truncated normal, clipped at 2 std
    uint64_t seed = 0;
};

// How each student block was produced. teacher_pos[j] is the student index
// holding teacher block j; interval/duplicate place block j at floor(j*q/p).
struct LayerSource {
    enum Kind { teacher, duplicate_of, random } kind = random;
    int64_t index = -1;  // teacher block j, or earlier student index k' < k
};

struct LayerMapping {
    std::vector<LayerSource> sources;   // one entry per student block
    std::vector<int64_t> teacher_pos;   // one entry per teacher block
};

LayerMapping layer_mapping(int64_t teacher_depth, int64_t student_depth, DepthMethod method);

// Fill rule for coordinates not covered by the teacher in insertion mode.
enum class FillKind { random, ones, zeros };

// Expands one tensor to target_shape (rank and per-axis size must dominate
// the teacher's). Same-shape targets return a bit-exact copy for any method.
Tensor expand_width(const Tensor& teacher, const std::vector<int64_t>& target_shape,
                    WidthMethod method, Rng& rng, double fill_std = 0.02,
                    FillKind fill = FillKind::random);

// Depth expansion over per-block tensor groups (local names, e.g. "ln1.gain").
using BlockTensors = std::map<std::string, Tensor>;
std::pair<std::vector<BlockTensors>, LayerMapping> expand_depth(
    const std::vector<BlockTensors>& teacher_blocks, int64_t student_depth,
    DepthMethod method, Rng& rng);

struct ExpandResult {
    ParamSet params;
    LayerMapping image_map;
    LayerMapping text_map;
};

// Full-model expansion: depth placement per tower, then per-tensor width
// expansion. The temperature is copied verbatim.
ExpandResult expand_model(const ParamSet& teacher, const ModelConfig& teacher_cfg,
                          const ModelConfig& student_cfg, const ExpandSpec& spec);

// Recovers the teacher-shaped slice at the insertion coordinates; the test
// oracle for embedding exactness.
ParamSet extract_submodel(const ParamSet& student, const ModelConfig& teacher_cfg,
                          const ModelConfig& student_cfg, const LayerMapping& image_map,
                          const LayerMapping& text_map);

}  // namespace comchain
