#pragma once

// JSON adapters for model configs (checkpoint headers, experiment configs).

#include "comchain/model.hpp"

#include <nlohmann/json.hpp>

namespace comchain {

inline void to_json(nlohmann::json& j, const EncoderConfig& e) {
    j = nlohmann::json{{"width", e.width},        {"depth", e.depth},
                       {"head_dim", e.head_dim},  {"mlp_ratio", e.mlp_ratio},
                       {"image_size", e.image_size}, {"patch_size", e.patch_size},
                       {"channels", e.channels},  {"vocab_size", e.vocab_size},
                       {"context", e.context}};
}

inline void from_json(const nlohmann::json& j, EncoderConfig& e) {
    j.at("width").get_to(e.width);
    j.at("depth").get_to(e.depth);
    j.at("head_dim").get_to(e.head_dim);
    j.at("mlp_ratio").get_to(e.mlp_ratio);
    j.at("image_size").get_to(e.image_size);
    j.at("patch_size").get_to(e.patch_size);
    j.at("channels").get_to(e.channels);
    j.at("vocab_size").get_to(e.vocab_size);
    j.at("context").get_to(e.context);
}

inline void to_json(nlohmann::json& j, const ModelConfig& m) {
    j = nlohmann::json{{"name", m.name},
                       {"image", m.image},
                       {"text", m.text},
                       {"embed_dim", m.embed_dim},
                       {"captions_per_image", m.captions_per_image},
                       {"init_temperature", m.init_temperature}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& m) {
    j.at("name").get_to(m.name);
    j.at("image").get_to(m.image);
    j.at("text").get_to(m.text);
    j.at("embed_dim").get_to(m.embed_dim);
    j.at("captions_per_image").get_to(m.captions_per_image);
    j.at("init_temperature").get_to(m.init_temperature);
}

}  // namespace comchain
