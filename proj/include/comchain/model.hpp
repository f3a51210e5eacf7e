#pragma once

// CLIP-style two-tower transformer family: a patch-based image encoder and a
// token-based text encoder projecting into a shared embedding space. The
// canonical tensor-name schema lives here; checkpoints and expansion both
// rely on it being stable (see docs/formats.md).

#include "comchain/graph.hpp"
#include "comchain/optim.hpp"
#include "comchain/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace comchain {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EncoderConfig {
    int64_t width = 0;
    int64_t depth = 0;
    int64_t head_dim = 64;
    int64_t mlp_ratio = 4;
    // image tower
    int64_t image_size = 0;
    int64_t patch_size = 0;
    int64_t channels = 0;
    // text tower
    int64_t vocab_size = 0;
    int64_t context = 0;

    bool is_image() const { return patch_size > 0; }
    int64_t patches_per_side() const { return image_size / patch_size; }
    int64_t patch_dim() const { return channels * patch_size * patch_size; }
    // tokens per sample; includes the class token on the image side
    int64_t seq_len() const {
        return is_image() ? patches_per_side() * patches_per_side() + 1 : context;
    }
    int64_t heads() const { return width / head_dim; }

    void validate(const std::string& tower) const;
};

struct ModelConfig {
    std::string name;
    EncoderConfig image;
    EncoderConfig text;
    int64_t embed_dim = 0;
    int64_t captions_per_image = 4;
    double init_temperature = 0.07;

    void validate() const;
};

struct FamilyPreset {
    std::string name;
    std::vector<ModelConfig> models;  // strictly increasing parameter count
};

template <typename F>
using ParamSetT = std::map<std::string, TensorT<F>>;

struct TensorSpec {
    std::string name;
    std::vector<int64_t> shape;
};

// Canonical schema in canonical order; build_params fills it in this order
// from a single RNG stream, so identical seeds give bit-identical ParamSets.
std::vector<TensorSpec> schema(const ModelConfig& cfg);

ParamSet build_params(const ModelConfig& cfg, Rng& rng);

// Exact learnable scalar count of the canonical schema.
int64_t param_count(const ModelConfig& cfg);

// Reference-table accounting: the image tower including its projection, and
// the text tower's transformer blocks only (the convention the reference
// parameter table uses).
struct TowerParams {
    int64_t image_tower = 0;
    int64_t text_blocks = 0;
    int64_t table_total() const { return image_tower + text_blocks; }
};
TowerParams table_param_split(const ModelConfig& cfg);

// Presets. "vit_ref" models replicate OpenCLIP-convention reference
// architectures and are used only for analytic validation; the "nano" family
// is the one that trains at desk scale.
ModelConfig preset_model(const std::string& name);
FamilyPreset preset_family(const std::string& name);
// nano-family config of arbitrary width/depth (for expansion-ratio sweeps)
ModelConfig nano_config(const std::string& name, int64_t width, int64_t depth);

// ---------------------------------------------------------------------------
// Forward builders. Parameters must already be on the graph as leaves (or
// inputs when frozen); `ids` maps canonical names to node ids.

template <typename F>
struct GraphParams {
    std::map<std::string, int> ids;
    int at(const std::string& name) const {
        auto it = ids.find(name);
        if (it == ids.end()) throw ConfigError("missing parameter on graph: " + name);
        return it->second;
    }
};

template <typename F>
GraphParams<F> params_on_graph(Graph<F>& g, const ParamSetT<F>& params, bool trainable) {
    GraphParams<F> gp;
    for (const auto& [name, tensor] : params)
        gp.ids[name] = trainable ? g.leaf(name, tensor) : g.input(tensor);
    return gp;
}

// Rearranges flat (channels, H, W) images into rows of flattened patches,
// one row per patch: (B * patches, channels * ps * ps). Pure data prep.
template <typename F>
TensorT<F> extract_patches(const TensorT<F>& images, const EncoderConfig& cfg) {
    const int64_t hw = cfg.image_size * cfg.image_size;
    if (images.shape.size() != 2 || images.shape[1] != cfg.channels * hw)
        throw DimError("extract_patches: image batch " + shape_str(images.shape) +
                       " does not match configured image size");
    const int64_t batch = images.shape[0];
    const int64_t ps = cfg.patch_size, side = cfg.patches_per_side();
    TensorT<F> out({batch * side * side, cfg.patch_dim()});
    int64_t row = 0;
    for (int64_t b = 0; b < batch; ++b) {
        const F* img = images.data.data() + b * cfg.channels * hw;
        for (int64_t py = 0; py < side; ++py)
            for (int64_t px = 0; px < side; ++px) {
                F* dst = out.data.data() + row * cfg.patch_dim();
                for (int64_t ch = 0; ch < cfg.channels; ++ch)
                    for (int64_t y = 0; y < ps; ++y)
                        for (int64_t x = 0; x < ps; ++x)
                            *dst++ = img[ch * hw + (py * ps + y) * cfg.image_size + px * ps + x];
                ++row;
            }
    }
    return out;
}

namespace detail_model {

template <typename F>
int transformer_block(Graph<F>& g, const GraphParams<F>& p, const std::string& prefix,
                      int x, int64_t heads, int64_t seq) {
    int h = ops::layer_norm(g, x, p.at(prefix + ".ln1.gain"), p.at(prefix + ".ln1.bias"));
    int qkv = ops::bias_add(g, ops::matmul(g, h, p.at(prefix + ".attn.qkv.weight")),
                            p.at(prefix + ".attn.qkv.bias"));
    int a = ops::attention(g, qkv, heads, seq);
    a = ops::bias_add(g, ops::matmul(g, a, p.at(prefix + ".attn.out.weight")),
                      p.at(prefix + ".attn.out.bias"));
    x = ops::add(g, x, a);
    h = ops::layer_norm(g, x, p.at(prefix + ".ln2.gain"), p.at(prefix + ".ln2.bias"));
    int m = ops::bias_add(g, ops::matmul(g, h, p.at(prefix + ".mlp.fc1.weight")),
                          p.at(prefix + ".mlp.fc1.bias"));
    m = ops::gelu(g, m);
    m = ops::bias_add(g, ops::matmul(g, m, p.at(prefix + ".mlp.fc2.weight")),
                      p.at(prefix + ".mlp.fc2.bias"));
    return ops::add(g, x, m);
}

}  // namespace detail_model

// Image features before normalization: (B, embed_dim). Callers l2-normalize
// when they need cosine similarities.
template <typename F>
int encode_image(Graph<F>& g, const GraphParams<F>& p, const EncoderConfig& cfg,
                 const TensorT<F>& images) {
    const int64_t seq = cfg.seq_len();
    int x = g.input(extract_patches(images, cfg));
    x = ops::bias_add(g, ops::matmul(g, x, p.at("image.patch_embed.weight")),
                      p.at("image.patch_embed.bias"));
    x = ops::prepend_row(g, x, p.at("image.cls_token"), seq - 1);
    x = ops::add_position(g, x, p.at("image.pos_embed"), seq);
    x = ops::layer_norm(g, x, p.at("image.ln_pre.gain"), p.at("image.ln_pre.bias"));
    for (int64_t k = 0; k < cfg.depth; ++k)
        x = detail_model::transformer_block(g, p, "image.block" + std::to_string(k), x,
                                            cfg.heads(), seq);
    x = ops::layer_norm(g, x, p.at("image.ln_post.gain"), p.at("image.ln_post.bias"));
    int pooled = ops::take_rows_strided(g, x, seq, 0);
    return ops::matmul(g, pooled, p.at("image.proj"));
}

// Text features from the final token position: (B, embed_dim). Tokens are
// row-major (B * context) and must lie in [0, vocab).
template <typename F>
int encode_text(Graph<F>& g, const GraphParams<F>& p, const EncoderConfig& cfg,
                const std::vector<int64_t>& tokens) {
    const int64_t seq = cfg.seq_len();
    if (tokens.empty() || static_cast<int64_t>(tokens.size()) % seq != 0)
        throw DimError("encode_text: token count " + std::to_string(tokens.size()) +
                       " is not a multiple of context " + std::to_string(seq));
    for (int64_t t : tokens)
        if (t < 0 || t >= cfg.vocab_size)
            throw ContractError("encode_text: token " + std::to_string(t) +
                                " out of range [0," + std::to_string(cfg.vocab_size) + ")");
    int x = ops::gather_rows(g, p.at("text.token_embed"), tokens);
    x = ops::add_position(g, x, p.at("text.pos_embed"), seq);
    for (int64_t k = 0; k < cfg.depth; ++k)
        x = detail_model::transformer_block(g, p, "text.block" + std::to_string(k), x,
                                            cfg.heads(), seq);
    x = ops::layer_norm(g, x, p.at("text.ln_final.gain"), p.at("text.ln_final.bias"));
    int pooled = ops::take_rows_strided(g, x, seq, seq - 1);
    return ops::matmul(g, pooled, p.at("text.proj"));
}

}  // namespace comchain
