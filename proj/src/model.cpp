#include "comchain/model.hpp"

#include <cmath>

namespace comchain {

void EncoderConfig::validate(const std::string& tower) const {
    auto fail = [&](const std::string& what) {
        throw ConfigError(tower + " tower: " + what);
    };
    if (width < 1 || depth < 1) fail("width and depth must be >= 1");
    if (head_dim < 1 || width % head_dim != 0)
        fail("width " + std::to_string(width) + " not divisible by head_dim " +
             std::to_string(head_dim));
    if (mlp_ratio < 1) fail("mlp_ratio must be >= 1");
    if (is_image()) {
        if (image_size < 1 || channels < 1) fail("image_size and channels must be >= 1");
        if (image_size % patch_size != 0)
            fail("image_size " + std::to_string(image_size) + " not divisible by patch_size " +
                 std::to_string(patch_size));
    } else {
        if (vocab_size < 1 || context < 1) fail("vocab_size and context must be >= 1");
    }
}

void ModelConfig::validate() const {
    if (name.empty()) throw ConfigError("model config needs a name");
    image.validate("image");
    text.validate("text");
    if (!image.is_image()) throw ConfigError("image tower must define patch/image size");
    if (text.is_image()) throw ConfigError("text tower must define vocab/context");
    if (embed_dim < 1) throw ConfigError("embed_dim must be >= 1");
    if (captions_per_image < 1) throw ConfigError("captions_per_image must be >= 1");
    if (!(init_temperature > 0)) throw ConfigError("init temperature must be positive");
}

namespace {

void block_schema(std::vector<TensorSpec>& out, const std::string& prefix,
                  const EncoderConfig& e) {
    const int64_t w = e.width, hid = e.mlp_ratio * e.width;
    out.push_back({prefix + ".ln1.gain", {w}});
    out.push_back({prefix + ".ln1.bias", {w}});
    out.push_back({prefix + ".attn.qkv.weight", {w, 3 * w}});
    out.push_back({prefix + ".attn.qkv.bias", {3 * w}});
    out.push_back({prefix + ".attn.out.weight", {w, w}});
    out.push_back({prefix + ".attn.out.bias", {w}});
    out.push_back({prefix + ".ln2.gain", {w}});
    out.push_back({prefix + ".ln2.bias", {w}});
    out.push_back({prefix + ".mlp.fc1.weight", {w, hid}});
    out.push_back({prefix + ".mlp.fc1.bias", {hid}});
    out.push_back({prefix + ".mlp.fc2.weight", {hid, w}});
    out.push_back({prefix + ".mlp.fc2.bias", {w}});
}

}  // namespace

std::vector<TensorSpec> schema(const ModelConfig& cfg) {
    cfg.validate();
    std::vector<TensorSpec> out;
    const auto& img = cfg.image;
    out.push_back({"image.patch_embed.weight", {img.patch_dim(), img.width}});
    out.push_back({"image.patch_embed.bias", {img.width}});
    out.push_back({"image.cls_token", {1, img.width}});
    out.push_back({"image.pos_embed", {img.seq_len(), img.width}});
    out.push_back({"image.ln_pre.gain", {img.width}});
    out.push_back({"image.ln_pre.bias", {img.width}});
    for (int64_t k = 0; k < img.depth; ++k)
        block_schema(out, "image.block" + std::to_string(k), img);
    out.push_back({"image.ln_post.gain", {img.width}});
    out.push_back({"image.ln_post.bias", {img.width}});
    out.push_back({"image.proj", {img.width, cfg.embed_dim}});
    const auto& txt = cfg.text;
    out.push_back({"text.token_embed", {txt.vocab_size, txt.width}});
    out.push_back({"text.pos_embed", {txt.context, txt.width}});
    for (int64_t k = 0; k < txt.depth; ++k)
        block_schema(out, "text.block" + std::to_string(k), txt);
    out.push_back({"text.ln_final.gain", {txt.width}});
    out.push_back({"text.ln_final.bias", {txt.width}});
    out.push_back({"text.proj", {txt.width, cfg.embed_dim}});
    out.push_back({"logit_scale", {1, 1}});
    return out;
}

ParamSet build_params(const ModelConfig& cfg, Rng& rng) {
    ParamSet params;
    for (const auto& spec : schema(cfg)) {
        Tensor t(spec.shape);
        const bool is_gain = spec.name.ends_with(".gain");
        const bool is_bias = spec.name.ends_with(".bias");
        if (spec.name == "logit_scale") {
            t.data[0] = static_cast<float>(std::log(1.0 / cfg.init_temperature));
        } else if (is_gain) {
            std::fill(t.data.begin(), t.data.end(), 1.0f);
        } else if (is_bias) {
            // zeros
        } else {
            for (auto& v : t.data) v = static_cast<float>(rng.trunc_normal(0.02));
        }
        params.emplace(spec.name, std::move(t));
    }
    return params;
}

int64_t param_count(const ModelConfig& cfg) {
    int64_t total = 0;
    for (const auto& spec : schema(cfg)) total += TensorT<float>::numel_of(spec.shape);
    return total;
}

TowerParams table_param_split(const ModelConfig& cfg) {
    TowerParams tp;
    for (const auto& spec : schema(cfg)) {
        const int64_t n = TensorT<float>::numel_of(spec.shape);
        if (spec.name.starts_with("image.")) tp.image_tower += n;
        else if (spec.name.starts_with("text.block")) tp.text_blocks += n;
    }
    return tp;
}

namespace {

ModelConfig vit_ref(const std::string& name, int64_t img_width, int64_t img_depth,
                    int64_t txt_width, int64_t txt_depth) {
    ModelConfig cfg;
    cfg.name = name;
    cfg.image = {img_width, img_depth, 64, 4, 224, 16, 3, 0, 0};
    cfg.text = {txt_width, txt_depth, 64, 4, 0, 0, 0, 49408, 77};
    cfg.embed_dim = txt_width;
    cfg.captions_per_image = 4;
    cfg.init_temperature = 0.07;
    return cfg;
}

}  // namespace

ModelConfig nano_config(const std::string& name, int64_t width, int64_t depth) {
    ModelConfig cfg;
    cfg.name = name;
    cfg.image = {width, depth, 16, 4, 16, 4, 1, 0, 0};
    cfg.text = {width, depth, 16, 4, 0, 0, 0, 64, 8};
    cfg.embed_dim = width;
    cfg.captions_per_image = 4;
    cfg.init_temperature = 0.07;
    return cfg;
}

ModelConfig preset_model(const std::string& name) {
    if (name == "vit_t16_ref") return vit_ref(name, 192, 12, 256, 12);
    if (name == "vit_s16_ref") return vit_ref(name, 384, 12, 384, 12);
    if (name == "vit_b16_ref") return vit_ref(name, 768, 12, 512, 12);
    if (name == "vit_l16_ref") return vit_ref(name, 1024, 24, 768, 12);
    if (name == "nano_t") return nano_config(name, 32, 2);
    if (name == "nano_s") return nano_config(name, 64, 2);
    if (name == "nano_b") return nano_config(name, 128, 4);
    throw ConfigError("unknown model preset: " + name);
}

FamilyPreset preset_family(const std::string& name) {
    FamilyPreset fam;
    fam.name = name;
    if (name == "vit_ref") {
        for (const char* m : {"vit_t16_ref", "vit_s16_ref", "vit_b16_ref", "vit_l16_ref"})
            fam.models.push_back(preset_model(m));
    } else if (name == "nano") {
        for (const char* m : {"nano_t", "nano_s", "nano_b"})
            fam.models.push_back(preset_model(m));
    } else {
        throw ConfigError("unknown family preset: " + name);
    }
    for (size_t i = 1; i < fam.models.size(); ++i)
        if (param_count(fam.models[i]) <= param_count(fam.models[i - 1]))
            throw ConfigError("family " + name + " is not strictly increasing in size");
    return fam;
}

}  // namespace comchain
