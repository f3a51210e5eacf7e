#include "comchain/macs.hpp"

namespace comchain {

namespace {

uint64_t u(int64_t v) { return static_cast<uint64_t>(v); }

// One transformer block for `tokens` rows of width w.
uint64_t block_macs(int64_t tokens, int64_t w, int64_t mlp_ratio, bool fused_qkv) {
    const uint64_t t = u(tokens), width = u(w);
    const uint64_t qkv = fused_qkv ? t * 3 * width * 3 * width : t * width * 3 * width;
    const uint64_t scores = t * t * width;       // QK^T across all heads
    const uint64_t attn_v = t * t * width;       // attention-weighted values
    const uint64_t out_proj = t * width * width;
    const uint64_t mlp = 2 * t * width * u(mlp_ratio) * width;
    return qkv + scores + attn_v + out_proj + mlp;
}

uint64_t image_tower_macs(const ModelConfig& cfg) {
    const auto& e = cfg.image;
    const uint64_t patches = u(e.seq_len() - 1);
    uint64_t total = patches * u(e.patch_dim()) * u(e.width);  // patch embedding
    total += u(e.depth) * block_macs(e.seq_len(), e.width, e.mlp_ratio, false);
    total += u(e.width) * u(cfg.embed_dim);  // class-token projection
    return total;
}

uint64_t text_tower_macs(const ModelConfig& cfg, MacConvention conv) {
    const auto& e = cfg.text;
    // token embedding is a lookup: zero MACs
    uint64_t total = u(e.depth) * block_macs(e.seq_len(), e.width, e.mlp_ratio,
                                             conv == MacConvention::reference_table);
    total += u(e.width) * u(cfg.embed_dim);  // end-token projection
    return total;
}

}  // namespace

uint64_t forward_macs(const ModelConfig& cfg, int64_t captions, MacConvention conv) {
    cfg.validate();
    return image_tower_macs(cfg) + u(captions) * text_tower_macs(cfg, conv);
}

uint64_t first_layer_macs(const ModelConfig& cfg) {
    const auto& e = cfg.image;
    return u(e.seq_len() - 1) * u(e.patch_dim()) * u(e.width);
}

uint64_t training_macs(uint64_t c_f, uint64_t c_f_first, uint64_t params) {
    return c_f + (2 * c_f - c_f_first) + 3 * params;
}

MacBreakdown mac_breakdown(const ModelConfig& cfg, int64_t captions, MacConvention conv) {
    MacBreakdown b;
    b.c_f = forward_macs(cfg, captions, conv);
    b.c_f_first = first_layer_macs(cfg);
    b.c_b = 2 * b.c_f - b.c_f_first;
    b.params = u(param_count(cfg));
    b.c_u = 3 * b.params;
    b.c_t = b.c_f + b.c_b + b.c_u;
    return b;
}

uint64_t run_macs(const ModelConfig& cfg, int64_t n_samples, int64_t epochs,
                  const ModelConfig* teacher, int64_t captions, MacConvention conv) {
    if (n_samples < 1 || epochs < 1)
        throw ContractError("run_macs: sample and epoch counts must be positive");
    uint64_t per_sample = mac_breakdown(cfg, captions, conv).c_t;
    if (teacher) per_sample += forward_macs(*teacher, captions, conv);
    return u(epochs) * u(n_samples) * per_sample;
}

CostReport chain_report(const std::vector<std::string>& models,
                        const std::vector<double>& baseline_individual,
                        const std::vector<double>& chain_individual) {
    if (models.size() != baseline_individual.size() || models.size() != chain_individual.size())
        throw ContractError("chain_report: model and MAC lists must align");
    CostReport report;
    double base_acc = 0, chain_acc = 0;
    for (size_t i = 0; i < models.size(); ++i) {
        base_acc += baseline_individual[i];
        chain_acc += chain_individual[i];
        CostRow row;
        row.model = models[i];
        row.baseline_individual = baseline_individual[i];
        row.baseline_accumulated = base_acc;
        row.chain_individual = chain_individual[i];
        row.chain_accumulated = chain_acc;
        row.ratio_individual = baseline_individual[i] / chain_individual[i];
        row.ratio_accumulated = base_acc / chain_acc;
        report.rows.push_back(std::move(row));
    }
    return report;
}

const std::vector<ReferenceRow>& reference_table() {
    static const std::vector<ReferenceRow> table = {
        {"vit_t16_ref", 5.82, 17.57, 5.62, 9.48, 15.10},
        {"vit_s16_ref", 14.44, 43.65, 21.81, 21.29, 43.10},
        {"vit_b16_ref", 35.09, 106.27, 86.19, 37.83, 124.02},
        {"vit_l16_ref", 100.92, 306.11, 304.09, 85.05, 389.14},
    };
    return table;
}

std::vector<ValidationRow> validate_reference_macs() {
    std::vector<ValidationRow> rows;
    auto push = [&rows](const std::string& model, const std::string& what, double computed,
                        double reference) {
        rows.push_back({model, what, computed, reference,
                        100.0 * (computed - reference) / reference});
    };
    for (const auto& ref : reference_table()) {
        const ModelConfig cfg = preset_model(ref.model);
        const MacBreakdown b = mac_breakdown(cfg, 4, MacConvention::reference_table);
        const TowerParams tp = table_param_split(cfg);
        push(ref.model, "forward_gmacs", static_cast<double>(b.c_f) / 1e9, ref.forward_gmacs);
        push(ref.model, "training_gmacs", static_cast<double>(b.c_t) / 1e9, ref.training_gmacs);
        push(ref.model, "image_params_m", static_cast<double>(tp.image_tower) / 1e6,
             ref.image_params_m);
        push(ref.model, "text_block_params_m", static_cast<double>(tp.text_blocks) / 1e6,
             ref.text_block_params_m);
        push(ref.model, "total_params_m", static_cast<double>(tp.table_total()) / 1e6,
             ref.total_params_m);
    }
    return rows;
}

}  // namespace comchain
