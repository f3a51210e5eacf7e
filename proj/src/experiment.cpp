#include "comchain/experiment.hpp"

#include "comchain/util.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>

namespace comchain {

using nlohmann::json;

ModelConfig model_from_name(const std::string& name) {
    if (name.starts_with("nano_w")) {
        const size_t d = name.find('d', 6);
        if (d != std::string::npos) {
            const int64_t width = std::stoll(name.substr(6, d - 6));
            const int64_t depth = std::stoll(name.substr(d + 1));
            return nano_config(name, width, depth);
        }
    }
    return preset_model(name);
}

namespace {

SyntheticSpec dataset_from_json(const json& j) {
    SyntheticSpec s;
    if (j.contains("n_classes")) s.n_classes = j.at("n_classes");
    if (j.contains("samples_per_class")) s.samples_per_class = j.at("samples_per_class");
    if (j.contains("image_size")) s.image_size = j.at("image_size");
    if (j.contains("channels")) s.channels = j.at("channels");
    if (j.contains("caption_len")) s.caption_len = j.at("caption_len");
    if (j.contains("vocab")) s.vocab = j.at("vocab");
    if (j.contains("captions_per_image")) s.captions_per_image = j.at("captions_per_image");
    if (j.contains("sigma")) s.sigma = j.at("sigma");
    if (j.contains("seed")) s.seed = j.at("seed");
    return s;
}

void optim_from_json(const json& j, OptimSettings& o) {
    if (j.contains("lr")) o.lr = j.at("lr");
    if (j.contains("beta1")) o.beta1 = j.at("beta1");
    if (j.contains("beta2")) o.beta2 = j.at("beta2");
    if (j.contains("eps")) o.eps = j.at("eps");
    if (j.contains("weight_decay")) o.weight_decay = j.at("weight_decay");
    if (j.contains("warmup_steps")) o.warmup_steps = j.at("warmup_steps");
}

}  // namespace

ExperimentConfig load_experiment(const std::string& path) {
    auto bytes = read_file(path);
    json j = json::parse(bytes.begin(), bytes.end());
    ExperimentConfig cfg;
    cfg.optim_baseline.warmup_steps = 400;
    cfg.optim_chain.warmup_steps = 50;

    if (j.contains("dataset")) cfg.dataset = dataset_from_json(j.at("dataset"));
    if (j.contains("train_manifest")) cfg.train_manifest = j.at("train_manifest");
    if (j.contains("eval_manifest")) cfg.eval_manifest = j.at("eval_manifest");
    if (j.contains("split_fractions"))
        cfg.split_fractions = j.at("split_fractions").get<std::vector<double>>();
    if (j.contains("split_seed")) cfg.split_seed = j.at("split_seed");

    if (j.contains("models")) {
        for (const auto& m : j.at("models")) {
            ChainModel cm;
            cm.config = model_from_name(m.at("name"));
            cm.epochs = m.at("epochs");
            cfg.models.push_back(std::move(cm));
        }
    }
    if (j.contains("expand")) {
        const auto& e = j.at("expand");
        if (e.contains("enabled")) cfg.expand_enabled = e.at("enabled");
        if (e.contains("width")) cfg.expand.width_method = width_method_from(e.at("width"));
        if (e.contains("depth")) cfg.expand.depth_method = depth_method_from(e.at("depth"));
        if (e.contains("random_fill_std")) cfg.expand.random_fill_std = e.at("random_fill_std");
    }
    if (j.contains("distill")) {
        const auto& d = j.at("distill");
        const std::string mode = d.value("mode", "ratio");
        if (mode == "off") cfg.distill.mode = DistillSettings::Mode::off;
        else if (mode == "ratio") cfg.distill.mode = DistillSettings::Mode::ratio;
        else if (mode == "fixed_alpha") cfg.distill.mode = DistillSettings::Mode::fixed_alpha;
        else throw ChainError("config: distill mode must be off|ratio|fixed_alpha");
        if (d.contains("ratio")) cfg.distill.ratio = d.at("ratio");
        if (d.contains("alpha")) cfg.distill.alpha = d.at("alpha");
    }
    if (j.contains("optimizer")) {
        optim_from_json(j.at("optimizer"), cfg.optim_baseline);
        OptimSettings chain = cfg.optim_baseline;
        chain.warmup_steps = 50;
        cfg.optim_chain = chain;
        optim_from_json(j.at("optimizer"), cfg.optim_chain);
        if (j.at("optimizer").contains("warmup_steps_baseline"))
            cfg.optim_baseline.warmup_steps = j.at("optimizer").at("warmup_steps_baseline");
        if (j.at("optimizer").contains("warmup_steps_chain"))
            cfg.optim_chain.warmup_steps = j.at("optimizer").at("warmup_steps_chain");
    }
    if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size");
    if (j.contains("lta_threshold")) cfg.lta_threshold = j.at("lta_threshold");
    if (j.contains("seed")) cfg.seed = j.at("seed");
    if (j.contains("out")) cfg.out_dir = j.at("out");
    return cfg;
}

ChainSpec to_chain_spec(const ExperimentConfig& cfg) {
    ChainSpec spec;
    spec.models = cfg.models;
    spec.expand_enabled = cfg.expand_enabled;
    spec.expand = cfg.expand;
    spec.distill = cfg.distill;
    spec.optim_baseline = cfg.optim_baseline;
    spec.optim_chain = cfg.optim_chain;
    spec.batch_size = cfg.batch_size;
    spec.lta_threshold = cfg.lta_threshold;
    spec.seed = cfg.seed;
    return spec;
}

ResolvedData resolve_data(const ExperimentConfig& cfg, const std::string& data_dir) {
    ResolvedData out;
    if (!cfg.train_manifest.empty()) {
        out.train_manifest = load_manifest(cfg.train_manifest);
        if (cfg.eval_manifest.empty())
            throw DataError("config: train_manifest requires eval_manifest");
        out.eval_manifest = load_manifest(cfg.eval_manifest);
    } else {
        const std::string manifest_path = data_dir + "/manifest.json";
        DatasetManifest full;
        if (std::filesystem::exists(manifest_path)) {
            full = load_manifest(manifest_path);
        } else {
            full = generate(cfg.dataset, data_dir);
        }
        const std::string split_dir = data_dir + "/splits";
        const std::string t_path = split_dir + "/split0.json";
        const std::string e_path = split_dir + "/split1.json";
        if (std::filesystem::exists(t_path) && std::filesystem::exists(e_path)) {
            out.train_manifest = load_manifest(t_path);
            out.eval_manifest = load_manifest(e_path);
        } else {
            auto splits = split(full, cfg.split_fractions, cfg.split_seed, split_dir);
            if (splits.size() != 2)
                throw DataError("config: split_fractions must produce train and eval splits");
            out.train_manifest = splits[0];
            out.eval_manifest = splits[1];
        }
    }
    out.train = load_dataset(out.train_manifest);
    out.eval = load_dataset(out.eval_manifest);
    return out;
}

}  // namespace comchain
