// comchain: chain-of-models pre-training at desk scale.
//
// Subcommands: gen-data, train-baseline, train-chain, eval, macs, sweep,
// report. See README.md for walkthroughs and docs/formats.md for file
// schemas.

#include "comchain/chain.hpp"
#include "comchain/checkpoint.hpp"
#include "comchain/experiment.hpp"
#include "comchain/macs.hpp"
#include "comchain/report.hpp"
#include "comchain/sweep.hpp"
#include "comchain/util.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <string>

using namespace comchain;

namespace {

ExperimentConfig load_cfg(const std::string& path, const std::string& out_override,
                          int64_t seed_override) {
    ExperimentConfig cfg = load_experiment(path);
    if (!out_override.empty()) cfg.out_dir = out_override;
    if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
    return cfg;
}

int cmd_gen_data(const std::string& config_path, const std::string& out, int64_t seed) {
    ExperimentConfig cfg = load_cfg(config_path, out, seed);
    const std::string data_dir = cfg.out_dir + "/data";
    ResolvedData data = resolve_data(cfg, data_dir);
    std::printf("dataset: %lld samples (%lld train / %lld eval) under %s\n",
                static_cast<long long>(data.train.class_ids.size() + data.eval.class_ids.size()),
                static_cast<long long>(data.train.class_ids.size()),
                static_cast<long long>(data.eval.class_ids.size()), data_dir.c_str());
    return 0;
}

int cmd_train_baseline(const std::string& config_path, const std::string& out, int64_t seed,
                       const std::string& model, int64_t epochs) {
    ExperimentConfig cfg = load_cfg(config_path, out, seed);
    ResolvedData data = resolve_data(cfg, cfg.out_dir + "/data");
    ChainSpec spec = to_chain_spec(cfg);
    if (!model.empty()) {
        ChainModel cm;
        cm.config = model_from_name(model);
        cm.epochs = epochs > 0 ? epochs : spec.models.front().epochs;
        spec.models = {cm};
    } else {
        spec.models.resize(1);
        if (epochs > 0) spec.models[0].epochs = epochs;
    }
    spec.distill.mode = DistillSettings::Mode::off;
    spec.expand_enabled = false;
    const std::string run_dir = cfg.out_dir + "/baseline_" + spec.models[0].config.name;
    ChainState state = run_chain(spec, data.train, &data.eval, run_dir);
    std::printf("baseline %s: metric %.2f, %.3f GMACs, checkpoint %s\n",
                state.models[0].model.c_str(), state.models[0].final_metric,
                static_cast<double>(state.models[0].run_macs) / 1e9,
                state.models[0].checkpoint.c_str());
    return 0;
}

int cmd_train_chain(const std::string& config_path, const std::string& out, int64_t seed) {
    ExperimentConfig cfg = load_cfg(config_path, out, seed);
    ResolvedData data = resolve_data(cfg, cfg.out_dir + "/data");
    ChainSpec spec = to_chain_spec(cfg);
    const std::string run_dir = cfg.out_dir + "/chain";
    ChainState state = run_chain(spec, data.train, &data.eval, run_dir);
    for (const auto& m : state.models)
        std::printf("%-12s metric %6.2f  run %10.3f GMACs  cumulative %10.3f GMACs\n",
                    m.model.c_str(), m.final_metric, static_cast<double>(m.run_macs) / 1e9,
                    static_cast<double>(m.cumulative_macs) / 1e9);
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest) {
    LoadedCheckpoint ckpt = load_checkpoint(checkpoint);
    Dataset split = load_dataset(load_manifest(manifest));
    EvalResult r = eval_retrieval(ckpt.params, ckpt.config, split);
    nlohmann::json j{{"model", ckpt.config.name},
                     {"r1_t2i", r.r1_t2i},
                     {"r1_i2t", r.r1_i2t},
                     {"class_top1", r.class_top1},
                     {"images", r.images},
                     {"captions", r.captions},
                     {"lta_metric", lta_metric(r)}};
    std::printf("%s\n", j.dump(2).c_str());
    return 0;
}

int cmd_macs(const std::string& preset, int64_t captions) {
    if (preset == "vit_ref") {
        std::printf("%-12s %-20s %12s %12s %8s\n", "model", "quantity", "computed",
                    "reference", "error");
        bool ok = true;
        for (const auto& r : validate_reference_macs()) {
            std::printf("%-12s %-20s %12.3f %12.3f %+7.2f%%\n", r.model.c_str(),
                        r.quantity.c_str(), r.computed, r.reference, r.pct_error);
            const double tol = r.quantity.ends_with("params_m") ? 2.0 : 5.0;
            ok = ok && std::fabs(r.pct_error) <= tol;
        }
        std::printf("reference validation: %s\n", ok ? "PASS" : "FAIL");
        return ok ? 0 : 4;
    }
    const FamilyPreset fam = preset_family(preset);
    std::printf("%-12s %14s %14s %14s %14s %12s\n", "model", "C_f", "C_f_first", "C_b", "C_t",
                "params");
    for (const auto& m : fam.models) {
        const MacBreakdown b = mac_breakdown(m, captions);
        std::printf("%-12s %14llu %14llu %14llu %14llu %12llu\n", m.name.c_str(),
                    static_cast<unsigned long long>(b.c_f),
                    static_cast<unsigned long long>(b.c_f_first),
                    static_cast<unsigned long long>(b.c_b),
                    static_cast<unsigned long long>(b.c_t),
                    static_cast<unsigned long long>(b.params));
    }
    return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& out, int64_t seed,
              const std::string& axis, const std::string& values, int threads) {
    ExperimentConfig cfg = load_cfg(config_path, out, seed);
    ResolvedData data = resolve_data(cfg, cfg.out_dir + "/data");
    SweepConfig sc;
    sc.axis = sweep_axis_from(axis);
    std::string v = values;
    while (!v.empty()) {
        const size_t comma = v.find(',');
        sc.values.push_back(v.substr(0, comma));
        v = comma == std::string::npos ? "" : v.substr(comma + 1);
    }
    sc.base = to_chain_spec(cfg);
    sc.out_dir = cfg.out_dir + "/sweep_" + axis;
    sc.threads = threads;
    SweepReport report = run_sweep(sc, data.train, data.eval);
    for (const auto& arm : report.arms) {
        if (arm.ok)
            std::printf("arm %-12s metric %6.2f  macs %14.0f  %s %.3f\n", arm.value.c_str(),
                        arm.metric, arm.macs, arm.extra_name.c_str(), arm.extra);
        else
            std::printf("arm %-12s FAILED: %s\n", arm.value.c_str(), arm.error.c_str());
    }
    if (!report.note.empty()) std::printf("note: %s\n", report.note.c_str());
    std::printf("sweep artifacts under %s\n", sc.out_dir.c_str());
    return report.all_ok ? 0 : 3;
}

int cmd_report(const std::string& run_dir, double threshold) {
    emit_report(run_dir, threshold);
    std::printf("report written to %s/report.md\n", run_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"chain-of-models pre-training (desk scale)"};
    app.require_subcommand(1);

    std::string config_path, out, model, checkpoint, manifest, axis, values, run_dir;
    std::string preset = "vit_ref";
    int64_t seed = -1, epochs = -1, captions = 4;
    int threads = 0;
    double threshold = 2.0;

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset and splits");
    gen->add_option("--config", config_path)->required();
    gen->add_option("--out", out);
    gen->add_option("--seed", seed);

    auto* tb = app.add_subcommand("train-baseline", "train one model from scratch, task loss only");
    tb->add_option("--config", config_path)->required();
    tb->add_option("--out", out);
    tb->add_option("--seed", seed);
    tb->add_option("--model", model, "preset name (default: first chain model)");
    tb->add_option("--epochs", epochs);

    auto* tc = app.add_subcommand("train-chain", "run the full model chain");
    tc->add_option("--config", config_path)->required();
    tc->add_option("--out", out);
    tc->add_option("--seed", seed);

    auto* ev = app.add_subcommand("eval", "retrieval evaluation of a checkpoint");
    ev->add_option("--checkpoint", checkpoint)->required();
    ev->add_option("--manifest", manifest, "eval split manifest")->required();

    auto* mc = app.add_subcommand("macs", "analytic MAC/param accounting");
    mc->add_option("--preset", preset, "vit_ref (reference validation) or a family name");
    mc->add_option("--captions", captions);

    auto* sw = app.add_subcommand(
        "sweep", "axis sweep (epochs, smallest-model, expansion-ratio, alpha, components)");
    sw->add_option("--config", config_path)->required();
    sw->add_option("--axis", axis)->required();
    sw->add_option("--values", values, "comma-separated arm values")->required();
    sw->add_option("--out", out);
    sw->add_option("--seed", seed);
    sw->add_option("--threads", threads, "parallel arms (default COMCHAIN_THREADS or 2)");

    auto* rp = app.add_subcommand("report", "markdown + SVG report from a run dir");
    rp->add_option("--out", run_dir, "run directory (contains chain_state.json)")->required();
    rp->add_option("--threshold", threshold, "LTA threshold in points");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(config_path, out, seed);
        if (tb->parsed()) return cmd_train_baseline(config_path, out, seed, model, epochs);
        if (tc->parsed()) return cmd_train_chain(config_path, out, seed);
        if (ev->parsed()) return cmd_eval(checkpoint, manifest);
        if (mc->parsed()) return cmd_macs(preset, captions);
        if (sw->parsed()) return cmd_sweep(config_path, out, seed, axis, values, threads);
        if (rp->parsed()) return cmd_report(run_dir, threshold);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}
