#include "comchain/chain.hpp"

#include "comchain/checkpoint.hpp"
#include "comchain/util.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

namespace comchain {

using nlohmann::json;

void ChainSpec::validate() const {
    if (models.empty()) throw ChainError("chain spec: needs at least one model");
    for (const auto& m : models) {
        m.config.validate();
        if (m.epochs < 1) throw ChainError("chain spec: every epoch budget must be >= 1");
    }
    for (size_t i = 1; i < models.size(); ++i)
        if (param_count(models[i].config) <= param_count(models[i - 1].config))
            throw ChainError("chain spec: models must strictly increase in parameter count");
    if (batch_size < 1) throw ChainError("chain spec: batch size must be >= 1");
}

std::vector<int64_t> allocate_epochs(int64_t first_transfer_epochs, int64_t decrement,
                                     int64_t chain_length, int64_t min_epochs) {
    if (min_epochs < 1 || first_transfer_epochs < min_epochs || decrement < 0)
        throw ChainError("allocate_epochs: need E_first >= E_min >= 1 and d >= 0");
    std::vector<int64_t> out;
    for (int64_t i = 2; i <= chain_length; ++i)
        out.push_back(std::max(min_epochs, first_transfer_epochs - (i - 2) * decrement));
    return out;
}

std::vector<int64_t> relax_schedule(const std::vector<int64_t>& epochs, double gamma) {
    if (!(gamma > 1.0)) throw ChainError("relax_schedule: gamma must exceed 1");
    std::vector<int64_t> out;
    for (int64_t e : epochs)
        out.push_back(static_cast<int64_t>(std::ceil(static_cast<double>(e) * gamma)));
    return out;
}

LtaVerdict lta_check(double candidate_metric, double baseline_metric, double threshold) {
    LtaVerdict v;
    v.candidate = candidate_metric;
    v.baseline = baseline_metric;
    v.threshold = threshold;
    v.pass = (baseline_metric - candidate_metric) < threshold;
    return v;
}

namespace {

json result_to_json(const ChainModelResult& r) {
    return json{{"model", r.model},
                {"checkpoint", r.checkpoint},
                {"sha256", r.sha256},
                {"run_macs", r.run_macs},
                {"cumulative_macs", r.cumulative_macs},
                {"final_metric", r.final_metric},
                {"class_top1", r.class_top1},
                {"calibrated_alpha", r.calibrated_alpha},
                {"first_batch_ifd_task_ratio", r.first_batch_ifd_task_ratio}};
}

ChainModelResult result_from_json(const json& j) {
    ChainModelResult r;
    r.model = j.at("model");
    r.checkpoint = j.at("checkpoint");
    r.sha256 = j.at("sha256");
    r.run_macs = j.at("run_macs");
    r.cumulative_macs = j.at("cumulative_macs");
    r.final_metric = j.at("final_metric");
    r.class_top1 = j.at("class_top1");
    r.calibrated_alpha = j.at("calibrated_alpha");
    r.first_batch_ifd_task_ratio = j.at("first_batch_ifd_task_ratio");
    return r;
}

// exclusive ownership of an output directory for the duration of a run
struct DirLock {
    std::string path;
    explicit DirLock(const std::string& dir) : path(dir + "/lock") {
        std::filesystem::create_directories(dir);
        if (std::filesystem::exists(path))
            throw ChainError("output dir is locked by another run (stale? remove " + path + ")");
        std::ofstream out(path);
        out << "lock\n";
    }
    ~DirLock() { std::filesystem::remove(path); }
};

}  // namespace

void save_chain_state(const ChainState& state, const std::string& path) {
    json j{{"completed", state.completed}, {"cumulative_macs", state.cumulative_macs}};
    j["models"] = json::array();
    for (const auto& r : state.models) j["models"].push_back(result_to_json(r));
    const std::string text = j.dump(2) + "\n";
    write_file(path, text.data(), text.size());
}

ChainState load_chain_state(const std::string& path) {
    auto bytes = read_file(path);
    json j = json::parse(bytes.begin(), bytes.end());
    ChainState state;
    state.completed = j.at("completed");
    state.cumulative_macs = j.at("cumulative_macs");
    for (const auto& m : j.at("models")) state.models.push_back(result_from_json(m));
    return state;
}

ChainState run_chain(const ChainSpec& spec, const Dataset& train, const Dataset* eval_split,
                     const std::string& out_dir) {
    spec.validate();
    DirLock lock(out_dir);
    const std::string state_path = out_dir + "/chain_state.json";

    ChainState state;
    if (std::filesystem::exists(state_path)) state = load_chain_state(state_path);

    for (size_t i = static_cast<size_t>(state.completed); i < spec.models.size(); ++i) {
        const ModelConfig& cfg = spec.models[i].config;
        const bool is_first = i == 0;

        ParamSet init;
        LoadedCheckpoint teacher;  // stays empty for the first model
        if (is_first) {
            Rng rng(spec.seed, "init/" + cfg.name);
            init = build_params(cfg, rng);
        } else {
            const auto& prev = state.models[i - 1];
            teacher = load_checkpoint(prev.checkpoint, &spec.models[i - 1].config);
            if (teacher.sha256 != prev.sha256)
                throw ChainError("teacher checkpoint " + prev.checkpoint +
                                 " changed since it was written (relay integrity)");
            if (spec.expand_enabled) {
                ExpandSpec es = spec.expand;
                es.seed = spec.seed ^ fnv1a64("expand/" + cfg.name);
                init = expand_model(teacher.params, teacher.config, cfg, es).params;
            } else {
                Rng rng(spec.seed, "init/" + cfg.name);
                init = build_params(cfg, rng);
            }
        }

        const std::string model_dir = out_dir + "/" + cfg.name;
        std::filesystem::create_directories(model_dir);

        TrainJob job;
        job.config = cfg;
        job.init_params = std::move(init);
        job.train = &train;
        job.eval = eval_split;
        job.epochs = spec.models[i].epochs;
        job.batch_size = spec.batch_size;
        job.optim = is_first ? spec.optim_baseline : spec.optim_chain;
        job.distill = spec.distill;
        if (!is_first) {
            job.teacher_params = &teacher.params;
            job.teacher_config = &teacher.config;
        }
        job.seed = spec.seed;
        job.run_id = cfg.name + "-seed" + std::to_string(spec.seed);
        job.metrics_path = model_dir + "/metrics.jsonl";
        job.initial_cumulative_macs = state.cumulative_macs;

        TrainResult tr = train_model(std::move(job));

        ChainModelResult r;
        r.model = cfg.name;
        r.checkpoint = model_dir + "/checkpoint.comc";
        r.sha256 = save_checkpoint(tr.params, cfg, r.checkpoint);
        r.run_macs = tr.run_macs;
        state.cumulative_macs += tr.run_macs;
        r.cumulative_macs = state.cumulative_macs;
        if (tr.final_eval) {
            r.final_metric = lta_metric(*tr.final_eval);
            r.class_top1 = 100.0 * tr.final_eval->class_top1;
        }
        r.calibrated_alpha = tr.calibrated_alpha;
        r.first_batch_ifd_task_ratio = tr.first_batch_ifd_task_ratio;

        if (!is_first) {
            // frozen-teacher contract: bytes on disk must be untouched
            const auto& prev = state.models[i - 1];
            if (sha256_file(prev.checkpoint) != prev.sha256)
                throw ChainError("teacher checkpoint mutated during chain step for " + cfg.name);
        }

        state.models.push_back(std::move(r));
        state.completed = static_cast<int>(i) + 1;
        save_chain_state(state, state_path);
    }
    return state;
}

FirstPairResult validate_first_pair(const ChainSpec& spec, const Dataset& train,
                                    const Dataset& eval_split, double baseline_metric_m2,
                                    const std::string& out_dir, double gamma, int max_retries) {
    if (spec.models.size() < 2)
        throw ChainError("validate_first_pair: chain needs at least two models");
    FirstPairResult res;
    res.spec = spec;
    res.spec.models.resize(2);

    for (int attempt = 0;; ++attempt) {
        const std::string dir = out_dir + "/attempt" + std::to_string(attempt);
        if (attempt > 0) {
            // reuse the trained m1 from the first attempt; only m2 retrains
            const std::string m1 = res.spec.models[0].config.name;
            const std::string src = out_dir + "/attempt0";
            std::filesystem::create_directories(dir + "/" + m1);
            for (const char* f : {"/checkpoint.comc", "/metrics.jsonl"})
                std::filesystem::copy_file(src + "/" + m1 + f, dir + "/" + m1 + f,
                                           std::filesystem::copy_options::overwrite_existing);
            ChainState carried = load_chain_state(src + "/chain_state.json");
            carried.completed = 1;
            carried.models.resize(1);
            carried.cumulative_macs = carried.models[0].cumulative_macs;
            carried.models[0].checkpoint = dir + "/" + m1 + "/checkpoint.comc";
            save_chain_state(carried, dir + "/chain_state.json");
        }
        ChainState state = run_chain(res.spec, train, &eval_split, dir);
        const double candidate = state.models[1].final_metric;
        res.history.push_back(candidate);
        res.verdict = lta_check(candidate, baseline_metric_m2, spec.lta_threshold);
        if (res.verdict.pass) {
            // carry any relaxation back onto the full chain
            std::vector<int64_t> tail;
            for (size_t i = 1; i < spec.models.size(); ++i)
                tail.push_back(spec.models[i].epochs);
            for (int k = 0; k < res.relaxations; ++k) tail = relax_schedule(tail, gamma);
            res.spec = spec;
            for (size_t i = 1; i < res.spec.models.size(); ++i)
                res.spec.models[i].epochs = tail[i - 1];
            return res;
        }
        if (attempt >= max_retries) {
            std::string history;
            for (double h : res.history) history += " " + format_double(h, 2);
            throw ChainError("schedule infeasible: first pair failed LTA after " +
                             std::to_string(max_retries) + " relaxations; candidates:" + history +
                             " vs baseline " + format_double(baseline_metric_m2, 2));
        }
        res.relaxations += 1;
        std::vector<int64_t> tail{res.spec.models[1].epochs};
        res.spec.models[1].epochs = relax_schedule(tail, gamma)[0];
    }
}

}  // namespace comchain
