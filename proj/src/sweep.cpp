#include "comchain/sweep.hpp"

#include "comchain/report.hpp"
#include "comchain/util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

namespace comchain {

SweepAxis sweep_axis_from(const std::string& s) {
    if (s == "epochs") return SweepAxis::epochs;
    if (s == "smallest-model") return SweepAxis::smallest_model;
    if (s == "expansion-ratio") return SweepAxis::expansion_ratio;
    if (s == "alpha") return SweepAxis::alpha;
    if (s == "components") return SweepAxis::components;
    throw ChainError("unknown sweep axis: " + s);
}

const char* to_string(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::epochs: return "epochs";
        case SweepAxis::smallest_model: return "smallest-model";
        case SweepAxis::expansion_ratio: return "expansion-ratio";
        case SweepAxis::alpha: return "alpha";
        case SweepAxis::components: return "components";
    }
    return "?";
}

std::vector<ModelConfig> geometric_nano_chain(int64_t width_from, int64_t width_to,
                                              double param_ratio) {
    if (!(param_ratio > 1.0)) throw ChainError("geometric chain: param ratio must exceed 1");
    // params scale ~ width^2 at fixed depth, so each hop multiplies width by
    // sqrt(ratio), rounded to a head_dim multiple
    const double width_factor = std::sqrt(param_ratio);
    std::vector<int64_t> widths{width_from};
    double w = static_cast<double>(width_from);
    while (widths.back() < width_to) {
        w *= width_factor;
        int64_t next = static_cast<int64_t>(std::llround(w / 16.0)) * 16;
        next = std::max(next, widths.back() + 16);
        next = std::min(next, width_to);
        widths.push_back(next);
    }
    std::vector<ModelConfig> chain;
    for (int64_t wd : widths) {
        // deepest model in the nano family doubles depth
        const int64_t depth = wd >= width_to ? 4 : 2;
        chain.push_back(nano_config("nano_w" + std::to_string(wd) + "d" + std::to_string(depth),
                                    wd, depth));
    }
    return chain;
}

namespace {

int resolve_threads(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("COMCHAIN_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    return 2;
}

// m1 is identical in every arm for the alpha/components axes; train it once
// and copy into each arm dir.
void seed_arm_with_m1(const std::string& shared_dir, const std::string& arm_dir,
                      const std::string& m1) {
    std::filesystem::create_directories(arm_dir + "/" + m1);
    for (const char* f : {"/checkpoint.comc", "/metrics.jsonl"})
        std::filesystem::copy_file(shared_dir + "/" + m1 + f, arm_dir + "/" + m1 + f,
                                   std::filesystem::copy_options::overwrite_existing);
    ChainState carried = load_chain_state(shared_dir + "/chain_state.json");
    carried.completed = 1;
    carried.models.resize(1);
    carried.cumulative_macs = carried.models[0].cumulative_macs;
    carried.models[0].checkpoint = arm_dir + "/" + m1 + "/checkpoint.comc";
    save_chain_state(carried, arm_dir + "/chain_state.json");
}

struct ArmPlan {
    std::string value;
    ChainSpec spec;
    std::string dir;
    bool wants_m1_seed = false;
    double solo_macs = 0;  // for reduced-MACs axes
    double baseline_accum = 0;
};

}  // namespace

SweepReport run_sweep(const SweepConfig& config, const Dataset& train,
                      const Dataset& eval_split) {
    config.base.validate();
    if (config.values.empty()) throw ChainError("sweep: no values given");
    std::filesystem::create_directories(config.out_dir);
    const int64_t n_train = static_cast<int64_t>(train.class_ids.size());
    const int64_t scratch_epochs = config.base.models.front().epochs;

    std::vector<ArmPlan> plans;
    for (const auto& value : config.values) {
        ArmPlan plan;
        plan.value = value;
        plan.spec = config.base;
        plan.dir = config.out_dir + "/arm_" + value;
        std::replace(plan.dir.begin(), plan.dir.end(), '.', 'p');
        switch (config.axis) {
            case SweepAxis::epochs: {
                // scratch baseline of the first transfer model at E epochs
                const int64_t e = std::stoll(value);
                plan.spec.models = {ChainModel{config.base.models.at(1).config, e}};
                plan.spec.expand_enabled = false;
                plan.spec.distill.mode = DistillSettings::Mode::off;
                break;
            }
            case SweepAxis::smallest_model: {
                auto it = std::find_if(config.base.models.begin(), config.base.models.end(),
                                       [&](const ChainModel& m) {
                                           return m.config.name == value;
                                       });
                if (it == config.base.models.end())
                    throw ChainError("sweep: model " + value + " is not in the base chain");
                plan.spec.models.assign(it, config.base.models.end());
                plan.spec.models.front().epochs = scratch_epochs;
                const auto& largest = config.base.models.back().config;
                plan.solo_macs = static_cast<double>(
                    run_macs(largest, n_train, scratch_epochs, nullptr,
                             largest.captions_per_image));
                break;
            }
            case SweepAxis::expansion_ratio: {
                const double ratio = std::stod(value);
                const auto chain =
                    geometric_nano_chain(config.base.models.front().config.image.width,
                                         config.base.models.back().config.image.width, ratio);
                plan.spec.models.clear();
                const int64_t n_models = static_cast<int64_t>(chain.size());
                const int64_t e2 = config.base.models.size() > 1
                                       ? config.base.models[1].epochs
                                       : scratch_epochs;
                const int64_t e_last = config.base.models.back().epochs;
                for (int64_t i = 0; i < n_models; ++i) {
                    int64_t epochs = scratch_epochs;
                    if (i > 0)
                        epochs = n_models > 2
                                     ? e2 + (e_last - e2) * (i - 1) / (n_models - 2)
                                     : e_last;
                    plan.spec.models.push_back({chain[static_cast<size_t>(i)],
                                                std::max<int64_t>(1, epochs)});
                }
                for (const auto& m : plan.spec.models)
                    plan.baseline_accum += static_cast<double>(
                        run_macs(m.config, n_train, scratch_epochs, nullptr,
                                 m.config.captions_per_image));
                break;
            }
            case SweepAxis::alpha: {
                const double r = std::stod(value);
                plan.spec.models.assign(config.base.models.begin(),
                                        config.base.models.begin() + 2);
                plan.spec.distill.mode = DistillSettings::Mode::ratio;
                plan.spec.distill.ratio = r;
                plan.wants_m1_seed = true;
                break;
            }
            case SweepAxis::components: {
                plan.spec.models.assign(config.base.models.begin(),
                                        config.base.models.begin() + 2);
                if (value == "none") {
                    plan.spec.expand_enabled = false;
                    plan.spec.distill.mode = DistillSettings::Mode::off;
                } else if (value == "iwi") {
                    plan.spec.distill.mode = DistillSettings::Mode::off;
                } else if (value == "ifd") {
                    plan.spec.expand_enabled = false;
                } else if (value == "both") {
                    // base settings
                } else {
                    throw ChainError("sweep: components value must be one of "
                                     "none/iwi/ifd/both, got " + value);
                }
                plan.wants_m1_seed = true;
                break;
            }
        }
        plans.push_back(std::move(plan));
    }

    // shared m1 for arms that reuse it
    const bool need_shared =
        std::any_of(plans.begin(), plans.end(), [](const ArmPlan& p) { return p.wants_m1_seed; });
    const std::string shared_dir = config.out_dir + "/shared_m1";
    if (need_shared && !std::filesystem::exists(shared_dir + "/chain_state.json")) {
        ChainSpec m1_spec = config.base;
        m1_spec.models.resize(1);
        m1_spec.distill.mode = DistillSettings::Mode::off;
        run_chain(m1_spec, train, &eval_split, shared_dir);
    }

    SweepReport report;
    report.axis = config.axis;
    report.arms.assign(plans.size(), ArmResult{});
    std::atomic<size_t> next{0};
    const int threads = resolve_threads(config.threads);
    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= plans.size()) return;
            ArmResult& arm = report.arms[i];
            const ArmPlan& plan = plans[i];
            arm.value = plan.value;
            try {
                if (plan.wants_m1_seed && !std::filesystem::exists(plan.dir + "/chain_state.json"))
                    seed_arm_with_m1(shared_dir, plan.dir, plan.spec.models[0].config.name);
                const ChainState state = run_chain(plan.spec, train, &eval_split, plan.dir);
                arm.metric = state.models.back().final_metric;
                arm.macs = static_cast<double>(state.cumulative_macs);
                switch (config.axis) {
                    case SweepAxis::smallest_model:
                        arm.extra_name = "reduced_macs_pct";
                        arm.extra = 100.0 * (1.0 - arm.macs / plan.solo_macs);
                        break;
                    case SweepAxis::expansion_ratio:
                        arm.extra_name = "accumulated_ratio";
                        arm.extra = plan.baseline_accum / arm.macs;
                        break;
                    default:
                        arm.extra_name = "";
                        break;
                }
                arm.ok = true;
            } catch (const std::exception& e) {
                arm.ok = false;
                arm.error = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    report.all_ok = std::all_of(report.arms.begin(), report.arms.end(),
                                [](const ArmResult& a) { return a.ok; });
    if (config.axis == SweepAxis::epochs && report.all_ok) {
        for (size_t i = 1; i < report.arms.size(); ++i)
            if (report.arms[i].metric < report.arms[i - 1].metric - 1e-9)
                report.note = "R@1 trend is not monotone over the epoch values";
    }

    save_sweep_csv(report, config.out_dir + "/sweep.csv");
    save_sweep_svg(report, config.out_dir + "/sweep.svg");
    return report;
}

void save_sweep_csv(const SweepReport& report, const std::string& path) {
    std::ostringstream csv;
    csv << "axis,value,ok,metric,macs,extra_name,extra,error\n";
    for (const auto& a : report.arms) {
        std::string err = a.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        csv << to_string(report.axis) << "," << a.value << "," << (a.ok ? 1 : 0) << ","
            << format_double(a.metric, 4) << "," << format_double(a.macs, 0) << ","
            << a.extra_name << "," << format_double(a.extra, 4) << "," << err << "\n";
    }
    const std::string text = csv.str();
    write_file(path, text.data(), text.size());
}

void save_sweep_svg(const SweepReport& report, const std::string& path) {
    Series s;
    s.label = "final mean R@1 (%)";
    for (size_t i = 0; i < report.arms.size(); ++i) {
        if (!report.arms[i].ok) continue;
        s.x.push_back(static_cast<double>(i));
        s.y.push_back(report.arms[i].metric);
    }
    const std::string svg = svg_line_chart(std::string("sweep: ") + to_string(report.axis),
                                           "arm index", "metric", {s});
    write_file(path, svg.data(), svg.size());
}

}  // namespace comchain
