#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "comchain/checkpoint.hpp"
#include "comchain/eval.hpp"
#include "comchain/experiment.hpp"
#include "comchain/metrics.hpp"
#include "comchain/report.hpp"
#include "comchain/sweep.hpp"
#include "comchain/util.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

using namespace comchain;

namespace {

struct TempDir {
    std::string path;
    explicit TempDir(const std::string& name) {
        path = (std::filesystem::temp_directory_path() / name).string();
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

// stack-based well-formedness check, enough for self-generated SVG
bool xml_well_formed(const std::string& text) {
    std::vector<std::string> stack;
    size_t i = 0;
    if (text.find("<svg") == std::string::npos) return false;
    while ((i = text.find('<', i)) != std::string::npos) {
        const size_t end = text.find('>', i);
        if (end == std::string::npos) return false;
        std::string tag = text.substr(i + 1, end - i - 1);
        i = end + 1;
        if (tag.starts_with("?") || tag.starts_with("!")) continue;
        const bool self_closing = tag.ends_with("/");
        const bool closing = tag.starts_with("/");
        std::string name = tag.substr(closing ? 1 : 0);
        const size_t space = name.find_first_of(" \t\n/");
        if (space != std::string::npos) name = name.substr(0, space);
        if (closing) {
            if (stack.empty() || stack.back() != name) return false;
            stack.pop_back();
        } else if (!self_closing) {
            stack.push_back(name);
        }
    }
    return stack.empty();
}

}  // namespace

TEST_CASE("checkpoint roundtrip is bit-exact for every preset") {
    TempDir dir("comchain_ckpt");
    for (const char* name : {"nano_t", "nano_s", "nano_b"}) {
        const auto cfg = preset_model(name);
        Rng rng(fnv1a64(name));
        const ParamSet params = build_params(cfg, rng);
        const std::string path = dir.path + "/" + name + ".comc";
        const std::string hash = save_checkpoint(params, cfg, path);
        const LoadedCheckpoint back = load_checkpoint(path);
        CHECK(back.sha256 == hash);
        CHECK(back.config.name == cfg.name);
        REQUIRE(back.params.size() == params.size());
        for (const auto& [pname, t] : params) {
            const auto& u = back.params.at(pname);
            REQUIRE(t.shape == u.shape);
            CHECK(std::memcmp(t.data.data(), u.data.data(), t.data.size() * sizeof(float)) == 0);
        }
    }
}

TEST_CASE("checkpoint integrity errors") {
    TempDir dir("comchain_ckpt_err");
    const auto cfg = preset_model("nano_t");
    Rng rng(2);
    const ParamSet params = build_params(cfg, rng);
    const std::string path = dir.path + "/m.comc";
    save_checkpoint(params, cfg, path);

    SUBCASE("truncation") {
        const auto bytes = read_file(path);
        write_file(path, bytes.data(), bytes.size() / 2);
        CHECK_THROWS_WITH_AS((void)load_checkpoint(path), doctest::Contains("truncated"),
                             CheckpointError);
    }
    SUBCASE("bad magic") {
        auto bytes = read_file(path);
        bytes[0] = 'X';
        write_file(path, bytes.data(), bytes.size());
        CHECK_THROWS_WITH_AS((void)load_checkpoint(path), doctest::Contains("magic"),
                             CheckpointError);
    }
    SUBCASE("schema mismatch names the offending tensor") {
        const auto other = preset_model("nano_s");
        CHECK_THROWS_WITH_AS((void)load_checkpoint(path, &other),
                             doctest::Contains("image.patch_embed.weight"), CheckpointError);
    }
}

TEST_CASE("metrics rows roundtrip and enforce monotone step/MACs") {
    TempDir dir("comchain_metrics");
    const std::string path = dir.path + "/m.jsonl";
    MetricsWriter w(path);
    MetricsRow row;
    row.run_id = "r";
    row.model = "m";
    row.epoch = 1;
    row.step = 10;
    row.l_task = 0.5;
    row.l_ifd = 0.05;
    row.l_total = 0.55;
    row.cumulative_macs = 1000;
    row.wall_seconds = 1.5;
    w.append(row);
    row.epoch = 2;
    row.step = 20;
    row.cumulative_macs = 2000;
    row.r1_t2i = 0.25;
    row.r1_i2t = 0.5;
    row.class_top1 = 0.75;
    w.append(row);

    const auto rows = read_metrics(path);
    REQUIRE(rows.size() == 2);
    CHECK_FALSE(rows[0].r1_t2i.has_value());
    CHECK(rows[1].r1_t2i.value() == 0.25);
    CHECK(rows[1].cumulative_macs == 2000);

    MetricsRow bad = row;
    bad.step = 5;  // steps must not go backwards
    CHECK_THROWS(w.append(bad));
}

TEST_CASE("eval_retrieval: chance level for random params, perfect for one-hot") {
    TempDir dir("comchain_eval");
    SyntheticSpec spec;
    spec.n_classes = 8;
    spec.samples_per_class = 4;
    spec.vocab = 64;
    spec.seed = 13;
    const Dataset data = load_dataset(generate(spec, dir.path));

    SUBCASE("untrained model sits near chance") {
        const auto cfg = preset_model("nano_t");
        Rng rng(3);
        const ParamSet params = build_params(cfg, rng);
        const EvalResult r = eval_retrieval(params, cfg, data);
        // K = 32 images; 3 sigma of Binomial(n=128, p=1/32) around 1/32
        const double p = 1.0 / 32.0;
        const double sigma3 = 3.0 * std::sqrt(p * (1 - p) / 128.0);
        CHECK(r.r1_t2i < p + sigma3 + 1e-9);
        CHECK(r.images == 32);
        CHECK(r.captions == 128);
    }

    SUBCASE("empty split is an error") {
        Dataset empty = data;
        empty.class_ids.clear();
        const auto cfg = preset_model("nano_t");
        Rng rng(3);
        const ParamSet params = build_params(cfg, rng);
        CHECK_THROWS_AS((void)eval_retrieval(params, cfg, empty), DataError);
    }
}

TEST_CASE("lta metric is the mean of both retrieval directions in percent") {
    EvalResult r;
    r.r1_t2i = 0.50;
    r.r1_i2t = 0.70;
    CHECK(lta_metric(r) == doctest::Approx(60.0));
}

TEST_CASE("svg charts are well-formed XML") {
    Series s;
    s.label = "loss";
    for (int i = 0; i < 12; ++i) {
        s.x.push_back(i);
        s.y.push_back(std::exp(-0.3 * i));
    }
    const std::string svg = svg_line_chart("test & chart", "epoch", "loss", {s});
    CHECK(xml_well_formed(svg));
    CHECK(svg.find("<polyline") != std::string::npos);
}

TEST_CASE("report generation is deterministic and validates inputs") {
    TempDir dir("comchain_report");

    SUBCASE("missing inputs are reported with the expected file name") {
        CHECK_THROWS_WITH_AS(emit_report(dir.path), doctest::Contains("chain_state.json"),
                             ReportError);
    }

    SUBCASE("byte-identical regeneration") {
        // synthesize a minimal completed run
        ChainState state;
        state.completed = 1;
        ChainModelResult m;
        m.model = "tiny";
        m.checkpoint = dir.path + "/tiny/checkpoint.comc";
        m.sha256 = "0";
        m.run_macs = 1000;
        m.cumulative_macs = 1000;
        m.final_metric = 75.0;
        state.models.push_back(m);
        state.cumulative_macs = 1000;
        std::filesystem::create_directories(dir.path + "/tiny");
        save_chain_state(state, dir.path + "/chain_state.json");
        MetricsWriter w(dir.path + "/tiny/metrics.jsonl");
        for (int e = 1; e <= 3; ++e) {
            MetricsRow row;
            row.run_id = "tiny";
            row.model = "tiny";
            row.epoch = e;
            row.step = 10 * e;
            row.l_task = 1.0 / e;
            row.l_total = 1.0 / e;
            row.cumulative_macs = static_cast<uint64_t>(300 * e);
            row.wall_seconds = 0.1 * e;
            row.r1_t2i = 0.2 * e;
            row.r1_i2t = 0.25 * e;
            row.class_top1 = 0.3 * e;
            w.append(row);
        }
        save_baselines({{"tiny", 80.0, 2000.0}}, dir.path + "/baselines.json");

        emit_report(dir.path, 2.0);
        const auto first = read_file(dir.path + "/report.md");
        emit_report(dir.path, 2.0);
        const auto second = read_file(dir.path + "/report.md");
        CHECK(first == second);

        const std::string md(first.begin(), first.end());
        CHECK(md.find("## Cost vs baseline") != std::string::npos);
        CHECK(md.find("2.00x") != std::string::npos);  // 2000/1000 ratio
        CHECK(md.find("fail") != std::string::npos);   // 75 vs 80 at threshold 2

        const auto svg_bytes = read_file(dir.path + "/curves_tiny_loss.svg");
        CHECK(xml_well_formed(std::string(svg_bytes.begin(), svg_bytes.end())));
    }
}

TEST_CASE("experiment config loads with defaults and builds a chain spec") {
    TempDir dir("comchain_cfg");
    const std::string path = dir.path + "/cfg.json";
    const std::string text = R"({
        "dataset": {"n_classes": 4, "samples_per_class": 4, "seed": 3},
        "models": [{"name": "nano_t", "epochs": 2}, {"name": "nano_s", "epochs": 1}],
        "optimizer": {"lr": 0.002},
        "batch_size": 8,
        "seed": 9
    })";
    write_file(path, text.data(), text.size());
    const ExperimentConfig cfg = load_experiment(path);
    CHECK(cfg.optim_baseline.warmup_steps == 400);
    CHECK(cfg.optim_chain.warmup_steps == 50);
    CHECK(cfg.optim_baseline.lr == 0.002);
    CHECK(cfg.optim_chain.lr == 0.002);
    CHECK(cfg.dataset.n_classes == 4);
    const ChainSpec spec = to_chain_spec(cfg);
    CHECK_NOTHROW(spec.validate());
    CHECK(spec.models[1].config.name == "nano_s");
    CHECK(spec.seed == 9);

    CHECK(model_from_name("nano_w48d3").image.width == 48);
    CHECK(model_from_name("nano_w48d3").image.depth == 3);
    CHECK_THROWS_AS((void)model_from_name("not_a_model"), ConfigError);
}

TEST_CASE("single-value sweep equals a plain run") {
    TempDir dir("comchain_sweep1");
    SyntheticSpec dspec;
    dspec.n_classes = 4;
    dspec.samples_per_class = 6;
    dspec.vocab = 64;
    dspec.sigma = 0.1;
    dspec.seed = 31;
    const auto manifest = generate(dspec, dir.path + "/data");
    const auto parts = split(manifest, {0.75, 0.25}, 1, dir.path + "/splits");
    const Dataset train = load_dataset(parts[0]);
    const Dataset eval_split = load_dataset(parts[1]);

    SweepConfig sc;
    sc.axis = SweepAxis::epochs;
    sc.values = {"2"};
    sc.base.models = {{nano_config("tiny_a", 16, 1), 2}, {nano_config("tiny_b", 32, 1), 2}};
    sc.base.optim_baseline.warmup_steps = 4;
    sc.base.optim_chain.warmup_steps = 2;
    sc.base.batch_size = 8;
    sc.base.seed = 5;
    sc.out_dir = dir.path + "/sweep";
    sc.threads = 1;
    const SweepReport rep = run_sweep(sc, train, eval_split);
    REQUIRE(rep.arms.size() == 1);
    CHECK(rep.all_ok);

    // the same arm as a plain single-model baseline run
    ChainSpec plain = sc.base;
    plain.models = {ChainModel{sc.base.models[1].config, 2}};
    plain.expand_enabled = false;
    plain.distill.mode = DistillSettings::Mode::off;
    const ChainState state = run_chain(plain, train, &eval_split, dir.path + "/plain");
    CHECK(state.models[0].final_metric == doctest::Approx(rep.arms[0].metric));
    CHECK(std::filesystem::exists(dir.path + "/sweep/sweep.csv"));
    CHECK(std::filesystem::exists(dir.path + "/sweep/sweep.svg"));
}

TEST_CASE("sweep records arm failures and continues") {
    TempDir dir("comchain_sweep_fail");
    SyntheticSpec dspec;
    dspec.n_classes = 4;
    dspec.samples_per_class = 4;
    dspec.vocab = 64;
    dspec.seed = 33;
    const auto manifest = generate(dspec, dir.path + "/data");
    const auto parts = split(manifest, {0.75, 0.25}, 1, dir.path + "/splits");
    const Dataset train = load_dataset(parts[0]);
    const Dataset eval_split = load_dataset(parts[1]);

    SweepConfig sc;
    sc.axis = SweepAxis::epochs;
    sc.values = {"2", "0"};  // a zero-epoch arm fails inside run_chain
    sc.base.models = {{nano_config("tiny_a", 16, 1), 2}, {nano_config("tiny_b", 32, 1), 1}};
    sc.base.optim_baseline.warmup_steps = 2;
    sc.base.batch_size = 8;
    sc.out_dir = dir.path + "/sweep";
    sc.threads = 1;
    const SweepReport rep = run_sweep(sc, train, eval_split);
    REQUIRE(rep.arms.size() == 2);
    CHECK(rep.arms[0].ok);
    CHECK_FALSE(rep.arms[1].ok);
    CHECK_FALSE(rep.all_ok);
    CHECK(rep.arms[1].error.find("epoch") != std::string::npos);
}
