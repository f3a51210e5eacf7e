#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "comchain/losses.hpp"
#include "comchain/model.hpp"

#include <cstring>
#include <set>

using namespace comchain;

namespace {

// small enough for finite differences over every parameter; the mild
// temperature keeps softmax gradients away from saturation
ModelConfig micro_config() {
    ModelConfig cfg;
    cfg.name = "micro";
    cfg.image = {8, 1, 4, 4, 4, 2, 1, 0, 0};
    cfg.text = {8, 1, 4, 4, 0, 0, 0, 6, 3};
    cfg.embed_dim = 8;
    cfg.captions_per_image = 1;
    cfg.init_temperature = 1.0;
    return cfg;
}

template <typename F>
ParamSetT<F> cast_params(const ParamSet& p) {
    ParamSetT<F> out;
    for (const auto& [k, v] : p) out[k] = v.template cast<F>();
    return out;
}

}  // namespace

TEST_CASE("build_params is deterministic under a seed") {
    const auto cfg = preset_model("nano_t");
    Rng r1(42, "init"), r2(42, "init");
    const ParamSet a = build_params(cfg, r1);
    const ParamSet b = build_params(cfg, r2);
    REQUIRE(a.size() == b.size());
    for (const auto& [name, t] : a) {
        const auto& u = b.at(name);
        REQUIRE(t.shape == u.shape);
        CHECK(std::memcmp(t.data.data(), u.data.data(), t.data.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("nano_t params cover exactly the canonical schema") {
    const auto cfg = preset_model("nano_t");
    Rng rng(1);
    const ParamSet params = build_params(cfg, rng);
    std::set<std::string> expected;
    for (const auto& ts : schema(cfg)) expected.insert(ts.name);
    std::set<std::string> got;
    for (const auto& [name, t] : params) got.insert(name);
    CHECK(expected == got);
}

TEST_CASE("param_count equals built scalars exactly for every preset") {
    for (const char* name : {"nano_t", "nano_s", "nano_b", "vit_t16_ref"}) {
        const auto cfg = preset_model(name);
        Rng rng(3);
        const ParamSet params = build_params(cfg, rng);
        int64_t total = 0;
        for (const auto& [n, t] : params) total += t.numel();
        CHECK(total == param_count(cfg));
    }
}

TEST_CASE("reference presets match the published parameter table within 2%") {
    const struct {
        const char* name;
        double image_m, text_blocks_m, total_m;
    } rows[] = {
        {"vit_t16_ref", 5.62, 9.48, 15.10},
        {"vit_s16_ref", 21.81, 21.29, 43.10},
        {"vit_b16_ref", 86.19, 37.83, 124.02},
        {"vit_l16_ref", 304.09, 85.05, 389.14},
    };
    for (const auto& row : rows) {
        const TowerParams tp = table_param_split(preset_model(row.name));
        CHECK(std::fabs(tp.image_tower / 1e6 - row.image_m) / row.image_m < 0.02);
        CHECK(std::fabs(tp.text_blocks / 1e6 - row.text_blocks_m) / row.text_blocks_m < 0.02);
        CHECK(std::fabs(tp.table_total() / 1e6 - row.total_m) / row.total_m < 0.02);
    }
}

TEST_CASE("families are strictly increasing; widening increases params") {
    for (const char* fam : {"nano", "vit_ref"}) {
        const auto family = preset_family(fam);
        for (size_t i = 1; i < family.models.size(); ++i)
            CHECK(param_count(family.models[i]) > param_count(family.models[i - 1]));
    }
    CHECK(param_count(nano_config("a", 64, 2)) > param_count(nano_config("b", 32, 2)));
    CHECK(param_count(nano_config("a", 32, 4)) > param_count(nano_config("b", 32, 2)));
}

TEST_CASE("config validation rejects bad geometry") {
    auto cfg = preset_model("nano_t");
    cfg.image.width = 33;  // not divisible by head_dim 16
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = preset_model("nano_t");
    cfg.embed_dim = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = preset_model("nano_t");
    cfg.image.image_size = 17;  // not divisible by patch 4
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("encoders produce the contracted shapes and are pure") {
    const auto cfg = preset_model("nano_t");
    Rng rng(9);
    const ParamSet params = build_params(cfg, rng);
    const int64_t B = 3, M = cfg.captions_per_image;

    Tensor images({B, cfg.image.channels * cfg.image.image_size * cfg.image.image_size});
    for (auto& v : images.data) v = static_cast<float>(rng.normal());
    std::vector<int64_t> tokens;
    for (int64_t i = 0; i < B * M * cfg.text.context; ++i)
        tokens.push_back(static_cast<int64_t>(rng.next_below(
            static_cast<uint64_t>(cfg.text.vocab_size))));

    Graph<float> g;
    auto gp = params_on_graph(g, params, false);
    int vi = encode_image(g, gp, cfg.image, images);
    int ti = encode_text(g, gp, cfg.text, tokens);
    CHECK(g.value(vi).shape == std::vector<int64_t>{B, cfg.embed_dim});
    CHECK(g.value(ti).shape == std::vector<int64_t>{B * M, cfg.embed_dim});

    // identical inputs give identical rows
    Tensor twice({2, images.shape[1]});
    std::copy(images.data.begin(), images.data.begin() + images.shape[1], twice.data.begin());
    std::copy(images.data.begin(), images.data.begin() + images.shape[1],
              twice.data.begin() + images.shape[1]);
    Graph<float> g2;
    auto gp2 = params_on_graph(g2, params, false);
    const auto& out = g2.value(encode_image(g2, gp2, cfg.image, twice));
    for (int64_t j = 0; j < cfg.embed_dim; ++j) CHECK(out.at(0, j) == out.at(1, j));

    // purity: rebuilding the graph reproduces bit-identical features
    Graph<float> g3;
    auto gp3 = params_on_graph(g3, params, false);
    const auto& again = g3.value(encode_image(g3, gp3, cfg.image, images));
    CHECK(std::memcmp(again.data.data(), g.value(vi).data.data(),
                      again.data.size() * sizeof(float)) == 0);
}

TEST_CASE("permuting text batch rows permutes outputs identically") {
    const auto cfg = preset_model("nano_t");
    Rng rng(13);
    const ParamSet params = build_params(cfg, rng);
    const int64_t L = cfg.text.context;
    std::vector<int64_t> tokens;
    for (int64_t i = 0; i < 4 * L; ++i)
        tokens.push_back(static_cast<int64_t>(rng.next_below(64)));
    std::vector<int64_t> swapped(tokens);
    for (int64_t j = 0; j < L; ++j) std::swap(swapped[j], swapped[2 * L + j]);

    Graph<float> g;
    auto gp = params_on_graph(g, params, false);
    const auto a = g.value(encode_text(g, gp, cfg.text, tokens));
    Graph<float> g2;
    auto gp2 = params_on_graph(g2, params, false);
    const auto b = g2.value(encode_text(g2, gp2, cfg.text, swapped));
    for (int64_t j = 0; j < cfg.embed_dim; ++j) {
        CHECK(a.at(0, j) == b.at(2, j));
        CHECK(a.at(2, j) == b.at(0, j));
        CHECK(a.at(1, j) == b.at(1, j));
        CHECK(a.at(3, j) == b.at(3, j));
    }
}

TEST_CASE("encode_text rejects out-of-range tokens") {
    const auto cfg = preset_model("nano_t");
    Rng rng(1);
    const ParamSet params = build_params(cfg, rng);
    Graph<float> g;
    auto gp = params_on_graph(g, params, false);
    std::vector<int64_t> tokens(static_cast<size_t>(cfg.text.context), 0);
    tokens[1] = cfg.text.vocab_size;  // one past the end
    CHECK_THROWS_AS((void)encode_text(g, gp, cfg.text, tokens), ContractError);
}

TEST_CASE("image batch must match the configured resolution") {
    const auto cfg = preset_model("nano_t");
    Rng rng(1);
    const ParamSet params = build_params(cfg, rng);
    Graph<float> g;
    auto gp = params_on_graph(g, params, false);
    Tensor bad({2, 100});
    CHECK_THROWS_AS((void)encode_image(g, gp, cfg.image, bad), DimError);
}

TEST_CASE("full encoder forward plus task loss passes the gradient check") {
    const auto cfg = micro_config();
    Rng rng(17);
    const ParamSet fparams = build_params(cfg, rng);
    const auto dparams = cast_params<double>(fparams);

    const int64_t B = 2, M = cfg.captions_per_image;
    TensorT<double> images({B, cfg.image.channels * cfg.image.image_size * cfg.image.image_size});
    for (auto& v : images.data) v = rng.normal();
    std::vector<int64_t> tokens;
    for (int64_t i = 0; i < B * M * cfg.text.context; ++i)
        tokens.push_back(static_cast<int64_t>(rng.next_below(
            static_cast<uint64_t>(cfg.text.vocab_size))));

    std::vector<std::string> names;
    std::vector<TensorT<double>> points;
    for (const auto& [name, t] : dparams) {
        names.push_back(name);
        points.push_back(t);
    }
    const double err = grad_check(
        points,
        [&](Graph<double>& g, const std::vector<int>& ids) {
            GraphParams<double> gp;
            for (size_t i = 0; i < names.size(); ++i) gp.ids[names[i]] = ids[i];
            int v = encode_image(g, gp, cfg.image, images);
            int t = encode_text(g, gp, cfg.text, tokens);
            int scale = ops::exp_clamped(g, gp.at("logit_scale"), 100.0);
            return build_task_loss(g, v, t, M, scale).task;
        },
        1e-5);
    CHECK(err <= 1e-4);
}
