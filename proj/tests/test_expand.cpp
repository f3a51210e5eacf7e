#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "comchain/expand.hpp"

#include <cstring>

using namespace comchain;

namespace {

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

bool bit_equal(const ParamSet& a, const ParamSet& b) {
    if (a.size() != b.size()) return false;
    for (const auto& [name, t] : a) {
        auto it = b.find(name);
        if (it == b.end() || !bit_equal(t, it->second)) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("width insertion places the teacher at the leading coordinates") {
    Rng rng(1);
    Tensor t({1, 1});
    t.data[0] = 2.0f;
    const Tensor out = expand_width(t, {2, 2}, WidthMethod::insertion, rng);
    CHECK(out.at(0, 0) == 2.0f);
    // remaining entries come from the truncated-normal fill
    for (auto idx : {1, 2, 3}) {
        CHECK(out.data[static_cast<size_t>(idx)] != 2.0f);
        CHECK(std::fabs(out.data[static_cast<size_t>(idx)]) <= 0.04f);
    }
}

TEST_CASE("same-shape expansion is a bit-exact copy for every method") {
    Rng rng(2);
    Tensor t({3, 4});
    for (auto& v : t.data) v = static_cast<float>(rng.normal());
    for (auto m : {WidthMethod::duplication, WidthMethod::interpolation, WidthMethod::insertion})
        CHECK(bit_equal(expand_width(t, {3, 4}, m, rng), t));
}

TEST_CASE("width duplication tiles the teacher") {
    Rng rng(3);
    Tensor t({2});
    t.data = {1.0f, 2.0f};
    const Tensor out = expand_width(t, {4}, WidthMethod::duplication, rng);
    CHECK(out.data == std::vector<float>{1, 2, 1, 2});
}

TEST_CASE("width interpolation is an endpoint-aligned linear resize") {
    Rng rng(4);
    Tensor t({2});
    t.data = {0.0f, 2.0f};
    const Tensor out = expand_width(t, {3}, WidthMethod::interpolation, rng);
    CHECK(out.data[0] == doctest::Approx(0.0));
    CHECK(out.data[1] == doctest::Approx(1.0));
    CHECK(out.data[2] == doctest::Approx(2.0));
}

TEST_CASE("width expansion contract errors") {
    Rng rng(5);
    Tensor t({3, 3}, 1.0f);
    CHECK_THROWS_AS((void)expand_width(t, {2, 3}, WidthMethod::insertion, rng), ContractError);
    CHECK_THROWS_AS((void)expand_width(t, {4, 3}, WidthMethod::duplication, rng), ContractError);
}

TEST_CASE("depth mappings") {
    SUBCASE("duplicate p=2 -> q=4 gives [L0, L0, L1, L1]") {
        const LayerMapping m = layer_mapping(2, 4, DepthMethod::duplicate);
        CHECK(m.teacher_pos == std::vector<int64_t>{0, 2});
        CHECK(m.sources[0].kind == LayerSource::teacher);
        CHECK(m.sources[1].kind == LayerSource::duplicate_of);
        CHECK(m.sources[1].index == 0);
        CHECK(m.sources[2].kind == LayerSource::teacher);
        CHECK(m.sources[3].kind == LayerSource::duplicate_of);
        CHECK(m.sources[3].index == 2);
    }
    SUBCASE("interval p=2 -> q=4 randomizes the gaps") {
        const LayerMapping m = layer_mapping(2, 4, DepthMethod::interval);
        CHECK(m.teacher_pos == std::vector<int64_t>{0, 2});
        CHECK(m.sources[1].kind == LayerSource::random);
        CHECK(m.sources[3].kind == LayerSource::random);
    }
    SUBCASE("constant p=2 -> q=4 keeps the prefix") {
        const LayerMapping m = layer_mapping(2, 4, DepthMethod::constant);
        CHECK(m.teacher_pos == std::vector<int64_t>{0, 1});
        CHECK(m.sources[2].kind == LayerSource::random);
        CHECK(m.sources[3].kind == LayerSource::random);
    }
    SUBCASE("identity depth keeps every block") {
        for (auto dm : {DepthMethod::constant, DepthMethod::interval, DepthMethod::duplicate}) {
            const LayerMapping m = layer_mapping(3, 3, dm);
            for (int64_t j = 0; j < 3; ++j) {
                CHECK(m.teacher_pos[static_cast<size_t>(j)] == j);
                CHECK(m.sources[static_cast<size_t>(j)].kind == LayerSource::teacher);
            }
        }
    }
    SUBCASE("mapping covers all indices and uses each teacher block once") {
        for (auto dm : {DepthMethod::interval, DepthMethod::duplicate}) {
            for (int64_t p = 1; p <= 4; ++p)
                for (int64_t q = p; q <= 9; ++q) {
                    const LayerMapping m = layer_mapping(p, q, dm);
                    CHECK(m.sources.size() == static_cast<size_t>(q));
                    std::vector<int> used(static_cast<size_t>(p), 0);
                    for (const auto& s : m.sources)
                        if (s.kind == LayerSource::teacher) used[static_cast<size_t>(s.index)]++;
                    for (int c : used) CHECK(c == 1);
                }
        }
    }
    SUBCASE("shrinking depth is rejected") {
        CHECK_THROWS_AS((void)layer_mapping(4, 2, DepthMethod::duplicate), ContractError);
    }
}

TEST_CASE("expand_depth duplicates gaps from the preceding block") {
    Rng trng(7);
    BlockTensors b0{{"w", Tensor({2, 2}, 1.0f)}};
    BlockTensors b1{{"w", Tensor({2, 2}, 2.0f)}};
    Rng rng(8);
    auto [blocks, map] = expand_depth({b0, b1}, 4, DepthMethod::duplicate, rng);
    REQUIRE(blocks.size() == 4);
    CHECK(bit_equal(blocks[0].at("w"), b0.at("w")));
    CHECK(bit_equal(blocks[1].at("w"), b0.at("w")));
    CHECK(bit_equal(blocks[2].at("w"), b1.at("w")));
    CHECK(bit_equal(blocks[3].at("w"), b1.at("w")));
}

TEST_CASE("expand_model identity returns the teacher bit-exactly") {
    const auto cfg = preset_model("nano_t");
    Rng rng(11);
    const ParamSet teacher = build_params(cfg, rng);
    for (auto wm : {WidthMethod::duplication, WidthMethod::interpolation, WidthMethod::insertion})
        for (auto dm : {DepthMethod::constant, DepthMethod::interval, DepthMethod::duplicate}) {
            ExpandSpec spec;
            spec.width_method = wm;
            spec.depth_method = dm;
            spec.seed = 3;
            const ExpandResult res = expand_model(teacher, cfg, cfg, spec);
            CHECK(bit_equal(res.params, teacher));
        }
}

TEST_CASE("expansion is deterministic in (teacher, spec, seed)") {
    const auto t_cfg = preset_model("nano_t");
    const auto s_cfg = preset_model("nano_s");
    Rng rng(12);
    const ParamSet teacher = build_params(t_cfg, rng);
    ExpandSpec spec;
    spec.seed = 99;
    const auto a = expand_model(teacher, t_cfg, s_cfg, spec);
    const auto b = expand_model(teacher, t_cfg, s_cfg, spec);
    CHECK(bit_equal(a.params, b.params));
}

TEST_CASE("embedding exactness: extraction inverts insertion expansion") {
    // the paper-default combination plus each depth mode, across random sizes
    Rng sizes(2024);
    int checked = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const int64_t wt = 16 * (1 + static_cast<int64_t>(sizes.next_below(2)));   // 16 or 32
        const int64_t ws = wt + 16 * (1 + static_cast<int64_t>(sizes.next_below(3)));
        const int64_t dt = 1 + static_cast<int64_t>(sizes.next_below(2));
        const int64_t ds = dt + static_cast<int64_t>(sizes.next_below(3));
        const DepthMethod dm = static_cast<DepthMethod>(sizes.next_below(3));

        const ModelConfig t_cfg = nano_config("t", wt, dt);
        const ModelConfig s_cfg = nano_config("s", ws, ds);
        Rng rng(1000 + trial);
        const ParamSet teacher = build_params(t_cfg, rng);
        ExpandSpec spec;
        spec.width_method = WidthMethod::insertion;
        spec.depth_method = dm;
        spec.seed = static_cast<uint64_t>(trial);
        const ExpandResult res = expand_model(teacher, t_cfg, s_cfg, spec);
        const ParamSet back =
            extract_submodel(res.params, t_cfg, s_cfg, res.image_map, res.text_map);
        CHECK(bit_equal(back, teacher));
        ++checked;
    }
    CHECK(checked == 50);
}

TEST_CASE("duplication expansion: the leading tile equals the teacher") {
    const auto t_cfg = preset_model("nano_t");
    const auto s_cfg = preset_model("nano_s");
    Rng rng(31);
    const ParamSet teacher = build_params(t_cfg, rng);
    ExpandSpec spec;
    spec.width_method = WidthMethod::duplication;
    spec.depth_method = DepthMethod::duplicate;
    const ExpandResult res = expand_model(teacher, t_cfg, s_cfg, spec);
    const ParamSet back = extract_submodel(res.params, t_cfg, s_cfg, res.image_map, res.text_map);
    CHECK(bit_equal(back, teacher));
}

TEST_CASE("duplicate-depth gap blocks equal their preceding block at init") {
    const ModelConfig t_cfg = nano_config("t", 32, 2);
    const ModelConfig s_cfg = nano_config("s", 64, 4);
    Rng rng(41);
    const ParamSet teacher = build_params(t_cfg, rng);
    ExpandSpec spec;  // insertion + duplicate defaults
    const ExpandResult res = expand_model(teacher, t_cfg, s_cfg, spec);
    for (const auto& map : {res.image_map, res.text_map})
        for (size_t k = 0; k < map.sources.size(); ++k)
            if (map.sources[k].kind == LayerSource::duplicate_of) {
                const int64_t src = map.sources[k].index;
                for (const char* suffix :
                     {"ln1.gain", "attn.qkv.weight", "attn.out.bias", "mlp.fc1.weight"}) {
                    const std::string a = "image.block" + std::to_string(k) + "." + suffix;
                    const std::string b = "image.block" + std::to_string(src) + "." + suffix;
                    if (res.params.count(a) && res.params.count(b))
                        CHECK(bit_equal(res.params.at(a), res.params.at(b)));
                }
            }
}

TEST_CASE("random init differs from any expanded teacher") {
    const auto t_cfg = preset_model("nano_t");
    Rng r1(51), r2(52);
    const ParamSet teacher = build_params(t_cfg, r1);
    const ParamSet fresh = build_params(t_cfg, r2);
    CHECK_FALSE(bit_equal(teacher, fresh));
}

TEST_CASE("expand_model validates geometry compatibility") {
    const auto t_cfg = preset_model("nano_s");
    Rng rng(61);
    const ParamSet teacher = build_params(t_cfg, rng);
    ExpandSpec spec;
    // shrinking width
    CHECK_THROWS_AS((void)expand_model(teacher, t_cfg, preset_model("nano_t"), spec),
                    ContractError);
    // mismatched patch geometry
    ModelConfig other = preset_model("nano_b");
    other.image.patch_size = 8;
    other.image.image_size = 16;
    CHECK_THROWS_AS((void)expand_model(teacher, t_cfg, other, spec), ContractError);
}
