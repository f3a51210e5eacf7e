#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "comchain/data.hpp"
#include "comchain/util.hpp"

#include <filesystem>
#include <fstream>
#include <set>

using namespace comchain;

namespace {

SyntheticSpec small_spec() {
    SyntheticSpec s;
    s.n_classes = 4;
    s.samples_per_class = 6;
    s.caption_len = 8;
    s.vocab = 64;
    s.captions_per_image = 4;
    s.sigma = 0.1;
    s.seed = 11;
    return s;
}

struct TempDir {
    std::string path;
    explicit TempDir(const std::string& name) {
        path = (std::filesystem::temp_directory_path() / name).string();
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("generation is byte-deterministic under a seed") {
    TempDir a("comchain_data_a"), b("comchain_data_b");
    const auto ma = generate(small_spec(), a.path);
    const auto mb = generate(small_spec(), b.path);
    CHECK(ma.sha256.at("data.cmds") == mb.sha256.at("data.cmds"));

    SyntheticSpec other = small_spec();
    other.seed = 12;
    TempDir c("comchain_data_c");
    const auto mc = generate(other, c.path);
    CHECK(ma.sha256.at("data.cmds") != mc.sha256.at("data.cmds"));
}

TEST_CASE("sigma zero collapses a class to identical images") {
    TempDir dir("comchain_data_s0");
    SyntheticSpec spec = small_spec();
    spec.sigma = 0.0;
    const Dataset data = load_dataset(generate(spec, dir.path));
    const int64_t n = spec.image_floats();
    // samples 0 and 1 are both class 0
    CHECK(data.class_ids[0] == data.class_ids[1]);
    for (int64_t j = 0; j < n; ++j)
        CHECK(data.images.data[static_cast<size_t>(j)] ==
              data.images.data[static_cast<size_t>(n + j)]);
}

TEST_CASE("counting: classes x per-class samples x captions") {
    TempDir dir("comchain_data_count");
    SyntheticSpec spec;
    spec.n_classes = 16;
    spec.samples_per_class = 64;
    spec.vocab = 64;
    spec.seed = 3;
    const auto manifest = generate(spec, dir.path);
    CHECK(manifest.samples == 1024);
    CHECK(manifest.captions == 4096);
    const Dataset data = load_dataset(manifest);
    CHECK(data.class_ids.size() == 1024);
    CHECK(data.tokens.size() == 4096u * 8u);
}

TEST_CASE("spec validation") {
    SyntheticSpec bad = small_spec();
    bad.n_classes = 1;
    CHECK_THROWS_AS(bad.validate(), DataError);
    bad = small_spec();
    bad.vocab = bad.n_classes + bad.caption_len;  // must strictly exceed
    CHECK_THROWS_AS(bad.validate(), DataError);
    bad = small_spec();
    bad.sigma = -0.1;
    CHECK_THROWS_AS(bad.validate(), DataError);
}

TEST_CASE("captions contain the class keyword and no other class keyword") {
    TempDir dir("comchain_data_kw");
    const SyntheticSpec spec = small_spec();
    const Dataset data = load_dataset(generate(spec, dir.path));
    const int64_t m = spec.captions_per_image, l = spec.caption_len;
    for (size_t s = 0; s < data.class_ids.size(); ++s) {
        const int64_t kw = 1 + data.class_ids[s];
        for (int64_t j = 0; j < m; ++j) {
            bool has_kw = false;
            for (int64_t p = 0; p < l; ++p) {
                const int64_t tok = data.tokens[(s * m + j) * l + p];
                if (tok == kw) has_kw = true;
                else CHECK_FALSE((tok >= 1 && tok <= spec.n_classes));
            }
            CHECK(has_kw);
        }
    }
}

TEST_CASE("class separation: within-class image distance below across-class") {
    TempDir dir("comchain_data_sep");
    SyntheticSpec spec = small_spec();
    spec.sigma = 0.5;
    const Dataset data = load_dataset(generate(spec, dir.path));
    const int64_t n = static_cast<int64_t>(data.class_ids.size());
    const int64_t d = spec.image_floats();
    double within = 0, across = 0;
    int64_t nw = 0, na = 0;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = i + 1; j < n; ++j) {
            double dist = 0;
            for (int64_t k = 0; k < d; ++k) {
                const double diff = data.images.data[static_cast<size_t>(i * d + k)] -
                                    data.images.data[static_cast<size_t>(j * d + k)];
                dist += diff * diff;
            }
            if (data.class_ids[static_cast<size_t>(i)] == data.class_ids[static_cast<size_t>(j)]) {
                within += std::sqrt(dist);
                ++nw;
            } else {
                across += std::sqrt(dist);
                ++na;
            }
        }
    CHECK(within / static_cast<double>(nw) < across / static_cast<double>(na));
}

TEST_CASE("corrupt shards are rejected by hash") {
    TempDir dir("comchain_data_corrupt");
    const auto manifest = generate(small_spec(), dir.path);
    {
        std::fstream f(dir.path + "/data.cmds",
                       std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(64);
        const char byte = 0x5a;
        f.write(&byte, 1);
    }
    CHECK_THROWS_WITH_AS((void)load_dataset(manifest), doctest::Contains("hash mismatch"),
                         DataError);
}

TEST_CASE("splits are stratified, disjoint and exhaustive") {
    TempDir dir("comchain_data_split");
    SyntheticSpec spec;
    spec.n_classes = 16;
    spec.samples_per_class = 64;
    spec.vocab = 64;
    spec.seed = 5;
    const auto manifest = generate(spec, dir.path);

    SUBCASE("[1.0] is the identity") {
        const auto one = split(manifest, {1.0}, 9, dir.path + "/one");
        REQUIRE(one.size() == 1);
        CHECK(one[0].samples == manifest.samples);
    }

    SUBCASE("[0.9, 0.1] lands within one sample of the target") {
        const auto parts = split(manifest, {0.9, 0.1}, 9, dir.path + "/parts");
        REQUIRE(parts.size() == 2);
        CHECK(std::llabs(parts[0].samples - 922) <= 1);
        CHECK(std::llabs(parts[1].samples - 102) <= 1);
        CHECK(parts[0].samples + parts[1].samples == manifest.samples);

        // per-class counts stay proportional within 1
        const Dataset train = load_dataset(parts[0]);
        std::vector<int64_t> counts(16, 0);
        for (int32_t c : train.class_ids) counts[static_cast<size_t>(c)]++;
        for (int64_t c : counts) CHECK(std::llabs(c - 58) <= 1);

        // disjoint + exhaustive: image bytes partition the full set
        const Dataset full = load_dataset(manifest);
        const Dataset eval = load_dataset(parts[1]);
        auto key = [&](const Dataset& ds, size_t i) {
            const int64_t d = spec.image_floats();
            return sha256_hex(ds.images.data.data() + static_cast<int64_t>(i) * d,
                              static_cast<size_t>(d) * sizeof(float));
        };
        std::set<std::string> seen;
        for (size_t i = 0; i < train.class_ids.size(); ++i) seen.insert(key(train, i));
        for (size_t i = 0; i < eval.class_ids.size(); ++i) {
            const auto [it, inserted] = seen.insert(key(eval, i));
            CHECK(inserted);  // disjoint
        }
        std::set<std::string> all;
        for (size_t i = 0; i < full.class_ids.size(); ++i) all.insert(key(full, i));
        CHECK(seen == all);  // exhaustive
    }

    SUBCASE("fractions must sum to one") {
        CHECK_THROWS_AS((void)split(manifest, {0.5, 0.4}, 9, dir.path + "/bad"), DataError);
    }
}

TEST_CASE("batch streams are deterministic and partition each epoch") {
    TempDir dir("comchain_data_stream");
    const auto manifest = generate(small_spec(), dir.path);
    const Dataset data = load_dataset(manifest);

    BatchStream s1(data, 5, 4, 77, true);
    BatchStream s2(data, 5, 4, 77, true);
    const auto e1 = s1.epoch(3);
    const auto e2 = s2.epoch(3);
    REQUIRE(e1.size() == e2.size());
    std::set<int32_t> seen;
    int64_t total = 0;
    for (size_t b = 0; b < e1.size(); ++b) {
        CHECK(e1[b].sample_index == e2[b].sample_index);
        CHECK(e1[b].tokens == e2[b].tokens);
        for (int32_t idx : e1[b].sample_index) {
            CHECK(seen.insert(idx).second);
            ++total;
        }
    }
    CHECK(total == manifest.samples);  // exactly once per epoch

    // shuffle off keeps file order
    BatchStream plain(data, 5, 4, 77, false);
    const auto e0 = plain.epoch(0);
    int32_t expect = 0;
    for (const auto& batch : e0)
        for (int32_t idx : batch.sample_index) CHECK(idx == expect++);

    // different epochs reshuffle
    BatchStream s3(data, 5, 4, 77, true);
    CHECK(s3.epoch(0)[0].sample_index != s3.epoch(1)[0].sample_index);
}

TEST_CASE("manifest roundtrip") {
    TempDir dir("comchain_data_manifest");
    const auto manifest = generate(small_spec(), dir.path);
    const auto loaded = load_manifest(dir.path + "/manifest.json");
    CHECK(loaded.samples == manifest.samples);
    CHECK(loaded.captions == manifest.captions);
    CHECK(loaded.sha256 == manifest.sha256);
    CHECK(loaded.spec.seed == manifest.spec.seed);
    CHECK(loaded.spec.sigma == manifest.spec.sigma);
}
