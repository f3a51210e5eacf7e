#include "comchain/data.hpp"
#include "comchain/util.hpp"

#include <nlohmann/json.hpp>

#include <openssl/evp.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace comchain {

using nlohmann::json;

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path, "cannot open for reading");
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return bytes;
}

void write_file(const std::string& path, const void* data, size_t size) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path, "cannot open for writing");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) throw IoError(path, "write failed");
}

std::string sha256_hex(const void* data, size_t size) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!EVP_Digest(data, size, digest, &len, EVP_sha256(), nullptr))
        throw std::runtime_error("sha256 failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::string sha256_file(const std::string& path) {
    auto bytes = read_file(path);
    return sha256_hex(bytes.data(), bytes.size());
}

std::string format_double(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

// ---------------------------------------------------------------------------

void SyntheticSpec::validate() const {
    if (n_classes < 2) throw DataError("synthetic spec: need at least 2 classes");
    if (samples_per_class < 1) throw DataError("synthetic spec: samples_per_class must be >= 1");
    if (captions_per_image < 1) throw DataError("synthetic spec: M must be >= 1");
    if (image_size < 4 || channels < 1) throw DataError("synthetic spec: bad image geometry");
    if (caption_len < 2) throw DataError("synthetic spec: caption_len must be >= 2");
    // token 0 is reserved padding; keywords are 1..n_classes; the rest fill
    if (vocab <= n_classes + caption_len)
        throw DataError("synthetic spec: vocab must exceed n_classes + caption template slots");
    if (sigma < 0) throw DataError("synthetic spec: sigma must be >= 0");
}

namespace {

constexpr char kMagic[4] = {'C', 'M', 'D', 'S'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::vector<uint8_t>& out, T v) {
    const auto* p = reinterpret_cast<const uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

// Smooth per-class template: blurred white noise, normalized to zero mean
// and unit variance.
std::vector<float> class_template(const SyntheticSpec& spec, int64_t cls) {
    const int64_t s = spec.image_size, n = spec.image_floats();
    Rng rng(spec.seed, "template/" + std::to_string(cls));
    std::vector<double> field(static_cast<size_t>(n));
    for (auto& v : field) v = rng.normal();
    const double kernel[5] = {1 / 16.0, 4 / 16.0, 6 / 16.0, 4 / 16.0, 1 / 16.0};
    for (int pass = 0; pass < 2; ++pass) {
        for (int axis = 0; axis < 2; ++axis) {
            std::vector<double> next(field.size(), 0.0);
            for (int64_t ch = 0; ch < spec.channels; ++ch)
                for (int64_t y = 0; y < s; ++y)
                    for (int64_t x = 0; x < s; ++x) {
                        double acc = 0;
                        for (int k = -2; k <= 2; ++k) {
                            int64_t yy = y, xx = x;
                            (axis == 0 ? yy : xx) += k;
                            yy = std::clamp<int64_t>(yy, 0, s - 1);
                            xx = std::clamp<int64_t>(xx, 0, s - 1);
                            acc += kernel[k + 2] * field[static_cast<size_t>(ch * s * s + yy * s + xx)];
                        }
                        next[static_cast<size_t>(ch * s * s + y * s + x)] = acc;
                    }
            field = std::move(next);
        }
    }
    double mean = 0;
    for (double v : field) mean += v;
    mean /= static_cast<double>(n);
    double var = 0;
    for (double v : field) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(std::max(var, 1e-12));
    std::vector<float> out(static_cast<size_t>(n));
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<float>((field[i] - mean) * inv);
    return out;
}

// Each class draws a fixed filler-token subset; captions place the class
// keyword at a varying position among fillers.
std::vector<int64_t> class_fillers(const SyntheticSpec& spec, int64_t cls) {
    std::vector<int64_t> pool;
    for (int64_t t = 1 + spec.n_classes; t < spec.vocab; ++t) pool.push_back(t);
    Rng rng(spec.seed, "fillers/" + std::to_string(cls));
    rng.shuffle(pool);
    const size_t take = std::min<size_t>(pool.size(), 6);
    pool.resize(take);
    return pool;
}

}  // namespace

DatasetManifest generate(const SyntheticSpec& spec, const std::string& out_dir) {
    spec.validate();
    std::filesystem::create_directories(out_dir);

    std::vector<uint8_t> bytes;
    bytes.insert(bytes.end(), kMagic, kMagic + 4);
    put(bytes, kVersion);
    put(bytes, static_cast<uint64_t>(spec.total_samples()));

    for (int64_t cls = 0; cls < spec.n_classes; ++cls) {
        const auto tmpl = class_template(spec, cls);
        const auto fillers = class_fillers(spec, cls);
        for (int64_t s = 0; s < spec.samples_per_class; ++s) {
            put(bytes, static_cast<uint32_t>(cls));
            Rng noise(spec.seed, "noise/" + std::to_string(cls) + "/" + std::to_string(s));
            for (float base : tmpl)
                put(bytes, static_cast<float>(base + spec.sigma * noise.normal()));
            Rng cap(spec.seed, "caption/" + std::to_string(cls) + "/" + std::to_string(s));
            for (int64_t j = 0; j < spec.captions_per_image; ++j) {
                std::vector<uint32_t> tokens(static_cast<size_t>(spec.caption_len));
                for (auto& t : tokens)
                    t = static_cast<uint32_t>(fillers[cap.next_below(fillers.size())]);
                tokens[cap.next_below(static_cast<uint64_t>(spec.caption_len))] =
                    static_cast<uint32_t>(1 + cls);
                for (uint32_t t : tokens) put(bytes, t);
            }
        }
    }

    const std::string shard = "data.cmds";
    const std::string shard_path = out_dir + "/" + shard;
    write_file(shard_path, bytes.data(), bytes.size());

    DatasetManifest manifest;
    manifest.spec = spec;
    manifest.shards = {shard};
    manifest.sha256[shard] = sha256_hex(bytes.data(), bytes.size());
    manifest.samples = spec.total_samples();
    manifest.captions = manifest.samples * spec.captions_per_image;
    manifest.dir = out_dir;
    save_manifest(manifest, out_dir + "/manifest.json");
    return manifest;
}

namespace {

json spec_to_json(const SyntheticSpec& s) {
    return json{{"n_classes", s.n_classes},
                {"samples_per_class", s.samples_per_class},
                {"image_size", s.image_size},
                {"channels", s.channels},
                {"caption_len", s.caption_len},
                {"vocab", s.vocab},
                {"captions_per_image", s.captions_per_image},
                {"sigma", s.sigma},
                {"seed", s.seed}};
}

SyntheticSpec spec_from_json(const json& j) {
    SyntheticSpec s;
    s.n_classes = j.at("n_classes");
    s.samples_per_class = j.at("samples_per_class");
    s.image_size = j.at("image_size");
    s.channels = j.at("channels");
    s.caption_len = j.at("caption_len");
    s.vocab = j.at("vocab");
    s.captions_per_image = j.at("captions_per_image");
    s.sigma = j.at("sigma");
    s.seed = j.at("seed");
    return s;
}

}  // namespace

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
    json j{{"version", kVersion},
           {"spec", spec_to_json(manifest.spec)},
           {"shards", manifest.shards},
           {"sha256", manifest.sha256},
           {"samples", manifest.samples},
           {"captions", manifest.captions}};
    const std::string text = j.dump(2) + "\n";
    write_file(path, text.data(), text.size());
}

DatasetManifest load_manifest(const std::string& path) {
    auto bytes = read_file(path);
    json j = json::parse(bytes.begin(), bytes.end());
    DatasetManifest m;
    m.spec = spec_from_json(j.at("spec"));
    m.shards = j.at("shards").get<std::vector<std::string>>();
    m.sha256 = j.at("sha256").get<std::map<std::string, std::string>>();
    m.samples = j.at("samples");
    m.captions = j.at("captions");
    m.dir = std::filesystem::path(path).parent_path().string();
    if (m.dir.empty()) m.dir = ".";
    return m;
}

namespace {

template <typename T>
T take(const std::vector<uint8_t>& bytes, size_t& off, const std::string& shard) {
    if (off + sizeof(T) > bytes.size()) throw DataError(shard + ": truncated shard");
    T v;
    std::memcpy(&v, bytes.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

}  // namespace

Dataset load_dataset(const DatasetManifest& manifest) {
    manifest.spec.validate();
    Dataset data;
    data.spec = manifest.spec;
    const int64_t img_n = manifest.spec.image_floats();
    const int64_t m = manifest.spec.captions_per_image;
    const int64_t cap_len = manifest.spec.caption_len;

    std::vector<float> images;
    for (const auto& shard : manifest.shards) {
        const std::string path = manifest.dir + "/" + shard;
        auto bytes = read_file(path);
        const std::string actual = sha256_hex(bytes.data(), bytes.size());
        auto expect = manifest.sha256.find(shard);
        if (expect == manifest.sha256.end() || expect->second != actual)
            throw DataError(shard + ": shard hash mismatch (corrupt or stale file)");
        size_t off = 0;
        if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
            throw DataError(shard + ": bad magic");
        off = 4;
        const auto version = take<uint32_t>(bytes, off, shard);
        if (version != kVersion) throw DataError(shard + ": unsupported version");
        const auto count = take<uint64_t>(bytes, off, shard);
        for (uint64_t i = 0; i < count; ++i) {
            data.class_ids.push_back(static_cast<int32_t>(take<uint32_t>(bytes, off, shard)));
            for (int64_t k = 0; k < img_n; ++k) images.push_back(take<float>(bytes, off, shard));
            for (int64_t j = 0; j < m * cap_len; ++j)
                data.tokens.push_back(static_cast<int64_t>(take<uint32_t>(bytes, off, shard)));
        }
        if (off != bytes.size()) throw DataError(shard + ": trailing bytes");
    }
    const int64_t n = static_cast<int64_t>(data.class_ids.size());
    data.images = Tensor({std::max<int64_t>(n, 1), img_n});
    if (n == 0) throw DataError("dataset is empty");
    data.images.shape = {n, img_n};
    data.images.data = std::move(images);
    return data;
}

std::vector<DatasetManifest> split(const DatasetManifest& manifest,
                                   const std::vector<double>& fractions, uint64_t seed,
                                   const std::string& out_dir) {
    double sum = 0;
    for (double f : fractions) {
        if (f < 0) throw DataError("split: fractions must be non-negative");
        sum += f;
    }
    if (std::fabs(sum - 1.0) > 1e-9) throw DataError("split: fractions must sum to 1");
    const Dataset data = load_dataset(manifest);
    const auto& spec = manifest.spec;
    const size_t k = fractions.size();

    // global targets from rounded cumulative fractions
    std::vector<int64_t> target(k);
    double cum = 0;
    int64_t prev = 0;
    for (size_t i = 0; i < k; ++i) {
        cum += fractions[i];
        const int64_t b = i + 1 == k ? manifest.samples
                                     : static_cast<int64_t>(std::llround(cum * static_cast<double>(manifest.samples)));
        target[i] = b - prev;
        prev = b;
    }

    std::vector<std::vector<int64_t>> by_class(static_cast<size_t>(spec.n_classes));
    for (int64_t i = 0; i < manifest.samples; ++i)
        by_class[static_cast<size_t>(data.class_ids[static_cast<size_t>(i)])].push_back(i);

    Rng rng(seed, "split");
    std::vector<std::vector<int64_t>> members(k);
    std::vector<int64_t> assigned(k, 0);
    for (auto& cls : by_class) {
        rng.shuffle(cls);
        const int64_t n_c = static_cast<int64_t>(cls.size());
        std::vector<int64_t> quota(k);
        int64_t used = 0;
        for (size_t i = 0; i < k; ++i) {
            quota[i] = static_cast<int64_t>(fractions[i] * static_cast<double>(n_c));
            used += quota[i];
        }
        // largest-remainder assignment, capped by each split's global target
        for (int64_t r = used; r < n_c; ++r) {
            size_t best = k;
            double best_rem = -1.0;
            for (size_t i = 0; i < k; ++i) {
                if (assigned[i] + quota[i] >= target[i]) continue;
                const double rem = fractions[i] * static_cast<double>(n_c) -
                                   static_cast<double>(quota[i]);
                if (rem > best_rem) {
                    best_rem = rem;
                    best = i;
                }
            }
            if (best == k) {
                // all splits at target (rounding slack): take the largest fraction
                best = static_cast<size_t>(std::max_element(fractions.begin(), fractions.end()) -
                                           fractions.begin());
            }
            quota[best] += 1;
        }
        int64_t off = 0;
        for (size_t i = 0; i < k; ++i) {
            for (int64_t j = 0; j < quota[i]; ++j)
                members[i].push_back(cls[static_cast<size_t>(off + j)]);
            off += quota[i];
            assigned[i] += quota[i];
        }
    }

    std::filesystem::create_directories(out_dir);
    std::vector<DatasetManifest> out;
    const int64_t img_n = spec.image_floats();
    const int64_t cap_n = spec.captions_per_image * spec.caption_len;
    for (size_t i = 0; i < k; ++i) {
        std::sort(members[i].begin(), members[i].end());
        std::vector<uint8_t> bytes;
        bytes.insert(bytes.end(), kMagic, kMagic + 4);
        put(bytes, kVersion);
        put(bytes, static_cast<uint64_t>(members[i].size()));
        for (int64_t idx : members[i]) {
            put(bytes, static_cast<uint32_t>(data.class_ids[static_cast<size_t>(idx)]));
            for (int64_t p = 0; p < img_n; ++p)
                put(bytes, data.images.data[static_cast<size_t>(idx * img_n + p)]);
            for (int64_t p = 0; p < cap_n; ++p)
                put(bytes, static_cast<uint32_t>(data.tokens[static_cast<size_t>(idx * cap_n + p)]));
        }
        const std::string shard = "split" + std::to_string(i) + ".cmds";
        write_file(out_dir + "/" + shard, bytes.data(), bytes.size());
        DatasetManifest m;
        m.spec = spec;  // geometry echo; per-class counts vary after splitting
        m.shards = {shard};
        m.sha256[shard] = sha256_hex(bytes.data(), bytes.size());
        m.samples = static_cast<int64_t>(members[i].size());
        m.captions = m.samples * spec.captions_per_image;
        m.dir = out_dir;
        save_manifest(m, out_dir + "/split" + std::to_string(i) + ".json");
        out.push_back(std::move(m));
    }
    return out;
}

// ---------------------------------------------------------------------------

BatchStream::BatchStream(const Dataset& data, int64_t batch_size, int64_t captions_wanted,
                         uint64_t seed, bool shuffle)
    : data_(data), batch_size_(batch_size), captions_(captions_wanted), seed_(seed),
      shuffle_(shuffle) {
    if (batch_size_ < 1) throw DataError("batch size must be >= 1");
    if (captions_ < 1 || captions_ > data.spec.captions_per_image)
        throw DataError("captions per batch sample must be in [1, M]");
}

int64_t BatchStream::batches_per_epoch() const {
    const int64_t n = static_cast<int64_t>(data_.class_ids.size());
    return (n + batch_size_ - 1) / batch_size_;
}

std::vector<Batch> BatchStream::epoch(int64_t epoch_index) const {
    const int64_t n = static_cast<int64_t>(data_.class_ids.size());
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    Rng rng(seed_, "batches/" + std::to_string(epoch_index));
    if (shuffle_) rng.shuffle(order);

    const int64_t img_n = data_.spec.image_floats();
    const int64_t cap_len = data_.spec.caption_len;
    const int64_t m_all = data_.spec.captions_per_image;

    std::vector<Batch> batches;
    for (int64_t start = 0; start < n; start += batch_size_) {
        const int64_t b = std::min(batch_size_, n - start);
        Batch batch;
        batch.images = Tensor({b, img_n});
        batch.tokens.reserve(static_cast<size_t>(b * captions_ * cap_len));
        for (int64_t r = 0; r < b; ++r) {
            const int64_t idx = order[static_cast<size_t>(start + r)];
            batch.sample_index.push_back(static_cast<int32_t>(idx));
            batch.class_ids.push_back(data_.class_ids[static_cast<size_t>(idx)]);
            std::copy(data_.images.data.begin() + idx * img_n,
                      data_.images.data.begin() + (idx + 1) * img_n,
                      batch.images.data.begin() + r * img_n);
            std::vector<int64_t> caps(static_cast<size_t>(m_all));
            for (int64_t j = 0; j < m_all; ++j) caps[static_cast<size_t>(j)] = j;
            if (captions_ < m_all) rng.shuffle(caps);
            for (int64_t j = 0; j < captions_; ++j) {
                const int64_t cj = caps[static_cast<size_t>(j)];
                const auto* src = data_.tokens.data() + (idx * m_all + cj) * cap_len;
                batch.tokens.insert(batch.tokens.end(), src, src + cap_len);
            }
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

}  // namespace comchain
