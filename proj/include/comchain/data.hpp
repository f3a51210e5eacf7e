#pragma once

// Deterministic synthetic image-caption dataset: class-structured smooth
// image templates with per-pixel Gaussian noise, and per-sample caption
// variants built from a class keyword plus class-specific filler tokens.
// Shard format and manifest schema are documented in docs/formats.md.

#include "comchain/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace comchain {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SyntheticSpec {
    int64_t n_classes = 48;
    int64_t samples_per_class = 22;
    int64_t image_size = 16;
    int64_t channels = 1;
    int64_t caption_len = 8;
    int64_t vocab = 64;
    int64_t captions_per_image = 4;  // M
    double sigma = 0.25;             // per-pixel noise level
    uint64_t seed = 0;

    int64_t total_samples() const { return n_classes * samples_per_class; }
    int64_t image_floats() const { return channels * image_size * image_size; }
    void validate() const;
};

struct DatasetManifest {
    SyntheticSpec spec;
    std::vector<std::string> shards;            // paths relative to `dir`
    std::map<std::string, std::string> sha256;  // shard -> content hash
    int64_t samples = 0;
    int64_t captions = 0;
    std::string dir;  // resolved at load time, not serialized
};

struct Dataset {
    SyntheticSpec spec;
    std::vector<int32_t> class_ids;  // per sample
    Tensor images;                   // (N, channels*H*W)
    std::vector<int64_t> tokens;     // N * M * caption_len, row-major
};

DatasetManifest generate(const SyntheticSpec& spec, const std::string& out_dir);

void save_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

// Reads and hash-verifies every shard.
Dataset load_dataset(const DatasetManifest& manifest);

// Class-stratified disjoint splits; fractions must sum to 1. New shards and
// manifests are written under out_dir as split<k>.cmds / split<k>.json.
std::vector<DatasetManifest> split(const DatasetManifest& manifest,
                                   const std::vector<double>& fractions, uint64_t seed,
                                   const std::string& out_dir);

// ---------------------------------------------------------------------------
// Deterministic batch stream: per-epoch shuffle is a pure function of
// (seed, epoch). When captions_wanted < spec M, each sample contributes a
// random per-epoch subset of its captions.

struct Batch {
    Tensor images;                // (B, image_floats)
    std::vector<int64_t> tokens;  // B * captions_wanted * caption_len
    std::vector<int32_t> sample_index;
    std::vector<int32_t> class_ids;
};

class BatchStream {
public:
    BatchStream(const Dataset& data, int64_t batch_size, int64_t captions_wanted, uint64_t seed,
                bool shuffle);

    // Batches for one epoch; together they cover the dataset exactly once.
    std::vector<Batch> epoch(int64_t epoch_index) const;
    int64_t batches_per_epoch() const;

private:
    const Dataset& data_;
    int64_t batch_size_;
    int64_t captions_;
    uint64_t seed_;
    bool shuffle_;
};

}  // namespace comchain
