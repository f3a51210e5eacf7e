#pragma once

// Append-only JSON Lines metrics. One row per logged event; evaluation
// fields are present only on rows where an evaluation ran.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace comchain {

struct MetricsRow {
    std::string run_id;
    std::string model;
    int64_t epoch = 0;
    int64_t step = 0;
    double l_task = 0;
    double l_ifd = 0;
    double l_total = 0;
    std::optional<double> r1_t2i;
    std::optional<double> r1_i2t;
    std::optional<double> class_top1;
    uint64_t cumulative_macs = 0;
    double wall_seconds = 0;
};

std::string to_jsonl(const MetricsRow& row);
MetricsRow metrics_row_from_line(const std::string& line);

class MetricsWriter {
public:
    explicit MetricsWriter(std::string path) : path_(std::move(path)) {}
    void append(const MetricsRow& row);

private:
    std::string path_;
    int64_t last_step_ = -1;
    uint64_t last_macs_ = 0;
};

std::vector<MetricsRow> read_metrics(const std::string& path);

}  // namespace comchain
