#include "comchain/metrics.hpp"
#include "comchain/util.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace comchain {

using nlohmann::json;

std::string to_jsonl(const MetricsRow& row) {
    json j{{"run_id", row.run_id},   {"model", row.model},
           {"epoch", row.epoch},     {"step", row.step},
           {"l_task", row.l_task},   {"l_ifd", row.l_ifd},
           {"l_total", row.l_total}, {"cumulative_macs", row.cumulative_macs},
           {"wall_seconds", row.wall_seconds}};
    if (row.r1_t2i) j["r1_t2i"] = *row.r1_t2i;
    if (row.r1_i2t) j["r1_i2t"] = *row.r1_i2t;
    if (row.class_top1) j["class_top1"] = *row.class_top1;
    return j.dump();
}

MetricsRow metrics_row_from_line(const std::string& line) {
    json j = json::parse(line);
    MetricsRow row;
    row.run_id = j.at("run_id");
    row.model = j.at("model");
    row.epoch = j.at("epoch");
    row.step = j.at("step");
    row.l_task = j.at("l_task");
    row.l_ifd = j.at("l_ifd");
    row.l_total = j.at("l_total");
    row.cumulative_macs = j.at("cumulative_macs");
    row.wall_seconds = j.at("wall_seconds");
    if (j.contains("r1_t2i")) row.r1_t2i = j.at("r1_t2i").get<double>();
    if (j.contains("r1_i2t")) row.r1_i2t = j.at("r1_i2t").get<double>();
    if (j.contains("class_top1")) row.class_top1 = j.at("class_top1").get<double>();
    return row;
}

void MetricsWriter::append(const MetricsRow& row) {
    if (row.step < last_step_)
        throw std::runtime_error("metrics: step must be non-decreasing within a run");
    if (row.cumulative_macs < last_macs_)
        throw std::runtime_error("metrics: cumulative MACs must be non-decreasing");
    last_step_ = row.step;
    last_macs_ = row.cumulative_macs;
    std::ofstream out(path_, std::ios::app);
    if (!out) throw IoError(path_, "cannot append metrics");
    out << to_jsonl(row) << "\n";
}

std::vector<MetricsRow> read_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path, "cannot open metrics");
    std::vector<MetricsRow> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        rows.push_back(metrics_row_from_line(line));
    }
    return rows;
}

}  // namespace comchain
