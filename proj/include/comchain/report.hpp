#pragma once

// Markdown + SVG reporting from persisted metrics. Output is a pure function
// of the input files, so regeneration is byte-identical.

#include "comchain/chain.hpp"
#include "comchain/macs.hpp"

#include <string>
#include <vector>

namespace comchain {

struct ReportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

// Minimal self-contained SVG line chart (no plotting dependency).
std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<Series>& series,
                           int width = 720, int height = 420);

// Optional per-model baselines for cost ratios and LTA verdicts.
struct BaselineEntry {
    std::string model;
    double metric = -1;    // lta metric of the baseline run
    double macs = 0;       // baseline training MACs
};

void save_baselines(const std::vector<BaselineEntry>& baselines, const std::string& path);
std::vector<BaselineEntry> load_baselines(const std::string& path);

// Reads <run_dir>/chain_state.json plus every <run_dir>/<model>/metrics.jsonl
// and writes report.md and curves_<model>.svg into run_dir. When
// <run_dir>/baselines.json exists the report includes the cost table with
// acceleration ratios and LTA verdicts at `lta_threshold`.
void emit_report(const std::string& run_dir, double lta_threshold = 2.0);

// Human-readable rendering of a cost report (also emitted as JSON).
std::string cost_table_markdown(const CostReport& report);
void save_cost_report(const CostReport& report, const std::string& path);

}  // namespace comchain
