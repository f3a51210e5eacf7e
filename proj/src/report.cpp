#include "comchain/report.hpp"

#include "comchain/metrics.hpp"
#include "comchain/util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

namespace comchain {

using nlohmann::json;

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string fmt(double v) { return format_double(v, 3); }

}  // namespace

std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<Series>& series,
                           int width, int height) {
    const double left = 64, right = 16, top = 36, bottom = 44;
    const double pw = width - left - right, ph = height - top - bottom;

    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool first = true;
    for (const auto& s : series)
        for (size_t i = 0; i < s.x.size(); ++i) {
            if (first) {
                xmin = xmax = s.x[i];
                ymin = ymax = s.y[i];
                first = false;
            }
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    if (xmax - xmin < 1e-12) xmax = xmin + 1;
    if (ymax - ymin < 1e-12) ymax = ymin + 1;
    auto px = [&](double x) { return left + pw * (x - xmin) / (xmax - xmin); };
    auto py = [&](double y) { return top + ph * (1.0 - (y - ymin) / (ymax - ymin)); };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    svg << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    svg << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
        << title << "</text>\n";
    // axes
    svg << "<line x1=\"" << fmt(left) << "\" y1=\"" << fmt(top) << "\" x2=\"" << fmt(left)
        << "\" y2=\"" << fmt(top + ph) << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << fmt(left) << "\" y1=\"" << fmt(top + ph) << "\" x2=\""
        << fmt(left + pw) << "\" y2=\"" << fmt(top + ph) << "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double xv = xmin + (xmax - xmin) * k / 4.0;
        const double yv = ymin + (ymax - ymin) * k / 4.0;
        svg << "<text x=\"" << fmt(px(xv)) << "\" y=\"" << fmt(top + ph + 16)
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
            << format_double(xv, 1) << "</text>\n";
        svg << "<text x=\"" << fmt(left - 6) << "\" y=\"" << fmt(py(yv) + 3)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
            << format_double(yv, 2) << "</text>\n";
        if (k > 0)
            svg << "<line x1=\"" << fmt(left) << "\" y1=\"" << fmt(py(yv)) << "\" x2=\""
                << fmt(left + pw) << "\" y2=\"" << fmt(py(yv))
                << "\" stroke=\"#dddddd\" stroke-width=\"0.5\"/>\n";
    }
    svg << "<text x=\"" << width / 2 << "\" y=\"" << height - 8
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << x_label
        << "</text>\n";
    svg << "<text x=\"14\" y=\"" << height / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\" transform=\"rotate(-90 14 "
        << height / 2 << ")\">" << y_label << "</text>\n";

    for (size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = kPalette[si % (sizeof(kPalette) / sizeof(kPalette[0]))];
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (size_t i = 0; i < s.x.size(); ++i) {
            if (i) svg << " ";
            svg << fmt(px(s.x[i])) << "," << fmt(py(s.y[i]));
        }
        svg << "\"/>\n";
        svg << "<text x=\"" << fmt(left + pw - 4) << "\" y=\"" << fmt(top + 14 + 14 * static_cast<double>(si))
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" << color
            << "\">" << s.label << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

void save_baselines(const std::vector<BaselineEntry>& baselines, const std::string& path) {
    json j = json::array();
    for (const auto& b : baselines)
        j.push_back({{"model", b.model}, {"metric", b.metric}, {"macs", b.macs}});
    const std::string text = j.dump(2) + "\n";
    write_file(path, text.data(), text.size());
}

std::vector<BaselineEntry> load_baselines(const std::string& path) {
    auto bytes = read_file(path);
    json j = json::parse(bytes.begin(), bytes.end());
    std::vector<BaselineEntry> out;
    for (const auto& e : j)
        out.push_back({e.at("model"), e.at("metric"), e.at("macs")});
    return out;
}

std::string cost_table_markdown(const CostReport& report) {
    std::ostringstream md;
    md << "| model | baseline MACs | chain MACs | individual ratio | baseline accum | chain accum | accumulated ratio |\n";
    md << "|---|---|---|---|---|---|---|\n";
    for (const auto& r : report.rows) {
        md << "| " << r.model << " | " << format_double(r.baseline_individual, 3) << " | "
           << format_double(r.chain_individual, 3) << " | "
           << format_double(r.ratio_individual, 2) << "x | "
           << format_double(r.baseline_accumulated, 3) << " | "
           << format_double(r.chain_accumulated, 3) << " | "
           << format_double(r.ratio_accumulated, 2) << "x |\n";
    }
    return md.str();
}

void save_cost_report(const CostReport& report, const std::string& path) {
    json rows = json::array();
    for (const auto& r : report.rows)
        rows.push_back({{"model", r.model},
                        {"baseline_individual", r.baseline_individual},
                        {"baseline_accumulated", r.baseline_accumulated},
                        {"chain_individual", r.chain_individual},
                        {"chain_accumulated", r.chain_accumulated},
                        {"ratio_individual", r.ratio_individual},
                        {"ratio_accumulated", r.ratio_accumulated}});
    const std::string text = json{{"rows", rows}}.dump(2) + "\n";
    write_file(path, text.data(), text.size());
}

void emit_report(const std::string& run_dir, double lta_threshold) {
    const std::string state_path = run_dir + "/chain_state.json";
    if (!std::filesystem::exists(state_path))
        throw ReportError("emit_report: expected " + state_path +
                          " and <model>/metrics.jsonl under the run dir");
    const ChainState state = load_chain_state(state_path);
    if (state.models.empty()) throw ReportError("emit_report: chain state lists no models");

    std::ostringstream md;
    md << "# Chain run report\n\n";
    md << "## Models\n\n";
    md << "| model | epochs logged | l_task | l_ifd | R@1 t2i | R@1 i2t | class top-1 | run GMACs | cumulative GMACs |\n";
    md << "|---|---|---|---|---|---|---|---|---|\n";

    for (const auto& m : state.models) {
        const std::string metrics_path = run_dir + "/" + m.model + "/metrics.jsonl";
        if (!std::filesystem::exists(metrics_path))
            throw ReportError("emit_report: missing " + metrics_path);
        const auto rows = read_metrics(metrics_path);
        if (rows.empty()) throw ReportError("emit_report: empty metrics in " + metrics_path);
        const auto& last = rows.back();
        md << "| " << m.model << " | " << last.epoch << " | " << format_double(last.l_task, 4)
           << " | " << format_double(last.l_ifd, 4) << " | "
           << (last.r1_t2i ? format_double(100.0 * *last.r1_t2i, 2) : std::string("-")) << " | "
           << (last.r1_i2t ? format_double(100.0 * *last.r1_i2t, 2) : std::string("-")) << " | "
           << (last.class_top1 ? format_double(100.0 * *last.class_top1, 2) : std::string("-"))
           << " | " << format_double(static_cast<double>(m.run_macs) / 1e9, 3) << " | "
           << format_double(static_cast<double>(m.cumulative_macs) / 1e9, 3) << " |\n";

        std::vector<Series> loss_series(2);
        loss_series[0].label = "l_task";
        loss_series[1].label = "l_total";
        Series acc_series;
        acc_series.label = "mean R@1 (%)";
        for (const auto& row : rows) {
            loss_series[0].x.push_back(static_cast<double>(row.epoch));
            loss_series[0].y.push_back(row.l_task);
            loss_series[1].x.push_back(static_cast<double>(row.epoch));
            loss_series[1].y.push_back(row.l_total);
            if (row.r1_t2i && row.r1_i2t) {
                acc_series.x.push_back(static_cast<double>(row.epoch));
                acc_series.y.push_back(50.0 * (*row.r1_t2i + *row.r1_i2t));
            }
        }
        std::vector<Series> chart = loss_series;
        std::string svg = svg_line_chart("losses: " + m.model, "epoch", "loss", chart);
        write_file(run_dir + "/curves_" + m.model + "_loss.svg", svg.data(), svg.size());
        if (!acc_series.x.empty()) {
            svg = svg_line_chart("retrieval: " + m.model, "epoch", "mean R@1 (%)", {acc_series});
            write_file(run_dir + "/curves_" + m.model + "_r1.svg", svg.data(), svg.size());
        }
    }

    const std::string baselines_path = run_dir + "/baselines.json";
    if (std::filesystem::exists(baselines_path)) {
        const auto baselines = load_baselines(baselines_path);
        std::vector<std::string> names;
        std::vector<double> base_macs, chain_macs;
        md << "\n## Cost vs baseline\n\n";
        for (const auto& m : state.models) {
            auto it = std::find_if(baselines.begin(), baselines.end(),
                                   [&](const BaselineEntry& b) { return b.model == m.model; });
            if (it == baselines.end()) continue;
            names.push_back(m.model);
            base_macs.push_back(it->macs);
            chain_macs.push_back(static_cast<double>(m.run_macs));
        }
        if (!names.empty()) {
            const CostReport costs = chain_report(names, base_macs, chain_macs);
            md << cost_table_markdown(costs);
            save_cost_report(costs, run_dir + "/cost_report.json");
        }
        md << "\n## LTA verdicts (threshold " << format_double(lta_threshold, 2)
           << " points)\n\n";
        md << "| model | chain metric | baseline metric | gap | verdict |\n|---|---|---|---|---|\n";
        for (const auto& m : state.models) {
            auto it = std::find_if(baselines.begin(), baselines.end(),
                                   [&](const BaselineEntry& b) { return b.model == m.model; });
            if (it == baselines.end() || it->metric < 0 || m.final_metric < 0) continue;
            const LtaVerdict v = lta_check(m.final_metric, it->metric, lta_threshold);
            md << "| " << m.model << " | " << format_double(v.candidate, 2) << " | "
               << format_double(v.baseline, 2) << " | "
               << format_double(v.baseline - v.candidate, 2) << " | "
               << (v.pass ? "pass" : "fail") << " |\n";
        }
    }

    const std::string text = md.str();
    write_file(run_dir + "/report.md", text.data(), text.size());
}

}  // namespace comchain
