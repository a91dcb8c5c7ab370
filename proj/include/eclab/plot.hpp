#pragma once

// Dependency-free SVG line charts for metric streams: polylines, axes, tick
// labels and a legend, stacked one panel per field.

#include <algorithm>
#include <cmath>
#include <istream>
#include <set>
#include <string>
#include <vector>

#include "eclab/errors.hpp"
#include "eclab/harness.hpp"
#include "json.hpp"

namespace eclab {

struct PlotSeries {
    std::string label;
    std::vector<double> x, y;
};

inline std::vector<nlohmann::json> parse_jsonl(std::istream& is) {
    std::vector<nlohmann::json> records;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        try {
            records.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw IoError(std::string("metrics: bad JSONL line: ") + e.what());
        }
    }
    return records;
}

/// Dotted path lookup ("layers.0.mean_entropy"); throws naming the field.
inline double extract_field(const nlohmann::json& record, const std::string& field) {
    const nlohmann::json* cur = &record;
    std::size_t pos = 0;
    while (pos <= field.size()) {
        const std::size_t dot = field.find('.', pos);
        const std::string part =
            field.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
        if (cur->is_array()) {
            std::size_t idx = 0;
            try {
                idx = std::stoul(part);
            } catch (...) {
                throw ConfigError("plot: missing field '" + field + "' in record");
            }
            if (idx >= cur->size())
                throw ConfigError("plot: missing field '" + field + "' in record");
            cur = &(*cur)[idx];
        } else {
            auto it = cur->find(part);
            if (it == cur->end())
                throw ConfigError("plot: missing field '" + field + "' in record");
            cur = &*it;
        }
        if (dot == std::string::npos) break;
        pos = dot + 1;
    }
    if (cur->is_null()) return std::nan("");
    if (!cur->is_number())
        throw ConfigError("plot: field '" + field + "' is not numeric");
    return cur->get<double>();
}

namespace detail {

inline const char* plot_color(std::size_t i) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
    return palette[i % 8];
}

inline std::string fmt_tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

/// One chart panel at vertical offset y0; appends SVG elements to `out`.
inline void render_panel(std::string& out, const std::vector<PlotSeries>& series,
                         const std::string& title, bool logy, double y0, double w,
                         double h) {
    const double ml = 64, mr = 150, mt = 28, mb = 32;
    const double px = ml, py = y0 + mt, pw = w - ml - mr, ph = h - mt - mb;

    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
    double ymin = xmin, ymax = -xmin;
    for (const PlotSeries& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            double yv = s.y[i];
            if (!std::isfinite(yv)) continue;
            if (logy && yv <= 0.0) continue;
            if (logy) yv = std::log10(yv);
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, yv);
            ymax = std::max(ymax, yv);
        }
    if (!std::isfinite(xmin)) {
        xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) {
        ymax += 0.5;
        ymin -= 0.5;
    }

    auto sx = [&](double x) { return px + pw * (x - xmin) / (xmax - xmin); };
    auto sy = [&](double y) { return py + ph * (1.0 - (y - ymin) / (ymax - ymin)); };

    out += "<rect x=\"" + std::to_string(px) + "\" y=\"" + std::to_string(py) +
           "\" width=\"" + std::to_string(pw) + "\" height=\"" + std::to_string(ph) +
           "\" fill=\"none\" stroke=\"#333\"/>\n";
    out += "<text x=\"" + std::to_string(px) + "\" y=\"" + std::to_string(y0 + 18) +
           "\" font-size=\"13\" font-family=\"sans-serif\">" + title +
           (logy ? " (log scale)" : "") + "</text>\n";

    for (int i = 0; i <= 4; ++i) {
        const double fy = ymin + (ymax - ymin) * i / 4.0;
        const double yy = sy(fy);
        const double label = logy ? std::pow(10.0, fy) : fy;
        out += "<line x1=\"" + std::to_string(px) + "\" y1=\"" + std::to_string(yy) +
               "\" x2=\"" + std::to_string(px + pw) + "\" y2=\"" + std::to_string(yy) +
               "\" stroke=\"#ddd\"/>\n";
        out += "<text x=\"" + std::to_string(px - 6) + "\" y=\"" + std::to_string(yy + 4) +
               "\" font-size=\"10\" text-anchor=\"end\" font-family=\"sans-serif\">" +
               fmt_tick(label) + "</text>\n";
        const double fx = xmin + (xmax - xmin) * i / 4.0;
        out += "<text x=\"" + std::to_string(sx(fx)) + "\" y=\"" +
               std::to_string(py + ph + 16) +
               "\" font-size=\"10\" text-anchor=\"middle\" font-family=\"sans-serif\">" +
               fmt_tick(fx) + "</text>\n";
    }

    for (std::size_t si = 0; si < series.size(); ++si) {
        const PlotSeries& s = series[si];
        std::string pts;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            double yv = s.y[i];
            if (!std::isfinite(yv) || (logy && yv <= 0.0)) continue;
            if (logy) yv = std::log10(yv);
            pts += std::to_string(sx(s.x[i])) + "," + std::to_string(sy(yv)) + " ";
        }
        out += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" +
               plot_color(si) + "\" stroke-width=\"1.5\"/>\n";
        const double ly = py + 14 + 16 * static_cast<double>(si);
        out += "<line x1=\"" + std::to_string(px + pw + 8) + "\" y1=\"" +
               std::to_string(ly - 4) + "\" x2=\"" + std::to_string(px + pw + 28) +
               "\" y2=\"" + std::to_string(ly - 4) + "\" stroke=\"" + plot_color(si) +
               "\" stroke-width=\"2\"/>\n";
        out += "<text x=\"" + std::to_string(px + pw + 32) + "\" y=\"" +
               std::to_string(ly) + "\" font-size=\"10\" font-family=\"sans-serif\">" +
               s.label + "</text>\n";
    }
}

}  // namespace detail

/// Multi-panel chart: one panel per field, one polyline per run. Runs are
/// (run_id, record list) pairs; x is the record's "step".
inline std::string render_metric_charts(
    const std::vector<std::pair<std::string, std::vector<nlohmann::json>>>& runs,
    const std::vector<std::string>& fields, const std::set<std::string>& logy_fields) {
    if (fields.empty()) throw ConfigError("plot: no fields requested");
    const double w = 720, panel_h = 220;
    const double h = panel_h * static_cast<double>(fields.size());
    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                      std::to_string(w) + "\" height=\"" + std::to_string(h) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    for (std::size_t f = 0; f < fields.size(); ++f) {
        std::vector<PlotSeries> series;
        for (const auto& [run_id, records] : runs) {
            PlotSeries s;
            s.label = run_id;
            for (const nlohmann::json& rec : records) {
                auto it = rec.find("step");
                if (it == rec.end() || !it->is_number())
                    throw ConfigError("plot: missing field 'step' in record");
                // sharpness appears only on probe records; skip rows lacking
                // an optional field rather than failing the whole chart
                try {
                    s.y.push_back(extract_field(rec, fields[f]));
                } catch (const ConfigError&) {
                    if (fields[f] == "sharpness" || fields[f] == "threshold" ||
                        fields[f] == "wall_ms")
                        continue;
                    throw;
                }
                s.x.push_back(it->get<double>());
            }
            series.push_back(std::move(s));
        }
        detail::render_panel(svg, series, fields[f], logy_fields.count(fields[f]) > 0,
                             panel_h * static_cast<double>(f), w, panel_h);
    }
    svg += "</svg>\n";
    return svg;
}

}  // namespace eclab
