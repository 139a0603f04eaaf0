#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "fieldstream/core.hpp"

// Hand-rolled SVG line charts for the report layer. Nothing fancy: axes,
// polylines and labels, one <svg> per file.

namespace fieldstream::plot {

struct Series {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

struct Panel {
    std::string title;
    Series series;
};

namespace detail {

struct Bounds {
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
};

inline Bounds bounds_of(const std::vector<Series>& series) {
    Bounds b{1e300, -1e300, 1e300, -1e300};
    bool any = false;
    for (const auto& s : series) {
        for (auto [x, y] : s.points) {
            if (!std::isfinite(x) || !std::isfinite(y)) continue;
            any = true;
            b.xmin = std::min(b.xmin, x);
            b.xmax = std::max(b.xmax, x);
            b.ymin = std::min(b.ymin, y);
            b.ymax = std::max(b.ymax, y);
        }
    }
    if (!any) return {0, 1, 0, 1};
    if (b.xmax == b.xmin) b.xmax = b.xmin + 1;
    if (b.ymax == b.ymin) b.ymax = b.ymin + (b.ymin == 0 ? 1 : std::abs(b.ymin) * 0.1);
    return b;
}

inline const char* color(std::size_t i) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
    return palette[i % 8];
}

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

inline void draw_chart(std::string& svg, double ox, double oy, double w, double h,
                       const std::string& title, const std::vector<Series>& series) {
    const double ml = 52, mb = 28, mt = 22, mr = 10;  // margins inside the cell
    const double px = ox + ml, py = oy + mt, pw = w - ml - mr, ph = h - mt - mb;
    auto b = bounds_of(series);
    auto sx = [&](double x) { return px + (x - b.xmin) / (b.xmax - b.xmin) * pw; };
    auto sy = [&](double y) { return py + ph - (y - b.ymin) / (b.ymax - b.ymin) * ph; };

    svg += "<rect x='" + fmt(px) + "' y='" + fmt(py) + "' width='" + fmt(pw) + "' height='" +
           fmt(ph) + "' fill='none' stroke='#999'/>\n";
    svg += "<text x='" + fmt(ox + w / 2) + "' y='" + fmt(oy + 14) +
           "' font-size='11' text-anchor='middle' font-family='sans-serif'>" + title +
           "</text>\n";
    svg += "<text x='" + fmt(px - 6) + "' y='" + fmt(sy(b.ymin)) +
           "' font-size='9' text-anchor='end' font-family='sans-serif'>" + fmt(b.ymin) +
           "</text>\n";
    svg += "<text x='" + fmt(px - 6) + "' y='" + fmt(sy(b.ymax) + 8) +
           "' font-size='9' text-anchor='end' font-family='sans-serif'>" + fmt(b.ymax) +
           "</text>\n";
    svg += "<text x='" + fmt(sx(b.xmin)) + "' y='" + fmt(py + ph + 14) +
           "' font-size='9' text-anchor='start' font-family='sans-serif'>" + fmt(b.xmin) +
           "</text>\n";
    svg += "<text x='" + fmt(sx(b.xmax)) + "' y='" + fmt(py + ph + 14) +
           "' font-size='9' text-anchor='end' font-family='sans-serif'>" + fmt(b.xmax) +
           "</text>\n";

    std::size_t idx = 0;
    for (const auto& s : series) {
        std::string path;
        for (auto [x, y] : s.points) {
            if (!std::isfinite(x) || !std::isfinite(y)) continue;
            path += path.empty() ? 'M' : 'L';
            path += fmt(sx(x)) + " " + fmt(sy(y)) + " ";
        }
        if (!path.empty())
            svg += "<path d='" + path + "' fill='none' stroke='" +
                   detail::color(idx) + "' stroke-width='1.5'/>\n";
        if (series.size() > 1) {
            svg += "<text x='" + fmt(px + 4) + "' y='" + fmt(py + 12 + 12 * idx) +
                   "' font-size='9' fill='" + detail::color(idx) +
                   "' font-family='sans-serif'>" + s.name + "</text>\n";
        }
        ++idx;
    }
}

}  // namespace detail

/// One chart, possibly with several series.
inline void write_chart_svg(const std::string& path, const std::string& title,
                            const std::vector<Series>& series) {
    const double w = 640, h = 420;
    std::string svg = "<svg xmlns='http://www.w3.org/2000/svg' width='" + detail::fmt(w) +
                      "' height='" + detail::fmt(h) + "'>\n";
    svg += "<rect width='100%' height='100%' fill='white'/>\n";
    detail::draw_chart(svg, 0, 0, w, h, title, series);
    svg += "</svg>\n";
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << svg;
}

/// A grid of single-series panels, one per stream.
inline void write_panels_svg(const std::string& path, const std::vector<Panel>& panels) {
    if (panels.empty()) throw InvalidArgument("no panels to plot");
    const std::size_t cols =
        static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(panels.size()))));
    const std::size_t rows = (panels.size() + cols - 1) / cols;
    const double cw = 300, ch = 200;
    const double w = static_cast<double>(cols) * cw, h = static_cast<double>(rows) * ch;

    std::string svg = "<svg xmlns='http://www.w3.org/2000/svg' width='" + detail::fmt(w) +
                      "' height='" + detail::fmt(h) + "'>\n";
    svg += "<rect width='100%' height='100%' fill='white'/>\n";
    for (std::size_t i = 0; i < panels.size(); ++i) {
        double ox = static_cast<double>(i % cols) * cw;
        double oy = static_cast<double>(i / cols) * ch;
        detail::draw_chart(svg, ox, oy, cw, ch, panels[i].title, {panels[i].series});
    }
    svg += "</svg>\n";
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << svg;
}

}  // namespace fieldstream::plot
