#pragma once

// Minimal SVG line plots for metrics curves. Text output keeps the plots
// deterministic and dependency-free.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace metadg {

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

inline void write_svg_plot(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::string& path) {
    if (series.empty()) throw std::invalid_argument("write_svg_plot: no series");
    const double width = 720, height = 440;
    const double ml = 70, mr = 20, mt = 40, mb = 50;

    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series) {
        for (double v : s.x) {
            xmin = std::min(xmin, v);
            xmax = std::max(xmax, v);
        }
        for (double v : s.y) {
            ymin = std::min(ymin, v);
            ymax = std::max(ymax, v);
        }
    }
    if (xmax <= xmin) xmax = xmin + 1.0;
    if (ymax <= ymin) ymax = ymin + 1.0;
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    auto sx = [&](double v) { return ml + (v - xmin) / (xmax - xmin) * (width - ml - mr); };
    auto sy = [&](double v) { return height - mb - (v - ymin) / (ymax - ymin) * (height - mt - mb); };

    static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_svg_plot: cannot open " + path);
    char buf[256];
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
    out << "<text x=\"" << width / 2 << "\" y=\"" << height - 10 << "\" text-anchor=\"middle\" font-size=\"12\">"
        << x_label << "</text>\n";
    out << "<text x=\"16\" y=\"" << height / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
        << height / 2 << ")\">" << y_label << "</text>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << height - mb
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\"" << width - mr << "\" y2=\"" << height - mb
        << "\" stroke=\"black\"/>\n";

    for (int t = 0; t <= 4; ++t) {
        const double fy = ymin + (ymax - ymin) * t / 4.0;
        const double fx = xmin + (xmax - xmin) * t / 4.0;
        std::snprintf(buf, sizeof(buf), "%.4g", fy);
        out << "<text x=\"" << ml - 6 << "\" y=\"" << sy(fy) + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << buf
            << "</text>\n";
        std::snprintf(buf, sizeof(buf), "%.4g", fx);
        out << "<text x=\"" << sx(fx) << "\" y=\"" << height - mb + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
            << buf << "</text>\n";
    }

    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& s = series[i];
        const char* color = kColors[i % 6];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t p = 0; p < s.x.size(); ++p) {
            std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", sx(s.x[p]), sy(s.y[p]));
            out << buf;
        }
        out << "\"/>\n";
        out << "<text x=\"" << width - mr - 150 << "\" y=\"" << mt + 16 * (i + 1) << "\" font-size=\"12\" fill=\""
            << color << "\">" << s.label << "</text>\n";
    }
    out << "</svg>\n";
}

}  // namespace metadg
