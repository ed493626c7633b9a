#pragma once

#include <string>
#include <utility>
#include <vector>

namespace chaosib::svg {

/// One plotted series: polyline (lines=true) or scatter marks.
struct Series {
    std::string label;
    std::vector<std::pair<double, double>> points;
    bool lines = true;
    std::string color;       ///< empty = auto palette
    double mark_radius = 2.5;
};

struct PlotStyle {
    int width = 720;
    int height = 520;
    std::string title;
    std::string x_label;
    std::string y_label;
};

/// Standalone SVG 1.1 document with axes, tick labels, legend, and the series.
/// An empty series list produces a valid axes-only document.
void write_plot(const std::vector<Series>& series, const PlotStyle& style,
                const std::string& path);

}  // namespace chaosib::svg
