#include "chaosib/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace chaosib::svg {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

std::string xml_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string fmt(double v) {
    std::ostringstream ss;
    ss.precision(6);
    ss << v;
    return ss.str();
}

/// Round tick step to 1/2/5 * 10^k.
double nice_step(double span, int target_ticks) {
    if (!(span > 0.0)) return 1.0;
    const double raw = span / target_ticks;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    const double frac = raw / mag;
    double nice = 10.0;
    if (frac <= 1.0) nice = 1.0;
    else if (frac <= 2.0) nice = 2.0;
    else if (frac <= 5.0) nice = 5.0;
    return nice * mag;
}

}  // namespace

void write_plot(const std::vector<Series>& series, const PlotStyle& style,
                const std::string& path) {
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
    double ymin = xmin, ymax = -xmin;
    for (const auto& s : series) {
        for (const auto& [x, y] : s.points) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    }
    if (!std::isfinite(xmin)) {
        xmin = 0.0;
        xmax = 1.0;
        ymin = 0.0;
        ymax = 1.0;
    }
    if (xmax == xmin) {
        xmax += 0.5;
        xmin -= 0.5;
    }
    if (ymax == ymin) {
        ymax += 0.5;
        ymin -= 0.5;
    }

    const double ml = 70, mr = 20, mt = style.title.empty() ? 20 : 40, mb = 50;
    const double pw = style.width - ml - mr;
    const double ph = style.height - mt - mb;
    auto sx = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
    auto sy = [&](double y) { return mt + ph - (y - ymin) / (ymax - ymin) * ph; };

    std::ostringstream out;
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << style.width
        << "\" height=\"" << style.height << "\" viewBox=\"0 0 " << style.width << " "
        << style.height << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    // Axes frame
    out << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
        << "\" fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>\n";

    // Ticks
    const double xstep = nice_step(xmax - xmin, 6);
    for (double x = std::ceil(xmin / xstep) * xstep; x <= xmax + 1e-12 * xstep; x += xstep) {
        out << "<line x1=\"" << sx(x) << "\" y1=\"" << mt + ph << "\" x2=\"" << sx(x)
            << "\" y2=\"" << mt + ph + 5 << "\" stroke=\"black\"/>\n"
            << "<text x=\"" << sx(x) << "\" y=\"" << mt + ph + 18
            << "\" font-size=\"11\" text-anchor=\"middle\">" << fmt(x) << "</text>\n";
    }
    const double ystep = nice_step(ymax - ymin, 6);
    for (double y = std::ceil(ymin / ystep) * ystep; y <= ymax + 1e-12 * ystep; y += ystep) {
        out << "<line x1=\"" << ml - 5 << "\" y1=\"" << sy(y) << "\" x2=\"" << ml << "\" y2=\""
            << sy(y) << "\" stroke=\"black\"/>\n"
            << "<text x=\"" << ml - 8 << "\" y=\"" << sy(y) + 4
            << "\" font-size=\"11\" text-anchor=\"end\">" << fmt(y) << "</text>\n";
    }

    // Labels
    if (!style.title.empty()) {
        out << "<text x=\"" << style.width / 2.0 << "\" y=\"22\" font-size=\"15\" "
            << "text-anchor=\"middle\">" << xml_escape(style.title) << "</text>\n";
    }
    if (!style.x_label.empty()) {
        out << "<text x=\"" << ml + pw / 2.0 << "\" y=\"" << style.height - 12
            << "\" font-size=\"13\" text-anchor=\"middle\">" << xml_escape(style.x_label)
            << "</text>\n";
    }
    if (!style.y_label.empty()) {
        out << "<text x=\"16\" y=\"" << mt + ph / 2.0 << "\" font-size=\"13\" "
            << "text-anchor=\"middle\" transform=\"rotate(-90 16 " << mt + ph / 2.0 << ")\">"
            << xml_escape(style.y_label) << "</text>\n";
    }

    // Series
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& s = series[i];
        const std::string color =
            s.color.empty() ? kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))] : s.color;
        if (s.lines && s.points.size() > 1) {
            out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" "
                << "points=\"";
            for (const auto& [x, y] : s.points) out << fmt(sx(x)) << "," << fmt(sy(y)) << " ";
            out << "\"/>\n";
        } else {
            for (const auto& [x, y] : s.points) {
                out << "<circle cx=\"" << fmt(sx(x)) << "\" cy=\"" << fmt(sy(y)) << "\" r=\""
                    << s.mark_radius << "\" fill=\"" << color << "\"/>\n";
            }
        }
    }

    // Legend
    double ly = mt + 14;
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& s = series[i];
        if (s.label.empty()) continue;
        const std::string color =
            s.color.empty() ? kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))] : s.color;
        out << "<line x1=\"" << ml + pw - 130 << "\" y1=\"" << ly - 4 << "\" x2=\""
            << ml + pw - 110 << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color
            << "\" stroke-width=\"2\"/>\n"
            << "<text x=\"" << ml + pw - 104 << "\" y=\"" << ly
            << "\" font-size=\"11\">" << xml_escape(s.label) << "</text>\n";
        ly += 16;
    }

    out << "</svg>\n";

    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("write_plot: cannot open " + path);
    f << out.str();
    if (!f) throw std::runtime_error("write_plot: write failed for " + path);
}

}  // namespace chaosib::svg
