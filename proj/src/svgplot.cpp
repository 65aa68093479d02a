#include "csifp/svgplot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace csifp::svg {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string fmt(double v) {
    std::ostringstream out;
    out.precision(6);
    out << v;
    return out.str();
}

// Round bounds outward to a tidy tick step.
void nice_axis(double& lo, double& hi, double& step) {
    if (!(hi > lo)) {
        hi = lo + 1.0;
        lo -= 1.0;
    }
    const double span = hi - lo;
    const double raw = span / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    const double norm = raw / mag;
    step = (norm < 1.5 ? 1.0 : norm < 3.5 ? 2.0 : norm < 7.5 ? 5.0 : 10.0) * mag;
    lo = std::floor(lo / step) * step;
    hi = std::ceil(hi / step) * step;
}

}  // namespace

std::string render(const PlotSpec& spec) {
    double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo;
    double y_lo = x_lo, y_hi = -x_lo;
    for (const auto& s : spec.series) {
        for (const double v : s.x) {
            x_lo = std::min(x_lo, v);
            x_hi = std::max(x_hi, v);
        }
        for (const double v : s.y) {
            y_lo = std::min(y_lo, v);
            y_hi = std::max(y_hi, v);
        }
    }
    if (!std::isfinite(x_lo)) {
        x_lo = 0;
        x_hi = 1;
        y_lo = 0;
        y_hi = 1;
    }
    double x_step = 1, y_step = 1;
    nice_axis(x_lo, x_hi, x_step);
    nice_axis(y_lo, y_hi, y_step);

    const double ml = 62, mr = 18, mt = 34, mb = 46;  // margins
    const double pw = spec.width - ml - mr;
    const double ph = spec.height - mt - mb;
    const auto px = [&](double x) { return ml + (x - x_lo) / (x_hi - x_lo) * pw; };
    const auto py = [&](double y) { return mt + ph - (y - y_lo) / (y_hi - y_lo) * ph; };

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width << "\" height=\""
        << spec.height << "\" viewBox=\"0 0 " << spec.width << ' ' << spec.height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << spec.width / 2 << "\" y=\"20\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"14\">" << spec.title << "</text>\n";

    // Grid and ticks.
    out << "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#444\">\n";
    for (double x = x_lo; x <= x_hi + 1e-9 * x_step; x += x_step) {
        out << "<line x1=\"" << fmt(px(x)) << "\" y1=\"" << fmt(mt) << "\" x2=\"" << fmt(px(x))
            << "\" y2=\"" << fmt(mt + ph) << "\" stroke=\"#ddd\"/>\n";
        out << "<text x=\"" << fmt(px(x)) << "\" y=\"" << fmt(mt + ph + 16)
            << "\" text-anchor=\"middle\">" << fmt(x) << "</text>\n";
    }
    for (double y = y_lo; y <= y_hi + 1e-9 * y_step; y += y_step) {
        out << "<line x1=\"" << fmt(ml) << "\" y1=\"" << fmt(py(y)) << "\" x2=\"" << fmt(ml + pw)
            << "\" y2=\"" << fmt(py(y)) << "\" stroke=\"#ddd\"/>\n";
        out << "<text x=\"" << fmt(ml - 6) << "\" y=\"" << fmt(py(y) + 4)
            << "\" text-anchor=\"end\">" << fmt(y) << "</text>\n";
    }
    out << "</g>\n";
    out << "<rect x=\"" << fmt(ml) << "\" y=\"" << fmt(mt) << "\" width=\"" << fmt(pw)
        << "\" height=\"" << fmt(ph) << "\" fill=\"none\" stroke=\"#333\"/>\n";

    // Axis labels.
    out << "<text x=\"" << spec.width / 2 << "\" y=\"" << spec.height - 8
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << spec.x_label
        << "</text>\n";
    out << "<text x=\"14\" y=\"" << spec.height / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
        << "transform=\"rotate(-90 14 " << spec.height / 2 << ")\">" << spec.y_label << "</text>\n";

    // Series.
    for (std::size_t si = 0; si < spec.series.size(); ++si) {
        const Series& s = spec.series[si];
        const std::string color =
            s.color.empty() ? kPalette[si % (sizeof(kPalette) / sizeof(kPalette[0]))] : s.color;
        if (s.line && s.x.size() > 1) {
            out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
            for (std::size_t i = 0; i < s.x.size(); ++i) {
                out << fmt(px(s.x[i])) << ',' << fmt(py(s.y[i])) << ' ';
            }
            out << "\"/>\n";
        }
        if (s.points || s.x.size() == 1) {
            for (std::size_t i = 0; i < s.x.size(); ++i) {
                out << "<circle cx=\"" << fmt(px(s.x[i])) << "\" cy=\"" << fmt(py(s.y[i]))
                    << "\" r=\"2.6\" fill=\"" << color << "\"/>\n";
            }
        }
        // Legend entry.
        const double ly = mt + 14 + 16 * static_cast<double>(si);
        out << "<line x1=\"" << fmt(ml + pw - 130) << "\" y1=\"" << fmt(ly) << "\" x2=\""
            << fmt(ml + pw - 110) << "\" y2=\"" << fmt(ly) << "\" stroke=\"" << color
            << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << fmt(ml + pw - 104) << "\" y=\"" << fmt(ly + 4)
            << "\" font-family=\"sans-serif\" font-size=\"11\">" << s.name << "</text>\n";
    }
    out << "</svg>\n";
    return out.str();
}

void save(const PlotSpec& spec, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write plot: " + path);
    out << render(spec);
    if (!out) throw std::runtime_error("plot write failed: " + path);
}

}  // namespace csifp::svg
