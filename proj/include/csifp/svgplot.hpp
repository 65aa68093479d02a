#pragma once

#include <string>
#include <vector>

namespace csifp::svg {

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
    std::string color;     // CSS color
    bool points = false;   // draw markers instead of / in addition to the line
    bool line = true;
};

struct PlotSpec {
    std::string title;
    std::string x_label;
    std::string y_label;
    int width = 640;
    int height = 420;
    std::vector<Series> series;
};

// Deterministic standalone SVG line/scatter chart.
std::string render(const PlotSpec& spec);
void save(const PlotSpec& spec, const std::string& path);

}  // namespace csifp::svg
