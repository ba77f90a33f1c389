#pragma once

// Minimal static SVG charts for run artifacts.

#include <optional>
#include <string>
#include <vector>

namespace dfat::plots {

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

std::string line_chart_svg(const std::string& title, const std::vector<Series>& series, const std::string& x_label,
                           const std::string& y_label);

struct Bar {
    std::string label;
    std::optional<double> value;  // absent bars are drawn as "failed"
};

std::string bar_chart_svg(const std::string& title, const std::vector<Bar>& bars, const std::string& y_label);

}  // namespace dfat::plots
