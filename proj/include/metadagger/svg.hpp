#pragma once

#include <string>
#include <utility>
#include <vector>

namespace metadagger {

/// Minimal self-contained SVG charts for the report figures.
class SvgChart {
public:
    SvgChart(std::string title, std::string x_label, std::string y_label);

    void add_series(std::string name, std::vector<std::pair<double, double>> points);
    void add_bars(std::string name, std::vector<double> values);

    std::string render_lines() const;
    std::string render_bars(const std::vector<std::string>& categories) const;

private:
    std::string title_;
    std::string x_label_;
    std::string y_label_;
    std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>> series_;
    std::vector<std::pair<std::string, std::vector<double>>> bars_;
};

/// G x G grid of values in [0, max], row 0 drawn at the bottom (nearest the car).
std::string render_heatmap(const std::vector<double>& values, int size, const std::string& title);

}  // namespace metadagger
