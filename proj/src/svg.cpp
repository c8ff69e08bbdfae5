#include "metadagger/svg.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace metadagger {

namespace {

constexpr double kWidth = 720.0;
constexpr double kHeight = 420.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 150.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 60.0;
constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            default: out += c;
        }
    }
    return out;
}

void header(std::ostringstream& os, const std::string& title, const std::string& xl, const std::string& yl) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
       << "</text>\n";
    os << "<text x=\"" << kLeft + (kWidth - kLeft - kRight) / 2 << "\" y=\"" << kHeight - 15
       << "\" text-anchor=\"middle\">" << escape(xl) << "</text>\n";
    os << "<text x=\"18\" y=\"" << kTop + (kHeight - kTop - kBottom) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
       << kTop + (kHeight - kTop - kBottom) / 2 << ")\">" << escape(yl) << "</text>\n";
    os << "<line x1=\"" << kLeft << "\" y1=\"" << kHeight - kBottom << "\" x2=\"" << kWidth - kRight << "\" y2=\""
       << kHeight - kBottom << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kHeight - kBottom
       << "\" stroke=\"black\"/>\n";
}

void y_axis(std::ostringstream& os, double y_max) {
    const double plot_h = kHeight - kTop - kBottom;
    for (int i = 0; i <= 4; ++i) {
        const double v = y_max * i / 4.0;
        const double y = kHeight - kBottom - plot_h * i / 4.0;
        os << "<text x=\"" << kLeft - 6 << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">" << num(v) << "</text>\n";
        os << "<line x1=\"" << kLeft << "\" y1=\"" << num(y) << "\" x2=\"" << kWidth - kRight << "\" y2=\"" << num(y)
           << "\" stroke=\"#ddd\"/>\n";
    }
}

void legend(std::ostringstream& os, const std::vector<std::string>& names) {
    for (std::size_t i = 0; i < names.size(); ++i) {
        const double y = kTop + 10 + 20.0 * static_cast<double>(i);
        os << "<rect x=\"" << kWidth - kRight + 15 << "\" y=\"" << y - 9 << "\" width=\"12\" height=\"12\" fill=\""
           << kColors[i % 4] << "\"/>\n";
        os << "<text x=\"" << kWidth - kRight + 32 << "\" y=\"" << y + 1 << "\">" << escape(names[i]) << "</text>\n";
    }
}

}  // namespace

SvgChart::SvgChart(std::string title, std::string x_label, std::string y_label)
    : title_(std::move(title)), x_label_(std::move(x_label)), y_label_(std::move(y_label)) {}

void SvgChart::add_series(std::string name, std::vector<std::pair<double, double>> points) {
    series_.emplace_back(std::move(name), std::move(points));
}

void SvgChart::add_bars(std::string name, std::vector<double> values) {
    bars_.emplace_back(std::move(name), std::move(values));
}

std::string SvgChart::render_lines() const {
    std::ostringstream os;
    header(os, title_, x_label_, y_label_);
    double x_max = 1.0, y_max = 0.0;
    for (const auto& [_, pts] : series_)
        for (const auto& [x, y] : pts) {
            x_max = std::max(x_max, x);
            y_max = std::max(y_max, y);
        }
    if (y_max <= 0.0) y_max = 1.0;
    y_axis(os, y_max);
    const double plot_w = kWidth - kLeft - kRight;
    const double plot_h = kHeight - kTop - kBottom;
    for (int i = 0; i <= 4; ++i) {
        const double v = x_max * i / 4.0;
        os << "<text x=\"" << num(kLeft + plot_w * i / 4.0) << "\" y=\"" << kHeight - kBottom + 16
           << "\" text-anchor=\"middle\">" << num(v) << "</text>\n";
    }
    std::vector<std::string> names;
    for (std::size_t s = 0; s < series_.size(); ++s) {
        names.push_back(series_[s].first);
        if (series_[s].second.empty()) continue;
        os << "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" << kColors[s % 4] << "\" points=\"";
        for (const auto& [x, y] : series_[s].second)
            os << num(kLeft + plot_w * x / x_max) << ',' << num(kHeight - kBottom - plot_h * y / y_max) << ' ';
        os << "\"/>\n";
    }
    legend(os, names);
    os << "</svg>\n";
    return os.str();
}

std::string SvgChart::render_bars(const std::vector<std::string>& categories) const {
    std::ostringstream os;
    header(os, title_, x_label_, y_label_);
    double y_max = 0.0;
    for (const auto& [_, vals] : bars_)
        for (double v : vals) y_max = std::max(y_max, v);
    if (y_max <= 0.0) y_max = 1.0;
    y_axis(os, y_max);
    const double plot_w = kWidth - kLeft - kRight;
    const double plot_h = kHeight - kTop - kBottom;
    const std::size_t n_cat = std::max<std::size_t>(categories.size(), 1);
    const double group_w = plot_w / static_cast<double>(n_cat);
    const double bar_w = group_w * 0.8 / static_cast<double>(std::max<std::size_t>(bars_.size(), 1));
    std::vector<std::string> names;
    for (std::size_t s = 0; s < bars_.size(); ++s) {
        names.push_back(bars_[s].first);
        const auto& vals = bars_[s].second;
        for (std::size_t c = 0; c < vals.size() && c < categories.size(); ++c) {
            const double h = plot_h * vals[c] / y_max;
            const double x = kLeft + group_w * static_cast<double>(c) + group_w * 0.1 + bar_w * static_cast<double>(s);
            os << "<rect x=\"" << num(x) << "\" y=\"" << num(kHeight - kBottom - h) << "\" width=\"" << num(bar_w)
               << "\" height=\"" << num(h) << "\" fill=\"" << kColors[s % 4] << "\"/>\n";
        }
    }
    for (std::size_t c = 0; c < categories.size(); ++c) {
        os << "<text x=\"" << num(kLeft + group_w * (static_cast<double>(c) + 0.5)) << "\" y=\"" << kHeight - kBottom + 16
           << "\" text-anchor=\"middle\" font-size=\"10\">" << escape(categories[c]) << "</text>\n";
    }
    legend(os, names);
    os << "</svg>\n";
    return os.str();
}

std::string render_heatmap(const std::vector<double>& values, int size, const std::string& title) {
    std::ostringstream os;
    const double cell = 320.0 / size;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"400\" height=\"400\" font-family=\"sans-serif\" "
          "font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"200\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title) << "</text>\n";
    double vmax = 0.0;
    for (double v : values) vmax = std::max(vmax, v);
    if (vmax <= 0.0) vmax = 1.0;
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
            const double v = values[static_cast<std::size_t>(r * size + c)] / vmax;
            const int shade = static_cast<int>(255.0 * (1.0 - v));
            char color[16];
            std::snprintf(color, sizeof(color), "#ff%02x%02x", shade, shade);
            os << "<rect x=\"" << num(40 + c * cell) << "\" y=\"" << num(40 + (size - 1 - r) * cell) << "\" width=\""
               << num(cell) << "\" height=\"" << num(cell) << "\" fill=\"" << color << "\"/>\n";
        }
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace metadagger
