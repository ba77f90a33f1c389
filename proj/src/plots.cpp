#include "dfat/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace dfat::plots {

namespace {

constexpr double kWidth = 640, kHeight = 400, kLeft = 70, kRight = 150, kTop = 40, kBottom = 50;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string esc(const std::string& s) {
    std::string out;
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

std::string num(double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.4g", v);
    return b;
}

void header(std::ostringstream& os, const std::string& title) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << esc(title) << "</text>\n";
}

void axes(std::ostringstream& os, double y0, double y1, const std::string& x_label, const std::string& y_label) {
    const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
    os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double v = y0 + (y1 - y0) * k / 4.0;
        const double y = kTop + ph - ph * k / 4.0;
        os << "<line x1=\"" << kLeft - 4 << "\" y1=\"" << y << "\" x2=\"" << kLeft + pw << "\" y2=\"" << y
           << "\" stroke=\"#ddd\"/>\n<text x=\"" << kLeft - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << num(v)
           << "</text>\n";
    }
    os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 12 << "\" text-anchor=\"middle\">" << esc(x_label) << "</text>\n";
    os << "<text transform=\"translate(16 " << kTop + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << esc(y_label)
       << "</text>\n";
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::vector<Series>& series, const std::string& x_label,
                           const std::string& y_label) {
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series) {
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
    std::ostringstream os;
    header(os, title);
    axes(os, y0, y1, x_label, y_label);
    os << "<text x=\"" << kLeft << "\" y=\"" << kHeight - 28 << "\">" << num(x0) << "</text>\n";
    os << "<text x=\"" << kLeft + pw << "\" y=\"" << kHeight - 28 << "\" text-anchor=\"end\">" << num(x1) << "</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* color = kColors[k % std::size(kColors)];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.y[i])) continue;
            os << kLeft + pw * (s.x[i] - x0) / (x1 - x0) << "," << kTop + ph - ph * (s.y[i] - y0) / (y1 - y0) << " ";
        }
        os << "\"/>\n";
        const double ly = kTop + 16 + 18 * static_cast<double>(k);
        os << "<line x1=\"" << kWidth - kRight + 10 << "\" y1=\"" << ly << "\" x2=\"" << kWidth - kRight + 30 << "\" y2=\"" << ly
           << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n<text x=\"" << kWidth - kRight + 36 << "\" y=\"" << ly + 4
           << "\">" << esc(s.label) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::string bar_chart_svg(const std::string& title, const std::vector<Bar>& bars, const std::string& y_label) {
    double y1 = 0.0;
    for (const auto& b : bars) {
        if (b.value && std::isfinite(*b.value)) y1 = std::max(y1, *b.value);
    }
    if (y1 <= 0.0) y1 = 1.0;
    const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
    std::ostringstream os;
    header(os, title);
    axes(os, 0.0, y1, "", y_label);
    const double slot = bars.empty() ? pw : pw / static_cast<double>(bars.size());
    for (std::size_t k = 0; k < bars.size(); ++k) {
        const double cx = kLeft + slot * (static_cast<double>(k) + 0.5);
        const auto& b = bars[k];
        if (b.value && std::isfinite(*b.value)) {
            const double h = ph * std::max(0.0, *b.value) / y1;
            os << "<rect x=\"" << cx - slot * 0.3 << "\" y=\"" << kTop + ph - h << "\" width=\"" << slot * 0.6 << "\" height=\"" << h
               << "\" fill=\"" << kColors[k % std::size(kColors)] << "\"/>\n<text x=\"" << cx << "\" y=\"" << kTop + ph - h - 4
               << "\" text-anchor=\"middle\">" << num(*b.value) << "</text>\n";
        } else {
            os << "<text x=\"" << cx << "\" y=\"" << kTop + ph - 6 << "\" text-anchor=\"middle\" fill=\"#d62728\">failed</text>\n";
        }
        os << "<text x=\"" << cx << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\">" << esc(b.label) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace dfat::plots
