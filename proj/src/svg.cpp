#include "maskdiff/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "maskdiff/errors.hpp"

namespace maskdiff {

namespace {

constexpr double kW = 640, kH = 400;
constexpr double kLeft = 64, kRight = 24, kTop = 40, kBottom = 48;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '&')
            out += "&amp;";
        else if (c == '<')
            out += "&lt;";
        else if (c == '>')
            out += "&gt;";
        else
            out += c;
    }
    return out;
}

struct Scale {
    double lo = 0, hi = 1, px0 = 0, px1 = 1;
    double operator()(double v) const { return px0 + (v - lo) / (hi - lo) * (px1 - px0); }
};

Scale fit(double lo, double hi, double px0, double px1) {
    if (!(std::isfinite(lo) && std::isfinite(hi))) throw NumericError("chart range is not finite");
    if (lo == hi) {  // degenerate span: pad so the point sits mid-axis
        lo -= 1.0;
        hi += 1.0;
    }
    return {lo, hi, px0, px1};
}

void open_svg(std::string& s, const std::string& title) {
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kW) + "\" height=\"" +
         num(kH) + "\" viewBox=\"0 0 " + num(kW) + " " + num(kH) + "\">\n";
    s += "<rect width=\"" + num(kW) + "\" height=\"" + num(kH) + "\" fill=\"white\"/>\n";
    s += "<text x=\"" + num(kW / 2) +
         "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">" +
         escape(title) + "</text>\n";
}

void axes(std::string& s, const Scale& sx, const Scale& sy, const std::string& x_label,
          const std::string& y_label, bool x_ticks = true) {
    s += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kH - kBottom) + "\" x2=\"" +
         num(kW - kRight) + "\" y2=\"" + num(kH - kBottom) + "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kTop) + "\" x2=\"" + num(kLeft) +
         "\" y2=\"" + num(kH - kBottom) + "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; i++) {
        double fx = sx.lo + (sx.hi - sx.lo) * i / 4.0;
        double fy = sy.lo + (sy.hi - sy.lo) * i / 4.0;
        double px = sx(fx), py = sy(fy);
        if (x_ticks) {
            s += "<line x1=\"" + num(px) + "\" y1=\"" + num(kH - kBottom) + "\" x2=\"" + num(px) +
                 "\" y2=\"" + num(kH - kBottom + 5) + "\" stroke=\"black\"/>\n";
            s += "<text x=\"" + num(px) + "\" y=\"" + num(kH - kBottom + 18) +
                 "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
                 num(fx) + "</text>\n";
        }
        s += "<line x1=\"" + num(kLeft - 5) + "\" y1=\"" + num(py) + "\" x2=\"" + num(kLeft) +
             "\" y2=\"" + num(py) + "\" stroke=\"black\"/>\n";
        s += "<text x=\"" + num(kLeft - 8) + "\" y=\"" + num(py + 4) +
             "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + num(fy) +
             "</text>\n";
    }
    s += "<text x=\"" + num((kLeft + kW - kRight) / 2) + "\" y=\"" + num(kH - 10) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" +
         escape(x_label) + "</text>\n";
    s += "<text x=\"16\" y=\"" + num((kTop + kH - kBottom) / 2) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 " +
         num((kTop + kH - kBottom) / 2) + ")\">" + escape(y_label) + "</text>\n";
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<Series>& series) {
    if (series.empty()) throw DataError("no data: line chart needs at least one series");
    double xlo = 0, xhi = 0, ylo = 0, yhi = 0;
    bool first = true;
    for (const auto& ser : series) {
        if (ser.x.size() != ser.y.size() || ser.x.empty())
            throw DataError("series '" + ser.label + "' is empty or ragged");
        if (!ser.lo.empty() && (ser.lo.size() != ser.y.size() || ser.hi.size() != ser.y.size()))
            throw DataError("series '" + ser.label + "' has a ragged CI band");
        for (size_t i = 0; i < ser.x.size(); i++) {
            double yl = ser.lo.empty() ? ser.y[i] : ser.lo[i];
            double yh = ser.hi.empty() ? ser.y[i] : ser.hi[i];
            if (!(std::isfinite(ser.x[i]) && std::isfinite(ser.y[i]) && std::isfinite(yl) &&
                  std::isfinite(yh)))
                throw NumericError("series '" + ser.label + "' has a non-finite point");
            if (first) {
                xlo = xhi = ser.x[i];
                ylo = yl;
                yhi = yh;
                first = false;
            }
            xlo = std::min(xlo, ser.x[i]);
            xhi = std::max(xhi, ser.x[i]);
            ylo = std::min(ylo, yl);
            yhi = std::max(yhi, yh);
        }
    }
    Scale sx = fit(xlo, xhi, kLeft, kW - kRight);
    Scale sy = fit(ylo, yhi, kH - kBottom, kTop);  // flipped: svg y grows downward

    std::string s;
    open_svg(s, title);
    axes(s, sx, sy, x_label, y_label);
    for (size_t k = 0; k < series.size(); k++) {
        const auto& ser = series[k];
        const char* color = kPalette[k % (sizeof(kPalette) / sizeof(kPalette[0]))];
        if (!ser.lo.empty()) {  // CI band as a closed translucent polygon
            std::string pts;
            for (size_t i = 0; i < ser.x.size(); i++)
                pts += num(sx(ser.x[i])) + "," + num(sy(ser.lo[i])) + " ";
            for (size_t i = ser.x.size(); i-- > 0;)
                pts += num(sx(ser.x[i])) + "," + num(sy(ser.hi[i])) + " ";
            pts.pop_back();
            s += "<polygon points=\"" + pts + "\" fill=\"" + color +
                 "\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";
        }
        std::string pts;
        for (size_t i = 0; i < ser.x.size(); i++)
            pts += num(sx(ser.x[i])) + "," + num(sy(ser.y[i])) + " ";
        pts.pop_back();
        s += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + std::string(color) +
             "\" stroke-width=\"1.5\"/>\n";
        for (size_t i = 0; i < ser.x.size(); i++)
            s += "<circle cx=\"" + num(sx(ser.x[i])) + "\" cy=\"" + num(sy(ser.y[i])) +
                 "\" r=\"2.5\" fill=\"" + color + "\"/>\n";
        double ly = kTop + 14.0 * (double)k;
        s += "<rect x=\"" + num(kW - kRight - 150) + "\" y=\"" + num(ly - 8) +
             "\" width=\"10\" height=\"10\" fill=\"" + std::string(color) + "\"/>\n";
        s += "<text x=\"" + num(kW - kRight - 136) + "\" y=\"" + num(ly + 1) +
             "\" font-family=\"sans-serif\" font-size=\"11\">" + escape(ser.label) + "</text>\n";
    }
    s += "</svg>\n";
    return s;
}

std::string bar_chart_svg(const std::string& title, const std::string& y_label,
                          const std::vector<Bar>& bars) {
    if (bars.empty()) throw DataError("no data: bar chart needs at least one bar");
    double ylo = 0, yhi = 0;
    for (const auto& b : bars) {
        if (!std::isfinite(b.value)) throw NumericError("bar value is not finite");
        ylo = std::min(ylo, b.value);
        yhi = std::max(yhi, b.value);
    }
    Scale sy = fit(ylo, yhi, kH - kBottom, kTop);
    Scale sx = fit(0, (double)bars.size(), kLeft, kW - kRight);

    std::string s;
    open_svg(s, title);
    axes(s, sx, sy, "", y_label, false);
    for (size_t i = 0; i < bars.size(); i++) {
        double x0 = sx((double)i + 0.15), x1 = sx((double)i + 0.85);
        double base = sy(std::max(0.0, sy.lo)), top = sy(bars[i].value);
        const char* color = kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))];
        s += "<rect x=\"" + num(x0) + "\" y=\"" + num(std::min(base, top)) + "\" width=\"" +
             num(x1 - x0) + "\" height=\"" + num(std::fabs(base - top)) + "\" fill=\"" + color +
             "\"/>\n";
        s += "<text x=\"" + num((x0 + x1) / 2) + "\" y=\"" + num(kH - kBottom + 18) +
             "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" +
             escape(bars[i].label) + "</text>\n";
        s += "<text x=\"" + num((x0 + x1) / 2) + "\" y=\"" + num(std::min(base, top) - 4) +
             "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" +
             num(bars[i].value) + "</text>\n";
    }
    s += "</svg>\n";
    return s;
}

}  // namespace maskdiff
