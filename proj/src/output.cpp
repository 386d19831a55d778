#include "ising/output.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace ising {

std::string fmt_num(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, r.ptr);
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

CsvTable& CsvTable::operator<<(const std::string& s) {
    if (rows_.empty()) rows_.emplace_back();
    rows_.back().push_back(s);
    return *this;
}

void CsvTable::write(std::ostream& os) const {
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) os << ',';
            os << csv_field(cells[i]);
        }
        os << '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
}

void CsvTable::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    write(f);
}

namespace {

std::string xml_escape(const std::string& s) {
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

std::string fixed(double x, int digits = 2) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(digits);
    os << x;
    return os.str();
}

}  // namespace

void write_svg_plot(const std::filesystem::path& path, const std::string& title, const std::string& xlabel,
                    const std::string& ylabel, const std::vector<SvgSeries>& series, bool log_y) {
    const double W = 640, H = 420, L = 70, R = 20, T = 40, B = 50;
    auto ty = [&](double y) { return log_y ? std::log10(y) : y; };
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            double e = s.err.empty() ? 0.0 : s.err[i];
            double lo = s.y[i] - e, hi = s.y[i] + e;
            if (log_y) {
                if (s.y[i] <= 0) continue;
                lo = lo > 0 ? lo : s.y[i];
            }
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, ty(lo));
            y1 = std::max(y1, ty(hi));
        }
    if (!(x0 < x1)) x0 -= 1, x1 += 1;
    if (!(y0 < y1)) y0 -= 1, y1 += 1;
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double y) { return H - B - (ty(y) - y0) / (y1 - y0) * (H - T - B); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title)
       << "</text>\n";
    os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        double xv = x0 + (x1 - x0) * i / 4, yv = y0 + (y1 - y0) * i / 4;
        double yy = H - B - (H - T - B) * i / 4.0;
        os << "<text x=\"" << fixed(px(xv)) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
           << fmt_num(std::round(xv * 1000) / 1000) << "</text>\n";
        os << "<text x=\"" << L - 6 << "\" y=\"" << fixed(yy + 4) << "\" text-anchor=\"end\" font-size=\"11\">"
           << (log_y ? "1e" : "") << fmt_num(std::round(yv * 1000) / 1000) << "</text>\n";
    }
    os << "<text x=\"" << W / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"13\">"
       << xml_escape(xlabel) << "</text>\n";
    os << "<text x=\"16\" y=\"" << H / 2 << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 "
       << H / 2 << ")\">" << xml_escape(ylabel) << "</text>\n";
    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* c = colors[si % 6];
        std::string pts;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (log_y && s.y[i] <= 0) continue;
            pts += fixed(px(s.x[i])) + "," + fixed(py(s.y[i])) + " ";
            os << "<circle cx=\"" << fixed(px(s.x[i])) << "\" cy=\"" << fixed(py(s.y[i])) << "\" r=\"3\" fill=\"" << c
               << "\"/>\n";
            if (!s.err.empty() && s.err[i] > 0) {
                double lo = s.y[i] - s.err[i], hi = s.y[i] + s.err[i];
                if (log_y && lo <= 0) lo = s.y[i];
                os << "<line x1=\"" << fixed(px(s.x[i])) << "\" y1=\"" << fixed(py(lo)) << "\" x2=\""
                   << fixed(px(s.x[i])) << "\" y2=\"" << fixed(py(hi)) << "\" stroke=\"" << c << "\"/>\n";
            }
        }
        os << "<polyline fill=\"none\" stroke=\"" << c << "\" points=\"" << pts << "\"/>\n";
        os << "<text x=\"" << W - R - 150 << "\" y=\"" << T + 14 * (si + 1) << "\" font-size=\"11\" fill=\"" << c
           << "\">" << xml_escape(s.label) << "</text>\n";
    }
    os << "</svg>\n";
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << os.str();
}

std::filesystem::path output_root(const std::string& explicit_dir) {
    if (!explicit_dir.empty()) return explicit_dir;
    if (const char* env = std::getenv("ISING_OUT_DIR"); env && *env) return env;
    return "out";
}

}  // namespace ising
