#include "phasealign/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "phasealign/errors.hpp"

namespace phasealign {

namespace {

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

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

std::string fmt(double v, int prec) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(prec) << v;
    return ss.str();
}

} // namespace

void write_line_plot_svg(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                         const std::string& y_label, const std::filesystem::path& path) {
    const double W = 720, H = 420, left = 70, right = 170, top = 40, bottom = 50;
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const Series& s : series)
        for (auto [x, y] : s.points) {
            if (!std::isfinite(x) || !std::isfinite(y)) continue;
            x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
        }
    if (!(x0 <= x1)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    const double pw = W - left - right, ph = H - top - bottom;
    auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
    auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title) << "</text>\n";
    out << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
        << "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = x0 + (x1 - x0) * i / 4, fy = y0 + (y1 - y0) * i / 4;
        out << "<text x=\"" << px(fx) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << fmt(fx, 0)
            << "</text>\n";
        out << "<text x=\"" << left - 6 << "\" y=\"" << py(fy) + 4 << "\" text-anchor=\"end\">" << fmt(fy, 3)
            << "</text>\n";
        out << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << py(fy) << "\" y2=\"" << py(fy)
            << "\" stroke=\"#ddd\"/>\n";
    }
    out << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << escape(x_label)
        << "</text>\n";
    out << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
        << escape(y_label) << "</text>\n";
    for (size_t i = 0; i < series.size(); ++i) {
        const char* color = kPalette[i % std::size(kPalette)];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.2\" points=\"";
        for (auto [x, y] : series[i].points)
            if (std::isfinite(x) && std::isfinite(y)) out << fmt(px(x), 1) << ',' << fmt(py(y), 1) << ' ';
        out << "\"/>\n";
        const double ly = top + 14 + 18 * static_cast<double>(i);
        out << "<line x1=\"" << left + pw + 12 << "\" x2=\"" << left + pw + 32 << "\" y1=\"" << ly << "\" y2=\"" << ly
            << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly + 4 << "\">" << escape(series[i].name) << "</text>\n";
    }
    out << "</svg>\n";
}

void write_summary_csv(const std::vector<SummaryRow>& rows, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "method,seed,n_cases,pancreas_mean,pancreas_std,duct_mean,duct_std,tumor_mean,tumor_std,misses,"
           "n_pathological,sensitivity,specificity\n"
        << std::setprecision(17);
    for (const SummaryRow& r : rows)
        out << r.method << ',' << r.seed << ',' << r.n_cases << ',' << r.pancreas_mean << ',' << r.pancreas_std << ','
            << r.duct_mean << ',' << r.duct_std << ',' << r.tumor_mean << ',' << r.tumor_std << ',' << r.misses << ','
            << r.n_pathological << ',' << r.sensitivity << ',' << r.specificity << '\n';
}

std::vector<SummaryRow> read_summary_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    std::string line;
    std::getline(in, line);
    std::vector<SummaryRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 13) throw DataError(path.string() + ": malformed summary row '" + line + "'");
        SummaryRow r;
        r.method = f[0];
        r.seed = f[1];
        r.n_cases = std::stoi(f[2]);
        r.pancreas_mean = std::stod(f[3]);
        r.pancreas_std = std::stod(f[4]);
        r.duct_mean = std::stod(f[5]);
        r.duct_std = std::stod(f[6]);
        r.tumor_mean = std::stod(f[7]);
        r.tumor_std = std::stod(f[8]);
        r.misses = std::stoi(f[9]);
        r.n_pathological = std::stoi(f[10]);
        r.sensitivity = std::stod(f[11]);
        r.specificity = std::stod(f[12]);
        rows.push_back(r);
    }
    return rows;
}

std::string summary_markdown(const std::vector<SummaryRow>& rows) {
    auto pct = [](double m, double s) { return fmt(100 * m, 2) + " &plusmn; " + fmt(100 * s, 2); };
    auto rate = [](double v) { return v < 0 ? std::string("n/a") : fmt(100 * v, 1); };
    std::ostringstream md;
    md << "| method | seed | cases | pancreas DSC | duct DSC | tumor DSC | misses | sensitivity | specificity |\n"
       << "|---|---|---|---|---|---|---|---|---|\n";
    for (const SummaryRow& r : rows)
        md << "| " << r.method << " | " << r.seed << " | " << r.n_cases << " | " << pct(r.pancreas_mean, r.pancreas_std)
           << " | " << pct(r.duct_mean, r.duct_std) << " | " << pct(r.tumor_mean, r.tumor_std) << " | " << r.misses
           << "/" << r.n_pathological << " | " << rate(r.sensitivity) << " | " << rate(r.specificity) << " |\n";
    return md.str();
}

} // namespace phasealign
