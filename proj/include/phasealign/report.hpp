#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace phasealign {

struct Series {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

/// Static SVG line plot, one polyline per series with a legend.
void write_line_plot_svg(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                         const std::string& y_label, const std::filesystem::path& path);

/// One row of an experiment summary (DSC values in [0, 1]).
struct SummaryRow {
    std::string method;
    std::string seed; // "mean" for the seed average
    int n_cases = 0;
    double pancreas_mean = 0, pancreas_std = 0;
    double duct_mean = 0, duct_std = 0;
    double tumor_mean = 0, tumor_std = 0;
    int misses = 0;
    int n_pathological = 0;
    double sensitivity = -1; // < 0: undefined
    double specificity = -1;
};

void write_summary_csv(const std::vector<SummaryRow>& rows, const std::filesystem::path& path);
std::vector<SummaryRow> read_summary_csv(const std::filesystem::path& path);

/// Markdown table of DSC (in percent, mean +- std), misses and
/// sensitivity/specificity.
std::string summary_markdown(const std::vector<SummaryRow>& rows);

} // namespace phasealign
