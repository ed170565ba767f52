#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace defuse {

class ReportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Comma-separated table with a header row. Cells are kept as text.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::optional<std::size_t> column(const std::string& name) const;
    /// Numeric value of a cell; nullopt when the cell is not a number.
    std::optional<double> number(std::size_t row, std::size_t col) const;
};

/// Throws ReportError on ragged rows or a missing header.
CsvTable parse_csv(const std::string& text);
CsvTable read_csv(const std::filesystem::path& path);

struct ColumnSummary {
    std::string name;
    double mean = 0.0;
    double max = 0.0;
    double min = 0.0;
    std::size_t count = 0;
};

/// Mean/max/min of every fully numeric column. Throws ReportError when there are no rows.
std::vector<ColumnSummary> summarize(const CsvTable& table);
std::string format_summary(const std::vector<ColumnSummary>& summary);

struct DifferencePoint {
    int frame = 0;
    double a = 0.0;
    double b = 0.0;
    double diff = 0.0;  // a - b
};

/// Per-frame difference of `column` between two runs, joined on the frame column. Frames
/// present in only one run are dropped. Throws ReportError on an empty table or missing column.
std::vector<DifferencePoint> difference_series(const CsvTable& a, const CsvTable& b, const std::string& column);
std::string format_difference_csv(const std::vector<DifferencePoint>& series, const std::string& column);

}  // namespace defuse
