#include "defuse/report.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace defuse {
namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) {
        cells.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') {
        cells.emplace_back();
    }
    return cells;
}

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

}  // namespace

std::optional<std::size_t> CsvTable::column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
        return std::nullopt;
    }
    return static_cast<std::size_t>(it - header.begin());
}

std::optional<double> CsvTable::number(std::size_t row, std::size_t col) const {
    const std::string& s = rows.at(row).at(col);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
        return std::nullopt;
    }
    return v;
}

CsvTable parse_csv(const std::string& text) {
    CsvTable table;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        auto cells = split_line(line);
        if (table.header.empty()) {
            table.header = std::move(cells);
            continue;
        }
        if (cells.size() != table.header.size()) {
            throw ReportError("row " + std::to_string(table.rows.size() + 1) + " has " +
                              std::to_string(cells.size()) + " cells, header has " +
                              std::to_string(table.header.size()));
        }
        table.rows.push_back(std::move(cells));
    }
    if (table.header.empty()) {
        throw ReportError("empty CSV");
    }
    return table;
}

CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ReportError("cannot read " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_csv(buf.str());
}

std::vector<ColumnSummary> summarize(const CsvTable& table) {
    if (table.rows.empty()) {
        throw ReportError("CSV has no data rows");
    }
    std::vector<ColumnSummary> out;
    for (std::size_t c = 0; c < table.header.size(); ++c) {
        ColumnSummary s;
        s.name = table.header[c];
        double sum = 0.0;
        bool numeric = true;
        for (std::size_t r = 0; r < table.rows.size() && numeric; ++r) {
            const auto v = table.number(r, c);
            if (!v) {
                numeric = false;
                break;
            }
            if (s.count == 0) {
                s.max = s.min = *v;
            }
            s.max = std::max(s.max, *v);
            s.min = std::min(s.min, *v);
            sum += *v;
            ++s.count;
        }
        if (!numeric) {
            continue;
        }
        s.mean = sum / static_cast<double>(s.count);
        // Keep mean inside [min, max] despite summation rounding (constant columns give mean == max).
        s.mean = std::clamp(s.mean, s.min, s.max);
        out.push_back(s);
    }
    return out;
}

std::string format_summary(const std::vector<ColumnSummary>& summary) {
    std::string out = "column,mean,max,min,count\n";
    for (const auto& s : summary) {
        out += s.name + ',' + num(s.mean) + ',' + num(s.max) + ',' + num(s.min) + ',' + std::to_string(s.count) + '\n';
    }
    return out;
}

std::vector<DifferencePoint> difference_series(const CsvTable& a, const CsvTable& b, const std::string& column) {
    if (a.rows.empty() || b.rows.empty()) {
        throw ReportError("CSV has no data rows");
    }
    auto index = [&](const CsvTable& t) {
        const auto frame_col = t.column("frame");
        const auto value_col = t.column(column);
        if (!frame_col || !value_col) {
            throw ReportError("missing column 'frame' or '" + column + "'");
        }
        std::map<int, double> values;
        for (std::size_t r = 0; r < t.rows.size(); ++r) {
            const auto f = t.number(r, *frame_col);
            const auto v = t.number(r, *value_col);
            if (!f || !v) {
                throw ReportError("non-numeric cell in row " + std::to_string(r + 1));
            }
            values[static_cast<int>(*f)] = *v;
        }
        return values;
    };
    const auto va = index(a);
    const auto vb = index(b);
    std::vector<DifferencePoint> out;
    for (const auto& [frame, x] : va) {
        if (const auto it = vb.find(frame); it != vb.end()) {
            out.push_back({frame, x, it->second, x - it->second});
        }
    }
    return out;
}

std::string format_difference_csv(const std::vector<DifferencePoint>& series, const std::string& column) {
    std::string out = "frame," + column + "_a," + column + "_b,diff\n";
    for (const auto& p : series) {
        out += std::to_string(p.frame) + ',' + num(p.a) + ',' + num(p.b) + ',' + num(p.diff) + '\n';
    }
    return out;
}

}  // namespace defuse
