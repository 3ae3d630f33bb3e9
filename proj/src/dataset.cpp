#include "miivbma/dataset.hpp"

#include "miivbma/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>

namespace miivbma {

namespace {

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\"");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\"");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_row(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto comma = line.find(',', start);
        out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                               : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

std::optional<double> parse_cell(const std::string& cell) {
    if (cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan") return std::nullopt;
    const char* first = cell.data();
    if (*first == '+') ++first;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(first, cell.data() + cell.size(), v);
    if (ec != std::errc{} || ptr != cell.data() + cell.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

}  // namespace

bool DataSet::has(std::string_view name) const {
    return std::find(columns.begin(), columns.end(), name) != columns.end();
}

Eigen::VectorXd DataSet::column(std::string_view name) const {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw Error(ErrorCode::Io, "data has no column '" + std::string(name) + "'");
    return values.col(it - columns.begin());
}

Eigen::MatrixXd DataSet::select(const std::vector<std::string>& names) const {
    Eigen::MatrixXd out(values.rows(), static_cast<Eigen::Index>(names.size()));
    for (std::size_t j = 0; j < names.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = column(names[j]);
    return out;
}

DataSet parse_csv(std::string_view text, const std::vector<std::string>& required) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        auto line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (!line.empty()) lines.push_back(line);
        start = end + 1;
    }
    if (lines.empty()) throw Error(ErrorCode::Io, "CSV has no header row");

    const auto header = split_row(lines.front());
    std::vector<std::string> keep = required.empty() ? header : required;
    std::vector<std::size_t> index;
    for (const auto& name : keep) {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw Error(ErrorCode::Io, "CSV is missing column '" + name + "'");
        index.push_back(static_cast<std::size_t>(it - header.begin()));
    }

    std::vector<std::vector<double>> rows;
    std::size_t dropped = 0;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto cells = split_row(lines[i]);
        if (cells.size() != header.size())
            throw Error(ErrorCode::Io, "CSV row " + std::to_string(i + 1) + " has " +
                                           std::to_string(cells.size()) + " fields, header has " +
                                           std::to_string(header.size()));
        std::vector<double> row;
        bool complete = true;
        for (auto idx : index) {
            auto v = parse_cell(cells[idx]);
            if (!v) {
                complete = false;
                break;
            }
            row.push_back(*v);
        }
        if (complete)
            rows.push_back(std::move(row));
        else
            ++dropped;
    }

    DataSet ds;
    ds.columns = keep;
    ds.dropped_rows = dropped;
    ds.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < keep.size(); ++j)
            ds.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    return ds;
}

DataSet read_csv(const std::filesystem::path& path, const std::vector<std::string>& required) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_csv(ss.str(), required);
}

}  // namespace miivbma
