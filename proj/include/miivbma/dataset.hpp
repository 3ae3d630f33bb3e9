#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace miivbma {

/// Named numeric columns, one row per observation.
struct DataSet {
    std::vector<std::string> columns;
    Eigen::MatrixXd values;
    std::size_t dropped_rows = 0;  ///< rows removed by listwise deletion

    Eigen::Index rows() const { return values.rows(); }
    bool has(std::string_view name) const;
    Eigen::VectorXd column(std::string_view name) const;
    Eigen::MatrixXd select(const std::vector<std::string>& names) const;
};

/// Parses CSV text with a header row. Only `required` columns are kept (all
/// columns when empty); rows with a missing or non-numeric value among them
/// are dropped. Empty cells, "NA" and "NaN" count as missing.
DataSet parse_csv(std::string_view text, const std::vector<std::string>& required = {});

DataSet read_csv(const std::filesystem::path& path, const std::vector<std::string>& required = {});

}  // namespace miivbma
