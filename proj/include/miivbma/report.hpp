#pragma once

// Whole-model fitting and report rendering shared by the CLI and the tests.

#include "miivbma/bma.hpp"
#include "miivbma/dataset.hpp"
#include "miivbma/estimator.hpp"
#include "miivbma/miiv_search.hpp"
#include "miivbma/model_spec.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace miivbma {

enum class EstimatorKind { TwoSls, TwoSbma };

std::string to_string(EstimatorKind kind);
EstimatorKind estimator_from_string(const std::string& s);
std::string to_string(VcovDenominator d);
VcovDenominator denominator_from_string(const std::string& s);

std::string_view library_version();

/// 64-bit FNV-1a, rendered as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);

struct FitOptions {
    EstimatorKind estimator = EstimatorKind::TwoSls;
    double alpha = 0.05;
    VcovDenominator denominator = VcovDenominator::NMinusK;
    std::size_t subset_cap = 100000;
    std::optional<std::size_t> subset_sample;
    std::uint64_t seed = 0;
    bool audit_subsets = false;
};

struct EquationReport {
    EstimationEquation equation;
    EstimatorKind estimator = EstimatorKind::TwoSls;  ///< what actually ran
    std::optional<EquationEstimate> tsls;
    std::optional<BmaEquationResult> bma;
    std::vector<std::string> notes;
};

struct FitReport {
    std::vector<EquationReport> equations;
    Eigen::Index n = 0;
    std::size_t dropped_rows = 0;
    std::vector<std::string> warnings;
    nlohmann::json provenance;
};

/// Parses, transforms, derives instruments and estimates every equation.
/// Just-identified equations fall back to 2SLS under the 2SBMA estimator.
FitReport fit_model(std::string_view model_text, std::string_view csv_text, const FitOptions& options,
                    const std::string& model_source = "", const std::string& data_source = "");

/// Full-precision report. Every number shown by render_fit_report comes from here.
nlohmann::json to_json(const FitReport& report, const FitOptions& options);

/// Fixed-width tables with 3-decimal numbers, rendered from the JSON form.
std::string render_fit_report(const nlohmann::json& report);

/// One block per equation: transformed equation, disturbance terms and MIIVs.
nlohmann::json explain_miivs(const ModelIR& model);
std::string render_explanation(const nlohmann::json& explanation);

/// "%.3f" with negative zero printed as 0.000.
std::string fixed3(double v);

}  // namespace miivbma
