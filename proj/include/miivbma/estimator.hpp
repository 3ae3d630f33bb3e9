#pragma once

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace miivbma {

/// Denominator of the residual variance in coefficient standard errors.
enum class VcovDenominator {
    N,        ///< u'u / n
    NMinusK,  ///< u'u / (n - r - 1)
};

struct OlsResult {
    Eigen::VectorXd coefficients;
    Eigen::VectorXd residuals;
    double r_squared = 0.0;  ///< 1 - RSS/TSS, TSS about the mean
};

/// Least squares of y on X (X carries its own intercept column) through a
/// column-pivoted QR. Throws NumericalError naming collinear columns when X is
/// rank deficient at relative tolerance 1e-10.
OlsResult ols(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
              std::span<const std::string> column_names = {});

struct SarganResult {
    double statistic = 0.0;
    int df = 0;
    double p_value = 1.0;
};

struct EquationEstimate {
    Eigen::VectorXd theta;      ///< intercept, then one entry per regressor
    Eigen::VectorXd se;
    Eigen::VectorXd residuals;  ///< y - Z theta with the original regressors
    std::vector<double> r2_first_stage;  ///< per regressor
    std::optional<SarganResult> sargan;  ///< empty when just-identified
    Eigen::Index n = 0;
};

struct TwoSlsOptions {
    VcovDenominator denominator = VcovDenominator::NMinusK;
    std::vector<std::string> regressor_names;
    std::vector<std::string> instrument_names;
};

/// Two-stage least squares of y on Z instrumented by V. Intercepts are added
/// to both Z and V. Regressors that are also instrument columns are carried
/// through the first stage unchanged.
EquationEstimate two_sls(const Eigen::VectorXd& y, const Eigen::MatrixXd& Z, const Eigen::MatrixXd& V,
                         const TwoSlsOptions& options = {});

/// n R^2 from regressing the residuals on V (plus intercept), df = v - r.
/// Throws Error(Config) unless v > r.
SarganResult sargan_test(const Eigen::VectorXd& residuals, const Eigen::MatrixXd& V, int regressor_count);

/// Upper tail of the chi-square distribution, Q(df/2, x/2).
double chi_square_upper_tail(double x, int df);

/// Prepends a column of ones.
Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& X);

}  // namespace miivbma
