#include "miivbma/estimator.hpp"

#include "miivbma/errors.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <cmath>

namespace miivbma {

namespace {

constexpr double kRankTolerance = 1e-10;

Eigen::ColPivHouseholderQR<Eigen::MatrixXd> checked_qr(const Eigen::MatrixXd& X,
                                                       std::span<const std::string> names,
                                                       const char* what) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    qr.setThreshold(kRankTolerance);
    if (qr.rank() < X.cols()) {
        std::string cols;
        const auto& perm = qr.colsPermutation().indices();
        for (Eigen::Index i = qr.rank(); i < X.cols(); ++i) {
            const auto c = perm(i);
            if (!cols.empty()) cols += ", ";
            cols += (static_cast<std::size_t>(c) < names.size()) ? names[static_cast<std::size_t>(c)]
                                                                  : "column " + std::to_string(c);
        }
        throw NumericalError(std::string(what) + " is rank deficient; collinear: " + cols);
    }
    return qr;
}

double centered_r_squared(const Eigen::VectorXd& y, const Eigen::VectorXd& residuals) {
    const double tss = (y.array() - y.mean()).square().sum();
    if (tss <= 0.0) return 0.0;
    return 1.0 - residuals.squaredNorm() / tss;
}

bool same_column(const Eigen::MatrixXd& a, Eigen::Index i, const Eigen::MatrixXd& b, Eigen::Index j) {
    return (a.col(i).array() == b.col(j).array()).all();
}

}  // namespace

Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& X) {
    Eigen::MatrixXd out(X.rows(), X.cols() + 1);
    out.col(0).setOnes();
    out.rightCols(X.cols()) = X;
    return out;
}

OlsResult ols(const Eigen::VectorXd& y, const Eigen::MatrixXd& X, std::span<const std::string> column_names) {
    if (X.rows() != y.size()) throw Error(ErrorCode::Config, "ols: X and y have different row counts");
    if (X.rows() <= X.cols()) throw Error(ErrorCode::Config, "ols: need more observations than columns");
    const auto qr = checked_qr(X, column_names, "design matrix");
    OlsResult out;
    out.coefficients = qr.solve(y);
    out.residuals = y - X * out.coefficients;
    out.r_squared = centered_r_squared(y, out.residuals);
    return out;
}

EquationEstimate two_sls(const Eigen::VectorXd& y, const Eigen::MatrixXd& Z, const Eigen::MatrixXd& V,
                         const TwoSlsOptions& options) {
    const auto n = y.size();
    const auto r = Z.cols();
    const auto v = V.cols();
    if (Z.rows() != n || V.rows() != n) throw Error(ErrorCode::Config, "two_sls: row counts differ");
    if (v < r)
        throw Error(ErrorCode::Identification, "two_sls: under-identified (" + std::to_string(v) +
                                                   " instruments for " + std::to_string(r) + " regressors)");
    if (n <= v + 1) throw Error(ErrorCode::Config, "two_sls: need more observations than instruments + 1");

    const Eigen::MatrixXd Vc = with_intercept(V);
    const Eigen::MatrixXd Zc = with_intercept(Z);

    std::vector<std::string> vnames{"(intercept)"};
    vnames.insert(vnames.end(), options.instrument_names.begin(), options.instrument_names.end());
    std::vector<std::string> znames{"(intercept)"};
    znames.insert(znames.end(), options.regressor_names.begin(), options.regressor_names.end());

    const auto first = checked_qr(Vc, vnames, "first-stage instrument matrix");

    EquationEstimate est;
    est.n = n;
    est.r2_first_stage.assign(static_cast<std::size_t>(r), 1.0);
    Eigen::MatrixXd Zhat(n, r + 1);
    Zhat.col(0) = Zc.col(0);
    for (Eigen::Index j = 0; j < r; ++j) {
        bool exogenous = false;
        for (Eigen::Index k = 0; k < v && !exogenous; ++k) exogenous = same_column(Z, j, V, k);
        if (exogenous) {
            Zhat.col(j + 1) = Z.col(j);
            continue;
        }
        const Eigen::VectorXd coef = first.solve(Z.col(j));
        Zhat.col(j + 1) = Vc * coef;
        est.r2_first_stage[static_cast<std::size_t>(j)] =
            centered_r_squared(Z.col(j), Z.col(j) - Zhat.col(j + 1));
    }

    const auto second = checked_qr(Zhat, znames, "second-stage design");
    est.theta = second.solve(y);
    est.residuals = y - Zc * est.theta;

    const double k = static_cast<double>(r + 1);
    const double denom = options.denominator == VcovDenominator::N ? static_cast<double>(n)
                                                                   : static_cast<double>(n) - k;
    const double sigma2 = est.residuals.squaredNorm() / denom;

    // (Zhat'Zhat)^-1 = P R^-1 R^-T P'
    const auto p = r + 1;
    const Eigen::MatrixXd R = second.matrixR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
    const Eigen::MatrixXd Rinv =
        R.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
    const Eigen::MatrixXd inner = Rinv * Rinv.transpose();
    const auto& perm = second.colsPermutation();
    const Eigen::MatrixXd xtx_inv = perm * inner * perm.transpose();
    est.se = (sigma2 * xtx_inv.diagonal()).cwiseSqrt();

    if (v > r) est.sargan = sargan_test(est.residuals, V, static_cast<int>(r));
    return est;
}

SarganResult sargan_test(const Eigen::VectorXd& residuals, const Eigen::MatrixXd& V, int regressor_count) {
    const auto v = static_cast<int>(V.cols());
    if (v <= regressor_count)
        throw Error(ErrorCode::Config, "Sargan test undefined: equation is not overidentified (" +
                                           std::to_string(v) + " instruments, " +
                                           std::to_string(regressor_count) + " regressors)");
    const auto aux = ols(residuals, with_intercept(V));
    SarganResult s;
    s.statistic = static_cast<double>(residuals.size()) * std::max(aux.r_squared, 0.0);
    s.df = v - regressor_count;
    s.p_value = chi_square_upper_tail(s.statistic, s.df);
    return s;
}

double chi_square_upper_tail(double x, int df) {
    if (df < 1) throw Error(ErrorCode::Config, "chi-square degrees of freedom must be positive");
    if (!(x >= 0.0)) throw Error(ErrorCode::Config, "chi-square statistic must be non-negative");
    if (x == 0.0) return 1.0;
    if (std::isinf(x)) return 0.0;
    return boost::math::gamma_q(0.5 * df, 0.5 * x);
}

}  // namespace miivbma
