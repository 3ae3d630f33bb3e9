#pragma once

// Two-stage Bayesian model averaging over model-implied instrument subsets.
//
// Every subset of an equation's instruments with at least z+1 members (z the
// number of endogenous regressors) defines a first-stage model. Each is scored
// by the Bayes factor against the intercept-only model under a g-prior with
// the local empirical-Bayes choice g = max(F - 1, 0); posterior model
// probabilities follow from equal prior model weights. Second-stage estimates
// for a subset are its 2SLS estimates, and the averaged estimate, variance
// and Sargan p-values are probability-weighted over subsets.

#include "miivbma/dataset.hpp"
#include "miivbma/estimator.hpp"
#include "miivbma/miiv_search.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace miivbma {

using Subset = std::vector<std::string>;

/// Upper bound applied to every log Bayes factor.
inline constexpr double kLogBayesFactorCap = 700.0;

struct SubsetFit {
    Subset subset;
    std::vector<double> r2;  ///< first-stage R^2, one per endogenous regressor
    std::vector<double> g;   ///< empirical-Bayes g, one per endogenous regressor
    double log_bf = 0.0;     ///< log BF against the null model (summed over endogenous regressors)
    double pi = 0.0;
    Eigen::VectorXd theta;
    Eigen::VectorXd var_theta;
    double sargan_p = 1.0;

    bool contains(const std::string& instrument) const;
};

struct InstrumentDiagnostic {
    std::string name;
    double inclusion_prob = 0.0;
    double is_sargan_p = 1.0;
    bool weak = false;  ///< inclusion probability below the weak threshold
};

struct SuspectRanking {
    std::vector<std::string> order;  ///< ascending instrument-specific p
    bool tied = false;               ///< some p-values were equal; ties broken by name
};

struct BmaEquationResult {
    std::vector<std::string> coefficient_names;  ///< "(intercept)", then regressors
    Eigen::VectorXd theta;
    Eigen::VectorXd var;
    double bma_sargan_p = 1.0;
    std::vector<InstrumentDiagnostic> instruments;  ///< sorted by name
    std::vector<SubsetFit> subset_fits;
    SuspectRanking suspects;
    std::size_t dropped_subsets = 0;
    std::vector<std::string> warnings;
    Eigen::Index n = 0;

    const InstrumentDiagnostic& instrument(const std::string& name) const;
};

struct BmaOptions {
    std::size_t subset_cap = 100000;
    /// When set and the subset count exceeds the cap, evaluate this many
    /// distinct subsets drawn uniformly at random instead of failing.
    std::optional<std::size_t> subset_sample;
    std::uint64_t seed = 0;
    VcovDenominator denominator = VcovDenominator::NMinusK;
    double weak_threshold = 0.5;
};

/// sum_{l=z+1}^{v} C(v, l), saturating at UINT64_MAX.
std::uint64_t subset_count(std::size_t v, std::size_t z);

/// All subsets of size z+1..v, ordered by size and then lexicographically by
/// name. Throws Error(Config) when there are more than `cap`.
std::vector<Subset> enumerate_subsets(const std::vector<std::string>& miivs, std::size_t z, std::size_t cap);

/// `count` distinct subsets of size z+1..v drawn uniformly, in enumeration order.
std::vector<Subset> sample_subsets(const std::vector<std::string>& miivs, std::size_t z, std::size_t count,
                                   std::uint64_t seed);

/// max(F - 1, 0) with F = (r2/p) / ((1 - r2)/(n - 1 - p)); +inf when r2 == 1.
double empirical_bayes_g(double r2, int p, Eigen::Index n);

/// ((n-p-1)/2) ln(1+g) - ((n-1)/2) ln(1 + g(1-r2)), capped at kLogBayesFactorCap.
double log_bayes_factor(double g, double r2, int p, Eigen::Index n);

/// Normalized exp(log_bfs) with max subtraction. Entries may be -inf, but not all.
std::vector<double> model_probabilities(std::span<const double> log_bfs);

double bma_sargan(std::span<const double> pis, std::span<const double> sargan_ps);

/// Average of Sargan p-values over subsets containing q, weighted by model
/// probabilities renormalized within those subsets.
double instrument_specific_sargan(const std::vector<SubsetFit>& fits, const std::string& q);

/// Total probability of the subsets containing q.
double inclusion_probability(const std::vector<SubsetFit>& fits, const std::string& q);

SuspectRanking rank_suspects(const std::map<std::string, double>& is_sargan_ps);

/// Matrix-level entry point. `exogenous` names regressors that instrument
/// themselves; they join every first-stage model.
BmaEquationResult fit_2sbma(const Eigen::VectorXd& y, const Eigen::MatrixXd& Z,
                            const std::vector<std::string>& regressor_names,
                            const std::vector<std::string>& exogenous, const Eigen::MatrixXd& V,
                            const std::vector<std::string>& instrument_names, const BmaOptions& options = {});

BmaEquationResult fit_equation_2sbma(const EstimationEquation& equation, const DataSet& data,
                                     const BmaOptions& options = {});

/// Summary JSON; the per-subset audit trail is included only when requested.
nlohmann::json to_json(const BmaEquationResult& result, bool include_subsets);

}  // namespace miivbma
