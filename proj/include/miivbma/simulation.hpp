#pragma once

// Monte Carlo harness for the two-factor designs.
//
// Both designs have two correlated factors with four unit-loading indicators
// each (y1..y4 on the first, y5..y8 on the second) and one omitted error
// covariance: y2~~y3 in design 1, y2~~y5 in design 2. The target is the
// loading of y2, estimated from the transformed equation y2 = lambda2 y1 + u.

#include "miivbma/bma.hpp"
#include "miivbma/model_spec.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace miivbma {

enum class Design { Sim1, Sim2 };

std::string to_string(Design d);
Design design_from_string(const std::string& s);

struct SimulationConfig {
    Design design = Design::Sim1;
    double ec = 0.1;   ///< omitted error covariance
    double fc = 0.1;   ///< factor correlation
    int n = 100;
    int reps = 500;
    std::uint64_t seed = 20190101;
    double factor_variance = 0.36;
    double error_variance = 0.64;
    double alpha = 0.05;
    unsigned threads = 0;  ///< 0: hardware concurrency

    /// Throws Error(Config) for out-of-range values.
    void validate() const;
    /// Stable identifier of the (design, ec, fc, n) cell; keys the RNG substreams.
    std::uint64_t condition_id() const;
    std::string name() const;
};

/// Model syntax for the data-generating ("true") and analysis ("misspecified") models.
std::string true_model_syntax(Design d);
std::string misspecified_model_syntax(Design d);

/// Parameter values of the true model under `config`.
ParamAssignment population_parameters(const SimulationConfig& config);

struct Population {
    std::vector<std::string> names;  ///< y1..y8
    Eigen::MatrixXd sigma;
    double true_lambda2 = 1.0;
};

/// Throws Error(Config) for an invalid config and NumericalError naming the
/// smallest eigenvalue when the implied covariance is not positive definite.
Population build_population(const SimulationConfig& config);

/// Seed of replication `rep` within condition `condition_id`.
std::uint64_t replication_seed(std::uint64_t seed, std::uint64_t condition_id, std::uint64_t rep);

/// n rows drawn i.i.d. from N(0, sigma) through its Cholesky factor.
Eigen::MatrixXd sample_mvn(const Eigen::MatrixXd& sigma, Eigen::Index n, std::uint64_t seed);

struct ReplicationRecord {
    int rep = 0;
    bool failed = false;
    std::string error;
    double invalid_estimate = 0.0, invalid_se = 0.0, invalid_sargan_p = 1.0;
    double correct_estimate = 0.0, correct_se = 0.0, correct_sargan_p = 1.0;
    double bma_estimate = 0.0, bma_se = 0.0, bma_sargan_p = 1.0;
    std::vector<double> is_sargan_p;     ///< per instrument, ConditionSummary::instruments order
    std::vector<double> inclusion_prob;  ///< same order
    std::string min_p_instrument;
};

struct EstimatorSummary {
    double median_bias = 0.0;
    double mean_abs_bias = 0.0;
    double sargan_power = 0.0;
    double mean_se = 0.0;
};

struct InstrumentSummary {
    std::string name;
    double is_sargan_power = 0.0;
    double specificity = 0.0;
    double mean_inclusion_prob = 0.0;
};

struct ConditionSummary {
    SimulationConfig config;
    std::vector<std::string> invalid_miivs;
    std::vector<std::string> correct_miivs;
    EstimatorSummary invalid;
    EstimatorSummary correct;
    EstimatorSummary bma;
    std::vector<InstrumentSummary> instruments;
    int completed = 0;
    int failures = 0;
    std::vector<ReplicationRecord> replications;

    const InstrumentSummary& instrument(const std::string& name) const;
};

/// Runs every replication of one condition. Replications run concurrently
/// and are aggregated in replication order. Throws NumericalError when more
/// than 1% of replications fail.
ConditionSummary run_condition(const SimulationConfig& config);

nlohmann::json to_json(const SimulationConfig& config);
nlohmann::json to_json(const ConditionSummary& summary);
/// Per-replication rows with a header line.
std::string replications_csv(const ConditionSummary& summary);

/// Grid file: {"designs": [...], "ec": [...], "fc": [...], "n": [...], "reps", "seed", ...}.
std::vector<SimulationConfig> expand_grid(const nlohmann::json& grid);

}  // namespace miivbma
