#pragma once

// Latent-to-observed transformation and model-implied instrument search.
//
// Every latent is replaced by its scaling indicator minus that indicator's
// error, which turns each non-scaling indicator and each structural equation
// into a regression among observed variables with a composite disturbance.
// An observed variable is a model-implied instrument for an equation when
// its implied covariance with that disturbance vanishes identically.

#include "miivbma/model_spec.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace miivbma {

/// One residual contributing to a composite disturbance: sign * prod(factors) * e_variable,
/// where e_variable is the measurement error (observed) or disturbance (latent) of `variable`.
struct DisturbanceTerm {
    std::string variable;
    int sign = 1;
    std::vector<ParamRef> factors;

    double weight(const ParamAssignment& params) const;
    std::string to_string() const;
};

struct EstimationEquation {
    int id = 0;
    std::string outcome;
    std::vector<std::string> regressors;
    std::vector<ParamRef> coefficients;    ///< parameter estimated by each regressor
    std::vector<DisturbanceTerm> disturbance;
    std::vector<std::string> miivs;        ///< filled by derive_miivs; sorted by name
    /// Regressors uncorrelated with the disturbance; they instrument themselves.
    std::vector<std::string> exogenous_regressors;

    /// Regressors that need instruments.
    std::vector<std::string> endogenous_regressors() const;
    std::size_t overidentification() const;
    std::string to_string() const;
};

struct MiivOptions {
    int draws = 20;
    double tolerance = 1e-10;
    std::uint64_t seed = 0x5eed5eedULL;
};

/// One equation per non-scaling indicator and per endogenous variable, in
/// model order. MIIV sets are left empty.
std::vector<EstimationEquation> transform_to_observed(const ModelIR& model);

/// Observed variables (outside the equation) whose implied covariance with
/// the composite disturbance is zero at every generic parameter draw and that
/// are generically related to at least one regressor. Also fills
/// `equation.exogenous_regressors`. Throws IdentificationError when the
/// instruments cannot identify the equation.
std::vector<std::string> derive_miivs(const ModelIR& model, EstimationEquation& equation,
                                      const MiivOptions& options = {});

/// transform_to_observed followed by derive_miivs on every equation.
std::vector<EstimationEquation> build_equations(const ModelIR& model, const MiivOptions& options = {});

/// A generic random parameter assignment: free coefficients in [0.2, 0.9],
/// free variances in [0.5, 1.5], free covariances in [0.2, 0.9].
ParamAssignment generic_parameters(const ModelIR& model, std::uint64_t seed);

/// Implied Cov(v, u) of each observed variable with the equation disturbance.
std::vector<double> disturbance_covariances(const ModelIR& model, const EstimationEquation& equation,
                                            const ParamAssignment& params);

nlohmann::json to_json(const EstimationEquation& equation);

}  // namespace miivbma
