#include "miivbma/miiv_search.hpp"

#include "miivbma/errors.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace miivbma {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

bool contains(const std::vector<std::string>& v, const std::string& name) {
    return std::find(v.begin(), v.end(), name) != v.end();
}

struct Builder {
    const ModelIR& model;

    const std::string& scaling_of(const std::string& latent) const { return model.scaling.at(latent); }

    bool is_scaling_indicator(const std::string& name) const {
        return std::any_of(model.scaling.begin(), model.scaling.end(),
                           [&](const auto& kv) { return kv.second == name; });
    }

    // Adds `coef * predictor` to the equation, substituting a latent predictor
    // by its scaling indicator and subtracting that indicator's error.
    void add_predictor(EstimationEquation& eq, const std::string& predictor, const ParamRef& coef) const {
        if (coef.fixed) {
            if (*coef.fixed == 0.0) return;
            throw Error(ErrorCode::Model, "fixed non-zero coefficient '" + coef.label +
                                              "' is not supported by equation-level estimation");
        }
        if (model.is_latent(predictor)) {
            eq.regressors.push_back(scaling_of(predictor));
            eq.disturbance.push_back({scaling_of(predictor), -1, {coef}});
        } else {
            eq.regressors.push_back(predictor);
        }
        eq.coefficients.push_back(coef);
    }
};

}  // namespace

double DisturbanceTerm::weight(const ParamAssignment& params) const {
    double w = sign;
    for (const auto& f : factors) w *= params.value_of(f);
    return w;
}

std::string DisturbanceTerm::to_string() const {
    std::ostringstream os;
    os << (sign < 0 ? "- " : "+ ");
    for (const auto& f : factors) {
        if (f.fixed)
            os << *f.fixed << '*';
        else
            os << '[' << f.label << "]*";
    }
    os << "e(" << variable << ')';
    return os.str();
}

std::vector<std::string> EstimationEquation::endogenous_regressors() const {
    std::vector<std::string> out;
    for (const auto& r : regressors)
        if (!contains(exogenous_regressors, r)) out.push_back(r);
    return out;
}

std::size_t EstimationEquation::overidentification() const {
    const auto needed = endogenous_regressors().size();
    return miivs.size() > needed ? miivs.size() - needed : 0;
}

std::string EstimationEquation::to_string() const {
    std::ostringstream os;
    os << outcome << " =";
    for (std::size_t i = 0; i < regressors.size(); ++i)
        os << (i ? " + " : " ") << '[' << coefficients[i].label << "]*" << regressors[i];
    os << (regressors.empty() ? " u" : " + u") << ";  u =";
    for (const auto& t : disturbance) os << ' ' << t.to_string();
    return os.str();
}

std::vector<EstimationEquation> transform_to_observed(const ModelIR& model) {
    Builder b{model};
    for (const auto& [latent, ind] : model.scaling) {
        for (const auto& l : model.loadings)
            if (l.indicator == ind && l.latent != latent && !(l.param.fixed && *l.param.fixed == 0.0))
                throw Error(ErrorCode::Model, "scaling indicator '" + ind + "' of '" + latent +
                                                  "' also loads on '" + l.latent + "'");
        for (const auto& r : model.regressions)
            if (r.outcome == ind)
                throw Error(ErrorCode::Model, "scaling indicator '" + ind + "' cannot be a regression outcome");
    }

    std::vector<EstimationEquation> out;
    int next_id = 1;

    // Structural equations for endogenous latents.
    for (const auto& latent : model.latents) {
        if (model.is_exogenous(latent)) continue;
        EstimationEquation eq;
        eq.outcome = b.scaling_of(latent);
        eq.disturbance.push_back({eq.outcome, 1, {}});
        eq.disturbance.push_back({latent, 1, {}});
        for (const auto& r : model.regressions)
            if (r.outcome == latent) b.add_predictor(eq, r.predictor, r.param);
        if (eq.regressors.empty()) continue;
        eq.id = next_id++;
        out.push_back(std::move(eq));
    }

    // Measurement equations and observed-variable regressions.
    for (const auto& var : model.observed) {
        if (b.is_scaling_indicator(var)) continue;
        EstimationEquation eq;
        eq.outcome = var;
        eq.disturbance.push_back({var, 1, {}});
        for (const auto& l : model.loadings)
            if (l.indicator == var) b.add_predictor(eq, l.latent, l.param);
        for (const auto& r : model.regressions)
            if (r.outcome == var) b.add_predictor(eq, r.predictor, r.param);
        if (eq.regressors.empty()) continue;
        eq.id = next_id++;
        out.push_back(std::move(eq));
    }
    return out;
}

ParamAssignment generic_parameters(const ModelIR& model, std::uint64_t seed) {
    std::mt19937_64 rng(splitmix64(seed));
    std::uniform_real_distribution<double> coef(0.2, 0.9);
    std::uniform_real_distribution<double> variance(0.5, 1.5);
    const auto variances = model.variance_parameters();
    ParamAssignment p;
    for (const auto& label : model.free_parameters())
        p.set(label, contains(variances, label) ? variance(rng) : coef(rng));
    return p;
}

std::vector<double> disturbance_covariances(const ModelIR& model, const EstimationEquation& equation,
                                            const ParamAssignment& params) {
    const auto rf = reduced_form(model, params);
    const Eigen::MatrixXd cross = rf.variable_residual_cov();
    std::vector<double> out;
    out.reserve(model.observed.size());
    for (const auto& v : model.observed) {
        const auto row = rf.index_of(v);
        double c = 0.0;
        for (const auto& t : equation.disturbance) c += t.weight(params) * cross(row, rf.index_of(t.variable));
        out.push_back(c);
    }
    return out;
}

std::vector<std::string> derive_miivs(const ModelIR& model, EstimationEquation& equation,
                                      const MiivOptions& options) {
    if (options.draws < 1) throw Error(ErrorCode::Config, "MIIV search needs at least one parameter draw");

    const auto& observed = model.observed;
    const auto nobs = observed.size();
    std::vector<bool> orthogonal(nobs, true);
    std::vector<bool> relevant(nobs, false);
    std::vector<Eigen::MatrixXd> covs;

    const auto obs_index = [&](const std::string& name) {
        return static_cast<Eigen::Index>(std::find(observed.begin(), observed.end(), name) - observed.begin());
    };

    for (int d = 0; d < options.draws; ++d) {
        const auto params = generic_parameters(model, options.seed + static_cast<std::uint64_t>(d));
        const auto cu = disturbance_covariances(model, equation, params);
        for (std::size_t i = 0; i < nobs; ++i)
            if (std::abs(cu[i]) >= options.tolerance) orthogonal[i] = false;
        covs.push_back(implied_covariance(model, params).sigma);
    }

    equation.exogenous_regressors.clear();
    for (const auto& r : equation.regressors)
        if (orthogonal[static_cast<std::size_t>(obs_index(r))]) equation.exogenous_regressors.push_back(r);
    const auto endogenous = equation.endogenous_regressors();

    for (std::size_t i = 0; i < nobs; ++i) {
        if (endogenous.empty()) {
            relevant[i] = true;
            continue;
        }
        for (const auto& sigma : covs)
            for (const auto& z : endogenous)
                if (std::abs(sigma(static_cast<Eigen::Index>(i), obs_index(z))) >= options.tolerance)
                    relevant[i] = true;
    }

    std::vector<std::string> miivs;
    for (std::size_t i = 0; i < nobs; ++i) {
        const auto& v = observed[i];
        if (v == equation.outcome || contains(equation.regressors, v)) continue;
        if (orthogonal[i] && relevant[i]) miivs.push_back(v);
    }
    std::sort(miivs.begin(), miivs.end());

    const std::string where = "equation " + std::to_string(equation.id) + " (" + equation.outcome + ")";
    if (miivs.size() < endogenous.size())
        throw IdentificationError(equation.outcome, where + " is underidentified: " +
                                                        std::to_string(miivs.size()) + " instrument(s) for " +
                                                        std::to_string(endogenous.size()) + " endogenous regressor(s)");

    if (!endogenous.empty()) {
        // Rank of Cov(V, Z) and nonsingularity of Cov(V) at the first generic draw.
        const auto& sigma = covs.front();
        std::vector<std::string> instruments = miivs;
        instruments.insert(instruments.end(), equation.exogenous_regressors.begin(),
                           equation.exogenous_regressors.end());
        Eigen::MatrixXd vz(static_cast<Eigen::Index>(miivs.size()), static_cast<Eigen::Index>(endogenous.size()));
        for (std::size_t i = 0; i < miivs.size(); ++i)
            for (std::size_t j = 0; j < endogenous.size(); ++j)
                vz(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                    sigma(obs_index(miivs[i]), obs_index(endogenous[j]));
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(vz);
        qr.setThreshold(1e-8);
        if (qr.rank() < static_cast<Eigen::Index>(endogenous.size()))
            throw IdentificationError(equation.outcome,
                                      where + ": instrument-regressor covariance matrix is rank deficient");

        Eigen::MatrixXd vv(static_cast<Eigen::Index>(instruments.size()),
                           static_cast<Eigen::Index>(instruments.size()));
        for (std::size_t i = 0; i < instruments.size(); ++i)
            for (std::size_t j = 0; j < instruments.size(); ++j)
                vv(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                    sigma(obs_index(instruments[i]), obs_index(instruments[j]));
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(vv, Eigen::EigenvaluesOnly);
        // Generic draws need not be positive definite; only singularity matters.
        const Eigen::VectorXd mag = es.eigenvalues().cwiseAbs();
        if (mag.minCoeff() <= 1e-10 * std::max(1.0, mag.maxCoeff()))
            throw IdentificationError(equation.outcome, where + ": instrument covariance matrix is singular");
    }

    equation.miivs = miivs;
    return miivs;
}

std::vector<EstimationEquation> build_equations(const ModelIR& model, const MiivOptions& options) {
    auto equations = transform_to_observed(model);
    for (auto& eq : equations) derive_miivs(model, eq, options);
    return equations;
}

nlohmann::json to_json(const EstimationEquation& equation) {
    nlohmann::json j;
    j["id"] = equation.id;
    j["outcome"] = equation.outcome;
    j["regressors"] = equation.regressors;
    j["parameters"] = nlohmann::json::array();
    for (const auto& c : equation.coefficients) j["parameters"].push_back(c.label);
    j["disturbance"] = nlohmann::json::array();
    for (const auto& t : equation.disturbance) {
        nlohmann::json f = nlohmann::json::array();
        for (const auto& p : t.factors) {
            if (p.fixed)
                f.push_back(*p.fixed);
            else
                f.push_back(p.label);
        }
        j["disturbance"].push_back({{"residual_of", t.variable}, {"sign", t.sign}, {"factors", f}});
    }
    j["miivs"] = equation.miivs;
    j["exogenous_regressors"] = equation.exogenous_regressors;
    j["overidentification"] = equation.overidentification();
    return j;
}

}  // namespace miivbma
