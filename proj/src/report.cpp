#include "miivbma/report.hpp"

#include "miivbma/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#ifndef MIIVBMA_VERSION
#define MIIVBMA_VERSION "0.0.0"
#endif

namespace miivbma {

namespace {

std::vector<std::string> instrument_columns(const EstimationEquation& eq) {
    auto v = eq.miivs;
    v.insert(v.end(), eq.exogenous_regressors.begin(), eq.exogenous_regressors.end());
    return v;
}

std::vector<std::string> referenced_columns(const std::vector<EstimationEquation>& equations) {
    std::set<std::string> seen;
    std::vector<std::string> out;
    const auto add = [&](const std::string& s) {
        if (seen.insert(s).second) out.push_back(s);
    };
    for (const auto& eq : equations) {
        add(eq.outcome);
        for (const auto& r : eq.regressors) add(r);
        for (const auto& m : eq.miivs) add(m);
    }
    return out;
}

nlohmann::json coefficient_rows(const EstimationEquation& eq, const Eigen::VectorXd& theta,
                                const Eigen::VectorXd& se) {
    auto rows = nlohmann::json::array();
    rows.push_back({{"parameter", eq.outcome + "~1"}, {"regressor", "(intercept)"}, {"estimate", theta(0)},
                    {"se", se(0)}});
    for (std::size_t i = 0; i < eq.regressors.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(i + 1);
        rows.push_back({{"parameter", eq.coefficients[i].label}, {"regressor", eq.regressors[i]},
                        {"estimate", theta(k)}, {"se", se(k)}});
    }
    return rows;
}

std::string pad(std::string s, std::size_t width) {
    if (s.size() < width) s.append(width - s.size(), ' ');
    return s;
}

std::string lpad(std::string s, std::size_t width) {
    if (s.size() < width) s.insert(0, width - s.size(), ' ');
    return s;
}

std::string join(const nlohmann::json& names, const char* sep = ", ") {
    std::string out;
    for (const auto& n : names) out += (out.empty() ? "" : sep) + n.get<std::string>();
    return out;
}

std::string star(double p, double alpha) { return p < alpha ? " *" : ""; }

}  // namespace

std::string to_string(EstimatorKind kind) { return kind == EstimatorKind::TwoSls ? "2sls" : "2sbma"; }

EstimatorKind estimator_from_string(const std::string& s) {
    if (s == "2sls") return EstimatorKind::TwoSls;
    if (s == "2sbma") return EstimatorKind::TwoSbma;
    throw Error(ErrorCode::Config, "unknown estimator '" + s + "' (expected 2sls or 2sbma)");
}

std::string to_string(VcovDenominator d) { return d == VcovDenominator::N ? "n" : "n-k"; }

VcovDenominator denominator_from_string(const std::string& s) {
    if (s == "n") return VcovDenominator::N;
    if (s == "n-k") return VcovDenominator::NMinusK;
    throw Error(ErrorCode::Config, "unknown variance denominator '" + s + "' (expected n or n-k)");
}

std::string_view library_version() { return MIIVBMA_VERSION; }

std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string fixed3(double v) {
    if (std::isnan(v)) return "NA";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    std::string s = buf;
    if (s == "-0.000") s = "0.000";
    return s;
}

FitReport fit_model(std::string_view model_text, std::string_view csv_text, const FitOptions& options,
                    const std::string& model_source, const std::string& data_source) {
    if (!(options.alpha > 0.0 && options.alpha < 1.0)) throw Error(ErrorCode::Config, "alpha must lie in (0, 1)");

    const auto model = parse_model(model_text);
    const auto equations = build_equations(model);
    const auto data = parse_csv(csv_text, referenced_columns(equations));

    FitReport report;
    report.n = data.rows();
    report.dropped_rows = data.dropped_rows;
    if (data.dropped_rows)
        report.warnings.push_back(std::to_string(data.dropped_rows) + " row(s) with missing values dropped");

    BmaOptions bo;
    bo.subset_cap = options.subset_cap;
    bo.subset_sample = options.subset_sample;
    bo.seed = options.seed;
    bo.denominator = options.denominator;

    for (const auto& eq : equations) {
        EquationReport er;
        er.equation = eq;
        er.estimator = options.estimator;
        const bool just_identified = eq.overidentification() == 0;
        if (options.estimator == EstimatorKind::TwoSbma && just_identified) {
            er.estimator = EstimatorKind::TwoSls;
            er.notes.push_back("just-identified: model averaging needs a surplus instrument; 2SLS reported");
        }
        if (er.estimator == EstimatorKind::TwoSbma) {
            er.bma = fit_equation_2sbma(eq, data, bo);
        } else {
            TwoSlsOptions to;
            to.denominator = options.denominator;
            to.regressor_names = eq.regressors;
            to.instrument_names = instrument_columns(eq);
            er.tsls = two_sls(data.column(eq.outcome), data.select(eq.regressors), data.select(to.instrument_names),
                              to);
        }
        if (just_identified) er.notes.push_back("just-identified: Sargan test unavailable");
        report.equations.push_back(std::move(er));
    }

    nlohmann::json config = {{"estimator", to_string(options.estimator)},
                             {"alpha", options.alpha},
                             {"vcov_denominator", to_string(options.denominator)},
                             {"subset_cap", options.subset_cap},
                             {"audit_subsets", options.audit_subsets}};
    config["subset_sample"] = options.subset_sample ? nlohmann::json(*options.subset_sample) : nlohmann::json();
    report.provenance = {{"version", std::string(library_version())},
                         {"model", {{"source", model_source}, {"fnv1a", fnv1a_hex(model_text)}}},
                         {"data", {{"source", data_source}, {"fnv1a", fnv1a_hex(csv_text)}}},
                         {"seed", options.seed},
                         {"config", config}};
    return report;
}

nlohmann::json to_json(const FitReport& report, const FitOptions& options) {
    nlohmann::json j;
    j["provenance"] = report.provenance;
    j["n"] = report.n;
    j["dropped_rows"] = report.dropped_rows;
    j["warnings"] = report.warnings;
    j["alpha"] = options.alpha;
    j["equations"] = nlohmann::json::array();
    for (const auto& er : report.equations) {
        nlohmann::json e;
        e["equation"] = to_json(er.equation);
        e["text"] = er.equation.to_string();
        e["estimator"] = to_string(er.estimator);
        e["notes"] = er.notes;
        if (er.tsls) {
            e["coefficients"] = coefficient_rows(er.equation, er.tsls->theta, er.tsls->se);
            e["first_stage_r2"] = er.tsls->r2_first_stage;
            if (er.tsls->sargan)
                e["sargan"] = {{"statistic", er.tsls->sargan->statistic},
                               {"df", er.tsls->sargan->df},
                               {"p_value", er.tsls->sargan->p_value}};
            else
                e["sargan"] = nullptr;
        } else {
            e["coefficients"] = coefficient_rows(er.equation, er.bma->theta, er.bma->var.cwiseSqrt());
            e["bma"] = to_json(*er.bma, options.audit_subsets);
        }
        j["equations"].push_back(std::move(e));
    }
    return j;
}

std::string render_fit_report(const nlohmann::json& report) {
    const double alpha = report.at("alpha").get<double>();
    std::ostringstream os;
    const auto& prov = report.at("provenance");
    os << "miivbma " << prov.at("version").get<std::string>() << "  estimator "
       << prov.at("config").at("estimator").get<std::string>() << "  n = " << report.at("n").get<long>()
       << "  (* p < " << alpha << ")\n";
    for (const auto& w : report.at("warnings")) os << "warning: " << w.get<std::string>() << '\n';

    for (const auto& e : report.at("equations")) {
        const auto& eq = e.at("equation");
        os << "\nEquation " << eq.at("id").get<int>() << " [" << e.at("estimator").get<std::string>() << "]  "
           << e.at("text").get<std::string>() << '\n';
        os << "  MIIVs: " << join(eq.at("miivs")) << '\n';
        os << "  " << pad("parameter", 16) << pad("regressor", 14) << lpad("estimate", 10) << lpad("se", 10)
           << '\n';
        for (const auto& c : e.at("coefficients"))
            os << "  " << pad(c.at("parameter").get<std::string>(), 16) << pad(c.at("regressor").get<std::string>(), 14)
               << lpad(fixed3(c.at("estimate").get<double>()), 10) << lpad(fixed3(c.at("se").get<double>()), 10)
               << '\n';
        if (e.contains("sargan") && !e.at("sargan").is_null()) {
            const auto& s = e.at("sargan");
            const double p = s.at("p_value").get<double>();
            os << "  Sargan: statistic " << fixed3(s.at("statistic").get<double>()) << ", df "
               << s.at("df").get<int>() << ", p " << fixed3(p) << star(p, alpha) << '\n';
        }
        if (e.contains("bma")) {
            const auto& b = e.at("bma");
            const double p = b.at("bma_sargan_p").get<double>();
            os << "  BMA-S p " << fixed3(p) << star(p, alpha) << "  (" << b.at("subset_count").get<std::size_t>()
               << " subsets)\n";
            os << "  " << pad("instrument", 14) << lpad("incl. prob", 12) << lpad("IS-Sargan p", 14) << '\n';
            for (const auto& d : b.at("instruments")) {
                const double q = d.at("is_sargan_p").get<double>();
                os << "  " << pad(d.at("name").get<std::string>(), 14)
                   << lpad(fixed3(d.at("inclusion_prob").get<double>()), 12) << lpad(fixed3(q), 14) << star(q, alpha)
                   << (d.at("weak").get<bool>() ? "  weak" : "") << '\n';
            }
            os << "  suspects: " << join(b.at("suspects")) << (b.at("suspects_tied").get<bool>() ? "  (ties)" : "")
               << '\n';
            for (const auto& w : b.at("warnings")) os << "  warning: " << w.get<std::string>() << '\n';
            if (b.contains("subsets")) {
                os << "  " << pad("subset", 30) << lpad("log BF", 12) << lpad("pi", 10) << lpad("Sargan p", 10)
                   << '\n';
                for (const auto& s : b.at("subsets"))
                    os << "  " << pad(join(s.at("instruments"), ","), 30) << lpad(fixed3(s.at("log_bf").get<double>()), 12)
                       << lpad(fixed3(s.at("pi").get<double>()), 10)
                       << lpad(fixed3(s.at("sargan_p").get<double>()), 10) << '\n';
            }
        }
        for (const auto& note : e.at("notes")) os << "  note: " << note.get<std::string>() << '\n';
    }
    return os.str();
}

nlohmann::json explain_miivs(const ModelIR& model) {
    auto out = nlohmann::json::array();
    for (const auto& eq : build_equations(model)) {
        auto j = to_json(eq);
        j["text"] = eq.to_string();
        j["disturbance_text"] = nlohmann::json::array();
        for (const auto& t : eq.disturbance) j["disturbance_text"].push_back(t.to_string());
        j["just_identified"] = eq.overidentification() == 0;
        out.push_back(std::move(j));
    }
    return out;
}

std::string render_explanation(const nlohmann::json& explanation) {
    std::ostringstream os;
    for (const auto& e : explanation) {
        os << "Equation " << e.at("id").get<int>() << ": " << e.at("text").get<std::string>() << '\n';
        os << "  disturbance terms: " << join(e.at("disturbance_text"), "  ") << '\n';
        os << "  MIIVs: " << join(e.at("miivs")) << '\n';
        if (!e.at("exogenous_regressors").empty())
            os << "  exogenous regressors: " << join(e.at("exogenous_regressors")) << '\n';
        if (e.at("just_identified").get<bool>())
            os << "  just-identified: Sargan test unavailable\n";
        else
            os << "  overidentifying restrictions: " << e.at("overidentification").get<std::size_t>() << '\n';
    }
    return os.str();
}

}  // namespace miivbma
