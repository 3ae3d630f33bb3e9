#include "miivbma/simulation.hpp"

#include "miivbma/errors.hpp"
#include "miivbma/estimator.hpp"
#include "miivbma/miiv_search.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <random>
#include <sstream>
#include <thread>

namespace miivbma {

namespace {

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

double median(std::vector<double> v) {
    if (v.empty()) return std::nan("");
    const auto mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double hi = v[mid];
    if (v.size() % 2 == 1) return hi;
    const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lo + hi);
}

const EstimationEquation& target_equation(const std::vector<EstimationEquation>& equations) {
    for (const auto& eq : equations)
        if (eq.outcome == "y2") return eq;
    throw Error(ErrorCode::Model, "simulation model has no equation for y2");
}

std::vector<std::string> y2_miivs(const std::string& syntax) {
    const auto model = parse_model(syntax);
    return target_equation(build_equations(model)).miivs;
}

ReplicationRecord run_replication(const SimulationConfig& config, const Population& pop, int rep,
                                  const std::vector<std::string>& invalid_miivs,
                                  const std::vector<std::string>& correct_miivs,
                                  const std::vector<std::string>& instruments) {
    ReplicationRecord rec;
    rec.rep = rep;
    DataSet data;
    data.columns = pop.names;
    data.values = sample_mvn(pop.sigma, config.n,
                             replication_seed(config.seed, config.condition_id(), static_cast<std::uint64_t>(rep)));

    const Eigen::VectorXd y = data.column("y2");
    const Eigen::MatrixXd Z = data.select({"y1"});
    const Eigen::MatrixXd Vinvalid = data.select(invalid_miivs);

    const auto invalid = two_sls(y, Z, Vinvalid);
    rec.invalid_estimate = invalid.theta(1);
    rec.invalid_se = invalid.se(1);
    rec.invalid_sargan_p = invalid.sargan ? invalid.sargan->p_value : 1.0;

    const auto correct = two_sls(y, Z, data.select(correct_miivs));
    rec.correct_estimate = correct.theta(1);
    rec.correct_se = correct.se(1);
    rec.correct_sargan_p = correct.sargan ? correct.sargan->p_value : 1.0;

    const auto bma = fit_2sbma(y, Z, {"y1"}, {}, Vinvalid, invalid_miivs);
    rec.bma_estimate = bma.theta(1);
    rec.bma_se = std::sqrt(bma.var(1));
    rec.bma_sargan_p = bma.bma_sargan_p;
    for (const auto& q : instruments) {
        const auto& d = bma.instrument(q);
        rec.is_sargan_p.push_back(d.is_sargan_p);
        rec.inclusion_prob.push_back(d.inclusion_prob);
    }
    rec.min_p_instrument = bma.suspects.order.front();
    return rec;
}

EstimatorSummary summarize(const std::vector<const ReplicationRecord*>& ok, double truth, double alpha,
                           double ReplicationRecord::*estimate, double ReplicationRecord::*se,
                           double ReplicationRecord::*p) {
    EstimatorSummary s;
    std::vector<double> bias;
    double abs_sum = 0.0, se_sum = 0.0;
    int reject = 0;
    for (const auto* r : ok) {
        const double b = r->*estimate - truth;
        bias.push_back(b);
        abs_sum += std::abs(b);
        se_sum += r->*se;
        if (r->*p < alpha) ++reject;
    }
    const double count = static_cast<double>(ok.size());
    s.median_bias = median(bias);
    s.mean_abs_bias = abs_sum / count;
    s.mean_se = se_sum / count;
    s.sargan_power = reject / count;
    return s;
}

nlohmann::json estimator_json(const EstimatorSummary& s) {
    return {{"median_bias", s.median_bias},
            {"mean_abs_bias", s.mean_abs_bias},
            {"sargan_power", s.sargan_power},
            {"mean_se", s.mean_se}};
}

}  // namespace

std::string to_string(Design d) { return d == Design::Sim1 ? "sim1" : "sim2"; }

Design design_from_string(const std::string& s) {
    if (s == "sim1") return Design::Sim1;
    if (s == "sim2") return Design::Sim2;
    throw Error(ErrorCode::Config, "unknown design '" + s + "' (expected sim1 or sim2)");
}

void SimulationConfig::validate() const {
    const auto bad = [](const std::string& m) { throw Error(ErrorCode::Config, m); };
    if (!(factor_variance > 0.0)) bad("factor_variance must be positive");
    if (!(error_variance > 0.0)) bad("error_variance must be positive");
    if (!(ec >= 0.0 && ec < error_variance)) bad("ec must lie in [0, error_variance)");
    if (!(fc > -1.0 && fc < 1.0)) bad("fc must lie in (-1, 1)");
    if (n < 10) bad("n must be at least 10");
    if (reps < 1) bad("reps must be at least 1");
    if (!(alpha > 0.0 && alpha < 1.0)) bad("alpha must lie in (0, 1)");
}

std::uint64_t SimulationConfig::condition_id() const {
    std::uint64_t h = mix(design == Design::Sim1 ? 1 : 2);
    h = mix(h ^ std::bit_cast<std::uint64_t>(ec));
    h = mix(h ^ std::bit_cast<std::uint64_t>(fc));
    h = mix(h ^ static_cast<std::uint64_t>(n));
    return h;
}

std::string SimulationConfig::name() const {
    std::ostringstream os;
    os << to_string(design) << "_ec" << ec << "_fc" << fc << "_n" << n;
    return os.str();
}

std::string true_model_syntax(Design d) {
    return misspecified_model_syntax(d) + (d == Design::Sim1 ? "y2 ~~ y3\n" : "y2 ~~ y5\n");
}

std::string misspecified_model_syntax(Design) {
    return "eta1 =~ y1 + y2 + y3 + y4\n"
           "eta2 =~ y5 + y6 + y7 + y8\n"
           "eta1 ~~ eta2\n";
}

ParamAssignment population_parameters(const SimulationConfig& config) {
    const auto model = parse_model(true_model_syntax(config.design));
    ParamAssignment p;
    for (const auto& l : model.loadings)
        if (l.param.is_free()) p.set(l.param.label, 1.0);
    for (const auto& c : model.covariances) {
        if (!c.param.is_free()) continue;
        double v = 0.0;
        if (c.is_variance())
            v = model.is_latent(c.a) ? config.factor_variance : config.error_variance;
        else if (model.is_latent(c.a))
            v = config.fc * config.factor_variance;
        else
            v = config.ec;
        p.set(c.param.label, v);
    }
    return p;
}

Population build_population(const SimulationConfig& config) {
    config.validate();
    const auto model = parse_model(true_model_syntax(config.design));
    const auto implied = implied_covariance(model, population_parameters(config));
    if (!implied.positive_definite)
        throw NumericalError("population covariance for " + config.name() +
                             " is not positive definite (smallest eigenvalue " +
                             std::to_string(implied.min_eigenvalue) + ")");
    return {implied.names, implied.sigma, 1.0};
}

std::uint64_t replication_seed(std::uint64_t seed, std::uint64_t condition_id, std::uint64_t rep) {
    return mix(mix(seed ^ mix(condition_id)) + rep);
}

Eigen::MatrixXd sample_mvn(const Eigen::MatrixXd& sigma, Eigen::Index n, std::uint64_t seed) {
    Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success) throw NumericalError("covariance matrix is not positive definite");
    const Eigen::MatrixXd L = llt.matrixL();
    const auto p = sigma.rows();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd g(n, p);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < p; ++j) g(i, j) = normal(rng);
    return g * L.transpose();
}

const InstrumentSummary& ConditionSummary::instrument(const std::string& name) const {
    for (const auto& s : instruments)
        if (s.name == name) return s;
    throw Error(ErrorCode::Config, "no instrument '" + name + "' in condition summary");
}

ConditionSummary run_condition(const SimulationConfig& config) {
    const auto pop = build_population(config);

    ConditionSummary out;
    out.config = config;
    out.invalid_miivs = y2_miivs(misspecified_model_syntax(config.design));
    out.correct_miivs = y2_miivs(true_model_syntax(config.design));
    const auto& instruments = out.invalid_miivs;

    std::vector<ReplicationRecord> records(static_cast<std::size_t>(config.reps));
    std::atomic<int> next{0};
    const auto worker = [&] {
        for (int rep = next++; rep < config.reps; rep = next++) {
            auto& slot = records[static_cast<std::size_t>(rep)];
            try {
                slot = run_replication(config, pop, rep, out.invalid_miivs, out.correct_miivs, instruments);
            } catch (const std::exception& e) {
                slot = ReplicationRecord{};
                slot.rep = rep;
                slot.failed = true;
                slot.error = e.what();
            }
        }
    };
    unsigned threads = config.threads ? config.threads : std::max(1u, std::thread::hardware_concurrency());
    threads = std::min<unsigned>(threads, static_cast<unsigned>(config.reps));
    {
        std::vector<std::jthread> pool;
        for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
        worker();
    }

    std::vector<const ReplicationRecord*> ok;
    for (const auto& r : records) {
        if (r.failed)
            ++out.failures;
        else
            ok.push_back(&r);
    }
    out.completed = static_cast<int>(ok.size());
    if (out.failures * 100 > config.reps || ok.empty())
        throw NumericalError(config.name() + ": " + std::to_string(out.failures) + " of " +
                             std::to_string(config.reps) + " replications failed" +
                             (ok.size() < records.size() ? " (first: " +
                                                               std::find_if(records.begin(), records.end(),
                                                                            [](const auto& r) { return r.failed; })
                                                                   ->error +
                                                               ")"
                                                         : std::string{}));

    const double truth = pop.true_lambda2;
    out.invalid = summarize(ok, truth, config.alpha, &ReplicationRecord::invalid_estimate,
                            &ReplicationRecord::invalid_se, &ReplicationRecord::invalid_sargan_p);
    out.correct = summarize(ok, truth, config.alpha, &ReplicationRecord::correct_estimate,
                            &ReplicationRecord::correct_se, &ReplicationRecord::correct_sargan_p);
    out.bma = summarize(ok, truth, config.alpha, &ReplicationRecord::bma_estimate, &ReplicationRecord::bma_se,
                        &ReplicationRecord::bma_sargan_p);

    const double count = static_cast<double>(ok.size());
    for (std::size_t q = 0; q < instruments.size(); ++q) {
        InstrumentSummary s;
        s.name = instruments[q];
        double reject = 0, minimum = 0, inclusion = 0;
        for (const auto* r : ok) {
            if (r->is_sargan_p[q] < config.alpha) ++reject;
            if (r->min_p_instrument == s.name) ++minimum;
            inclusion += r->inclusion_prob[q];
        }
        s.is_sargan_power = reject / count;
        s.specificity = minimum / count;
        s.mean_inclusion_prob = inclusion / count;
        out.instruments.push_back(s);
    }
    out.replications = std::move(records);
    return out;
}

nlohmann::json to_json(const SimulationConfig& c) {
    return {{"design", to_string(c.design)},
            {"ec", c.ec},
            {"fc", c.fc},
            {"n", c.n},
            {"reps", c.reps},
            {"seed", c.seed},
            {"factor_variance", c.factor_variance},
            {"error_variance", c.error_variance},
            {"alpha", c.alpha}};
}

nlohmann::json to_json(const ConditionSummary& s) {
    nlohmann::json j;
    j["condition"] = to_json(s.config);
    j["invalid_miivs"] = s.invalid_miivs;
    j["correct_miivs"] = s.correct_miivs;
    j["estimators"] = {{"invalid_miivs_2sls", estimator_json(s.invalid)},
                       {"correct_miivs_2sls", estimator_json(s.correct)},
                       {"miiv_2sbma", estimator_json(s.bma)}};
    j["instruments"] = nlohmann::json::array();
    for (const auto& i : s.instruments)
        j["instruments"].push_back({{"name", i.name},
                                    {"is_sargan_power", i.is_sargan_power},
                                    {"specificity", i.specificity},
                                    {"mean_inclusion_prob", i.mean_inclusion_prob}});
    j["completed"] = s.completed;
    j["failures"] = s.failures;
    return j;
}

std::string replications_csv(const ConditionSummary& s) {
    std::ostringstream os;
    os.precision(17);
    os << "rep,failed,invalid_estimate,invalid_se,invalid_sargan_p,correct_estimate,correct_se,correct_sargan_p,"
          "bma_estimate,bma_se,bma_sargan_p,min_p_instrument";
    for (const auto& q : s.invalid_miivs) os << ",is_p_" << q;
    for (const auto& q : s.invalid_miivs) os << ",incl_" << q;
    os << '\n';
    for (const auto& r : s.replications) {
        os << r.rep << ',' << (r.failed ? 1 : 0);
        if (r.failed) {
            for (std::size_t k = 0; k < 10 + 2 * s.invalid_miivs.size(); ++k) os << ',';
            os << '\n';
            continue;
        }
        os << ',' << r.invalid_estimate << ',' << r.invalid_se << ',' << r.invalid_sargan_p << ','
           << r.correct_estimate << ',' << r.correct_se << ',' << r.correct_sargan_p << ',' << r.bma_estimate << ','
           << r.bma_se << ',' << r.bma_sargan_p << ',' << r.min_p_instrument;
        for (double p : r.is_sargan_p) os << ',' << p;
        for (double p : r.inclusion_prob) os << ',' << p;
        os << '\n';
    }
    return os.str();
}

std::vector<SimulationConfig> expand_grid(const nlohmann::json& grid) {
    try {
        SimulationConfig base;
        base.reps = grid.value("reps", base.reps);
        base.seed = grid.value("seed", base.seed);
        base.factor_variance = grid.value("factor_variance", base.factor_variance);
        base.error_variance = grid.value("error_variance", base.error_variance);
        base.alpha = grid.value("alpha", base.alpha);
        base.threads = grid.value("threads", base.threads);

        const auto list = [&](const char* key, nlohmann::json fallback) {
            return grid.contains(key) ? grid.at(key) : fallback;
        };
        std::vector<SimulationConfig> out;
        for (const auto& d : list("designs", {"sim1", "sim2"}))
            for (const auto& ec : list("ec", {0.1, 0.6}))
                for (const auto& fc : list("fc", {0.1, 0.8}))
                    for (const auto& n : list("n", {100, 500})) {
                        SimulationConfig c = base;
                        c.design = design_from_string(d.get<std::string>());
                        c.ec = ec.get<double>();
                        c.fc = fc.get<double>();
                        c.n = n.get<int>();
                        c.validate();
                        out.push_back(c);
                    }
        if (out.empty()) throw Error(ErrorCode::Config, "simulation grid is empty");
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::Config, std::string("invalid simulation grid: ") + e.what());
    }
}

}  // namespace miivbma
