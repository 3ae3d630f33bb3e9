#include "miivbma/bma.hpp"

#include "miivbma/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

namespace miivbma {

namespace {

std::uint64_t binomial(std::size_t n, std::size_t k) {
    if (k > n) return 0;
    k = std::min(k, n - k);
    unsigned __int128 r = 1;
    for (std::size_t i = 1; i <= k; ++i) {
        r = r * (n - k + i) / i;
        if (r > std::numeric_limits<std::uint64_t>::max()) return std::numeric_limits<std::uint64_t>::max();
    }
    return static_cast<std::uint64_t>(r);
}

std::vector<std::string> sorted(std::vector<std::string> v) {
    std::sort(v.begin(), v.end());
    return v;
}

Subset to_names(const std::vector<std::size_t>& idx, const std::vector<std::string>& names) {
    Subset s;
    s.reserve(idx.size());
    for (auto i : idx) s.push_back(names[i]);
    return s;
}

bool next_combination(std::vector<std::size_t>& idx, std::size_t n) {
    const auto k = idx.size();
    for (std::size_t i = k; i-- > 0;) {
        if (idx[i] < n - k + i) {
            ++idx[i];
            for (std::size_t j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
            return true;
        }
    }
    return false;
}

// Probability-weighted mean of `values` over fits selected by `pick`, with the
// weights renormalized from log Bayes factors inside the selection.
template <class Pick>
double conditional_average(const std::vector<SubsetFit>& fits, Pick pick, const std::vector<double>& values) {
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < fits.size(); ++k)
        if (pick(fits[k])) top = std::max(top, fits[k].log_bf);
    double num = 0.0;
    double den = 0.0;
    for (std::size_t k = 0; k < fits.size(); ++k) {
        if (!pick(fits[k])) continue;
        const double w = std::exp(fits[k].log_bf - top);
        num += w * values[k];
        den += w;
    }
    return num / den;
}

}  // namespace

bool SubsetFit::contains(const std::string& instrument) const {
    return std::find(subset.begin(), subset.end(), instrument) != subset.end();
}

const InstrumentDiagnostic& BmaEquationResult::instrument(const std::string& name) const {
    for (const auto& d : instruments)
        if (d.name == name) return d;
    throw Error(ErrorCode::Config, "unknown instrument '" + name + "'");
}

std::uint64_t subset_count(std::size_t v, std::size_t z) {
    std::uint64_t total = 0;
    for (std::size_t l = z + 1; l <= v; ++l) {
        const auto c = binomial(v, l);
        if (c > std::numeric_limits<std::uint64_t>::max() - total) return std::numeric_limits<std::uint64_t>::max();
        total += c;
    }
    return total;
}

std::vector<Subset> enumerate_subsets(const std::vector<std::string>& miivs, std::size_t z, std::size_t cap) {
    const auto names = sorted(miivs);
    const auto v = names.size();
    if (v < z + 1)
        throw Error(ErrorCode::Identification, "need at least " + std::to_string(z + 1) + " instruments, have " +
                                                   std::to_string(v));
    const auto total = subset_count(v, z);
    if (total > cap)
        throw Error(ErrorCode::Config, std::to_string(total) + " instrument subsets exceed the cap of " +
                                           std::to_string(cap) +
                                           "; raise the subset cap or enable subset sampling");
    std::vector<Subset> out;
    out.reserve(static_cast<std::size_t>(total));
    for (std::size_t l = z + 1; l <= v; ++l) {
        std::vector<std::size_t> idx(l);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        do {
            out.push_back(to_names(idx, names));
        } while (next_combination(idx, v));
    }
    return out;
}

std::vector<Subset> sample_subsets(const std::vector<std::string>& miivs, std::size_t z, std::size_t count,
                                   std::uint64_t seed) {
    const auto names = sorted(miivs);
    const auto v = names.size();
    const auto total = subset_count(v, z);
    if (count >= total) return enumerate_subsets(miivs, z, std::numeric_limits<std::size_t>::max());

    std::vector<double> size_weights;
    for (std::size_t l = z + 1; l <= v; ++l) size_weights.push_back(static_cast<double>(binomial(v, l)));
    std::discrete_distribution<std::size_t> pick_size(size_weights.begin(), size_weights.end());
    std::mt19937_64 rng(seed);

    std::set<std::vector<std::size_t>> chosen;
    std::vector<std::size_t> pool(v);
    while (chosen.size() < count) {
        const auto l = z + 1 + pick_size(rng);
        std::iota(pool.begin(), pool.end(), std::size_t{0});
        for (std::size_t i = 0; i < l; ++i) {
            std::uniform_int_distribution<std::size_t> d(i, v - 1);
            std::swap(pool[i], pool[d(rng)]);
        }
        std::vector<std::size_t> idx(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(l));
        std::sort(idx.begin(), idx.end());
        chosen.insert(std::move(idx));
    }
    std::vector<std::vector<std::size_t>> ordered(chosen.begin(), chosen.end());
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const auto& a, const auto& b) { return a.size() < b.size(); });
    std::vector<Subset> out;
    for (const auto& idx : ordered) out.push_back(to_names(idx, names));
    return out;
}

double empirical_bayes_g(double r2, int p, Eigen::Index n) {
    if (p < 1) throw Error(ErrorCode::Config, "empirical_bayes_g: need at least one predictor");
    if (n <= p + 1) throw Error(ErrorCode::Config, "empirical_bayes_g: need n > p + 1");
    if (!(r2 >= 0.0 && r2 <= 1.0)) throw Error(ErrorCode::Config, "empirical_bayes_g: r2 outside [0, 1]");
    if (r2 >= 1.0) return std::numeric_limits<double>::infinity();
    const double f = (r2 / p) / ((1.0 - r2) / static_cast<double>(n - 1 - p));
    return std::max(f - 1.0, 0.0);
}

double log_bayes_factor(double g, double r2, int p, Eigen::Index n) {
    if (!(g >= 0.0)) throw Error(ErrorCode::Config, "log_bayes_factor: g must be non-negative");
    if (r2 >= 1.0 || std::isinf(g)) return kLogBayesFactorCap;
    const double a = 0.5 * static_cast<double>(n - p - 1);
    const double b = 0.5 * static_cast<double>(n - 1);
    const double value = a * std::log1p(g) - b * std::log1p(g * (1.0 - r2));
    return std::min(value, kLogBayesFactorCap);
}

std::vector<double> model_probabilities(std::span<const double> log_bfs) {
    if (log_bfs.empty()) throw Error(ErrorCode::Numerical, "no first-stage models to weight");
    const double top = *std::max_element(log_bfs.begin(), log_bfs.end());
    if (std::isinf(top) && top < 0) throw Error(ErrorCode::Numerical, "no valid first-stage model");
    if (std::isnan(top)) throw Error(ErrorCode::Numerical, "log Bayes factor is NaN");
    std::vector<double> out(log_bfs.size());
    double sum = 0.0;
    for (std::size_t k = 0; k < log_bfs.size(); ++k) {
        out[k] = std::exp(log_bfs[k] - top);
        sum += out[k];
    }
    for (auto& p : out) p /= sum;
    return out;
}

double bma_sargan(std::span<const double> pis, std::span<const double> sargan_ps) {
    if (pis.size() != sargan_ps.size()) throw Error(ErrorCode::Config, "bma_sargan: length mismatch");
    double p = 0.0;
    for (std::size_t k = 0; k < pis.size(); ++k) p += pis[k] * sargan_ps[k];
    return std::clamp(p, 0.0, 1.0);
}

double instrument_specific_sargan(const std::vector<SubsetFit>& fits, const std::string& q) {
    const auto pick = [&](const SubsetFit& f) { return f.contains(q); };
    if (std::none_of(fits.begin(), fits.end(), pick))
        throw Error(ErrorCode::Config, "instrument '" + q + "' appears in no evaluated subset");
    std::vector<double> ps;
    ps.reserve(fits.size());
    for (const auto& f : fits) ps.push_back(f.sargan_p);
    return std::clamp(conditional_average(fits, pick, ps), 0.0, 1.0);
}

double inclusion_probability(const std::vector<SubsetFit>& fits, const std::string& q) {
    bool found = false;
    double total = 0.0;
    for (const auto& f : fits)
        if (f.contains(q)) {
            found = true;
            total += f.pi;
        }
    if (!found) throw Error(ErrorCode::Config, "instrument '" + q + "' appears in no evaluated subset");
    return std::clamp(total, 0.0, 1.0);
}

SuspectRanking rank_suspects(const std::map<std::string, double>& is_sargan_ps) {
    std::vector<std::pair<std::string, double>> items(is_sargan_ps.begin(), is_sargan_ps.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second < b.second : a.first < b.first;
    });
    SuspectRanking r;
    for (std::size_t i = 0; i < items.size(); ++i) {
        r.order.push_back(items[i].first);
        if (i > 0 && items[i].second == items[i - 1].second) r.tied = true;
    }
    return r;
}

BmaEquationResult fit_2sbma(const Eigen::VectorXd& y, const Eigen::MatrixXd& Z,
                            const std::vector<std::string>& regressor_names,
                            const std::vector<std::string>& exogenous, const Eigen::MatrixXd& V,
                            const std::vector<std::string>& instrument_names, const BmaOptions& options) {
    const auto n = y.size();
    if (static_cast<std::size_t>(Z.cols()) != regressor_names.size() ||
        static_cast<std::size_t>(V.cols()) != instrument_names.size())
        throw Error(ErrorCode::Config, "fit_2sbma: column/name count mismatch");

    std::vector<Eigen::Index> endogenous_idx;
    std::vector<Eigen::Index> exogenous_idx;
    for (std::size_t j = 0; j < regressor_names.size(); ++j) {
        const bool exo = std::find(exogenous.begin(), exogenous.end(), regressor_names[j]) != exogenous.end();
        (exo ? exogenous_idx : endogenous_idx).push_back(static_cast<Eigen::Index>(j));
    }
    const auto z = endogenous_idx.size();

    std::vector<Subset> subsets;
    const auto total = subset_count(instrument_names.size(), z);
    if (total > options.subset_cap && options.subset_sample)
        subsets = sample_subsets(instrument_names, z, *options.subset_sample, options.seed);
    else
        subsets = enumerate_subsets(instrument_names, z, options.subset_cap);

    const auto column_of = [&](const std::string& name) {
        auto it = std::find(instrument_names.begin(), instrument_names.end(), name);
        return static_cast<Eigen::Index>(it - instrument_names.begin());
    };

    BmaEquationResult out;
    out.n = n;
    out.coefficient_names.push_back("(intercept)");
    out.coefficient_names.insert(out.coefficient_names.end(), regressor_names.begin(), regressor_names.end());

    TwoSlsOptions tso;
    tso.denominator = options.denominator;
    tso.regressor_names = regressor_names;

    for (const auto& subset : subsets) {
        const auto width = static_cast<Eigen::Index>(subset.size() + exogenous_idx.size());
        Eigen::MatrixXd Vk(n, width);
        tso.instrument_names = subset;
        for (std::size_t i = 0; i < subset.size(); ++i) Vk.col(static_cast<Eigen::Index>(i)) = V.col(column_of(subset[i]));
        for (std::size_t i = 0; i < exogenous_idx.size(); ++i) {
            Vk.col(static_cast<Eigen::Index>(subset.size() + i)) = Z.col(exogenous_idx[i]);
            tso.instrument_names.push_back(regressor_names[static_cast<std::size_t>(exogenous_idx[i])]);
        }

        SubsetFit fit;
        fit.subset = subset;
        try {
            const auto est = two_sls(y, Z, Vk, tso);
            const int p = static_cast<int>(width);
            for (auto j : endogenous_idx) {
                const double r2 = std::clamp(est.r2_first_stage[static_cast<std::size_t>(j)], 0.0, 1.0);
                const double g = empirical_bayes_g(r2, p, n);
                fit.r2.push_back(r2);
                fit.g.push_back(g);
                fit.log_bf += log_bayes_factor(g, r2, p, n);
            }
            fit.log_bf = std::min(fit.log_bf, kLogBayesFactorCap);
            fit.theta = est.theta;
            fit.var_theta = est.se.array().square();
            fit.sargan_p = est.sargan ? est.sargan->p_value : 1.0;
        } catch (const NumericalError& e) {
            ++out.dropped_subsets;
            std::string names;
            for (const auto& s : subset) names += (names.empty() ? "" : ",") + s;
            out.warnings.push_back("dropped singular subset {" + names + "}: " + e.what());
            continue;
        }
        out.subset_fits.push_back(std::move(fit));
    }
    if (out.subset_fits.empty()) throw NumericalError("every instrument subset was singular");

    std::vector<double> log_bfs;
    for (const auto& f : out.subset_fits) log_bfs.push_back(f.log_bf);
    const auto pis = model_probabilities(log_bfs);
    for (std::size_t k = 0; k < pis.size(); ++k) out.subset_fits[k].pi = pis[k];

    const auto dim = Z.cols() + 1;
    out.theta = Eigen::VectorXd::Zero(dim);
    Eigen::VectorXd within = Eigen::VectorXd::Zero(dim);
    for (const auto& f : out.subset_fits) {
        out.theta += f.pi * f.theta;
        within += f.pi * f.var_theta;
    }
    Eigen::VectorXd between = Eigen::VectorXd::Zero(dim);
    for (const auto& f : out.subset_fits) between += f.pi * (f.theta - out.theta).array().square().matrix();
    out.var = within + between;

    std::vector<double> ps;
    for (const auto& f : out.subset_fits) ps.push_back(f.sargan_p);
    out.bma_sargan_p = bma_sargan(pis, ps);

    std::map<std::string, double> is_ps;
    for (const auto& q : sorted(instrument_names)) {
        const bool present = std::any_of(out.subset_fits.begin(), out.subset_fits.end(),
                                         [&](const SubsetFit& f) { return f.contains(q); });
        if (!present) {
            out.warnings.push_back("instrument '" + q + "' appears in no retained subset");
            continue;
        }
        InstrumentDiagnostic d;
        d.name = q;
        d.inclusion_prob = inclusion_probability(out.subset_fits, q);
        d.is_sargan_p = instrument_specific_sargan(out.subset_fits, q);
        d.weak = d.inclusion_prob < options.weak_threshold;
        is_ps[q] = d.is_sargan_p;
        out.instruments.push_back(d);
    }
    out.suspects = rank_suspects(is_ps);
    return out;
}

BmaEquationResult fit_equation_2sbma(const EstimationEquation& equation, const DataSet& data,
                                     const BmaOptions& options) {
    if (equation.miivs.empty())
        throw IdentificationError(equation.outcome, "equation for " + equation.outcome + " has no instruments");
    return fit_2sbma(data.column(equation.outcome), data.select(equation.regressors), equation.regressors,
                     equation.exogenous_regressors, data.select(equation.miivs), equation.miivs, options);
}

nlohmann::json to_json(const BmaEquationResult& result, bool include_subsets) {
    nlohmann::json j;
    j["coefficients"] = nlohmann::json::array();
    for (Eigen::Index i = 0; i < result.theta.size(); ++i)
        j["coefficients"].push_back({{"name", result.coefficient_names[static_cast<std::size_t>(i)]},
                                     {"estimate", result.theta(i)},
                                     {"se", std::sqrt(result.var(i))},
                                     {"variance", result.var(i)}});
    j["bma_sargan_p"] = result.bma_sargan_p;
    j["instruments"] = nlohmann::json::array();
    for (const auto& d : result.instruments)
        j["instruments"].push_back({{"name", d.name},
                                    {"inclusion_prob", d.inclusion_prob},
                                    {"is_sargan_p", d.is_sargan_p},
                                    {"weak", d.weak}});
    j["suspects"] = result.suspects.order;
    j["suspects_tied"] = result.suspects.tied;
    j["subset_count"] = result.subset_fits.size();
    j["dropped_subsets"] = result.dropped_subsets;
    j["warnings"] = result.warnings;
    if (include_subsets) {
        j["subsets"] = nlohmann::json::array();
        for (const auto& f : result.subset_fits) {
            std::vector<double> theta(f.theta.data(), f.theta.data() + f.theta.size());
            std::vector<double> var(f.var_theta.data(), f.var_theta.data() + f.var_theta.size());
            j["subsets"].push_back({{"instruments", f.subset},
                                    {"r2", f.r2},
                                    {"g", f.g},
                                    {"log_bf", f.log_bf},
                                    {"pi", f.pi},
                                    {"theta", theta},
                                    {"var_theta", var},
                                    {"sargan_p", f.sargan_p}});
        }
    }
    return j;
}

}  // namespace miivbma
