#include "miivbma/errors.hpp"
#include "miivbma/model_spec.hpp"
#include "miivbma/report.hpp"
#include "miivbma/simulation.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace miivbma;

namespace {

int exit_code(ErrorCode code) {
    switch (code) {
        case ErrorCode::Identification: return 3;
        case ErrorCode::Numerical: return 4;
        default: return 2;
    }
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out || !(out << text)) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
}

std::string timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct FitArgs {
    std::string model, data, estimator = "2sls", denominator = "n-k", out;
    double alpha = 0.05;
    std::size_t subset_cap = 100000, subset_sample = 0;
    std::uint64_t seed = 0;
    bool audit = false;
};

int run_fit(const FitArgs& a) {
    FitOptions o;
    o.estimator = estimator_from_string(a.estimator);
    o.denominator = denominator_from_string(a.denominator);
    o.alpha = a.alpha;
    o.subset_cap = a.subset_cap;
    if (a.subset_sample) o.subset_sample = a.subset_sample;
    o.seed = a.seed;
    o.audit_subsets = a.audit;

    const auto report = fit_model(read_file(a.model), read_file(a.data), o, a.model, a.data);
    const auto json = to_json(report, o);
    std::cout << render_fit_report(json);
    if (!a.out.empty()) write_file(a.out, json.dump(2) + "\n");
    return 0;
}

int run_explain(const std::string& model_path, const std::string& out) {
    const auto model = parse_model(read_file(model_path));
    const auto json = explain_miivs(model);
    std::cout << render_explanation(json);
    if (!out.empty()) write_file(out, json.dump(2) + "\n");
    return 0;
}

struct SimArgs {
    std::string config, out = "sim_out";
    int reps = 0;
    std::uint64_t seed = 0;
    bool seed_set = false;
    unsigned threads = 0;
};

int run_simulate(const SimArgs& a) {
    nlohmann::json grid;
    try {
        grid = nlohmann::json::parse(read_file(a.config));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::Config, std::string("cannot parse grid config: ") + e.what());
    }
    auto configs = expand_grid(grid);
    for (auto& c : configs) {
        if (a.reps > 0) c.reps = a.reps;
        if (a.seed_set) c.seed = a.seed;
        if (a.threads > 0) c.threads = a.threads;
        c.validate();
    }
    // Every population is checked before any replication runs.
    for (const auto& c : configs) {
        try {
            build_population(c);
        } catch (const NumericalError& e) {
            std::cerr << "error[population]: " << e.what() << '\n';
            return 3;
        }
    }

    const fs::path dir = a.out;
    fs::create_directories(dir);
    std::ofstream log(dir / "run.log", std::ios::app);
    log << timestamp() << " start " << a.config << " (" << configs.size() << " conditions)\n";

    auto index = nlohmann::json::array();
    for (std::size_t i = 0; i < configs.size(); ++i) {
        const auto& c = configs[i];
        std::cout << "[" << (i + 1) << "/" << configs.size() << "] " << c.name() << " ... " << std::flush;
        const auto summary = run_condition(c);
        const auto json = to_json(summary);
        write_file(dir / (c.name() + ".json"), json.dump(2) + "\n");
        write_file(dir / (c.name() + ".csv"), replications_csv(summary));
        index.push_back(json);
        std::cout << "invalid Sargan power " << fixed3(summary.invalid.sargan_power) << ", BMA-S power "
                  << fixed3(summary.bma.sargan_power) << '\n';
        log << timestamp() << " done " << c.name() << '\n';
    }
    nlohmann::json all = {{"version", std::string(library_version())},
                          {"config_fnv1a", fnv1a_hex(read_file(a.config))},
                          {"conditions", index}};
    write_file(dir / "summary.json", all.dump(2) + "\n");
    log << timestamp() << " finish\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Model-implied instrumental variable estimation with two-stage Bayesian model averaging"};
    app.set_version_flag("--version", std::string(library_version()));
    app.require_subcommand(1);

    FitArgs fit;
    auto* fit_cmd = app.add_subcommand("fit", "Estimate every equation of a model from CSV data");
    fit_cmd->add_option("model", fit.model, "Model syntax file")->required();
    fit_cmd->add_option("data", fit.data, "CSV file with a header row")->required();
    fit_cmd->add_option("--estimator", fit.estimator, "2sls or 2sbma")
        ->check(CLI::IsMember({"2sls", "2sbma"}))
        ->capture_default_str();
    fit_cmd->add_option("--alpha", fit.alpha, "Significance level for flagged tests")->capture_default_str();
    fit_cmd->add_option("--subset-cap", fit.subset_cap, "Largest number of instrument subsets to enumerate")
        ->capture_default_str();
    fit_cmd->add_option("--subset-sample", fit.subset_sample, "Sample this many subsets when the cap is exceeded");
    fit_cmd->add_option("--seed", fit.seed, "Seed for subset sampling")->capture_default_str();
    fit_cmd->add_option("--vcov-denominator", fit.denominator, "Residual variance denominator: n or n-k")
        ->check(CLI::IsMember({"n", "n-k"}))
        ->capture_default_str();
    fit_cmd->add_flag("--audit-subsets", fit.audit, "Include the per-subset table");
    fit_cmd->add_option("--out", fit.out, "Write the JSON report here");

    std::string explain_model, explain_out;
    auto* explain_cmd = app.add_subcommand("explain-miivs", "List transformed equations and their instruments");
    explain_cmd->add_option("model", explain_model, "Model syntax file")->required();
    explain_cmd->add_option("--out", explain_out, "Write the JSON listing here");

    SimArgs sim;
    auto* sim_cmd = app.add_subcommand("simulate", "Run a Monte Carlo grid");
    sim_cmd->add_option("config", sim.config, "JSON grid config")->required();
    sim_cmd->add_option("--out", sim.out, "Output directory")->capture_default_str();
    sim_cmd->add_option("--reps", sim.reps, "Override the replication count");
    sim_cmd->add_option("--seed", sim.seed, "Override the grid seed")->each([&](const std::string&) {
        sim.seed_set = true;
    });
    sim_cmd->add_option("--threads", sim.threads, "Worker threads (0: all cores)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*fit_cmd) return run_fit(fit);
        if (*explain_cmd) return run_explain(explain_model, explain_out);
        if (*sim_cmd) return run_simulate(sim);
    } catch (const IdentificationError& e) {
        std::cerr << "error[identification] equation=" << e.equation() << ": " << e.what() << '\n';
        return 3;
    } catch (const Error& e) {
        std::cerr << "error[" << to_string(e.code()) << "]: " << e.what() << '\n';
        return exit_code(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error[internal]: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
