#include "miivbma/bma.hpp"
#include "miivbma/errors.hpp"
#include "oracle/brute_force_bma.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

using namespace miivbma;

namespace {

struct Toy {
    Eigen::VectorXd y, z;
    Eigen::MatrixXd V;
    std::vector<std::string> names;
};

// One endogenous regressor, instruments of mixed strength; the last is invalid.
Toy toy(Eigen::Index n, int v, std::uint64_t seed) {
    const Eigen::MatrixXd g = testing::gaussian_matrix(n, v + 2, seed);
    Toy t;
    t.V = g.leftCols(v);
    Eigen::VectorXd strength(v);
    for (int j = 0; j < v; ++j) strength(j) = 0.8 / (j + 1);
    const Eigen::VectorXd err = g.col(v);
    t.z = t.V * strength + err;
    t.y = (0.5 + 1.5 * t.z.array()).matrix() + 0.5 * err + g.col(v + 1) + 0.4 * t.V.col(v - 1);
    for (int j = 0; j < v; ++j) t.names.push_back("v" + std::to_string(j + 1));
    return t;
}

BmaEquationResult fit_toy(const Toy& t, const BmaOptions& o = {}) {
    return fit_2sbma(t.y, t.z, {"z"}, {}, t.V, t.names, o);
}

}  // namespace

TEST_CASE("subset counts and enumeration order") {
    CHECK(subset_count(6, 1) == 57);
    CHECK(subset_count(3, 1) == 4);
    CHECK(subset_count(3, 2) == 1);
    CHECK(subset_count(2, 2) == 0);
    CHECK(subset_count(80, 1) == std::numeric_limits<std::uint64_t>::max());

    const auto s = enumerate_subsets({"c", "a", "b"}, 1, 100);
    REQUIRE(s.size() == 4);
    CHECK(s[0] == Subset{"a", "b"});
    CHECK(s[1] == Subset{"a", "c"});
    CHECK(s[2] == Subset{"b", "c"});
    CHECK(s[3] == Subset{"a", "b", "c"});
}

TEST_CASE("enumeration refuses to exceed the cap or go below z + 1") {
    try {
        enumerate_subsets({"a", "b", "c", "d"}, 1, 10);
        FAIL("expected a config error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Config);
    }
    CHECK_THROWS_AS(enumerate_subsets({"a"}, 1, 10), Error);
}

TEST_CASE("sampled subsets are distinct, valid and reproducible") {
    std::vector<std::string> names;
    for (int i = 0; i < 20; ++i) names.push_back("v" + std::to_string(i));
    const auto a = sample_subsets(names, 1, 500, 42);
    const auto b = sample_subsets(names, 1, 500, 42);
    CHECK(a == b);
    CHECK(a.size() == 500);
    CHECK(std::set<Subset>(a.begin(), a.end()).size() == 500);
    for (const auto& s : a) {
        CHECK(s.size() >= 2);
        CHECK(std::is_sorted(s.begin(), s.end()));
    }
    CHECK(sample_subsets(names, 1, 500, 43) != a);
}

TEST_CASE("empirical-Bayes g") {
    CHECK(empirical_bayes_g(0.5, 2, 100) == doctest::Approx(47.5).epsilon(1e-14));
    CHECK(empirical_bayes_g(0.005, 1, 100) == 0.0);
    CHECK(empirical_bayes_g(1.0, 3, 50) == std::numeric_limits<double>::infinity());
}

TEST_CASE("log Bayes factor values") {
    CHECK(log_bayes_factor(97.0, 0.5, 1, 100) == doctest::Approx(31.51575931091311549872645).epsilon(1e-14));
    CHECK(log_bayes_factor(std::numeric_limits<double>::infinity(), 1.0, 2, 50) == kLogBayesFactorCap);
    CHECK(log_bayes_factor(1e300, 0.999999, 2, 100000) == kLogBayesFactorCap);
}

TEST_CASE("model probabilities survive huge and infinite log weights") {
    const std::vector<double> lbf{700.0, 699.0, -std::numeric_limits<double>::infinity()};
    const auto pi = model_probabilities(lbf);
    CHECK(pi[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
    CHECK(pi[2] == 0.0);
    const std::vector<double> all_neg{-std::numeric_limits<double>::infinity()};
    CHECK_THROWS(model_probabilities(all_neg));
}

TEST_CASE("suspect ranking breaks ties by name and reports them") {
    const auto r = rank_suspects({{"y3", 0.2}, {"y1", 0.01}, {"y2", 0.2}});
    CHECK(r.order == std::vector<std::string>{"y1", "y2", "y3"});
    CHECK(r.tied);
    CHECK_FALSE(rank_suspects({{"a", 0.3}, {"b", 0.1}}).tied);
}

TEST_CASE("a single admissible subset reduces to 2SLS") {
    const auto t = toy(60, 2, 1);
    const auto b = fit_toy(t);
    const auto iv = two_sls(t.y, t.z, t.V);
    REQUIRE(b.subset_fits.size() == 1);
    CHECK(b.subset_fits[0].pi == 1.0);
    CHECK(b.theta(1) == doctest::Approx(iv.theta(1)).epsilon(1e-14));
    CHECK(b.var(1) == doctest::Approx(iv.se(1) * iv.se(1)).epsilon(1e-14));
    CHECK(b.bma_sargan_p == doctest::Approx(iv.sargan->p_value).epsilon(1e-14));
    for (const auto& d : b.instruments) {
        CHECK(d.is_sargan_p == doctest::Approx(b.bma_sargan_p).epsilon(1e-14));
        CHECK(d.inclusion_prob == doctest::Approx(1.0));
    }
}

TEST_CASE("collinear subsets are dropped with a warning") {
    auto t = toy(60, 3, 2);
    t.V.col(2) = t.V.col(0);
    const auto b = fit_toy(t);
    CHECK(b.dropped_subsets == 2);
    CHECK(b.subset_fits.size() == 2);
    CHECK(b.warnings.size() == 2);
}

TEST_CASE("subset cap and opt-in sampling") {
    const auto t = toy(200, 8, 3);
    BmaOptions o;
    o.subset_cap = 100;
    CHECK_THROWS_AS(fit_toy(t, o), Error);
    o.subset_sample = 60;
    o.seed = 9;
    const auto b = fit_toy(t, o);
    CHECK(b.subset_fits.size() == 60);
    CHECK(fit_toy(t, o).theta == b.theta);
}

TEST_CASE("instrument diagnostics and the weak flag") {
    const auto t = toy(300, 5, 4);
    const auto b = fit_toy(t);
    CHECK(b.instruments.size() == 5);
    CHECK(b.instrument("v1").inclusion_prob > 0.9);
    CHECK_FALSE(b.instrument("v1").weak);
    CHECK(b.suspects.order.front() == "v5");
    CHECK_THROWS_AS(b.instrument("nope"), Error);
    const auto j = to_json(b, true);
    CHECK(j.at("subsets").size() == subset_count(5, 1));
    CHECK_FALSE(to_json(b, false).contains("subsets"));
}

TEST_CASE("exogenous regressors join every first stage") {
    const Eigen::MatrixXd g = testing::gaussian_matrix(200, 6, 12);
    Eigen::MatrixXd Z(200, 2);
    Z.col(0) = g.col(0) + g.col(1) + g.col(4);
    Z.col(1) = g.col(5);
    const Eigen::VectorXd y = Z.col(0) - Z.col(1) + g.col(4) + g.col(3);
    const auto b = fit_2sbma(y, Z, {"z", "x"}, {"x"}, g.leftCols(3), {"a", "b", "c"});
    CHECK(b.theta.size() == 3);
    CHECK(b.subset_fits.front().r2.size() == 1);
    CHECK(std::abs(b.theta(2) + 1.0) < 0.2);
}

TEST_SUITE("property") {
    TEST_CASE("model probabilities, inclusion, convex hull and spread") {
        for (std::uint64_t s = 0; s < 30; ++s) {
            const auto t = toy(40 + 10 * static_cast<Eigen::Index>(s % 5), 3 + static_cast<int>(s % 4), 500 + s);
            const auto b = fit_toy(t);
            double total = 0.0;
            for (const auto& f : b.subset_fits) total += f.pi;
            CHECK(std::abs(total - 1.0) <= 1e-12);

            for (const auto& d : b.instruments) {
                double mass = 0.0;
                for (const auto& f : b.subset_fits)
                    if (f.contains(d.name)) mass += f.pi;
                CHECK(d.inclusion_prob == mass);
            }

            for (Eigen::Index k = 0; k < b.theta.size(); ++k) {
                double lo = std::numeric_limits<double>::infinity(), hi = -lo, within = 0.0;
                for (const auto& f : b.subset_fits) {
                    lo = std::min(lo, f.theta(k));
                    hi = std::max(hi, f.theta(k));
                    within += f.pi * f.var_theta(k);
                }
                CHECK(b.theta(k) >= lo - 1e-12 * std::abs(lo));
                CHECK(b.theta(k) <= hi + 1e-12 * std::abs(hi));
                CHECK(b.var(k) >= within);
            }
        }
    }

    TEST_CASE("Bayes factor is one at g = 0") {
        for (double r2 : {0.0, 0.1, 0.5, 0.99})
            for (int p : {1, 3, 7}) CHECK(log_bayes_factor(0.0, r2, p, 120) == 0.0);
    }

    TEST_CASE("log Bayes factor increases strictly in R^2") {
        for (Eigen::Index n : {30, 100, 500, 5000})
            for (int p : {1, 2, 5})
                for (double g : {0.5, 3.0, 40.0, 1e4}) {
                    double prev = -std::numeric_limits<double>::infinity();
                    for (int i = 0; i <= 100; ++i) {
                        const double cur = log_bayes_factor(g, i / 100.0, p, n);
                        if (cur >= kLogBayesFactorCap) break;
                        CHECK(cur > prev);
                        prev = cur;
                    }
                }
    }

    TEST_CASE("2SBMA matches the brute-force reference on a three-instrument toy problem") {
        for (std::uint64_t s : {77u, 78u, 79u}) {
            const auto t = toy(50, 3, s);
            const auto b = fit_toy(t);
            oracle::Vec y(t.y.data(), t.y.data() + 50), z(t.z.data(), t.z.data() + 50);
            std::vector<oracle::Vec> V;
            for (int j = 0; j < 3; ++j) V.emplace_back(t.V.col(j).data(), t.V.col(j).data() + 50);
            const auto ref = oracle::brute_force(y, z, V, t.names);
            constexpr double tol = 1e-10;

            CHECK(std::abs(b.theta(0) - static_cast<double>(ref.theta0)) < tol);
            CHECK(std::abs(b.theta(1) - static_cast<double>(ref.theta1)) < tol);
            CHECK(std::abs(b.var(0) - static_cast<double>(ref.var0)) < tol);
            CHECK(std::abs(b.var(1) - static_cast<double>(ref.var1)) < tol);
            CHECK(std::abs(b.bma_sargan_p - static_cast<double>(ref.bma_sargan_p)) < tol);
            REQUIRE(b.subset_fits.size() == ref.subsets.size());
            for (const auto& f : b.subset_fits) {
                const auto it = std::find_if(ref.subsets.begin(), ref.subsets.end(),
                                             [&](const auto& r) { return r.subset == f.subset; });
                REQUIRE(it != ref.subsets.end());
                CHECK(std::abs(f.pi - static_cast<double>(it->pi)) < tol);
                CHECK(std::abs(f.sargan_p - static_cast<double>(it->sargan_p)) < tol);
                CHECK(std::abs(f.theta(1) - static_cast<double>(it->theta1)) < tol);
            }
            for (const auto& d : b.instruments) {
                CHECK(std::abs(d.is_sargan_p - static_cast<double>(ref.is_sargan_p.at(d.name))) < tol);
                CHECK(std::abs(d.inclusion_prob - static_cast<double>(ref.inclusion.at(d.name))) < tol);
            }
        }
    }
}
