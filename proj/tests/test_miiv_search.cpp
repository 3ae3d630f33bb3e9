#include "miivbma/errors.hpp"
#include "miivbma/miiv_search.hpp"
#include "miivbma/simulation.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

using namespace miivbma;

namespace {

using Names = std::vector<std::string>;

const EstimationEquation& equation_for(const std::vector<EstimationEquation>& eqs, const std::string& outcome) {
    const auto it = std::find_if(eqs.begin(), eqs.end(), [&](const auto& e) { return e.outcome == outcome; });
    REQUIRE(it != eqs.end());
    return *it;
}

std::map<std::string, Names> miiv_map(const std::string& text) {
    std::map<std::string, Names> out;
    for (const auto& eq : build_equations(parse_model(text))) out[eq.outcome] = eq.miivs;
    return out;
}

bool contains(const Names& v, const std::string& s) { return std::find(v.begin(), v.end(), s) != v.end(); }

}  // namespace

TEST_CASE("simulation 1 true model: y2 is instrumented by the second factor and y4") {
    const auto eqs = build_equations(parse_model(true_model_syntax(Design::Sim1)));
    CHECK(equation_for(eqs, "y2").miivs == Names{"y4", "y5", "y6", "y7", "y8"});
}

TEST_CASE("simulation 2 true model drops the cross-factor partner") {
    const auto eqs = build_equations(parse_model(true_model_syntax(Design::Sim2)));
    CHECK(equation_for(eqs, "y2").miivs == Names{"y3", "y4", "y6", "y7", "y8"});
}

TEST_CASE("misspecified two-factor model offers every other non-scaling indicator") {
    const auto eqs = build_equations(parse_model(testing::kTwoFactor));
    REQUIRE(eqs.size() == 6);
    CHECK(equation_for(eqs, "y2").miivs == Names{"y3", "y4", "y5", "y6", "y7", "y8"});
    CHECK(equation_for(eqs, "y6").miivs == Names{"y1", "y2", "y3", "y4", "y7", "y8"});
    CHECK(equation_for(eqs, "y2").regressors == Names{"y1"});
    CHECK(equation_for(eqs, "y2").coefficients[0].label == "eta1=~y2");
    CHECK(equation_for(eqs, "y2").overidentification() == 5);
}

TEST_CASE("single factor with three indicators is just-identified") {
    const auto eqs = build_equations(parse_model("f =~ x1 + x2 + x3\n"));
    REQUIRE(eqs.size() == 2);
    CHECK(eqs[0].outcome == "x2");
    CHECK(eqs[0].miivs == Names{"x3"});
    CHECK(eqs[1].miivs == Names{"x2"});
    CHECK(eqs[0].overidentification() == 0);
}

TEST_CASE("composite disturbance of a measurement equation") {
    const auto eqs = transform_to_observed(parse_model("f =~ x1 + x2 + x3\n"));
    REQUIRE(eqs[0].disturbance.size() == 2);
    CHECK(eqs[0].disturbance[0].variable == "x2");
    CHECK(eqs[0].disturbance[0].sign == 1);
    CHECK(eqs[0].disturbance[1].variable == "x1");
    CHECK(eqs[0].disturbance[1].sign == -1);
    CHECK(eqs[0].to_string() == "x2 = [f=~x2]*x1 + u;  u = + e(x2) - [f=~x2]*e(x1)");
}

TEST_CASE("structural equations come first and use scaling indicators") {
    const auto eqs = build_equations(parse_model(testing::kStructural));
    CHECK(eqs[0].outcome == "y4");
    CHECK(eqs[0].regressors == Names{"y1"});
    CHECK(eqs[0].miivs == Names{"y2", "y3"});
    CHECK(eqs[1].outcome == "y7");
    CHECK(eqs[1].regressors == Names{"y1", "y4"});
    CHECK(eqs[1].miivs == Names{"y2", "y3", "y5", "y6"});
}

TEST_CASE("exogenous observed regressors instrument themselves") {
    const auto eqs = build_equations(parse_model(testing::kMimic));
    const auto& s = eqs.front();
    CHECK(s.outcome == "y1");
    CHECK(s.regressors == Names{"x1", "x2"});
    CHECK(s.exogenous_regressors == Names{"x1", "x2"});
    CHECK(s.endogenous_regressors().empty());
    const auto& m = equation_for(eqs, "y2");
    CHECK(m.exogenous_regressors.empty());
    CHECK(m.miivs == Names{"x1", "x2", "y3", "y4"});
}

TEST_CASE("identification failures name the equation") {
    try {
        build_equations(parse_model("f =~ x1 + x2\n"));
        FAIL("expected an identification error");
    } catch (const IdentificationError& e) {
        CHECK(e.equation() == "x2");
        CHECK(e.code() == ErrorCode::Identification);
    }
    CHECK_THROWS_AS(build_equations(parse_model("f =~ x1 + x2 + x3\nx2 ~~ x3\n")), IdentificationError);
}

TEST_CASE("fixed non-unit loadings cannot be estimated equation by equation") {
    try {
        transform_to_observed(parse_model("f =~ x1 + 0.5*x2 + x3\n"));
        FAIL("expected a model error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Model);
    }
    CHECK(transform_to_observed(parse_model("f =~ x1 + 0*x2 + x3 + x4\n")).size() == 2);
}

TEST_CASE("scaling indicators may not cross-load") {
    CHECK_THROWS_AS(transform_to_observed(parse_model("a =~ y1 + y2 + y3\nb =~ y4 + y5 + y1\n")), Error);
}

TEST_CASE("equation JSON lists the disturbance and instruments") {
    auto eqs = build_equations(parse_model(testing::kTwoFactor));
    const auto j = to_json(eqs.front());
    CHECK(j.at("outcome") == "y2");
    CHECK(j.at("miivs").size() == 6);
    CHECK(j.at("disturbance").size() == 2);
    CHECK(j.at("overidentification") == 5);
}

TEST_SUITE("property") {
    TEST_CASE("MIIVs have generically zero covariance with the disturbance; exclusions do not") {
        std::mt19937_64 rng(31);
        std::vector<std::string> texts{testing::kTwoFactor, testing::kStructural, testing::kMimic,
                                       true_model_syntax(Design::Sim1), true_model_syntax(Design::Sim2)};
        for (int i = 0; i < 60; ++i) texts.push_back(testing::random_model_text(rng, false));
        for (const auto& text : texts) {
            const auto m = parse_model(text);
            std::vector<EstimationEquation> eqs;
            try {
                eqs = build_equations(m);
            } catch (const IdentificationError&) {
                continue;
            }
            for (const auto& eq : eqs) {
                std::vector<int> nonzero(m.observed.size(), 0);
                for (std::uint64_t d = 0; d < 20; ++d) {
                    // Fresh draws, independent of the ones used during the search.
                    const auto params = generic_parameters(m, 0xabcdef + d);
                    const auto cu = disturbance_covariances(m, eq, params);
                    for (std::size_t i = 0; i < cu.size(); ++i) {
                        if (contains(eq.miivs, m.observed[i])) CHECK(std::abs(cu[i]) < 1e-10);
                        if (std::abs(cu[i]) >= 1e-10) ++nonzero[i];
                    }
                }
                for (std::size_t i = 0; i < m.observed.size(); ++i) {
                    const auto& v = m.observed[i];
                    if (contains(eq.miivs, v) || v == eq.outcome || contains(eq.regressors, v)) continue;
                    CHECK_MESSAGE(nonzero[i] >= 19, text << " eq " << eq.outcome << " excludes " << v);
                }
            }
        }
    }

    TEST_CASE("adding an outcome error covariance removes that instrument and adds none") {
        const auto base_text = testing::kTwoFactor;
        const auto base = miiv_map(base_text);
        for (const auto& [outcome, miivs] : base)
            for (const auto& v : miivs) {
                const auto altered = miiv_map(base_text + outcome + " ~~ " + v + "\n");
                for (const auto& [o2, m2] : altered) {
                    for (const auto& x : m2) CHECK(contains(base.at(o2), x));
                    if (o2 == outcome) CHECK_FALSE(contains(m2, v));
                }
            }
    }

    TEST_CASE("MIIV sets do not depend on declaration order") {
        std::mt19937_64 rng(41);
        std::vector<std::string> texts{testing::kStructural, testing::kMimic, true_model_syntax(Design::Sim2)};
        for (int i = 0; i < 40; ++i) texts.push_back(testing::random_model_text(rng, false));
        for (const auto& text : texts) {
            std::map<std::string, Names> first;
            try {
                first = miiv_map(text);
            } catch (const IdentificationError&) {
                continue;
            }
            for (std::uint64_t s = 1; s <= 3; ++s) CHECK(miiv_map(testing::shuffled_lines(text, s)) == first);
        }
    }
}
