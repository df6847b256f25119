#include <doctest.h>

#include <cmath>
#include <limits>

#include "fedstage/errors.hpp"
#include "fedstage/stats.hpp"
#include "oracles.hpp"

using namespace fedstage;

namespace {

const PairedSample kPublished = {
    {87.66, 96.18, 93.41, 75.15, 95.18, 92.0},
    {88.2, 96.57, 94.23, 80.89, 100.0, 95.0},
};

}  // namespace

TEST_CASE("paired differences on the published accuracies") {
  const auto diffs = paired_differences(kPublished);
  const std::vector<double> expected = {0.54, 0.39, 0.82, 5.74, 4.82, 3.00};
  REQUIRE(diffs.size() == 6);
  for (size_t i = 0; i < 6; ++i) {
    CHECK(diffs[i] == doctest::Approx(expected[i]).epsilon(1e-12));
  }
}

TEST_CASE("sample validation") {
  CHECK_THROWS_AS(PairedSample({1.0}, {2.0}).validate(), FedError);       // n < 2
  CHECK_THROWS_AS(PairedSample({1, 2}, {3}).validate(), FedError);        // lengths
  CHECK_THROWS_AS(PairedSample({1, 101}, {3, 4}).validate(), FedError);   // range
  CHECK_NOTHROW(PairedSample({0, 100}, {50, 50}).validate());
}

TEST_CASE("t statistic closed forms") {
  SUBCASE("diffs {1,2,3}: mean 2, sd 1, t = 2*sqrt(3)") {
    const TStat s = t_statistic({1.0, 2.0, 3.0});
    CHECK(s.mean == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(s.sd == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(s.t == doctest::Approx(2.0 * std::sqrt(3.0)).epsilon(1e-14));
    CHECK(s.degeneracy == Degeneracy::None);
  }

  SUBCASE("t is invariant under positive scaling") {
    const TStat a = t_statistic({0.5, 1.2, -0.3, 2.0});
    const TStat b = t_statistic({0.5 * 7, 1.2 * 7, -0.3 * 7, 2.0 * 7});
    CHECK(a.t == doctest::Approx(b.t).epsilon(1e-13));
  }

  SUBCASE("t is antisymmetric under negation") {
    const TStat a = t_statistic({0.5, 1.2, -0.3, 2.0});
    const TStat b = t_statistic({-0.5, -1.2, 0.3, -2.0});
    CHECK(a.t == doctest::Approx(-b.t).epsilon(1e-13));
  }

  SUBCASE("degenerate samples are flagged") {
    CHECK(t_statistic({0.0, 0.0, 0.0}).degeneracy == Degeneracy::ZeroSignal);
    const TStat c = t_statistic({1.5, 1.5, 1.5});
    CHECK(c.degeneracy == Degeneracy::ConstantSignal);
    CHECK(std::isinf(c.t));
  }
}

TEST_CASE("Cohen's d closed forms") {
  CHECK(cohens_d({1.0, 2.0, 3.0}) == doctest::Approx(2.0).epsilon(1e-14));
  // d uses |mean|, so it is symmetric under negation
  CHECK(cohens_d({-1.0, -2.0, -3.0}) == doctest::Approx(2.0).epsilon(1e-14));
  // and relates to t by t = sign(mean) * d * sqrt(n)
  const std::vector<double> diffs = {0.7, 1.9, -0.4, 2.2, 1.1};
  const TStat s = t_statistic(diffs);
  CHECK(s.t == doctest::Approx(cohens_d(diffs) * std::sqrt(5.0)).epsilon(1e-13));
}

TEST_CASE("Student-t CDF against quadrature oracle") {
  for (int dof : {1, 2, 5, 30}) {
    CHECK(student_t_cdf(0.0, dof) == doctest::Approx(0.5).epsilon(1e-14));
    for (double t : {0.5, 1.0, 2.0, 2.678, 5.0, 10.0}) {
      const double p = p_value_two_tailed(t, dof);
      const double oracle = oracles::student_t_p_two_tailed_quadrature(t, dof);
      CHECK(std::fabs(p - oracle) < 1e-8);
      CHECK(p_value_two_tailed(-t, dof) == p);
    }
  }
}

TEST_CASE("dof=1 CDF matches the arctangent closed form") {
  for (double t : {0.1, 0.7, 1.0, 2.5, 8.0}) {
    const double exact = 1.0 - 2.0 * std::atan(t) / M_PI;
    CHECK(p_value_two_tailed(t, 1) == doctest::Approx(exact).epsilon(1e-10));
  }
}

TEST_CASE("CDF is monotone in t") {
  double prev = 0.0;
  for (double t = -6.0; t <= 6.0; t += 0.25) {
    const double f = student_t_cdf(t, 5);
    CHECK(f > prev);
    prev = f;
  }
}

TEST_CASE("p-value reference point: t=2, dof=5") {
  // Standard table value for the two-tailed p at t = 2 with 5 dof.
  CHECK(p_value_two_tailed(2.0, 5) == doctest::Approx(0.10194).epsilon(1e-4));
}

TEST_CASE("p-value conventions at the edges") {
  CHECK(p_value_two_tailed(0.0, 5) == 1.0);
  CHECK(p_value_two_tailed(std::numeric_limits<double>::infinity(), 5) == 0.0);
  CHECK_THROWS_AS(p_value_two_tailed(std::nan(""), 5), FedError);
}

TEST_CASE("full report on the published accuracies") {
  const TTestReport r = t_test_report(kPublished);
  CHECK(r.n == 6);
  CHECK(r.dof == 5);
  CHECK(r.mean_diff == doctest::Approx(2.551666666666667).epsilon(1e-12));
  CHECK(std::fabs(r.t - 2.68) <= 0.015);
  CHECK(std::fabs(r.cohens_d - 1.09) <= 0.01);
  CHECK(r.p_two_tailed < 0.05);
  CHECK(r.p_two_tailed > 0.01);
  CHECK(std::fabs(r.control_mean - 89.93) <= 0.01);
  CHECK(std::fabs(r.experiment_mean - 92.48) <= 0.01);
  CHECK(std::fabs(r.control_sd - 7.83) <= 0.01);
  CHECK(std::fabs(r.experiment_sd - 6.86) <= 0.01);
}

TEST_CASE("gate verdicts") {
  GateConfig cfg;  // alpha 0.05, d_min 0.8, positive mean required

  SUBCASE("published accuracies pass all three criteria") {
    const GateDecision d = gate(kPublished, cfg);
    CHECK(d.verdict == GateVerdict::RetainCandidate);
    CHECK(d.reasons.size() == 3);
  }

  SUBCASE("negated arms fail on the sign criterion") {
    const GateDecision d = gate({kPublished.experiment, kPublished.control}, cfg);
    CHECK(d.verdict == GateVerdict::RetainBase);
  }

  SUBCASE("negated arms pass when the sign requirement is waived and d is large") {
    GateConfig loose = cfg;
    loose.require_positive_mean = false;
    const GateDecision d = gate({kPublished.experiment, kPublished.control}, loose);
    CHECK(d.verdict == GateVerdict::RetainCandidate);
  }

  SUBCASE("significant but small effect fails d_min") {
    GateConfig strict = cfg;
    strict.d_min = 1.5;
    const GateDecision d = gate(kPublished, strict);
    CHECK(d.verdict == GateVerdict::RetainBase);
  }

  SUBCASE("identical arms retain the base") {
    const GateDecision d = gate({{80, 85, 90, 95}, {80, 85, 90, 95}}, cfg);
    CHECK(d.verdict == GateVerdict::RetainBase);
    CHECK(d.report.degeneracy == Degeneracy::ZeroSignal);
  }

  SUBCASE("constant positive improvement retains the candidate") {
    const GateDecision d = gate({{80, 85, 90}, {82, 87, 92}}, cfg);
    CHECK(d.verdict == GateVerdict::RetainCandidate);
    CHECK(d.report.degeneracy == Degeneracy::ConstantSignal);
    CHECK(d.report.p_two_tailed == 0.0);
  }

  SUBCASE("constant negative change retains the base") {
    const GateDecision d = gate({{82, 87, 92}, {80, 85, 90}}, cfg);
    CHECK(d.verdict == GateVerdict::RetainBase);
  }
}
