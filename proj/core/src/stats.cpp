#include "fedstage/stats.hpp"

#include <cmath>
#include <limits>

#include "fedstage/errors.hpp"

namespace fedstage {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double sample_mean(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double sample_sd(const std::vector<double>& xs, double mean) {
  double s = 0.0;
  for (double x : xs) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

// Continued fraction for the incomplete beta function (Lentz's method).
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16;
  constexpr double kFpMin = 1e-300;

  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  fail(ErrorCode::Arithmetic, "incomplete beta continued fraction did not converge");
}

}  // namespace

void PairedSample::validate() const {
  if (control.size() != experiment.size()) {
    fail(ErrorCode::PairedLength, "control/experiment arms differ in length");
  }
  if (control.size() < 2) {
    fail(ErrorCode::InvalidRequest, "paired sample needs n >= 2");
  }
  for (const auto* arm : {&control, &experiment}) {
    for (double v : *arm) {
      if (!(v >= 0.0 && v <= 100.0)) {
        fail(ErrorCode::InvalidRequest, "accuracies must lie in [0, 100] percent");
      }
    }
  }
}

std::vector<double> paired_differences(const PairedSample& sample) {
  if (sample.control.size() != sample.experiment.size()) {
    fail(ErrorCode::PairedLength, "control/experiment arms differ in length");
  }
  std::vector<double> diffs(sample.control.size());
  for (size_t i = 0; i < diffs.size(); ++i) {
    diffs[i] = sample.experiment[i] - sample.control[i];
  }
  return diffs;
}

TStat t_statistic(const std::vector<double>& diffs) {
  if (diffs.size() < 2) fail(ErrorCode::InvalidRequest, "t-test needs n >= 2");
  TStat s;
  s.n = static_cast<int>(diffs.size());
  s.mean = sample_mean(diffs);
  s.sd = sample_sd(diffs, s.mean);
  if (s.sd == 0.0) {
    s.degeneracy = (s.mean == 0.0) ? Degeneracy::ZeroSignal : Degeneracy::ConstantSignal;
    s.t = (s.mean == 0.0) ? 0.0 : (s.mean > 0.0 ? kInf : -kInf);
    return s;
  }
  s.t = s.mean / (s.sd / std::sqrt(static_cast<double>(s.n)));
  return s;
}

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) fail(ErrorCode::InvalidRequest, "beta parameters must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                       a * std::log(x) + b * std::log1p(-x);
  const double bt = std::exp(ln_bt);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return bt * betacf(a, b, x) / a;
  }
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, int dof) {
  if (dof < 1) fail(ErrorCode::InvalidRequest, "dof must be >= 1");
  if (t == 0.0) return 0.5;
  if (std::isinf(t)) return t > 0.0 ? 1.0 : 0.0;
  const double nu = static_cast<double>(dof);
  const double x = nu / (nu + t * t);
  const double tail = regularized_incomplete_beta(nu / 2.0, 0.5, x);  // = 2-sided p
  return t > 0.0 ? 1.0 - tail / 2.0 : tail / 2.0;
}

double p_value_two_tailed(double t, int dof) {
  if (dof < 1) fail(ErrorCode::InvalidRequest, "dof must be >= 1");
  if (std::isnan(t)) fail(ErrorCode::DegenerateSample, "t statistic is NaN");
  if (std::isinf(t)) return 0.0;
  const double nu = static_cast<double>(dof);
  const double x = nu / (nu + t * t);
  return regularized_incomplete_beta(nu / 2.0, 0.5, x);
}

double cohens_d(const std::vector<double>& diffs) {
  const TStat s = t_statistic(diffs);
  if (s.sd == 0.0) {
    return s.mean == 0.0 ? 0.0 : kInf;
  }
  return std::fabs(s.mean) / s.sd;
}

ArmSummary arm_summary(const PairedSample& sample) {
  sample.validate();
  ArmSummary a{};
  a.control_mean = sample_mean(sample.control);
  a.control_sd = sample_sd(sample.control, a.control_mean);
  a.experiment_mean = sample_mean(sample.experiment);
  a.experiment_sd = sample_sd(sample.experiment, a.experiment_mean);
  return a;
}

TTestReport t_test_report(const PairedSample& sample) {
  sample.validate();
  const std::vector<double> diffs = paired_differences(sample);
  const TStat s = t_statistic(diffs);
  const ArmSummary arms = arm_summary(sample);

  TTestReport r;
  r.n = s.n;
  r.dof = s.n - 1;
  r.mean_diff = s.mean;
  r.sd_diff = s.sd;
  r.t = s.t;
  r.degeneracy = s.degeneracy;
  r.p_two_tailed = std::isinf(s.t) ? 0.0 : p_value_two_tailed(s.t, r.dof);
  r.cohens_d = cohens_d(diffs);
  r.control_mean = arms.control_mean;
  r.control_sd = arms.control_sd;
  r.experiment_mean = arms.experiment_mean;
  r.experiment_sd = arms.experiment_sd;
  return r;
}

GateDecision gate(const PairedSample& sample, const GateConfig& config) {
  GateDecision decision;
  decision.report = t_test_report(sample);
  const TTestReport& r = decision.report;
  auto note = [&](const std::string& s) { decision.reasons.push_back(s); };

  if (r.degeneracy == Degeneracy::ZeroSignal) {
    decision.verdict = GateVerdict::RetainBase;
    note("all paired differences are zero: no improvement");
    return decision;
  }
  if (r.degeneracy == Degeneracy::ConstantSignal) {
    if (r.mean_diff > 0.0) {
      decision.verdict = GateVerdict::RetainCandidate;
      note("constant positive differences (s_d = 0): treated as improvement");
    } else {
      decision.verdict = GateVerdict::RetainBase;
      note("constant non-positive differences (s_d = 0): no improvement");
    }
    return decision;
  }

  bool ok = true;
  auto criterion = [&](bool pass, const std::string& text) {
    note(text + (pass ? ": pass" : ": fail"));
    ok = ok && pass;
  };
  criterion(r.p_two_tailed < config.alpha,
            "p=" + std::to_string(r.p_two_tailed) + " < alpha=" + std::to_string(config.alpha));
  criterion(r.cohens_d >= config.d_min,
            "d=" + std::to_string(r.cohens_d) + " >= d_min=" + std::to_string(config.d_min));
  if (config.require_positive_mean) {
    criterion(r.mean_diff > 0.0,
              "mean_diff=" + std::to_string(r.mean_diff) + " > 0");
  }
  decision.verdict = ok ? GateVerdict::RetainCandidate : GateVerdict::RetainBase;
  return decision;
}

}  // namespace fedstage
