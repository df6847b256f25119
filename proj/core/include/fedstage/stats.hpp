#pragma once

#include <string>
#include <vector>

namespace fedstage {

// Paired per-task accuracies, in percent.
struct PairedSample {
  std::vector<double> control;
  std::vector<double> experiment;

  void validate() const;  // equal lengths n >= 2, values in [0, 100]
};

enum class Degeneracy {
  None,
  ZeroSignal,      // all differences zero
  ConstantSignal,  // nonzero constant differences (t conceptually infinite)
};

struct TStat {
  double t = 0.0;
  double mean = 0.0;
  double sd = 0.0;
  int n = 0;
  Degeneracy degeneracy = Degeneracy::None;
};

struct TTestReport {
  int n = 0;
  double mean_diff = 0.0;
  double sd_diff = 0.0;
  double t = 0.0;
  int dof = 0;
  double p_two_tailed = 1.0;
  double cohens_d = 0.0;
  double control_mean = 0.0;
  double control_sd = 0.0;
  double experiment_mean = 0.0;
  double experiment_sd = 0.0;
  Degeneracy degeneracy = Degeneracy::None;
};

struct GateConfig {
  double alpha = 0.05;
  double d_min = 0.8;
  bool require_positive_mean = true;
  int gate_every_s_stages = 4;
};

enum class GateVerdict { RetainCandidate, RetainBase };

struct GateDecision {
  GateVerdict verdict = GateVerdict::RetainBase;
  TTestReport report;
  std::vector<std::string> reasons;
};

std::vector<double> paired_differences(const PairedSample& sample);

// Sample mean, sample SD (n-1 denominator), and t = mean / (sd / sqrt(n)).
TStat t_statistic(const std::vector<double>& diffs);

// Regularized incomplete beta function I_x(a, b), continued-fraction
// evaluation; absolute accuracy well below 1e-8 for the arguments used here.
double regularized_incomplete_beta(double a, double b, double x);

// Student-t CDF at t with `dof` degrees of freedom.
double student_t_cdf(double t, int dof);

// p = 2 * (1 - F_dof(|t|)); infinite t maps to p = 0 by convention.
double p_value_two_tailed(double t, int dof);

double cohens_d(const std::vector<double>& diffs);

struct ArmSummary {
  double control_mean, control_sd, experiment_mean, experiment_sd;
};

ArmSummary arm_summary(const PairedSample& sample);

TTestReport t_test_report(const PairedSample& sample);

// Retain the candidate only when the improvement is significant (p < alpha),
// non-trivial (d >= d_min) and positive when required.
GateDecision gate(const PairedSample& sample, const GateConfig& config);

}  // namespace fedstage
