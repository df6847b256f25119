#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedstage/mim.hpp"
#include "fedstage/model.hpp"
#include "fedstage/stats.hpp"
#include "fedstage/synth.hpp"

namespace fedstage {

struct ClientSpec {
  std::string client_id;
  DomainSpec domain;
  int n_train = 0;
  int n_test = 0;
  int epochs = 1;
  double lr = 0.1;
  int batch_size = 16;
  uint64_t head_seed = 0;
  uint64_t train_seed = 0;
};

struct StageSpec {
  std::vector<ClientSpec> clients;
};

struct PretextSpec {
  std::vector<Motif> motifs{Motif::Checker, Motif::Stripes};
  int count = 32;
  double noise_sd = 0.05;
  uint64_t seed = 0;
};

struct ScenarioConfig {
  ModelArchitecture arch;  // backbone only
  MimConfig pretrain;
  PretextSpec pretext;
  GateConfig gate;
  std::vector<StageSpec> stages;
  uint64_t global_seed = 0;

  void validate() const;
};

// Strict parsers: unknown keys are rejected.
ScenarioConfig scenario_from_json(const nlohmann::json& j);
nlohmann::json scenario_to_json(const ScenarioConfig& config);
ScenarioConfig load_scenario_file(const std::string& path);

ClientSpec client_spec_from_json(const nlohmann::json& j);
nlohmann::json client_spec_to_json(const ClientSpec& c);

struct ReportRow {
  int stage = 0;
  std::string client_id;
  double control_accuracy = 0.0;                    // percent
  std::optional<double> experiment_accuracy;        // absent for stage 1
};

struct RunReport {
  std::vector<ReportRow> rows;
  std::vector<std::pair<int, double>> gain_curve;  // stage -> mean gain
  std::optional<TTestReport> ttest;
  std::optional<GateDecision> gate_decision;
  uint64_t global_seed = 0;
};

// Runs the full pipeline: MIM pre-training, then per stage the control arm
// (fine-tuning from the original pre-trained base) and from stage 2 on the
// experiment arm (fine-tuning from the rolling federated base), aggregation,
// and the trust gate on its schedule.
RunReport run_scenario(const ScenarioConfig& config);

// Per-stage mean of (experiment - control) over the paired rows.
std::vector<std::pair<int, double>> emit_gain_curve(
    const std::vector<ReportRow>& rows);

// The published per-task accuracies the trust-gate statistics are checked
// against, and the resulting report/verdict under default gate settings.
std::pair<TTestReport, GateDecision> replay_paper_stats();
PairedSample paper_accuracy_sample();

nlohmann::json report_to_json(const RunReport& report,
                              const nlohmann::json& config_echo);
nlohmann::json ttest_to_json(const TTestReport& r);
nlohmann::json gate_decision_to_json(const GateDecision& d);

}  // namespace fedstage
