#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fedstage/model.hpp"
#include "fedstage/stats.hpp"
#include "fedstage/tensor.hpp"

namespace fedstage {

struct ClientRequest {
  std::string client_id;
  int num_classes = 0;
};

// The only data crossing the privacy boundary: the fine-tuned backbone
// (no head entries) and the training-example count used as the aggregation
// weight.
struct ClientUpdate {
  std::string client_id;
  ParameterSet backbone;
  int64_t num_examples = 0;
};

struct GateInput {
  PairedSample sample;
  GateConfig config;
};

struct StageRecord {
  int stage_index = 0;
  std::vector<std::pair<std::string, int64_t>> updates;  // (client_id, M_i)
  ParameterSet candidate;
  std::optional<GateDecision> gate_verdict;
  bool adopted = false;
};

// Sample-size-weighted elementwise average over updates, accumulated in
// client_id order so the result is independent of submission order.
ParameterSet aggregate(std::span<const ClientUpdate> updates);

uint64_t derive_head_seed(uint64_t base_seed, int stage_index,
                          std::string_view client_id);

// Server side of the stage-wise protocol: serves the current base with a
// fresh head, collects exactly K updates per stage, aggregates at the stage
// boundary, and consults the trust gate on the configured schedule.
class FederatedServer {
 public:
  FederatedServer(ModelArchitecture arch, ParameterSet base,
                  int clients_per_stage, int gate_every_s_stages = 4);

  // Read-only on the base; registers the client for the current stage.
  ParameterSet handle_request(const ClientRequest& req, uint64_t head_seed);

  void submit_update(ClientUpdate update);

  // Requires exactly K pending updates. Aggregates, consults the gate when
  // one is scheduled and provided, and advances to the next stage.
  StageRecord end_stage(const std::optional<GateInput>& gate_input = std::nullopt);

  bool gate_scheduled() const { return stage_index_ % gate_every_ == 0; }
  const ParameterSet& base() const { return base_; }
  const ModelArchitecture& arch() const { return arch_; }
  int stage_index() const { return stage_index_; }
  int clients_per_stage() const { return clients_per_stage_; }
  size_t pending_count() const { return pending_.size(); }
  const std::vector<StageRecord>& history() const { return history_; }

 private:
  ModelArchitecture arch_;
  ParameterSet base_;
  int clients_per_stage_;
  int gate_every_;
  int stage_index_ = 1;
  std::vector<ClientUpdate> pending_;
  std::set<std::string> requested_this_stage_;
  std::map<std::string, int> request_stage_;
  std::vector<StageRecord> history_;
};

// Fine-tunes the served model on local data and returns the privacy-bounded
// update: backbone weights only, plus the example count.
ClientUpdate client_run(const ModelArchitecture& backbone_arch,
                        const ParameterSet& model_with_head,
                        const std::string& client_id,
                        const LabeledDataset& local_data,
                        const SgdOptions& opt);

}  // namespace fedstage
