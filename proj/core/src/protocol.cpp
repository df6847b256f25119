#include "fedstage/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fedstage/errors.hpp"
#include "fedstage/rng.hpp"

namespace fedstage {

ParameterSet aggregate(std::span<const ClientUpdate> updates) {
  if (updates.empty()) fail(ErrorCode::EmptyStage, "no updates to aggregate");
  const TensorLayout& layout = updates.front().backbone.layout;
  for (const auto& u : updates) {
    u.backbone.check();
    if (u.backbone.layout != layout) {
      fail(ErrorCode::IncompatibleUpdate, "update layouts differ");
    }
    if (u.num_examples < 1) {
      fail(ErrorCode::InvalidRequest, "update weight M_i must be >= 1");
    }
  }

  std::vector<size_t> order(updates.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return updates[a].client_id < updates[b].client_id;
  });

  int64_t total_weight = 0;
  for (const auto& u : updates) {
    if (total_weight > std::numeric_limits<int64_t>::max() - u.num_examples) {
      fail(ErrorCode::Arithmetic, "sum of example counts overflows");
    }
    total_weight += u.num_examples;
  }

  const size_t dim = layout.total();
  std::vector<double> sum(dim, 0.0);
  std::vector<double> lo(dim, std::numeric_limits<double>::infinity());
  std::vector<double> hi(dim, -std::numeric_limits<double>::infinity());
  for (size_t idx : order) {
    const auto& u = updates[idx];
    const double w = static_cast<double>(u.num_examples);
    for (size_t j = 0; j < dim; ++j) {
      const double x = u.backbone.values[j];
      sum[j] += x * w;
      lo[j] = std::min(lo[j], x);
      hi[j] = std::max(hi[j], x);
    }
  }

  ParameterSet out{layout, std::vector<double>(dim)};
  const double inv = 1.0 / static_cast<double>(total_weight);
  for (size_t j = 0; j < dim; ++j) {
    // Rounding can push the quotient just outside the convex hull of the
    // inputs; clamp back onto it.
    out.values[j] = std::clamp(sum[j] * inv, lo[j], hi[j]);
  }
  out.check();
  return out;
}

uint64_t derive_head_seed(uint64_t base_seed, int stage_index,
                          std::string_view client_id) {
  return mix_seeds(mix_seeds(base_seed, static_cast<uint64_t>(stage_index)),
                   hash_string(client_id));
}

FederatedServer::FederatedServer(ModelArchitecture arch, ParameterSet base,
                                 int clients_per_stage, int gate_every_s_stages)
    : arch_(arch.backbone_only()),
      base_(std::move(base)),
      clients_per_stage_(clients_per_stage),
      gate_every_(gate_every_s_stages) {
  if (clients_per_stage_ < 1) {
    fail(ErrorCode::InvalidRequest, "clients_per_stage must be >= 1");
  }
  if (gate_every_ < 1) {
    fail(ErrorCode::InvalidRequest, "gate schedule must be >= 1");
  }
  base_.check();
  if (base_.layout != layout_for(arch_)) {
    fail(ErrorCode::ShapeMismatch, "base parameters do not match architecture");
  }
}

ParameterSet FederatedServer::handle_request(const ClientRequest& req,
                                             uint64_t head_seed) {
  if (req.client_id.empty()) fail(ErrorCode::InvalidRequest, "empty client_id");
  if (req.num_classes < 2) {
    fail(ErrorCode::InvalidRequest, "num_classes must be >= 2");
  }
  if (requested_this_stage_.contains(req.client_id)) {
    fail(ErrorCode::DuplicateClient,
         "client '" + req.client_id + "' already requested in this stage");
  }
  requested_this_stage_.insert(req.client_id);
  request_stage_[req.client_id] = stage_index_;
  return attach_head(arch_, base_, req.num_classes, head_seed);
}

void FederatedServer::submit_update(ClientUpdate update) {
  if (update.backbone.layout != base_.layout) {
    fail(ErrorCode::IncompatibleUpdate,
         "update from '" + update.client_id + "' has an incompatible layout");
  }
  if (update.num_examples < 1) {
    fail(ErrorCode::InvalidRequest, "num_examples must be >= 1");
  }
  if (static_cast<int>(pending_.size()) >= clients_per_stage_) {
    fail(ErrorCode::StageOverflow, "stage already has K updates");
  }
  const auto it = request_stage_.find(update.client_id);
  if (it != request_stage_.end() && it->second != stage_index_) {
    fail(ErrorCode::StaleStage,
         "client '" + update.client_id + "' requested in stage " +
             std::to_string(it->second) + ", current stage is " +
             std::to_string(stage_index_));
  }
  for (const auto& p : pending_) {
    if (p.client_id == update.client_id) {
      fail(ErrorCode::DuplicateClient,
           "client '" + update.client_id + "' already submitted this stage");
    }
  }
  pending_.push_back(std::move(update));
}

StageRecord FederatedServer::end_stage(const std::optional<GateInput>& gate_input) {
  if (static_cast<int>(pending_.size()) != clients_per_stage_) {
    fail(ErrorCode::StageIncomplete,
         "stage has " + std::to_string(pending_.size()) + " of " +
             std::to_string(clients_per_stage_) + " updates");
  }

  StageRecord record;
  record.stage_index = stage_index_;
  for (const auto& u : pending_) {
    record.updates.emplace_back(u.client_id, u.num_examples);
  }
  record.candidate = aggregate(pending_);

  if (gate_scheduled() && gate_input.has_value()) {
    record.gate_verdict = gate(gate_input->sample, gate_input->config);
    record.adopted = record.gate_verdict->verdict == GateVerdict::RetainCandidate;
  } else {
    record.adopted = true;  // default rolling update
  }
  if (record.adopted) base_ = record.candidate;

  pending_.clear();
  requested_this_stage_.clear();
  ++stage_index_;
  history_.push_back(record);
  return record;
}

ClientUpdate client_run(const ModelArchitecture& backbone_arch,
                        const ParameterSet& model_with_head,
                        const std::string& client_id,
                        const LabeledDataset& local_data,
                        const SgdOptions& opt) {
  const ModelArchitecture headed =
      backbone_arch.backbone_only().with_head(local_data.num_classes);
  TrainResult trained = train_sgd(headed, model_with_head, local_data, opt);
  ClientUpdate update;
  update.client_id = client_id;
  update.backbone = strip_head(backbone_arch, trained.params);
  update.num_examples = static_cast<int64_t>(local_data.size());
  return update;
}

}  // namespace fedstage
