#include "fedstage/scenario.hpp"

#include <fstream>
#include <set>

#include "fedstage/errors.hpp"
#include "fedstage/protocol.hpp"
#include "fedstage/rng.hpp"

namespace fedstage {

using nlohmann::json;

namespace {

void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const char* context) {
  if (!obj.is_object()) {
    fail(ErrorCode::Config, std::string(context) + " must be a JSON object");
  }
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) {
      if (key == a) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      fail(ErrorCode::Config,
           std::string("unknown key '") + key + "' in " + context);
    }
  }
}

template <typename T>
T get_required(const json& obj, const char* key, const char* context) {
  if (!obj.contains(key)) {
    fail(ErrorCode::Config,
         std::string("missing key '") + key + "' in " + context);
  }
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorCode::Config,
         std::string("bad value for '") + key + "' in " + context + ": " + e.what());
  }
}

template <typename T>
T get_or(const json& obj, const char* key, const char* context, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorCode::Config,
         std::string("bad value for '") + key + "' in " + context + ": " + e.what());
  }
}

DomainSpec domain_from_json(const json& j) {
  check_keys(j,
             {"domain_id", "num_classes", "image_side", "motif",
              "class_separation", "noise_sd", "intensity_shift",
              "rotation_steps", "seed"},
             "domain");
  DomainSpec d;
  d.domain_id = get_required<std::string>(j, "domain_id", "domain");
  d.num_classes = get_required<int>(j, "num_classes", "domain");
  d.image_side = get_required<int>(j, "image_side", "domain");
  d.motif = motif_from_string(get_required<std::string>(j, "motif", "domain"));
  d.class_separation = get_required<double>(j, "class_separation", "domain");
  d.noise_sd = get_required<double>(j, "noise_sd", "domain");
  d.intensity_shift = get_or<double>(j, "intensity_shift", "domain", 0.0);
  d.rotation_steps = get_or<int>(j, "rotation_steps", "domain", 0);
  d.seed = get_required<uint64_t>(j, "seed", "domain");
  d.validate();
  return d;
}

json domain_to_json(const DomainSpec& d) {
  return json{{"domain_id", d.domain_id},
              {"num_classes", d.num_classes},
              {"image_side", d.image_side},
              {"motif", motif_to_string(d.motif)},
              {"class_separation", d.class_separation},
              {"noise_sd", d.noise_sd},
              {"intensity_shift", d.intensity_shift},
              {"rotation_steps", d.rotation_steps},
              {"seed", d.seed}};
}

}  // namespace

ClientSpec client_spec_from_json(const json& j) {
  check_keys(j,
             {"client_id", "domain", "n_train", "n_test", "epochs", "lr",
              "batch_size", "head_seed", "train_seed"},
             "client");
  ClientSpec c;
  c.client_id = get_required<std::string>(j, "client_id", "client");
  c.domain = domain_from_json(j.at("domain"));
  c.n_train = get_required<int>(j, "n_train", "client");
  c.n_test = get_required<int>(j, "n_test", "client");
  c.epochs = get_required<int>(j, "epochs", "client");
  c.lr = get_required<double>(j, "lr", "client");
  c.batch_size = get_or<int>(j, "batch_size", "client", 16);
  c.head_seed = get_required<uint64_t>(j, "head_seed", "client");
  c.train_seed = get_required<uint64_t>(j, "train_seed", "client");
  return c;
}

json client_spec_to_json(const ClientSpec& c) {
  return json{{"client_id", c.client_id}, {"domain", domain_to_json(c.domain)},
              {"n_train", c.n_train},     {"n_test", c.n_test},
              {"epochs", c.epochs},       {"lr", c.lr},
              {"batch_size", c.batch_size},
              {"head_seed", c.head_seed}, {"train_seed", c.train_seed}};
}

void ScenarioConfig::validate() const {
  arch.backbone_only().validate();
  if (stages.empty()) fail(ErrorCode::Config, "scenario needs >= 1 stage");
  const size_t k = stages.front().clients.size();
  if (k == 0) fail(ErrorCode::Config, "stages need >= 1 client");
  std::set<std::string> ids;
  for (const auto& stage : stages) {
    if (stage.clients.size() != k) {
      fail(ErrorCode::Config, "all stages must have the same client count");
    }
    for (const auto& c : stage.clients) {
      if (!ids.insert(c.client_id).second) {
        fail(ErrorCode::Config, "duplicate client_id '" + c.client_id + "'");
      }
      if (c.epochs < 1) fail(ErrorCode::Config, "client epochs must be >= 1");
      if (c.domain.image_side != arch.image_side) {
        fail(ErrorCode::Config, "client image_side does not match architecture");
      }
    }
  }
  if (!(gate.alpha > 0.0 && gate.alpha < 1.0)) {
    fail(ErrorCode::Config, "gate alpha must be in (0,1)");
  }
  if (gate.d_min < 0.0) fail(ErrorCode::Config, "gate d_min must be >= 0");
  if (gate.gate_every_s_stages < 1) {
    fail(ErrorCode::Config, "gate_every_s_stages must be >= 1");
  }
  if (!(pretrain.visible_fraction > 0.0) || pretrain.visible_fraction > 1.0) {
    fail(ErrorCode::Config, "visible_fraction must be in (0,1]");
  }
}

ScenarioConfig scenario_from_json(const json& j) {
  check_keys(j,
             {"schema_version", "global_seed", "arch", "pretrain", "gate",
              "stages"},
             "scenario");
  const int schema = get_or<int>(j, "schema_version", "scenario", 1);
  if (schema != 1) fail(ErrorCode::Config, "unsupported schema_version");

  ScenarioConfig cfg;
  cfg.global_seed = get_or<uint64_t>(j, "global_seed", "scenario", 0);

  const json& arch = j.at("arch");
  check_keys(arch, {"patch_size", "image_side", "embed_dim", "encoder_hidden"},
             "arch");
  cfg.arch.kind = ModelArchitecture::Kind::BackboneOnly;
  cfg.arch.patch_size = get_required<int>(arch, "patch_size", "arch");
  cfg.arch.image_side = get_required<int>(arch, "image_side", "arch");
  cfg.arch.embed_dim = get_required<int>(arch, "embed_dim", "arch");
  cfg.arch.encoder_hidden = get_required<int>(arch, "encoder_hidden", "arch");

  const json& pre = j.at("pretrain");
  check_keys(pre,
             {"visible_fraction", "epochs", "lr", "batch_size", "seed",
              "decoder_hidden", "images"},
             "pretrain");
  cfg.pretrain.visible_fraction = get_or<double>(pre, "visible_fraction", "pretrain", 0.25);
  cfg.pretrain.epochs = get_required<int>(pre, "epochs", "pretrain");
  cfg.pretrain.lr = get_required<double>(pre, "lr", "pretrain");
  cfg.pretrain.batch_size = get_or<int>(pre, "batch_size", "pretrain", 8);
  cfg.pretrain.seed = get_required<uint64_t>(pre, "seed", "pretrain");
  cfg.pretrain.decoder_hidden = get_or<int>(pre, "decoder_hidden", "pretrain", 16);

  const json& images = pre.at("images");
  check_keys(images, {"motifs", "count", "noise_sd", "seed"}, "pretrain.images");
  cfg.pretext.motifs.clear();
  for (const auto& m : get_required<std::vector<std::string>>(images, "motifs", "pretrain.images")) {
    cfg.pretext.motifs.push_back(motif_from_string(m));
  }
  cfg.pretext.count = get_required<int>(images, "count", "pretrain.images");
  cfg.pretext.noise_sd = get_or<double>(images, "noise_sd", "pretrain.images", 0.05);
  cfg.pretext.seed = get_required<uint64_t>(images, "seed", "pretrain.images");

  if (j.contains("gate")) {
    const json& gate = j.at("gate");
    check_keys(gate,
               {"alpha", "d_min", "require_positive_mean", "gate_every_s_stages"},
               "gate");
    cfg.gate.alpha = get_or<double>(gate, "alpha", "gate", 0.05);
    cfg.gate.d_min = get_or<double>(gate, "d_min", "gate", 0.8);
    cfg.gate.require_positive_mean =
        get_or<bool>(gate, "require_positive_mean", "gate", true);
    cfg.gate.gate_every_s_stages =
        get_or<int>(gate, "gate_every_s_stages", "gate", 4);
  }

  if (!j.contains("stages") || !j.at("stages").is_array()) {
    fail(ErrorCode::Config, "scenario needs a 'stages' array");
  }
  for (const auto& stage : j.at("stages")) {
    check_keys(stage, {"clients"}, "stage");
    StageSpec ss;
    if (!stage.contains("clients") || !stage.at("clients").is_array()) {
      fail(ErrorCode::Config, "stage needs a 'clients' array");
    }
    for (const auto& client : stage.at("clients")) {
      ss.clients.push_back(client_spec_from_json(client));
    }
    cfg.stages.push_back(std::move(ss));
  }

  cfg.validate();
  return cfg;
}

json scenario_to_json(const ScenarioConfig& cfg) {
  json stages = json::array();
  for (const auto& stage : cfg.stages) {
    json clients = json::array();
    for (const auto& c : stage.clients) clients.push_back(client_spec_to_json(c));
    stages.push_back(json{{"clients", std::move(clients)}});
  }
  json motifs = json::array();
  for (Motif m : cfg.pretext.motifs) motifs.push_back(motif_to_string(m));
  return json{
      {"schema_version", 1},
      {"global_seed", cfg.global_seed},
      {"arch",
       {{"patch_size", cfg.arch.patch_size},
        {"image_side", cfg.arch.image_side},
        {"embed_dim", cfg.arch.embed_dim},
        {"encoder_hidden", cfg.arch.encoder_hidden}}},
      {"pretrain",
       {{"visible_fraction", cfg.pretrain.visible_fraction},
        {"epochs", cfg.pretrain.epochs},
        {"lr", cfg.pretrain.lr},
        {"batch_size", cfg.pretrain.batch_size},
        {"seed", cfg.pretrain.seed},
        {"decoder_hidden", cfg.pretrain.decoder_hidden},
        {"images",
         {{"motifs", std::move(motifs)},
          {"count", cfg.pretext.count},
          {"noise_sd", cfg.pretext.noise_sd},
          {"seed", cfg.pretext.seed}}}}},
      {"gate",
       {{"alpha", cfg.gate.alpha},
        {"d_min", cfg.gate.d_min},
        {"require_positive_mean", cfg.gate.require_positive_mean},
        {"gate_every_s_stages", cfg.gate.gate_every_s_stages}}},
      {"stages", std::move(stages)}};
}

ScenarioConfig load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(ErrorCode::Config, "invalid JSON in '" + path + "': " + e.what());
  }
  return scenario_from_json(j);
}

std::vector<std::pair<int, double>> emit_gain_curve(
    const std::vector<ReportRow>& rows) {
  std::vector<std::pair<int, double>> curve;
  int current_stage = -1;
  double sum = 0.0;
  int count = 0;
  auto flush = [&]() {
    if (count > 0) curve.emplace_back(current_stage, sum / count);
  };
  for (const auto& row : rows) {
    if (!row.experiment_accuracy.has_value()) continue;
    if (row.stage != current_stage) {
      flush();
      current_stage = row.stage;
      sum = 0.0;
      count = 0;
    }
    sum += *row.experiment_accuracy - row.control_accuracy;
    ++count;
  }
  flush();
  return curve;
}

RunReport run_scenario(const ScenarioConfig& config) {
  config.validate();
  const ModelArchitecture arch = config.arch.backbone_only();
  const int k = static_cast<int>(config.stages.front().clients.size());

  // Every randomized step folds the global seed into its declared seed, so a
  // --seed override reshuffles the whole run deterministically.
  auto seed_of = [&](uint64_t declared) {
    return mix_seeds(config.global_seed, declared);
  };

  const std::vector<std::vector<double>> pretext_images = generate_pretext_images(
      config.pretext.motifs, config.pretext.count, arch.image_side,
      config.pretext.noise_sd, seed_of(config.pretext.seed));
  MimConfig mim_cfg = config.pretrain;
  mim_cfg.seed = seed_of(config.pretrain.seed);
  const PretrainResult pretrained = pretrain(pretext_images, arch, mim_cfg);

  FederatedServer server(arch, pretrained.backbone, k,
                         config.gate.gate_every_s_stages);

  RunReport report;
  report.global_seed = config.global_seed;
  PairedSample accumulated;  // percent pairs from stages 2..current

  for (size_t stage_idx = 0; stage_idx < config.stages.size(); ++stage_idx) {
    const int stage_no = static_cast<int>(stage_idx) + 1;
    const StageSpec& stage = config.stages[stage_idx];
    try {
      for (const ClientSpec& client : stage.clients) {
        DomainSpec domain = client.domain;
        domain.seed = seed_of(domain.seed);
        const DatasetPair data = generate(domain, client.n_train, client.n_test);
        SgdOptions opt{client.epochs, client.lr, client.batch_size,
                       seed_of(client.train_seed), false};
        const ModelArchitecture headed = arch.with_head(data.train.num_classes);
        const uint64_t head_seed = seed_of(client.head_seed);

        if (stage_no == 1) {
          // Stage 1: the rolling base equals the pre-trained base, so the
          // control run doubles as the update that seeds the federation.
          ParameterSet served = server.handle_request(
              {client.client_id, data.train.num_classes}, head_seed);
          const TrainResult trained = train_sgd(headed, served, data.train, opt);
          const double acc = evaluate(headed, trained.params, data.test) * 100.0;
          server.submit_update(ClientUpdate{
              client.client_id, strip_head(arch, trained.params),
              static_cast<int64_t>(data.train.size())});
          report.rows.push_back({stage_no, client.client_id, acc, std::nullopt});
          continue;
        }

        // Control arm: fine-tune from the original pre-trained base.
        const ParameterSet control_model =
            attach_head(arch, pretrained.backbone, data.train.num_classes, head_seed);
        const TrainResult control =
            train_sgd(headed, control_model, data.train, opt);
        const double control_acc = evaluate(headed, control.params, data.test) * 100.0;

        // Experiment arm: fine-tune from the rolling federated base.
        ParameterSet served = server.handle_request(
            {client.client_id, data.train.num_classes}, head_seed);
        const TrainResult experiment = train_sgd(headed, served, data.train, opt);
        const double experiment_acc =
            evaluate(headed, experiment.params, data.test) * 100.0;
        server.submit_update(ClientUpdate{
            client.client_id, strip_head(arch, experiment.params),
            static_cast<int64_t>(data.train.size())});

        accumulated.control.push_back(control_acc);
        accumulated.experiment.push_back(experiment_acc);
        report.rows.push_back(
            {stage_no, client.client_id, control_acc, experiment_acc});
      }

      std::optional<GateInput> gate_input;
      if (server.gate_scheduled() && accumulated.control.size() >= 2) {
        gate_input = GateInput{accumulated, config.gate};
      }
      const StageRecord record = server.end_stage(gate_input);
      if (record.gate_verdict.has_value()) {
        report.gate_decision = record.gate_verdict;
        report.ttest = record.gate_verdict->report;
      }
    } catch (const FedError& e) {
      throw FedError(e.code(), "stage " + std::to_string(stage_no) + ": " + e.what());
    }
  }

  report.gain_curve = emit_gain_curve(report.rows);
  return report;
}

PairedSample paper_accuracy_sample() {
  return PairedSample{{87.66, 96.18, 93.41, 75.15, 95.18, 92.0},
                      {88.2, 96.57, 94.23, 80.89, 100.0, 95.0}};
}

std::pair<TTestReport, GateDecision> replay_paper_stats() {
  const PairedSample sample = paper_accuracy_sample();
  GateDecision decision = gate(sample, GateConfig{});
  return {decision.report, decision};
}

json ttest_to_json(const TTestReport& r) {
  return json{{"n", r.n},
              {"mean_diff", r.mean_diff},
              {"sd_diff", r.sd_diff},
              {"t", r.t},
              {"dof", r.dof},
              {"p_two_tailed", r.p_two_tailed},
              {"cohens_d", r.cohens_d},
              {"control_mean", r.control_mean},
              {"control_sd", r.control_sd},
              {"experiment_mean", r.experiment_mean},
              {"experiment_sd", r.experiment_sd}};
}

json gate_decision_to_json(const GateDecision& d) {
  return json{{"verdict", d.verdict == GateVerdict::RetainCandidate
                              ? "RetainCandidate"
                              : "RetainBase"},
              {"report", ttest_to_json(d.report)},
              {"reasons", d.reasons}};
}

json report_to_json(const RunReport& report, const json& config_echo) {
  json rows = json::array();
  for (const auto& row : report.rows) {
    json r{{"stage", row.stage},
           {"client_id", row.client_id},
           {"control_accuracy", row.control_accuracy}};
    if (row.experiment_accuracy.has_value()) {
      r["experiment_accuracy"] = *row.experiment_accuracy;
    }
    rows.push_back(std::move(r));
  }
  json gains = json::array();
  for (const auto& [stage, gain] : report.gain_curve) {
    gains.push_back(json{{"stage", stage}, {"mean_gain", gain}});
  }
  return json{{"schema_version", 1},
              {"global_seed", report.global_seed},
              {"config", config_echo},
              {"rows", std::move(rows)},
              {"gain_curve", std::move(gains)},
              {"ttest", report.ttest ? ttest_to_json(*report.ttest) : json()},
              {"gate", report.gate_decision
                           ? gate_decision_to_json(*report.gate_decision)
                           : json()}};
}

}  // namespace fedstage
