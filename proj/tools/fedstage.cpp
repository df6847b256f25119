// fedstage: command-line front-end for the stage-wise federated learning
// pipeline (MIM pre-training, scenario runs, trust-gate statistics, and the
// socket server/client pair).

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fedstage/codec.hpp"
#include "fedstage/errors.hpp"
#include "fedstage/mim.hpp"
#include "fedstage/net.hpp"
#include "fedstage/protocol.hpp"
#include "fedstage/rng.hpp"
#include "fedstage/scenario.hpp"
#include "fedstage/synth.hpp"

namespace {

using nlohmann::json;

std::pair<std::string, uint16_t> parse_endpoint(const std::string& endpoint) {
  const size_t colon = endpoint.rfind(':');
  if (colon == std::string::npos) {
    fedstage::fail(fedstage::ErrorCode::Config,
                   "endpoint must be host:port, got '" + endpoint + "'");
  }
  const std::string host = endpoint.substr(0, colon);
  const int port = std::stoi(endpoint.substr(colon + 1));
  if (port < 0 || port > 65535) {
    fedstage::fail(fedstage::ErrorCode::Config, "port out of range");
  }
  return {host, static_cast<uint16_t>(port)};
}

fedstage::PretrainResult pretrain_from_config(const fedstage::ScenarioConfig& cfg,
                                              uint64_t global_seed) {
  const auto seed_of = [&](uint64_t s) { return fedstage::mix_seeds(global_seed, s); };
  const auto images = fedstage::generate_pretext_images(
      cfg.pretext.motifs, cfg.pretext.count, cfg.arch.image_side,
      cfg.pretext.noise_sd, seed_of(cfg.pretext.seed));
  fedstage::MimConfig mim_cfg = cfg.pretrain;
  mim_cfg.seed = seed_of(cfg.pretrain.seed);
  return fedstage::pretrain(images, cfg.arch, mim_cfg);
}

void print_ttest(const fedstage::TTestReport& r) {
  std::printf("n            = %d\n", r.n);
  std::printf("mean_diff    = %.6f\n", r.mean_diff);
  std::printf("sd_diff      = %.6f\n", r.sd_diff);
  std::printf("t(%d)         = %.4f\n", r.dof, r.t);
  std::printf("p (two-tail) = %.4f\n", r.p_two_tailed);
  std::printf("Cohen's d    = %.4f\n", r.cohens_d);
  std::printf("control      mean = %.2f  sd = %.2f\n", r.control_mean, r.control_sd);
  std::printf("experiment   mean = %.2f  sd = %.2f\n", r.experiment_mean, r.experiment_sd);
}

int cmd_pretrain(const std::string& config_path, const std::string& out_path,
                 std::optional<uint64_t> seed_override) {
  fedstage::ScenarioConfig cfg = fedstage::load_scenario_file(config_path);
  const uint64_t seed = seed_override.value_or(cfg.global_seed);
  const fedstage::PretrainResult result = pretrain_from_config(cfg, seed);
  fedstage::save_checkpoint(out_path, result.backbone);
  std::printf("pretrained %d epochs, loss %.6f -> %.6f, wrote %s\n",
              cfg.pretrain.epochs, result.loss_history.front(),
              result.loss_history.back(), out_path.c_str());
  return 0;
}

int cmd_run(const std::string& config_path, const std::string& out_path,
            std::optional<uint64_t> seed_override) {
  fedstage::ScenarioConfig cfg = fedstage::load_scenario_file(config_path);
  if (seed_override) cfg.global_seed = *seed_override;
  const fedstage::RunReport report = fedstage::run_scenario(cfg);

  std::printf("%-6s %-12s %-10s %-10s\n", "stage", "client", "control", "experiment");
  for (const auto& row : report.rows) {
    if (row.experiment_accuracy) {
      std::printf("%-6d %-12s %-10.2f %-10.2f\n", row.stage, row.client_id.c_str(),
                  row.control_accuracy, *row.experiment_accuracy);
    } else {
      std::printf("%-6d %-12s %-10.2f %-10s\n", row.stage, row.client_id.c_str(),
                  row.control_accuracy, "-");
    }
  }
  if (!report.gain_curve.empty()) {
    std::printf("\nstage, mean_gain\n");
    for (const auto& [stage, gain] : report.gain_curve) {
      std::printf("%d, %.4f\n", stage, gain);
    }
  }
  if (report.ttest) {
    std::printf("\n");
    print_ttest(*report.ttest);
    std::printf("verdict      = %s\n",
                report.gate_decision->verdict == fedstage::GateVerdict::RetainCandidate
                    ? "RetainCandidate"
                    : "RetainBase");
  }

  if (!out_path.empty()) {
    const json doc = fedstage::report_to_json(report, fedstage::scenario_to_json(cfg));
    std::ofstream out(out_path);
    if (!out) fedstage::fail(fedstage::ErrorCode::Io, "cannot write '" + out_path + "'");
    out << doc.dump(2) << "\n";
    std::printf("\nreport written to %s\n", out_path.c_str());
  }
  return 0;
}

int cmd_replay_paper_stats() {
  const auto [report, decision] = fedstage::replay_paper_stats();
  print_ttest(report);
  std::printf("verdict      = %s\n",
              decision.verdict == fedstage::GateVerdict::RetainCandidate
                  ? "RetainCandidate"
                  : "RetainBase");
  return 0;
}

int cmd_serve(const std::string& endpoint, const std::string& config_path,
              const std::string& checkpoint_path, int max_stages,
              std::optional<uint64_t> seed_override) {
  fedstage::ScenarioConfig cfg = fedstage::load_scenario_file(config_path);
  const uint64_t seed = seed_override.value_or(cfg.global_seed);
  fedstage::ParameterSet base;
  if (!checkpoint_path.empty()) {
    base = fedstage::load_checkpoint(checkpoint_path);
  } else {
    base = pretrain_from_config(cfg, seed).backbone;
  }
  const int k = static_cast<int>(cfg.stages.front().clients.size());
  fedstage::FederatedServer server(cfg.arch, std::move(base), k,
                                   cfg.gate.gate_every_s_stages);
  const auto [host, port] = parse_endpoint(endpoint);
  fedstage::TcpServer tcp(server, seed, host, port);
  std::printf("serving on %s:%u (K=%d)\n", host.c_str(), tcp.port(), k);
  std::fflush(stdout);
  tcp.run(max_stages);
  std::printf("served %zu stage(s)\n", server.history().size());
  return 0;
}

int cmd_client(const std::string& endpoint, const std::string& spec_path,
               std::optional<uint64_t> seed_override) {
  std::ifstream in(spec_path);
  if (!in) fedstage::fail(fedstage::ErrorCode::Io, "cannot open '" + spec_path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fedstage::fail(fedstage::ErrorCode::Config,
                   "invalid JSON in '" + spec_path + "': " + std::string(e.what()));
  }
  const fedstage::ClientSpec spec = fedstage::client_spec_from_json(j);
  fedstage::DomainSpec domain = spec.domain;
  if (seed_override) domain.seed = fedstage::mix_seeds(*seed_override, domain.seed);

  const fedstage::DatasetPair data = fedstage::generate(domain, spec.n_train, spec.n_test);
  const auto [host, port] = parse_endpoint(endpoint);
  fedstage::FedClient client(host, port);
  fedstage::ParameterSet model =
      client.request_model(spec.client_id, data.train.num_classes);

  fedstage::ModelArchitecture arch;
  arch.patch_size = static_cast<int>(std::sqrt(
      static_cast<double>(model.layout.find("patch_embed.weight")->dims[1])));
  arch.image_side = domain.image_side;
  arch.embed_dim = static_cast<int>(model.layout.find("patch_embed.weight")->dims[0]);
  arch.encoder_hidden = static_cast<int>(model.layout.find("encoder.fc1.weight")->dims[0]);
  const fedstage::ModelArchitecture headed = arch.with_head(data.train.num_classes);

  fedstage::SgdOptions opt{spec.epochs, spec.lr, spec.batch_size, spec.train_seed, false};
  const fedstage::TrainResult trained = fedstage::train_sgd(headed, model, data.train, opt);
  const double acc = fedstage::evaluate(headed, trained.params, data.test);
  const fedstage::ClientUpdate update = {
      spec.client_id, fedstage::strip_head(arch, trained.params),
      static_cast<int64_t>(data.train.size())};
  const fedstage::StageAckMsg ack = client.submit(update);
  std::printf("client %s: test accuracy %.2f%%, ack stage %u adopted=%s\n",
              spec.client_id.c_str(), acc * 100.0, ack.stage_index,
              ack.adopted ? "true" : "false");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stage-wise federated learning pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_path, endpoint, spec_path, checkpoint_path;
  std::optional<uint64_t> seed_override;
  int max_stages = 0;

  auto* pretrain = app.add_subcommand("pretrain", "MIM pre-training of the base backbone");
  pretrain->add_option("--config", config_path, "scenario config JSON")->required();
  pretrain->add_option("--out", out_path, "output checkpoint path")->required();
  pretrain->add_option("--seed", seed_override, "override global_seed");

  auto* run = app.add_subcommand("run", "run a full scenario and emit the report");
  run->add_option("--config", config_path, "scenario config JSON")->required();
  run->add_option("--out", out_path, "report JSON output path");
  run->add_option("--seed", seed_override, "override global_seed");

  app.add_subcommand("replay-paper-stats",
                     "paired t-test / Cohen's d on the published accuracies");

  auto* serve = app.add_subcommand("serve", "serve the federated protocol over TCP");
  serve->add_option("--listen", endpoint, "host:port to listen on")->required();
  serve->add_option("--config", config_path, "scenario config JSON")->required();
  serve->add_option("--checkpoint", checkpoint_path, "load base from checkpoint");
  serve->add_option("--stages", max_stages, "stop after this many stages (0 = run forever)");
  serve->add_option("--seed", seed_override, "override global_seed");

  auto* client = app.add_subcommand("client", "fine-tune against a remote server");
  client->add_option("--connect", endpoint, "server host:port")->required();
  client->add_option("--domain", spec_path, "client spec JSON")->required();
  client->add_option("--seed", seed_override, "override the domain seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("pretrain")) return cmd_pretrain(config_path, out_path, seed_override);
    if (app.got_subcommand("run")) return cmd_run(config_path, out_path, seed_override);
    if (app.got_subcommand("replay-paper-stats")) return cmd_replay_paper_stats();
    if (app.got_subcommand("serve"))
      return cmd_serve(endpoint, config_path, checkpoint_path, max_stages, seed_override);
    if (app.got_subcommand("client")) return cmd_client(endpoint, spec_path, seed_override);
  } catch (const fedstage::FedError& e) {
    std::cerr << "error[" << fedstage::error_code_name(e.code()) << "]: "
              << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
