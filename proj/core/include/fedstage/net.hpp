#pragma once

#include <atomic>
#include <cstdint>
#include <string>

#include "fedstage/codec.hpp"
#include "fedstage/protocol.hpp"

namespace fedstage {

// TCP front-end for a FederatedServer. Connections are handled one at a
// time on the calling thread, so all state mutations are serialized.
class TcpServer {
 public:
  // Binds immediately; port 0 picks an ephemeral port.
  TcpServer(FederatedServer& server, uint64_t head_seed_base,
            const std::string& host, uint16_t port);
  ~TcpServer();

  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  uint16_t port() const { return port_; }

  // Blocks until stop() is called or, when max_stages > 0, that many stages
  // have completed.
  void run(int max_stages = 0);
  void stop() { stop_.store(true); }

 private:
  void handle_connection(int fd);

  FederatedServer& server_;
  uint64_t head_seed_base_;
  int listen_fd_ = -1;
  uint16_t port_ = 0;
  std::atomic<bool> stop_{false};
};

// Client side of the wire protocol; one TCP connection per instance.
class FedClient {
 public:
  FedClient(const std::string& host, uint16_t port);
  ~FedClient();

  FedClient(const FedClient&) = delete;
  FedClient& operator=(const FedClient&) = delete;

  // Throws FedError carrying the server's error code on ErrorReply.
  ParameterSet request_model(const std::string& client_id, int num_classes);
  StageAckMsg submit(const ClientUpdate& update);

 private:
  Message round_trip(const Message& request);

  int fd_ = -1;
  std::vector<uint8_t> buffer_;
};

}  // namespace fedstage
