#include "fedstage/net.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "fedstage/errors.hpp"

namespace fedstage {

namespace {

void close_fd(int& fd) {
  if (fd >= 0) {
    ::close(fd);
    fd = -1;
  }
}

void send_all(int fd, const std::vector<uint8_t>& bytes) {
  size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t n = ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      fail(ErrorCode::Network, std::string("send failed: ") + std::strerror(errno));
    }
    sent += static_cast<size_t>(n);
  }
}

sockaddr_in make_addr(const std::string& host, uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    fail(ErrorCode::Network, "invalid address '" + host + "'");
  }
  return addr;
}

}  // namespace

TcpServer::TcpServer(FederatedServer& server, uint64_t head_seed_base,
                     const std::string& host, uint16_t port)
    : server_(server), head_seed_base_(head_seed_base) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) fail(ErrorCode::Network, "socket() failed");
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr = make_addr(host, port);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    const std::string err = std::strerror(errno);
    close_fd(listen_fd_);
    fail(ErrorCode::Network, "bind failed: " + err);
  }
  if (::listen(listen_fd_, 16) != 0) {
    const std::string err = std::strerror(errno);
    close_fd(listen_fd_);
    fail(ErrorCode::Network, "listen failed: " + err);
  }
  sockaddr_in bound{};
  socklen_t len = sizeof(bound);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
}

TcpServer::~TcpServer() { close_fd(listen_fd_); }

void TcpServer::run(int max_stages) {
  const int target_stage = max_stages > 0 ? server_.stage_index() + max_stages : 0;
  while (!stop_.load()) {
    if (target_stage > 0 && server_.stage_index() >= target_stage) break;
    pollfd pfd{listen_fd_, POLLIN, 0};
    const int rc = ::poll(&pfd, 1, 100);
    if (rc < 0) {
      if (errno == EINTR) continue;
      fail(ErrorCode::Network, std::string("poll failed: ") + std::strerror(errno));
    }
    if (rc == 0) continue;
    int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    handle_connection(fd);
    ::close(fd);
  }
}

void TcpServer::handle_connection(int fd) {
  std::vector<uint8_t> buffer;
  uint8_t chunk[4096];
  for (;;) {
    const ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      return;  // connection error; nothing more to do
    }
    if (n == 0) return;  // peer closed
    buffer.insert(buffer.end(), chunk, chunk + n);

    for (;;) {
      DecodeResult decoded;
      try {
        decoded = decode_frame(buffer);
      } catch (const FedError& e) {
        // Malformed frame: report and close the connection.
        try {
          send_all(fd, encode_frame(ErrorReplyMsg{
                           static_cast<uint16_t>(e.code()), e.what()}));
        } catch (const FedError&) {
        }
        return;
      }
      if (decoded.status == DecodeResult::Status::NeedMoreBytes) break;
      buffer.erase(buffer.begin(), buffer.begin() + static_cast<long>(decoded.consumed));

      Message reply;
      try {
        if (const auto* req = std::get_if<ModelRequestMsg>(&decoded.message)) {
          const uint64_t head_seed = derive_head_seed(
              head_seed_base_, server_.stage_index(), req->client_id);
          ParameterSet model = server_.handle_request(
              {req->client_id, static_cast<int>(req->num_classes)}, head_seed);
          reply = ModelResponseMsg{std::move(model)};
        } else if (const auto* sub = std::get_if<UpdateSubmitMsg>(&decoded.message)) {
          ClientUpdate update{sub->client_id, sub->backbone,
                              static_cast<int64_t>(sub->num_examples)};
          server_.submit_update(std::move(update));
          if (server_.pending_count() ==
              static_cast<size_t>(server_.clients_per_stage())) {
            const StageRecord record = server_.end_stage();
            reply = StageAckMsg{static_cast<uint32_t>(record.stage_index),
                                record.adopted};
          } else {
            reply = StageAckMsg{static_cast<uint32_t>(server_.stage_index()), false};
          }
        } else {
          fail(ErrorCode::Protocol, "unexpected message type from client");
        }
      } catch (const FedError& e) {
        reply = ErrorReplyMsg{static_cast<uint16_t>(e.code()), e.what()};
      }
      try {
        send_all(fd, encode_frame(reply));
      } catch (const FedError&) {
        return;
      }
    }
  }
}

FedClient::FedClient(const std::string& host, uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) fail(ErrorCode::Network, "socket() failed");
  sockaddr_in addr = make_addr(host, port);
  if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    const std::string err = std::strerror(errno);
    close_fd(fd_);
    fail(ErrorCode::Network, "connect failed: " + err);
  }
}

FedClient::~FedClient() { close_fd(fd_); }

Message FedClient::round_trip(const Message& request) {
  send_all(fd_, encode_frame(request));
  uint8_t chunk[4096];
  for (;;) {
    const DecodeResult decoded = decode_frame(buffer_);
    if (decoded.status == DecodeResult::Status::Ok) {
      buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<long>(decoded.consumed));
      return decoded.message;
    }
    const ssize_t n = ::recv(fd_, chunk, sizeof(chunk), 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      fail(ErrorCode::Network, std::string("recv failed: ") + std::strerror(errno));
    }
    if (n == 0) fail(ErrorCode::Network, "server closed the connection");
    buffer_.insert(buffer_.end(), chunk, chunk + n);
  }
}

ParameterSet FedClient::request_model(const std::string& client_id, int num_classes) {
  Message reply = round_trip(
      ModelRequestMsg{client_id, static_cast<uint32_t>(num_classes)});
  if (auto* resp = std::get_if<ModelResponseMsg>(&reply)) {
    return std::move(resp->params);
  }
  if (const auto* err = std::get_if<ErrorReplyMsg>(&reply)) {
    throw FedError(static_cast<ErrorCode>(err->code), err->text);
  }
  fail(ErrorCode::Protocol, "unexpected reply to model request");
}

StageAckMsg FedClient::submit(const ClientUpdate& update) {
  Message reply = round_trip(UpdateSubmitMsg{
      update.client_id, static_cast<uint64_t>(update.num_examples),
      update.backbone});
  if (const auto* ack = std::get_if<StageAckMsg>(&reply)) return *ack;
  if (const auto* err = std::get_if<ErrorReplyMsg>(&reply)) {
    throw FedError(static_cast<ErrorCode>(err->code), err->text);
  }
  fail(ErrorCode::Protocol, "unexpected reply to update submit");
}

}  // namespace fedstage
