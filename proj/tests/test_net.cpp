#include <doctest.h>

#include <sys/socket.h>
#include <netinet/in.h>
#include <arpa/inet.h>
#include <unistd.h>

#include <thread>

#include "fedstage/errors.hpp"
#include "fedstage/net.hpp"
#include "fedstage/protocol.hpp"
#include "test_util.hpp"

using namespace fedstage;

// Connections are handled one at a time, so each client below keeps its
// connection only for as long as it needs it.
namespace {

struct Loopback {
  ModelArchitecture arch = testutil::tiny_arch();
  ParameterSet base = init_model(testutil::tiny_arch(), 5);
  FederatedServer server{arch, base, 2, 4};
  TcpServer tcp{server, 99, "127.0.0.1", 0};
  std::thread thread;

  void start(int max_stages) {
    thread = std::thread([this, max_stages] { tcp.run(max_stages); });
  }
  ~Loopback() {
    tcp.stop();
    if (thread.joinable()) thread.join();
  }

  ParameterSet fetch(const std::string& id) {
    FedClient c("127.0.0.1", tcp.port());
    return c.request_model(id, 2);
  }

  StageAckMsg round(const std::string& id, uint64_t data_seed) {
    FedClient c("127.0.0.1", tcp.port());
    const ParameterSet served = c.request_model(id, 2);
    const auto data =
        testutil::gaussian_blob_dataset(16, arch.image_side, 0.3, 0.05, data_seed);
    const ClientUpdate update =
        client_run(arch, served, id, data, {2, 0.05, 8, data_seed, false});
    return c.submit(update);
  }
};

}  // namespace

TEST_CASE("loopback stage: two clients, ack at completion") {
  Loopback lb;
  lb.start(1);

  const ParameterSet m1 = lb.fetch("alpha");
  const size_t backbone = layout_for(lb.arch).total();
  for (size_t i = 0; i < backbone; ++i) CHECK(m1.values[i] == lb.base.values[i]);
  CHECK(m1 == attach_head(lb.arch, lb.base, 2, derive_head_seed(99, 1, "alpha")));

  {
    FedClient c("127.0.0.1", lb.tcp.port());
    const auto data = testutil::gaussian_blob_dataset(16, lb.arch.image_side, 0.3, 0.05, 1);
    const StageAckMsg a1 =
        c.submit(client_run(lb.arch, m1, "alpha", data, {2, 0.05, 8, 1, false}));
    CHECK(a1.stage_index == 1);
    CHECK_FALSE(a1.adopted);  // stage still open after the first update
  }

  const StageAckMsg a2 = lb.round("beta", 2);
  CHECK(a2.stage_index == 1);
  CHECK(a2.adopted);  // Kth update closes the stage

  lb.thread.join();
  REQUIRE(lb.server.history().size() == 1);
  CHECK(lb.server.history()[0].stage_index == 1);
  CHECK(lb.server.base().values != lb.base.values);
}

TEST_CASE("wire errors carry the server's error code") {
  Loopback lb;
  lb.start(0);

  lb.fetch("alpha");
  try {
    lb.fetch("alpha");
    FAIL("expected duplicate-client over the wire");
  } catch (const FedError& e) {
    CHECK(e.code() == ErrorCode::DuplicateClient);
  }
}

TEST_CASE("late submission after the stage closed is stale") {
  Loopback lb;
  lb.start(0);

  const ParameterSet m3 = lb.fetch("c");  // registered in stage 1
  lb.round("a", 1);
  lb.round("b", 2);  // closes stage 1
  try {
    FedClient late("127.0.0.1", lb.tcp.port());
    const auto data = testutil::gaussian_blob_dataset(16, lb.arch.image_side, 0.3, 0.05, 3);
    late.submit(client_run(lb.arch, m3, "c", data, {2, 0.05, 8, 3, false}));
    FAIL("expected stale-stage over the wire");
  } catch (const FedError& e) {
    CHECK(e.code() == ErrorCode::StaleStage);
  }
}

TEST_CASE("malformed bytes get an error reply, not a hang or crash") {
  Loopback lb;
  lb.start(0);

  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  REQUIRE(fd >= 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(lb.tcp.port());
  REQUIRE(::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr) == 1);
  REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);

  const uint8_t junk[] = {'J', 'U', 'N', 'K', 9, 9, 9, 9, 9, 9, 9, 9, 9, 9};
  REQUIRE(::send(fd, junk, sizeof(junk), 0) == static_cast<ssize_t>(sizeof(junk)));

  std::vector<uint8_t> buf(4096);
  size_t total = 0;
  bool got_error_reply = false;
  while (!got_error_reply) {
    const ssize_t n = ::recv(fd, buf.data() + total, buf.size() - total, 0);
    if (n <= 0) break;
    total += static_cast<size_t>(n);
    const DecodeResult res = decode_frame(std::span(buf.data(), total));
    if (res.status == DecodeResult::Status::Ok) {
      const auto& err = std::get<ErrorReplyMsg>(res.message);
      CHECK(err.code == static_cast<uint16_t>(ErrorCode::Protocol));
      got_error_reply = true;
    }
  }
  CHECK(got_error_reply);
  ::close(fd);

  // the server is still serving afterwards
  CHECK(lb.fetch("after").values.size() > 0);
}
