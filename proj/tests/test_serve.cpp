#include <gtest/gtest.h>

#include <string>
#include <vector>

#include "eslab/dataset.hpp"
#include "eslab/serve.hpp"

using namespace eslab;

namespace {

Network tiny_victim(uint64_t seed = 5) { return make_model("mlp-small", {8}, 3, seed); }

Tensor random_batch(int64_t n, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> flat;
  flat.reserve(static_cast<size_t>(n) * 8);
  for (int64_t i = 0; i < n * 8; ++i) flat.push_back(rng.normal());
  return Tensor({n, 8}, std::move(flat));
}

}  // namespace

TEST(Wire, RequestSurvivesParsingBitForBit) {
  OracleSession session(tiny_victim());
  Tensor x = random_batch(4, 11);
  // the server parses the canonical request back into the exact batch, so
  // the reply must match a local query on the original tensor byte for byte
  std::string reply = serve_line(session, wire_request(x));
  OracleSession mirror(tiny_victim());
  Tensor y = mirror.query_tensor(x);
  EXPECT_EQ(reply, wire_response(y, mirror.query_count()));
}

TEST(Wire, MalformedFramesAreRejected) {
  OracleSession session(tiny_victim());
  const std::string bad = wire_error("bad_request");
  EXPECT_EQ(serve_line(session, "not json"), bad);
  EXPECT_EQ(serve_line(session, "{}"), bad);
  EXPECT_EQ(serve_line(session, "{\"x\":[]}"), bad);
  EXPECT_EQ(serve_line(session, "{\"x\":[[1,2]]}"), bad);          // wrong width
  EXPECT_EQ(serve_line(session, "{\"x\":[[1,2,3,4,5,6,7,\"a\"]]}"), bad);
  EXPECT_EQ(session.query_count(), 0);  // rejected frames cost nothing
}

TEST(Wire, BudgetErrorHasItsOwnCode) {
  OracleSession session(tiny_victim(), {}, /*budget=*/3);
  EXPECT_EQ(serve_line(session, wire_request(random_batch(4, 1))),
            wire_error("budget_exhausted"));
  EXPECT_EQ(session.query_count(), 0);
}

TEST(Wire, EndpointParsing) {
  auto [host, port] = parse_endpoint("127.0.0.1:4000");
  EXPECT_EQ(host, "127.0.0.1");
  EXPECT_EQ(port, 4000);
  auto [h2, p2] = parse_endpoint("9000");
  EXPECT_EQ(h2, "127.0.0.1");
  EXPECT_EQ(p2, 9000);
  EXPECT_THROW(parse_endpoint("host:notaport"), std::invalid_argument);
  EXPECT_THROW(parse_endpoint("host:99999"), std::invalid_argument);
}

TEST(Serve, SocketPathMatchesInProcessBytes) {
  OracleSession session(tiny_victim());
  OracleServer server(session);
  server.start();

  OracleSession mirror(tiny_victim());
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Tensor x = random_batch(3 + static_cast<int64_t>(seed % 4), 100 + seed);
    Tensor y = mirror.query_tensor(x);
    const std::string expected = wire_response(y, mirror.query_count());
    EXPECT_EQ(remote_query_raw("127.0.0.1", server.port(), wire_request(x)), expected);
  }
  EXPECT_EQ(session.query_count(), mirror.query_count());
}

TEST(Serve, DefendedSessionMatchesToo) {
  DefenseConfig defense;
  defense.topk = 2;
  defense.rounding_decimals = 2;
  OracleSession session(tiny_victim(), defense);
  OracleServer server(session);
  server.start();

  OracleSession mirror(tiny_victim(), defense);
  Tensor x = random_batch(6, 7);
  Tensor y = mirror.query_tensor(x);
  const std::string expected = wire_response(y, mirror.query_count());
  EXPECT_EQ(remote_query_raw("127.0.0.1", server.port(), wire_request(x)), expected);
}

TEST(Serve, SequentialClientsShareTheCounter) {
  OracleSession session(tiny_victim());
  OracleServer server(session);
  server.start();

  // each remote_query opens its own connection
  RemoteReply first = remote_query("127.0.0.1", server.port(), random_batch(5, 1));
  EXPECT_EQ(first.queries_used, 5);
  RemoteReply second = remote_query("127.0.0.1", server.port(), random_batch(7, 2));
  EXPECT_EQ(second.queries_used, 12);
  EXPECT_EQ(session.query_count(), 12);
}

TEST(Serve, ClientDecodesExactValues) {
  OracleSession session(tiny_victim());
  OracleServer server(session);
  server.start();

  Tensor x = random_batch(4, 3);
  RemoteReply reply = remote_query("127.0.0.1", server.port(), x);
  OracleSession mirror(tiny_victim());
  Tensor expected = mirror.query_tensor(x);
  ASSERT_EQ(reply.y.shape(), expected.shape());
  for (size_t i = 0; i < expected.data().size(); ++i)
    EXPECT_EQ(reply.y.data()[i], expected.data()[i]);  // bit-exact, not approximate
}

TEST(Serve, BudgetSurfacesAsTheSameException) {
  OracleSession session(tiny_victim(), {}, /*budget=*/6);
  OracleServer server(session);
  server.start();

  remote_query("127.0.0.1", server.port(), random_batch(4, 1));
  EXPECT_THROW(remote_query("127.0.0.1", server.port(), random_batch(4, 2)),
               BudgetExhaustedError);
  EXPECT_EQ(session.query_count(), 4);
  // a batch that still fits goes through
  RemoteReply ok = remote_query("127.0.0.1", server.port(), random_batch(2, 3));
  EXPECT_EQ(ok.queries_used, 6);
}

TEST(Serve, ManyFramesOnOneConnectionKeepOrder) {
  OracleSession session(tiny_victim());
  OracleServer server(session);
  server.start();

  const int fd = detail::connect_to("127.0.0.1", server.port());
  std::string carry, reply;
  OracleSession mirror(tiny_victim());
  for (uint64_t seed = 0; seed < 50; ++seed) {
    Tensor x = random_batch(2, 500 + seed);
    ASSERT_TRUE(detail::send_all(fd, wire_request(x) + "\n"));
    ASSERT_TRUE(detail::recv_line(fd, carry, reply));
    Tensor y = mirror.query_tensor(x);
    EXPECT_EQ(reply, wire_response(y, mirror.query_count()));
  }
  ::close(fd);
}
