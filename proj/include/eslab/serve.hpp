#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cstring>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "eslab/common.hpp"
#include "eslab/oracle.hpp"
#include "eslab/tensor.hpp"

namespace eslab {

// Wire protocol: one JSON object per line, floats printed at 17 significant
// digits so a value survives the round trip bit for bit. Requests carry
// {"x": [[...], ...]} with one flattened sample per inner array; replies are
// {"y": [[...], ...], "queries_used": n} where n is the session's cumulative
// counter after the batch, or {"error": "bad_request" | "budget_exhausted"}.

/// Canonical request line (no trailing newline).
inline std::string wire_request(const Tensor& x) {
  if (x.rank() < 2 || x.dim(0) <= 0)
    throw std::invalid_argument("wire_request: expected a non-empty batch");
  const int64_t n = x.dim(0);
  const int64_t width = x.numel() / n;
  std::string out = "{\"x\":[";
  for (int64_t i = 0; i < n; ++i) {
    out += i ? ",[" : "[";
    for (int64_t j = 0; j < width; ++j) {
      if (j) out += ',';
      out += format_double(x.data()[static_cast<size_t>(i * width + j)]);
    }
    out += ']';
  }
  out += "]}";
  return out;
}

/// Canonical reply line for a served batch (no trailing newline). The
/// in-process equivalence tests compare against exactly this serialization.
inline std::string wire_response(const Tensor& y, int64_t queries_used) {
  const int64_t n = y.dim(0);
  const int64_t k = y.dim(1);
  std::string out = "{\"y\":[";
  for (int64_t i = 0; i < n; ++i) {
    out += i ? ",[" : "[";
    for (int64_t j = 0; j < k; ++j) {
      if (j) out += ',';
      out += format_double(y.data()[static_cast<size_t>(i * k + j)]);
    }
    out += ']';
  }
  out += "],\"queries_used\":" + std::to_string(queries_used) + "}";
  return out;
}

inline std::string wire_error(const std::string& code) { return "{\"error\":\"" + code + "\"}"; }

namespace detail {

inline void close_fd(int& fd) {
  if (fd >= 0) {
    ::close(fd);
    fd = -1;
  }
}

/// Sends the whole buffer, retrying short writes.
inline bool send_all(int fd, const std::string& buf) {
  size_t off = 0;
  while (off < buf.size()) {
    const ssize_t w = ::send(fd, buf.data() + off, buf.size() - off, 0);
    if (w <= 0) return false;
    off += static_cast<size_t>(w);
  }
  return true;
}

/// Reads until '\n' (consumed, not returned) or EOF. False on EOF with
/// nothing buffered.
inline bool recv_line(int fd, std::string& carry, std::string& line) {
  while (true) {
    const size_t pos = carry.find('\n');
    if (pos != std::string::npos) {
      line = carry.substr(0, pos);
      carry.erase(0, pos + 1);
      return true;
    }
    char buf[4096];
    const ssize_t r = ::recv(fd, buf, sizeof(buf), 0);
    if (r <= 0) {
      if (carry.empty()) return false;
      line = std::move(carry);
      carry.clear();
      return true;
    }
    carry.append(buf, static_cast<size_t>(r));
  }
}

/// Parses {"x": [[...]]} into a [n, sample_shape] batch. Throws
/// invalid_argument on any malformed frame.
inline Tensor parse_request(const std::string& line, const Shape& sample_shape) {
  const nlohmann::json req = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (req.is_discarded() || !req.is_object() || !req.contains("x") || !req["x"].is_array() ||
      req["x"].empty())
    throw std::invalid_argument("bad frame");
  int64_t width = 1;
  for (int64_t d : sample_shape) width *= d;
  const auto& rows = req["x"];
  std::vector<double> flat;
  flat.reserve(rows.size() * static_cast<size_t>(width));
  for (const auto& row : rows) {
    if (!row.is_array() || static_cast<int64_t>(row.size()) != width)
      throw std::invalid_argument("bad frame");
    for (const auto& v : row) {
      if (!v.is_number()) throw std::invalid_argument("bad frame");
      flat.push_back(v.get<double>());
    }
  }
  Shape shape{static_cast<int64_t>(rows.size())};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  return Tensor(shape, std::move(flat));
}

}  // namespace detail

/// One reply line for one request line against a live session. Shared by the
/// socket loop and by tests that want the server's behavior without a socket.
inline std::string serve_line(OracleSession& session, const std::string& line) {
  Tensor x;
  try {
    x = detail::parse_request(line, session.victim().input_shape());
  } catch (const std::exception&) {
    return wire_error("bad_request");
  }
  try {
    Tensor y = session.query_tensor(x);
    return wire_response(y, session.query_count());
  } catch (const BudgetExhaustedError&) {
    return wire_error("budget_exhausted");
  } catch (const std::exception&) {
    return wire_error("bad_request");
  }
}

/// Blocking TCP front end for one OracleSession. Connections are accepted
/// one at a time and served until the client hangs up, so every client
/// shares the session's query counter. start() spawns the accept loop on a
/// background thread; stop() (or destruction) shuts it down.
class OracleServer {
 public:
  explicit OracleServer(OracleSession& session, uint16_t port = 0) : session_(session) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw std::runtime_error("serve: socket() failed");
    const int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0 ||
        ::listen(listen_fd_, 8) < 0) {
      detail::close_fd(listen_fd_);
      throw std::runtime_error("serve: cannot listen on port " + std::to_string(port));
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }

  ~OracleServer() { stop(); }
  OracleServer(const OracleServer&) = delete;
  OracleServer& operator=(const OracleServer&) = delete;

  uint16_t port() const { return port_; }

  void start() {
    if (thread_.joinable()) return;
    thread_ = std::thread([this] { accept_loop(); });
  }

  /// Serves until stop() is called from another thread (CLI path).
  void run() { accept_loop(); }

  void stop() {
    stopping_.store(true);
    if (listen_fd_ >= 0) ::shutdown(listen_fd_, SHUT_RDWR);
    detail::close_fd(listen_fd_);
    if (thread_.joinable()) thread_.join();
  }

 private:
  void accept_loop() {
    while (!stopping_.load()) {
      const int client = ::accept(listen_fd_, nullptr, nullptr);
      if (client < 0) break;  // listener closed by stop()
      std::string carry, line;
      while (detail::recv_line(client, carry, line)) {
        if (!detail::send_all(client, serve_line(session_, line) + "\n")) break;
      }
      ::close(client);
    }
  }

  OracleSession& session_;
  int listen_fd_ = -1;
  uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread thread_;
};

struct RemoteReply {
  Tensor y;              // [n, K] defended probabilities
  int64_t queries_used;  // server-side cumulative counter
};

namespace detail {

inline int connect_to(const std::string& host, uint16_t port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw std::runtime_error("remote_query: socket() failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw std::runtime_error("remote_query: bad host " + host);
  }
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    ::close(fd);
    throw std::runtime_error("remote_query: cannot reach " + host + ":" + std::to_string(port));
  }
  return fd;
}

}  // namespace detail

/// Raw exchange: one request line out, one reply line back. The byte-level
/// equivalence tests are written against this.
inline std::string remote_query_raw(const std::string& host, uint16_t port,
                                    const std::string& line) {
  const int fd = detail::connect_to(host, port);
  std::string carry, reply;
  const bool ok = detail::send_all(fd, line + "\n") && detail::recv_line(fd, carry, reply);
  ::close(fd);
  if (!ok) throw std::runtime_error("remote_query: connection dropped");
  return reply;
}

/// Client counterpart of query_tensor(): sends one batch, returns the
/// defended probabilities and the server's counter. Error frames surface as
/// the same exceptions the in-process call would have thrown.
inline RemoteReply remote_query(const std::string& host, uint16_t port, const Tensor& x) {
  const std::string reply = remote_query_raw(host, port, wire_request(x));
  const nlohmann::json res = nlohmann::json::parse(reply, nullptr, /*allow_exceptions=*/false);
  if (res.is_discarded() || !res.is_object())
    throw std::runtime_error("remote_query: unparseable reply");
  if (res.contains("error")) {
    const std::string code = res["error"].get<std::string>();
    if (code == "budget_exhausted") throw BudgetExhaustedError("remote oracle budget exhausted");
    throw std::invalid_argument("remote oracle rejected the request: " + code);
  }
  if (!res.contains("y") || !res.contains("queries_used"))
    throw std::runtime_error("remote_query: malformed reply");
  const auto& rows = res["y"];
  if (!rows.is_array() || rows.empty() || !rows[0].is_array())
    throw std::runtime_error("remote_query: malformed reply");
  const int64_t n = static_cast<int64_t>(rows.size());
  const int64_t k = static_cast<int64_t>(rows[0].size());
  std::vector<double> flat;
  flat.reserve(static_cast<size_t>(n * k));
  for (const auto& row : rows)
    for (const auto& v : row) flat.push_back(v.get<double>());
  Tensor y({n, k}, std::move(flat));
  return RemoteReply{std::move(y), res["queries_used"].get<int64_t>()};
}

/// Client-side stand-in for an OracleSession: same query_tensor() and
/// query_count() surface, so attack loops run unchanged against a served
/// victim. The counter mirrors the server's cumulative one from replies.
class RemoteOracle {
 public:
  RemoteOracle(std::string host, uint16_t port) : host_(std::move(host)), port_(port) {}

  Tensor query_tensor(const Tensor& x) {
    RemoteReply reply = remote_query(host_, port_, x);
    queries_used_ = reply.queries_used;
    return std::move(reply.y);
  }

  int64_t query_count() const { return queries_used_; }

 private:
  std::string host_;
  uint16_t port_;
  int64_t queries_used_ = 0;
};

/// Splits "host:port". Host may be omitted ("4000" serves loopback).
inline std::pair<std::string, uint16_t> parse_endpoint(const std::string& endpoint) {
  const size_t colon = endpoint.rfind(':');
  const std::string host = colon == std::string::npos ? "127.0.0.1" : endpoint.substr(0, colon);
  const std::string port_str =
      colon == std::string::npos ? endpoint : endpoint.substr(colon + 1);
  try {
    const int port = std::stoi(port_str);
    if (port < 0 || port > 65535) throw std::out_of_range("port");
    return {host.empty() ? "127.0.0.1" : host, static_cast<uint16_t>(port)};
  } catch (const std::exception&) {
    throw std::invalid_argument("bad endpoint: " + endpoint);
  }
}

}  // namespace eslab
