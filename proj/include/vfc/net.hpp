// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/select.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cstring>
#include <string>
#include <thread>
#include <vector>

#include "vfc/model.hpp"

namespace vfc {

// Wire protocol (all integers little-endian):
//   REQUEST : u32 frame length | VFCB bitstream bytes
//   RESPONSE: u32 frame length | u8 status | ok payload
//   ok payload: u16 predicted class | u16 class count | count x f32 probs |
//               u32 server decode microseconds | u32 server task microseconds
// status: 0 ok, 1 malformed, 2 unsupported version, 3 table mismatch

enum class WireStatus : uint8_t { ok = 0, malformed = 1, version = 2, tables = 3 };

inline const char* wire_status_name(WireStatus s) {
  switch (s) {
    case WireStatus::ok: return "ok";
    case WireStatus::malformed: return "malformed";
    case WireStatus::version: return "version";
    case WireStatus::tables: return "tables";
  }
  return "unknown";
}

// server-reported failure, distinct from transport failures (NetError)
struct RemoteError : std::runtime_error {
  WireStatus status;
  explicit RemoteError(WireStatus s)
      : std::runtime_error(std::string("server rejected request: ") +
                           wire_status_name(s)),
        status(s) {}
};

namespace net_detail {

constexpr uint32_t kMaxFrame = 1u << 26;

inline bool read_full(int fd, void* buf, size_t n) {
  auto* p = static_cast<uint8_t*>(buf);
  while (n > 0) {
    const ssize_t r = ::recv(fd, p, n, 0);
    if (r <= 0) return false;
    p += r;
    n -= static_cast<size_t>(r);
  }
  return true;
}

inline bool write_full(int fd, const void* buf, size_t n) {
  const auto* p = static_cast<const uint8_t*>(buf);
  while (n > 0) {
    const ssize_t r = ::send(fd, p, n, MSG_NOSIGNAL);
    if (r <= 0) return false;
    p += r;
    n -= static_cast<size_t>(r);
  }
  return true;
}

inline void put_u32(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back(static_cast<uint8_t>(x & 0xff));
  v.push_back(static_cast<uint8_t>((x >> 8) & 0xff));
  v.push_back(static_cast<uint8_t>((x >> 16) & 0xff));
  v.push_back(static_cast<uint8_t>((x >> 24) & 0xff));
}

inline void put_u16(std::vector<uint8_t>& v, uint16_t x) {
  v.push_back(static_cast<uint8_t>(x & 0xff));
  v.push_back(static_cast<uint8_t>(x >> 8));
}

inline uint32_t get_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

inline std::pair<std::string, int> parse_addr(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos)
    throw ConfigError("address must be host:port, got '" + addr + "'");
  const std::string host = addr.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(addr.substr(colon + 1));
  } catch (...) {
    throw ConfigError("bad port in address '" + addr + "'");
  }
  if (port < 0 || port > 65535) throw ConfigError("port out of range in '" + addr + "'");
  return {host.empty() ? "127.0.0.1" : host, port};
}

} // namespace net_detail

// Cloud process: loads the model once, answers one request at a time.
// Sequential handling keeps latency measurements contention-free.
class InferenceServer {
public:
  explicit InferenceServer(SplitModel<float> model) : model_(std::move(model)) {
    if (!model_.has_tables)
      throw ConfigError("server model has no entropy tables");
  }

  // binds and starts the accept loop on a background thread; port 0 picks a
  // free port (see port())
  void start(const std::string& host, int port) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw NetError("socket() failed");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(static_cast<uint16_t>(port));
    if (::inet_pton(AF_INET, host.c_str(), &sa.sin_addr) != 1)
      throw NetError("cannot parse bind address " + host);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0) {
      ::close(listen_fd_);
      throw NetError("bind failed on " + host + ":" + std::to_string(port));
    }
    socklen_t slen = sizeof(sa);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&sa), &slen);
    port_ = ntohs(sa.sin_port);
    if (::listen(listen_fd_, 4) != 0) {
      ::close(listen_fd_);
      throw NetError("listen failed");
    }
    running_.store(true);
    thread_ = std::thread([this] { accept_loop(); });
  }

  void stop() {
    running_.store(false);
    if (thread_.joinable()) thread_.join();
    if (listen_fd_ >= 0) {
      ::close(listen_fd_);
      listen_fd_ = -1;
    }
  }

  ~InferenceServer() { stop(); }

  int port() const { return port_; }
  uint64_t requests_served() const { return requests_.load(); }
  uint64_t payload_bytes_received() const { return payload_bytes_.load(); }

private:
  void accept_loop() {
    while (running_.load()) {
      fd_set rfds;
      FD_ZERO(&rfds);
      FD_SET(listen_fd_, &rfds);
      timeval tv{0, 100000}; // 100 ms poll so stop() is responsive
      const int rc = ::select(listen_fd_ + 1, &rfds, nullptr, nullptr, &tv);
      if (rc <= 0) continue;
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) continue;
      serve_connection(fd);
      ::close(fd);
    }
  }

  void serve_connection(int fd) {
    while (running_.load()) {
      uint8_t hdr[4];
      if (!net_detail::read_full(fd, hdr, 4)) return; // client done or gone
      const uint32_t len = net_detail::get_u32(hdr);
      if (len == 0 || len > net_detail::kMaxFrame) {
        // cannot resynchronize after an insane length; answer and drop
        send_error(fd, WireStatus::malformed);
        return;
      }
      std::vector<uint8_t> frame(len);
      if (!net_detail::read_full(fd, frame.data(), len)) return;
      payload_bytes_.fetch_add(len);
      handle_request(fd, frame);
    }
  }

  void handle_request(int fd, const std::vector<uint8_t>& frame) {
    CloudResult res;
    try {
      res = cloud_decode(model_, frame.data(), frame.size());
    } catch (const VersionError&) {
      send_error(fd, WireStatus::version);
      return;
    } catch (const TableMismatchError&) {
      send_error(fd, WireStatus::tables);
      return;
    } catch (const std::exception&) {
      send_error(fd, WireStatus::malformed);
      return;
    }
    std::vector<uint8_t> body;
    body.push_back(static_cast<uint8_t>(WireStatus::ok));
    net_detail::put_u16(body, static_cast<uint16_t>(res.pred));
    net_detail::put_u16(body, static_cast<uint16_t>(res.probs.size()));
    for (float p : res.probs) {
      uint32_t bits;
      std::memcpy(&bits, &p, 4);
      net_detail::put_u32(body, bits);
    }
    net_detail::put_u32(body, static_cast<uint32_t>(std::llround(res.decode_ms * 1000.0)));
    net_detail::put_u32(body, static_cast<uint32_t>(std::llround(res.task_ms * 1000.0)));
    send_frame(fd, body);
    requests_.fetch_add(1);
  }

  void send_error(int fd, WireStatus s) {
    std::vector<uint8_t> body{static_cast<uint8_t>(s)};
    send_frame(fd, body);
  }

  void send_frame(int fd, const std::vector<uint8_t>& body) {
    std::vector<uint8_t> out;
    out.reserve(4 + body.size());
    net_detail::put_u32(out, static_cast<uint32_t>(body.size()));
    out.insert(out.end(), body.begin(), body.end());
    net_detail::write_full(fd, out.data(), out.size());
  }

  SplitModel<float> model_;
  std::thread thread_;
  std::atomic<bool> running_{false};
  std::atomic<uint64_t> requests_{0};
  std::atomic<uint64_t> payload_bytes_{0};
  int listen_fd_ = -1;
  int port_ = 0;
};

// Blocking CLI entry point: run until the process is killed.
inline void serve_forever(SplitModel<float> model, const std::string& addr) {
  auto [host, port] = net_detail::parse_addr(addr);
  InferenceServer server(std::move(model));
  server.start(host, port);
  std::fprintf(stderr, "serving on %s:%d\n", host.c_str(), server.port());
  for (;;) std::this_thread::sleep_for(std::chrono::seconds(3600));
}

namespace net_detail {

inline int connect_to(const std::string& host, int port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0)
    throw NetError("cannot resolve " + host);
  int fd = -1;
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw NetError("cannot connect to " + host + ":" + std::to_string(port));
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return fd;
}

struct RawResponse {
  WireStatus status = WireStatus::ok;
  std::vector<uint8_t> body; // full body including status byte
};

// send one frame, read one response frame
inline RawResponse roundtrip(const std::string& addr, const std::vector<uint8_t>& payload) {
  auto [host, port] = parse_addr(addr);
  const int fd = connect_to(host, port);
  std::vector<uint8_t> out;
  put_u32(out, static_cast<uint32_t>(payload.size()));
  out.insert(out.end(), payload.begin(), payload.end());
  if (!write_full(fd, out.data(), out.size())) {
    ::close(fd);
    throw NetError("request write failed");
  }
  uint8_t hdr[4];
  if (!read_full(fd, hdr, 4)) {
    ::close(fd);
    throw NetError("connection closed before response");
  }
  const uint32_t len = get_u32(hdr);
  if (len == 0 || len > kMaxFrame) {
    ::close(fd);
    throw NetError("bad response frame length");
  }
  RawResponse r;
  r.body.resize(len);
  if (!read_full(fd, r.body.data(), len)) {
    ::close(fd);
    throw NetError("connection closed mid-response");
  }
  ::close(fd);
  r.status = static_cast<WireStatus>(r.body[0]);
  return r;
}

} // namespace net_detail

struct RemoteResult {
  int pred = 0;
  std::vector<float> probs;
  TimingRecord edge_timing;
  double bpp = 0;
  uint32_t server_decode_us = 0;
  uint32_t server_task_us = 0;
  size_t wire_bytes = 0; // bitstream bytes on the wire (frame prefix excluded)
};

// Edge client: encode locally, ship the bitstream, parse the prediction.
// Lambda is validated before anything is sent.
inline RemoteResult infer_remote(const SplitModel<float>& m, const Tensor<float>& image,
                                 double lambda, const std::string& addr) {
  if (lambda < static_cast<double>(m.cfg.lambda_min) ||
      lambda > static_cast<double>(m.cfg.lambda_max))
    throw ConfigError("lambda " + std::to_string(lambda) + " outside [" +
                      std::to_string(m.cfg.lambda_min) + ", " +
                      std::to_string(m.cfg.lambda_max) + "]");
  RemoteResult r;
  auto edge = edge_encode(m, image, lambda);
  r.edge_timing = edge.timing;
  auto bytes = edge.stream.serialize();
  r.wire_bytes = bytes.size();
  const double pixels =
      static_cast<double>(m.cfg.cls.image_hw) * static_cast<double>(m.cfg.cls.image_hw);
  r.bpp = 8.0 * static_cast<double>(bytes.size()) / pixels;

  auto resp = net_detail::roundtrip(addr, bytes);
  if (resp.status != WireStatus::ok) throw RemoteError(resp.status);
  const auto& b = resp.body;
  if (b.size() < 1 + 2 + 2 + 8) throw NetError("response too short");
  size_t p = 1;
  auto get16 = [&b, &p]() {
    uint16_t v = static_cast<uint16_t>(b[p] | (b[p + 1] << 8));
    p += 2;
    return v;
  };
  r.pred = get16();
  const uint16_t k = get16();
  if (b.size() != 1 + 4 + 4ull * k + 8) throw NetError("response length mismatch");
  r.probs.resize(k);
  for (int i = 0; i < k; ++i) {
    const uint32_t bits = net_detail::get_u32(b.data() + p);
    p += 4;
    std::memcpy(&r.probs[static_cast<size_t>(i)], &bits, 4);
  }
  r.server_decode_us = net_detail::get_u32(b.data() + p);
  p += 4;
  r.server_task_us = net_detail::get_u32(b.data() + p);
  return r;
}

} // namespace vfc
