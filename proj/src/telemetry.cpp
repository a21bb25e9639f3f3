// SPDX-License-Identifier: Apache-2.0
#include "evsd/telemetry.hpp"

#include <condition_variable>
#include <deque>
#include <mutex>
#include <set>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "evsd/io.hpp"

namespace evsd {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using nlohmann::json;

json frame_message(const FrameResult& fr, Phase phase) {
  return {{"type", "frame"},
          {"t", fr.end_s},
          {"prob", fr.probability},
          {"smoothed", fr.smoothed_probability},
          {"frame_ms", 1000.0 * fr.duration_s()},
          {"infer_ms", fr.processing_ms},
          {"state", phase_name(phase)}};
}

json detection_message(const DetectionEvent& ev, bool opened) {
  return {{"type", "detection"},
          {"event", opened ? "open" : "close"},
          {"onset", ev.onset_s},
          {"offset", opened ? json(nullptr) : json(ev.offset_s)},
          {"peak", ev.peak_probability}};
}

json stats_message(const LiveStats& s) {
  return {{"type", "stats"}, {"cpu_pct", s.cpu_pct}, {"mem_pct", s.mem_pct}, {"rt_factor", s.rt_factor},
          {"fps", s.fps}};
}

json config_message(const EngineConfig& cfg) { return {{"type", "config"}, {"config", config_to_json(cfg)}}; }

json ack_message(bool ok, const std::string& reason) {
  return {{"type", "ack"}, {"ok", ok}, {"reason", ok ? json(nullptr) : json(reason)}};
}

ControlParse parse_control(const std::string& text) {
  ControlParse out;
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    out.error = "message is not a JSON object";
    return out;
  }
  if (!j.contains("type") || j["type"] != "set_config") {
    out.error = "expected type \"set_config\"";
    return out;
  }
  ConfigPatch patch;
  for (const auto& [key, v] : j.items()) {
    if (key == "type") continue;
    auto real = [&](std::optional<double>& dst) {
      if (!v.is_number()) return false;
      dst = v.get<double>();
      return true;
    };
    auto integer = [&](std::optional<int>& dst) {
      if (!v.is_number_integer()) return false;
      dst = v.get<int>();
      return true;
    };
    bool ok;
    if (key == "threshold") ok = real(patch.threshold);
    else if (key == "increment_rate") ok = real(patch.increment_rate);
    else if (key == "max_frame_s") ok = real(patch.max_frame_s);
    else if (key == "smoothing_window") ok = integer(patch.smoothing_window);
    else if (key == "consecutive_k") ok = integer(patch.consecutive_k);
    else if (key == "release_m") ok = integer(patch.release_m);
    else {
      out.error = "unknown field '" + key + "'";
      return out;
    }
    if (!ok) {
      out.error = "field '" + key + "' has the wrong type";
      return out;
    }
  }
  if (patch.empty()) {
    out.error = "no configurable fields given";
    return out;
  }
  out.patch = patch;
  return out;
}

namespace {

std::pair<std::string, std::string> split_host_port(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) throw Error("address '" + addr + "' is not host:port");
  std::string host = addr.substr(0, colon);
  if (host.size() >= 2 && host.front() == '[' && host.back() == ']') host = host.substr(1, host.size() - 2);
  return {host.empty() ? "0.0.0.0" : host, addr.substr(colon + 1)};
}

std::string mime_type(const std::filesystem::path& p) {
  const std::string ext = p.extension().string();
  if (ext == ".html" || ext == ".htm") return "text/html";
  if (ext == ".js" || ext == ".mjs") return "application/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  if (ext == ".ico") return "image/x-icon";
  if (ext == ".map" || ext == ".txt") return "text/plain";
  return "application/octet-stream";
}

class WsSession;

}  // namespace

struct TelemetryServer::Impl {
  Engine& engine;
  TelemetryOptions opts;
  net::io_context ioc;
  net::executor_work_guard<net::io_context::executor_type> work{ioc.get_executor()};
  tcp::acceptor acceptor{ioc};
  // Touched only on the I/O thread.
  std::set<std::shared_ptr<WsSession>> sessions;
  std::thread thread;

  std::mutex seq_mu;
  std::uint64_t seq = 0;
  std::atomic<std::size_t> client_count{0};
  std::atomic<std::uint64_t> dropped{0};
  std::atomic<bool> stopped{false};

  Impl(Engine& e, TelemetryOptions o) : engine(e), opts(std::move(o)) {}

  void accept();
  void broadcast(json msg);
  void join(std::shared_ptr<WsSession> s);
  void leave(const std::shared_ptr<WsSession>& s);
  void handle_control(const std::shared_ptr<WsSession>& s, const std::string& text);
};

namespace {

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket socket, TelemetryServer::Impl& srv) : ws_(std::move(socket)), srv_(srv) {}

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->srv_.join(self);
      self->read();
    });
  }

  // I/O thread only.
  void send(const std::shared_ptr<const std::string>& text) {
    if (closing_) return;
    if (queue_.size() >= srv_.opts.queue_limit) {
      ++srv_.dropped;
      abort();
      return;
    }
    queue_.push_back(text);
    if (queue_.size() == 1) write();
  }

  void abort() {
    if (closing_) return;
    closing_ = true;
    srv_.leave(shared_from_this());
    beast::error_code ec;
    beast::get_lowest_layer(ws_).socket().close(ec);
  }

 private:
  void read() {
    ws_.async_read(buf_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->abort();
      const std::string text = beast::buffers_to_string(self->buf_.data());
      self->buf_.consume(self->buf_.size());
      self->srv_.handle_control(self, text);
      self->read();
    });
  }

  void write() {
    ws_.text(true);
    ws_.async_write(net::buffer(*queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->abort();
      self->queue_.pop_front();
      if (!self->queue_.empty()) self->write();
    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  TelemetryServer::Impl& srv_;
  beast::flat_buffer buf_;
  std::deque<std::shared_ptr<const std::string>> queue_;
  bool closing_ = false;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket socket, TelemetryServer::Impl& srv) : stream_(std::move(socket)), srv_(srv) {}

  void run() {
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buf_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return;
      self->dispatch();
    });
  }

 private:
  void dispatch() {
    if (websocket::is_upgrade(req_)) {
      stream_.expires_never();
      std::make_shared<WsSession>(stream_.release_socket(), srv_)->run(std::move(req_));
      return;
    }
    serve_static();
  }

  template <class Body>
  void reply(http::response<Body>&& res) {
    auto sp = std::make_shared<http::response<Body>>(std::move(res));
    sp->set(http::field::server, "evsd");
    sp->keep_alive(false);
    sp->prepare_payload();
    http::async_write(stream_, *sp, [self = shared_from_this(), sp](beast::error_code, std::size_t) {
      beast::error_code ec;
      self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
    });
  }

  void text_reply(http::status status, const std::string& body) {
    http::response<http::string_body> res{status, req_.version()};
    res.set(http::field::content_type, "text/plain");
    res.body() = body;
    reply(std::move(res));
  }

  void serve_static() {
    if (req_.method() != http::verb::get && req_.method() != http::verb::head)
      return text_reply(http::status::method_not_allowed, "GET only\n");
    if (!srv_.opts.static_dir) return text_reply(http::status::not_found, "no static directory configured\n");

    std::string target(req_.target());
    target = target.substr(0, target.find_first_of("?#"));
    if (target.empty() || target.front() != '/' || target.find("..") != std::string::npos)
      return text_reply(http::status::bad_request, "bad path\n");
    if (target.back() == '/') target += "index.html";
    const std::filesystem::path path = *srv_.opts.static_dir / target.substr(1);

    http::file_body::value_type file;
    beast::error_code ec;
    file.open(path.c_str(), beast::file_mode::scan, ec);
    if (ec) return text_reply(http::status::not_found, "not found\n");
    const auto size = file.size();
    if (req_.method() == http::verb::head) {
      http::response<http::empty_body> res{http::status::ok, req_.version()};
      res.set(http::field::content_type, mime_type(path));
      res.content_length(size);
      return reply(std::move(res));
    }
    http::response<http::file_body> res{std::piecewise_construct, std::make_tuple(std::move(file)),
                                        std::make_tuple(http::status::ok, req_.version())};
    res.set(http::field::content_type, mime_type(path));
    reply(std::move(res));
  }

  beast::tcp_stream stream_;
  TelemetryServer::Impl& srv_;
  beast::flat_buffer buf_;
  http::request<http::string_body> req_;
};

}  // namespace

void TelemetryServer::Impl::accept() {
  acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
    if (ec) {
      if (ec == net::error::operation_aborted || !acceptor.is_open()) return;
    } else {
      std::make_shared<HttpSession>(std::move(socket), *this)->run();
    }
    accept();
  });
}

void TelemetryServer::Impl::broadcast(json msg) {
  if (stopped) return;
  std::lock_guard lock(seq_mu);
  msg["seq"] = ++seq;
  auto text = std::make_shared<const std::string>(msg.dump());
  net::post(ioc, [this, text] {
    const std::vector<std::shared_ptr<WsSession>> targets(sessions.begin(), sessions.end());
    for (const auto& s : targets) s->send(text);
  });
}

// Stamping the snapshot and registering under the same lock as broadcasts
// keeps seq strictly increasing on every connection.
void TelemetryServer::Impl::join(std::shared_ptr<WsSession> s) {
  json msg = config_message(engine.config());
  std::lock_guard lock(seq_mu);
  msg["seq"] = ++seq;
  auto text = std::make_shared<const std::string>(msg.dump());
  net::post(ioc, [this, s = std::move(s), text] {
    sessions.insert(s);
    client_count = sessions.size();
    s->send(text);
  });
}

void TelemetryServer::Impl::leave(const std::shared_ptr<WsSession>& s) {
  sessions.erase(s);
  client_count = sessions.size();
}

void TelemetryServer::Impl::handle_control(const std::shared_ptr<WsSession>& s, const std::string& text) {
  const ControlParse parsed = parse_control(text);
  if (!parsed.patch) {
    s->send(std::make_shared<const std::string>(ack_message(false, parsed.error).dump()));
    return;
  }
  const ControlResult r = engine.apply_control(*parsed.patch);
  s->send(std::make_shared<const std::string>(ack_message(r.accepted, r.reason).dump()));
  if (r.accepted) broadcast(config_message(engine.config()));
}

TelemetryServer::TelemetryServer(Engine& engine, TelemetryOptions opts)
    : impl_(std::make_unique<Impl>(engine, std::move(opts))) {
  const auto [host, port] = split_host_port(impl_->opts.bind);
  try {
    tcp::resolver resolver(impl_->ioc);
    const auto results = resolver.resolve(host, port, tcp::resolver::passive);
    const tcp::endpoint ep = results.begin()->endpoint();
    impl_->acceptor.open(ep.protocol());
    impl_->acceptor.set_option(net::socket_base::reuse_address(true));
    impl_->acceptor.bind(ep);
    impl_->acceptor.listen(net::socket_base::max_listen_connections);
  } catch (const boost::system::system_error& e) {
    throw Error("cannot bind telemetry address " + impl_->opts.bind + ": " + e.code().message());
  }
  impl_->accept();
  impl_->thread = std::thread([impl = impl_.get()] { impl->ioc.run(); });
}

TelemetryServer::~TelemetryServer() { stop(); }

unsigned short TelemetryServer::port() const {
  beast::error_code ec;
  return impl_->acceptor.local_endpoint(ec).port();
}

void TelemetryServer::stop() {
  if (impl_->stopped.exchange(true)) return;
  net::post(impl_->ioc, [impl = impl_.get()] {
    beast::error_code ec;
    impl->acceptor.close(ec);
    const std::vector<std::shared_ptr<WsSession>> all(impl->sessions.begin(), impl->sessions.end());
    for (const auto& s : all) s->abort();
  });
  impl_->work.reset();
  impl_->ioc.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::size_t TelemetryServer::clients() const { return impl_->client_count; }
std::uint64_t TelemetryServer::dropped_clients() const { return impl_->dropped; }

void TelemetryServer::on_frame(const FrameResult& fr, Phase phase) { impl_->broadcast(frame_message(fr, phase)); }
void TelemetryServer::on_detection(const DetectionEvent& ev, bool opened) {
  impl_->broadcast(detection_message(ev, opened));
}
void TelemetryServer::on_config(const EngineConfig& cfg) { impl_->broadcast(config_message(cfg)); }
void TelemetryServer::on_stats(const LiveStats& s) { impl_->broadcast(stats_message(s)); }

struct TelemetryClient::Impl {
  net::io_context ioc;
  net::executor_work_guard<net::io_context::executor_type> work{ioc.get_executor()};
  websocket::stream<beast::tcp_stream> ws{ioc};
  beast::flat_buffer buf;
  std::deque<std::string> outbox;  // I/O thread only
  std::thread thread;

  mutable std::mutex mu;
  std::condition_variable cv;
  std::deque<json> inbox;
  bool closed = false;

  void mark_closed() {
    std::lock_guard lock(mu);
    closed = true;
    cv.notify_all();
  }

  void read() {
    ws.async_read(buf, [this](beast::error_code ec, std::size_t) {
      if (ec) return mark_closed();
      json j = json::parse(beast::buffers_to_string(buf.data()), nullptr, false);
      buf.consume(buf.size());
      {
        std::lock_guard lock(mu);
        inbox.push_back(std::move(j));
      }
      cv.notify_all();
      read();
    });
  }

  void write() {
    ws.text(true);
    ws.async_write(net::buffer(outbox.front()), [this](beast::error_code ec, std::size_t) {
      if (ec) return mark_closed();
      outbox.pop_front();
      if (!outbox.empty()) write();
    });
  }
};

TelemetryClient::TelemetryClient(const std::string& host, unsigned short port, bool read_messages)
    : impl_(std::make_unique<Impl>()) {
  tcp::resolver resolver(impl_->ioc);
  auto& sock = beast::get_lowest_layer(impl_->ws).socket();
  const auto results = resolver.resolve(host, std::to_string(port));
  sock.open(results.begin()->endpoint().protocol());
  if (!read_messages) sock.set_option(net::socket_base::receive_buffer_size(4096));
  sock.connect(results.begin()->endpoint());
  impl_->ws.handshake(host + ":" + std::to_string(port), "/");
  if (read_messages) impl_->read();
  impl_->thread = std::thread([impl = impl_.get()] { impl->ioc.run(); });
}

TelemetryClient::~TelemetryClient() {
  net::post(impl_->ioc, [impl = impl_.get()] {
    beast::error_code ec;
    beast::get_lowest_layer(impl->ws).socket().close(ec);
  });
  impl_->work.reset();
  impl_->ioc.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::optional<json> TelemetryClient::next(std::chrono::milliseconds timeout) {
  std::unique_lock lock(impl_->mu);
  impl_->cv.wait_for(lock, timeout, [this] { return !impl_->inbox.empty() || impl_->closed; });
  if (impl_->inbox.empty()) return std::nullopt;
  json j = std::move(impl_->inbox.front());
  impl_->inbox.pop_front();
  return j;
}

std::optional<json> TelemetryClient::next_of(const std::string& type, std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) return std::nullopt;
    auto m = next(left);
    if (!m) return std::nullopt;
    if (m->is_object() && m->value("type", "") == type) return m;
  }
}

void TelemetryClient::send(const json& msg) { send_text(msg.dump()); }

void TelemetryClient::send_text(const std::string& text) {
  net::post(impl_->ioc, [impl = impl_.get(), text] {
    impl->outbox.push_back(text);
    if (impl->outbox.size() == 1) impl->write();
  });
}

bool TelemetryClient::closed() const {
  std::lock_guard lock(impl_->mu);
  return impl_->closed;
}

void TelemetryClient::close() {
  net::post(impl_->ioc, [impl = impl_.get()] {
    impl->ws.async_close(websocket::close_code::normal, [impl](beast::error_code) { impl->mark_closed(); });
  });
}

}  // namespace evsd
