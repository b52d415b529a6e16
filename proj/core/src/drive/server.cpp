#include "ringlab/drive/server.hpp"

#include <deque>
#include <thread>

#include <boost/asio/signal_set.hpp>
#include <boost/asio/steady_timer.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

namespace ringlab::drive {

namespace {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using Clock = std::chrono::steady_clock;

struct Shared {
  ServerConfig cfg;
  PolicyResolver resolver;
  bool busy = false;
};

const char* mime_type(const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".html" || ext == ".htm") return "text/html; charset=utf-8";
  if (ext == ".js" || ext == ".mjs") return "text/javascript; charset=utf-8";
  if (ext == ".css") return "text/css; charset=utf-8";
  if (ext == ".json" || ext == ".map") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  if (ext == ".ico") return "image/x-icon";
  if (ext == ".wasm") return "application/wasm";
  if (ext == ".txt") return "text/plain; charset=utf-8";
  return "application/octet-stream";
}

std::string error_json(std::string_view message) {
  return nlohmann::json{{"type", "error"}, {"message", message}}.dump();
}

class SessionSocket : public std::enable_shared_from_this<SessionSocket> {
 public:
  SessionSocket(tcp::socket&& socket, std::shared_ptr<Shared> shared)
      : ws_(std::move(socket)), timer_(ws_.get_executor()), shared_(std::move(shared)) {}

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (ec) {
        self->close_out();
        return;
      }
      spdlog::info("drive client connected");
      self->read();
    });
  }

 private:
  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->close_out();
        return;
      }
      const std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      self->handle(text);
      if (!self->closed_) self->read();
    });
  }

  void handle(const std::string& text) {
    ClientMessage message;
    try {
      message = parse_client_message(text);
    } catch (const ProtocolError& e) {
      send(error_json(e.what()));
      return;
    }
    if (const auto* start = std::get_if<StartMessage>(&message)) {
      begin(*start);
    } else if (const auto* control = std::get_if<ControlMessage>(&message)) {
      accel_ = control->accel;
      if (shared_->cfg.lockstep && driving()) {
        queued_.push_back(control->accel);
        if (waiting_) {
          waiting_ = false;
          on_tick();
        }
      }
    } else if (driving()) {
      timer_.cancel();
      end_trial(session_->abort());
    }
  }

  bool driving() const { return session_ && session_->phase() == Phase::Driving; }

  void begin(const StartMessage& start) {
    if (driving()) {
      send(error_json("a trial is already running"));
      return;
    }
    try {
      session_ = std::make_unique<DriveSession>(shared_->cfg.session, shared_->resolver);
      accel_ = 0.0;
      queued_.clear();
      waiting_ = false;
      send(to_json(session_->start(start)));
    } catch (const Error& e) {
      session_.reset();
      send(error_json(e.what()));
      return;
    }
    spdlog::info("trial started: policy {} delta {} seed {}", advisory::to_string(start.policy), start.delta,
                 start.seed);
    deadline_ = Clock::now() + shared_->cfg.tick_interval;
    schedule();
  }

  void schedule() {
    if (shared_->cfg.lockstep) {
      net::post(ws_.get_executor(), [self = shared_from_this()] { self->on_tick(); });
      return;
    }
    timer_.expires_at(deadline_);
    timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
      if (!ec) self->on_tick();
    });
  }

  void on_tick() {
    if (!driving() || closed_) return;
    double accel = accel_;
    if (shared_->cfg.lockstep) {
      if (queued_.empty()) {
        waiting_ = true;
        return;
      }
      accel = queued_.front();
      queued_.pop_front();
    } else if (const auto late = Clock::now() - deadline_; late > shared_->cfg.late_tolerance) {
      spdlog::warn("tick {} ran {} ms late", session_->ticks(),
                   std::chrono::duration_cast<std::chrono::milliseconds>(late).count());
    }
    send(to_json(session_->tick(accel)));
    if (session_->phase() == Phase::Ended) {
      end_trial(*session_->end());
      return;
    }
    deadline_ += shared_->cfg.tick_interval;
    schedule();
  }

  void end_trial(const EndMessage& end) {
    send(to_json(end));
    spdlog::info("trial ended ({}) after {} ticks: cf {:.4f}", to_string(end.reason), end.steps, end.cf);
    if (shared_->cfg.on_session_end) shared_->cfg.on_session_end(session_->result());
    session_.reset();
  }

  void close_out() {
    if (closed_) return;
    closed_ = true;
    timer_.cancel();
    if (driving()) {
      const EndMessage end = session_->disconnect();
      spdlog::warn("client disconnected mid-trial after {} ticks; metrics are partial", end.steps);
      if (shared_->cfg.on_session_end) shared_->cfg.on_session_end(session_->result());
    }
    session_.reset();
    shared_->busy = false;
  }

  void send(std::string text) {
    if (closed_) return;
    outbox_.push_back(std::move(text));
    if (outbox_.size() == 1) write_next();
  }

  void write_next() {
    ws_.text(true);
    ws_.async_write(net::buffer(outbox_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->close_out();
        return;
      }
      self->outbox_.pop_front();
      if (!self->outbox_.empty()) self->write_next();
    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  net::steady_timer timer_;
  std::shared_ptr<Shared> shared_;
  beast::flat_buffer buffer_;
  std::deque<std::string> outbox_;
  std::unique_ptr<DriveSession> session_;
  double accel_ = 0.0;
  std::deque<double> queued_;
  bool waiting_ = false;
  Clock::time_point deadline_;
  bool closed_ = false;
};

class HttpConnection : public std::enable_shared_from_this<HttpConnection> {
 public:
  HttpConnection(tcp::socket&& socket, std::shared_ptr<Shared> shared)
      : stream_(std::move(socket)), shared_(std::move(shared)) {}

  void run() { read(); }

 private:
  void read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->on_read(ec);
    });
  }

  void on_read(beast::error_code ec) {
    if (ec == http::error::end_of_stream) {
      stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
      return;
    }
    if (ec) return;
    if (websocket::is_upgrade(req_)) {
      if (req_.target() != "/session") {
        reply(http::status::not_found, "no WebSocket endpoint at this path\n");
      } else if (shared_->busy) {
        reply(http::status::conflict, "a drive session is already connected\n");
      } else {
        shared_->busy = true;
        stream_.expires_never();
        std::make_shared<SessionSocket>(stream_.release_socket(), shared_)->run(std::move(req_));
      }
      return;
    }
    serve_file();
  }

  void serve_file() {
    if (req_.method() != http::verb::get && req_.method() != http::verb::head) {
      reply(http::status::method_not_allowed, "only GET and HEAD are supported\n");
      return;
    }
    std::string target(req_.target());
    target = target.substr(0, target.find('?'));
    if (shared_->cfg.static_root.empty() || target.empty() || target.front() != '/') {
      reply(http::status::not_found, "not found\n");
      return;
    }
    if (target.find("..") != std::string::npos) {
      reply(http::status::bad_request, "illegal path\n");
      return;
    }
    if (target.back() == '/') target += "index.html";
    const std::filesystem::path path = shared_->cfg.static_root / target.substr(1);

    http::file_body::value_type body;
    beast::error_code ec;
    body.open(path.string().c_str(), beast::file_mode::scan, ec);
    if (ec) {
      reply(http::status::not_found, "not found\n");
      return;
    }
    const auto size = body.size();
    http::response<http::file_body> res{std::piecewise_construct, std::make_tuple(std::move(body)),
                                        std::make_tuple(http::status::ok, req_.version())};
    res.set(http::field::content_type, mime_type(path));
    res.content_length(size);
    res.keep_alive(req_.keep_alive());
    if (req_.method() == http::verb::head) {
      http::response<http::empty_body> head{http::status::ok, req_.version()};
      head.set(http::field::content_type, mime_type(path));
      head.content_length(size);
      head.keep_alive(req_.keep_alive());
      send(std::move(head));
      return;
    }
    send(std::move(res));
  }

  void reply(http::status status, std::string text) {
    http::response<http::string_body> res{status, req_.version()};
    res.set(http::field::content_type, "text/plain; charset=utf-8");
    res.keep_alive(req_.keep_alive());
    res.body() = std::move(text);
    res.prepare_payload();
    send(std::move(res));
  }

  template <class Body>
  void send(http::response<Body>&& res) {
    auto owned = std::make_shared<http::response<Body>>(std::move(res));
    http::async_write(stream_, *owned, [self = shared_from_this(), owned](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (owned->need_eof()) {
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
        return;
      }
      self->read();
    });
  }

  beast::tcp_stream stream_;
  std::shared_ptr<Shared> shared_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
};

}  // namespace

struct DriveServer::Impl {
  net::io_context ioc{1};
  tcp::acceptor acceptor{ioc};
  std::shared_ptr<Shared> shared;
  std::thread thread;

  void accept() {
    acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec == net::error::operation_aborted) return;
      if (!ec) std::make_shared<HttpConnection>(std::move(socket), shared)->run();
      accept();
    });
  }
};

DriveServer::DriveServer(ServerConfig cfg, PolicyResolver resolver) : impl_(std::make_unique<Impl>()) {
  cfg.session.ring.validate();
  if (cfg.tick_interval.count() < 0) throw ConfigError("tick interval must be >= 0");
  impl_->shared = std::make_shared<Shared>(Shared{std::move(cfg), std::move(resolver)});
  const ServerConfig& c = impl_->shared->cfg;
  try {
    const tcp::endpoint endpoint(net::ip::make_address(c.address), c.port);
    impl_->acceptor.open(endpoint.protocol());
    impl_->acceptor.set_option(net::socket_base::reuse_address(true));
    impl_->acceptor.bind(endpoint);
    impl_->acceptor.listen(net::socket_base::max_listen_connections);
  } catch (const boost::system::system_error& e) {
    throw ConfigError("cannot listen on " + c.address + ":" + std::to_string(c.port) + ": " + e.what());
  }
  impl_->accept();
}

DriveServer::~DriveServer() { stop(); }

unsigned short DriveServer::port() const { return impl_->acceptor.local_endpoint().port(); }

void DriveServer::start() {
  if (impl_->thread.joinable()) throw ContractError("server already running");
  impl_->thread = std::thread([this] { impl_->ioc.run(); });
}

void DriveServer::run() {
  net::signal_set signals(impl_->ioc, SIGINT, SIGTERM);
  signals.async_wait([this](beast::error_code, int) { impl_->ioc.stop(); });
  impl_->ioc.run();
}

void DriveServer::stop() {
  impl_->ioc.stop();
  if (impl_->thread.joinable() && impl_->thread.get_id() != std::this_thread::get_id()) impl_->thread.join();
}

}  // namespace ringlab::drive
