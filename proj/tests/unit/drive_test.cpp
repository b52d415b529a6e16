#include <gtest/gtest.h>

#include <algorithm>
#include <condition_variable>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "ringlab/drive/server.hpp"
#include "ringlab/drive/session.hpp"

using namespace ringlab;
using namespace ringlab::drive;

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

namespace {

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

bool same_end(const EndMessage& a, const EndMessage& b) {
  return same_bits(a.mu, b.mu) && same_bits(a.sigma, b.sigma) && same_bits(a.cf, b.cf) &&
         a.collision == b.collision && a.partial == b.partial && a.reason == b.reason && a.steps == b.steps;
}

SessionConfig small_session(double seconds) {
  SessionConfig cfg;
  cfg.trial_seconds = seconds;
  return cfg;
}

// A scripted human that drives like IDM, read off the state message.
double scripted_accel(const StateMessage& s, const sim::RingConfig& ring) {
  const VehicleView& ego = s.vehicles[s.ego_index];
  const VehicleView& lead = s.vehicles[(s.ego_index + 1) % s.vehicles.size()];
  double gap = lead.pos - ego.pos;
  if (gap < 0.0) gap += ring.circumference;
  gap -= ring.vehicle_length;
  return std::clamp(sim::idm_accel(ego.v, lead.v, gap, ring.idm), -kHumanAccelBound, kHumanAccelBound);
}

PolicyResolver pcp_resolver(const advisory::PolicyModel& pcp) {
  return [&pcp](advisory::PolicyKind kind, int delta) {
    if (kind == advisory::PolicyKind::Osl) return osl_only()(kind, delta);
    if (kind != advisory::PolicyKind::Pcp || delta != pcp.hold_steps()) throw ConfigError("not loaded");
    trainer::RolloutSpec spec;
    spec.kind = kind;
    spec.hold_steps = delta;
    spec.base = &pcp;
    return spec;
  };
}

class Client {
 public:
  explicit Client(unsigned short port) : ws_(ioc_) {
    tcp::resolver resolver(ioc_);
    net::connect(ws_.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws_.handshake("127.0.0.1", "/session");
    ws_.text(true);
  }

  void send(const ClientMessage& m) { ws_.write(net::buffer(to_json(m))); }
  void send_raw(const std::string& text) { ws_.write(net::buffer(text)); }
  std::string receive() {
    beast::flat_buffer buffer;
    ws_.read(buffer);
    return beast::buffers_to_string(buffer.data());
  }
  void close() { ws_.close(websocket::close_code::normal); }
  tcp::socket& socket() { return ws_.next_layer(); }

 private:
  net::io_context ioc_;
  websocket::stream<tcp::socket> ws_;
};

class ResultSink {
 public:
  std::function<void(const SessionResult&)> callback() {
    return [this](const SessionResult& r) {
      std::lock_guard lock(mutex_);
      results_.push_back(r);
      cv_.notify_all();
    };
  }
  SessionResult wait(std::size_t index) {
    std::unique_lock lock(mutex_);
    if (!cv_.wait_for(lock, std::chrono::seconds(60), [&] { return results_.size() > index; })) {
      throw std::runtime_error("server never reported the session end");
    }
    return results_[index];
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::vector<SessionResult> results_;
};

struct Transcript {
  StateMessage warmup;
  std::vector<StateMessage> driving;
  std::vector<double> sent;
  EndMessage end;
};

// Scripted client in lockstep: one control per received state.
Transcript drive_scripted(unsigned short port, const StartMessage& start, const sim::RingConfig& ring) {
  Client c(port);
  c.send(start);
  Transcript out;
  out.warmup = parse_state_message(c.receive());
  StateMessage last = out.warmup;
  for (;;) {
    const double a = scripted_accel(last, ring);
    out.sent.push_back(a);
    c.send(ControlMessage{a});
    const std::string text = c.receive();
    if (message_type(text) == "end") {
      out.end = parse_end_message(text);
      break;
    }
    last = parse_state_message(text);
    out.driving.push_back(last);
  }
  out.sent.pop_back();  // the control sent after the final state is never consumed
  c.close();
  return out;
}

http::response<http::string_body> http_get(unsigned short port, const std::string& target) {
  net::io_context ioc;
  beast::tcp_stream stream(ioc);
  tcp::resolver resolver(ioc);
  stream.connect(resolver.resolve("127.0.0.1", std::to_string(port)));
  http::request<http::empty_body> req{http::verb::get, target, 11};
  req.set(http::field::host, "127.0.0.1");
  http::write(stream, req);
  beast::flat_buffer buffer;
  http::response<http::string_body> res;
  http::read(stream, buffer, res);
  beast::error_code ec;
  stream.socket().shutdown(tcp::socket::shutdown_both, ec);
  return res;
}

}  // namespace

TEST(AdviceDisplay, WithinRangePredicate) {
  EXPECT_TRUE(within_range(9.3, 8.7));
  EXPECT_FALSE(within_range(10.0, 8.7));
  EXPECT_TRUE(within_range(9.7, 8.7));
}

TEST(AdviceDisplay, BandClampsAtZero) {
  const DisplayAdvice d = advice_for_display(0.0);
  EXPECT_EQ(d.line, 0.0);
  EXPECT_EQ(d.low, 0.0);
  EXPECT_EQ(d.high, 1.0);
  EXPECT_EQ(d.band, 1.0);
  const DisplayAdvice e = advice_for_display(8.7);
  EXPECT_DOUBLE_EQ(e.low, 7.7);
  EXPECT_DOUBLE_EQ(e.high, 9.7);
}

TEST(WireMessage, ControlAccelIsClamped) {
  EXPECT_EQ(std::get<ControlMessage>(parse_client_message(R"({"type":"control","accel":5})")).accel, 3.0);
  EXPECT_EQ(std::get<ControlMessage>(parse_client_message(R"({"type":"control","accel":-9.5})")).accel, -3.0);
  EXPECT_EQ(std::get<ControlMessage>(parse_client_message(R"({"type":"control","accel":1.25})")).accel, 1.25);
}

TEST(WireMessage, ClientMessagesRoundTrip) {
  const StartMessage s{advisory::PolicyKind::Perp, 70, 12345678901ull};
  const auto back = std::get<StartMessage>(parse_client_message(to_json(s)));
  EXPECT_EQ(back.policy, s.policy);
  EXPECT_EQ(back.delta, 70);
  EXPECT_EQ(back.seed, s.seed);
  EXPECT_TRUE(std::holds_alternative<AbortMessage>(parse_client_message(to_json(AbortMessage{}))));
  EXPECT_EQ(message_type(to_json(ControlMessage{0.5})), "control");
}

TEST(WireMessage, MalformedClientMessagesAreProtocolErrors) {
  for (const char* bad : {"not json", "[1,2]", R"({"accel":1})", R"({"type":"brake"})",
                          R"({"type":"control"})", R"({"type":"control","accel":"fast"})",
                          R"({"type":"start","policy":"nope","delta":50})",
                          R"({"type":"start","policy":"pcp","delta":0})",
                          R"({"type":"start","policy":"pcp","delta":50,"seed":-1})"}) {
    EXPECT_THROW(parse_client_message(bad), ProtocolError) << bad;
  }
}

TEST(WireMessage, StateSchemaRoundTrips) {
  StateMessage m;
  m.t = 12.3;
  m.ego = {100.5, 8.25};
  m.ego_index = 0;
  m.vehicles = {{100.5, 8.25}, {120.0, 9.0}};
  m.phase = Phase::Driving;
  const std::string no_advice = to_json(m);
  EXPECT_NE(no_advice.find(R"("advice":{"band":1.0,"v":null})"), std::string::npos) << no_advice;
  EXPECT_NE(no_advice.find(R"("phase":"driving")"), std::string::npos);
  EXPECT_NE(no_advice.find(R"("type":"state")"), std::string::npos);
  m.advice = 8.7;
  const StateMessage back = parse_state_message(to_json(m));
  EXPECT_EQ(back.t, m.t);
  EXPECT_EQ(back.advice, m.advice);
  EXPECT_EQ(back.vehicles.size(), 2u);
  EXPECT_EQ(back.vehicles[1].pos, 120.0);
  EXPECT_EQ(back.phase, Phase::Driving);
}

TEST(WireMessage, EndSchemaRoundTripsExactly) {
  EndMessage e;
  e.mu = 6.54321987654321;
  e.sigma = 1.0 / 3.0;
  e.cf = e.mu - std::log10(e.sigma);
  e.partial = true;
  e.reason = EndReason::Disconnected;
  e.steps = 17;
  const std::string text = to_json(e);
  EXPECT_NE(text.find(R"("metrics":{"cf":)"), std::string::npos);
  EXPECT_TRUE(same_end(parse_end_message(text), e));
}

TEST(DriveSession, PhasesAreMonotone) {
  DriveSession s(small_session(1.0), osl_only());
  EXPECT_EQ(s.phase(), Phase::Lobby);
  EXPECT_THROW(s.tick(0.0), ContractError);
  const StateMessage w = s.start({advisory::PolicyKind::Osl, 50, 3});
  EXPECT_EQ(w.phase, Phase::Warmup);
  EXPECT_EQ(w.t, 0.0);
  EXPECT_FALSE(w.advice.has_value());
  EXPECT_EQ(s.phase(), Phase::Driving);
  EXPECT_THROW(s.start({}), ContractError);
  for (int i = 0; i < 10; ++i) s.tick(0.0);
  EXPECT_EQ(s.phase(), Phase::Ended);
  EXPECT_THROW(s.tick(0.0), ContractError);
  EXPECT_EQ(s.end()->reason, EndReason::Completed);
}

TEST(DriveSession, UnknownPolicyIsRefused) {
  DriveSession s(small_session(1.0), osl_only());
  EXPECT_THROW(s.start({advisory::PolicyKind::Pcp, 50, 0}), ConfigError);
}

TEST(DriveSession, NoControlKeepsEgoSpeedConstant) {
  DriveSession s(small_session(30.0), osl_only());
  const double v0 = s.start({advisory::PolicyKind::Osl, 50, 5}).ego.v;
  for (int i = 0; i < 20; ++i) EXPECT_EQ(s.tick(0.0).ego.v, v0);
}

TEST(DriveSession, AccelIsClampedToHumanBound) {
  DriveSession s(small_session(1.0), osl_only());
  const double v0 = s.start({advisory::PolicyKind::Osl, 50, 5}).ego.v;
  const double v1 = s.tick(50.0).ego.v;
  EXPECT_NEAR(v1 - v0, 0.3, 1e-12);
  EXPECT_EQ(s.tick(0.0).ego.v, v1);
}

TEST(DriveSession, FullTrialEmits3000StrictlyIncreasingStates) {
  DriveSession s(small_session(300.0), osl_only());
  const sim::RingConfig ring;
  StateMessage last = s.start({advisory::PolicyKind::Osl, 50, 11});
  std::size_t states = 0;
  while (s.phase() == Phase::Driving) {
    const StateMessage next = s.tick(scripted_accel(last, ring));
    EXPECT_GT(next.t, last.t);
    EXPECT_EQ(next.phase, Phase::Driving);
    EXPECT_TRUE(next.advice.has_value());
    last = next;
    ++states;
  }
  EXPECT_EQ(states, 3000u);
  EXPECT_NEAR(last.t, 300.0, 1e-9);
  const EndMessage e = *s.end();
  EXPECT_EQ(e.reason, EndReason::Completed);
  EXPECT_FALSE(e.partial);
  EXPECT_FALSE(e.collision);
  EXPECT_EQ(e.steps, 3000u);
  EXPECT_EQ(s.result().record.size(), 900u + 3000u);
}

TEST(DriveSession, FlooringTheThrottleEndsInCollision) {
  DriveSession s(small_session(300.0), osl_only());
  s.start({advisory::PolicyKind::Osl, 50, 2});
  while (s.phase() == Phase::Driving) s.tick(3.0);
  const EndMessage e = *s.end();
  EXPECT_EQ(e.reason, EndReason::Collision);
  EXPECT_TRUE(e.collision);
  EXPECT_FALSE(e.partial);
  EXPECT_LT(e.steps, 3000u);
  EXPECT_EQ(s.result().record.metadata.at("collision"), "1");
}

TEST(DriveSession, AbortFlagsPartialMetrics) {
  DriveSession s(small_session(300.0), osl_only());
  s.start({advisory::PolicyKind::Osl, 50, 2});
  for (int i = 0; i < 40; ++i) s.tick(0.0);
  const EndMessage e = s.abort();
  EXPECT_TRUE(e.partial);
  EXPECT_EQ(e.reason, EndReason::Aborted);
  EXPECT_EQ(e.steps, 40u);
  EXPECT_TRUE(std::isfinite(e.cf));
  EXPECT_EQ(s.phase(), Phase::Ended);
}

TEST(DriveSession, PolicyAdviceIsHeldForDelta) {
  advisory::PolicyModel pcp(advisory::PolicyKind::Pcp, 70, advisory::ActionGrid::make());
  Rng rng(4);
  pcp.initialize(rng);
  DriveSession s(small_session(60.0), pcp_resolver(pcp));
  const sim::RingConfig ring;
  StateMessage last = s.start({advisory::PolicyKind::Pcp, 70, 9});
  std::vector<double> advice;
  while (s.phase() == Phase::Driving) {
    last = s.tick(scripted_accel(last, ring));
    advice.push_back(*last.advice);
  }
  for (std::size_t t = 1; t < advice.size(); ++t) {
    if (t % 70 != 0) EXPECT_EQ(advice[t], advice[t - 1]) << t;
    EXPECT_GE(advice[t], 0.0);
    EXPECT_LE(advice[t], 35.0);
  }
}

TEST(DriveSession, OfflineReplayIsBitIdentical) {
  const sim::RingConfig ring;
  const StartMessage start{advisory::PolicyKind::Osl, 100, 21};
  DriveSession s(small_session(120.0), osl_only());
  StateMessage last = s.start(start);
  while (s.phase() == Phase::Driving) last = s.tick(scripted_accel(last, ring) * 0.9);
  const SessionResult live = s.result();
  const SessionResult again = replay(small_session(120.0), osl_only(), start, live.controls);
  EXPECT_TRUE(sim::identical(live.record, again.record));
  EXPECT_TRUE(same_end(live.end, again.end));
  EXPECT_EQ(live.controls, again.controls);
}

TEST(DriveSession, ReplayReproducesPartialTrials) {
  const StartMessage start{advisory::PolicyKind::Osl, 50, 8};
  DriveSession s(small_session(300.0), osl_only());
  s.start(start);
  for (int i = 0; i < 25; ++i) s.tick(i % 2 ? 0.5 : -0.5);
  s.disconnect();
  const SessionResult live = s.result();
  const SessionResult again = replay(small_session(300.0), osl_only(), start, live.controls, EndReason::Disconnected);
  EXPECT_TRUE(sim::identical(live.record, again.record));
  EXPECT_TRUE(same_end(live.end, again.end));
  EXPECT_THROW(replay(small_session(300.0), osl_only(), start, live.controls), ContractError);
}

TEST(DriveServer, ServesStaticFiles) {
  const auto root = std::filesystem::temp_directory_path() / "ringlab_static";
  std::filesystem::create_directories(root / "assets");
  std::ofstream(root / "index.html") << "<html>console</html>";
  std::ofstream(root / "assets" / "app.js") << "console.log(1);";
  ServerConfig cfg;
  cfg.port = 0;
  cfg.static_root = root;
  DriveServer server(cfg, osl_only());
  server.start();
  const auto index = http_get(server.port(), "/");
  EXPECT_EQ(index.result(), http::status::ok);
  EXPECT_EQ(index.body(), "<html>console</html>");
  EXPECT_EQ(index[http::field::content_type], "text/html; charset=utf-8");
  const auto js = http_get(server.port(), "/assets/app.js?v=2");
  EXPECT_EQ(js.result(), http::status::ok);
  EXPECT_EQ(js[http::field::content_type], "text/javascript; charset=utf-8");
  EXPECT_EQ(http_get(server.port(), "/missing.css").result(), http::status::not_found);
  EXPECT_EQ(http_get(server.port(), "/../etc/passwd").result(), http::status::bad_request);
  server.stop();
  std::filesystem::remove_all(root);
}

TEST(DriveServer, ScriptedLockstepSessionMatchesOfflineReplay) {
  ResultSink sink;
  ServerConfig cfg;
  cfg.port = 0;
  cfg.lockstep = true;
  cfg.on_session_end = sink.callback();
  DriveServer server(cfg, osl_only());
  server.start();

  const StartMessage start{advisory::PolicyKind::Osl, 50, 33};
  const Transcript first = drive_scripted(server.port(), start, cfg.session.ring);
  const SessionResult live = sink.wait(0);
  EXPECT_EQ(first.warmup.phase, Phase::Warmup);
  ASSERT_EQ(first.driving.size(), 3000u);
  for (std::size_t i = 1; i < first.driving.size(); ++i) EXPECT_GT(first.driving[i].t, first.driving[i - 1].t);
  EXPECT_EQ(first.end.reason, EndReason::Completed);
  EXPECT_EQ(live.controls, first.sent);
  EXPECT_TRUE(same_end(live.end, first.end));

  const SessionResult offline = replay(cfg.session, osl_only(), start, first.sent);
  EXPECT_TRUE(sim::identical(live.record, offline.record));
  EXPECT_TRUE(same_end(offline.end, first.end));

  const Transcript second = drive_scripted(server.port(), start, cfg.session.ring);
  EXPECT_TRUE(same_end(second.end, first.end));
  EXPECT_TRUE(sim::identical(sink.wait(1).record, live.record));
  server.stop();
}

TEST(DriveServer, RealtimeTicksAreSpacedAt10Hz) {
  ServerConfig cfg;
  cfg.port = 0;
  cfg.session.trial_seconds = 2.0;
  DriveServer server(cfg, osl_only());
  server.start();
  Client c(server.port());
  c.send(StartMessage{advisory::PolicyKind::Osl, 50, 1});
  ASSERT_EQ(message_type(c.receive()), "state");
  std::vector<std::chrono::steady_clock::time_point> arrivals;
  for (;;) {
    const std::string text = c.receive();
    if (message_type(text) == "end") break;
    arrivals.push_back(std::chrono::steady_clock::now());
  }
  c.close();
  server.stop();
  ASSERT_EQ(arrivals.size(), 20u);
  for (std::size_t i = 1; i < arrivals.size(); ++i) {
    const auto gap = std::chrono::duration_cast<std::chrono::microseconds>(arrivals[i] - arrivals[i - 1]).count();
    EXPECT_GE(gap, 80'000) << i;
    EXPECT_LE(gap, 120'000) << i;
  }
}

TEST(DriveServer, DisconnectEndsTrialWithPartialMetrics) {
  ResultSink sink;
  ServerConfig cfg;
  cfg.port = 0;
  cfg.lockstep = true;
  cfg.on_session_end = sink.callback();
  DriveServer server(cfg, osl_only());
  server.start();
  const StartMessage start{advisory::PolicyKind::Osl, 50, 4};
  std::vector<double> sent;
  {
    Client c(server.port());
    c.send(start);
    c.receive();
    for (int i = 0; i < 15; ++i) {
      sent.push_back(0.1 * i - 0.5);
      c.send(ControlMessage{sent.back()});
      ASSERT_EQ(message_type(c.receive()), "state");
    }
    beast::error_code ec;
    c.socket().shutdown(tcp::socket::shutdown_both, ec);
    c.socket().close(ec);
  }
  const SessionResult r = sink.wait(0);
  EXPECT_TRUE(r.end.partial);
  EXPECT_EQ(r.end.reason, EndReason::Disconnected);
  EXPECT_EQ(r.controls, sent);
  const SessionResult offline = replay(cfg.session, osl_only(), start, sent, EndReason::Disconnected);
  EXPECT_TRUE(sim::identical(r.record, offline.record));
  EXPECT_TRUE(same_end(r.end, offline.end));

  Client next(server.port());  // the slot is free again
  next.close();
  server.stop();
}

TEST(DriveServer, OneSessionAtATime) {
  ServerConfig cfg;
  cfg.port = 0;
  DriveServer server(cfg, osl_only());
  server.start();
  Client first(server.port());
  EXPECT_THROW(Client second(server.port()), boost::system::system_error);
  first.close();
  server.stop();
}

TEST(DriveServer, BadMessagesGetAnErrorReply) {
  ServerConfig cfg;
  cfg.port = 0;
  cfg.lockstep = true;
  DriveServer server(cfg, osl_only());
  server.start();
  Client c(server.port());
  c.send_raw("{oops");
  EXPECT_EQ(message_type(c.receive()), "error");
  c.send(StartMessage{advisory::PolicyKind::Tarp, 50, 0});
  EXPECT_EQ(message_type(c.receive()), "error");
  c.send(StartMessage{advisory::PolicyKind::Osl, 50, 0});
  EXPECT_EQ(message_type(c.receive()), "state");
  c.send(StartMessage{advisory::PolicyKind::Osl, 50, 0});
  EXPECT_EQ(message_type(c.receive()), "error");
  c.send(AbortMessage{});
  const std::string end = c.receive();
  ASSERT_EQ(message_type(end), "end");
  EXPECT_EQ(parse_end_message(end).steps, 0u);
  EXPECT_TRUE(parse_end_message(end).partial);
  c.close();
  server.stop();
}

TEST(DriveServer, PortInUseIsAConfigError) {
  ServerConfig cfg;
  cfg.port = 0;
  DriveServer first(cfg, osl_only());
  cfg.port = first.port();
  EXPECT_THROW(DriveServer second(cfg, osl_only()), ConfigError);
}
