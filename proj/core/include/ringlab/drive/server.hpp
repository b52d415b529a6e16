#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>

#include "ringlab/drive/session.hpp"

namespace ringlab::drive {

struct ServerConfig {
  std::string address = "127.0.0.1";
  unsigned short port = 8080;  // 0 picks a free port
  std::filesystem::path static_root;  // console bundle; empty disables static files
  SessionConfig session;
  std::chrono::milliseconds tick_interval{100};
  std::chrono::milliseconds late_tolerance{20};
  // Headless scripted clients: each tick waits for and consumes exactly one
  // control message instead of sampling the latest one on a wall-clock timer.
  bool lockstep = false;
  // Called on the server thread after every trial, including partial ones.
  std::function<void(const SessionResult&)> on_session_end;
};

// WebSocket endpoint /session plus static files, one session at a time.
// All network handlers and the ticker share one I/O thread, so the session is
// only touched from that thread.
class DriveServer {
 public:
  // Binds immediately; throws ConfigError when the address cannot be bound.
  DriveServer(ServerConfig cfg, PolicyResolver resolver);
  ~DriveServer();
  DriveServer(const DriveServer&) = delete;
  DriveServer& operator=(const DriveServer&) = delete;

  unsigned short port() const;
  // Serves on a background thread until stop().
  void start();
  // Serves on the calling thread until stop() is called from elsewhere.
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace ringlab::drive
