#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mpfc/sim.hpp"

namespace mpfc {

class BindError : public Error {
 public:
  using Error::Error;
};

struct InboundCommand {
  enum class Kind { kSetVelocity, kSetYawRate, kPause, kResume, kReset, kSetTerrain, kDeadMan };
  Kind kind = Kind::kSetVelocity;
  Vec2 velocity = Vec2::Zero();
  double yaw_rate = 0.0;
  std::string terrain;
};

/// Parses one inbound text frame and clamps velocity and yaw rate to the
/// limits. Throws ConfigError on anything malformed.
InboundCommand parse_inbound(const std::string& text, double velocity_limit,
                             double yaw_rate_limit);

struct TeleopFlags {
  bool paused = false;
  std::string terrain;
  int clients = 0;
};

// Outbound messages.
Json tick_message(const Simulator& sim, const TickLog& log, const TeleopFlags& flags);
Json plan_message(const Simulator& sim, const TickLog& log);
Json stats_message(const TickLog& log, double solve_rate);
Json footholds_message(const std::vector<Foothold>& footholds, const std::string& terrain);
Json event_message(const std::string& event, const std::string& message, double time);
Json error_message(const std::string& message);

struct TeleopOptions {
  std::string address = "127.0.0.1";
  unsigned short port = 8080;  // 0 picks a free port
  std::string static_dir = "ui";
  double speed = 1.0;             // simulated seconds per wall second
  double broadcast_rate = 50.0;   // Hz
  double deadman_time = 0.4;      // s to ramp the command to zero
};

/// HTTP static files and a websocket endpoint (/ws) on one port. The
/// simulator runs on its own thread; inbound commands cross over through a
/// single-producer/single-consumer queue and apply at the next tick.
class TeleopServer {
 public:
  /// Binds immediately; throws BindError when the port is taken.
  TeleopServer(SimConfig cfg, std::map<std::string, std::vector<Foothold>> terrains,
               TeleopOptions opt);
  ~TeleopServer();
  TeleopServer(const TeleopServer&) = delete;
  TeleopServer& operator=(const TeleopServer&) = delete;

  unsigned short port() const;
  /// Starts the network and simulation threads.
  void start();
  /// Blocks until stop() or a signal handler stops the server.
  void wait();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace mpfc
